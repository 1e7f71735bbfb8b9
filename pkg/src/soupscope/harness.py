"""Experiment orchestration: tail estimates, the per-sample inequality suite,
the narrow-tube probe, strict configs, result files and SVG output.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .clusters import (RESOLUTION, ClusterBoundary, ClusterSet, build_clusters, check_annulus, clus_number,
                       cluster_labels, comp_number, components_from_states, cross_number_simple,
                       crossing_witnesses, extract_boundaries, refined_cells_all, refined_sequence,
                       total_single_crossings)
from .conformal import PinchResult, QuadCover
from .errors import ConfigError, InvalidInputError, RejectedConfigurationError
from .geometry import (INNER, MIDDLE, OUTER, Annulus, Point, PolyLoop, Quad, SectorAnnulus, crossing_scan,
                       points_in_polygon, point_segment_distances)
from .lattice import DEFAULT_L_MAX, GridDomain
from .soup import LoopSoupSample, SoupConfig, kappa_to_lambda, restrict, sample_soup

BLOCK = 3
STATISTICS = ("Comp", "Clus", "CrossSimple", "TotalSingleCross")
SEED_POLICIES = ("spawn", "sequential")


# -- targets -------------------------------------------------------------------

def target_states(target, pts) -> np.ndarray:
    """INNER / MIDDLE / OUTER / BLOCK per point for an annulus, sector or quad.

    Sector: the two arcs play the circles, anything outside the wedge
    blocks.  Quad: interior points are MIDDLE, exterior points take the
    side of the nearest boundary arc, S0 -> INNER, S2 -> OUTER, S1 and S3
    block.
    """
    p = np.asarray(pts, dtype=float).reshape(-1, 2)
    if isinstance(target, Annulus):
        return target.states(p)
    if isinstance(target, SectorAnnulus):
        st = target.annulus().states(p)
        st = np.where(target.in_wedge(p), st, BLOCK)
        return st
    if isinstance(target, Quad):
        inside = points_in_polygon(p, target.boundary)
        st = np.full(len(p), MIDDLE, dtype=np.int64)
        out = np.flatnonzero(~inside)
        if len(out):
            b = target.boundary
            labels = np.asarray(target.edge_arc_labels())
            d = point_segment_distances(p[out], b, np.roll(b, -1, axis=0))
            side = labels[np.argmin(d, axis=1)]
            st[out] = np.choose(side, [INNER, BLOCK, OUTER, BLOCK])
        return st
    raise InvalidInputError(f"unsupported target {type(target).__name__}")


def scan_with_blocks(states, closed=True) -> int:
    """Crossing count of a state sequence where BLOCK cuts the path."""
    s = np.asarray(states)
    blocks = np.flatnonzero(s == BLOCK)
    if len(blocks) == 0:
        return crossing_scan(s, closed=closed)[0]
    if closed:
        s = np.roll(s, -int(blocks[0]))
    total = 0
    run = []
    for v in s.tolist():
        if v == BLOCK:
            if run:
                total += crossing_scan(np.array(run), closed=False)[0]
            run = []
        else:
            run.append(v)
    if run:
        total += crossing_scan(np.array(run), closed=False)[0]
    return total


def check_target(target, domain: GridDomain):
    """Reject a target that grazes refined cell centres of the domain box."""
    h = domain.mesh / RESOLUTION
    W, H = domain.shape
    ox, oy = domain.origin_offset
    a = np.arange(RESOLUTION * (ox - 1), RESOLUTION * (ox + W + 1))
    b = np.arange(RESOLUTION * (oy - 1), RESOLUTION * (oy + H + 1))
    pts = np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1).reshape(-1, 2) * h
    if isinstance(target, Annulus):
        check_annulus(target, domain.mesh, pts)
    elif isinstance(target, SectorAnnulus):
        check_annulus(target.annulus(), domain.mesh, pts)
    elif isinstance(target, Quad):
        b0 = target.boundary
        d = point_segment_distances(pts, b0, np.roll(b0, -1, axis=0)).min(axis=1)
        if np.any(d < 1e-9):
            raise RejectedConfigurationError("quad boundary passes through a refined cell centre")
    else:
        raise InvalidInputError(f"unsupported target {type(target).__name__}")


def _trace_points(cells, mesh):
    return np.asarray(cells, dtype=float) * (mesh / RESOLUTION)


def statistic_value(statistic: str, loops, target, mesh: float, cs: ClusterSet | None = None) -> int:
    """One of Comp, Clus, CrossSimple, TotalSingleCross for a loop ensemble."""
    if statistic not in STATISTICS:
        raise InvalidInputError(f"unknown statistic {statistic!r}")
    loops = list(loops)
    if statistic == "TotalSingleCross":
        if isinstance(target, Annulus):
            return total_single_crossings(loops, target, mesh)
        return sum(scan_with_blocks(target_states(target, _trace_points(refined_sequence(l.sites), mesh)))
                   for l in loops)
    if cs is None:
        cs = build_clusters(loops, mesh)
    if cs.n_clusters == 0:
        return 0
    if statistic == "Comp":
        if isinstance(target, Annulus):
            return comp_number(cs, target)
        st = target_states(target, cs.canvas_centers().reshape(-1, 2)).reshape(cs.canvas.shape)
        return len(components_from_states(cs.canvas >= 0, st)[1])
    if statistic == "Clus":
        if isinstance(target, Annulus):
            return clus_number(cs, target)
        n = 0
        for c in cs.outermost_ids():
            t = cs.traces[c]
            lo = t.min(axis=0) - 1
            U = np.zeros(tuple(t.max(axis=0) - lo + 2), dtype=bool)
            U[t[:, 0] - lo[0], t[:, 1] - lo[1]] = True
            st = np.full(U.shape, BLOCK, dtype=np.int64)
            st[t[:, 0] - lo[0], t[:, 1] - lo[1]] = target_states(target, _trace_points(t, mesh))
            n += bool(components_from_states(U, st)[1])
        return n
    bounds = extract_boundaries(cs)
    if isinstance(target, Annulus):
        return cross_number_simple(bounds, target, mesh)
    return sum(scan_with_blocks(target_states(target, b.cell_centers(mesh))) for b in bounds)


# -- tail experiments ----------------------------------------------------------------

@dataclass(eq=False)
class ExperimentSpec:
    config: SoupConfig
    target: object
    statistic: str = "Comp"
    replicas: int = 100
    n_max: int = 10
    seed_policy: str = "spawn"

    def __post_init__(self):
        if self.replicas < 1:
            raise InvalidInputError("replicas must be at least 1")
        if self.n_max < 1:
            raise InvalidInputError("n_max must be at least 1")
        if self.statistic not in STATISTICS:
            raise InvalidInputError(f"statistic must be one of {STATISTICS}")
        if self.seed_policy not in SEED_POLICIES:
            raise InvalidInputError(f"seed policy must be one of {SEED_POLICIES}")
        if not isinstance(self.target, (Annulus, SectorAnnulus, Quad)):
            raise InvalidInputError("target must be an annulus, sector or quad")

    def replica_seeds(self) -> list:
        base = int(self.config.seed)
        if self.seed_policy == "sequential":
            return [(base + i) % 2 ** 64 for i in range(self.replicas)]
        return [int(np.random.SeedSequence([base, i]).generate_state(1, np.uint64)[0])
                for i in range(self.replicas)]


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple:
    """Wilson score interval; a zero count gets the rule-of-three upper bound."""
    if n <= 0:
        return (math.nan, math.nan)
    if k == 0:
        return (0.0, min(1.0, 3.0 / n))
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass(eq=False)
class TailEstimate:
    """Empirical tail P[X >= n], n = 0..n_max, with decay diagnostics.

    ``ratio[n]`` estimates P[X >= n+1 | X >= n]; its interval is the
    Wilson interval of counts[n+1] out of counts[n].  A log-convexity
    violation at n is flagged only when the interval of ratio[n] lies
    entirely above that of ratio[n-1].
    """

    counts: np.ndarray
    replicas: int
    values: dict = field(default_factory=dict)   # statistic value -> number of replicas

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(np.diff(self.counts) > 0):
            raise InvalidInputError("tail counts must be non-increasing")

    @classmethod
    def from_values(cls, values, n_max: int) -> "TailEstimate":
        v = np.asarray(values, dtype=np.int64)
        counts = np.array([(v >= n).sum() for n in range(n_max + 1)])
        hist = {}
        for x in v.tolist():
            hist[int(x)] = hist.get(int(x), 0) + 1
        return cls(counts, len(v), hist)

    @property
    def n_max(self) -> int:
        return len(self.counts) - 1

    @property
    def p_hat(self) -> np.ndarray:
        return self.counts / self.replicas

    @property
    def intervals(self) -> np.ndarray:
        return np.array([wilson_interval(int(k), self.replicas) for k in self.counts])

    @property
    def ratio(self) -> np.ndarray:
        c = self.counts.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(c[:-1] > 0, c[1:] / np.where(c[:-1] > 0, c[:-1], 1), np.nan)

    @property
    def ratio_intervals(self) -> np.ndarray:
        return np.array([wilson_interval(int(self.counts[n + 1]), int(self.counts[n]))
                         for n in range(self.n_max)])

    @property
    def log_concave(self) -> list:
        """Point-estimate flags p(n)^2 >= p(n-1) p(n+1); None where a term is zero."""
        p = self.p_hat
        out = [None]
        for n in range(1, self.n_max):
            if p[n - 1] > 0 and p[n] > 0 and p[n + 1] > 0:
                out.append(bool(p[n] ** 2 >= p[n - 1] * p[n + 1]))
            else:
                out.append(None)
        out.append(None)
        return out

    @property
    def log_convexity_violations(self) -> list:
        r = self.ratio_intervals
        viol = []
        for n in range(1, self.n_max):
            if self.counts[n + 1] > 0 and r[n, 0] > r[n - 1, 1]:
                viol.append(n)
        return viol

    def ratios_non_increasing(self, upto: int | None = None) -> bool:
        """ratio[n] <= ratio[n-1] or overlapping intervals, over the observed range."""
        r = self.ratio
        ri = self.ratio_intervals
        top = self.n_max - 1 if upto is None else upto
        for n in range(1, top + 1):
            if self.counts[n + 1] == 0:
                break
            if r[n] > r[n - 1] and ri[n, 0] > ri[n - 1, 1]:
                return False
        return True

    def merge(self, other: "TailEstimate") -> "TailEstimate":
        if len(other.counts) != len(self.counts):
            raise InvalidInputError("tail estimates must share n_max")
        hist = dict(self.values)
        for k, v in other.values.items():
            hist[k] = hist.get(k, 0) + v
        return TailEstimate(self.counts + other.counts, self.replicas + other.replicas, hist)

    def rows(self) -> list:
        ci = self.intervals
        ratio = self.ratio
        out = []
        for n in range(self.n_max + 1):
            p = float(self.p_hat[n])
            out.append({"n": n, "count": int(self.counts[n]), "p_hat": p, "ci_lo": float(ci[n, 0]),
                        "ci_hi": float(ci[n, 1]),
                        "ratio": float(ratio[n]) if n < self.n_max else math.nan,
                        "logp": math.log(p) if p > 0 else -math.inf})
        return out


def replica_value(spec: ExperimentSpec, seed: int) -> int:
    cfg = spec.config.with_seed(seed)
    sample = sample_soup(cfg)
    return statistic_value(spec.statistic, sample.loops, spec.target, cfg.domain.mesh)


def run_tail_experiment(spec: ExperimentSpec, workers: int = 1, progress=None) -> TailEstimate:
    """Sample independent soups, evaluate the statistic and tabulate the tail."""
    check_target(spec.target, spec.config.domain)
    seeds = spec.replica_seeds()
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            values = list(ex.map(replica_value, [spec] * len(seeds), seeds, chunksize=16))
    else:
        values = []
        for i, s in enumerate(seeds):
            values.append(replica_value(spec, s))
            if progress is not None:
                progress(i + 1, len(seeds))
    return TailEstimate.from_values(values, spec.n_max)


# -- inequality suite ---------------------------------------------------------------

@dataclass
class Check:
    name: str
    lhs: int
    rhs: int
    relation: str = "<="

    @property
    def passed(self) -> bool:
        if self.relation == "<=":
            return self.lhs <= self.rhs
        if self.relation == "==":
            return self.lhs == self.rhs
        return self.lhs >= self.rhs

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": int(self.lhs), "relation": self.relation,
                "rhs": int(self.rhs), "passed": self.passed}


@dataclass
class VerifyReport:
    checks: list
    radii: tuple
    a: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"radii": list(self.radii), "a": self.a, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks]}

    def __str__(self):
        lines = []
        for c in self.checks:
            lines.append(f"{'ok  ' if c.passed else 'FAIL'} {c.name}: {c.lhs} {c.relation} {c.rhs}")
        return "\n".join(lines)


class _LoopTable:
    """Refined cells of every loop with distances to a centre, for per-loop annulus tests."""

    def __init__(self, loops, center: Point, mesh: float):
        self.loops = loops
        cells, self.start = refined_cells_all(loops)
        pts = cells * (mesh / RESOLUTION)
        self.d = np.hypot(pts[:, 0] - center.x, pts[:, 1] - center.y)

    def _any(self, flag) -> np.ndarray:
        if len(self.loops) == 0:
            return np.zeros(0, dtype=bool)
        return np.add.reduceat(flag.astype(np.int64), self.start[:-1]) > 0

    def meets(self, ann: Annulus) -> np.ndarray:
        return self._any((self.d > ann.inner_r) & (self.d < ann.outer_r))

    def inside(self, ann: Annulus) -> np.ndarray:
        return ~self._any((self.d <= ann.inner_r) | (self.d >= ann.outer_r))

    def touches_both(self, ann: Annulus) -> np.ndarray:
        return self._any(self.d <= ann.inner_r) & self._any(self.d >= ann.outer_r)

    def within(self, radius: float) -> np.ndarray:
        return ~self._any(self.d >= radius)


def _near_outermost(cs: ClusterSet, center: Point, radius: float) -> list:
    """Outermost clusters whose filling box comes within ``radius`` of ``center``.

    Fillings further out have every cell in the outer state and cannot
    cross an annulus of outer radius ``radius``.
    """
    h = cs.mesh / RESOLUTION
    out = []
    for c in cs.outermost_ids():
        (a0, b0), (a1, b1) = cs.fillings[c].bbox
        dx = max(a0 * h - center.x, 0.0, center.x - (a1 - 1) * h)
        dy = max(b0 * h - center.y, 0.0, center.y - (b1 - 1) * h)
        if math.hypot(dx, dy) < radius + h:
            out.append(c)
    return out


def verify_sample(sample, radii, a: float, center=Point(0.0, 0.0), mesh: float | None = None,
                  domain: GridDomain | None = None) -> VerifyReport:
    """Evaluate every deterministic inequality of the cluster invariants on one sample.

    ``radii`` = (r, r1, R1, R) with r < r1 < R1 < R.  The split used for
    the two-ensemble inequalities is small loops (diameter < a) against
    the rest; the restriction form uses the loops inside the disk of
    radius R + a.  Witness checks compare the number of counted
    components with the number of loop-arc paths found.
    """
    r, r1, R1, R = (float(x) for x in radii)
    if not (0 < r < r1 < R1 < R):
        raise InvalidInputError("radii must satisfy 0 < r < r' < R' < R")
    if not a > 0:
        raise InvalidInputError("a must be positive")
    loops = list(sample.loops) if isinstance(sample, LoopSoupSample) else list(sample)
    if domain is None and isinstance(sample, LoopSoupSample) and sample.config is not None:
        domain = sample.config.domain
    if mesh is None:
        mesh = domain.mesh if domain is not None else 1.0
    c = Point(*center) if not isinstance(center, Point) else center
    A = Annulus(c, r, R)
    A1 = Annulus(c, r1, R1)
    A_in = Annulus(c, r, r1)
    A_out = Annulus(c, R1, R)
    for ann in (A, A1, A_in, A_out):
        check_annulus(ann, mesh)

    from .geometry import diameter
    if isinstance(sample, LoopSoupSample):
        diam = sample.diameters
    else:
        diam = np.array([diameter(l) for l in loops])
    small = [l for l, d in zip(loops, diam) if d < a]
    big = [l for l, d in zip(loops, diam) if d >= a]

    cs_all = build_clusters(loops, mesh)
    cs_small = build_clusters(small, mesh)
    checks = []

    comp_A = comp_number(cs_all, A)
    comp_A1 = comp_number(cs_all, A1)
    clus_A = clus_number(cs_all, A)
    clus_A1 = clus_number(cs_all, A1)
    bounds = extract_boundaries(cs_all, _near_outermost(cs_all, c, R))
    xs_A = cross_number_simple(bounds, A, mesh)
    xs_A1 = cross_number_simple(bounds, A1, mesh)
    tsc_A = total_single_crossings(loops, A, mesh)
    tsc_A1 = total_single_crossings(loops, A1, mesh)

    tab_big = _LoopTable(big, c, mesh)
    big_meets_A1_inside_A = int(np.sum(tab_big.meets(A1) & tab_big.inside(A)))
    tsc_big_in = total_single_crossings(big, A_in, mesh)
    tsc_big_out = total_single_crossings(big, A_out, mesh)

    # decomposition of the component number
    checks.append(Check("decomposition", comp_A,
                        comp_number(cs_small, A1) + tsc_big_in + tsc_big_out + big_meets_A1_inside_A))

    # restriction form: loops inside a domain containing the annulus against the rest.
    # Refined cells are midpoints of sites, so testing them is testing the sites.
    tab_all = _LoopTable(loops, c, mesh)
    within = tab_all.within(R + a)
    inner_loops = [l for l, w in zip(loops, within) if w]
    outer_loops = [l for l, w in zip(loops, within) if not w]
    cs_in = build_clusters(inner_loops, mesh)
    checks.append(Check("decomposition_restricted", comp_A,
                        comp_number(cs_in, A1) + total_single_crossings(outer_loops, A_in, mesh)
                        + total_single_crossings(outer_loops, A_out, mesh)))

    # small loops: component number against clusters of the loops inside A
    if r + a < R - a:
        A_small = Annulus(c, r + a, R - a)
        check_annulus(A_small, mesh)
        tab_small = _LoopTable(small, c, mesh)
        small_in_A = [l for l, k in zip(small, tab_small.inside(A)) if k]
        checks.append(Check("small_loops_comp_le_clus", comp_number(cs_small, A),
                            clus_number(build_clusters(small_in_A, mesh), A_small)))

    # cluster-number decomposition, full and degenerate
    big_cross_in_or_out = int(np.sum(tab_big.touches_both(A_in) | tab_big.touches_both(A_out)))
    checks.append(Check("cluster_decomposition", clus_A,
                        clus_number(cs_small, A1) + big_meets_A1_inside_A + big_cross_in_or_out))
    checks.append(Check("cluster_decomposition_degenerate", clus_A,
                        clus_number(cs_small, A) + int(np.sum(tab_big.meets(A)))))

    # crossing number: monotone and subadditive under union
    tsc_small = total_single_crossings(small, A, mesh)
    tsc_big = total_single_crossings(big, A, mesh)
    checks.append(Check("cross_monotone", tsc_small, tsc_A))
    checks.append(Check("cross_subadditive", tsc_A, tsc_small + tsc_big))
    half1, half2 = bounds[0::2], bounds[1::2]
    xs1 = cross_number_simple(half1, A, mesh)
    xs2 = cross_number_simple(half2, A, mesh)
    checks.append(Check("simple_cross_monotone", xs1, xs_A))
    checks.append(Check("simple_cross_subadditive", xs_A, xs1 + xs2))

    # simple boundaries cross twice per component; clusters never exceed components
    checks.append(Check("cross_equals_twice_comp", xs_A, 2 * comp_A, "=="))
    checks.append(Check("cross_equals_twice_comp_inner", xs_A1, 2 * comp_A1, "=="))
    checks.append(Check("clus_le_comp", clus_A, comp_A))
    checks.append(Check("clus_le_comp_inner", clus_A1, comp_A1))

    # annulus monotonicity: the thinner annulus A' sits inside A
    checks.append(Check("annulus_monotone_cross", tsc_A1, tsc_A, ">="))
    checks.append(Check("annulus_monotone_simple_cross", xs_A1, xs_A, ">="))
    checks.append(Check("annulus_monotone_comp", comp_A1, comp_A, ">="))
    checks.append(Check("annulus_monotone_clus", clus_A1, clus_A, ">="))

    # every counted component has a crossing path of loop arcs
    for name, ann, n in (("crossing_witness", A, comp_A), ("crossing_witness_inner", A1, comp_A1)):
        w = crossing_witnesses(cs_all, ann) if n else []
        checks.append(Check(name, sum(1 for x in w if x is not None), n, "=="))
    return VerifyReport(checks, (r, r1, R1, R), float(a))


# -- narrow tube probe ---------------------------------------------------------------

@dataclass(frozen=True)
class TubeGeometry:
    """Horizontal tube x0 <= x <= x1 around the line y = yc.

    A chain crosses when a cluster of loops lying strictly inside the
    band |y - yc| < width/2 reaches both x <= x0 and x >= x1.
    """

    x0: float
    x1: float
    yc: float

    def __post_init__(self):
        if not self.x0 < self.x1:
            raise InvalidInputError("tube needs x0 < x1")


def tube_crossed(loops, tube: TubeGeometry, width: float, mesh: float) -> bool:
    if width <= 0:
        return False
    inside = [l for l in loops if np.all(np.abs(l.sites[:, 1] * mesh - tube.yc) < width / 2)]
    if not inside:
        return False
    lab = cluster_labels(inside)
    xmin = np.array([l.sites[:, 0].min() * mesh for l in inside])
    xmax = np.array([l.sites[:, 0].max() * mesh for l in inside])
    for cl in np.unique(lab):
        m = lab == cl
        if xmin[m].min() <= tube.x0 and xmax[m].max() >= tube.x1:
            return True
    return False


def narrow_tube_probe(widths, tube: TubeGeometry, config: SoupConfig, replicas: int) -> list:
    """Crossing frequency per tube width.

    Every width is evaluated on the same soups, so the estimates are
    monotone in the width sample by sample.
    """
    widths = [float(w) for w in widths]
    if any(w < 0 for w in widths) or any(b > a for a, b in zip(widths, widths[1:])):
        raise InvalidInputError("widths must be nonnegative and decreasing")
    if replicas < 1:
        raise InvalidInputError("replicas must be positive")
    seeds = np.random.SeedSequence([int(config.seed), 0x7B]).generate_state(replicas, np.uint64)
    hits = np.zeros(len(widths), dtype=np.int64)
    mesh = config.domain.mesh
    for s in seeds:
        loops = sample_soup(config.with_seed(int(s))).loops
        for k, w in enumerate(widths):
            if tube_crossed(loops, tube, w, mesh):
                hits[k] += 1
            else:
                # narrower tubes keep a subset of the loops
                break
    rows = []
    for w, k in zip(widths, hits):
        lo, hi = wilson_interval(int(k), replicas)
        rows.append({"width": w, "count": int(k), "p_hat": k / replicas, "ci_lo": lo, "ci_hi": hi})
    return rows


# -- configuration ---------------------------------------------------------------------

CONFIG_KEYS = {"domain", "mesh", "lambda", "kappa", "L_max", "seed", "target", "statistic", "replicas",
               "n_max", "radii", "a", "output", "seed_policy"}
OUTPUT_KEYS = {"csv", "json", "svg", "samples"}


def parse_domain(spec: str, mesh: float = 1.0) -> GridDomain:
    """'rect WxH', 'halfplane-strip WxH', 'annulus r R' or 'file <path>'."""
    parts = str(spec).split()
    if not parts:
        raise ConfigError("empty domain specification")
    kind = parts[0]
    try:
        if kind in ("rect", "halfplane-strip"):
            w, h = (int(v) for v in parts[1].lower().split("x"))
            if kind == "rect":
                return GridDomain.rect(w, h, mesh, origin=(-(w // 2), -(h // 2)))
            return GridDomain.halfplane_strip(w, h, mesh)
        if kind == "annulus":
            return GridDomain.annulus_shape(float(parts[1]), float(parts[2]), mesh)
        if kind == "file":
            return GridDomain.from_text(Path(" ".join(parts[1:])).read_text())
    except (IndexError, ValueError) as e:
        raise ConfigError(f"bad domain specification {spec!r}: {e}") from e
    raise ConfigError(f"unknown domain kind {kind!r}")


def target_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", None)
    try:
        if kind == "annulus":
            return Annulus(Point(*d.get("center", (0.0, 0.0))), float(d["r"]), float(d["R"]))
        if kind == "sector":
            return SectorAnnulus(float(d["r"]), float(d["R"]), float(d["angle"]),
                                 Point(*d.get("center", (0.0, 0.0))), float(d.get("phase", 0.0)))
        if kind == "quad":
            return Quad(np.asarray(d["boundary"], dtype=float), d["corners"])
    except KeyError as e:
        raise ConfigError(f"target is missing {e}") from e
    raise ConfigError(f"unknown target type {kind!r}")


def target_to_dict(t) -> dict:
    if isinstance(t, Annulus):
        return {"type": "annulus", "center": [t.center.x, t.center.y], "r": t.inner_r, "R": t.outer_r}
    if isinstance(t, SectorAnnulus):
        return {"type": "sector", "center": [t.center.x, t.center.y], "r": t.inner_r, "R": t.outer_r,
                "angle": t.angle, "phase": t.phase}
    if isinstance(t, Quad):
        return {"type": "quad", "boundary": t.boundary.tolist(), "corners": list(t.corners)}
    raise InvalidInputError(f"unsupported target {type(t).__name__}")


@dataclass
class RunConfig:
    """Validated configuration; ``to_dict`` is what gets echoed into outputs."""

    domain: str
    seed: int
    intensity: float
    kappa: float | None = None
    mesh: float = 1.0
    L_max: int = DEFAULT_L_MAX
    target: dict | None = None
    statistic: str = "Comp"
    replicas: int = 100
    n_max: int = 10
    radii: tuple | None = None
    a: float | None = None
    output: dict = field(default_factory=dict)
    seed_policy: str = "spawn"

    def to_dict(self) -> dict:
        d = {"domain": self.domain, "mesh": self.mesh, "seed": self.seed, "L_max": self.L_max,
             "statistic": self.statistic, "replicas": self.replicas, "n_max": self.n_max,
             "seed_policy": self.seed_policy, "output": dict(self.output)}
        if self.kappa is not None:
            d["kappa"] = self.kappa
        d["lambda"] = self.intensity
        if self.target is not None:
            d["target"] = self.target
        if self.radii is not None:
            d["radii"] = list(self.radii)
        if self.a is not None:
            d["a"] = self.a
        return d

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()

    def soup_config(self) -> SoupConfig:
        return SoupConfig(self.intensity, parse_domain(self.domain, self.mesh), self.L_max, self.seed)

    def experiment(self) -> ExperimentSpec:
        if self.target is None:
            raise ConfigError("a tail experiment needs a target")
        return ExperimentSpec(self.soup_config(), target_from_dict(self.target), self.statistic,
                              self.replicas, self.n_max, self.seed_policy)


def config_from_dict(d: dict, strict: bool = True) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(d) - CONFIG_KEYS
    if unknown and strict:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    if "seed" not in d:
        if strict:
            raise ConfigError("configuration needs a seed")
    if "domain" not in d:
        raise ConfigError("configuration needs a domain")
    kappa = d.get("kappa")
    lam = d.get("lambda")
    try:
        if kappa is not None:
            derived = kappa_to_lambda(float(kappa))
            if lam is not None and not math.isclose(float(lam), derived, rel_tol=1e-12):
                raise ConfigError("lambda and kappa disagree")
            lam = derived
        if lam is None:
            raise ConfigError("configuration needs lambda or kappa")
        out = d.get("output", {}) or {}
        if strict and set(out) - OUTPUT_KEYS:
            raise ConfigError(f"unknown output keys: {sorted(set(out) - OUTPUT_KEYS)}")
        radii = d.get("radii")
        cfg = RunConfig(domain=str(d["domain"]), seed=int(d.get("seed", 0)), intensity=float(lam),
                        kappa=None if kappa is None else float(kappa), mesh=float(d.get("mesh", 1.0)),
                        L_max=int(d.get("L_max", DEFAULT_L_MAX)), target=d.get("target"),
                        statistic=str(d.get("statistic", "Comp")), replicas=int(d.get("replicas", 100)),
                        n_max=int(d.get("n_max", 10)),
                        radii=None if radii is None else tuple(float(x) for x in radii),
                        a=None if d.get("a") is None else float(d["a"]), output=dict(out),
                        seed_policy=str(d.get("seed_policy", "spawn")))
    except InvalidInputError as e:
        raise ConfigError(str(e)) from e
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"bad configuration value: {e}") from e
    if cfg.statistic not in STATISTICS:
        raise ConfigError(f"statistic must be one of {STATISTICS}")
    if cfg.seed_policy not in SEED_POLICIES:
        raise ConfigError(f"seed_policy must be one of {SEED_POLICIES}")
    if cfg.target is not None:
        target_from_dict(cfg.target)
    if cfg.radii is not None and len(cfg.radii) != 4:
        raise ConfigError("radii must list r, r', R', R")
    try:
        cfg.soup_config()
    except InvalidInputError as e:
        raise ConfigError(str(e)) from e
    return cfg


def load_config(source, strict: bool = True) -> RunConfig:
    """Read a JSON config from a path, a JSON string or a dict."""
    if isinstance(source, dict):
        return config_from_dict(source, strict)
    text = str(source)
    p = Path(text)
    if not text.lstrip().startswith("{"):
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {source}: {e}") from e
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return config_from_dict(d, strict)


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def _json_float(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def write_results(est: TailEstimate, cfg: RunConfig, csv_path=None, json_path=None) -> dict:
    """CSV table (n, count, p_hat, ci_lo, ci_hi, ratio, logp) and a JSON summary, both echoing the config."""
    rows = est.rows()
    summary = {
        "config": cfg.to_dict(),
        "replicas": est.replicas,
        "rows": [{k: _json_float(v) for k, v in r.items()} for r in rows],
        "ratio_intervals": est.ratio_intervals.tolist(),
        "log_concave": est.log_concave,
        "log_convexity_violations": est.log_convexity_violations,
        "ratios_non_increasing": est.ratios_non_increasing(),
        "values": {str(k): v for k, v in sorted(est.values.items())},
    }
    if csv_path is not None:
        buf = io.StringIO()
        buf.write("# config=" + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        w = csv.DictWriter(buf, fieldnames=["n", "count", "p_hat", "ci_lo", "ci_hi", "ratio", "logp"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
        Path(csv_path).write_text(buf.getvalue())
    if json_path is not None:
        Path(json_path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def read_results_csv(path) -> list:
    lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


# -- SVG -----------------------------------------------------------------------------

def _fmt(x: float) -> str:
    s = f"{x:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class _Svg:
    def __init__(self, bbox, size):
        (x0, y0), (x1, y1) = bbox
        self.x0, self.y1 = x0, y1
        span = max(x1 - x0, y1 - y0, 1e-9)
        self.scale = size / span
        self.w = (x1 - x0) * self.scale
        self.h = (y1 - y0) * self.scale

    def pt(self, p):
        return (p[0] - self.x0) * self.scale, (self.y1 - p[1]) * self.scale

    def path(self, pts, closed=True):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            return ""
        parts = []
        for k, p in enumerate(pts):
            x, y = self.pt(p)
            parts.append(("M" if k == 0 else "L") + _fmt(x) + " " + _fmt(y))
        return " ".join(parts) + (" Z" if closed else "")


def _circle_pts(c: Point, r: float, t0=0.0, t1=2 * math.pi, n=None):
    n = n or max(16, int(abs(t1 - t0) / (2 * math.pi) * 128))
    t = np.linspace(t0, t1, n + 1)
    return np.stack([c.x + r * np.cos(t), c.y + r * np.sin(t)], axis=1)


def _collect(objects):
    layers = {"components": [], "loops": [], "annuli": [], "sectors": [], "quads": []}
    stack = list(objects) if isinstance(objects, (list, tuple)) else [objects]
    while stack:
        o = stack.pop(0)
        if o is None:
            continue
        if isinstance(o, LoopSoupSample):
            layers["loops"].extend(l.vertices for l in o.loops)
        elif isinstance(o, PolyLoop):
            layers["loops"].append(o.vertices)
        elif isinstance(o, ClusterSet):
            layers["components"].extend(b.loop.vertices for b in extract_boundaries(o))
            layers["loops"].extend(l.vertices for l in o.loops)
        elif isinstance(o, ClusterBoundary):
            layers["components"].append(o.loop.vertices)
        elif isinstance(o, Annulus):
            layers["annuli"].append(o)
        elif isinstance(o, SectorAnnulus):
            layers["sectors"].append(o)
        elif isinstance(o, Quad):
            layers["quads"].append(o)
        elif isinstance(o, QuadCover):
            layers["annuli"].extend(o.annuli)
        elif isinstance(o, PinchResult):
            layers["annuli"].append(o.annulus)
        elif isinstance(o, (list, tuple)):
            stack[0:0] = list(o)
        else:
            raise InvalidInputError(f"cannot render {type(o).__name__}")
    return layers


def render_svg(objects, path=None, size: int = 600) -> str:
    """Layered SVG of loops, filled components, annuli, sectors and quads.

    Output depends only on the inputs, so identical inputs give identical
    bytes.  Returns the SVG text and writes it when ``path`` is given.
    """
    layers = _collect(objects)
    pts = [np.zeros((0, 2))]
    pts += [np.asarray(v).reshape(-1, 2) for v in layers["components"] + layers["loops"]]
    for a in layers["annuli"]:
        pts.append(np.array([[a.center.x - a.outer_r, a.center.y - a.outer_r],
                             [a.center.x + a.outer_r, a.center.y + a.outer_r]]))
    for s in layers["sectors"]:
        pts.append(np.array([[s.center.x - s.outer_r, s.center.y - s.outer_r],
                             [s.center.x + s.outer_r, s.center.y + s.outer_r]]))
    for q in layers["quads"]:
        pts.append(q.boundary)
    allp = np.vstack(pts)
    if len(allp) == 0:
        lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
    else:
        lo, hi = allp.min(axis=0), allp.max(axis=0)
        pad = 0.05 * max(float((hi - lo).max()), 1e-9)
        lo, hi = lo - pad, hi + pad
    svg = _Svg((lo, hi), size)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(svg.w)}" height="{_fmt(svg.h)}" '
           f'viewBox="0 0 {_fmt(svg.w)} {_fmt(svg.h)}">']
    out.append('<g id="axes" stroke="#999" stroke-width="0.5">')
    if lo[1] <= 0 <= hi[1]:
        out.append(f'<path d="{svg.path([[lo[0], 0], [hi[0], 0]], closed=False)}"/>')
    if lo[0] <= 0 <= hi[0]:
        out.append(f'<path d="{svg.path([[0, lo[1]], [0, hi[1]]], closed=False)}"/>')
    out.append("</g>")
    out.append('<g id="components" fill="#bbb" stroke="none">')
    for v in layers["components"]:
        out.append(f'<path d="{svg.path(v)}"/>')
    out.append("</g>")
    out.append('<g id="loops" fill="none" stroke="#1f4e9c" stroke-width="0.6">')
    for v in layers["loops"]:
        out.append(f'<path d="{svg.path(v)}"/>')
    out.append("</g>")
    out.append('<g id="annuli" fill="none" stroke="#c0392b" stroke-width="0.8">')
    for a in layers["annuli"]:
        for rad in (a.inner_r, a.outer_r):
            out.append(f'<path d="{svg.path(_circle_pts(a.center, rad))}"/>')
    out.append("</g>")
    out.append('<g id="sectors" fill="#f5cba7" fill-opacity="0.5" stroke="#d35400" stroke-width="0.8">')
    for s in layers["sectors"]:
        outer = _circle_pts(s.center, s.outer_r, s.phase, s.phase + s.angle)
        inner = _circle_pts(s.center, s.inner_r, s.phase + s.angle, s.phase)
        out.append(f'<path d="{svg.path(np.vstack([outer, inner]))}"/>')
    out.append("</g>")
    out.append('<g id="quads" fill="none" stroke-width="1">')
    colours = ("#27ae60", "#7f8c8d", "#8e44ad", "#7f8c8d")
    for q in layers["quads"]:
        for k in range(4):
            out.append(f'<path stroke="{colours[k]}" d="{svg.path(q.arc(k), closed=False)}"/>')
    out.append("</g>")
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
