"""Punctured half-plane: triangulation, lamination extraction, complexity bound.

Concentric representatives are built in log-polar coordinates
w = log|z| + i arg z, where the upper half-plane becomes the strip
0 < Im w < pi, circles |z| = const become vertical segments and rays become
horizontal ones.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.csgraph import dijkstra

from .clusters import trace_boundary
from .errors import ConsistencyError, DegenerateInputError, InvalidInputError
from .geometry import (Annulus, Point, PolyLoop, as_xy, crossing_count_single, polygon_is_simple,
                       polylines_intersect, segments_cross_matrix, winding_number)

FOUR = ndimage.generate_binary_structure(2, 1)
EIGHT = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class PunctureSet:
    punctures: tuple

    def __post_init__(self):
        pts = tuple(Point(*as_xy(p)) for p in self.punctures)
        object.__setattr__(self, "punctures", pts)
        if len(pts) < 2:
            raise InvalidInputError("need at least two punctures")
        mods = [math.hypot(p.x, p.y) for p in pts]
        if any(m <= 0 for m in mods) or any(b <= a for a, b in zip(mods, mods[1:])):
            raise InvalidInputError("puncture moduli must be positive and strictly increasing")
        if any(p.y <= 0 for p in pts):
            raise InvalidInputError("punctures must lie in the open upper half-plane")

    @property
    def N(self) -> int:
        return len(self.punctures)

    @property
    def moduli(self) -> np.ndarray:
        return np.array([math.hypot(p.x, p.y) for p in self.punctures])

    @property
    def log_polar(self) -> np.ndarray:
        return np.array([[math.log(math.hypot(p.x, p.y)), math.atan2(p.y, p.x)] for p in self.punctures])

    def annuli(self) -> list:
        m = self.moduli
        return [Annulus(Point(0.0, 0.0), m[i], m[i + 1]) for i in range(self.N - 1)]


def to_plane(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1, 2)
    r = np.exp(w[:, 0])
    return np.stack([r * np.cos(w[:, 1]), r * np.sin(w[:, 1])], axis=1)


@dataclass
class TriEdge:
    kind: str           # "spine" (puncture to puncture) or "arc" (puncture to boundary)
    ends: tuple         # (i, i + 1) for spines, (i, "+") or (i, "-") for arcs
    points: np.ndarray  # open polyline in the plane


@dataclass
class Triangulation:
    vertices: list
    edges: list

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def build_triangulation(p: PunctureSet, samples: int = 256) -> Triangulation:
    """Log-spiral spine edges plus arcs of |z| = |lambda_i| down to the real axis.

    Middle punctures get both arcs, the innermost only the one towards the
    negative axis and the outermost only the one towards the positive
    axis: 3(N-1) edges in all.
    """
    w = p.log_polar
    N = p.N
    edges = []
    t = np.linspace(0.0, 1.0, samples + 1)[:, None]
    for i in range(N - 1):
        seg = (1 - t) * w[i] + t * w[i + 1]
        edges.append(TriEdge("spine", (i, i + 1), to_plane(seg)))
    for i in range(N):
        sides = ["-", "+"]
        if i == 0:
            sides = ["-"]
        elif i == N - 1:
            sides = ["+"]
        for side in sides:
            end = math.pi if side == "-" else 0.0
            n = max(8, int(abs(end - w[i, 1]) / 0.01))
            th = np.linspace(w[i, 1], end, n + 1)
            edges.append(TriEdge("arc", (i, side), to_plane(np.stack([np.full_like(th, w[i, 0]), th], axis=1))))
    return Triangulation(list(p.punctures) + ["boundary"], edges)


@dataclass
class Lamination:
    loops_kept: list
    subsets: dict

    def is_laminar(self) -> bool:
        return is_laminar(list(self.subsets.values()))


def is_laminar(sets) -> bool:
    sets = [frozenset(s) for s in sets]
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            a, b = sets[i], sets[j]
            if a & b and not (a <= b or b <= a):
                return False
    return True


def extract_lamination(loops, p: PunctureSet) -> Lamination:
    """Keep loops winding around at least two punctures, with the punctures they surround."""
    kept, subsets = [], {}
    for l in loops:
        s = frozenset(i for i, q in enumerate(p.punctures) if winding_number(l, q) != 0)
        if len(s) >= 2:
            kept.append(l.id)
            subsets[l.id] = s
    return Lamination(kept, subsets)


@dataclass
class ComplexityBound:
    raw_intersections: int
    bound: int
    per_annulus: list


def _count_intersections(loop_pts: np.ndarray, edge_pts: np.ndarray) -> int:
    a0 = loop_pts
    a1 = np.roll(loop_pts, -1, axis=0)
    b0 = edge_pts[:-1]
    b1 = edge_pts[1:]
    total = 0
    for s in range(0, len(a0), 512):
        total += int(segments_cross_matrix(a0[s:s + 512], a1[s:s + 512], b0, b1).sum())
    return total


def complexity_bound(loops, p: PunctureSet, tri: Triangulation | None = None) -> ComplexityBound:
    loops = list(loops)
    lam = extract_lamination(loops, p)
    keep = set(lam.loops_kept)
    kept = [l for l in loops if l.id in keep]
    per = [sum(crossing_count_single(l, a, densify=True)[0] for l in kept) for a in p.annuli()]
    tri = tri or build_triangulation(p)
    raw = sum(_count_intersections(l.vertices, e.points) for l in kept for e in tri.edges)
    return ComplexityBound(int(raw), int(6 * (p.N - 1) * sum(per)), per)


# -- concentric representatives ------------------------------------------------

def random_laminar_family(N: int, rng: np.random.Generator, attempts: int = 6,
                          allow_repeats: bool = True) -> list:
    """A random multiset of subsets of size >= 2 that are pairwise nested or disjoint."""
    fam = []
    for _ in range(attempts):
        k = int(rng.integers(2, N + 1))
        s = frozenset(int(v) for v in rng.choice(N, size=k, replace=False))
        if s in fam and not allow_repeats:
            continue
        if is_laminar(fam + [s]):
            fam.append(s)
    return fam


def random_punctures(N: int, rng: np.random.Generator, min_gap: float = 0.35) -> PunctureSet:
    u = np.cumsum(min_gap + rng.uniform(0, 0.6, N))
    u -= u.mean()
    th = rng.uniform(0.35, math.pi - 0.35, N)
    return PunctureSet(tuple(Point(*z) for z in to_plane(np.stack([u, th], axis=1))))


def _laminar_parents(fam) -> list:
    """Parent index per set: the smallest later set containing it (ascending size order)."""
    order = sorted(range(len(fam)), key=lambda k: (len(fam[k]), k))
    parent = [None] * len(fam)
    for a, i in enumerate(order):
        for j in order[a + 1:]:
            if fam[i] <= fam[j]:
                parent[i] = j
                break
    return parent


@dataclass
class _Strip:
    u0: float
    h: float
    ht: float
    shape: tuple

    def cell_of(self, w) -> tuple:
        return (int((w[0] - self.u0) / self.h), int(w[1] / self.ht))

    def corner_to_w(self, corners: np.ndarray) -> np.ndarray:
        c = np.asarray(corners, dtype=float)
        return np.stack([self.u0 + c[:, 0] * self.h, c[:, 1] * self.ht], axis=1)


def _fix_pinches(reg: np.ndarray, forbidden: np.ndarray) -> bool:
    """Add cells until no 2x2 block is occupied only along a diagonal."""
    for _ in range(reg.size):
        a = reg[:-1, :-1]
        b = reg[1:, :-1]
        c = reg[:-1, 1:]
        d = reg[1:, 1:]
        p1 = a & d & ~b & ~c
        p2 = b & c & ~a & ~d
        if not (p1.any() or p2.any()):
            return True
        for (i, j) in np.argwhere(p1):
            for cell in ((i + 1, j), (i, j + 1)):
                if not forbidden[cell]:
                    reg[cell] = True
                    break
            else:
                return False
        for (i, j) in np.argwhere(p2):
            for cell in ((i, j), (i + 1, j + 1)):
                if not forbidden[cell]:
                    reg[cell] = True
                    break
            else:
                return False
    return False


def _connect(reg, target, allowed, rng):
    """Shortest 4-path (randomly weighted) from reg to target through allowed cells."""
    W, H = reg.shape
    ok = allowed | reg | target
    idx = np.full(reg.shape, -1, dtype=np.int64)
    idx[ok] = np.arange(int(ok.sum()))
    n = int(ok.sum())
    rows, cols = [], []
    for dx, dy in ((1, 0), (0, 1)):
        a = idx[:W - dx, :H - dy]
        b = idx[dx:, dy:]
        m = (a >= 0) & (b >= 0)
        rows.append(a[m])
        cols.append(b[m])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    w = 1.0 + rng.uniform(0, 0.5, len(r))
    S = n
    src = idx[reg]
    G = sparse.coo_matrix((np.concatenate([w, np.full(len(src), 1e-9)]),
                           (np.concatenate([r, np.full(len(src), S)]), np.concatenate([c, src]))),
                          shape=(n + 1, n + 1)).tocsr()
    dist, pred = dijkstra(G, directed=False, indices=S, return_predecessors=True)
    tgt = idx[target]
    tgt = tgt[np.isfinite(dist[tgt])]
    if len(tgt) == 0:
        return None
    k = int(tgt[np.argmin(dist[tgt])])
    cells = np.argwhere(ok)
    path = np.zeros_like(reg)
    while k != S and k >= 0:
        path[tuple(cells[k])] = True
        k = pred[k]
    return path


def _grow_region(strip, comps, forbidden, rng):
    reg = comps[0].copy()
    rest = [c.copy() for c in comps[1:]]
    allowed = ~forbidden
    while rest:
        target = np.zeros_like(reg)
        for c in rest:
            target |= c
        path = _connect(reg, target & ~reg, allowed & ~reg, rng)
        if path is None:
            return None
        reg |= path
        keep = []
        for c in rest:
            if (ndimage.binary_dilation(reg, structure=FOUR) & c).any():
                reg |= c
            else:
                keep.append(c)
        rest = keep
    return reg


def concentric_representatives(fam, p: PunctureSet, rng: np.random.Generator, h: float = 0.04,
                               margin: int = 2, tries: int = 8, refinements: int = 2) -> list:
    """Disjoint simple loops made of circle arcs and radial segments, one per set of ``fam``.

    Each loop surrounds exactly its set of punctures; nested sets give
    nested loops and repeated sets give parallel copies.  Returns
    PolyLoops with id equal to the index in ``fam``.  Deep nesting near
    close punctures may not fit the raster, so after ``tries`` failures
    the cell size is halved, up to ``refinements`` times.
    """
    for level in range(refinements + 1):
        for _ in range(tries):
            out = _try_representatives(fam, p, rng, h / 2 ** level, margin)
            if out is not None:
                return out
    raise ConsistencyError("could not realise the laminar family")


def _try_representatives(fam, p, rng, h, margin):
    w = p.log_polar
    u0 = w[:, 0].min() - 1.0
    u1 = w[:, 0].max() + 1.0
    nt = int(math.ceil(math.pi / h))
    strip = _Strip(u0, h, math.pi / nt, (int(math.ceil((u1 - u0) / h)), nt))
    W, H = strip.shape
    pcell = [strip.cell_of(x) for x in w]
    parent = _laminar_parents(fam)
    order = sorted(range(len(fam)), key=lambda k: (len(fam[k]), k))
    regions = {}
    # every enclosing set dilates its children by one cell, so clearances
    # grow with depth: a child keeps one more cell free than its parent
    depth = []
    for k in range(len(fam)):
        d, j = 0, parent[k]
        while j is not None:
            d, j = d + 1, parent[j]
        depth.append(d)
    # a puncture gets its 3x3 block from the smallest set holding it, the deepest of its chain
    block_depth = [max((depth[k] for k in range(len(fam)) if i in fam[k]), default=0)
                   for i in range(p.N)]

    def box(k, i):
        # half-width of the forbidden box around puncture i, which fam[k] excludes
        return margin + 1 + depth[k] + block_depth[i]

    def edge_band(k):
        b = margin + depth[k]
        e = np.zeros((W, H), dtype=bool)
        e[:, :b] = True
        e[:, -b:] = True
        e[:b, :] = True
        e[-b:, :] = True
        return e

    def descendants(k):
        out = set()
        stack = [j for j in range(len(fam)) if parent[j] == k]
        while stack:
            j = stack.pop()
            out.add(j)
            stack.extend(i for i in range(len(fam)) if parent[i] == j)
        return out

    for k in order:
        S = fam[k]
        kids = [j for j in range(len(fam)) if parent[j] == k]
        desc = descendants(k)
        covered = set().union(*[fam[j] for j in kids]) if kids else set()
        comps = []
        for j in kids:
            comps.append(ndimage.binary_dilation(regions[j], structure=EIGHT))
        for i in sorted(S - covered):
            c = np.zeros((W, H), dtype=bool)
            a, b = pcell[i]
            c[a - 1:a + 2, b - 1:b + 2] = True
            comps.append(c)
        forb = edge_band(k)
        for i in range(p.N):
            if i not in S:
                a, b = pcell[i]
                bk = box(k, i)
                forb[max(0, a - bk):a + bk + 1, max(0, b - bk):b + bk + 1] = True
        for j, reg in regions.items():
            if j not in desc:
                gap = margin + depth[k] + depth[j]
                forb |= ndimage.binary_dilation(reg, structure=np.ones((2 * gap + 1,) * 2, dtype=bool))
        if any((c & forb).any() for c in comps):
            return None
        reg = _grow_region(strip, comps, forb, rng)
        if reg is None or not _fix_pinches(reg, forb):
            return None
        filled = ndimage.binary_fill_holes(reg, structure=FOUR)
        if (filled & forb).any():
            return None
        if not _fix_pinches(filled, forb):
            return None
        regions[k] = filled
    loops = []
    for k in range(len(fam)):
        try:
            corners, _ = trace_boundary(regions[k])
        except ConsistencyError:
            return None
        loops.append(PolyLoop(_strip_polygon_to_plane(strip, corners), id=k))
    lam = extract_lamination(loops, p)
    if any(lam.subsets.get(k) != frozenset(fam[k]) for k in range(len(fam))):
        return None
    # the strip construction keeps regions apart; recheck after mapping to the plane
    if not all(polygon_is_simple(l.vertices) for l in loops):
        return None
    if any(polylines_intersect(a.vertices, b.vertices) for a, b in itertools.combinations(loops, 2)):
        return None
    return loops


def _strip_polygon_to_plane(strip: _Strip, corners: np.ndarray, dtheta: float = 0.02) -> np.ndarray:
    c = corners
    prev = np.roll(c, 1, axis=0)
    nxt = np.roll(c, -1, axis=0)
    turn = (c - prev)[:, 0] * (nxt - c)[:, 1] - (c - prev)[:, 1] * (nxt - c)[:, 0]
    c = c[turn != 0]
    w = strip.corner_to_w(c)
    pts = []
    n = len(w)
    for k in range(n):
        a = w[k]
        b = w[(k + 1) % n]
        pts.append(a)
        if a[0] == b[0]:
            # constant modulus: a circular arc, densified
            m = int(abs(b[1] - a[1]) / dtheta)
            for t in np.linspace(0, 1, m + 2)[1:-1]:
                pts.append(a + t * (b - a))
    return to_plane(np.array(pts))
