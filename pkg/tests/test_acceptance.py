"""Acceptance criteria, one test per criterion.

Every test records its outcome through the ``criterion`` fixture so the
terminal summary prints one PASS/FAIL line per criterion, then asserts.
Tolerances are pinned at the top of the file.
"""
import math
import time
from collections import Counter
from pathlib import Path

import mpmath
import numpy as np
import pytest
from scipy.stats import chi2, poisson

from soupscope.bounds import (AngleConfig, RecursionParams, fomin_det, fomin_det_factored,
                              iterate_recursion, u_n_closed_bound, v_n, v_n_series)
from soupscope.clusters import build_clusters, clus_number, comp_number, loop_crossings
from soupscope.conformal import (discrete_modulus, half_annulus_quad, pinch_annulus, quad_annuli_cover,
                                 random_crossing_paths, rectangle_quad)
from soupscope.fixtures import load_fixture
from soupscope.geometry import Annulus, Point, crossing_count_single
from soupscope.harness import ExperimentSpec, run_tail_experiment, verify_sample
from soupscope.lamination import (build_triangulation, complexity_bound, concentric_representatives,
                                  random_laminar_family, random_punctures)
from soupscope.lattice import (GridDomain, build_kernel, loop_mass, sample_bridge,
                               sample_bridge_rejection, truncation_bound)
from soupscope.soup import SoupConfig, poisson_counts, sample_soup

import oracles

pytestmark = pytest.mark.slow

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

INTENSITIES = (0.25, 0.5, 1.0)
SUITE_SAMPLES = 1000
SUITE_RADII = (6.1, 9.1, 18.3, 24.2)   # r < r' < R' < R, all clear of refined cell centres
SUITE_SPLIT = 6.0
SUITE_MINUTES = 30
TRUNCATION_LIMIT = 1e-3
POISSON_SAMPLES = 10_000
POISSON_ALPHA = 0.01
BRIDGE_DRAWS = 100_000
BRIDGE_SIGMAS = 3.0
FOMIN_RTOL = 1e-9
FOMIN_CONFIGS = 1000
SERIES_Q = (0.1, 0.5, 0.9)
MODULUS_MESH = 1 / 64
MODULUS_RTOL = 0.05
DUALITY_RTOL = 0.10
CROSSING_PATHS = 1000
TAIL_REPLICAS = 10_000
TAIL_HOURS = 2
LAMINATIONS = 1000


@pytest.fixture(scope="module")
def strip():
    return GridDomain.halfplane_strip(64, 64)


def crosses(path, ann) -> bool:
    return crossing_count_single(path, ann, densify=True, closed=False)[0] >= 1


def test_criterion_01_deterministic_suite(strip, criterion):
    table = loop_mass(strip)
    assert table.truncation_bound < TRUNCATION_LIMIT
    assert truncation_bound(table.L_max) == pytest.approx(table.truncation_bound)
    t0 = time.time()
    failures = []
    for lam in INTENSITIES:
        for s in range(SUITE_SAMPLES):
            rep = verify_sample(sample_soup(SoupConfig(lam, strip, table.L_max, seed=s)),
                                SUITE_RADII, SUITE_SPLIT)
            failures += [(lam, s, c.name) for c in rep.failures()]
    minutes = (time.time() - t0) / 60
    ok = not failures and minutes < SUITE_MINUTES
    criterion(1, "deterministic inequality suite", ok,
              f"{len(INTENSITIES) * SUITE_SAMPLES} soups, {len(failures)} violations, {minutes:.1f} min")
    assert not failures, failures[:10]
    assert minutes < SUITE_MINUTES


def poisson_bins(observed, mean, n, min_expected=5.0):
    """Observed and expected counts over integer bins merged until each expects >= min_expected."""
    hi = int(poisson.ppf(1 - 1e-12, mean)) + 1
    ks = np.arange(hi + 1)
    exp = n * poisson.pmf(ks, mean)
    exp[-1] += n * poisson.sf(hi, mean)
    obs = np.bincount(np.minimum(observed, hi), minlength=hi + 1).astype(float)
    o_bins, e_bins, o_acc, e_acc = [], [], 0.0, 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_bins.append(o_acc)
            e_bins.append(e_acc)
            o_acc = e_acc = 0.0
    o_bins[-1] += o_acc
    e_bins[-1] += e_acc
    return np.array(o_bins), np.array(e_bins)


def test_criterion_02_poissonian_counts(strip, criterion):
    table = loop_mass(strip)
    # four disjoint root regions: the quadrants of the strip
    left = table.sites[:, 0] < 0
    low = table.sites[:, 1] <= 32
    regions = [left & low, left & ~low, ~left & low, ~left & ~low]

    # the count vector is what the sampler consumes: check that on a few full samples
    for s in range(5):
        smp = sample_soup(SoupConfig(1.0, strip, table.L_max, seed=s))
        per_site = Counter(map(tuple, smp.roots.tolist()))
        counts = poisson_counts(table, 1.0, s)
        assert all(per_site.get(tuple(x), 0) == c for x, c in zip(table.sites.tolist(), counts))

    pvalues = {}
    for lam in INTENSITIES:
        per_region = np.array([[poisson_counts(table, lam, s)[m].sum() for m in regions]
                               for s in range(POISSON_SAMPLES)])
        stat, dof = 0.0, 0
        for k, m in enumerate(regions):
            mean = lam * float(table.mass[m].sum())
            o, e = poisson_bins(per_region[:, k], mean, POISSON_SAMPLES)
            stat += float(((o - e) ** 2 / e).sum())
            dof += len(o) - 1
        # regions are independent, so the statistics add
        pvalues[lam] = float(chi2.sf(stat, dof))
    ok = all(p > POISSON_ALPHA for p in pvalues.values())
    criterion(2, "Poisson loop counts in disjoint regions", ok,
              ", ".join(f"lambda={k} p={v:.3f}" for k, v in pvalues.items()))
    assert ok, pvalues


def test_criterion_03_bridge_law(criterion):
    dom = GridDomain.rect(3, 3, origin=(-1, -1))
    root = (0, 0)
    walks = oracles.enumerate_bridges(dom.mask, tuple(dom.to_local([root])[0]), 4)
    index = {w: k for k, w in enumerate(walks)}
    p = 1.0 / len(walks)
    sigma = math.sqrt(BRIDGE_DRAWS * p * (1 - p))
    kernel = build_kernel(dom, root, 4)
    worst = {}
    for name, draw in (("rejection", lambda g: sample_bridge_rejection(dom, root, 4, g)),
                       ("kernel", lambda g: sample_bridge(dom, root, 4, g, kernel=kernel))):
        rng = np.random.default_rng(20240)
        hist = np.zeros(len(walks))
        for _ in range(BRIDGE_DRAWS):
            loop = draw(rng)
            hist[index[tuple(map(tuple, dom.to_local(loop.sites).tolist()))]] += 1
        worst[name] = float(np.abs(hist - BRIDGE_DRAWS * p).max() / sigma)
    ok = all(v <= BRIDGE_SIGMAS for v in worst.values())
    criterion(3, "bridge law on a 3x3 domain", ok,
              f"{len(walks)} bridges, worst deviation " + ", ".join(f"{k} {v:.2f} sigma" for k, v in worst.items()))
    assert ok, worst


def test_criterion_04_fomin_numerics(criterion):
    rng = np.random.default_rng(4)
    worst_leibniz = worst_rows = 0.0
    for n in range(1, 7):
        for _ in range(40):
            t1, t2 = rng.uniform(0.1, 1.4, 2)
            cfg = AngleConfig.random(n, t1, t2, rng)
            ref = oracles.fomin_leibniz(cfg.x, cfg.y)
            worst_leibniz = max(worst_leibniz, abs(fomin_det(cfg) - ref) / abs(ref))
            # rows factor as d_jj times the reciprocal matrix
            with mpmath.workdps(60):
                d = [[1 - mpmath.cos(mpmath.mpf(x) - mpmath.mpf(y)) for y in cfg.y] for x in cfg.x]
                rows = mpmath.fprod(d[j][j] for j in range(n)) * \
                    oracles.leibniz_det([[1 / v for v in r] for r in d])
            worst_rows = max(worst_rows, abs(fomin_det_factored(cfg) - float(rows)) / abs(float(rows)))
    singles = all(fomin_det(AngleConfig.random(1, 0.7, 0.7, rng)) == 1.0 for _ in range(100))
    exceed = 0
    for n in range(1, 9):
        for _ in range(FOMIN_CONFIGS):
            t1, t2 = rng.uniform(0.05, 1.5, 2)
            cfg = AngleConfig.random(n, t1, t2, rng)
            exceed += fomin_det(cfg) > 2 * u_n_closed_bound(n, t1, t2)
    ok = worst_leibniz <= FOMIN_RTOL and worst_rows <= FOMIN_RTOL and singles and exceed == 0
    criterion(4, "determinant numerics", ok,
              f"Leibniz rel {worst_leibniz:.1e}, row factorization rel {worst_rows:.1e}, "
              f"n=1 exact {singles}, {exceed} of {8 * FOMIN_CONFIGS} above twice the closed bound")
    assert ok


def test_criterion_05_v_n(criterion):
    from fractions import Fraction
    worst = 0.0
    for q in SERIES_Q:
        for n in range(31):
            part, tail = v_n_series(q, n, n + 2000)
            closed = v_n(q, n)
            assert closed == pytest.approx(q ** n / (1 - q) ** (n + 1), rel=1e-12)
            gap = closed - part
            worst = max(worst, (gap - tail) / closed)
            assert -1e-12 * closed <= gap <= tail + 1e-12 * closed
    exact = all((1 - Fraction(k, 10)) * v_n(Fraction(k, 10), n) == Fraction(k, 10) * v_n(Fraction(k, 10), n - 1)
                for k in range(1, 10) for n in range(1, 31))
    criterion(5, "closed form against the truncated series", exact,
              f"largest excess over the tail bound {worst:.1e} relative, exact recursion {exact}")
    assert exact


def test_criterion_06_recursion(criterion):
    s, eps = 0.5, 0.2
    p = RecursionParams(s, 0.7 * s ** (2 * eps), 10.0, eps, K=10.0)
    r = iterate_recursion(p, 500)
    halving = iterate_recursion(RecursionParams(s, 0.3, 0.0, eps, K=0.0), 500)
    err = float(np.max(np.abs(halving.f / (s / 2) ** np.arange(501) - 1)))
    ok = p.hypothesis_holds and r.bounded and err < 1e-12
    criterion(6, "tail recursion iterator", ok,
              f"bounded {r.bounded}, max f(n)/s^n {r.max_ratio:.3g}, halving rel err {err:.1e}")
    assert ok


def test_criterion_07_discrete_modulus(criterion):
    rect = {m: discrete_modulus(rectangle_quad(1.0, float(m)), MODULUS_MESH).modulus for m in (1, 2, 4)}
    half, dual = {}, {}
    for R in (2.0, 4.0, 8.0):
        q = half_annulus_quad(1.0, R)
        half[R] = discrete_modulus(q, R / 128).modulus
        dual[R] = half[R] * discrete_modulus(q.dual(), R / 128).modulus
    rect_err = max(abs(v / m - 1) for m, v in rect.items())
    half_err = max(abs(v / (math.log(R) / math.pi) - 1) for R, v in half.items())
    dual_err = max(abs(v - 1) for v in dual.values())
    ok = rect_err <= MODULUS_RTOL and half_err <= MODULUS_RTOL and dual_err <= DUALITY_RTOL
    criterion(7, "discrete modulus", ok,
              f"rectangles {rect_err:.2%}, half annuli {half_err:.2%}, duality {dual_err:.2%}")
    assert ok


def test_criterion_08_pinch_and_cover(criterion):
    misses = {}
    long_rect = rectangle_quad(1.0, 40.0)
    thin_ring = half_annulus_quad(1.0, 1.07, around=True)
    for name, q, h in (("rectangle", long_rect, 1 / 16), ("half ring", thin_ring, 0.004)):
        m = discrete_modulus(q, h).modulus
        assert m >= 40, (name, m)
        pin = pinch_annulus(q, h, m)
        paths = random_crossing_paths(q, h, CROSSING_PATHS, np.random.default_rng(8))
        misses[f"pinch {name}"] = sum(not crosses(path, pin.annulus) for path in paths)
    cov = quad_annuli_cover(long_rect, 1 / 16, K=2)
    paths = random_crossing_paths(long_rect, 1 / 16, CROSSING_PATHS, np.random.default_rng(9))
    misses["cover rectangle"] = sum(not any(crosses(path, a) for a in cov.annuli) for path in paths)
    ok = not any(misses.values())
    criterion(8, "pinch annulus and annulus cover", ok,
              ", ".join(f"{k}: {v} misses" for k, v in misses.items()))
    assert ok, misses


def test_criterion_09_tail_behaviour(strip, criterion):
    spec = ExperimentSpec(SoupConfig(1.0, strip, seed=909), Annulus(Point(0.0, 0.0), 6.1, 12.2),
                          "Comp", TAIL_REPLICAS, 6)
    t0 = time.time()
    est = run_tail_experiment(spec)
    hours = (time.time() - t0) / 3600
    p = est.p_hat
    ri = est.ratio_intervals
    positive = bool(p[1] > 0 and p[2] > 0)
    decreasing = bool(est.ratio[1] <= est.ratio[0] or ri[1, 0] <= ri[0, 1])
    violations = est.log_convexity_violations
    ok = positive and decreasing and not violations and hours < TAIL_HOURS
    criterion(9, "tail behaviour at lambda = 1", ok,
              f"p(1)={p[1]:.4f} p(2)={p[2]:.5f} ratios {est.ratio[0]:.4f} {est.ratio[1]:.4f}, "
              f"violations {violations}, {hours * 60:.0f} min")
    assert ok


def test_criterion_10_figure_fixtures(criterion):
    loops, ann, extra = load_fixture(FIXTURES / "comp_change.json")
    comps = (comp_number(build_clusters(loops), ann),
             comp_number(build_clusters(loops + [extra["red"]]), ann),
             comp_number(build_clusters(loops + [extra["blue"]]), ann))
    cl_loops, cl_ann, _ = load_fixture(FIXTURES / "clusters.json")
    clus = clus_number(build_clusters(cl_loops), cl_ann)
    (fig8,), sx_ann, _ = load_fixture(FIXTURES / "self_crossing.json")
    per_loop = loop_crossings(fig8, sx_ann)
    disjoint = oracles.max_disjoint_pieces(
        oracles.crossing_pieces(fig8.vertices, (sx_ann.center.x, sx_ann.center.y), sx_ann.inner_r, sx_ann.outer_r))
    ok = comps == (4, 3, 5) and clus == 2 and per_loop == 4 and disjoint == 3
    criterion(10, "illustrated configurations", ok,
              f"Comp {comps}, Clus {clus}, per-loop {per_loop}, disjoint arcs {disjoint}")
    assert ok


def test_criterion_11_lamination(criterion):
    N = 4
    rng = np.random.default_rng(11)
    violations = done = 0
    edges_ok = True
    worst = 0.0
    while done < LAMINATIONS:
        p = random_punctures(N, rng)
        fam = random_laminar_family(N, rng)
        if not fam:
            continue
        tri = build_triangulation(p)
        edges_ok &= tri.n_edges == 3 * (N - 1)
        loops = concentric_representatives(fam, p, rng)
        cb = complexity_bound(loops, p, tri)
        limit = 6 * (N - 1) * sum(cb.per_annulus)
        violations += cb.raw_intersections > limit
        if limit:
            worst = max(worst, cb.raw_intersections / limit)
        done += 1
    ok = violations == 0 and edges_ok
    criterion(11, "lamination complexity bound", ok,
              f"{done} families, {violations} violations, largest ratio {worst:.2f}, edge count ok {edges_ok}")
    assert ok
