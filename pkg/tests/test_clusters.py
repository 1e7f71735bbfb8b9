import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soupscope.clusters import (build_clusters, clus_number, cluster_labels, comp_number,
                                cross_number_simple, crossing_clusters, crossing_witnesses,
                                extract_boundaries, filling, loop_crossings, outermost_pairwise,
                                refined_sequence, total_single_crossings, trace_boundary)
from soupscope.errors import ConsistencyError, InvalidInputError, RejectedConfigurationError
from soupscope.fixtures import FIXTURE_ANNULUS, clusters_fixture, comp_change_fixture, rect_loop
from soupscope.geometry import Annulus, Point, PolyLoop, polygon_is_simple, polygon_signed_area
from soupscope.lattice import GridDomain
from soupscope.soup import SoupConfig, sample_soup

import oracles

DOM = GridDomain.rect(24, 24, origin=(-12, -12))
ANN = Annulus(Point(0, 0), 2.3, 6.3)
seeds = st.integers(0, 2 ** 32)


def soup(seed, lam=1.0):
    return sample_soup(SoupConfig(lam, DOM, 60, seed=seed)).loops


def test_refined_sequence_interleaves_midpoints():
    seq = refined_sequence(np.array([(0, 0), (1, 0), (1, 1), (0, 1)]))
    assert seq.tolist() == [[0, 0], [1, 0], [2, 0], [2, 1], [2, 2], [1, 2], [0, 2], [0, 1]]


def test_filling_fills_holes():
    f = filling([rect_loop(0, 4, 0, 4)])
    assert f.area == 81
    assert f.contains_cells([(4, 4)]).tolist() == [True]
    with pytest.raises(InvalidInputError):
        filling([])


def test_trace_boundary_square():
    occ = np.ones((3, 2), dtype=bool)
    corners, cells = trace_boundary(occ)
    assert len(corners) == 10
    assert polygon_signed_area(corners) == pytest.approx(6.0)
    pinch = np.array([[1, 0], [0, 1]], dtype=bool)
    with pytest.raises(ConsistencyError):
        trace_boundary(pinch)


@settings(max_examples=25)
@given(seeds)
def test_cluster_labels_match_union_find(seed):
    loops = soup(seed)
    lab = cluster_labels(loops)
    groups = {}
    for i, c in enumerate(lab):
        groups.setdefault(c, []).append(i)
    assert sorted(groups.values()) == oracles.clusters_by_shared_sites(loops)


@settings(max_examples=25)
@given(seeds, st.randoms(use_true_random=False))
def test_clusters_ignore_loop_order(seed, rnd):
    loops = soup(seed)
    shuffled = loops[:]
    rnd.shuffle(shuffled)
    a = build_clusters(loops)
    b = build_clusters(shuffled)
    assert comp_number(a, ANN) == comp_number(b, ANN)
    assert clus_number(a, ANN) == clus_number(b, ANN)
    key = lambda cs: sorted(sorted(cs.loops[i].id for i in m) for m in cs.members)
    assert key(a) == key(b)


@settings(max_examples=25)
@given(seeds)
def test_outermost_matches_pairwise(seed):
    cs = build_clusters(soup(seed))
    assert np.array_equal(cs.outermost_flags, outermost_pairwise(cs))


@settings(max_examples=20)
@given(seeds, st.sampled_from([0.25, 0.5, 1.0]))
def test_comp_matches_flood_fill_oracle(seed, lam):
    loops = soup(seed, lam)
    cs = build_clusters(loops)
    comp, n_outer = oracles.comp_by_flood_fill(loops, (0, 0), ANN.inner_r, ANN.outer_r)
    assert comp_number(cs, ANN) == comp
    assert len(cs.outermost_ids()) == n_outer


@settings(max_examples=20)
@given(seeds)
def test_cross_twice_comp_and_clus_le_comp(seed):
    cs = build_clusters(soup(seed))
    comp = comp_number(cs, ANN)
    b = extract_boundaries(cs)
    assert cross_number_simple(b, ANN, cs.mesh) == 2 * comp
    assert clus_number(cs, ANN) <= comp
    assert len(crossing_clusters(cs, ANN)) == clus_number(cs, ANN)
    w = crossing_witnesses(cs, ANN)
    assert len(w) == comp and all(x is not None for x in w)
    for bd in b:
        assert polygon_is_simple(bd.loop.vertices)
        assert polygon_signed_area(bd.loop.vertices) > 0


@settings(max_examples=20)
@given(seeds)
def test_total_single_crossings_is_sum_of_loops(seed):
    loops = soup(seed)
    assert total_single_crossings(loops, ANN) == sum(loop_crossings(l, ANN, 1.0) for l in loops)


def test_grazing_annulus_rejected():
    cs = build_clusters([rect_loop(-3, 3, -3, 3)])
    with pytest.raises(RejectedConfigurationError):
        comp_number(cs, Annulus(Point(0, 0), 1.0, 2.3))      # cell centre (1, 0)
    with pytest.raises(RejectedConfigurationError):
        comp_number(cs, Annulus(Point(0, 0), 1.1, 1.3))      # thinner than a cell


def test_empty_configuration():
    cs = build_clusters([], 1.0)
    assert comp_number(cs, ANN) == 0 and clus_number(cs, ANN) == 0
    assert extract_boundaries(cs) == []


def test_nested_cluster_is_not_outermost():
    loops = clusters_fixture()
    cs = build_clusters(loops)
    outer_loop_ids = {cs.loops[i].id for c in cs.outermost_ids() for i in cs.members[c]}
    assert "nested" not in outer_loop_ids and "box" in outer_loop_ids


def test_comp_change_fixture_against_oracle():
    base, red, blue = comp_change_fixture()
    a = FIXTURE_ANNULUS
    for loops in (base, base + [red], base + [blue]):
        cs = build_clusters(loops)
        assert comp_number(cs, a) == oracles.comp_by_flood_fill(loops, (0, 0), a.inner_r, a.outer_r)[0]


def test_disjointness_enforced():
    a = PolyLoop([(0, 0), (2, 0), (2, 2), (0, 2)])
    b = PolyLoop([(1, 1), (3, 1), (3, 3), (1, 3)])
    with pytest.raises(InvalidInputError):
        cross_number_simple([a, b], ANN)


def test_comp_oracle_with_several_components():
    loops = soup(35)
    cs = build_clusters(loops)
    assert comp_number(cs, ANN) == 3
    assert oracles.comp_by_flood_fill(loops, (0, 0), ANN.inner_r, ANN.outer_r)[0] == 3
