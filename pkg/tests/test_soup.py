import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from soupscope.errors import InvalidInputError
from soupscope.lattice import GridDomain, loop_mass, sample_bridge
from soupscope.soup import (LoopSoupSample, SoupConfig, filter_by_diameter, kappa_to_lambda,
                            poisson_counts, read_samples_jsonl, restrict, sample_soup, site_uniforms)

import oracles

SMALL = GridDomain.rect(12, 10, origin=(-6, -5))


def test_kappa_to_lambda():
    assert kappa_to_lambda(4.0) == 1.0
    assert kappa_to_lambda(3.0) == pytest.approx(0.5)
    for bad in (8 / 3, 2.0, 4.5):
        with pytest.raises(InvalidInputError):
            kappa_to_lambda(bad)


def test_config_validation():
    for kw in ({"intensity": 0.0}, {"intensity": 1.5}, {"intensity": 0.5, "L_max": 7},
               {"intensity": 0.5, "seed": -1}):
        with pytest.raises(InvalidInputError):
            SoupConfig(domain=SMALL, **kw)


def test_same_seed_same_sample():
    a = sample_soup(SoupConfig(1.0, SMALL, 40, seed=11))
    b = sample_soup(SoupConfig(1.0, SMALL, 40, seed=11))
    assert len(a) == len(b) > 0
    for x, y in zip(a, b):
        assert np.array_equal(x.sites, y.sites)
    c = sample_soup(SoupConfig(1.0, SMALL, 40, seed=12))
    assert [len(l) for l in c] != [len(l) for l in a]


def test_site_uniforms_are_prefix_stable():
    assert np.array_equal(site_uniforms(5, 10), site_uniforms(5, 1000)[:10])


def test_samplers_share_counts_and_lengths():
    cfg = SoupConfig(1.0, SMALL, 40, seed=3)
    a = sample_soup(cfg, method="rejection")
    b = sample_soup(cfg, method="kernel")
    assert np.array_equal(a.roots, b.roots) and np.array_equal(a.lengths, b.lengths)
    for l, r, n in zip(b.loops, b.roots, b.lengths):
        assert tuple(l.sites[0]) == tuple(r) and len(l) == n
        assert SMALL.contains(l.sites).all()


def test_unknown_method():
    with pytest.raises(InvalidInputError):
        sample_soup(SoupConfig(1.0, SMALL, 40), method="magic")


def test_jsonl_round_trip():
    s = sample_soup(SoupConfig(0.5, SMALL, 40, seed=9))
    t = LoopSoupSample.from_jsonl(s.to_jsonl())
    assert len(t) == len(s)
    assert np.array_equal(t.roots, s.roots) and np.array_equal(t.lengths, s.lengths)
    assert t.config.seed == 9 and t.config.domain.key == SMALL.key


def test_poisson_means():
    t = loop_mass(SMALL, 40)
    tot = np.array([poisson_counts(t, 0.5, s).sum() for s in range(400)])
    mean = 0.5 * t.total_mass()
    assert abs(tot.mean() - mean) < 4 * np.sqrt(mean / 400)


def test_kernel_sampler_matches_enumeration():
    dom = GridDomain.rect(3, 3, origin=(-1, -1))
    walks = oracles.enumerate_bridges(dom.mask, (1, 1), 4)
    index = {w: i for i, w in enumerate(walks)}
    rng = np.random.default_rng(0)
    hits = np.zeros(len(walks))
    n = 4000
    for _ in range(n):
        l = sample_bridge(dom, (0, 0), 4, rng)
        hits[index[tuple(map(tuple, l.sites + 1))]] += 1
    assert chisquare(hits, np.full(len(walks), n / len(walks))).pvalue > 1e-3


@settings(max_examples=15)
@given(st.integers(0, 2 ** 32), st.floats(1.0, 6.0))
def test_filter_by_diameter_partitions(seed, a):
    s = sample_soup(SoupConfig(1.0, SMALL, 40, seed=seed))
    small, big = filter_by_diameter(s, a)
    assert len(small) + len(big) == len(s)
    assert all(d < a for d in (x for l, x in zip(s.loops, s.diameters) if l in small))
    assert {id(l) for l in small}.isdisjoint({id(l) for l in big})


@settings(max_examples=15)
@given(st.integers(0, 2 ** 32))
def test_restrict_partitions(seed):
    s = sample_soup(SoupConfig(1.0, SMALL, 40, seed=seed))
    sub = SMALL.restricted_to_points(lambda p: p[:, 0] < 0)
    inside, rest = restrict(s, sub)
    assert len(inside) + len(rest) == len(s)
    assert all((l.sites[:, 0] < 0).all() for l in inside)
    assert all((l.sites[:, 0] >= 0).any() for l in rest)
    m_inside, _ = restrict(s, sub.mask | np.zeros_like(SMALL.mask))
    assert len(m_inside) == len(inside)


def test_restrict_rejects_bigger_domain():
    s = sample_soup(SoupConfig(1.0, SMALL, 40, seed=1))
    with pytest.raises(InvalidInputError):
        restrict(s, GridDomain.rect(40, 40, origin=(-20, -20)))


def test_several_samples_in_one_file():
    cfg = SoupConfig(1.0, GridDomain.rect(8, 8, origin=(-4, -4)), 20, seed=2)
    a, b = sample_soup(cfg), sample_soup(cfg.with_seed(3))
    back = read_samples_jsonl(a.to_jsonl() + b.to_jsonl())
    assert [len(s.loops) for s in back] == [len(a.loops), len(b.loops)]
    assert back[1].config.seed == 3
