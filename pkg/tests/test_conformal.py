import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soupscope.conformal import (RadiiSchedule, discrete_modulus, half_annulus_quad, pinch_annulus,
                                 power_map, quad_annuli_cover, radii_schedule, random_crossing_paths,
                                 rectangle_quad, sector_cover, sub_quad)
from soupscope.errors import DomainError, InvalidInputError
from soupscope.geometry import Annulus, Point, crossing_count_single


def crosses(path, ann) -> bool:
    return crossing_count_single(path, ann, densify=True, closed=False)[0] >= 1


class TestPowerMap:
    @given(st.floats(0.1, 5.0), st.floats(0.01, 3.13))
    def test_identity_at_pi(self, r, th):
        p = power_map(math.pi, (r * math.cos(th), r * math.sin(th)))
        assert p.x == pytest.approx(r * math.cos(th), abs=1e-9) and p.y == pytest.approx(r * math.sin(th), abs=1e-9)

    @given(st.floats(0.2, 3.0), st.floats(0.1, 3.0), st.floats(0.01, 0.99))
    def test_sector_to_half_plane(self, eta, r, frac):
        th = frac * eta
        p = power_map(eta, (r * math.cos(th), r * math.sin(th)))
        assert p.y > 0
        assert math.hypot(p.x, p.y) == pytest.approx(r ** (math.pi / eta), rel=1e-9)

    def test_outside_sector(self):
        with pytest.raises(DomainError):
            power_map(1.0, (0.0, -1.0))
        with pytest.raises(InvalidInputError):
            power_map(4.0, (1.0, 1.0))


class TestSchedule:
    def test_endpoints(self):
        s = RadiiSchedule(0.5, 2.0, 1.0)
        assert radii_schedule(s, 1.0) == pytest.approx((0.5, 2.0))
        assert radii_schedule(s, 0.0) == pytest.approx((0.5 ** math.pi, 2.0 ** math.pi))
        assert radii_schedule(s, 2.0) == pytest.approx((0.5 ** (1 / math.pi), 2.0 ** (1 / math.pi)))

    @given(st.floats(0.0, 1.99))
    def test_monotone(self, b):
        s = RadiiSchedule(0.5, 2.0, 1.0)
        r0, R0 = radii_schedule(s, b)
        r1, R1 = radii_schedule(s, b + 0.01)
        assert r1 >= r0 and R1 <= R0

    def test_validation(self):
        with pytest.raises(InvalidInputError):
            RadiiSchedule(1.5, 2.0, 1.0)
        with pytest.raises(InvalidInputError):
            radii_schedule(RadiiSchedule(0.5, 2.0, 1.0), 2.5)


class TestModulus:
    @pytest.mark.parametrize("w,h", [(1.0, 1.0), (1.0, 3.0), (2.0, 1.0)])
    def test_rectangles(self, w, h):
        m = discrete_modulus(rectangle_quad(w, h), 1 / 16).modulus
        assert m == pytest.approx(h / w, rel=0.02)

    def test_duality(self):
        q = half_annulus_quad(1.0, 3.0, n_arc=64)
        m = discrete_modulus(q, 3 / 64).modulus
        md = discrete_modulus(q.dual(), 3 / 64).modulus
        assert m * md == pytest.approx(1.0, rel=0.05)
        assert m == pytest.approx(math.log(3) / math.pi, rel=0.05)

    def test_sub_family_is_more_extremal(self):
        q = rectangle_quad(2.0, 1.0)
        a0 = q.arc(0)
        a2 = q.arc(2)
        pts0 = np.linspace(a0[0], a0[-1], 9)
        pts2 = np.linspace(a2[0], a2[-1], 9)
        sub = sub_quad(q, pts0, pts2, (0, 4), (4, 8))
        assert discrete_modulus(sub, 1 / 16).modulus > discrete_modulus(q, 1 / 16).modulus

    def test_bad_mesh(self):
        with pytest.raises(InvalidInputError):
            discrete_modulus(rectangle_quad(1, 1), 0.0)


class TestPinch:
    def test_long_rectangle(self):
        q = rectangle_quad(1.0, 40.0)
        p = pinch_annulus(q, 1 / 16)
        assert p.guarantee and p.modulus >= 36
        assert p.d1 == pytest.approx(1.0, abs=2 / 16)
        paths = random_crossing_paths(q, 1 / 16, 25, np.random.default_rng(3))
        assert all(crosses(path, p.annulus) for path in paths)

    def test_short_rectangle_has_no_guarantee(self):
        assert not pinch_annulus(rectangle_quad(4.0, 1.0), 1 / 8).guarantee

    def test_paths_join_the_arcs(self):
        q = rectangle_quad(2.0, 3.0)
        for path in random_crossing_paths(q, 1 / 8, 5, np.random.default_rng(0)):
            assert path[0][1] == pytest.approx(0.0, abs=0.2)
            assert path[-1][1] == pytest.approx(3.0, abs=0.2)

    def test_explicit_cover(self):
        q = rectangle_quad(1.0, 40.0)
        cov = quad_annuli_cover(q, 1 / 16, K=2)
        assert len(cov.annuli) == 4 and (cov.sub_moduli >= 40).all()
        paths = random_crossing_paths(q, 1 / 16, 25, np.random.default_rng(5))
        assert all(any(crosses(path, a) for a in cov.annuli) for path in paths)


class TestSectorCover:
    def test_real_axis_centre(self):
        (s,) = sector_cover(Annulus(Point(1.0, 0.0), 1.0, 2.0))
        assert s.angle == pytest.approx(math.pi)

    def test_high_centre(self):
        (s,) = sector_cover(Annulus(Point(0.0, 50.0), 1.0, 2.0))
        assert s.full

    def test_below_axis(self):
        with pytest.raises(InvalidInputError):
            sector_cover(Annulus(Point(0.0, -1.0), 1.0, 2.0))

    @settings(max_examples=40)
    @given(st.floats(0.01, 4.0), st.floats(0.2, 0.8), st.integers(0, 2 ** 32))
    def test_crossings_of_the_annulus_cross_a_candidate(self, cy, rho, seed):
        a = Annulus(Point(0.3, cy), rho * 2.0, 2.0)
        cover = sector_cover(a)
        rng = np.random.default_rng(seed)
        for _ in range(10):
            t = rng.uniform(0, 2 * math.pi)
            start = np.array([0.3, cy]) + rng.uniform(0, a.inner_r) * np.array([math.cos(t), math.sin(t)])
            end = np.array([0.3, cy]) + 2.5 * np.array([math.cos(t + 1), math.sin(t + 1)])
            mid = rng.uniform(-3, 3, (4, 2)) + np.array([0.3, cy])
            path = np.vstack([start, mid, end])
            path[:, 1] = np.abs(path[:, 1])
            if not crosses(path, a):
                continue
            assert any(crosses(path, s.annulus()) for s in cover)
