"""Log-polar coordinate math against hand-computed values."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from retinotopic.geometry import (
    TWO_PI,
    CartesianPoint,
    GridSpec,
    LogPolarPoint,
    from_log_polar,
    grid_axes,
    make_grid,
    rotate_point,
    scale_point,
    to_log_polar,
    wrap_angle,
)

ORIGIN = CartesianPoint(0.0, 0.0)


def angle_diff(a, b):
    d = (a - b) % TWO_PI
    return min(d, TWO_PI - d)


class TestWrapAngle:
    def test_known_values(self):
        assert wrap_angle(0.0) == 0.0
        npt.assert_allclose(wrap_angle(-math.pi / 2), 3 * math.pi / 2, rtol=0, atol=1e-15)
        npt.assert_allclose(wrap_angle(7 * math.pi / 2), 3 * math.pi / 2, rtol=0, atol=1e-12)
        assert wrap_angle(TWO_PI) == 0.0

    def test_range(self, rng):
        for a in rng.uniform(-50, 50, size=200):
            w = wrap_angle(a)
            assert 0.0 <= w < TWO_PI
            assert angle_diff(w, a) < 1e-9


class TestToLogPolar:
    def test_offset_pole(self):
        q = to_log_polar(CartesianPoint(4.0, 2.0), CartesianPoint(1.0, 1.0))
        # atan2(1, 3) and log(sqrt(10))
        npt.assert_allclose(q.phi, 0.3217505543966422, rtol=0, atol=1e-15)
        npt.assert_allclose(q.rho, 1.151292546497023, rtol=0, atol=1e-15)

    def test_diagonal(self):
        q = to_log_polar(CartesianPoint(3.0, 3.0), ORIGIN)
        npt.assert_allclose(q.phi, math.pi / 4, rtol=0, atol=1e-15)
        npt.assert_allclose(q.rho, 1.4451858789480823, rtol=0, atol=1e-15)

    def test_unit_x(self):
        q = to_log_polar(CartesianPoint(1.0, 0.0), ORIGIN)
        assert q.phi == 0.0
        assert q.rho == 0.0

    def test_pole_rejected(self):
        with pytest.raises(ValueError):
            to_log_polar(CartesianPoint(2.0, -1.0), CartesianPoint(2.0, -1.0))


class TestFromLogPolar:
    def test_half_turn(self):
        p = from_log_polar(LogPolarPoint(math.pi, math.log(2.0)), ORIGIN)
        npt.assert_allclose([p.x, p.y], [-2.0, 0.0], rtol=0, atol=1e-14)

    def test_offset_pole(self):
        p = from_log_polar(LogPolarPoint(0.0, 0.0), CartesianPoint(5.0, 7.0))
        assert (p.x, p.y) == (6.0, 7.0)

    def test_inverts_forward_example(self):
        p = from_log_polar(LogPolarPoint(math.pi / 4, 1.4451858789480823), ORIGIN)
        npt.assert_allclose([p.x, p.y], [3.0, 3.0], rtol=0, atol=1e-12)


def test_round_trip(rng):
    # radii spanning (1e-3, 1e3], poles up to |100|
    for _ in range(500):
        pole = CartesianPoint(*rng.uniform(-100, 100, size=2))
        r = math.exp(rng.uniform(math.log(1e-3), math.log(1e3)))
        th = rng.uniform(0, TWO_PI)
        p = CartesianPoint(pole.x + r * math.cos(th), pole.y + r * math.sin(th))
        back = from_log_polar(to_log_polar(p, pole), pole)
        npt.assert_allclose([back.x, back.y], [p.x, p.y], rtol=0, atol=1e-9)


class TestRotation:
    def test_minus_thirty_degrees(self):
        p = rotate_point(CartesianPoint(3.0, 3.0), ORIGIN, math.radians(-30))
        q = to_log_polar(p, ORIGIN)
        npt.assert_allclose(q.phi, math.radians(15.0), rtol=0, atol=1e-12)
        npt.assert_allclose(q.rho, 1.4451858789480823, rtol=0, atol=1e-12)

    def test_full_turn_identity(self):
        p = rotate_point(CartesianPoint(2.0, -5.0), CartesianPoint(1.0, 1.0), TWO_PI)
        npt.assert_allclose([p.x, p.y], [2.0, -5.0], rtol=0, atol=1e-12)

    def test_phi_shift_property(self, rng):
        # rotation about the pole adds to phi and leaves rho alone
        for _ in range(200):
            pole = CartesianPoint(*rng.uniform(-20, 20, size=2))
            r = rng.uniform(0.1, 50.0)
            th = rng.uniform(0, TWO_PI)
            alpha = rng.uniform(-10, 10)
            p = CartesianPoint(pole.x + r * math.cos(th), pole.y + r * math.sin(th))
            q = to_log_polar(p, pole)
            q2 = to_log_polar(rotate_point(p, pole, alpha), pole)
            assert angle_diff(q2.phi, q.phi + alpha) < 1e-12
            npt.assert_allclose(q2.rho, q.rho, rtol=0, atol=1e-12)


class TestScaling:
    def test_rho_shift_example(self):
        p = scale_point(CartesianPoint(3.0, 3.0), ORIGIN, 1.9)
        q = to_log_polar(p, ORIGIN)
        npt.assert_allclose(q.rho, 1.4451858789480823 + math.log(1.9), rtol=0, atol=1e-12)
        npt.assert_allclose(q.phi, math.pi / 4, rtol=0, atol=1e-12)

    def test_shrink_on_axis(self):
        p = scale_point(CartesianPoint(2.0, 0.0), ORIGIN, 0.5)
        npt.assert_allclose([p.x, p.y], [1.0, 0.0], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("c", [0.0, -1.0])
    def test_nonpositive_factor_rejected(self, c):
        with pytest.raises(ValueError):
            scale_point(CartesianPoint(1.0, 1.0), ORIGIN, c)

    def test_rho_shift_property(self, rng):
        for _ in range(200):
            pole = CartesianPoint(*rng.uniform(-20, 20, size=2))
            r = rng.uniform(0.1, 50.0)
            th = rng.uniform(0, TWO_PI)
            c = math.exp(rng.uniform(-2, 2))
            p = CartesianPoint(pole.x + r * math.cos(th), pole.y + r * math.sin(th))
            q = to_log_polar(p, pole)
            q2 = to_log_polar(scale_point(p, pole, c), pole)
            npt.assert_allclose(q2.rho, q.rho + math.log(c), rtol=0, atol=1e-12)
            assert angle_diff(q2.phi, q.phi) < 1e-12


class TestGridSpec:
    @pytest.mark.parametrize(
        "args",
        [(0, 3, 1.0, 2.0), (4, 1, 1.0, 2.0), (4, 3, 0.0, 2.0), (4, 3, -1.0, 2.0), (4, 3, 2.0, 2.0)],
    )
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            GridSpec(*args)

    def test_valid(self):
        spec = GridSpec(32, 32, 1.0, 45.25)
        assert spec.h_prime == 32 and spec.w_prime == 32


class TestGrid:
    def test_four_by_three(self):
        grid = make_grid(GridSpec(4, 3, 1.0, math.e**2))
        assert len(grid) == 4 and len(grid[0]) == 3
        want_phi = [0.0, math.pi / 2, math.pi, 3 * math.pi / 2]
        for i, row in enumerate(grid):
            for j, cell in enumerate(row):
                npt.assert_allclose(cell.phi, want_phi[i], rtol=0, atol=1e-15)
                npt.assert_allclose(cell.rho, float(j), rtol=0, atol=1e-12)

    def test_single_row(self):
        grid = make_grid(GridSpec(1, 2, 1.0, math.e))
        assert len(grid) == 1
        npt.assert_allclose([grid[0][0].phi, grid[0][0].rho], [0.0, 0.0], rtol=0, atol=1e-15)
        npt.assert_allclose([grid[0][1].phi, grid[0][1].rho], [0.0, 1.0], rtol=0, atol=1e-15)

    def test_reference_spacing(self):
        phi, rho = grid_axes(GridSpec(64, 32, 1.0, 20.0))
        npt.assert_allclose(np.diff(rho), math.log(20.0) / 31, rtol=0, atol=1e-12)
        npt.assert_allclose(np.diff(phi), TWO_PI / 64, rtol=0, atol=1e-15)

    def test_axes_monotone_with_exact_endpoints(self, rng):
        for _ in range(20):
            h = int(rng.integers(1, 40))
            w = int(rng.integers(2, 40))
            r_min = float(rng.uniform(0.2, 3.0))
            r_max = r_min * float(rng.uniform(1.5, 50.0))
            phi, rho = grid_axes(GridSpec(h, w, r_min, r_max))
            assert phi.shape == (h,) and rho.shape == (w,)
            assert phi[0] == 0.0 and np.all(np.diff(phi) > 0) and phi[-1] < TWO_PI
            assert np.all(np.diff(rho) > 0)
            npt.assert_allclose(rho[0], math.log(r_min), rtol=0, atol=1e-12)
            npt.assert_allclose(rho[-1], math.log(r_max), rtol=0, atol=1e-12)
