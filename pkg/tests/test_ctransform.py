from __future__ import annotations

import numpy as np
import pytest

from cgft.cgf import BaseMeasure, cgf_eval
from cgft.ctransform import (
    GridFn,
    boundary_mask,
    concavity_residual,
    double_transform,
    duality_gap,
    grid_spacing,
    grid_tolerance,
    superdiff_check,
    superdiff_pairs,
    transform_bwd,
    transform_fwd,
)
from cgft.errors import GridLookupError, PreconditionError, PropernessError, ValidationError

import oracles

GAUSS = BaseMeasure.gaussian(1)
LINE = np.round(np.arange(-6.0, 6.0 + 1e-9, 0.05), 12)[:, None]
QUARTER = GridFn(LINE, LINE[:, 0] ** 2 / 4)
H = 0.05


class TestGridFn:
    def test_rejects_nan_and_plus_inf(self):
        with pytest.raises(ValidationError):
            GridFn([[0.0], [1.0]], [0.0, np.nan])
        with pytest.raises(ValidationError):
            GridFn([[0.0], [1.0]], [0.0, np.inf])

    def test_all_minus_inf_is_improper(self):
        with pytest.raises(PropernessError):
            GridFn([[0.0], [1.0]], [-np.inf, -np.inf])

    def test_duplicate_grid_points(self):
        with pytest.raises(ValidationError, match="distinct"):
            GridFn([[0.0], [0.0]], [1.0, 2.0])

    def test_lookup(self):
        f = GridFn([[0.0, 0.0], [1.0, 0.5]], [3.0, 4.0])
        assert f([1.0, 0.5 + 1e-12]) == 4.0
        with pytest.raises(GridLookupError):
            f([1.0, 0.6])

    def test_json_minus_inf(self):
        f = GridFn([[0.0], [1.0]], [-np.inf, 2.0])
        assert f.to_json()["values"][0] == -np.inf
        back = GridFn.from_json({"grid": [[0.0], [1.0]], "values": ["-inf", 2.0]})
        np.testing.assert_array_equal(back.values, [-np.inf, 2.0])
        with pytest.raises(ValidationError):
            GridFn.from_json({"grid": [[0.0]], "values": ["abc"]})


class TestGridGeometry:
    def test_spacing_and_tolerance(self):
        assert grid_spacing(LINE) == pytest.approx(H, abs=1e-12)
        assert grid_tolerance(LINE) == pytest.approx(10 * H + H * H, abs=1e-12)
        assert grid_tolerance(LINE, lipschitz=1.0) == pytest.approx(H + H * H, abs=1e-12)

    def test_boundary(self):
        g = np.array([[x, y] for x in range(3) for y in range(3)], float)
        assert boundary_mask(g).sum() == 8


class TestTransforms:
    def test_zero_function(self):
        base = BaseMeasure.simplex(1).recentered()
        grid = np.linspace(-1, 1, 9)[:, None]
        out = transform_fwd(GridFn(grid, np.zeros(9)), grid, base)
        np.testing.assert_allclose(out.values, 0.0, atol=1e-15)
        np.testing.assert_array_equal(out.argmin, np.arange(9))

    def test_quarter_square_forward(self):
        ys = LINE[np.abs(LINE[:, 0]) <= 2]
        out = transform_fwd(QUARTER, ys, GAUSS)
        np.testing.assert_allclose(out.values, -ys[:, 0] ** 2 / 2, atol=H * H)
        # minimizer sits at x = 2y
        np.testing.assert_allclose(LINE[out.argmin, 0], 2 * ys[:, 0], atol=1e-9)
        assert out.boundary_hits == ()

    def test_quarter_square_backward(self):
        rho = GridFn(LINE, -LINE[:, 0] ** 2 / 2)
        xs = LINE[np.abs(LINE[:, 0]) <= 4]
        out = transform_bwd(rho, xs, GAUSS)
        np.testing.assert_allclose(out.values, xs[:, 0] ** 2 / 4, atol=H * H)

    def test_generator_constant(self):
        y0, c = 0.7, 1.3
        psi = GridFn.from_callable(LINE, lambda x: cgf_eval(GAUSS, x - y0) + c)
        out = transform_fwd(psi, [[y0]], GAUSS)
        assert out.values[0] == pytest.approx(-c, abs=1e-12)

    def test_point_budget(self):
        ys = np.linspace(-2, 2, 5)[:, None]
        rho = GridFn(ys, [-np.inf, -np.inf, 0.0, -np.inf, -np.inf])
        base = BaseMeasure.simplex(1)
        out = transform_bwd(rho, LINE, base)
        np.testing.assert_allclose(out.values, [cgf_eval(base, x) for x in LINE], atol=1e-14)

    def test_zero_generator_zero_mean(self):
        base = BaseMeasure.simplex(1).recentered()
        ys = np.linspace(-2, 2, 41)[:, None]
        out = transform_bwd(GridFn(ys, np.zeros(41)), ys[5:-5], base)
        np.testing.assert_allclose(out.values, 0.0, atol=1e-15)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(11)
        base = BaseMeasure.simplex(2)
        xs = rng.normal(size=(15, 2))
        ys = rng.normal(size=(12, 2))
        vals = rng.normal(size=15)
        vals[[2, 7]] = -np.inf
        out = transform_fwd(GridFn(xs, vals), ys, base)
        expect = oracles.grid_inf_transform(vals, xs, ys, oracles.simplex_cost)
        np.testing.assert_allclose(out.values, expect, atol=1e-13)

    def test_boundary_hits_reported(self):
        grid = np.linspace(-1, 1, 11)[:, None]
        psi = GridFn(grid, 3 * grid[:, 0])  # pushes the minimizer to x = 1
        out = transform_fwd(psi, [[0.0]], GAUSS)
        assert out.boundary_hits == (0,)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            transform_fwd(QUARTER, [[0.0, 0.0]], BaseMeasure.gaussian(2))


class TestSuperdifferential:
    def test_tangent_pair_accepted(self):
        assert superdiff_check(QUARTER, [1.0], [0.5], GAUSS).accepted

    def test_wrong_pair_rejected(self):
        pair = superdiff_check(QUARTER, [1.0], [-1.0], GAUSS)
        assert not pair.accepted and pair.slack > 0.1

    def test_theta_off_grid(self):
        with pytest.raises(GridLookupError):
            superdiff_check(QUARTER, [1.01], [0.5], GAUSS)

    def test_theta_at_minus_inf(self):
        psi = GridFn([[0.0], [1.0]], [-np.inf, 0.0])
        with pytest.raises(PreconditionError):
            superdiff_check(psi, [0.0], [0.0], GAUSS)

    @pytest.mark.parametrize("alpha", [-2.0, -0.5, 1.0, 1.5])
    def test_duality_gap_closed_form(self, alpha):
        psi0 = GridFn(LINE, -LINE[:, 0] ** 2 / 2)
        assert duality_gap(QUARTER, psi0, [alpha], [alpha / 2], GAUSS) == pytest.approx(0.0, abs=1e-14)

    def test_duality_gap_nonnegative(self):
        rng = np.random.default_rng(5)
        base = BaseMeasure.simplex(1)
        grid = np.linspace(-2, 2, 21)[:, None]
        psi = GridFn(grid, rng.normal(size=21))
        psi0 = transform_fwd(psi, grid, base)
        gaps = [duality_gap(psi, psi0, t, y, base) for t in grid for y in grid]
        assert min(gaps) >= -1e-14

    def test_single_generator_equality(self):
        y0 = 0.5
        grid = np.linspace(-2, 2, 9)[:, None]
        psi = GridFn.from_callable(grid, lambda x: cgf_eval(GAUSS, x - y0))
        psi0 = transform_fwd(psi, grid, GAUSS)
        assert duality_gap(psi, psi0, [1.5], [y0], GAUSS) == pytest.approx(0.0, abs=1e-14)

    def test_all_pairs_listed(self):
        psi0 = transform_fwd(QUARTER, LINE, GAUSS)
        pairs = superdiff_pairs(QUARTER, psi0, [1.0], GAUSS)
        assert any(abs(p[0] - 0.5) < 1e-9 for p in pairs)


class TestConcavity:
    def test_transform_output_is_concave(self):
        rng = np.random.default_rng(2)
        grid = np.linspace(-2, 2, 41)[:, None]
        psi = transform_bwd(GridFn(grid, rng.normal(size=41)), grid, BaseMeasure.simplex(1))
        assert concavity_residual(psi, BaseMeasure.simplex(1)) <= grid_tolerance(grid)

    def test_too_curved(self):
        grid = np.round(np.arange(-3.0, 3.0 + 1e-9, 0.05), 12)[:, None]
        assert concavity_residual(GridFn(grid, grid[:, 0] ** 2), GAUSS) > 0.1

    def test_constant(self):
        base = BaseMeasure.simplex(2).recentered()
        g = np.array([[x, y] for x in np.linspace(-1, 1, 5) for y in np.linspace(-1, 1, 5)])
        assert concavity_residual(GridFn(g, np.full(25, 4.2)), base) <= 1e-14

    def test_double_transform_dominates(self):
        rng = np.random.default_rng(9)
        grid = np.linspace(-2, 2, 21)[:, None]
        psi = GridFn(grid, rng.normal(size=21))
        cc = double_transform(psi, BaseMeasure.simplex(1))
        assert np.all(cc.values >= psi.values - 1e-12)

    def test_minus_inf_entries_give_infinite_residual(self):
        grid = np.linspace(-1, 1, 5)[:, None]
        psi = GridFn(grid, [0.0, -np.inf, 0.0, 0.0, 0.0])
        assert concavity_residual(psi, GAUSS) == np.inf
