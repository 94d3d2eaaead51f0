import numpy as np
import pytest

from anisovortex.errors import ParameterError, ShapeError
from anisovortex.grid import (
    RadialFunction,
    build_grid,
    differentiate,
    fornberg_weights,
    geometric_grid_through,
    grid_from_nodes,
    integrate,
)


def test_two_node_weights_integrate_constant():
    grid = grid_from_nodes([1.0, 2.0], "uniform")
    assert np.allclose(grid.weights, [0.75, 0.75])
    assert integrate(grid, np.ones(2)) == pytest.approx(1.5)


@pytest.mark.parametrize("kind", ["uniform", "geometric"])
def test_constants_integrate_exactly(kind):
    grid = build_grid(0.01, 30.0, 300, kind)
    assert integrate(grid, np.ones(300)) == pytest.approx((30.0**2 - 0.01**2) / 2, rel=1e-13)


def test_nodal_quadrature_is_second_order():
    errs = []
    for n in (200, 400, 800):
        grid = build_grid(0.1, 5.0, n, "uniform")
        exact = -np.cos(5.0) * 5.0 + np.sin(5.0) - (-np.cos(0.1) * 0.1 + np.sin(0.1))
        errs.append(abs(integrate(grid, np.sin(grid.nodes)) - exact))
    assert 3.5 < errs[0] / errs[1] < 4.5
    assert 3.5 < errs[1] / errs[2] < 4.5


def test_cell_rule_is_spectral_for_compact_bumps():
    grid = build_grid(1e-2, 40.0, 800)
    s = np.log(grid.nodes)
    x = (s - np.log(0.5)) / np.log(20 / 0.5) * 2 - 1
    g = np.where(np.abs(x) < 1, np.exp(-1 / (1 - np.minimum(x**2, 1 - 1e-16))), 0.0)
    fine = build_grid(1e-2, 40.0, 3200)
    xf = (np.log(fine.nodes) - np.log(0.5)) / np.log(20 / 0.5) * 2 - 1
    gf = np.where(np.abs(xf) < 1, np.exp(-1 / (1 - np.minimum(xf**2, 1 - 1e-16))), 0.0)
    coarse = grid.cell_integrate(grid.cell_interp @ g)
    ref = fine.cell_integrate(fine.cell_interp @ gf)
    assert abs(coarse - ref) < 1e-9 * abs(ref)


def test_linear_function_differentiates_exactly():
    grid = build_grid(0.5, 25.0, 64, "geometric")
    assert np.allclose(differentiate(grid, 3 * grid.nodes + 2), 3.0, atol=1e-10)


def test_centred_differences_converge_at_second_order():
    errs = []
    for n in (100, 200, 400):
        grid = build_grid(0.5, 3.0, n, "uniform")
        errs.append(np.max(np.abs(differentiate(grid, np.sin(grid.nodes)) - np.cos(grid.nodes))))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_fornberg_reproduces_polynomials():
    x = np.array([0.0, 0.3, 1.1, 1.7, 2.0])
    w = fornberg_weights(0.9, x, 2)
    p = 1 + 2 * x - x**2 + 0.5 * x**3
    assert w[0] @ p == pytest.approx(1 + 1.8 - 0.81 + 0.5 * 0.729)
    assert w[1] @ p == pytest.approx(2 - 1.8 + 1.5 * 0.81)
    assert w[2] @ p == pytest.approx(-2 + 3 * 0.9)


def test_cell_operators_reach_stencil_order():
    # the midpoint difference is superconvergent; six points give fifth order
    for stencil, order in ((2, 2), (6, 5)):
        errs = []
        for n in (100, 200):
            grid = build_grid(0.5, 3.0, n, "uniform", stencil=stencil)
            errs.append(np.max(np.abs(grid.cell_deriv @ np.sin(grid.nodes) - np.cos(grid.centers))))
        assert np.log2(errs[0] / errs[1]) > order - 0.5


@pytest.mark.parametrize(
    "args",
    [(1.0, 1.0, 32), (0.0, 2.0, 32), (-1.0, 2.0, 32), (1.0, 2.0, 8), (1.0, np.inf, 32), (1.0, 2.0, 32.5)],
)
def test_bad_grid_parameters(args):
    with pytest.raises(ParameterError):
        build_grid(*args)


def test_bad_kind():
    with pytest.raises(ParameterError):
        build_grid(1.0, 2.0, 32, "chebyshev")


def test_shape_mismatch():
    grid = build_grid(1.0, 2.0, 32)
    with pytest.raises(ShapeError):
        integrate(grid, np.ones(31))
    with pytest.raises(ShapeError):
        RadialFunction(grid, np.ones(33))


def test_grid_through_places_both_radii_on_nodes():
    grid = geometric_grid_through(8.0, 8.0 * np.e**np.pi, 400, 1e-3, 300.0)
    assert 8.0 in grid.nodes and 8.0 * np.e**np.pi in grid.nodes
    assert grid.r_min <= 1e-3 and grid.r_max >= 300.0
    ds = np.diff(np.log(grid.nodes))
    assert np.allclose(ds, ds[0], rtol=1e-9)


def test_reciprocal_powers():
    # against r dr: 1/r^2 integrates to ln e = 1 and 1/r to e - 1
    grid = build_grid(1.0, np.e, 2048, "uniform")
    assert integrate(grid, grid.nodes**-2) == pytest.approx(1.0, abs=1e-6)
    assert integrate(grid, 1 / grid.nodes) == pytest.approx(np.e - 1, abs=1e-6)


def test_cell_calculus_integrates_by_parts():
    # int g' h r dr + int g (h' + h / r) r dr = [g h r] = 0, to second order
    defects = []
    for n in (512, 1024, 2048):
        grid = build_grid(1e-3, 40.0, n)
        s = np.log(grid.nodes)
        x = (s - s[0]) / (s[-1] - s[0])
        gc, dg = grid.at_cells(np.sin(3 * x) * x * (1 - x))
        hc, dh = grid.at_cells(np.cos(2 * x) * x**2 * (1 - x))
        defects.append(abs(grid.cell_integrate(dg * hc) + grid.cell_integrate(gc * (dh + hc / grid.centers))))
    assert defects[-1] < 1e-6
    assert defects[0] / defects[1] > 3.5 and defects[1] / defects[2] > 3.5
