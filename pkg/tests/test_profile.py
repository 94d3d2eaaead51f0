import dataclasses
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from anisovortex.errors import ConvergenceError, ParameterError
from anisovortex.grid import build_grid, derivative_matrix
from anisovortex.profile import far_field, rescaled_profile, solve_profile, validate_profile

# f0'(0) from converged runs at 1024-4096 nodes (agreement to 1e-11)
ORIGIN_SLOPE = 0.58318949586


def test_profile_is_valid(fine_profile):
    report = validate_profile(fine_profile)
    assert report.ok, report.as_dict()
    assert fine_profile.residual_norm <= 1e-10
    assert fine_profile.origin_slope == pytest.approx(ORIGIN_SLOPE, abs=1e-10)


def test_profile_satisfies_bounds_pointwise(profile):
    r, f, df = profile.r, profile.f, profile.df
    assert np.all((f > 0) & (f < 1))
    assert np.all(np.diff(f) > 0)
    ratio = r * df / f
    assert np.all((ratio > 0) & (ratio < 1))


def test_origin_slope_matches_shooting_oracle(fine_profile):
    # independent oracle: integrate from r0 with the regular branch and
    # bisect the slope on whether f overshoots 1 or turns back down
    def shoot(a):
        r0 = 1e-6
        y0 = [a * r0 * (1 - r0**2 / 8), a * (1 - 3 * r0**2 / 8)]

        def rhs(r, y):
            return [y[1], -y[1] / r + y[0] / r**2 - (1 - y[0] ** 2) * y[0]]

        def over(r, y):
            return y[0] - 1.0

        def back(r, y):
            return y[1]

        over.terminal = back.terminal = True
        sol = solve_ivp(rhs, (r0, 30.0), y0, rtol=1e-12, atol=1e-14, events=(over, back))
        return sol.t_events[0].size > 0

    lo, hi = 0.5, 0.7
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if shoot(mid):
            hi = mid
        else:
            lo = mid
    assert 0.5 < fine_profile.origin_slope < 0.7
    assert fine_profile.origin_slope == pytest.approx(0.5 * (lo + hi), abs=1e-8)


def test_newton_step_count(profile):
    assert profile.iterations <= 12


def test_refinement_shrinks_differences():
    grids = [build_grid(1e-3, 40.0, n) for n in (512, 1024, 2048)]
    profiles = [solve_profile(g) for g in grids]
    probe = np.array([0.5, 1.0, 2.0, 5.0, 10.0])
    values = [p.evaluate(probe)[0] for p in profiles]
    d1 = np.max(np.abs(values[0] - values[1]))
    d2 = np.max(np.abs(values[1] - values[2]))
    # sixth-order scheme: at least the second-order factor 4
    assert d1 / d2 >= 4.0


def test_far_field_defect_scales_like_r_to_the_minus_four():
    p = solve_profile(build_grid(1e-3, 80.0, 2048))
    probes = validate_profile(p, probe_radii=(20.0, 40.0)).probes
    a, b = probes[20.0]["scaled"], probes[40.0]["scaled"]
    assert 0.2 <= a / b <= 5
    # next term of the expansion is 9/(8 r^4)
    assert a == pytest.approx(1.125, rel=0.1)
    assert b == pytest.approx(1.125, rel=0.1)


def test_far_field_expansion_matches_profile_tail(profile):
    r = np.array([15.0, 25.0])
    f, df = profile.evaluate(r)
    ff, dff, _ = far_field(r)
    assert np.allclose(f, ff, atol=5e-5)
    assert np.allclose(df, dff, rtol=0.05)


def test_runtime_2048_nodes():
    grid = build_grid(1e-3, 40.0, 2048)
    t0 = time.perf_counter()
    solve_profile(grid)
    assert time.perf_counter() - t0 <= 5.0


@pytest.mark.parametrize("delta", [-0.75, -0.5, 0.5])
def test_rescaled_profile_solves_anisotropic_equation(fine_profile, delta):
    q = rescaled_profile(fine_profile, delta)
    r = q.grid.nodes
    res = (1 + delta) * (q.ddf + q.df / r - q.f / r**2) + (1 - q.f**2) * q.f
    assert np.max(np.abs(res)) <= 1e-6


def test_rescaled_profile_spot_value(fine_profile):
    q = rescaled_profile(fine_profile, -0.75)
    i = int(np.argmin(np.abs(q.grid.nodes - 1.0)))
    r = q.grid.nodes[i]
    assert q.f[i] == pytest.approx(fine_profile.evaluate(2 * r)[0][0], abs=1e-7)


def test_rescaled_profile_identity_at_zero(profile):
    assert rescaled_profile(profile, 0.0) is profile


@pytest.mark.parametrize("delta", [-1.0, 1.0, 1.5])
def test_rescaled_profile_rejects_delta(profile, delta):
    with pytest.raises(ParameterError):
        rescaled_profile(profile, delta)


def test_short_domain_rejected():
    with pytest.raises(ParameterError):
        solve_profile(build_grid(1e-3, 10.0, 256))


def test_non_convergence_raises():
    with pytest.raises(ConvergenceError) as exc:
        solve_profile(build_grid(1e-3, 40.0, 256), max_iter=1)
    assert exc.value.residual > 1e-10


def test_csv_schema(profile, tmp_path):
    path = tmp_path / "p.csv"
    profile.to_csv(path, ["test"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# test"
    assert lines[1] == "r,f0,df0,ddf0"
    assert len(lines) == 2 + profile.grid.n_nodes


def test_validation_flags_injected_defect(profile):
    f = profile.f.copy()
    f[-1] = 1.1
    rep = validate_profile(dataclasses.replace(profile, f=f))
    assert not rep.in_range and not rep.ok
