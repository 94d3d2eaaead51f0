"""Explicit test functions on which a mode form is negative.

Two constructions:

* for delta > 0, the dilated log-sine i f0 chi_{n_d} in mode 0, with
  chi_1(r) = sin(sqrt(lam) ln r) on [1, e^{pi / sqrt(lam)}] and
  lam = delta / (1 - delta);
* for delta near -1, a sin^2 bump zeta on a unit window [r0, r0 + 1] where
  alpha_n^delta is negative, substituted with eta = zeta into B_n^delta.

Dilation limit.  In t = ln r the log-sine satisfies
int (chi_1')^2 r dr = pi sqrt(lam) / 2 and int chi_1^2 / r^2 r dr =
pi / (2 sqrt(lam)); inserting these into Q0^delta[i f0 chi] =
(1 - delta) int f0^2 (chi')^2 r dr - 2 delta int (1 - f0^2) f0^2 chi^2 r dr
with f0 -> 1, (1 - f0^2) ~ 1/r^2 gives -(pi / 2) sqrt(delta (1 - delta)).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from anisovortex.errors import ParameterError
from anisovortex.forms import FormParams, eval_Bn_direct, eval_Q0
from anisovortex.grid import RadialFunction, geometric_grid_through
from anisovortex.profile import solve_profile

# largest radius a witness grid may reach
MAX_RADIUS = 1e6
CRITICAL_DELTA = -1 / math.sqrt(5)


def dilation_limit(delta):
    return -0.5 * math.pi * math.sqrt(delta * (1 - delta))


@dataclass(frozen=True, eq=False)
class PositiveDeltaWitness:
    delta: float
    lam: float
    dilation: int
    chi: RadialFunction = field(repr=False)
    form_value: float
    analytic_limit: float
    profile: object = field(repr=False, default=None)

    @property
    def support(self):
        return self.dilation, self.dilation * math.exp(math.pi / math.sqrt(self.lam))

    def as_dict(self):
        return {
            "kind": "positive_delta",
            "delta": self.delta,
            "n": 0,
            "dilation": self.dilation,
            "form_value": self.form_value,
            "analytic_limit": self.analytic_limit,
        }


def log_sine(r, lam, dilation):
    """chi_1(r / n_d), zero outside its support."""
    t = np.log(np.asarray(r, dtype=float) / dilation)
    top = math.pi / math.sqrt(lam)
    return np.where((t >= 0) & (t <= top), np.sin(math.sqrt(lam) * np.clip(t, 0, top)), 0.0)


def positive_delta_certificate(p, delta, dilation, cells_between=2048, tol=1e-9):
    """Q0^delta[i f0 chi_{n_d}] on a grid that has the support ends as nodes.

    A fresh geometric grid with the piecewise-linear cell scheme is built so
    that the kinks of chi sit on nodes, and f0 is re-solved on it.
    """
    if not 0 < delta < 1:
        raise ParameterError(f"the log-sine witness needs 0 < delta < 1, got {delta}")
    if int(dilation) != dilation or dilation < 1:
        raise ParameterError("dilation must be a positive integer")
    lam = delta / (1 - delta)
    a = float(dilation)
    b = a * math.exp(math.pi / math.sqrt(lam))
    r_max = max(p.grid.r_max, 1.1 * b)
    if r_max > MAX_RADIUS:
        raise ParameterError(
            f"support reaches r = {b:.3g}, beyond the representable {MAX_RADIUS:.0e}; use a smaller dilation"
        )
    grid = geometric_grid_through(a, b, cells_between, p.grid.r_min, r_max, stencil=2)
    q = solve_profile(grid, tol=tol)
    chi = log_sine(grid.nodes, lam, dilation)
    value = eval_Q0(q, delta, np.zeros_like(chi), q.f * chi).total
    return PositiveDeltaWitness(
        float(delta), lam, int(dilation), RadialFunction(grid, chi), float(value), dilation_limit(delta), q
    )


def alpha_samples(p, delta, n):
    """alpha_n^delta on the nodes of p's grid."""
    if int(n) != n or n < 2:
        raise ParameterError("alpha_n is defined for n >= 2")
    if not -1 < delta < 1:
        raise ParameterError(f"delta must lie in (-1, 1), got {delta}")
    r, f, df, ddf = p.grid.nodes, p.f, p.df, p.ddf
    values = (
        (1 - delta) * (n + 1) * df**2
        + (1 + delta) * (n + 1) * (f / r) ** 2
        - 2 * (2 + delta) * df * f / r
        + 2 * delta * df**2
        - 2 * delta * f * ddf
    )
    return RadialFunction(p.grid, values)


def alpha_far_field(r, delta, n):
    """alpha_n^delta with f0 replaced by its far-field expansion."""
    from anisovortex.profile import far_field

    f, df, ddf = far_field(r)
    return (
        (1 - delta) * (n + 1) * df**2
        + (1 + delta) * (n + 1) * (f / r) ** 2
        - 2 * (2 + delta) * df * f / r
        + 2 * delta * df**2
        - 2 * delta * f * ddf
    )


@dataclass(frozen=True, eq=False)
class HighModeWitness:
    delta: float
    n: int
    window: tuple
    epsilon: float
    zeta: RadialFunction = field(repr=False)
    form_value: float

    def as_dict(self):
        return {
            "kind": "high_mode",
            "delta": self.delta,
            "n": self.n,
            "window": list(self.window),
            "epsilon": self.epsilon,
            "form_value": self.form_value,
        }


@dataclass(frozen=True, eq=False)
class HighModeAttempt:
    """Outcome of one high-mode construction, successful or not."""

    delta: float
    n: int
    window: tuple | None
    epsilon: float | None
    form_value: float | None
    bound: float | None  # C1 - (n - 1) eps C2
    reason: str
    zeta: np.ndarray | None = field(repr=False, default=None)
    grid: object = field(repr=False, default=None)

    @property
    def witness(self):
        if self.form_value is None or not self.form_value < 0:
            return None
        return HighModeWitness(
            self.delta, self.n, self.window, self.epsilon, RadialFunction(self.grid, self.zeta), self.form_value
        )


def window_bump(grid, r0):
    r = grid.nodes
    inside = (r > r0) & (r < r0 + 1)
    return np.where(inside, np.sin(np.pi * (r - r0)) ** 2, 0.0)


def _window_scan(r, alpha):
    """Means and maxima of alpha over unit windows starting at each node."""
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (alpha[1:] + alpha[:-1]) * np.diff(r))])
    starts = r[r + 1 <= r[-1]]
    means = np.interp(starts + 1, r, cum) - np.interp(starts, r, cum)
    maxima = np.empty_like(starts)
    for k, r0 in enumerate(starts):
        inside = (r >= r0) & (r <= r0 + 1)
        ends = np.interp([r0, r0 + 1], r, alpha)
        maxima[k] = max(alpha[inside].max(initial=-np.inf), ends.max())
    return starts, means, maxima


def high_mode_attempt(p, delta, n):
    """Try the alpha-window construction at (delta, n)."""
    if int(n) != n or n < 2:
        raise ParameterError("high-mode witnesses need n >= 2")
    if not -1 < delta <= CRITICAL_DELTA:
        return HighModeAttempt(delta, n, None, None, None, None, "delta outside (-1, -1/sqrt(5)]: not attempted")
    r = p.grid.nodes
    alpha = alpha_samples(p, delta, n).values
    starts, means, maxima = _window_scan(r, alpha)
    if starts.size == 0 or means.min() >= 0:
        return HighModeAttempt(delta, n, None, None, None, None, "alpha has no unit window with negative mean")
    eps = -0.5 * float(means.min())
    ok = maxima <= -eps
    if not ok.any():
        return HighModeAttempt(delta, n, None, eps, None, None, "no unit window with max alpha <= -epsilon")
    k = int(np.argmin(np.where(ok, means, np.inf)))
    r0 = float(starts[k])
    zeta = window_bump(p.grid, r0)
    value = eval_Bn_direct(p, FormParams(delta, n), zeta, zeta)
    g = p.grid
    rc = g.centers
    f, df, _ = p.at_cells()
    z, dz = g.at_cells(zeta)
    c1 = g.cell_integrate((1 - delta) * f**2 / rc**2 * dz**2 + (1 + delta) * df**2 * dz**2)
    c2 = g.cell_integrate(z**2 / rc**2)
    bound = c1 - (n - 1) * eps * c2
    reason = "negative" if value < 0 else "window found but form value is nonnegative"
    return HighModeAttempt(delta, n, (r0, r0 + 1), eps, float(value), float(bound), reason, zeta, g)


def high_mode_certificate(p, delta, n):
    """HighModeWitness at (delta, n), or None (see :func:`high_mode_attempt`)."""
    return high_mode_attempt(p, delta, n).witness


def find_unstable_mode(p, delta, n_limit):
    """Smallest n in [2, n_limit] with a negative high-mode witness, or None."""
    if not -1 < delta < 0:
        raise ParameterError(f"need -1 < delta < 0, got {delta}")
    for n in range(2, int(n_limit) + 1):
        w = high_mode_certificate(p, delta, n)
        if w is not None:
            return n, w
    return None


def export_witness(witness, json_path, csv_path=None, header_lines=()):
    with open(json_path, "w") as fh:
        json.dump(witness.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_path is not None:
        fn = witness.chi if isinstance(witness, PositiveDeltaWitness) else witness.zeta
        with open(csv_path, "w") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("r,value\n")
            for r, v in zip(fn.grid.nodes, fn.values):
                fh.write(f"{r:.17g},{v:.17g}\n")
