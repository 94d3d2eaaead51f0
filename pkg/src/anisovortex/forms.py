"""Mode-wise quadratic forms of the second variation and the identities
between them.

Every form is a sum of terms ``coef(r) * A * B`` integrated against r dr,
where A and B are cell-centre values or derivatives of two real tracks.
:func:`q0_terms` and :func:`qn_terms` return these tables; evaluation here
and matrix assembly in :mod:`anisovortex.spectrum` both read them, so a
coefficient vector and its nodal pair give the same number either way.

All forms use the isotropic profile f0: the delta-dependence of the
rescaled problem sits entirely in the coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from anisovortex.errors import ParameterError, ShapeError
from anisovortex.grid import _values

IDENTITIES = ("Q0_A0", "Q1_A1", "Qn_Q1", "A0_dec", "A1_dec")


@dataclass(frozen=True)
class FormParams:
    delta: float
    n: int = 0

    def __post_init__(self):
        if not -1 < self.delta < 1:
            raise ParameterError(f"delta must lie in (-1, 1), got {self.delta}")
        if int(self.n) != self.n or self.n < 0:
            raise ParameterError(f"n must be a non-negative integer, got {self.n}")


@dataclass(frozen=True)
class ModePair:
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        if phi.shape != psi.shape:
            raise ShapeError("phi and psi must live on the same grid")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    def __iter__(self):
        return iter((self.phi, self.psi))

    def __getitem__(self, i):
        return (self.phi, self.psi)[i]


@dataclass(frozen=True)
class FormBreakdown:
    total: float
    gradient_term: float
    anisotropic_term: float
    potential_term: float

    def __float__(self):
        return self.total


@dataclass(frozen=True)
class Term:
    part: str  # gradient | anisotropic | potential
    coef: np.ndarray
    a: tuple  # (track, derivative?) with track 0/1
    b: tuple


def _check_profile(p):
    if p.delta != 0.0:
        raise ParameterError("forms are written with the isotropic profile f0; pass the delta = 0 profile")


def _pair(p, phi, psi):
    return _values(p.grid, phi), _values(p.grid, psi)


def _square(coef, x, dx, c):
    """Terms of coef * (x' + c x / r)^2 given the cell radii in ``c``'s scope."""
    return [(coef, dx, dx), (2 * coef * c, dx, x), (coef * c**2, x, x)]


def q0_terms(p, delta):
    """Terms of Q0^delta[u + i v] on the tracks (u, v).

    The gradient and anisotropic parts are kept in the completed form
    (1 + delta)(u' + u/r)^2 + (1 - delta)(v' + v/r)^2; it differs from
    |phi'|^2 + |phi|^2/r^2 + delta Re(conj(phi)' + conj(phi)/r)^2 by the
    exact derivative (u^2 + v^2)', which integrates to zero on functions
    vanishing at both ends.  Keeping it out makes the discrete form
    nonnegative term by term rather than only up to quadrature error.
    """
    rc = p.grid.centers
    f, _, _ = p.at_cells()
    inv = 1 / rc
    U, dU, V, dV = (0, False), (0, True), (1, False), (1, True)
    terms = []
    for part, weight in (("gradient", 1.0), ("anisotropic", delta)):
        terms += [Term(part, c, a, b) for c, a, b in _square(weight * np.ones_like(rc), U, dU, inv)]
        terms += [Term(part, c, a, b) for c, a, b in _square((weight if part == "gradient" else -weight) * np.ones_like(rc), V, dV, inv)]
    terms += [
        Term("potential", (1 + delta) * (3 * f**2 - 1), U, U),
        Term("potential", (1 + delta) * (f**2 - 1), V, V),
    ]
    return terms


def qn_terms(p, delta, n):
    """Terms of Q_n^delta[phi, psi] for real tracks (phi, psi), n >= 1.

    With a = phi' + (1 + n) phi / r and b = psi' + (1 - n) psi / r the
    integrand is a^2 + b^2 + 2 delta a b plus the potential.  As for
    :func:`q0_terms`, a^2 + b^2 replaces the gradient terms up to the exact
    derivative ((1 + n) phi^2 + (1 - n) psi^2)'.
    """
    rc = p.grid.centers
    f, _, _ = p.at_cells()
    one = np.ones_like(rc)
    cp = (1 + n) / rc
    cs = (1 - n) / rc
    P, dP, S, dS = (0, False), (0, True), (1, False), (1, True)
    terms = [Term("gradient", c, a, b) for c, a, b in _square(one, P, dP, cp)]
    terms += [Term("gradient", c, a, b) for c, a, b in _square(one, S, dS, cs)]
    terms += [
        # 2 delta (phi' + cp phi)(psi' + cs psi)
        Term("anisotropic", 2 * delta * one, dP, dS),
        Term("anisotropic", 2 * delta * cs, dP, S),
        Term("anisotropic", 2 * delta * cp, P, dS),
        Term("anisotropic", 2 * delta * cp * cs, P, S),
        # (1+delta){f^2 (phi+psi)^2 - (1-f^2)(phi^2+psi^2)}
        Term("potential", (1 + delta) * (2 * f**2 - 1), P, P),
        Term("potential", (1 + delta) * (2 * f**2 - 1), S, S),
        Term("potential", 2 * (1 + delta) * f**2, P, S),
    ]
    return terms


def _evaluate_terms(grid, terms, track0, track1):
    cells = [grid.at_cells(track0), grid.at_cells(track1)]
    parts = {"gradient": 0.0, "anisotropic": 0.0, "potential": 0.0}
    w = grid.cell_weights
    for t in terms:
        a = cells[t.a[0]][int(t.a[1])]
        b = cells[t.b[0]][int(t.b[1])]
        parts[t.part] += float(np.sum(w * t.coef * a * b))
    total = parts["gradient"] + parts["anisotropic"] + parts["potential"]
    return FormBreakdown(total, parts["gradient"], parts["anisotropic"], parts["potential"])


def eval_Q0(p, delta, u, v):
    """Q0^delta[u + i v] for real nodal tracks u, v."""
    _check_profile(p)
    FormParams(delta, 0)
    u, v = _pair(p, u, v)
    return _evaluate_terms(p.grid, q0_terms(p, delta), u, v)


def eval_Qn(p, params, pair):
    """Q_n^delta[phi, psi] for a real pair and n >= 1."""
    _check_profile(p)
    if params.n == 0:
        raise ParameterError("n = 0 is the scalar form: use eval_Q0")
    phi, psi = _pair(p, *pair)
    return _evaluate_terms(p.grid, qn_terms(p, params.delta, params.n), phi, psi)


def eval_A0(p, u, v):
    return eval_Q0(p, 0.0, u, v).total


def eval_A1(p, pair):
    return eval_Qn(p, FormParams(0.0, 1), pair).total


def kernel_pair(p):
    """Nodal (f0' - f0/r, f0' + f0/r): the mode-1 image of the translations."""
    r = p.grid.nodes
    return ModePair(p.df - p.f / r, p.df + p.f / r)


def substituted_pair(p, zeta, eta):
    """(f0' zeta - f0 eta / r, f0' zeta + f0 eta / r) on the nodes."""
    zeta, eta = _pair(p, zeta, eta)
    r = p.grid.nodes
    return ModePair(p.df * zeta - p.f * eta / r, p.df * zeta + p.f * eta / r)


def eval_Bn_direct(p, params, zeta, eta):
    """B_n^delta[zeta, eta] = Q_n^delta of the substituted pair, halved."""
    return 0.5 * eval_Qn(p, params, substituted_pair(p, zeta, eta)).total


@dataclass(frozen=True)
class BnSplit:
    total: float
    B1: float
    B2: float
    n: int

    @property
    def split_gap(self):
        return abs(self.total - (self.B1 + (self.n - 1) * self.B2))


def qn_coeffs(delta, n, r, p):
    """Coefficients (a_n, b_n, c(r)) of q_n^delta(r)[X, Y] = a X^2 + b Y^2 + 2 c X Y.

    Returns ``(a_n, b_n, c, interpolated)``; ``interpolated`` is True when r
    is not a grid node and f0'/f0 had to be interpolated.
    """
    if not delta > -1:
        raise ParameterError("delta must exceed -1")
    if int(n) != n or n < 2:
        raise ParameterError("q_n is defined for n >= 2")
    a_n = (1 - delta) * (n + 1) - 4 * delta**2 * (n - 1) / (1 + delta)
    b_n = (1 + delta) * (n + 1)
    nodes = p.grid.nodes
    hit = np.flatnonzero(np.isclose(nodes, r, rtol=1e-14, atol=0))
    if hit.size:
        i = hit[0]
        f, df = p.f[i], p.df[i]
        interpolated = False
    else:
        f, df = (x[0] for x in p.evaluate(r))
        interpolated = True
    c = -2 - 2 * delta * (1 - r * df / f)
    return a_n, b_n, c, interpolated


def eval_Bn_formula(p, params, zeta, eta):
    """B_n^delta from its expanded four-integral expression and its split.

    ``total`` is the expanded form; ``B1`` keeps the completed square and
    ``B2`` integrates q_n^delta(r)[f0' zeta / r, f0 eta / r^2].
    """
    _check_profile(p)
    delta, n = params.delta, params.n
    if n < 1:
        raise ParameterError("B_n is defined for n >= 1")
    zeta, eta = _pair(p, zeta, eta)
    g = p.grid
    r = g.centers
    w = g.cell_weights
    f, df, ddf = p.at_cells()
    z, dz = g.at_cells(zeta)
    e, de = g.at_cells(eta)

    def integral(x):
        return float(np.sum(w * x))

    square = df / r * (e - z) + f / r * de
    first = (1 + delta) * integral(f**2 / r**2 * de**2 + df**2 * dz**2 + 2 / r**3 * f * df * (e - z) ** 2)
    second = -2 * delta * integral(square**2)
    A = f * e / r  # f0 eta / r
    B = df * z  # f0' zeta
    dA = df * e / r + f * de / r - f * e / r**2
    dB = ddf * z + df * dz
    third = (n - 1) * integral(
        (1 - delta) * (n + 1) / r**2 * B**2 + (1 + delta) * (n + 1) / r**2 * A**2 - 4 / r**2 * B * A
    )
    fourth = 2 * delta * (n - 1) * integral((dA * B - dB * A) / r)
    total = first + second + third + fourth

    completed = f / r * de + 2 * delta / (1 + delta) * (n - 1) * df * z / r
    B1 = (1 + delta) * integral(completed**2 + df**2 * dz**2) + 2 * integral(
        (1 + delta) * df * f / r * (e - z) ** 2 / r**2 - delta * square**2
    )
    X = df * z / r
    Y = f * e / r**2
    a_n = (1 - delta) * (n + 1) - 4 * delta**2 * (n - 1) / (1 + delta)
    b_n = (1 + delta) * (n + 1)
    c = -2 - 2 * delta * (1 - r * df / f)
    B2 = integral(a_n * X**2 + b_n * Y**2 + 2 * c * X * Y)
    return BnSplit(total, B1, B2, n)


def h1_norm_sq(p, phi, psi):
    """Energy-space norm of a pair: the integral of
    phi'^2 + psi'^2 + (phi^2 + psi^2)/r^2 + (phi + psi)^2 against r dr."""
    phi, psi = _pair(p, phi, psi)
    g = p.grid
    a, da = g.at_cells(phi)
    b, db = g.at_cells(psi)
    r = g.centers
    return g.cell_integrate(da**2 + db**2 + (a**2 + b**2) / r**2 + (a + b) ** 2)


def h0_norm_sq(p, u, v):
    u, v = _pair(p, u, v)
    g = p.grid
    a, da = g.at_cells(u)
    b, db = g.at_cells(v)
    r = g.centers
    return g.cell_integrate(da**2 + db**2 + (a**2 + b**2) / r**2 + a**2)


@dataclass(frozen=True)
class IdentityCheck:
    identity: str
    delta: float
    n: int
    lhs: float
    rhs: float
    scale: float

    @property
    def gap(self):
        return abs(self.lhs - self.rhs)

    @property
    def relative_gap(self):
        return self.gap / self.scale if self.scale > 0 else self.gap

    def as_dict(self):
        return {
            "identity": self.identity,
            "delta": self.delta,
            "n": self.n,
            "gap": self.gap,
            "relative_gap": self.relative_gap,
        }


def identity_check(p, delta, n, inputs, which):
    """Both sides of one of the identities, evaluated by quadrature.

    ``inputs`` is a pair of nodal arrays whose meaning depends on ``which``:

    * ``Q0_A0``: (Re phi, Im phi) for Q0^delta against A0 of its parts
    * ``Q1_A1``: (phi, psi) for Q1^delta - (1+delta) A1
    * ``Qn_Q1``: (phi, psi) for Q_n^delta - Q_1^delta, n >= 2
    * ``A0_dec``: (Re chi, Im chi) for A0[f0 chi]
    * ``A1_dec``: (zeta, eta) for A1 of the substituted pair

    Boundary terms of the underlying integrations by parts are not added
    back; they vanish for endpoint-vanishing inputs.  ``scale`` is the
    squared energy norm of the input, used to report relative gaps.
    """
    _check_profile(p)
    if which not in IDENTITIES:
        raise ParameterError(f"unknown identity {which!r}; expected one of {IDENTITIES}")
    if len(inputs) != 2:
        raise ParameterError("identity inputs are a pair of real nodal arrays")
    x, y = _pair(p, *inputs)
    g = p.grid
    r = g.centers
    f, df, _ = p.at_cells()

    if which == "Q0_A0":
        lhs = eval_Q0(p, delta, x, y).total
        v = g.cell_interp @ y
        rhs = (
            (1 + delta) * eval_A0(p, x, np.zeros_like(y))
            + (1 - delta) * eval_A0(p, np.zeros_like(x), y)
            - 2 * delta * g.cell_integrate((1 - f**2) * v**2)
        )
        scale = h0_norm_sq(p, x, y)
        n_used = 0
    elif which == "Q1_A1":
        lhs = eval_Qn(p, FormParams(delta, 1), (x, y)).total - (1 + delta) * eval_A1(p, (x, y))
        a, da = g.at_cells(x)
        _, db = g.at_cells(y)
        rhs = -delta * g.cell_integrate((da + 2 * a / r - db) ** 2)
        scale = h1_norm_sq(p, x, y)
        n_used = 1
    elif which == "Qn_Q1":
        if n < 2:
            raise ParameterError("Qn_Q1 needs n >= 2")
        lhs = eval_Qn(p, FormParams(delta, n), (x, y)).total - eval_Qn(p, FormParams(delta, 1), (x, y)).total
        a, da = g.at_cells(x)
        b, db = g.at_cells(y)
        rhs = (n - 1) * g.cell_integrate(
            (n + 3) / r**2 * a**2
            + (n - 1) / r**2 * b**2
            - 2 * delta * (n + 1) / r**2 * a * b
            + 2 * delta / r * (a * db - da * b)
        )
        scale = h1_norm_sq(p, x, y)
        n_used = n
    elif which == "A0_dec":
        fn = p.f
        lhs = eval_A0(p, fn * x, fn * y)
        a, da = g.at_cells(x)
        _, db = g.at_cells(y)
        rhs = g.cell_integrate(f**2 * (da**2 + db**2) + 2 * f**4 * a**2)
        scale = h0_norm_sq(p, fn * x, fn * y)
        n_used = 0
    else:  # A1_dec
        pair = substituted_pair(p, x, y)
        lhs = eval_A1(p, pair)
        z, dz = g.at_cells(x)
        e, de = g.at_cells(y)
        rhs = 2 * g.cell_integrate(f**2 / r**2 * de**2 + df**2 * dz**2 + 2 / r**3 * f * df * (e - z) ** 2)
        scale = h1_norm_sq(p, *pair)
        n_used = 1
    return IdentityCheck(which, float(delta), int(n_used), float(lhs), float(rhs), float(scale))


def identity_gap(p, delta, n, inputs, which):
    """Absolute difference of the two sides of identity ``which``."""
    return identity_check(p, delta, n, inputs, which).gap


def export_identity_checks(checks, path):
    with open(path, "w") as fh:
        json.dump([c.as_dict() for c in checks], fh, indent=2, sort_keys=True)
        fh.write("\n")


def eval_full2d(p, delta, modes, n_theta=None):
    """Q^delta[v] by 2D quadrature for v = e^{i theta} sum_n w_n(r) e^{i n theta}.

    ``modes`` maps n >= 0 to a pair (w_n, w_{-n}) of complex nodal arrays;
    for n = 0 a single array (or a pair whose second entry is ignored).
    Radial quadrature is the cell rule of the grid, angular quadrature the
    trapezoid rule on ``n_theta`` equispaced angles.
    """
    _check_profile(p)
    FormParams(delta, 0)
    g = p.grid
    coeffs = {}
    for n, w in modes.items():
        if int(n) != n or n < 0:
            raise ParameterError("mode keys are non-negative integers")
        if n == 0:
            w0 = w[0] if isinstance(w, (tuple, list)) else w
            coeffs[0] = np.asarray(w0, dtype=complex)
        else:
            coeffs[n] = np.asarray(w[0], dtype=complex)
            coeffs[-n] = np.asarray(w[1], dtype=complex)
    n_max = max((abs(k) for k in coeffs), default=0)
    needed = 8 * n_max + 16
    if n_theta is None:
        n_theta = needed
    elif n_theta < needed:
        raise ParameterError(f"n_theta = {n_theta} is below the {needed} angles needed for |n| <= {n_max}")
    if not coeffs:
        return 0.0

    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    r = g.centers[:, None]
    shape = (g.n_cells, n_theta)
    v = np.zeros(shape, complex)
    v_r = np.zeros(shape, complex)
    v_t = np.zeros(shape, complex)
    for k, w in coeffs.items():
        val = g.cell_interp @ w.real + 1j * (g.cell_interp @ w.imag)
        der = g.cell_deriv @ w.real + 1j * (g.cell_deriv @ w.imag)
        phase = np.exp(1j * (1 + k) * theta)[None, :]
        v += val[:, None] * phase
        v_r += der[:, None] * phase
        v_t += 1j * (1 + k) * val[:, None] * phase
    e = np.exp(1j * theta)[None, :]
    f = p.at_cells()[0][:, None]
    grad_sq = np.abs(v_r) ** 2 + np.abs(v_t) ** 2 / r**2
    # d_eta = e^{i theta} d_r + i e^{i theta} d_theta / r
    deta_vbar = e * np.conj(v_r) + 1j * e * np.conj(v_t) / r
    radial_dot = np.real(e * np.conj(v))
    integrand = (
        grad_sq
        + delta * np.real(deta_vbar**2)
        + (1 + delta) * (2 * f**2 * radial_dot**2 - (1 - f**2) * np.abs(v) ** 2)
    )
    dtheta = 2 * np.pi / n_theta
    return float(np.sum(g.cell_weights[:, None] * integrand) * dtheta)


def eval_modes_sum(p, delta, modes):
    """2 pi times the sum of mode forms, complex tracks split into real ones."""
    total = 0.0
    for n, w in modes.items():
        if n == 0:
            w0 = np.asarray(w[0] if isinstance(w, (tuple, list)) else w, dtype=complex)
            total += eval_Q0(p, delta, w0.real, w0.imag).total
        else:
            wp = np.asarray(w[0], dtype=complex)
            wm = np.asarray(w[1], dtype=complex)
            params = FormParams(delta, n)
            total += eval_Qn(p, params, (wp.real, wm.real)).total
            total += eval_Qn(p, params, (wp.imag, -wm.imag)).total
    return 2 * np.pi * total


def pointwise_anisotropy_identity(u1, u2, x, y):
    """Largest defects of the two pointwise identities

        Re (d_eta conj u)^2 = (div u)^2 - (curl u)^2
        |grad u|^2 = (div u)^2 + (curl u)^2 - 2 det(grad u)

    for a planar field (u1, u2) sampled on the tensor grid x by y, with
    centred finite-difference gradients.  The first identity is evaluated
    with the complex Wirtinger-type derivative d_eta = d_x + i d_y applied
    to conj(u) = u1 - i u2.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    dx = np.gradient(u1, x, y, edge_order=2)
    dy = np.gradient(u2, x, y, edge_order=2)
    a, b = dx  # d u1/dx, d u1/dy
    c, d = dy  # d u2/dx, d u2/dy
    ubar = u1 - 1j * u2
    gx, gy = np.gradient(ubar, x, y, edge_order=2)
    deta = gx + 1j * gy
    div = a + d
    curl = c - b
    det = a * d - b * c
    inner = (slice(1, -1), slice(1, -1))
    d1 = np.real(deta**2) - (div**2 - curl**2)
    d2 = (a**2 + b**2 + c**2 + d**2) - (div**2 + curl**2 - 2 * det)
    return float(max(np.max(np.abs(d1[inner])), np.max(np.abs(d2[inner]))))


def bump(grid, lo, hi):
    """Smooth bump exp(-1/(1 - x^2)) in ln r supported on [lo, hi]."""
    s = np.log(grid.nodes)
    x = (2 * s - np.log(lo) - np.log(hi)) / (np.log(hi) - np.log(lo))
    out = np.zeros_like(s)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1 / (1 - x[inside] ** 2))
    return out


def random_test_function(grid, rng, lo=None, hi=None, modes=3):
    """Random smooth function with compact support inside [lo, hi].

    A bump on a random sub-interval (log scale) times a random
    trigonometric polynomial; endpoint values are exactly zero.
    """
    lo = 2 * grid.r_min if lo is None else lo
    hi = grid.r_max / 2 if hi is None else hi
    a, b = np.sort(np.exp(rng.uniform(np.log(lo), np.log(hi), size=2)))
    if np.log(b / a) < 0.2 * np.log(hi / lo):
        a, b = lo, hi
    s = np.log(grid.nodes)
    x = (s - np.log(a)) / np.log(b / a)
    poly = rng.normal() + sum(
        rng.normal() * np.sin(k * np.pi * x + rng.uniform(0, 2 * np.pi)) for k in range(1, modes + 1)
    )
    out = bump(grid, a, b) * poly
    out[0] = out[-1] = 0.0
    return out
