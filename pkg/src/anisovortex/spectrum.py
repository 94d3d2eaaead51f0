"""Matrix pencils for the mode forms, their lowest eigenvalues, stability
verdicts and the bisection for the critical anisotropy.

The stiffness matrix of mode n is the Gram matrix of the cell-term table of
:mod:`anisovortex.forms` in the nodal basis, so ``x @ S @ x`` equals the
form evaluated on the expanded pair.  The two tracks are interleaved
(unknown ``2 i + track``), which keeps the matrices banded.  The mass is the
diagonal nodal quadrature of (phi^2 + psi^2) r dr.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from anisovortex.errors import ConvergenceError, ParameterError
from anisovortex.forms import FormParams, ModePair, kernel_pair, q0_terms, qn_terms

log = logging.getLogger(__name__)

CRITICAL_DELTA = -1 / math.sqrt(5)


@dataclass(frozen=True, eq=False)
class ModeOperator:
    n: int
    delta: float
    stiffness: sp.csr_matrix = field(repr=False)
    mass: np.ndarray = field(repr=False)  # diagonal
    free: np.ndarray = field(repr=False)  # retained interleaved unknowns
    grid: object = field(repr=False)

    @property
    def size(self):
        return len(self.free)

    @property
    def mass_matrix(self):
        return sp.diags(self.mass)

    def expand(self, x):
        """Coefficient vector -> nodal pair (eliminated values are zero)."""
        full = np.zeros(2 * self.grid.n_nodes)
        full[self.free] = x
        return ModePair(full[0::2].copy(), full[1::2].copy())

    def restrict(self, pair):
        phi, psi = pair
        full = np.empty(2 * self.grid.n_nodes)
        full[0::2] = phi
        full[1::2] = psi
        return full[self.free]

    def quadratic(self, x):
        return float(x @ (self.stiffness @ x))

    def rayleigh(self, x):
        return self.quadratic(x) / float(x @ (self.mass * x))


def _free_unknowns(n_nodes, n):
    keep = np.ones(2 * n_nodes, dtype=bool)
    keep[[-2, -1]] = False  # both tracks vanish at r_max
    keep[0] = False  # first track at r_min
    # the second track carries (1 - n)^2 / r^2, which vanishes for n = 1;
    # the kernel pair is nonzero there, so the value stays free
    if n != 1:
        keep[1] = False
    return np.flatnonzero(keep)


def assemble_mode_operator(p, delta, n):
    """Stiffness/mass pencil of Q_n^delta (Q_0^delta for n = 0) on p's grid."""
    FormParams(delta, n)
    g = p.grid
    terms = q0_terms(p, delta) if n == 0 else qn_terms(p, delta, n)
    ops = (g.cell_interp.tocsc(), g.cell_deriv.tocsc())
    w = g.cell_weights
    blocks = [[None, None], [None, None]]
    for t in terms:
        a = ops[int(t.a[1])]
        b = ops[int(t.b[1])]
        contrib = a.T @ sp.diags(w * t.coef) @ b
        i, j = t.a[0], t.b[0]
        blocks[i][j] = contrib if blocks[i][j] is None else blocks[i][j] + contrib
    N = g.n_nodes
    for i in range(2):
        for j in range(2):
            if blocks[i][j] is None:
                blocks[i][j] = sp.csr_matrix((N, N))
    full = sp.bmat(blocks, format="csr")
    perm = np.empty(2 * N, dtype=int)
    perm[0::2] = np.arange(N)
    perm[1::2] = N + np.arange(N)
    full = full[perm][:, perm]
    full = 0.5 * (full + full.T)
    free = _free_unknowns(N, n)
    stiffness = full[free][:, free].tocsr()
    stiffness.eliminate_zeros()
    mass = np.repeat(g.weights, 2)[free]
    return ModeOperator(int(n), float(delta), stiffness, mass, free, g)


@dataclass(frozen=True, eq=False)
class ModeSpectrum:
    n: int
    delta: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)  # columns, mass-normalised
    residuals: np.ndarray
    kernel_alignment: float | None = None
    deflated: bool = False
    iterations: int = 0

    @property
    def lambda_min(self):
        return float(self.eigenvalues[0])


def _banded_lower(a):
    a = a.tocoo()
    lower = a.row >= a.col
    rows, cols, vals = a.row[lower], a.col[lower], a.data[lower]
    bw = int(np.max(rows - cols)) if rows.size else 0
    ab = np.zeros((bw + 1, a.shape[0]))
    ab[rows - cols, cols] = vals
    return ab


def _mass_orthonormal(Y, m, drop=1e-10):
    """Mass-orthonormal basis of span(Y), dropping numerically dependent directions."""
    scale = np.sqrt(np.sum(m[:, None] * Y**2, axis=0))
    Y = Y / np.where(scale > 0, scale, 1.0)
    for _ in range(2):
        G = Y.T @ (m[:, None] * Y)
        s, U = np.linalg.eigh(0.5 * (G + G.T))
        keep = s > drop * s.max()
        Y = Y @ (U[:, keep] / np.sqrt(s[keep]))
    return Y


class _ShiftedSolver:
    """Banded Cholesky of S - sigma M; only succeeds for sigma below the spectrum."""

    def __init__(self, stiffness_band, mass):
        self.band = stiffness_band
        self.mass = mass

    def factor(self, sigma):
        ab = self.band.copy()
        ab[0] -= sigma * self.mass
        try:
            return sla.cholesky_banded(ab, lower=True, check_finite=False)
        except sla.LinAlgError:
            return None


def min_eigenpairs(op, k=1, tol=1e-8, deflate=None, max_iter=2000, seed=0):
    """The k smallest eigenpairs of the pencil (stiffness, mass).

    Block shift-and-invert subspace iteration with Rayleigh-Ritz.  Shifts
    are only accepted when a banded Cholesky factorisation of S - sigma M
    exists, which certifies sigma < lambda_min; after each sweep the shift
    is pushed up towards the lowest Ritz value (a failed factorisation keeps
    the previous shift).  ``deflate`` is an optional coefficient vector that
    is projected out (mass inner product) of every iterate.

    Residuals of mass-normalised x are measured in the dual norm
    sum_i r_i^2 / (|S_ii| + M_ii): the plain M^-1 norm is dominated by
    roundoff in rows near r_min, where 1/r^2 coefficients meet tiny masses.
    """
    if k < 1:
        raise ParameterError("k must be at least 1")
    if not tol > 0:
        raise ParameterError("tol must be positive")
    S = op.stiffness
    m = op.mass
    size = op.size
    block = min(size, k + 4)
    band = _banded_lower(S)
    solver = _ShiftedSolver(band, m)
    dual = 1.0 / (np.abs(band[0]) + m)

    # Q >= -(1 + delta) * mass for the forms at hand; start safely below it
    sigma = -2.5
    chol = solver.factor(sigma)
    tries = 0
    while chol is None:
        tries += 1
        if tries > 60:
            raise ConvergenceError("no shift below the spectrum found")
        sigma = 2 * sigma - 1.0
        chol = solver.factor(sigma)

    if deflate is not None:
        kvec = np.asarray(deflate, dtype=float)
        kvec = kvec / math.sqrt(kvec @ (m * kvec))
        mk = m * kvec

        def project(Y):
            return Y - np.outer(kvec, mk @ Y)

        def project_residual(R):
            return R - np.outer(mk, kvec @ R)

    else:
        mk = None

        def project(Y):
            return Y

        project_residual = project

    def shifted_inverse(chol, Z):
        # inverse of S - sigma M restricted to the mass-orthogonal
        # complement of the deflation vector (Lagrange multiplier form)
        Y = sla.cho_solve_banded((chol, True), Z, check_finite=False)
        if mk is not None:
            z = sla.cho_solve_banded((chol, True), mk, check_finite=False)
            Y = Y - np.outer(z, mk @ Y) / (mk @ z)
        return Y

    rng = np.random.default_rng(seed)
    X = project(rng.standard_normal((size, block)))
    theta = None
    res = None
    for it in range(1, max_iter + 1):
        Y = shifted_inverse(chol, m[:, None] * X)
        Z = _mass_orthonormal(Y, m)
        while Z.shape[1] < block:
            # the shifted inverse can collapse the block onto the lowest
            # eigenvector; refill with fresh directions
            extra = project(rng.standard_normal((size, block - Z.shape[1])))
            Z = _mass_orthonormal(np.hstack([Z, extra]), m)
        SZ = S @ Z
        A = Z.T @ SZ
        theta, V = np.linalg.eigh(0.5 * (A + A.T))
        Y, SY = Z, SZ
        X = Y @ V
        SX = SY @ V
        R = project_residual(SX - (m[:, None] * X) * theta)
        res = np.sqrt(np.sum(R**2 * dual[:, None], axis=0))
        if np.all(res[:k] <= tol):
            break
        # some eigenvalue lies within the M^-1 residual of theta[0]
        bound = np.sqrt(np.sum(R[:, 0] ** 2 / m))
        gap = theta[1] - theta[0] if block > 1 else abs(theta[0])
        candidate = theta[0] - max(0.05 * gap, bound, 1e-12)
        for _ in range(4):
            if candidate <= sigma:
                break
            new = solver.factor(candidate)
            if new is not None:
                sigma, chol = candidate, new
                break
            candidate = 0.5 * (sigma + candidate)
    else:
        raise ConvergenceError(
            f"eigensolver reached {max_iter} sweeps with residual {res[:k].max():.2e} > {tol:.1e}",
            residual=float(res[:k].max()),
            iterations=max_iter,
        )
    order = np.argsort(theta)[:k]
    return ModeSpectrum(
        op.n,
        op.delta,
        theta[order].copy(),
        X[:, order].copy(),
        res[order].copy(),
        deflated=deflate is not None,
        iterations=it,
    )


def kernel_taper(r, r_max):
    """1 on [0, R/2], cos^2 down to 0 at R."""
    t = np.clip((r - 0.5 * r_max) / (0.5 * r_max), 0.0, 1.0)
    return np.cos(0.5 * np.pi * t) ** 2


def kernel_vector(op, p):
    """The mode-1 kernel pair as a coefficient vector of op.

    The pair decays only like 1/r, so cutting it at r_max by the Dirichlet
    elimination costs O(1/(R h)) in the form; it is tapered smoothly over
    [R/2, R] instead, which leaves O(1/R^2).
    """
    if op.n != 1:
        raise ParameterError("the kernel pair belongs to mode 1")
    kp = kernel_pair(p)
    eta = kernel_taper(p.grid.nodes, p.grid.r_max)
    return op.restrict((kp.phi * eta, kp.psi * eta))


def energy_inner(p, a, b):
    """Energy-space inner product of two nodal pairs (phi, psi)."""
    g = p.grid
    r = g.centers
    (pa, dpa), (sa, dsa) = g.at_cells(a[0]), g.at_cells(a[1])
    (pb, dpb), (sb, dsb) = g.at_cells(b[0]), g.at_cells(b[1])
    return g.cell_integrate(dpa * dpb + dsa * dsb + (pa * pb + sa * sb) / r**2 + (pa + sa) * (pb + sb))


def kernel_alignment(op, p, x):
    """|<v, kernel>| / (|v| |kernel|) in the energy inner product."""
    v = op.expand(x)
    kp = op.expand(kernel_vector(op, p))
    num = abs(energy_inner(p, v, kp))
    return float(num / math.sqrt(energy_inner(p, v, v) * energy_inner(p, kp, kp)))


def mode_spectrum(p, delta, n, k=1, tol=1e-8, deflate_kernel=False):
    """Assemble and solve one mode; mode 1 also reports its kernel alignment."""
    op = assemble_mode_operator(p, delta, n)
    deflate = kernel_vector(op, p) if (n == 1 and deflate_kernel) else None
    spec = min_eigenpairs(op, k=k, tol=tol, deflate=deflate)
    if n == 1:
        align = kernel_alignment(op, p, spec.eigenvectors[:, 0])
        spec = ModeSpectrum(**{**spec.__dict__, "kernel_alignment": align})
    return spec


def sufficient_condition(delta):
    """Pointwise positivity test for q_n^delta used to certify all n >= 2.

    Returns ``(holds, detail)`` with the coefficients (alpha, beta, gamma)
    of the condition and its value 5 - 21 delta^2 at n = 2.
    """
    if not -1 < delta < 1:
        raise ParameterError(f"delta must lie in (-1, 1), got {delta}")
    alpha = 1 - 5 * delta**2
    beta = 2 * (1 - delta**2)
    gamma = -3 * (1 - delta**2)
    n2 = 5 - 21 * delta**2
    holds = CRITICAL_DELTA <= delta <= 0
    return holds, {"alpha": alpha, "beta": beta, "gamma": gamma, "n2_value": n2, "interval": [CRITICAL_DELTA, 0.0]}


# verdict machinery ---------------------------------------------------------

WORKERS_ENV = "ANISOVORTEX_WORKERS"


def worker_count(requested=None):
    """Thread count for mode scans, capped by the environment variable."""
    import os

    n = requested or os.cpu_count() or 1
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ParameterError(f"{WORKERS_ENV} must be an integer, got {cap!r}") from None
    return max(1, n)


@dataclass
class ModeResult:
    n: int
    lambda_min: float | None
    status: str  # positive | negative | error
    evidence: str = ""


@dataclass
class Witness:
    """A stored direction with negative form value at ``delta``."""

    kind: str  # eigenvector | positive_delta | high_mode
    delta: float
    n: int
    value: float
    pair: ModePair = field(repr=False)
    profile: object = field(repr=False)


@dataclass
class StabilityReport:
    delta: float
    modes: list
    verdict: str  # stable | unstable | inconclusive
    n_max_scanned: int
    tail_condition: str  # certified_positive | not_certified
    witnesses: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def mode(self, n):
        for m in self.modes:
            if m.n == n:
                return m
        raise KeyError(n)

    def as_dict(self):
        return {
            "delta": self.delta,
            "verdict": self.verdict,
            "n_max_scanned": self.n_max_scanned,
            "tail_condition": self.tail_condition,
            "modes": [
                {"n": m.n, "lambda_min": m.lambda_min, "status": m.status, "evidence": m.evidence} for m in self.modes
            ],
            "witnesses": [{"kind": w.kind, "n": w.n, "value": w.value} for w in self.witnesses],
            "notes": list(self.notes),
        }


def _scan_mode(p, delta, n, k, tol, sign_tol):
    try:
        spec = mode_spectrum(p, delta, n, k=k, tol=tol, deflate_kernel=(n == 1))
    except ConvergenceError as exc:
        return ModeResult(n, None, "error", str(exc)), None
    lam = spec.lambda_min
    if lam < -sign_tol:
        op = assemble_mode_operator(p, delta, n)
        x = spec.eigenvectors[:, 0]
        return ModeResult(n, lam, "negative", "eigenvector"), Witness(
            "eigenvector", delta, n, op.quadratic(x), op.expand(x), p
        )
    evidence = "kernel deflated" if n == 1 else ""
    return ModeResult(n, lam, "positive", evidence), None


def stability_verdict(p, delta, n_max=64, k=1, tol=1e-8, sign_tol=1e-10, dilation=64, workers=None):
    """Scan the modes at ``delta`` and combine with the explicit witnesses.

    Modes 0 and 1 are always scanned (mode 1 with its kernel deflated);
    modes 2..n_max only when the tail is not certified analytically.  For
    delta > 0 the log-sine witness is evaluated at ``dilation``; for
    delta < -1/sqrt(5) the high-mode construction is tried up to n_max.
    Convergence failures make the verdict inconclusive unless a negative
    witness exists elsewhere.
    """
    from concurrent.futures import ThreadPoolExecutor

    from anisovortex import certificates

    FormParams(delta, 0)
    if n_max < 2:
        raise ParameterError("n_max must be at least 2")
    holds, _ = sufficient_condition(delta)
    tail = "certified_positive" if holds else "not_certified"
    modes_to_scan = [0, 1] if holds else list(range(0, n_max + 1))
    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        results = list(pool.map(lambda n: _scan_mode(p, delta, n, k, tol, sign_tol), modes_to_scan))
    modes = [r for r, _ in results]
    witnesses = [w for _, w in results if w is not None]
    notes = []

    if delta > 0:
        cert = None
        d = int(dilation)
        while cert is None and d >= 1:
            try:
                cert = certificates.positive_delta_certificate(p, delta, d)
            except ParameterError:
                d //= 2
        if cert is None:
            notes.append("log-sine witness support not representable at any dilation")
        elif cert.form_value < 0:
            q = cert.profile
            witnesses.append(
                Witness("positive_delta", delta, 0, cert.form_value, ModePair(np.zeros_like(q.f), q.f * cert.chi.values), q)
            )
            notes.append(f"log-sine witness at dilation {d}: Q0 = {cert.form_value:.6g}")
    elif delta < CRITICAL_DELTA:
        found = certificates.find_unstable_mode(p, delta, n_max)
        if found is None:
            notes.append(f"no high-mode window witness for n <= {n_max}")
        else:
            n, w = found
            pair = ModePair(
                p.df * w.zeta.values - p.f * w.zeta.values / p.grid.nodes,
                p.df * w.zeta.values + p.f * w.zeta.values / p.grid.nodes,
            )
            witnesses.append(Witness("high_mode", delta, n, w.form_value, pair, p))
            notes.append(f"high-mode witness at n = {n}, window {w.window}: B = {w.form_value:.6g}")

    if witnesses:
        verdict = "unstable"
    elif all(m.status == "positive" for m in modes) and holds:
        verdict = "stable"
    else:
        verdict = "inconclusive"
        if any(m.status == "error" for m in modes):
            notes.append("eigensolver failure in at least one mode")
        if not holds:
            notes.append(f"modes n > {n_max} are not certified")
    return StabilityReport(float(delta), modes, verdict, max(modes_to_scan), tail, witnesses, notes)


def witness_value(w, delta):
    """Form value of a stored witness at another delta (the form is affine in delta)."""
    from anisovortex.forms import eval_Q0, eval_Qn

    if w.n == 0:
        return eval_Q0(w.profile, delta, w.pair.phi, w.pair.psi).total
    return eval_Qn(w.profile, FormParams(delta, w.n), w.pair).total


@dataclass
class Delta1Estimate:
    bracket_lo: float
    bracket_hi: float
    probes: list  # StabilityReports in probe order
    inconclusive: bool = False
    inconclusive_deltas: list = field(default_factory=list)
    lo_witnessed: bool = False

    @property
    def width(self):
        return self.bracket_hi - self.bracket_lo

    def as_dict(self):
        return {
            "lo": self.bracket_lo,
            "hi": self.bracket_hi,
            "inconclusive": self.inconclusive,
            "inconclusive_deltas": list(self.inconclusive_deltas),
            "lo_witnessed": self.lo_witnessed,
            "probes": [
                {"delta": r.delta, "verdict": r.verdict, "tail_condition": r.tail_condition} for r in self.probes
            ],
        }


def estimate_delta1(p, width=0.01, n_max=64, **opts):
    """Bisection for the edge of the unstable range inside (-1, -1/sqrt(5)].

    The upper end starts at -1/sqrt(5), where the analytic tail condition
    makes the verdict rigorous.  Unstable probes move the lower end up.
    Inconclusive probes (all scanned modes positive, tail not certified)
    move the upper end down and are flagged: the bracket is then only
    valid for perturbations in modes n <= n_max.  When no probe is unstable
    the lower end stays at -1 with ``lo_witnessed`` False.
    """
    if not width >= 1e-3:
        raise ParameterError("width must be at least 1e-3")
    lo, hi = -1.0, CRITICAL_DELTA
    probes = [stability_verdict(p, hi, n_max=n_max, **opts)]
    flagged = []
    lo_witnessed = False
    if probes[0].verdict == "unstable":
        raise ConvergenceError("the certified end of the bracket reports unstable")
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        rep = stability_verdict(p, mid, n_max=n_max, **opts)
        probes.append(rep)
        if rep.verdict == "unstable":
            lo, lo_witnessed = mid, True
        else:
            if rep.verdict == "inconclusive":
                flagged.append(mid)
            hi = mid
    return Delta1Estimate(lo, hi, probes, bool(flagged), flagged, lo_witnessed)


def verdicts_monotone(estimate):
    """True if no unstable probe lies above a probe that is not unstable."""
    unstable = [r.delta for r in estimate.probes if r.verdict == "unstable"]
    other = [r.delta for r in estimate.probes if r.verdict != "unstable"]
    return not unstable or not other or max(unstable) < min(other)


def export_delta1(estimate, path, header=None):
    data = estimate.as_dict()
    if header:
        data = {"config": header, **data}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


DIAGRAM_COLUMNS = ("delta", "n", "lambda_min", "verdict", "tail_condition")


def diagram_rows(reports):
    rows = []
    for rep in reports:
        for m in rep.modes:
            lam = "" if m.lambda_min is None else f"{m.lambda_min:.12e}"
            rows.append((f"{rep.delta:.12g}", str(m.n), lam, rep.verdict, rep.tail_condition))
    return rows


def export_diagram(reports, path, header_lines=()):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(DIAGRAM_COLUMNS) + "\n")
        for row in diagram_rows(reports):
            fh.write(",".join(row) + "\n")
