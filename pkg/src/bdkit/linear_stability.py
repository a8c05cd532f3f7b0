"""Linearization around the zero-flux equilibrium and the spectral-gap test.

With Theta_i = Q_i z^i and C_i = Theta_i (1 + h_i), the linear part of the
fluctuation dynamics splits as L = S + P where, for compactly supported test
sequences phi,

    sum_i S_i(h) Theta_i phi_i = sum_k (phi_{k+1} - phi_k - phi_1) W_k(h),
    W_k(h) = a_k Theta_1 Theta_k (h_k + h_1 - h_{k+1}),
    sum_i P_i(h) Theta_i phi_i = -phi_1 (a_1 Theta_1^2 h_2
                                        + sum_i a_i Theta_1 Theta_i h_{i+1}).

S is symmetric and dissipative in l^2(Theta). A lower bound 1/(4 D) on its
gap, compared with an upper bound on the norm of P, gives the sufficient
condition

    4 D ||P||_bound < 1,   ||P||_bound = (2 b / sqrt(z)) sqrt(sum i^(2 beta) Theta_i),
    D = sup_k (sum_{j>k} Theta_j) (sum_{j<=k} 1 / (a_j Theta_j)),

where b_i <= b i^beta. Matrices are truncated at size N; the truncated S
keeps the exchanges W_1 .. W_{N-1} only, so it stays symmetric and
dissipative, and its kernel is the mass direction h_i = i.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .equilibria import solve_monomer_equilibrium
from .errors import BDError, DivergentSeriesError
from .kinetics import AffineRule, ConstantRule, DetailedBalance, PowerRule
from .series import DEFAULT_TOL, sum_log_series

logger = logging.getLogger(__name__)

DEFAULT_N = 256
DENSE_LIMIT = 512
D_WINDOW = 32


class SpectralEstimateError(BDError):
    """The iterative eigenvalue estimate did not converge."""


@dataclass
class LinearizationContext:
    """Equilibrium data needed by the linearized operator.

    Attributes
    ----------
    db : DetailedBalance
    z : float
        Equilibrium monomer density, 0 < z < z_s.
    N : int
        Truncation size of the assembled matrices.
    log_theta : numpy.ndarray
        log Theta_i for i = 1..N + 1.
    a, b : numpy.ndarray
        Rates a_i, b_i for i = 1..N + 1.
    sigma : numpy.ndarray
        sigma_1 = 3 a_1 z + sum_{i>=1} a_i Theta_i and sigma_i = a_i z + b_i.
    """

    db: DetailedBalance
    z: float
    N: int
    log_theta: np.ndarray
    a: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    aTheta_sum: float = 0.0

    def log_theta_range(self, start: int, stop: int) -> np.ndarray:
        """log Theta_i for i = start..stop-1 (any range, not only up to N)."""
        i = np.arange(start, stop)
        return np.asarray(self.db.log_q(i), dtype=float) + i * math.log(self.z)


def _a_theta_series(db: DetailedBalance, z: float, tol: float):
    logz = math.log(z)
    model = db.model

    def log_terms(start, stop):
        i = np.arange(start + 1, stop + 1)
        db.ensure(stop)
        with np.errstate(divide="ignore"):
            return np.log(model.a(i)) + db._cum64[start:stop] + i * logz

    return sum_log_series(log_terms, tol=tol)


def build_context(db: DetailedBalance, z: Optional[float] = None, lam: Optional[float] = None, N: int = DEFAULT_N, tol: float = DEFAULT_TOL) -> LinearizationContext:
    """Build a :class:`LinearizationContext` from ``z`` or from ``lam``.

    Raises
    ------
    DivergentSeriesError
        If z >= z_s, where the equilibrium has infinite density.
    """
    if z is None:
        lam = db.model.lam if lam is None else lam
        z = solve_monomer_equilibrium(db, lam)
    if not z > 0:
        raise ValueError("the linearization needs z > 0")
    if N < 2:
        raise ValueError("N must be at least 2")
    zs = db.z_s
    if z >= zs:
        raise DivergentSeriesError(f"z = {z} is not below z_s = {zs}")
    res = _a_theta_series(db, z, tol)
    if not res.converged:
        raise DivergentSeriesError(f"sum a_i Theta_i not summable at z = {z} ({res.status})")
    i = np.arange(1, N + 2)
    a = db.model.a(i)
    b = db.model.b(i)
    log_theta = np.asarray(db.log_q(i), dtype=float) + i * math.log(z)
    sigma = a[:N] * z + b[:N]
    sigma[0] = 3.0 * a[0] * z + res.value
    return LinearizationContext(db, float(z), int(N), log_theta, a, b, sigma, res.value)


# ---------------------------------------------------------------------------
# D and the norm bound on P
# ---------------------------------------------------------------------------


def _log_tail_beyond(ctx: LinearizationContext, m: int, tol: float) -> float:
    """log sum_{j>m} Theta_j, summed adaptively in relative terms."""
    lt0 = float(ctx.log_theta_range(m + 1, m + 2)[0])
    if not np.isfinite(lt0):
        return -math.inf

    def log_terms(start, stop):
        return ctx.log_theta_range(m + 1 + start, m + 1 + stop) - lt0

    res = sum_log_series(log_terms, tol=tol, index_offset=m + 1)
    if not res.converged:
        raise DivergentSeriesError(f"sum of Theta_j beyond {m} is {res.status}")
    return lt0 + math.log(res.value)


def d_products(ctx: LinearizationContext, k_max: int, tol: float = DEFAULT_TOL) -> np.ndarray:
    """The products (sum_{j>k} Theta_j)(sum_{j<=k} 1/(a_j Theta_j)) for k = 1..k_max."""
    lt = ctx.log_theta_range(1, k_max + 1)
    la = np.log(ctx.db.model.a(np.arange(1, k_max + 1)))
    head = np.logaddexp.accumulate(-(la + lt))
    beyond = _log_tail_beyond(ctx, k_max, tol)
    # tail_k = sum_{j=k+1}^{k_max} Theta_j + beyond, accumulated from the right
    tail = np.empty(k_max)
    tail[-1] = beyond
    rev = lt[:0:-1]  # Theta_{k_max} .. Theta_2
    acc = np.logaddexp.accumulate(np.concatenate([[beyond], rev]))
    tail[:] = acc[::-1]
    return np.exp(head + tail)


def compute_D(ctx: LinearizationContext, tol: float = DEFAULT_TOL, k_start: int = 256, k_limit: int = 2**20) -> float:
    """D = sup_k (sum_{j>k} Theta_j)(sum_{j<=k} 1/(a_j Theta_j)).

    The products are computed in log space for k = 1..k_max; k_max doubles
    until the last 32 products either agree to relative ``1e3 * tol`` or
    decrease strictly, after which the maximum is returned.

    Raises
    ------
    DivergentSeriesError
        If z >= z_s or a tail is not summable.
    """
    if ctx.z >= ctx.db.z_s:
        raise DivergentSeriesError("D is infinite for z >= z_s")
    k_max = k_start
    while True:
        p = d_products(ctx, k_max, tol)
        last = p[-D_WINDOW - 1 :]
        spread = (last.max() - last.min()) / last.max()
        decreasing = bool(np.all(np.diff(last) < 0))
        if spread < 1e3 * tol or decreasing:
            return float(p.max())
        if k_max >= k_limit:
            raise DivergentSeriesError(f"D did not settle by k = {k_max} (spread {spread:.2e})")
        k_max *= 2


def power_theta_sum(ctx: LinearizationContext, beta: float, tol: float = DEFAULT_TOL) -> float:
    """sum_{i>=1} i^(2 beta) Theta_i."""
    logz = math.log(ctx.z)
    db = ctx.db

    def log_terms(start, stop):
        i = np.arange(start + 1, stop + 1)
        db.ensure(stop)
        return 2.0 * beta * np.log(i) + db._cum64[start:stop] + i * logz

    res = sum_log_series(log_terms, tol=tol)
    if not res.converged:
        raise DivergentSeriesError(f"sum i^(2 beta) Theta_i is {res.status} at z = {ctx.z}")
    return res.value


def frag_growth_constants(model, probe: int = 4096):
    """Constants (b, beta) with b_i <= b i^beta for the parametric rules.

    Constant and power rules give their own parameters. For an affine rule
    c + d i^beta the smallest valid b is max(c, 0) + d. Tables use the
    supremum of b_i / i^beta over the probe range with the tail exponent.
    """
    rule = model.frag
    if isinstance(rule, ConstantRule):
        return float(rule.a), 0.0
    if isinstance(rule, PowerRule):
        return float(rule.a), float(rule.alpha)
    if isinstance(rule, AffineRule):
        return max(float(rule.c), 0.0) + float(rule.d), float(rule.beta)
    _, beta = rule.asymptote()
    beta = max(beta, 0.0)
    i = np.arange(1, probe + 1, dtype=float)
    return float(np.max(model.b(i) / i**beta)), float(beta)


def p_norm_bound(ctx: LinearizationContext, b: Optional[float] = None, beta: Optional[float] = None, tol: float = DEFAULT_TOL) -> float:
    """(2 b / sqrt(z)) sqrt(sum i^(2 beta) Theta_i), an upper bound on ||P||."""
    if b is None or beta is None:
        b0, beta0 = frag_growth_constants(ctx.db.model)
        b = b0 if b is None else b
        beta = beta0 if beta is None else beta
    return 2.0 * b / math.sqrt(ctx.z) * math.sqrt(power_theta_sum(ctx, beta, tol))


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def constant_rule_lhs(z: float, z_s: float) -> float:
    """Left side of the gap condition for a_i = a, b_i = b: 8 z z_s^(5/2) / (z_s - z)^(5/2)."""
    return 8.0 * z * z_s**2.5 / (z_s - z) ** 2.5


def constant_rule_D(z: float, z_s: float, a: float) -> float:
    """D = z z_s / (a (z_s - z)^2) for constant rates."""
    return z * z_s / (a * (z_s - z) ** 2)


def linear_rule_lhs(z: float, z_s: float, k_max: Optional[int] = None) -> float:
    """Exact left side of the gap condition for a_i = a i, b_i = b i.

    Here Theta_j = z_s (z / z_s)^j / j, so that
    sum_{j>k} Theta_j = I_k = int_0^z (x / z_s)^k / (1 - x / z_s) dx,
    sum_j j^2 Theta_j = z z_s^2 / (z_s - z)^2, and the left side equals
    8 z_s^2 / (z_s - z) times sup_k I_k ((z_s / z)^k - 1) / (z_s - z).
    """
    r = z / z_s
    if k_max is None:
        k_max = max(64, int(40.0 / max(-math.log(r), 1e-3)))

    def product(k):
        # I_k (z_s/z)^k - I_k as one integral of (x/z)^k - (x/z_s)^k
        val, _ = integrate.quad(lambda x: ((x / z) ** k - (x / z_s) ** k) / (1.0 - x / z_s), 0.0, z, epsabs=0.0, epsrel=1e-13, limit=200)
        return val / (z_s - z)

    best = max(product(k) for k in range(1, k_max + 1))
    return 8.0 * z_s**2 / (z_s - z) * best


def linear_rule_bound(z: float, z_s: float) -> float:
    """Upper bound 32 z z_s / (z_s - z) on :func:`linear_rule_lhs`, valid for z < z_s / 2.

    It follows from 1 / (1 - x / z_s) <= 2, 1 / (z_s - z) <= 2 / z_s and
    ((z_s / z)^k - 1) <= (z_s / z)^k; for z_s = 1 it reads 32 z / (1 - z).
    """
    if not z < 0.5 * z_s:
        raise ValueError("the simplified bound needs z < z_s / 2")
    return 32.0 * z * z_s / (z_s - z)


def gap_lower_bound(ctx: LinearizationContext, tol: float = DEFAULT_TOL) -> float:
    """Hardy-type lower bound z / (4 D) on the gap of the truncated S.

    The Dirichlet form of S weights the exchange k by a_k Theta_1 Theta_k =
    z a_k Theta_k, so the Hardy constant of the weighted l^2 problem is D / z.
    """
    return ctx.z / (4.0 * compute_D(ctx, tol))


def closed_form_kind(model) -> Optional[str]:
    """``"constant"`` or ``"linear"`` when the model admits a closed form."""
    ca, cb = model.coag, model.frag
    if isinstance(ca, ConstantRule) and isinstance(cb, ConstantRule):
        return "constant"
    if isinstance(ca, PowerRule) and isinstance(cb, PowerRule) and ca.alpha == 1.0 and cb.alpha == 1.0:
        return "linear"
    return None


def closed_form_lhs(ctx: LinearizationContext) -> Optional[float]:
    kind = closed_form_kind(ctx.db.model)
    zs = ctx.db.z_s
    if kind == "constant":
        return constant_rule_lhs(ctx.z, zs)
    if kind == "linear":
        return linear_rule_lhs(ctx.z, zs)
    return None


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------


def _frame_vectors(ctx: LinearizationContext, N: int):
    """Components of w_k = Theta^(-1/2) sqrt(c_k) g_k, c_k = a_k Theta_1 Theta_k.

    w_k has entry sqrt(a_k Theta_k) (doubled for k = 1) at index 1,
    sqrt(a_k z) at index k (k >= 2) and -sqrt(b_{k+1}) at index k + 1.
    """
    k = np.arange(1, N)
    a, b = ctx.a, ctx.b
    first = np.exp(0.5 * (np.log(a[: N - 1]) + ctx.log_theta[: N - 1]))
    first[0] *= 2.0
    diag = np.sqrt(a[: N - 1] * ctx.z)
    diag[0] = 0.0
    nxt = -np.sqrt(b[1:N])
    return k, first, diag, nxt


def assemble_S_symmetric(ctx: LinearizationContext, N: Optional[int] = None) -> np.ndarray:
    """Theta^(1/2) S Theta^(-1/2), a symmetric negative semidefinite matrix."""
    N = ctx.N if N is None else N
    _check_N(ctx, N)
    T = np.zeros((N, N))
    for k, f, d, x in zip(*_frame_vectors(ctx, N)):
        w = np.zeros(N)
        w[0] += f
        if k > 1:
            w[k - 1] += d
        w[k] += x
        nz = np.nonzero(w)[0]
        T[np.ix_(nz, nz)] -= np.outer(w[nz], w[nz])
    return T


def assemble_S(ctx: LinearizationContext, N: Optional[int] = None) -> np.ndarray:
    """Matrix of the truncated S acting on h_1..h_N.

    Row 1 collects -(1/Theta_1)(W_1 + sum_k W_k); row i >= 2 is
    (W_{i-1} - W_i) / Theta_i, with W_N dropped. Entries are formed from
    a_i Theta_i, a_i z and b_i so that no Theta ratio is ever exponentiated.
    """
    N = ctx.N if N is None else N
    _check_N(ctx, N)
    a, b, z = ctx.a, ctx.b, ctx.z
    aT = np.exp(np.log(a[:N]) + ctx.log_theta[:N])  # a_k Theta_k
    S = np.zeros((N, N))
    # exchange k contributes c_k g_k g_k^T; row i of S is -(1/Theta_i) (G h)_i
    for k in range(1, N):
        # components of g_k: +1 at k, +1 at 1, -1 at k+1 (g_1 = 2 e_1 - e_2)
        g = {0: 1.0, k - 1: 1.0} if k > 1 else {0: 2.0}
        g[k] = -1.0
        # c_k / Theta_i for the three possible rows
        scale = {0: aT[k - 1], k - 1: a[k - 1] * z, k: b[k]}
        for i, gi in g.items():
            for j, gj in g.items():
                S[i, j] -= scale[i] * gi * gj
    return S


def assemble_P(ctx: LinearizationContext, N: Optional[int] = None) -> np.ndarray:
    """Matrix of the truncated P: only row 1 is non-zero.

    P_{1, j+1} = -(a_j Theta_j + [j = 1] a_1 Theta_1) for j + 1 <= N.
    """
    N = ctx.N if N is None else N
    _check_N(ctx, N)
    aT = np.exp(np.log(ctx.a[: N - 1]) + ctx.log_theta[: N - 1])
    P = np.zeros((N, N))
    P[0, 1:] = -aT
    P[0, 1] -= aT[0]
    return P


def assemble_P_symmetric(ctx: LinearizationContext, N: Optional[int] = None) -> np.ndarray:
    """Theta^(1/2) P Theta^(-1/2); its spectral norm is the l^2(Theta) norm of P."""
    N = ctx.N if N is None else N
    _check_N(ctx, N)
    j = np.arange(1, N)
    row = -np.exp(0.5 * (np.log(ctx.a[: N - 1]) + ctx.log_theta[: N - 1] + np.log(ctx.b[1:N])))
    row[0] *= 2.0
    P = np.zeros((N, N))
    P[0, j] = row
    return P


def _check_N(ctx, N):
    if N < 2:
        raise ValueError("N must be at least 2")
    if N > ctx.N:
        raise ValueError(f"context was built for N <= {ctx.N}")


def mass_direction(ctx: LinearizationContext, N: Optional[int] = None) -> np.ndarray:
    """Unit vector Theta^(1/2) i in the symmetric frame (kernel of the truncated S)."""
    N = ctx.N if N is None else N
    v = np.arange(1, N + 1) * np.exp(0.5 * ctx.log_theta[:N])
    return v / np.linalg.norm(v)


def estimate_spectral_bound(
    ctx: LinearizationContext,
    N: Optional[int] = None,
    tol: float = 1e-10,
    include_P: bool = True,
    exclude_kernel: bool = False,
) -> float:
    """Largest real part of the spectrum of the truncated operator.

    Parameters
    ----------
    ctx : LinearizationContext
    N : int, optional
        Truncation, at least 8 (defaults to ``ctx.N``).
    tol : float
        Convergence tolerance of the iterative solver used when N > 512.
    include_P : bool
        Use L = S + P (default) or S alone.
    exclude_kernel : bool
        For S alone, drop the eigenvalue belonging to the mass direction
        h_i = i, which the truncated S annihilates.

    Returns
    -------
    float
        mu_est; a negative value indicates a numerical gap of the truncated
        operator. It is a diagnostic, not a certificate for the infinite one.
    """
    N = ctx.N if N is None else N
    if N < 8:
        raise ValueError("N must be at least 8")
    T = assemble_S_symmetric(ctx, N)
    if not include_P:
        w, V = np.linalg.eigh(T)
        if exclude_kernel:
            v = mass_direction(ctx, N)
            drop = int(np.argmax(np.abs(V.T @ v)))
            w = np.delete(w, drop)
        return float(w.max())
    L = T + assemble_P_symmetric(ctx, N)
    if N <= DENSE_LIMIT:
        return float(np.linalg.eigvals(L).real.max())
    from scipy.sparse.linalg import ArpackNoConvergence, eigs

    try:
        vals = eigs(L, k=1, which="LR", tol=tol, return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise SpectralEstimateError(f"eigenvalue iteration did not converge at N = {N}") from exc
    return float(vals.real.max())


# ---------------------------------------------------------------------------
# the condition
# ---------------------------------------------------------------------------


@dataclass
class GapReport:
    """Outcome of the spectral-gap sufficient condition.

    Attributes
    ----------
    z, D, p_norm : float
        Equilibrium parameter, constant D and the bound on ||P||.
    lhs : float
        4 D p_norm, the left side of the condition.
    satisfied : bool
        ``lhs < 1``.
    mu_est : float or None
        Spectral bound of the truncated L (``None`` when not requested).
    closed_form : float or None
        Closed-form left side for constant or linear rules.
    closed_form_kind : str or None
    N : int
    extra : dict
        ``mu_est_half_N``, the spectral bound at truncation N // 2, as a
        convergence indicator.
    """

    z: float
    D: float
    p_norm: float
    lhs: float
    satisfied: bool
    mu_est: Optional[float] = None
    closed_form: Optional[float] = None
    closed_form_kind: Optional[str] = None
    N: int = DEFAULT_N
    extra: dict = field(default_factory=dict)


def check_gap_condition(
    ctx: LinearizationContext,
    b: Optional[float] = None,
    beta: Optional[float] = None,
    tol: float = DEFAULT_TOL,
    spectral: bool = True,
) -> GapReport:
    """Evaluate the sufficient condition for a spectral gap of L.

    ``b`` and ``beta`` default to :func:`frag_growth_constants`. For
    constant and linear rules the closed-form value is recorded as well.
    """
    D = compute_D(ctx, tol)
    pn = p_norm_bound(ctx, b, beta, tol)
    lhs = 4.0 * D * pn
    kind = closed_form_kind(ctx.db.model)
    cf = closed_form_lhs(ctx) if kind is not None else None
    mu = estimate_spectral_bound(ctx) if spectral and ctx.N >= 8 else None
    extra = {}
    if mu is not None and ctx.N >= 16:
        # convergence in N is not known a priori; report the half-size value
        extra["mu_est_half_N"] = estimate_spectral_bound(ctx, ctx.N // 2)
    return GapReport(ctx.z, D, pn, lhs, bool(lhs < 1.0), mu, cf, kind, ctx.N, extra)
