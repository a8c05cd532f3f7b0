"""Steady states: monomer equilibrium, zero- and negative-flux profiles.

A zero-flux steady state is C_i = Q_i z^i where z solves F(z) = lambda with

    F(z) = sum_{j>=1} a_j Q_j z^(j+1) + a_1 z^2,

which is possible only when lambda <= lambda_s. Under strong fragmentation
(b_i > i^nu a_i with nu > 1) there is in addition a family of steady states
with constant negative flux J, built from the recurrence

    C_1 = z,  C_{i+1} = (a_i z C_i + |J|) / b_{i+1}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    DivergentSeriesError,
    IndeterminateLimitError,
    RegimeViolationError,
    SupercriticalError,
)
from .kinetics import DetailedBalance, monomer_series
from .series import DEFAULT_TOL, DIVERGENT, sum_log_series

logger = logging.getLogger(__name__)

ZERO_FLUX = "zero_flux"
NEGATIVE_FLUX = "negative_flux"


@dataclass(frozen=True)
class SteadyState:
    """Tagged steady state.

    Attributes
    ----------
    kind : str
        ``"zero_flux"`` or ``"negative_flux"``.
    z : float
        Monomer concentration (``profile[0]``).
    J : float
        Constant flux (0 for zero-flux states, negative otherwise).
    profile : numpy.ndarray
        C_1 .. C_N (0-based storage: ``profile[i - 1] = C_i``).
    """

    kind: str
    z: float
    J: float
    profile: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return len(self.profile)


@dataclass(frozen=True)
class RegimeReport:
    """Where a (model, lambda) pair sits in the steady-state trichotomy.

    Attributes
    ----------
    lam, lambda_s : float
    comparison : str
        ``"subcritical"``, ``"critical"`` or ``"supercritical"``.
    uniqueness : str
        ``"unique"``, ``"infinite_family"`` or ``"indeterminate"``.
    nu : float or None
        Smallest value of log(b_i / a_i) / log(i) over the probe window.
    nu_spread : float or None
        Spread (max - min) of the same quantity over the window; a large
        spread signals that the probe is not yet in the asymptotic regime.
    probe : int
        Largest index used for the tail test.
    """

    lam: float
    lambda_s: float
    comparison: str
    uniqueness: str
    nu: Optional[float]
    nu_spread: Optional[float]
    probe: int


def _bisect(g: Callable[[float], float], lo: float, hi: float, max_iter: int = 200) -> float:
    """Root of an increasing function g on [lo, hi] with g(lo) <= 0 <= g(hi).

    Bisection continues until the bracket collapses to adjacent doubles or
    ``max_iter`` halvings were made.
    """
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    glo, ghi = g(lo), g(hi)
    return lo if abs(glo) <= abs(ghi) else hi


def equilibrium_map(db: DetailedBalance, z: float, tol: float = DEFAULT_TOL) -> float:
    """F(z); ``inf`` when the series diverges."""
    res = monomer_series(db, z, tol=tol * 1e-3)
    if res.status == DIVERGENT:
        return math.inf
    if not res.converged:
        raise IndeterminateLimitError(f"F({z}) did not converge", res)
    return res.value


def solve_monomer_equilibrium(db: DetailedBalance, lam: float, tol: float = 1e-12) -> float:
    """Monomer density z of the zero-flux steady state for injection ``lam``.

    Parameters
    ----------
    db : DetailedBalance
    lam : float
        Injection rate, >= 0.
    tol : float
        Relative tolerance; the result satisfies
        ``|F(z) - lam| <= tol * max(1, lam)`` up to rounding of F.

    Returns
    -------
    float

    Raises
    ------
    SupercriticalError
        If ``lam > lambda_s``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if lam == 0:
        return 0.0
    lam_s = db.lambda_s
    zs = db.z_s
    if math.isfinite(lam_s):
        slack = tol * max(1.0, lam_s)
        if lam > lam_s + slack:
            raise SupercriticalError(f"lambda = {lam} exceeds lambda_s = {lam_s}: no steady state exists")
        if abs(lam - lam_s) <= slack:
            return zs

    def g(z):
        return equilibrium_map(db, z, tol) - lam

    if math.isfinite(zs):
        hi = zs
    else:
        hi = 1.0
        while g(hi) <= 0.0:
            hi *= 2.0
    z = _bisect(g, 0.0, hi)
    logger.debug("equilibrium z = %.17g for lambda = %g", z, lam)
    return z


def zero_flux_profile(db: DetailedBalance, z: float, N: int) -> SteadyState:
    """C_i = Q_i z^i for i = 1..N."""
    if z < 0:
        raise ValueError("z must be non-negative")
    if N < 1:
        raise ValueError("N must be at least 1")
    if z == 0:
        return SteadyState(ZERO_FLUX, 0.0, 0.0, np.zeros(N))
    i = np.arange(1, N + 1)
    prof = np.exp(db.log_q_array(N) + i * math.log(z))
    prof[0] = z
    return SteadyState(ZERO_FLUX, float(z), 0.0, prof)


class GammaSeries:
    """Lazy list of gamma_k = sum_{j>=2} a_{j+k} Q_{j+k} / (a_{j-1} Q_{j-1}).

    Parameters
    ----------
    db : DetailedBalance
    tol : float
        Tail tolerance for each inner series.
    max_terms : int
        Probe limit of each inner series.
    """

    def __init__(self, db: DetailedBalance, tol: float = DEFAULT_TOL, max_terms: int = 2**20):
        self.db = db
        self.tol = tol
        self.max_terms = max_terms
        self.values: list = []

    def _compute(self, k: int) -> float:
        db = self.db
        model = db.model

        def log_terms(start, stop):
            j = np.arange(start + 2, stop + 2)
            db.ensure(stop + 1 + k)
            cum = db._cum64
            with np.errstate(divide="ignore"):
                return (np.log(model.a(j + k)) - np.log(model.a(j - 1))
                        + cum[j + k - 1] - cum[j - 2])

        res = sum_log_series(log_terms, tol=self.tol, max_terms=self.max_terms, index_offset=2)
        if not res.converged:
            raise RegimeViolationError(f"gamma_{k} series is {res.status} at the probe limit")
        return res.value

    def __getitem__(self, k: int) -> float:
        while len(self.values) <= k:
            self.values.append(self._compute(len(self.values)))
        return self.values[k]

    def power_sum(self, z: float, tol: float = DEFAULT_TOL, k_max: int = 10_000) -> float:
        """sum_k gamma_k z^k, truncated once terms fall below ``tol`` and shrink."""
        total = 0.0
        prev = math.inf
        for k in range(k_max):
            term = self[k] * z**k
            total += term
            if term < tol * max(total, 1e-300) and term <= prev:
                return total
            prev = term
        raise RegimeViolationError("sum of gamma_k z^k did not converge")


def negative_flux_lhs(db: DetailedBalance, gam: GammaSeries, z: float, absJ: float, tol: float = DEFAULT_TOL) -> float:
    """a_1 z^2 + z |J| sum_k gamma_k z^k + sum_k a_k Q_k z^(k+1)."""
    if z == 0:
        return 0.0
    F = equilibrium_map(db, z, tol)
    return F + z * absJ * gam.power_sum(z, tol * 1e-3)


def negative_flux_profile(
    db: DetailedBalance,
    lam: float,
    J: float,
    N: int,
    tol: float = 1e-12,
    probe: int = 4096,
    gamma: Optional[GammaSeries] = None,
) -> SteadyState:
    """Steady state with constant flux ``J < 0``.

    Parameters
    ----------
    db : DetailedBalance
    lam : float
        Injection rate.
    J : float
        Negative flux value.
    N : int
        Number of profile entries to build.
    tol : float
        Tolerance for the series and the bisection.
    probe : int
        Probe index for the regime check.
    gamma : GammaSeries, optional
        Reuse a cache of gamma_k across calls with the same model.

    Returns
    -------
    SteadyState

    Raises
    ------
    RegimeViolationError
        When the model is not in the strong-fragmentation regime or a gamma_k
        series does not converge.
    """
    if J >= 0:
        raise ValueError("J must be negative")
    report = classify_regime(db, lam, probe)
    if report.uniqueness != "infinite_family":
        raise RegimeViolationError(
            f"negative-flux states require strong fragmentation (got {report.uniqueness}, nu = {report.nu})"
        )
    gam = gamma if gamma is not None else GammaSeries(db, tol=tol)
    absJ = -J

    def g(z):
        return negative_flux_lhs(db, gam, z, absJ, tol) - lam

    hi = 1.0
    while g(hi) <= 0.0:
        hi *= 2.0
    z = _bisect(g, 0.0, hi)
    model = db.model
    i = np.arange(1, N + 1, dtype=float)
    a = model.a(i)
    b = model.b(i)
    prof = np.empty(N)
    prof[0] = z
    for k in range(N - 1):
        prof[k + 1] = (a[k] * z * prof[k] + absJ) / b[k + 1]
    return SteadyState(NEGATIVE_FLUX, float(z), float(J), prof)


def classify_regime(db: DetailedBalance, lam: float, probe: int = 4096, margin: float = 0.05, tol: float = 1e-12) -> RegimeReport:
    """Compare lambda with lambda_s and test the tail of b_i / a_i.

    The tail test inspects i in [probe/2, probe]: if b_i <= i a_i there the
    zero-flux state is declared unique; if log(b_i/a_i)/log(i) exceeds
    ``1 + margin`` on the whole window the negative-flux family exists;
    anything else is indeterminate.
    """
    lam_s = db.lambda_s
    if math.isinf(lam_s):
        comparison = "subcritical"
    else:
        slack = tol * max(1.0, lam_s)
        if lam > lam_s + slack:
            comparison = "supercritical"
        elif abs(lam - lam_s) <= slack:
            comparison = "critical"
        else:
            comparison = "subcritical"
    model = db.model
    i = np.arange(max(2, probe // 2), probe + 1, dtype=float)
    a = model.a(i)
    b = model.b(i)
    nu = spread = None
    if np.all(a > 0) and np.all(b > 0):
        nus = np.log(b / a) / np.log(i)
        nu = float(nus.min())
        spread = float(nus.max() - nus.min())
    if np.all(b <= i * a):
        uniqueness = "unique"
    elif nu is not None and nu > 1.0 + margin:
        uniqueness = "infinite_family"
    else:
        uniqueness = "indeterminate"
    return RegimeReport(lam, lam_s, comparison, uniqueness, nu, spread, probe)


def truncated_series(db: DetailedBalance, mesh, z: float) -> float:
    """sum_{j<K} a_{n_j} dx_{j+1/2} Q_{n_j} z^(n_j+1) + a_1 z^2 on a mesh."""
    if z == 0:
        return 0.0
    nodes = np.asarray(mesh.nodes)[:-1]
    dxh = np.asarray(mesh.half_steps, dtype=float)
    model = db.model
    logq = db.log_q(nodes)
    with np.errstate(divide="ignore"):
        lt = np.log(model.a(nodes)) + np.log(dxh) + logq + (nodes + 1) * math.log(z)
    peak = float(lt.max())
    if peak > 700.0:
        return math.inf
    return float(np.sum(np.exp(lt))) + float(model.a(1)) * z * z


def truncated_monomer_equilibrium(db: DetailedBalance, lam: float, mesh, tol: float = 1e-12, z_ceiling: float = 1e6) -> float:
    """Coarse-mesh equilibrium parameter.

    Solves ``truncated_series(db, mesh, z) = lam`` by bisection; for the
    uniform mesh {1..n} the quadrature reduces to the truncated F.

    Raises
    ------
    SupercriticalError
        If no root exists below ``z_ceiling``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0:
        return 0.0

    def g(z):
        return truncated_series(db, mesh, z) - lam

    hi = 1.0
    while g(hi) <= 0.0:
        hi *= 2.0
        if hi > z_ceiling:
            raise SupercriticalError(f"no truncated equilibrium below z = {z_ceiling}")
    return _bisect(g, 0.0, hi)


def check_finite_tail(db: DetailedBalance, z: float) -> None:
    """Raise :class:`DivergentSeriesError` when z >= z_s."""
    zs = db.z_s
    if z >= zs:
        raise DivergentSeriesError(f"z = {z} is not below z_s = {zs}")
