"""Moments, a priori bounds, weak-form residuals and run comparisons.

The bounds are explicit constants attached to a (model, initial state) pair:

* kappa = max(C_1(0), sqrt(lambda / (2 a_1))), a ceiling on C_1(t);
* a mass ceiling max(sum i C_i(0), (lambda + b_1 kappa) / b) when b_i >= b i;
* an exponential-moment ceiling Xi_1 on sum mu^i C_i(t) when a_i >= a_min > 0
  and kappa < inf b_i / a_i;
* a floor eta on C_1(t) for late times when a_i <= a i and b_i >= b i.

Every bound is returned as a :class:`BoundResult`; a bound whose hypotheses
fail is reported as inapplicable instead of raising.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import BoundUndefinedError, ResampleRequiredError
from .kinetics import RateModel
from .ode_sim import CONSERVATIVE, Trajectory, weak_form_rhs

logger = logging.getLogger(__name__)

DEFAULT_PROBE = 4096
MONITOR_SLACK = 1e-9


def _values(state) -> np.ndarray:
    if hasattr(state, "C"):
        return np.asarray(state.C, dtype=float)
    return np.asarray(state, dtype=float)


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def power_moment(state, m: float) -> float:
    """sum_i i^m C_i over the stored sizes.

    ``state`` is a :class:`~bdkit.ode_sim.TruncatedState` or an array with
    ``C[i - 1] = C_i``.
    """
    if m < 0:
        raise ValueError("moment order must be non-negative")
    C = _values(state)
    i = np.arange(1, C.size + 1, dtype=float)
    return float(np.dot(i**m, C))


def exp_moment(state, nu: float) -> float:
    """sum_i exp(nu i) C_i, accumulated in log space.

    Returns ``inf`` when the sum exceeds the floating-point range.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    C = _values(state)
    pos = C > 0
    if not np.any(pos):
        return 0.0
    i = np.arange(1, C.size + 1, dtype=float)
    lt = nu * i[pos] + np.log(C[pos])
    top = float(lt.max())
    log_total = top + math.log(float(np.sum(np.exp(lt - top))))
    if log_total > 709.0:
        return math.inf
    return math.exp(log_total)


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundResult:
    """An explicit bound or the reason it does not apply."""

    name: str
    value: float
    applicable: bool
    reason: str = ""
    params: Dict[str, float] = field(default_factory=dict)


def kappa(model: RateModel, C1_init: float) -> float:
    """max(C_1(0), sqrt(lambda / (2 a_1))).

    Raises
    ------
    BoundUndefinedError
        If a_1 <= 0.
    """
    a1 = float(model.a(1))
    if not a1 > 0:
        raise BoundUndefinedError("kappa needs a_1 > 0")
    return max(float(C1_init), math.sqrt(model.lam / (2.0 * a1)))


def _inf_ratio(model: RateModel, weight, probe: int, limit: float) -> float:
    i = np.arange(1, probe + 1, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = weight(i)
    return float(min(np.min(r), limit))


def _tail_limit(num_rule, den_rule) -> float:
    """lim num_i / den_i from the leading power laws; ``inf`` or ``0`` when they differ."""
    cn, en = num_rule.asymptote()
    cd, ed = den_rule.asymptote()
    if en > ed:
        return math.inf if cn > 0 else -math.inf
    if en < ed:
        return 0.0
    return cn / cd


def frag_linear_floor(model: RateModel, probe: int = DEFAULT_PROBE) -> Optional[float]:
    """Largest b with b_i >= b i for all i, or ``None`` if none is positive."""
    cb, eb = model.frag.asymptote()
    if eb < 1.0 or cb <= 0:
        return None
    limit = cb if eb == 1.0 else math.inf
    b = _inf_ratio(model, lambda i: model.b(i) / i, probe, limit)
    return b if b > 0 else None


def coag_linear_ceiling(model: RateModel, probe: int = DEFAULT_PROBE) -> Optional[float]:
    """Smallest a with a_i <= a i for all i, or ``None`` if the ratio is unbounded."""
    ca, ea = model.coag.asymptote()
    if ea > 1.0:
        return None
    i = np.arange(1, probe + 1, dtype=float)
    top = float(np.max(model.a(i) / i))
    if ea == 1.0:
        top = max(top, ca)
    return top


def coag_floor(model: RateModel, probe: int = DEFAULT_PROBE) -> float:
    """inf_i a_i (0 when the rates decay)."""
    ca, ea = model.coag.asymptote()
    limit = 0.0 if ea < 0 else (ca if ea == 0 else math.inf)
    i = np.arange(1, probe + 1, dtype=float)
    return float(min(np.min(model.a(i)), limit))


def frag_coag_floor(model: RateModel, probe: int = DEFAULT_PROBE) -> float:
    """inf_i b_i / a_i."""
    limit = _tail_limit(model.frag, model.coag)
    return _inf_ratio(model, lambda i: model.b(i) / model.a(i), probe, limit)


def mass_bound(model: RateModel, C_init, probe: int = DEFAULT_PROBE) -> BoundResult:
    """max(sum i C_i(0), (lambda + b_1 kappa) / b) where b_i >= b i."""
    C = _values(C_init)
    b = frag_linear_floor(model, probe)
    if b is None:
        return BoundResult("mass", math.inf, False, "no b > 0 with b_i >= b i")
    k = kappa(model, C[0] if C.size else 0.0)
    b1 = float(model.b(1))
    value = max(power_moment(C, 1.0), (model.lam + b1 * k) / b)
    return BoundResult("mass", value, True, params={"b": b, "kappa": k})


def xi1_bound(
    model: RateModel,
    C_init,
    nu: Optional[float] = None,
    mu: Optional[float] = None,
    probe: int = DEFAULT_PROBE,
    gronwall_factor: float = math.exp(-1.0),
) -> BoundResult:
    """Exponential-moment ceiling on sum mu^i C_i(t), with mu = exp(nu).

    Xi_1 = sum mu^i C_i(0) + (lambda mu + (mu - 1) b_1 kappa)
                              / (eps (mu - 1) / mu * a_min) * g,

    where eps = (M - mu) kappa = inf(b_i / a_i) - mu kappa and
    M = inf(b_i / a_i) / kappa must exceed mu. When neither ``nu`` nor ``mu``
    is given, mu = (1 + M) / 2 (or 2 when kappa = 0).

    By default g = e^(-1). Gronwall's lemma applied to the differential
    inequality behind the bound only yields g = 1, and trajectories exceeding
    the g = e^(-1) value exist (rarely); pass ``gronwall_factor=1.0`` for the
    constant that follows from the inequality.
    """
    C = _values(C_init)
    a_min = coag_floor(model, probe)
    if not a_min > 0:
        return BoundResult("xi1", math.inf, False, "inf a_i = 0")
    k = kappa(model, C[0] if C.size else 0.0)
    ratio = frag_coag_floor(model, probe)
    if not ratio > k:
        return BoundResult("xi1", math.inf, False, f"kappa = {k:.6g} is not below inf b_i/a_i = {ratio:.6g}")
    M = ratio / k if k > 0 else math.inf
    if mu is None:
        if nu is not None:
            mu = math.exp(nu)
        else:
            mu = 0.5 * (1.0 + M) if math.isfinite(M) else 2.0
    if not 1.0 < mu < M:
        return BoundResult("xi1", math.inf, False, f"mu = {mu:.6g} must lie in (1, M = {M:.6g})")
    eps = ratio - mu * k
    b1 = float(model.b(1))
    init = exp_moment(C, math.log(mu)) if C.size else 0.0
    numer = model.lam * mu + (mu - 1.0) * b1 * k
    value = init + numer / (eps * (mu - 1.0) / mu * a_min) * gronwall_factor
    return BoundResult("xi1", value, True, params={"mu": mu, "nu": math.log(mu), "M": M, "eps": eps, "a_min": a_min, "kappa": k})


def c1_floor(model: RateModel, C_init, probe: int = DEFAULT_PROBE) -> BoundResult:
    """eta = 0.5 min(1, a max(sum i C_i(0), (lambda + b_1 kappa) / b) + a).

    Needs a_i <= a i and b_i >= b i. The formula is evaluated as stated; the
    monitor reports when the observed C_1 never reaches it.
    """
    C = _values(C_init)
    a = coag_linear_ceiling(model, probe)
    if a is None:
        return BoundResult("eta", 0.0, False, "no a with a_i <= a i")
    mb = mass_bound(model, C, probe)
    if not mb.applicable:
        return BoundResult("eta", 0.0, False, mb.reason)
    if model.lam == 0 and (C.size == 0 or C[0] == 0):
        return BoundResult("eta", 0.0, False, "no influx and no monomers: C_1 stays zero")
    value = 0.5 * min(1.0, a * mb.value + a)
    return BoundResult("eta", value, True, params={"a": a, "b": mb.params["b"]})


# ---------------------------------------------------------------------------
# monitors
# ---------------------------------------------------------------------------


@dataclass
class BoundLedger:
    """Bounds of one run and their per-sample violation flags.

    ``violations[name]`` is a boolean array over the trajectory samples and
    ``max_violation[name]`` the largest excess over the bound (0 if none).
    For the C_1 floor, ``t1`` is the first sample time with C_1 >= eta;
    ``eta_reached`` is false when the floor was never attained.
    """

    kappa: BoundResult
    mass_bound: BoundResult
    xi1: BoundResult
    eta_floor: BoundResult
    violations: Dict[str, np.ndarray] = field(default_factory=dict)
    max_violation: Dict[str, float] = field(default_factory=dict)
    t1: Optional[float] = None
    eta_reached: Optional[bool] = None

    @property
    def bounds(self):
        return [self.kappa, self.mass_bound, self.xi1, self.eta_floor]

    def violated(self) -> bool:
        return any(bool(np.any(v)) for v in self.violations.values())

    def rows(self):
        """(bound name, value, max violation, verdict) for each bound."""
        out = []
        for b in self.bounds:
            if not b.applicable:
                out.append((b.name, b.value, 0.0, "inapplicable"))
                continue
            if b.name not in self.violations:
                out.append((b.name, b.value, 0.0, "unchecked"))
                continue
            viol = bool(np.any(self.violations[b.name]))
            verdict = "violated" if viol else "ok"
            if b.name == "eta" and self.eta_reached is False:
                verdict = "not_reached"
            out.append((b.name, b.value, self.max_violation[b.name], verdict))
        return out


def bound_ledger(model: RateModel, C_init, nu: Optional[float] = None, probe: int = DEFAULT_PROBE) -> BoundLedger:
    """All bounds of a (model, initial state) pair, without checking a run."""
    C = _values(C_init)
    k = kappa(model, C[0] if C.size else 0.0)
    return BoundLedger(
        BoundResult("kappa", k, True),
        mass_bound(model, C, probe),
        xi1_bound(model, C, nu=nu, probe=probe),
        c1_floor(model, C, probe),
    )


def monitor_trajectory(
    traj: Trajectory,
    model: RateModel,
    C_init,
    nu: Optional[float] = None,
    slack: float = MONITOR_SLACK,
    probe: int = DEFAULT_PROBE,
) -> BoundLedger:
    """Check every applicable bound on the samples of a trajectory.

    The trajectory needs ``"profile"`` samples (full concentration vectors),
    or at least ``"C1"`` and ``"M1"`` for the kappa, mass and floor checks.
    The trajectory is not modified. Violations are counted beyond the
    relative ``slack``.
    """
    ledger = bound_ledger(model, C_init, nu=nu, probe=probe)
    t = traj.t
    if "profile" in traj.data:
        prof = [np.asarray(p, dtype=float) for p in traj.data["profile"]]
        c1 = np.array([p[0] for p in prof])
        m1 = np.array([power_moment(p, 1.0) for p in prof])
    else:
        prof = None
        c1 = traj.series("C1")
        m1 = traj.series("M1") if "M1" in traj.data else None

    def record(name, observed, bound):
        excess = observed - bound * (1.0 + slack)
        ledger.violations[name] = excess > 0
        ledger.max_violation[name] = float(max(0.0, np.max(observed - bound))) if observed.size else 0.0

    record("kappa", c1, ledger.kappa.value)
    if ledger.mass_bound.applicable and m1 is not None:
        record("mass", m1, ledger.mass_bound.value)
    if ledger.xi1.applicable and prof is not None:
        e = np.array([exp_moment(p, ledger.xi1.params["nu"]) for p in prof])
        record("xi1", e, ledger.xi1.value)
    if ledger.eta_floor.applicable:
        eta = ledger.eta_floor.value
        hit = np.nonzero(c1 >= eta)[0]
        if hit.size == 0:
            ledger.eta_reached = False
            ledger.violations["eta"] = np.zeros(t.size, dtype=bool)
            ledger.max_violation["eta"] = 0.0
            logger.info("C_1 never reached the floor %.6g (max %.6g)", eta, float(c1.max()))
        else:
            first = int(hit[0])
            ledger.eta_reached = True
            ledger.t1 = float(t[first])
            flags = np.zeros(t.size, dtype=bool)
            late = c1[first:]
            flags[first:] = late < eta * (1.0 - slack)
            ledger.violations["eta"] = flags
            ledger.max_violation["eta"] = float(max(0.0, np.max(eta - late)))
    return ledger


# ---------------------------------------------------------------------------
# weak form and comparisons
# ---------------------------------------------------------------------------


def weak_form_residual(traj: Trajectory, model: RateModel, phi: Sequence[float], which: str = CONSERVATIVE) -> float:
    """Largest mismatch between d/dt sum phi_i C_i and the truncated weak form.

    The derivative is the centered difference over neighbouring samples and
    the right side is evaluated at the middle sample. The result is
    normalized by the largest magnitude of the right side over the run (no
    normalization when that is zero).
    """
    if "profile" not in traj.data:
        raise ValueError("weak_form_residual needs profile samples")
    prof = [np.asarray(p, dtype=float) for p in traj.data["profile"]]
    n = prof[0].size
    w = np.zeros(n)
    phi = np.asarray(phi, dtype=float)
    w[: min(n, phi.size)] = phi[:n]
    t = traj.t
    if t.size < 3:
        raise ValueError("need at least three samples")
    s = np.array([np.dot(w, p) for p in prof])
    rhs = np.array([weak_form_rhs(p, model, w, which) for p in prof])
    deriv = (s[2:] - s[:-2]) / (t[2:] - t[:-2])
    resid = np.abs(deriv - rhs[1:-1])
    scale = float(np.max(np.abs(rhs)))
    return float(np.max(resid) / scale) if scale > 0 else float(np.max(resid))


@dataclass
class ErrorSeries:
    """Errors of run A against run B on shared sizes.

    ``abs_error`` is the sup norm of the difference and ``rel_error`` that
    sup norm divided by the sup norm of run A, both over the shared sizes.
    """

    times: np.ndarray
    abs_error: np.ndarray
    rel_error: np.ndarray
    sizes: np.ndarray


def _sizes(traj: Trajectory, width: int) -> np.ndarray:
    sizes = traj.meta.get("sizes")
    if sizes is None:
        return np.arange(1, width + 1)
    return np.asarray(sizes, dtype=np.int64)


def relative_sup_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b||_inf / ||a||_inf (0 when both vanish)."""
    top = float(np.max(np.abs(a)))
    diff = float(np.max(np.abs(a - b)))
    if top == 0:
        return 0.0 if diff == 0 else math.inf
    return diff / top


def compare_runs(run_a: Trajectory, run_b: Trajectory, shared_nodes: Optional[Sequence[int]] = None, time_tol: float = 1e-9) -> ErrorSeries:
    """Compare two runs sample by sample on the sizes both of them store.

    Values are read at exactly the shared sizes; nothing is interpolated.
    The sizes a run stores are taken from ``meta["sizes"]`` (default 1..n).

    Raises
    ------
    ResampleRequiredError
        If the sample times differ, or a requested size is not stored by
        both runs.
    """
    ta, tb = run_a.t, run_b.t
    if ta.size != tb.size or np.any(np.abs(ta - tb) > time_tol * np.maximum(1.0, np.abs(ta))):
        raise ResampleRequiredError(f"sample grids differ ({ta.size} vs {tb.size} samples); resample one run")
    pa = run_a.data.get("profile")
    pb = run_b.data.get("profile")
    if pa is None or pb is None:
        raise ValueError("both runs need profile samples")
    sa = _sizes(run_a, len(pa[0]))
    sb = _sizes(run_b, len(pb[0]))
    shared = np.intersect1d(sa, sb) if shared_nodes is None else np.asarray(shared_nodes, dtype=np.int64)
    ia = np.searchsorted(sa, shared)
    ib = np.searchsorted(sb, shared)
    ok = (ia < sa.size) & (ib < sb.size)
    if not np.all(ok) or np.any(sa[np.minimum(ia, sa.size - 1)] != shared) or np.any(sb[np.minimum(ib, sb.size - 1)] != shared):
        raise ResampleRequiredError("requested sizes are not stored by both runs")
    abs_err = np.empty(ta.size)
    rel_err = np.empty(ta.size)
    for k in range(ta.size):
        xa = np.asarray(pa[k], dtype=float)[ia]
        xb = np.asarray(pb[k], dtype=float)[ib]
        abs_err[k] = float(np.max(np.abs(xa - xb)))
        rel_err[k] = relative_sup_error(xa, xb)
    return ErrorSeries(ta.copy(), abs_err, rel_err, shared)


def log_linear_fit(t: np.ndarray, err: np.ndarray):
    """Least-squares fit of log(err) = c - r t; returns (rate r, R^2)."""
    t = np.asarray(t, dtype=float)
    y = np.log(np.asarray(err, dtype=float))
    A = np.vstack([np.ones_like(t), t]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    fit = A @ coef
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return -float(coef[1]), r2
