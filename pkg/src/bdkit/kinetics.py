"""Kinetic coefficient rules and detailed-balance quantities.

A :class:`RateModel` bundles a coagulation rule (a_i), a fragmentation rule
(b_i) and the monomer injection rate lambda. :class:`DetailedBalance` caches
log Q_i, where Q_1 = 1 and Q_i = prod_{j=2}^{i} a_{j-1} / b_j, and derives the
critical monomer density z_s (radius of convergence of sum a_i Q_i z^i) and
the critical production threshold lambda_s = F(z_s) with

    F(z) = sum_{j>=1} a_j Q_j z^(j+1) + a_1 z^2.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import ClassVar, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateFragmentationError,
    IndeterminateLimitError,
    IndexRangeError,
    RuleError,
)
from .series import (
    DEFAULT_CEILING,
    DEFAULT_MAX_TERMS,
    DEFAULT_TOL,
    DIVERGENT,
    SeriesResult,
    sum_log_series,
)

logger = logging.getLogger(__name__)


def _as_index(i) -> np.ndarray:
    idx = np.asarray(i)
    if idx.size and np.min(idx) < 1:
        raise IndexRangeError(f"cluster indices start at 1, got {np.min(idx)}")
    return idx


# ---------------------------------------------------------------------------
# rate rules
# ---------------------------------------------------------------------------


class RateRule:
    """Base class of the rate rule family.

    Subclasses implement :meth:`values` for integer index arrays and
    :meth:`asymptote`, which returns ``(coefficient, exponent)`` of the
    leading power law ``coefficient * i**exponent`` as ``i -> inf``.
    """

    kind: ClassVar[str] = ""

    def values(self, i: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def asymptote(self) -> Tuple[float, float]:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def __call__(self, i):
        idx = _as_index(i)
        out = self.values(idx.astype(float))
        return float(out) if np.ndim(out) == 0 else out

    def log_values(self, i) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.values(_as_index(i).astype(float)))


def _check_finite(name, value):
    if not np.isfinite(value):
        raise RuleError(f"{name} must be finite, got {value}")
    return float(value)


@dataclass(frozen=True)
class ConstantRule(RateRule):
    """Constant rate ``a``."""

    a: float
    kind: ClassVar[str] = "constant"

    def __post_init__(self):
        if _check_finite("a", self.a) < 0:
            raise RuleError("constant rate must be non-negative")

    def values(self, i):
        return np.full(np.shape(i), float(self.a))

    def asymptote(self):
        return float(self.a), 0.0

    def params(self):
        return {"a": self.a}


@dataclass(frozen=True)
class PowerRule(RateRule):
    """Power law ``a * i**alpha``."""

    a: float
    alpha: float
    kind: ClassVar[str] = "power"

    def __post_init__(self):
        if _check_finite("a", self.a) < 0:
            raise RuleError("power-law prefactor must be non-negative")
        _check_finite("alpha", self.alpha)

    def values(self, i):
        if self.alpha == 0.0:
            return np.full(np.shape(i), float(self.a))
        if self.alpha == 1.0:
            return self.a * np.asarray(i, dtype=float)
        return self.a * np.power(i, self.alpha)

    def asymptote(self):
        return float(self.a), float(self.alpha)

    def params(self):
        return {"a": self.a, "alpha": self.alpha}


@dataclass(frozen=True)
class AffineRule(RateRule):
    """Affine law ``c + d * i**beta``."""

    c: float
    d: float
    beta: float
    kind: ClassVar[str] = "affine"

    def __post_init__(self):
        if _check_finite("c", self.c) < 0 or _check_finite("d", self.d) < 0:
            raise RuleError("affine coefficients must be non-negative")
        _check_finite("beta", self.beta)

    def values(self, i):
        return self.c + self.d * np.power(i, self.beta)

    def asymptote(self):
        if self.d == 0.0 or self.beta == 0.0:
            return float(self.c + (self.d if self.beta == 0.0 else 0.0)), 0.0
        if self.beta < 0.0:
            return float(self.c), 0.0
        return float(self.d), float(self.beta)

    def params(self):
        return {"c": self.c, "d": self.d, "beta": self.beta}


@dataclass(frozen=True)
class TableRule(RateRule):
    """Explicit table ``values[0] = r_1, values[1] = r_2, ...`` with a tail rule.

    Parameters
    ----------
    table : sequence of float
        At least two non-negative entries.
    tail : {"repeat", "power"}
        ``"repeat"`` extends by the last entry. ``"power"`` extrapolates with
        the power law through the last two entries.
    """

    table: Tuple[float, ...]
    tail: str = "repeat"
    kind: ClassVar[str] = "table"
    _exponent: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self):
        tab = tuple(float(v) for v in self.table)
        object.__setattr__(self, "table", tab)
        if len(tab) < 2:
            raise RuleError("rate tables need at least two entries")
        if any((not np.isfinite(v)) or v < 0 for v in tab):
            raise RuleError("rate table entries must be finite and non-negative")
        if self.tail not in ("repeat", "power"):
            raise RuleError(f"unknown tail rule {self.tail!r}")
        if self.tail == "power":
            v1, v2 = tab[-2], tab[-1]
            if v1 <= 0 or v2 <= 0:
                raise RuleError("power tail needs positive final entries")
            size = len(tab)
            p = math.log(v2 / v1) / math.log(size / (size - 1))
            object.__setattr__(self, "_exponent", p)

    def values(self, i):
        i = np.asarray(i, dtype=float)
        tab = np.asarray(self.table)
        size = len(tab)
        pos = np.minimum(i, size).astype(np.int64) - 1
        out = tab[pos]
        if self.tail == "power" and self._exponent != 0.0:
            beyond = i > size
            out = np.where(beyond, tab[-1] * np.power(np.maximum(i, size) / size, self._exponent), out)
        return out

    def asymptote(self):
        if self.tail == "repeat":
            return self.table[-1], 0.0
        size = len(self.table)
        return self.table[-1] / size**self._exponent, self._exponent

    def params(self):
        return {"table": self.table, "tail": self.tail}


RULE_KINDS = {cls.kind: cls for cls in (ConstantRule, PowerRule, AffineRule, TableRule)}


def make_rule(kind: str, **params) -> RateRule:
    """Build a rule from its kind name and keyword parameters."""
    try:
        cls = RULE_KINDS[kind]
    except KeyError:
        raise RuleError(f"unknown rule kind {kind!r}") from None
    return cls(**params)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateModel:
    """Coagulation rule, fragmentation rule and injection rate.

    Parameters
    ----------
    coag : RateRule
        Rule for a_i.
    frag : RateRule
        Rule for b_i.
    lam : float
        Monomer injection rate, >= 0.
    assert_hypotheses : bool
        When true, additionally require a_i > 0 and rule exponents in [0, 1].
    """

    coag: RateRule
    frag: RateRule
    lam: float = 0.0
    assert_hypotheses: bool = False

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise RuleError(f"injection rate must be finite and >= 0, got {self.lam}")
        if self.assert_hypotheses:
            problems = self.hypothesis_problems()
            if problems:
                raise RuleError("; ".join(problems))

    def a(self, i) -> np.ndarray:
        """Vectorized a_i (no index check)."""
        return self.coag.values(np.asarray(i, dtype=float))

    def b(self, i) -> np.ndarray:
        """Vectorized b_i (no index check)."""
        return self.frag.values(np.asarray(i, dtype=float))

    def with_lambda(self, lam: float) -> "RateModel":
        return RateModel(self.coag, self.frag, lam, self.assert_hypotheses)

    def hypothesis_problems(self, probe: int = 4096) -> list:
        """List violations of positivity of a_i and of exponent bounds."""
        problems = []
        idx = np.arange(1, probe + 1, dtype=float)
        ca, ea = self.coag.asymptote()
        if np.min(self.a(idx)) <= 0 or ca <= 0:
            problems.append("coagulation rates must be bounded away from zero")
        if np.min(self.b(idx)) < 0:
            problems.append("fragmentation rates must be non-negative")
        for name, rule in (("coagulation", self.coag), ("fragmentation", self.frag)):
            _, e = rule.asymptote()
            if not 0.0 <= e <= 1.0:
                problems.append(f"{name} exponent {e} outside [0, 1]")
        return problems


def coag_rate(model: RateModel, i: int) -> float:
    """Return a_i.

    Examples
    --------
    >>> coag_rate(RateModel(PowerRule(1.0, 0.5), PowerRule(1.0, 2 / 3)), 4)
    2.0
    """
    if int(i) != i or i < 1:
        raise IndexRangeError(f"cluster indices start at 1, got {i}")
    return model.coag(int(i))


def frag_rate(model: RateModel, i: int) -> float:
    """Return b_i."""
    if int(i) != i or i < 1:
        raise IndexRangeError(f"cluster indices start at 1, got {i}")
    return model.frag(int(i))


# ---------------------------------------------------------------------------
# detailed balance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LimitEstimate:
    """Result of a z_s probe.

    Attributes
    ----------
    value : float
        The estimate (``inf`` allowed, ``nan`` when indeterminate).
    method : str
        ``"asymptotic"``, ``"ratio"`` or ``"root"``.
    converged : bool
        Whether the probe stabilized.
    detail : str
        Short human-readable explanation.
    """

    value: float
    method: str
    converged: bool
    detail: str


class DetailedBalance:
    """Lazily extended cache of log Q_i for a rate model.

    The cumulative sums are accumulated in extended precision so that both
    log Q_i and differences log Q_j - log Q_i are accurate to rounding of the
    returned double. Extension is guarded by a lock so that a shared instance
    may be used from several threads.

    Parameters
    ----------
    model : RateModel
    capacity : int, optional
        Pre-size the cache to this many indices.
    """

    def __init__(self, model: RateModel, capacity: int = 0):
        self.model = model
        self._lock = threading.Lock()
        self._cum = np.zeros(1, dtype=np.longdouble)
        self._cum64 = np.zeros(1)
        self._inc = np.zeros(1)  # _inc[k] = log Q_{k+1} - log Q_k, _inc[0] = 0
        self._limit: Optional[int] = None  # first index with b_i = 0
        self._z_s: Optional[float] = None
        self._lambda_s: Optional[float] = None
        if capacity:
            self.ensure(capacity)

    @property
    def size(self) -> int:
        """Number of cached indices."""
        return len(self._cum)

    def ensure(self, n: int) -> None:
        """Make log Q_1..log Q_n available."""
        if n <= len(self._cum):
            return
        if self._limit is not None and n >= self._limit:
            raise DegenerateFragmentationError(f"b_{self._limit} = 0; Q_i undefined for i >= {self._limit}")
        with self._lock:
            m = len(self._cum)
            if n <= m:
                return
            target = max(n, 2 * m)
            if self._limit is not None:
                target = min(target, self._limit - 1)
            j = np.arange(m + 1, target + 1, dtype=float)
            a_prev = self.model.a(j - 1)
            b = self.model.b(j)
            bad = np.nonzero(b <= 0)[0]
            if bad.size:
                first = int(j[bad[0]])
                self._limit = first
                if first <= n:
                    raise DegenerateFragmentationError(f"b_{first} = 0; Q_i undefined for i >= {first}")
                j, a_prev, b = j[: bad[0]], a_prev[: bad[0]], b[: bad[0]]
            with np.errstate(divide="ignore"):
                inc = np.log(a_prev / b)
            ext = self._cum[-1] + np.cumsum(inc.astype(np.longdouble))
            cum = np.concatenate([self._cum, ext])
            self._inc = np.concatenate([self._inc, inc])
            self._cum64 = cum.astype(float)
            self._cum = cum

    def log_q(self, i):
        """log Q_i for an index or an index array."""
        idx = _as_index(i)
        self.ensure(int(np.max(idx)) if idx.size else 1)
        out = self._cum64[idx.astype(np.int64) - 1]
        return float(out) if np.ndim(out) == 0 else out

    def log_q_array(self, n: int) -> np.ndarray:
        """log Q_1 .. log Q_n as a float array (a copy)."""
        self.ensure(n)
        return self._cum64[:n].copy()

    def log_q_diff(self, i, j):
        """log(Q_j / Q_i) for i <= j, summed from the stored increments.

        The increments log(a_{k-1} / b_k) are kept exactly as computed, so
        ``log_q_diff(i, i + 1)`` is the rounded value of log(a_i / b_{i+1})
        rather than a difference of two large rounded logarithms.
        """
        ii = np.atleast_1d(_as_index(i)).astype(np.int64)
        jj = np.atleast_1d(_as_index(j)).astype(np.int64)
        ii, jj = np.broadcast_arrays(ii, jj)
        if np.any(jj < ii):
            raise IndexRangeError("log_q_diff expects i <= j")
        self.ensure(int(jj.max()))
        out = np.zeros(ii.shape)
        span = jj > ii
        if np.any(span):
            lo, hi = ii[span], jj[span]
            width = int(np.max(hi - lo))
            if width <= 256:
                # short spans: accumulate the stored increments _inc[lo..hi-1]
                seg = np.zeros(lo.shape)
                for off in range(width):
                    k = lo + off
                    m = k < hi
                    seg[m] += self._inc[k[m]]
            else:
                seg = (self._cum[hi - 1] - self._cum[lo - 1]).astype(float)
            out[span] = seg
        if np.ndim(i) == 0 and np.ndim(j) == 0:
            return float(out[0])
        return out.reshape(np.broadcast(np.asarray(i), np.asarray(j)).shape)

    def log_increments(self, n: int) -> np.ndarray:
        """Array whose entry k (0-based) is log Q_{k+1} - log Q_k, entry 0 = 0."""
        self.ensure(n)
        return self._inc[:n].copy()

    def log_aq(self, i):
        """log(a_i Q_i)."""
        idx = _as_index(i)
        with np.errstate(divide="ignore"):
            return np.log(self.model.a(idx)) + self.log_q(idx)

    @property
    def z_s(self) -> float:
        if self._z_s is None:
            self._z_s = critical_monomer_density(self)
        return self._z_s

    @property
    def lambda_s(self) -> float:
        if self._lambda_s is None:
            self._lambda_s = critical_production_threshold(self)
        return self._lambda_s


def detailed_balance_logQ(db: DetailedBalance, i: int) -> float:
    """Return log Q_i, extending the cache when needed."""
    if int(i) != i or i < 1:
        raise IndexRangeError(f"cluster indices start at 1, got {i}")
    return db.log_q(int(i))


# -- z_s ---------------------------------------------------------------------


def _aitken(s: np.ndarray) -> np.ndarray:
    """One sweep of Aitken's delta-squared transform."""
    d1 = s[1:-1] - s[:-2]
    d2 = s[2:] - 2 * s[1:-1] + s[:-2]
    out = s[2:].copy()
    ok = np.abs(d2) > 1e-300
    out[ok] = s[2:][ok] - (s[2:][ok] - s[1:-1][ok]) ** 2 / d2[ok]
    return out


def _ladder_limit(s: np.ndarray, tol: float) -> Tuple[float, bool, str]:
    """Limit of a sequence sampled on the geometric ladder i = 2^k.

    Returns ``(limit, converged, detail)``. The limit may be ``+inf`` or
    ``-inf`` when the sequence grows by a steady amount per doubling.
    """
    seq = np.asarray(s, dtype=float)
    for level in range(4):
        if seq.size < 3:
            break
        last = seq[-3:]
        scale = max(1.0, abs(last[-1]))
        if np.max(last) - np.min(last) <= tol * scale:
            return float(last[-1]), True, f"ladder stable after {level} Aitken sweeps"
        seq = _aitken(seq)
    steps = np.diff(np.asarray(s, dtype=float))[-4:]
    if steps.size == 4 and np.all(np.abs(steps) > 1e-3) and np.all(np.sign(steps) == np.sign(steps[-1])):
        ratios = steps[1:] / steps[:-1]
        if np.all(ratios > 0.9):
            return math.copysign(math.inf, steps[-1]), True, "steady growth per doubling"
    return math.nan, False, "ladder did not stabilize"


def estimate_critical_density(
    db: DetailedBalance,
    method: str = "ratio",
    max_probe: int = 2**20,
    tol: float = 1e-9,
    window: int = 64,
    extrapolation_tol: float = 1e-9,
) -> LimitEstimate:
    """Probe z_s with one named method.

    Parameters
    ----------
    db : DetailedBalance
    method : {"asymptotic", "ratio", "root"}
        ``"asymptotic"`` reads the leading power laws of the rules.
        ``"ratio"`` uses (a_i Q_i)/(a_{i+1} Q_{i+1}) = b_{i+1}/a_{i+1}; it is
        accepted directly when its relative fluctuation over the trailing
        ``window`` indices is below ``tol`` and extrapolated with Aitken
        sweeps over the ladder i = 2^k otherwise. ``"root"`` applies the root
        test to the block ratios (a_{2i}Q_{2i} / a_i Q_i)^(1/i) on the same
        ladder.
    max_probe : int
        Largest index inspected.

    Returns
    -------
    LimitEstimate
    """
    model = db.model
    if method == "asymptotic":
        ca, ea = model.coag.asymptote()
        cb, eb = model.frag.asymptote()
        if ca <= 0:
            return LimitEstimate(math.nan, method, False, "coagulation vanishes asymptotically")
        if cb <= 0 or eb < ea:
            return LimitEstimate(0.0, method, True, "fragmentation is asymptotically weaker")
        if eb > ea:
            return LimitEstimate(math.inf, method, True, "fragmentation exponent exceeds coagulation exponent")
        return LimitEstimate(cb / ca, method, True, "ratio of leading coefficients")

    top = int(math.floor(math.log2(max_probe)))
    ladder = 2.0 ** np.arange(6, top + 1)
    if method == "ratio":
        w = np.arange(max_probe - window + 1, max_probe + 1, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = model.b(w) / model.a(w)
        if np.all(np.isfinite(r)) and np.all(r > 0):
            fluct = (r.max() - r.min()) / abs(r.mean())
            if fluct < tol:
                return LimitEstimate(float(r[-1]), method, True, f"window fluctuation {fluct:.2e}")
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.log(model.b(ladder) / model.a(ladder))
        if not np.all(np.isfinite(s)):
            return LimitEstimate(math.nan, method, False, "non-positive rates on the probe ladder")
        limit, ok, detail = _ladder_limit(s, extrapolation_tol)
        return LimitEstimate(math.exp(limit) if ok else math.nan, method, ok, detail)
    if method == "root":
        lo = ladder[:-1].astype(np.int64)
        hi = 2 * lo
        with np.errstate(divide="ignore"):
            log_ratio = np.log(model.a(hi)) - np.log(model.a(lo)) + db.log_q_diff(lo, hi)
        s = -log_ratio / lo
        if not np.all(np.isfinite(s)):
            return LimitEstimate(math.nan, method, False, "non-finite block roots")
        limit, ok, detail = _ladder_limit(s, extrapolation_tol)
        return LimitEstimate(math.exp(limit) if ok else math.nan, method, ok, detail)
    raise ValueError(f"unknown method {method!r}")


def critical_monomer_density(
    db: DetailedBalance,
    max_probe: int = 2**20,
    method: str = "auto",
    tol: float = 1e-9,
    window: int = 64,
) -> float:
    """Critical monomer density z_s (possibly ``inf``).

    With ``method="auto"`` the leading power laws of parametric and
    tail-extended table rules give z_s exactly; the numerical ratio test and
    then the root test serve as fallbacks.

    Raises
    ------
    IndeterminateLimitError
        When no probe stabilizes.
    """
    methods = ["asymptotic", "ratio", "root"] if method == "auto" else [method]
    last = None
    for m in methods:
        est = estimate_critical_density(db, m, max_probe=max_probe, tol=tol, window=window)
        if est.converged:
            logger.debug("z_s = %s via %s (%s)", est.value, m, est.detail)
            return est.value
        last = est
    raise IndeterminateLimitError(f"z_s indeterminate: {last.detail}", last)


# -- lambda_s ------------------------------------------------------------------


def monomer_series(
    db: DetailedBalance,
    z: float,
    tol: float = DEFAULT_TOL,
    ceiling: float = DEFAULT_CEILING,
    max_terms: int = DEFAULT_MAX_TERMS,
) -> SeriesResult:
    """Evaluate F(z) = sum_{j>=1} a_j Q_j z^(j+1) + a_1 z^2 adaptively."""
    if z < 0:
        raise ValueError("z must be non-negative")
    if z == 0:
        return SeriesResult(0.0, 0, 0.0, "converged")
    logz = math.log(z)
    model = db.model

    def log_terms(start, stop):
        j = np.arange(start + 1, stop + 1)
        db.ensure(stop)
        with np.errstate(divide="ignore"):
            return np.log(model.a(j)) + db._cum64[start:stop] + (j + 1) * logz

    res = sum_log_series(log_terms, tol=tol, ceiling=ceiling, max_terms=max_terms)
    if res.status == DIVERGENT:
        return res
    return SeriesResult(res.value + float(model.a(1)) * z * z, res.terms, res.tail_bound, res.status)


def critical_production_threshold(
    db: DetailedBalance,
    tol: float = DEFAULT_TOL,
    ceiling: float = DEFAULT_CEILING,
    max_terms: int = DEFAULT_MAX_TERMS,
) -> float:
    """Critical production threshold lambda_s = F(z_s) (possibly ``inf``).

    Raises
    ------
    IndeterminateLimitError
        When the tail estimate is not below ``tol`` at the probe limit and the
        terms are still decaying.
    """
    zs = db.z_s
    if math.isinf(zs):
        return math.inf
    res = monomer_series(db, zs, tol=tol, ceiling=ceiling, max_terms=max_terms)
    if res.status == DIVERGENT:
        return math.inf
    if not res.converged:
        raise IndeterminateLimitError(
            f"lambda_s indeterminate after {res.terms} terms (tail {res.tail_bound:.3e})", res
        )
    return res.value


def rates_on(model: RateModel, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Arrays (a_1..a_n, b_1..b_n)."""
    idx = np.arange(1, n + 1, dtype=float)
    return model.a(idx), model.b(idx)


def build_model(coag: Sequence, frag: Sequence, lam: float) -> RateModel:
    """Shorthand: ``build_model(("power", dict(a=1, alpha=.5)), ...)``."""
    return RateModel(make_rule(coag[0], **coag[1]), make_rule(frag[0], **frag[1]), lam)
