"""Adaptive summation of positive series given in log space.

Every series the package needs (the equilibrium map F(z), the critical
threshold, the gamma_k coefficients, the moments of Q_i z^i) has positive
terms that may span hundreds of orders of magnitude. Terms are therefore
supplied as natural logarithms and exponentiated only after a ceiling check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

CONVERGED = "converged"
DIVERGENT = "divergent"
INDETERMINATE = "indeterminate"

DEFAULT_TOL = 1e-12
DEFAULT_CEILING = 1e12
DEFAULT_MAX_TERMS = 2**20


@dataclass(frozen=True)
class SeriesResult:
    """Outcome of an adaptive positive-series summation.

    Attributes
    ----------
    value : float
        Partial sum (``inf`` when divergent).
    terms : int
        Number of terms summed.
    tail_bound : float
        Estimated bound on the neglected tail.
    status : str
        One of ``"converged"``, ``"divergent"`` or ``"indeterminate"``.
    """

    value: float
    terms: int
    tail_bound: float
    status: str

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def sum_log_series(
    log_terms: Callable[[int, int], np.ndarray],
    tol: float = DEFAULT_TOL,
    ceiling: float = DEFAULT_CEILING,
    max_terms: int = DEFAULT_MAX_TERMS,
    first_chunk: int = 256,
    window: int = 16,
    index_offset: int = 1,
) -> SeriesResult:
    """Sum a series of positive terms whose logarithms are produced on demand.

    Parameters
    ----------
    log_terms : callable
        ``log_terms(start, stop)`` returns the logarithms of terms with
        zero-based positions ``start .. stop-1``. ``-inf`` encodes a zero term.
    tol : float
        Absolute tolerance on the estimated tail.
    ceiling : float
        Partial sums (or single terms) above this value declare divergence.
    max_terms : int
        Probe limit.
    first_chunk : int
        Size of the first block; blocks double afterwards.
    window : int
        Number of trailing terms used for the ratio majorant.
    index_offset : int
        Natural index of the term at position 0, used by the power-law tail.

    Returns
    -------
    SeriesResult

    Notes
    -----
    The tail after term ``t_m`` is bounded by ``t_m * rho / (1 - rho)`` where
    ``rho`` is the largest ratio between consecutive terms over the trailing
    window. This is a true majorant when the ratios are non-increasing, and a
    close estimate for the slowly varying ratios met here. If the probe limit
    is reached with ``rho >= 1`` and the last term is no smaller than the
    last term of the previous block, the terms do not tend to zero and the
    series is reported divergent; otherwise the result is indeterminate.

    Series whose terms decay like a power ``j**-p`` never pass the ratio
    test. When the exponent measured between consecutive block ends is
    stable and exceeds one, the tail ``sum_{j>m} t_j`` is added in its
    Euler-Maclaurin form ``t_m (m/(p-1) - 1/2)``; the next correction
    ``t_m p / (12 m)`` serves as the error estimate.
    """
    log_ceiling = math.log(ceiling)
    chunks = []
    total = 0.0
    start = 0
    size = first_chunk
    tail_lt = np.empty(0)
    history = []
    while start < max_terms:
        stop = min(start + size, max_terms)
        lt = np.asarray(log_terms(start, stop), dtype=float)
        if np.any(np.isnan(lt)):
            raise FloatingPointError("NaN encountered in series terms")
        if lt.size and lt.max() > log_ceiling:
            return SeriesResult(math.inf, stop, math.inf, DIVERGENT)
        t = np.exp(lt)
        chunks.append(float(t.sum()))
        total = math.fsum(chunks)
        if total > ceiling:
            return SeriesResult(math.inf, stop, math.inf, DIVERGENT)
        tail_lt = np.concatenate([tail_lt, lt])[-(window + 1):]
        history.append((stop, float(lt[-1]) if lt.size else -math.inf))
        start = stop
        size *= 2
        last = tail_lt[-1]
        if not np.isfinite(last):
            # trailing zero terms: a zero term stays zero only for rules
            # with vanishing coagulation, in which case every later term
            # vanishes too
            return SeriesResult(total, start, 0.0, CONVERGED)
        diffs = np.diff(tail_lt)
        rho = math.exp(float(diffs.max())) if diffs.size else 1.0
        if rho < 1.0:
            tail = math.exp(last) * rho / (1.0 - rho)
            if tail < tol:
                return SeriesResult(total, start, tail, CONVERGED)
        if len(history) >= 3 and start >= 1024:
            (m0, l0), (m1, l1), (m2, l2) = history[-3:]
            j0, j1, j2 = (m + index_offset - 1 for m in (m0, m1, m2))
            p_old = -(l1 - l0) / math.log(j1 / j0)
            p_new = -(l2 - l1) / math.log(j2 / j1)
            if p_new > 1.05 and abs(p_new - p_old) < 1e-3 * p_new:
                t_last = math.exp(l2)
                err = t_last * p_new / (12.0 * j2)
                if err < tol * max(1.0, total):
                    tail = t_last * (j2 / (p_new - 1.0) - 0.5)
                    return SeriesResult(total + tail, start, tail, CONVERGED)
    # probe limit reached
    last = float(tail_lt[-1])
    diffs = np.diff(tail_lt)
    rho = math.exp(float(diffs.max())) if diffs.size else 1.0
    not_decaying = len(history) >= 2 and history[-1][1] >= history[-2][1] - 1e-12
    if rho >= 1.0 and not_decaying:
        return SeriesResult(math.inf, max_terms, math.inf, DIVERGENT)
    tail = math.exp(last) * rho / (1.0 - rho) if rho < 1.0 else math.inf
    return SeriesResult(total, max_terms, tail, INDETERMINATE)
