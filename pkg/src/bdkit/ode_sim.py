"""Truncated Becker-Doring system and a fixed-step RK4 integrator.

With J_i = a_i C_1 C_i - b_{i+1} C_{i+1}, the conservative truncation at size
n uses

    dC_1/dt = lambda - C_1 sum_{j=1}^{n-1} a_j C_j - a_1 C_1^2,
    dC_i/dt = J_{i-1} - J_i            (1 < i < n),
    dC_n/dt = J_{n-1}.

The non-conservative truncation adds the outflow J_n = a_n C_1 C_n at the top
and extends the C_1 sum to n.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import IndexRangeError, StepSizeError
from .kinetics import RateModel

logger = logging.getLogger(__name__)

CONSERVATIVE = "conservative"
NONCONSERVATIVE = "nonconservative"

NEG_TOL = 1e-13


@dataclass
class TruncatedState:
    """Concentrations C_1..C_n at time t (``C[i - 1] = C_i``)."""

    C: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=float)
        if self.C.ndim != 1 or self.C.size < 3:
            raise ValueError("a truncated state needs at least three sizes")

    @property
    def n(self) -> int:
        return self.C.size

    @classmethod
    def empty(cls, n: int) -> "TruncatedState":
        return cls(np.zeros(n), 0.0)


class TruncatedRates:
    """Rate arrays a_1..a_n and b_1..b_n of a model, cached for one size n."""

    def __init__(self, model: RateModel, n: int):
        idx = np.arange(1, n + 1, dtype=float)
        self.model = model
        self.n = n
        self.lam = float(model.lam)
        self.a = model.a(idx)
        self.b = model.b(idx)


_rate_cache: Dict[tuple, TruncatedRates] = {}


def _rates(model: RateModel, n: int) -> TruncatedRates:
    key = (id(model), n)
    r = _rate_cache.get(key)
    if r is None or r.model is not model:
        if len(_rate_cache) > 64:
            _rate_cache.clear()
        r = TruncatedRates(model, n)
        _rate_cache[key] = r
    return r


def flux(state: TruncatedState, model: RateModel, i: int) -> float:
    """J_i = a_i C_1 C_i - b_{i+1} C_{i+1} for 1 <= i <= n-1."""
    if not 1 <= i <= state.n - 1:
        raise IndexRangeError(f"flux index must be in [1, {state.n - 1}], got {i}")
    C = state.C
    return float(model.coag(i) * C[0] * C[i - 1] - model.frag(i + 1) * C[i])


def fluxes(C: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vector J_1..J_{n-1}."""
    return a[:-1] * C[0] * C[:-1] - b[1:] * C[1:]


def _rhs(C: np.ndarray, r: TruncatedRates, which: str) -> np.ndarray:
    a, b = r.a, r.b
    J = a[:-1] * C[0] * C[:-1] - b[1:] * C[1:]
    out = np.empty_like(C)
    out[1:-1] = J[:-1] - J[1:]
    if which == CONSERVATIVE:
        out[0] = r.lam - C[0] * np.dot(a[:-1], C[:-1]) - a[0] * C[0] * C[0]
        out[-1] = J[-1]
    elif which == NONCONSERVATIVE:
        out[0] = r.lam - C[0] * np.dot(a, C) - a[0] * C[0] * C[0]
        out[-1] = J[-1] - a[-1] * C[0] * C[-1]
    else:
        raise ValueError(f"unknown truncation {which!r}")
    return out


def rhs_conservative(state: TruncatedState, model: RateModel) -> np.ndarray:
    """Derivative of the conservative truncation."""
    return _rhs(state.C, _rates(model, state.n), CONSERVATIVE)


def rhs_nonconservative(state: TruncatedState, model: RateModel) -> np.ndarray:
    """Derivative of the non-conservative truncation."""
    return _rhs(state.C, _rates(model, state.n), NONCONSERVATIVE)


def weak_form_rhs(C: np.ndarray, model: RateModel, phi: np.ndarray, which: str = CONSERVATIVE) -> float:
    """Right side of the truncated weak form for test weights ``phi``.

    ``d/dt sum phi_i C_i = lambda phi_1 - phi_2 b_2 C_2
    + sum_{i<n} (phi_{i+1} - phi_i - phi_1) a_i C_1 C_i
    + sum_{i=3}^{n} (phi_{i-1} - phi_i) b_i C_i``,
    with the non-conservative outflow ``-(phi_n + phi_1) a_n C_1 C_n`` added
    for that truncation.
    """
    C = np.asarray(C, dtype=float)
    n = C.size
    phi = np.asarray(phi, dtype=float)
    r = _rates(model, n)
    a, b = r.a, r.b
    val = r.lam * phi[0] - phi[1] * b[1] * C[1]
    val += np.sum((phi[1:] - phi[:-1] - phi[0]) * a[:-1] * C[0] * C[:-1])
    val += np.sum((phi[1:-1] - phi[2:]) * b[2:] * C[2:])
    if which == NONCONSERVATIVE:
        val -= (phi[-1] + phi[0]) * a[-1] * C[0] * C[-1]
    return float(val)


def advisory_dt(model: RateModel, n: int, C1_init: float = 0.0) -> float:
    """Stability estimate dt <= 1 / max_i(a_i kappa + b_i)."""
    r = _rates(model, n)
    kappa = max(C1_init, math.sqrt(r.lam / (2.0 * r.a[0]))) if r.a[0] > 0 else C1_init
    top = float(np.max(r.a * kappa + r.b))
    return 1.0 / top if top > 0 else math.inf


def _rk4(C: np.ndarray, r: TruncatedRates, dt: float, which: str) -> np.ndarray:
    k1 = _rhs(C, r, which)
    k2 = _rhs(C + 0.5 * dt * k1, r, which)
    k3 = _rhs(C + 0.5 * dt * k2, r, which)
    k4 = _rhs(C + dt * k3, r, which)
    out = C + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    lo = out.min()
    if lo < 0.0:
        tol_neg = NEG_TOL * max(float(out.max()), 0.0)
        if lo < -tol_neg:
            raise StepSizeError(
                f"RK4 step produced C_{int(np.argmin(out)) + 1} = {lo:.3e}; reduce dt (now {dt:g})"
            )
        np.maximum(out, 0.0, out=out)
    return out


def rk4_step(state: TruncatedState, model: RateModel, dt: float, which_rhs: str = CONSERVATIVE) -> TruncatedState:
    """One classical RK4 step.

    Raises
    ------
    StepSizeError
        If a concentration drops below ``-1e-13 * max(C)``; smaller negative
        values are clamped to zero.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    r = _rates(model, state.n)
    return TruncatedState(_rk4(state.C, r, dt, which_rhs), state.t + dt)


# ---------------------------------------------------------------------------
# observers and trajectories
# ---------------------------------------------------------------------------

Observer = Callable[[float, np.ndarray], Dict[str, Union[float, np.ndarray]]]


def observe_c1(t, C):
    return {"C1": float(C[0])}


def observe_moments(t, C):
    i = np.arange(1, C.size + 1)
    return {"M0": float(C.sum()), "M1": float(np.dot(i, C))}


def observe_profile(t, C):
    return {"profile": C.copy()}


def make_error_observer(reference: np.ndarray, nodes: Optional[np.ndarray] = None) -> Observer:
    """Observer of the sup-norm distance to a reference profile."""
    ref = np.asarray(reference, dtype=float)

    def observe_error(t, C):
        x = C if nodes is None else C[np.asarray(nodes) - 1]
        return {"error": float(np.max(np.abs(x - ref)))}

    return observe_error


def make_nodes_observer(nodes: np.ndarray) -> Observer:
    """Observer of the concentrations at selected sizes."""
    idx = np.asarray(nodes, dtype=np.int64) - 1

    def observe_nodes(t, C):
        return {"profile": C[idx].copy()}

    observe_nodes.sizes = idx + 1
    return observe_nodes


NAMED_OBSERVERS = {"c1": observe_c1, "moments": observe_moments, "profile": observe_profile}


@dataclass
class Trajectory:
    """Sampled observables.

    Attributes
    ----------
    times : list of float
        Strictly increasing sample times.
    data : dict
        Observable name to list of samples (floats or arrays).
    meta : dict
        Free-form run information (scheme, sizes, step counts).
    """

    times: List[float] = field(default_factory=list)
    data: Dict[str, list] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)

    def record(self, t: float, values: Dict[str, object]) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("sample times must increase strictly")
        self.times.append(float(t))
        for k, v in values.items():
            self.data.setdefault(k, []).append(v)

    def series(self, name: str) -> np.ndarray:
        return np.asarray(self.data[name])

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.times)


def resolve_observers(observers: Optional[Sequence]) -> List[Observer]:
    out = []
    for ob in observers or ():
        if isinstance(ob, str):
            try:
                out.append(NAMED_OBSERVERS[ob])
            except KeyError:
                raise ValueError(f"unknown observer {ob!r}") from None
        else:
            out.append(ob)
    return out


def _sample(traj: Trajectory, obs: List[Observer], t: float, C: np.ndarray) -> None:
    values: Dict[str, object] = {}
    for ob in obs:
        values.update(ob(t, C))
    traj.record(t, values)


def integrate(
    state: TruncatedState,
    model: RateModel,
    dt: float,
    T: float,
    observers: Optional[Sequence] = ("c1",),
    stride: int = 1,
    which_rhs: str = CONSERVATIVE,
) -> Trajectory:
    """Integrate with fixed-step RK4 up to time ``T``.

    The number of steps is ``ceil(T / dt)`` (rounded to the nearest integer
    when T/dt is within 1e-9 of one); the final step is not shortened, so the
    last sample time is ``t0 + steps * dt``. Observers are called at the start
    and after every ``stride`` steps, plus at the final step.

    Returns
    -------
    Trajectory
        ``meta`` holds ``steps``, ``dt``, ``n`` and the final state under
        ``"final"``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < 0:
        raise ValueError("T must be non-negative")
    r = _rates(model, state.n)
    obs = resolve_observers(observers)
    steps = _step_count(T, dt)
    logger.info("rk4: n=%d dt=%g steps=%d advisory dt=%g", state.n, dt, steps, advisory_dt(model, state.n, state.C[0]))
    traj = Trajectory(meta={"scheme": "rk4", "n": state.n, "dt": dt, "steps": steps, "truncation": which_rhs})
    traj.meta["sizes"] = np.arange(1, state.n + 1)
    for ob in obs:
        if hasattr(ob, "sizes"):
            traj.meta["sizes"] = np.asarray(ob.sizes)
    C = state.C.copy()
    t0 = state.t
    _sample(traj, obs, t0, C)
    for k in range(1, steps + 1):
        C = _rk4(C, r, dt, which_rhs)
        if k % stride == 0 or k == steps:
            _sample(traj, obs, t0 + k * dt, C)
    traj.meta["final"] = TruncatedState(C, t0 + steps * dt)
    return traj


def _step_count(T: float, dt: float) -> int:
    q = T / dt
    nearest = round(q)
    if abs(q - nearest) <= 1e-9 * max(1.0, q):
        return int(nearest)
    return int(math.ceil(q))
