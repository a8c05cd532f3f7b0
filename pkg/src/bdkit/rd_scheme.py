"""Well-balanced coarse-grained implicit scheme on a non-uniform size mesh.

Cluster sizes are sampled at integer nodes 1 = n_1 < ... < n_K = n. Writing
s = sqrt(C_1^k), d_j = n_j - n_{j-1}, P_j = prod_{k=n_{j-1}+1}^{n_j} b_k/a_{k-1}
and A_j = a_{n_{j-1}} / dx_{j-1/2}, the flux across the half node j-1/2 is

    J_{j-1/2} = A_j (s^(d_j+1) C_{n_{j-1}} - P_j s^(1-d_j) C_{n_j}),

which vanishes on C_{n_j} = Q_{n_j} C_1^{n_j}. In the variables
h_j = C_{n_j} / sqrt(M_j), M_j = Q_{n_j} (C_1^k)^{n_j}, one implicit Euler
step becomes the tridiagonal system (I - dt W) H* = H + beta. Its matrix is
symmetric after multiplication by diag(dx_j / dx_1). The monomer update is
implicit in C_1 and explicit in the quadrature of the coagulation sink.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .equilibria import truncated_monomer_equilibrium
from .errors import BDError, DegenerateStateError, SingularSystemError
from .kinetics import DetailedBalance, RateModel
from .ode_sim import Trajectory, _sample, _step_count, resolve_observers

logger = logging.getLogger(__name__)

DEFAULT_DENSITY = 6
DEFAULT_UNIT_SPAN = 46
PIVOT_FLOOR = 1e-300


class InvariantViolationError(BDError):
    """An exact inequality of the scheme failed beyond rounding slack."""


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mesh:
    """Node set with half-steps and cell widths.

    Attributes
    ----------
    nodes : numpy.ndarray
        Integers 1 = n_1 < ... < n_K = n.
    half_steps : numpy.ndarray
        dx_{j+1/2} = n_{j+1} - n_j, length K - 1.
    widths : numpy.ndarray
        dx_j = (n_{j+1} - n_{j-1}) / 2 with dx_1 = dx_{3/2}, dx_K = dx_{K-1/2}.
    """

    nodes: np.ndarray
    half_steps: np.ndarray = field(init=False)
    widths: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a mesh needs at least two nodes")
        if nodes[0] != 1:
            raise ValueError("the first node must be 1")
        dxh = np.diff(nodes)
        if np.any(dxh < 1):
            raise ValueError("nodes must be strictly increasing integers")
        widths = np.empty(nodes.size)
        widths[1:-1] = 0.5 * (nodes[2:] - nodes[:-2])
        widths[0] = dxh[0]
        widths[-1] = dxh[-1]
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "half_steps", dxh)
        object.__setattr__(self, "widths", widths)

    @property
    def K(self) -> int:
        return int(self.nodes.size)

    @property
    def n(self) -> int:
        return int(self.nodes[-1])

    @classmethod
    def uniform(cls, n: int) -> "Mesh":
        return cls(np.arange(1, n + 1))

    def first_coarse_node(self) -> Optional[int]:
        """n_l: first node whose forward half-step exceeds one."""
        big = np.nonzero(self.half_steps > 1)[0]
        return int(self.nodes[big[0]]) if big.size else None


def build_log_mesh(n: int, dx_max: int, density: int = DEFAULT_DENSITY, unit_span: int = DEFAULT_UNIT_SPAN) -> Mesh:
    """Mesh with unit steps at both ends, log-graded transitions and a cap.

    The left end holds the unit steps 1..unit_span. From there, points
    ``floor(unit_span * 10**(m / density))`` for m = 1, 2, ... are added
    (a point equal to the previous one is advanced by one unit) until a step
    would reach ``dx_max``. The interior uses steps of ``dx_max``. The right
    end mirrors the left grading and finishes with one unit step into n.

    Parameters
    ----------
    n : int
        Largest size, n >= 4.
    dx_max : int
        Largest half-step, 1 <= dx_max < n.
    density : int
        Log-spaced points per decade in the graded region.
    unit_span : int
        Extent of the unit-step region at the left end.

    Examples
    --------
    >>> build_log_mesh(30000, 50).K
    649
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    if dx_max < 1:
        raise ValueError("dx_max must be at least 1")
    if dx_max >= n:
        raise ValueError("dx_max must be smaller than n")
    if density < 1 or unit_span < 1:
        raise ValueError("density and unit_span must be positive")
    dx_max = int(dx_max)
    u = min(unit_span, n)
    left = list(range(1, u + 1))
    if dx_max > 1:
        ratio = 10.0 ** (1.0 / density)
        m = 0
        while True:
            m += 1
            nxt = max(int(math.floor(u * ratio**m)), left[-1] + 1)
            if nxt - left[-1] >= dx_max or nxt >= n:
                break
            left.append(nxt)
    grading = np.diff(left)[u - 1 :]
    right = [n, n - 1]
    for step in grading:
        right.append(right[-1] - int(step))
    right = right[::-1]
    if left[-1] >= right[0] or right[0] <= 1:
        # the two graded ends meet: keep each half on its own side
        mid = n / 2.0
        pts = sorted({p for p in left if p <= mid} | {p for p in right if p > mid} | {1, n})
        nodes = [pts[0]]
        for p in pts[1:]:
            while p - nodes[-1] > dx_max:
                nodes.append(nodes[-1] + dx_max)
            nodes.append(p)
        return Mesh(np.asarray(nodes))
    nodes = list(left)
    while nodes[-1] + dx_max < right[0]:
        nodes.append(nodes[-1] + dx_max)
    nodes.extend(right)
    return Mesh(np.asarray(nodes))


def mesh_equilibrium(db: DetailedBalance, mesh: Mesh, z: float) -> np.ndarray:
    """Discrete equilibrium Q_{n_j} z^{n_j} on the mesh nodes."""
    nodes = mesh.nodes
    if z <= 0:
        return np.zeros(mesh.K)
    out = np.exp(db.log_q(nodes) + nodes * math.log(z))
    out[0] = z
    return out


# ---------------------------------------------------------------------------
# tridiagonal solver
# ---------------------------------------------------------------------------


@dataclass
class TridiagonalSystem:
    """Tridiagonal system ``lower[k-1] x[k-1] + diag[k] x[k] + upper[k] x[k+1] = rhs[k]``.

    For the scheme, ``lower = -dt * gamma``, ``diag = 1 + dt * omega`` (with
    ``nu`` in the last row), ``upper = -dt * alpha`` and ``rhs = H + beta``.
    ``coefficients`` keeps the raw omega/nu, alpha and gamma arrays.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray
    coefficients: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.diag.size)

    def dense(self) -> np.ndarray:
        m = self.size
        A = np.diag(self.diag.astype(float))
        if m > 1:
            A[np.arange(1, m), np.arange(m - 1)] = self.lower
            A[np.arange(m - 1), np.arange(1, m)] = self.upper
        return A


def thomas(lower, diag, upper, rhs) -> np.ndarray:
    """Forward elimination and back substitution without pivoting.

    Raises
    ------
    SingularSystemError
        If a pivot falls below 1e-300 in magnitude.
    """
    d = np.asarray(diag, dtype=float).tolist()
    m = len(d)
    lo = np.asarray(lower, dtype=float).tolist()
    up = np.asarray(upper, dtype=float).tolist()
    r = np.asarray(rhs, dtype=float).tolist()
    if len(r) != m or len(lo) != m - 1 or len(up) != m - 1:
        raise ValueError("inconsistent tridiagonal dimensions")
    c = [0.0] * m
    g = [0.0] * m
    piv = d[0]
    if abs(piv) < PIVOT_FLOOR:
        raise SingularSystemError("zero pivot in row 0")
    if m > 1:
        c[0] = up[0] / piv
    g[0] = r[0] / piv
    for k in range(1, m):
        lk = lo[k - 1]
        piv = d[k] - lk * c[k - 1]
        if abs(piv) < PIVOT_FLOOR:
            raise SingularSystemError(f"zero pivot in row {k}")
        if k < m - 1:
            c[k] = up[k] / piv
        g[k] = (r[k] - lk * g[k - 1]) / piv
    x = g
    for k in range(m - 2, -1, -1):
        x[k] = g[k] - c[k] * x[k + 1]
    return np.asarray(x)


def tridiagonal_solve(sys: TridiagonalSystem) -> np.ndarray:
    """Solve a :class:`TridiagonalSystem` in O(size)."""
    return thomas(sys.lower, sys.diag, sys.upper, sys.rhs)


# ---------------------------------------------------------------------------
# scheme
# ---------------------------------------------------------------------------


class MeshCoefficients:
    """Time-independent pieces of the scheme for a (model, mesh) pair."""

    def __init__(self, model: RateModel, db: DetailedBalance, mesh: Mesh):
        nodes = mesh.nodes
        self.mesh = mesh
        self.model = model
        self.nodes = nodes
        self.d = mesh.half_steps.astype(float)
        with np.errstate(divide="ignore"):
            # log A_j = log a_{n_{j-1}} - log dx_{j-1/2}, for j = 2..K
            self.logA = np.log(model.a(nodes[:-1])) - np.log(self.d)
        # log P_j = -log(Q_{n_j} / Q_{n_{j-1}})
        self.logP = -np.atleast_1d(db.log_q_diff(nodes[:-1], nodes[1:]))
        self.widths = mesh.widths
        self.half_nodes = 0.5 * nodes[1:].astype(float)
        self.log_q_nodes = np.asarray(db.log_q(nodes), dtype=float)
        self.quad_weights = model.a(nodes[:-1]) * self.d  # a_{n_j} dx_{j+1/2}, j < K
        self.a1 = float(model.a(1))
        self.lam = float(model.lam)


_coef_cache: Dict[tuple, MeshCoefficients] = {}


def _coefficients(model, db, mesh) -> MeshCoefficients:
    key = (id(model), id(db), id(mesh))
    c = _coef_cache.get(key)
    if c is None or c.model is not model or c.mesh is not mesh:
        if len(_coef_cache) > 32:
            _coef_cache.clear()
        c = MeshCoefficients(model, db, mesh)
        _coef_cache[key] = c
    return c


@dataclass
class SchemeState:
    """State of the coarse scheme at time index k.

    Attributes
    ----------
    k : int
        Time index.
    t : float
        Time.
    c1 : float
        C_1^k.
    C : numpy.ndarray
        Node concentrations C_{n_j} for j = 2..K (length K - 1).
    log_sqrt_M : numpy.ndarray
        0.5 * (log Q_{n_j} + n_j log C_1^k) for j = 2..K.
    """

    k: int
    t: float
    c1: float
    C: np.ndarray
    log_sqrt_M: np.ndarray

    @property
    def h(self) -> np.ndarray:
        """h_j = C_{n_j} / sqrt(M_j); entries beyond floating range are ``inf``."""
        with np.errstate(divide="ignore", over="ignore"):
            return np.exp(np.log(self.C) - self.log_sqrt_M)

    @property
    def concentrations(self) -> np.ndarray:
        """Node concentrations C_{n_1} .. C_{n_K} (C_{n_1} = C_1)."""
        return np.concatenate([[self.c1], self.C])


def _log_sqrt_M(coef: "MeshCoefficients", c1: float) -> np.ndarray:
    return 0.5 * (coef.log_q_nodes[1:] + coef.nodes[1:] * math.log(c1))


def make_scheme_state(C_nodes: np.ndarray, db: DetailedBalance, mesh: Mesh, t: float = 0.0, k: int = 0) -> SchemeState:
    """Build a :class:`SchemeState` from node concentrations C_{n_1}..C_{n_K}."""
    C = np.array(C_nodes, dtype=float)
    if C.size != mesh.K:
        raise ValueError(f"expected {mesh.K} node values, got {C.size}")
    if np.any(C < 0) or not np.all(np.isfinite(C)):
        raise ValueError("concentrations must be finite and non-negative")
    c1 = float(C[0])
    if c1 > 0:
        nodes = mesh.nodes[1:]
        lsm = 0.5 * (np.asarray(db.log_q(nodes), dtype=float) + nodes * math.log(c1))
    else:
        if np.any(C[1:] > 0):
            raise DegenerateStateError("C_1 = 0 with clusters present: h-transform undefined")
        lsm = np.full(mesh.K - 1, -math.inf)
    return SchemeState(k, t, c1, C[1:], lsm)


def _edge_terms(coef: MeshCoefficients, c1: float):
    """Per-edge quantities for edges j - 1/2, j = 2..K."""
    logs = 0.5 * math.log(c1)
    d = coef.d
    plus = np.exp(coef.logA + (d + 1.0) * logs)  # A_j s^{d_j+1}
    minus = np.exp(coef.logA + coef.logP + (1.0 - d) * logs)  # A_j P_j s^{1-d_j}
    coup = np.exp(coef.logA + 0.5 * coef.logP + logs)  # A_j sqrt(P_j) s
    return plus, minus, coup


def _omega(coef: MeshCoefficients, plus, minus) -> np.ndarray:
    w = coef.widths
    omega = np.empty(coef.nodes.size - 1)
    omega[:-1] = (minus[:-1] + plus[1:]) / w[1:-1]
    omega[-1] = minus[-1] / w[-1]  # nu_{n_K}
    return omega


def assemble(state: SchemeState, model: RateModel, db: DetailedBalance, mesh: Mesh, dt: float, h1_star: Optional[float] = None) -> TridiagonalSystem:
    """Tridiagonal system (I - dt W^k) H* = H + beta^k at C_1^k.

    Rows correspond to nodes j = 2..K. The right-hand side uses ``state.h``.

    Parameters
    ----------
    state : SchemeState
    model, db, mesh
    dt : float
    h1_star : float, optional
        Coupling value h_1*. Defaults to the value produced by the monomer
        update of :func:`step_rd`.

    Raises
    ------
    DegenerateStateError
        If C_1^k <= 0.
    """
    if not state.c1 > 0:
        raise DegenerateStateError("assembly needs C_1^k > 0")
    coef = _coefficients(model, db, mesh)
    plus, minus, coup = _edge_terms(coef, state.c1)
    w = coef.widths
    omega = _omega(coef, plus, minus)
    alpha = coup[1:] / w[1:-1]  # alpha_{j+1/2}, rows j = 2..K-1
    gamma = coup / w[1:]  # gamma_{j-1/2}, rows j = 2..K
    if h1_star is None:
        h1_star = _monomer_update(state, coef, dt)[1]
    beta = np.zeros(mesh.K - 1)
    beta[0] = dt * gamma[0] * h1_star
    return TridiagonalSystem(
        lower=-dt * gamma[1:],
        diag=1.0 + dt * omega,
        upper=-dt * alpha,
        rhs=state.h + beta,
        coefficients={"omega": omega, "alpha": alpha, "gamma": gamma, "beta": beta},
    )


def assemble_concentration_form(state: SchemeState, model: RateModel, db: DetailedBalance, mesh: Mesh, dt: float, c1_new: float) -> TridiagonalSystem:
    """The same implicit step written for C_{n_j} instead of h_j.

    It is the diagonal similarity transform of :func:`assemble` by
    diag(sqrt(M_j)) and has the same solution after reconstruction; its
    entries never involve (C_1^k)^(n_j / 2).
    """
    coef = _coefficients(model, db, mesh)
    plus, minus, _ = _edge_terms(coef, state.c1)
    w = coef.widths
    omega = _omega(coef, plus, minus)
    lower_c = plus / w[1:]  # multiplies C_{n_{j-1}} in row j
    upper_c = minus[1:] / w[1:-1]  # multiplies C_{n_{j+1}} in row j
    rhs = state.C.copy()
    rhs[0] += dt * lower_c[0] * c1_new
    return TridiagonalSystem(
        lower=-dt * lower_c[1:],
        diag=1.0 + dt * omega,
        upper=-dt * upper_c,
        rhs=rhs,
        coefficients={"omega": omega},
    )


def _monomer_update(state: SchemeState, coef: MeshCoefficients, dt: float):
    sink = float(np.dot(coef.quad_weights[1:], state.C[:-1])) + coef.quad_weights[0] * state.c1
    sink += coef.a1 * state.c1
    c1_new = (state.c1 + dt * coef.lam) / (1.0 + dt * sink)
    h1_star = c1_new / math.sqrt(state.c1) if state.c1 > 0 else 0.0
    return c1_new, h1_star


H_RANGE = 700.0


def step_rd(state: SchemeState, model: RateModel, db: DetailedBalance, mesh: Mesh, dt: float) -> SchemeState:
    """One step of the well-balanced implicit scheme.

    (a) implicit-explicit monomer update; (b) h_1*; (c) tridiagonal solve at
    C_1^k; (d) reconstruction C = h* sqrt(M^k). When some h_j leaves the
    floating range (far from equilibrium at large sizes), the equivalent
    system for the concentrations is solved instead.

    The empty state (C_1 = 0 and no clusters) is advanced by injection alone,
    C_1 = dt * lambda, since the h-transform is undefined at C_1 = 0.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    coef = _coefficients(model, db, mesh)
    if not state.c1 > 0:
        if np.any(state.C != 0):
            raise DegenerateStateError("C_1 = 0 with clusters present")
        C = np.zeros(mesh.K)
        C[0] = dt * coef.lam
        return make_scheme_state(C, db, mesh, state.t + dt, state.k + 1)
    c1_new, h1_star = _monomer_update(state, coef, dt)
    if not c1_new > 0:
        raise DegenerateStateError("monomer concentration vanished")
    with np.errstate(divide="ignore"):
        log_h = np.log(state.C) - state.log_sqrt_M
    if np.max(log_h) < H_RANGE:
        sys = assemble(state, model, db, mesh, dt, h1_star=h1_star)
        h_star = tridiagonal_solve(sys)
        with np.errstate(divide="ignore", over="ignore"):
            C_new = np.sign(h_star) * np.exp(np.log(np.abs(h_star)) + state.log_sqrt_M)
    else:
        sys = assemble_concentration_form(state, model, db, mesh, dt, c1_new)
        C_new = tridiagonal_solve(sys)
    if not np.all(np.isfinite(C_new)):
        raise InvariantViolationError("concentrations left the floating-point range")
    if np.any(C_new < 0):
        lo = float(C_new.min())
        if lo < -1e-13 * float(np.max(np.abs(C_new))):
            raise InvariantViolationError(f"negative concentration {lo:.3e} after the implicit solve")
        np.maximum(C_new, 0.0, out=C_new)
    return SchemeState(state.k + 1, state.t + dt, c1_new, C_new, _log_sqrt_M(coef, c1_new))


def discrete_flux(C_nodes: np.ndarray, model: RateModel, db: DetailedBalance, mesh: Mesh) -> np.ndarray:
    """Fluxes J_{j-1/2}, j = 2..K, of the scheme at node concentrations ``C_nodes``.

    On the unit mesh these coincide with J_{n_j - 1} = a C_1 C - b C.
    """
    C = np.asarray(C_nodes, dtype=float)
    c1 = float(C[0])
    if not c1 > 0:
        raise DegenerateStateError("fluxes need C_1 > 0")
    coef = _coefficients(model, db, mesh)
    plus, minus, _ = _edge_terms(coef, c1)
    return plus * C[:-1] - minus * C[1:]


def simulate_rd(
    initial,
    model: RateModel,
    db: DetailedBalance,
    mesh: Mesh,
    dt: float,
    T: float,
    observers: Optional[Sequence] = ("c1",),
    stride: int = 1,
) -> Trajectory:
    """Run the scheme up to time ``T``.

    Parameters
    ----------
    initial : SchemeState or array
        Starting state, or node concentrations C_{n_1}..C_{n_K}.
    observers : sequence
        Names (``"c1"``, ``"moments"``, ``"profile"``) or callables
        ``f(t, C_nodes) -> dict``. Moments are over the node values only.

    Raises
    ------
    InvariantViolationError
        If C_1^k > C_1^0 + lambda t^k beyond 1e-12 relative slack.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    state = initial if isinstance(initial, SchemeState) else make_scheme_state(initial, db, mesh)
    obs = resolve_observers(observers)
    steps = _step_count(T, dt)
    traj = Trajectory(meta={"scheme": "rd", "n": mesh.n, "K": mesh.K, "dt": dt, "steps": steps, "sizes": mesh.nodes.copy()})
    c10 = state.c1
    t0 = state.t
    lam = float(model.lam)
    _sample(traj, obs, t0, state.concentrations)
    for k in range(1, steps + 1):
        state = step_rd(state, model, db, mesh, dt)
        bound = c10 + lam * (k * dt)
        if state.c1 > bound * (1.0 + 1e-12) + 1e-300:
            raise InvariantViolationError(f"C_1 = {state.c1} exceeds C_1^0 + lambda t = {bound}")
        if k % stride == 0 or k == steps:
            _sample(traj, obs, t0 + k * dt, state.concentrations)
    traj.meta["final"] = state
    return traj


def discrete_equilibrium_state(db: DetailedBalance, mesh: Mesh, lam: Optional[float] = None) -> SchemeState:
    """Scheme state at the coarse equilibrium Q_{n_j} z~^{n_j}."""
    lam = db.model.lam if lam is None else lam
    z = truncated_monomer_equilibrium(db, lam, mesh)
    return make_scheme_state(mesh_equilibrium(db, mesh, z), db, mesh)
