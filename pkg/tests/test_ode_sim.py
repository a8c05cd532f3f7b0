import numpy as np
import pytest

from bdkit.equilibria import truncated_monomer_equilibrium
from bdkit.errors import IndexRangeError, StepSizeError
from bdkit.kinetics import DetailedBalance
from bdkit.ode_sim import (
    NONCONSERVATIVE,
    TruncatedState,
    advisory_dt,
    flux,
    integrate,
    make_error_observer,
    rhs_conservative,
    rhs_nonconservative,
    rk4_step,
    weak_form_rhs,
)
from bdkit.rd_scheme import Mesh, mesh_equilibrium

from conftest import constant_model, pow_frag


def test_rhs_hand_computed():
    # a = b = 1, lambda = 0.5, C = (1, 2, 3): J_1 = 1 - 2 = -1, J_2 = 2 - 3 = -1
    m = constant_model(1.0, 1.0, 0.5)
    st = TruncatedState(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(rhs_conservative(st, m), [0.5 - 1 * (1 + 2) - 1, 0.0, -1.0])
    np.testing.assert_allclose(rhs_nonconservative(st, m), [0.5 - 6 - 1, 0.0, -1.0 - 3.0])
    assert flux(st, m, 1) == -1.0
    with pytest.raises(IndexRangeError):
        flux(st, m, 3)


def test_weak_form_matches_rhs(rng):
    m = pow_frag()
    C = rng.random(50)
    phi = rng.random(50)
    for which, f in (("conservative", rhs_conservative), (NONCONSERVATIVE, rhs_nonconservative)):
        direct = float(np.dot(phi, f(TruncatedState(C), m)))
        assert weak_form_rhs(C, m, phi, which) == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_mass_balance_conservative(rng):
    # with phi_i = i the conservative truncation gives d/dt M_1 = lambda - sum_{i>=2} b_i C_i - a_1 C_1^2 ...
    m = pow_frag()
    C = rng.random(40)
    i = np.arange(1, 41)
    lhs = float(np.dot(i, rhs_conservative(TruncatedState(C), m)))
    assert lhs == pytest.approx(weak_form_rhs(C, m, i.astype(float)), rel=1e-12)


def test_rk4_converges_to_truncated_equilibrium():
    m = pow_frag()
    n = 64
    db = DetailedBalance(m)
    z = truncated_monomer_equilibrium(db, m.lam, Mesh.uniform(n))
    ref = mesh_equilibrium(db, Mesh.uniform(n), z)
    tr = integrate(TruncatedState.empty(n), m, 0.01, 60.0, observers=[make_error_observer(ref)], stride=100)
    err = tr.series("error")
    assert err[-1] < 1e-8
    assert tr.times[-1] == pytest.approx(60.0)
    assert tr.meta["steps"] == 6000


def test_rk4_fourth_order():
    m = pow_frag()
    C0 = np.zeros(16)
    C0[0] = 1.0
    finals = []
    for dt in (0.02, 0.01, 0.005):
        tr = integrate(TruncatedState(C0), m, dt, 1.0, observers=[], stride=10**9)
        finals.append(tr.meta["final"].C)
    ratio = np.max(np.abs(finals[0] - finals[1])) / np.max(np.abs(finals[1] - finals[2]))
    assert 12 < ratio < 20


def test_large_dt_raises():
    m = pow_frag()
    st = TruncatedState(np.full(32, 1.0))
    with pytest.raises(StepSizeError):
        for _ in range(50):
            st = rk4_step(st, m, 5.0 * advisory_dt(m, 32, 1.0))


def test_sampling_stride_and_final():
    tr = integrate(TruncatedState.empty(8), pow_frag(), 0.1, 1.05, stride=3)
    # 11 steps, samples at 0, 3, 6, 9 and the final step
    assert len(tr.times) == 5
    assert tr.times[-1] == pytest.approx(1.1)
