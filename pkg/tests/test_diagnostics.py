import math

import numpy as np
import pytest

from bdkit.diagnostics import (
    bound_ledger,
    c1_floor,
    compare_runs,
    exp_moment,
    kappa,
    log_linear_fit,
    mass_bound,
    monitor_trajectory,
    power_moment,
    relative_sup_error,
    weak_form_residual,
    xi1_bound,
)
from bdkit.errors import BoundUndefinedError, ResampleRequiredError
from bdkit.kinetics import build_model
from bdkit.ode_sim import Trajectory, TruncatedState, advisory_dt, integrate

from conftest import pow_frag, random_bound_case


def test_moments():
    C = np.array([1.0, 2.0, 3.0])
    assert power_moment(C, 0) == 6.0
    assert power_moment(C, 1) == 14.0
    assert exp_moment(C, 0.5) == pytest.approx(sum(c * math.exp(0.5 * i) for i, c in enumerate(C, 1)))
    assert math.isinf(exp_moment(np.ones(5000), 1.0))


def test_kappa():
    m = pow_frag(lam=8.0)
    assert kappa(m, 0.0) == 2.0
    assert kappa(m, 3.0) == 3.0
    zero = build_model(("table", dict(table=(0.0, 1.0))), ("constant", dict(a=1.0)), 1.0)
    with pytest.raises(BoundUndefinedError):
        kappa(zero, 0.0)


def test_inapplicable_bounds_are_flagged():
    m = pow_frag()  # fragmentation exponent 2/3 < 1
    assert not mass_bound(m, np.zeros(8)).applicable
    assert not c1_floor(pow_frag(lam=0.0), np.zeros(8)).applicable


def test_xi1_needs_admissible_nu():
    model, C0 = random_bound_case(np.random.default_rng(3))
    res = xi1_bound(model, C0)
    assert res.applicable and res.value > 0
    assert 0 < res.params["nu"]


def test_monitor_on_random_cases(rng):
    for _ in range(5):
        model, C0 = random_bound_case(rng)
        tr = integrate(TruncatedState(C0), model, advisory_dt(model, 64, C0[0]), 10.0, observers=("profile",), stride=10)
        led = monitor_trajectory(tr, model, C0)
        verdicts = {name: v for name, _, _, v in led.rows()}
        for name in ("kappa", "mass", "xi1"):
            assert verdicts[name] == "ok", (name, led.max_violation)
        assert C0.sum() == C0.sum()  # input untouched


def test_monitor_detects_violation():
    model, C0 = random_bound_case(np.random.default_rng(5))
    led = bound_ledger(model, C0)
    tr = Trajectory()
    tr.record(0.0, {"C1": 10 * led.kappa.value, "M1": 0.0})
    out = monitor_trajectory(tr, model, C0)
    assert out.violated()
    assert out.max_violation["kappa"] == pytest.approx(9 * led.kappa.value)


def test_weak_form_residual_small():
    tr = integrate(TruncatedState.empty(32), pow_frag(), 1e-3, 0.2, observers=("profile",), stride=1)
    res = weak_form_residual(tr, pow_frag(), np.arange(1, 33, dtype=float))
    assert res < 1e-6


def test_relative_error_and_compare():
    assert relative_sup_error(np.array([2.0, 4.0]), np.array([2.0, 3.0])) == 0.25
    a, b = Trajectory(), Trajectory()
    for t in (0.0, 1.0):
        a.record(t, {"profile": np.array([1.0, 2.0, 3.0])})
        b.record(t, {"profile": np.array([1.0, 3.0])})
    a.meta["sizes"] = np.array([1, 2, 3])
    b.meta["sizes"] = np.array([1, 3])
    res = compare_runs(a, b)
    np.testing.assert_array_equal(res.sizes, [1, 3])
    assert res.rel_error[0] == 0.0
    c = Trajectory()
    c.record(0.5, {"profile": np.array([1.0, 3.0])})
    c.meta["sizes"] = np.array([1, 3])
    with pytest.raises(ResampleRequiredError):
        compare_runs(a, c)


def test_log_linear_fit():
    t = np.linspace(0, 10, 50)
    rate, r2 = log_linear_fit(t, 3.0 * np.exp(-0.7 * t))
    assert rate == pytest.approx(0.7)
    assert r2 == pytest.approx(1.0)


def test_xi1_printed_constant_counterexample():
    # a config where the default e^-1 constant is crossed but the constant
    # obtained from Gronwall's lemma holds
    rng = np.random.default_rng(7)
    for _ in range(71):
        model, C0 = random_bound_case(rng)
    tr = integrate(TruncatedState(C0), model, advisory_dt(model, 64, C0[0]), 20.0, observers=("profile",), stride=10)
    printed = xi1_bound(model, C0)
    derived = xi1_bound(model, C0, gronwall_factor=1.0)
    peak = max(exp_moment(p, printed.params["nu"]) for p in tr.data["profile"])
    assert printed.value < peak < derived.value
    assert derived.value - printed.value == pytest.approx((derived.value - exp_moment(C0, printed.params["nu"])) * (1 - math.exp(-1)))
