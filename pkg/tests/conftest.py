import numpy as np
import pytest

from bdkit.kinetics import DetailedBalance, build_model


def pow_frag(lam=10.0):
    """a_i = i^(1/2), b_i = i^(2/3)."""
    return build_model(("power", dict(a=1.0, alpha=0.5)), ("power", dict(a=1.0, alpha=2.0 / 3.0)), lam)


def affine_frag(lam=1.0):
    """a_i = i^(1/2), b_i = 0.1 + 0.75 i^(1/2)."""
    return build_model(("power", dict(a=1.0, alpha=0.5)), ("affine", dict(c=0.1, d=0.75, beta=0.5)), lam)


def weak_frag(lam=10.0):
    """a_i = i^(1/2), b_i = 0.05 + 0.1 i^(2/3)."""
    return build_model(("power", dict(a=1.0, alpha=0.5)), ("affine", dict(c=0.05, d=0.1, beta=2.0 / 3.0)), lam)


def constant_model(a=1.0, b=1.0, lam=0.5):
    return build_model(("constant", dict(a=a)), ("constant", dict(a=b)), lam)


def linear_model(a=1.0, b=1.0, lam=0.5):
    return build_model(("power", dict(a=a, alpha=1.0)), ("power", dict(a=b, alpha=1.0)), lam)


MODELS = {"pow_frag": pow_frag, "affine_frag": affine_frag, "weak_frag": weak_frag}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=sorted(MODELS))
def preset_model(request):
    model = MODELS[request.param]()
    return request.param, model, DetailedBalance(model)


def random_bound_case(rng, n=64):
    """Random sub-critical model and initial state meeting the bound hypotheses.

    Coagulation a i^alpha with alpha in [0, 1], fragmentation c + d i, and
    kappa kept below 0.9 inf(b_i / a_i).
    """
    from bdkit.diagnostics import frag_coag_floor
    from bdkit.kinetics import AffineRule, PowerRule, RateModel

    a = rng.uniform(0.5, 2.0)
    alpha = rng.uniform(0.0, 1.0)
    c = rng.uniform(0.5, 2.0)
    d = rng.uniform(0.5, 2.0)
    model = RateModel(PowerRule(a, alpha), AffineRule(c, d, 1.0), 0.0)
    kmax = 0.9 * frag_coag_floor(model)
    model = model.with_lambda(rng.uniform(0.05, 1.0) * 2.0 * a * kmax**2)
    C0 = np.zeros(n)
    if rng.random() < 0.5:
        C0[:8] = rng.uniform(0.0, 0.2, 8) * np.exp(-np.arange(8))
        C0[0] = min(C0[0], kmax)
    return model, C0


ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    line = f"ACCEPTANCE {criterion:<3} {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
