import math

import numpy as np
import pytest

from bdkit.equilibria import (
    GammaSeries,
    classify_regime,
    equilibrium_map,
    negative_flux_lhs,
    negative_flux_profile,
    solve_monomer_equilibrium,
    truncated_monomer_equilibrium,
    truncated_series,
    zero_flux_profile,
)
from bdkit.errors import RegimeViolationError, SupercriticalError
from bdkit.kinetics import DetailedBalance, build_model
from bdkit.rd_scheme import Mesh, build_log_mesh

from conftest import affine_frag, constant_model, pow_frag, weak_frag


def strong_frag(lam=0.1):
    return build_model(("constant", dict(a=1.0)), ("power", dict(a=1.0, alpha=2.0)), lam)


def test_reference_monomer_densities():
    assert solve_monomer_equilibrium(DetailedBalance(pow_frag()), 10.0) == pytest.approx(1.1186750502727731, rel=1e-10)
    assert solve_monomer_equilibrium(DetailedBalance(affine_frag()), 1.0) == pytest.approx(0.5150679356089982, rel=1e-10)


def test_constant_rule_closed_form():
    # a = b = 1: F(z) = z^2 + z^2 / (1 - z)
    db = DetailedBalance(constant_model(1.0, 1.0))
    for z in (0.1, 0.5, 0.9):
        assert equilibrium_map(db, z) == pytest.approx(z * z + z * z / (1 - z), rel=1e-10)
    z = solve_monomer_equilibrium(db, 0.5)
    assert z * z + z * z / (1 - z) == pytest.approx(0.5, rel=1e-10)


def test_monotone_in_lambda(preset_model):
    _, model, db = preset_model
    zs = [solve_monomer_equilibrium(db, lam) for lam in (0.1, 0.5, 1.0, 2.0)]
    assert all(np.diff(zs) > 0)


def test_zero_lambda():
    assert solve_monomer_equilibrium(DetailedBalance(pow_frag()), 0.0) == 0.0


def test_supercritical_raises():
    db = DetailedBalance(affine_frag())
    with pytest.raises(SupercriticalError):
        solve_monomer_equilibrium(db, 30.0)
    assert classify_regime(db, 30.0).comparison == "supercritical"


def test_critical_returns_z_s():
    db = DetailedBalance(affine_frag())
    assert solve_monomer_equilibrium(db, db.lambda_s) == 0.75


@pytest.mark.parametrize("factory", [pow_frag, affine_frag, weak_frag])
def test_zero_flux_profile_has_zero_flux(factory):
    model = factory()
    db = DetailedBalance(model)
    z = solve_monomer_equilibrium(db, model.lam)
    prof = zero_flux_profile(db, z, 500).profile
    i = np.arange(1, 500)
    J = model.a(i) * z * prof[:-1] - model.b(i + 1) * prof[1:]
    scale = model.a(i) * z * prof[:-1]
    assert np.max(np.abs(J) / scale) <= 1e-12


def test_uniqueness_classification():
    assert classify_regime(DetailedBalance(pow_frag()), 10.0).uniqueness == "unique"
    assert classify_regime(DetailedBalance(strong_frag()), 0.1).uniqueness == "infinite_family"


def test_negative_flux_requires_strong_fragmentation():
    with pytest.raises(RegimeViolationError):
        negative_flux_profile(DetailedBalance(pow_frag()), 10.0, -0.01, 10)


@pytest.mark.parametrize("J", [-0.05, -0.02, -0.01, -0.005, -0.001])
def test_negative_flux_profile(J):
    model = strong_frag()
    db = DetailedBalance(model)
    gam = GammaSeries(db)
    st = negative_flux_profile(db, 0.1, J, 100, gamma=gam)
    z, C = st.z, st.profile
    i = np.arange(1, 100)
    flux = model.a(i) * z * C[:-1] - model.b(i + 1) * C[1:]
    assert np.max(np.abs(flux - J)) <= 1e-10 * abs(J)
    assert abs(negative_flux_lhs(db, gam, z, -J) - 0.1) <= 1e-10


def test_truncated_series_uniform_mesh_is_truncated_F():
    model = pow_frag()
    db = DetailedBalance(model)
    n, z = 64, 0.9
    i = np.arange(1, n)
    direct = float(np.sum(model.a(i) * np.exp(db.log_q(i)) * z ** (i + 1))) + z * z
    assert truncated_series(db, Mesh.uniform(n), z) == pytest.approx(direct, rel=1e-13)


def test_coarse_equilibrium_close_to_uniform():
    db = DetailedBalance(pow_frag())
    zu = truncated_monomer_equilibrium(db, 10.0, Mesh.uniform(4096))
    zc = truncated_monomer_equilibrium(db, 10.0, build_log_mesh(4096, 16))
    assert abs(zu - zc) < 1e-7
    assert zu == pytest.approx(1.1186750502727731, rel=1e-12)
