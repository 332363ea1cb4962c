import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dipole_crb import cpl
from dipole_crb.em_field import DipoleSource, ObservationSurface
from dipole_crb.errors import SingularInformation
from dipole_crb.fim import (FisherMatrix, assemble_fim, crb_known, crb_report, crb_unknown,
                            delta_rcrb, field_jacobian, mil_residual, sigma2_from_snr,
                            snr_from_sigma2)
from dipole_crb.validation import jacobian_fd_error, random_source

# Independent oracle: scipy dblquad over the full square of the finite-difference
# (h = 1e-5) Gram integrand, epsrel 1e-10.  Accurate to ~1e-7 relative.
ORACLE_SOURCE = dict(position=(2.0, 0.4, -0.3), orientation=(0.3, -0.5, 0.8),
                     wavelength=0.1, current=1.0, length=0.025)
ORACLE_ENTRIES = {(3, 3): 3543995.2484313287, (4, 5): -93615.61929743072,
                  (2, 3): -370.91030132121386}


def cpl_source(L=3.0, x=6.0, lam=0.01, t=(0.0, 0.0, 1.0)):
    return DipoleSource((x, 0.0, 0.0), t, wavelength=lam)


@pytest.fixture(scope="module")
def cpl_fim():
    s = cpl_source()
    return assemble_fim(s, ObservationSurface(3.0), sigma2_from_snr(s.chi, 10.0))


def test_snr_conversions_roundtrip():
    assert snr_from_sigma2(3.0, 2.0) == 9.0
    assert sigma2_from_snr(3.0, snr_from_sigma2(3.0, 0.7)) == pytest.approx(0.7)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(30):
        s = random_source(rng)
        err, _, _ = jacobian_fd_error(s, *rng.uniform(-3, 3, size=2))
        assert err <= 1e-6


def test_jacobian_on_axis_tz_entry():
    s = cpl_source()
    J = field_jacobian(s, 0.0, 0.0)
    assert J[2, 2] == pytest.approx(-1j * s.chi * np.exp(-1j * s.k * 6) / 6, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_orientation_block_symmetric(seed):
    rng = np.random.default_rng(seed)
    s = random_source(rng)
    J = field_jacobian(s, *rng.uniform(-3, 3, size=2))
    assert np.allclose(J[:, :3], J[:, :3].T, rtol=0, atol=1e-14 * np.max(np.abs(J[:, :3])))


def test_against_independent_oracle():
    s = DipoleSource.oriented(ORACLE_SOURCE["position"], ORACLE_SOURCE["orientation"],
                              wavelength=0.1, current=1.0, length=0.025)
    F = assemble_fim(s, ObservationSurface(1.0), 1.0, rel_tol=1e-10).matrix
    for (m, n), v in ORACLE_ENTRIES.items():
        assert F[m, n] == pytest.approx(v, rel=1e-6)
        assert F[n, m] == F[m, n]


def test_cpl_block_structure(cpl_fim):
    for blk in (cpl_fim.F_tt, cpl_fim.F_cc):
        off = blk - np.diag(np.diag(blk))
        assert np.max(np.abs(off)) <= 1e-8 * np.linalg.norm(np.diag(blk))


def test_cpl_matches_closed_form(cpl_fim):
    G = cpl.fim_cpl(cpl.CplParams.from_geometry(3.0, 0.01, 6.0, 10.0)).matrix
    nz = G != 0
    assert np.max(np.abs(cpl_fim.matrix[nz] / G[nz] - 1)) <= 1e-6
    assert np.allclose(np.diag(cpl_fim.F_cc), np.diag(G[3:, 3:]), rtol=1e-6)


def test_sigma2_scaling_is_exact():
    s = cpl_source(L=1.0, lam=0.1, x=2.0)
    a = assemble_fim(s, ObservationSurface(1.0), 1.0).matrix
    b = assemble_fim(s, ObservationSurface(1.0), 4.0).matrix
    assert np.array_equal(a / 4.0, b)


def test_symmetric_positive_definite():
    rng = np.random.default_rng(3)
    for _ in range(5):
        s = random_source(rng, wavelength=(0.05, 0.3))
        F = assemble_fim(s, ObservationSurface(rng.uniform(0.5, 4)), 1.0).matrix
        assert np.array_equal(F, F.T)
        assert np.min(np.linalg.eigvalsh(F)) > 0


def test_information_grows_with_surface():
    s = random_source(np.random.default_rng(11), wavelength=(0.05, 0.2))
    prev = None
    for L in (0.5, 1.0, 2.0, 4.0):
        F = assemble_fim(s, ObservationSurface(L), 1.0).matrix
        if prev is not None:
            assert np.min(np.linalg.eigvalsh(F - prev)) >= -1e-8 * np.max(np.diag(F))
        prev = F


def test_z_only_component_has_less_information():
    s = cpl_source(L=2.0, x=4.0, lam=0.1, t=(0.0, 1.0, 0.0))
    full = assemble_fim(s, ObservationSurface(2.0), 1.0).matrix
    z = assemble_fim(s, ObservationSurface(2.0), 1.0, components=(2,)).matrix
    assert np.min(np.linalg.eigvalsh(full - z)) >= -1e-8 * np.max(np.diag(full))


def test_crb_known_diagonal_example():
    M = np.zeros((6, 6))
    M[:3, :3] = np.eye(3)
    M[3:, 3:] = np.diag([2.0, 4.0, 8.0])
    assert np.allclose(crb_known(M), [0.5, 0.25, 0.125], rtol=1e-15)
    assert np.array_equal(crb_unknown(M), crb_known(M))
    assert np.all(delta_rcrb(M) == 0)
    assert mil_residual(M) <= 1e-15


def test_cpl_crbs_match_closed_forms(cpl_fim):
    rep = crb_report(cpl_fim)
    ref = cpl.crb_cpl(cpl.CplParams.from_geometry(3.0, 0.01, 6.0, 10.0))
    assert np.allclose(rep.crb_known, ref.crb_known, rtol=1e-6)
    assert np.allclose(rep.crb_unknown, ref.crb_unknown, rtol=1e-6)
    assert np.max(rep.crb_unknown / rep.crb_known - 1) < 1e-3
    assert rep.delta_rcrb[1] <= 1e-7
    assert rep.diagnostics["mil_residual"] <= 1e-8


def test_asymptotic_crb_x_at_rho_100():
    lam, snr = 0.01, 10.0
    x = 2.0
    s = cpl_source(x=x, lam=lam)
    F = assemble_fim(s, ObservationSurface(100 * x), sigma2_from_snr(s.chi, snr), rel_tol=1e-8)
    expect = lam ** 2 / (3 * math.pi ** 3 * snr)
    assert crb_known(F)[0] == pytest.approx(expect, rel=0.05)


def test_tilted_dipole_has_positive_x_loss():
    s = cpl_source(x=6.0, t=(1.0, 0.0, 0.0))
    F = assemble_fim(s, ObservationSurface(1.0), 1.0)
    assert delta_rcrb(F)[0] > 0


def random_spd(rng, n=6):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.5 * np.eye(n)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mil_and_ordering_on_random_spd(seed):
    M = random_spd(np.random.default_rng(seed))
    assert mil_residual(M) <= 1e-8
    assert np.all(crb_unknown(M) >= crb_known(M) * (1 - 1e-12))


def test_block_diagonal_mil_is_roundoff():
    M = random_spd(np.random.default_rng(0))
    M[:3, 3:] = 0
    M[3:, :3] = 0
    assert mil_residual(M) <= 1e-14


def test_singular_block_raises():
    M = np.eye(6)
    M[3:, 3:] = np.ones((3, 3))
    with pytest.raises(SingularInformation) as exc:
        crb_known(M)
    assert exc.value.condition_number > 1e12


def test_fisher_matrix_validation_and_scaling():
    with pytest.raises(ValueError):
        FisherMatrix(np.eye(5))
    F = FisherMatrix(np.eye(6), sigma2=2.0, abs_error=np.ones((6, 6)))
    G = F.scaled(3.0)
    assert np.array_equal(G.matrix, 3 * np.eye(6)) and G.sigma2 == pytest.approx(2 / 3)


def test_assemble_rejects_bad_sigma2():
    with pytest.raises(ValueError):
        assemble_fim(cpl_source(), ObservationSurface(1.0), 0.0)
