import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmd_eqd.oracle import (DiscreteDgp, MismatchedSupport, constant_functionals_fixture,
                            ex1_dgp, exact_gamma_mean, exact_phi, exact_psi,
                            exact_remainder_bounds, ex3_perturbation_pair, first_order_gradient,
                            h0_fixtures, h1_fixtures, random_ex3_fixture,
                            remainder_ex1_by_definition, run_identity_checks, same_distribution)
from mmd_eqd.nuisance import remainder_ex1


def two_atom(p):
    z = np.array([0.0, 1.0])
    return DiscreteDgp(w=z, y=z, probs=[1 - p, p], r=z, s=np.zeros(2), dr=np.zeros(2),
                       ds=np.zeros(2))


def test_two_atom_closed_forms():
    d = two_atom(0.5)
    assert exact_phi(d, "RR") == pytest.approx(0.5 + 0.5 * math.exp(-1), abs=1e-15)
    assert exact_psi(d) == pytest.approx(0.5 - 0.5 * math.exp(-1), abs=1e-15)
    assert exact_psi(d) == pytest.approx(0.316060, abs=1e-6)


@given(st.floats(0.0, 1.0))
def test_two_atom_psi_formula(p):
    # R in {0, 1} with P(R=1) = p against S == 0
    q, e = 1 - p, math.exp(-1)
    phi_rr = q * q + p * p + 2 * p * q * e
    phi_rs = q + p * e
    psi = exact_psi(two_atom(p))
    assert psi == pytest.approx(phi_rr - 2 * phi_rs + 1, abs=1e-14)
    assert psi == pytest.approx(2 * p * p * (1 - e), abs=1e-14)


@pytest.mark.parametrize("dgp", h0_fixtures() + h1_fixtures(), ids=lambda d: d.name)
def test_kernel_mean_is_psi(dgp):
    _, total = exact_gamma_mean(dgp)
    assert abs(total - exact_psi(dgp)) <= 1e-12


@pytest.mark.parametrize("dgp", h0_fixtures(), ids=lambda d: d.name)
def test_null_fixtures_are_null_and_degenerate(dgp):
    assert same_distribution(dgp.r, dgp.s, dgp.probs)
    assert abs(exact_psi(dgp)) <= 1e-12
    rowwise, _ = exact_gamma_mean(dgp)
    assert np.max(np.abs(rowwise)) <= 1e-10
    assert dgp.gradient_mean_residual() <= 1e-12


@pytest.mark.parametrize("dgp", h1_fixtures(), ids=lambda d: d.name)
def test_alternative_fixtures_have_positive_psi(dgp):
    assert not same_distribution(dgp.r, dgp.s, dgp.probs)
    assert exact_psi(dgp) > 1e-6


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(2, 4))
def test_random_null_fixtures_are_degenerate(seed, n_w, n_y):
    dgp = random_ex3_fixture(np.random.default_rng(seed), n_w, n_y, null=True)
    rowwise, total = exact_gamma_mean(dgp)
    assert np.max(np.abs(rowwise)) <= 1e-10
    assert abs(total) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_random_fixture_identity(seed):
    dgp = random_ex3_fixture(np.random.default_rng(seed))
    assert abs(exact_gamma_mean(dgp)[1] - exact_psi(dgp)) <= 1e-12
    assert exact_psi(dgp) >= -1e-15


def test_first_order_gradient_vanishes_for_constant_functionals():
    assert np.max(np.abs(first_order_gradient(constant_functionals_fixture()))) <= 1e-12


@pytest.mark.parametrize("null, target", [(True, 16.0), (False, 4.0)])
def test_remainder_order(null, target):
    rems, bounds = [], []
    for eps in (0.01, 0.02):
        dgp0, dgp_p = ex3_perturbation_pair(null, eps)
        rem, k0, k1 = exact_remainder_bounds(dgp0, dgp_p)
        rems.append(rem)
        bounds.append(k0 if null else k1)
        np.testing.assert_allclose(dgp_p.rem_r, 0.0, atol=1e-14)
    assert rems[1] / rems[0] == pytest.approx(target, rel=0.1)
    assert abs(rems[0]) <= 10 * bounds[0]


def test_remainder_bounds_need_perturbed_input():
    dgp0, _ = ex3_perturbation_pair(True, 0.01)
    with pytest.raises(ValueError):
        exact_remainder_bounds(dgp0, dgp0)
    with pytest.raises(MismatchedSupport):
        exact_remainder_bounds(dgp0, h0_fixtures()[0])


def _blip_fixture():
    return next(d for d in h1_fixtures() if d.name == "ex1_linear_blip")


@given(st.integers(0, 2**32 - 1))
def test_blip_remainder_closed_form_matches_definition(seed):
    dgp = _blip_fixture()
    rng = np.random.default_rng(seed)
    table = {(a, w): rng.normal() for a in (0, 1) for w in np.unique(dgp.w)}
    pi_t = {w: rng.uniform(0.1, 0.9) for w in np.unique(dgp.w)}
    mu_hat = lambda a, w: np.array([table[(int(ai), wi)] for ai, wi in zip(a, w[:, 0])])
    pi_hat = lambda a, w: np.array([pi_t[wi] if ai == 1 else 1 - pi_t[wi] for ai, wi in zip(a, w[:, 0])])
    np.testing.assert_allclose(remainder_ex1(dgp, mu_hat, pi_hat),
                               remainder_ex1_by_definition(dgp, mu_hat, pi_hat), atol=1e-12)


def test_identity_suite_passes():
    checks = run_identity_checks()
    assert len(checks) >= 6
    assert all(c.passed for c in checks), [c for c in checks if not c.passed]


def test_builders_require_positivity():
    with pytest.raises(ValueError):
        ex1_dgp(w=[0.0, 0.0], a=[1, 1], y=[0.0, 1.0], probs=[0.5, 0.5])
