import numpy as np
import pytest

from tumoropt import constitutive as con
from tumoropt.constitutive import DrugSchedule, ModelConfigError, ModelParams, Nonlinearities
from tumoropt.fem import ElasticityTensor


@pytest.fixture
def nl():
    return Nonlinearities()


@pytest.fixture
def params():
    return ModelParams()


def central(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


# -- double-well potential ----------------------------------------------------

def test_psi_double_well_minima(nl):
    assert nl.psi_value(1.0) == 0.0
    assert nl.psi_value(-1.0) == 0.0
    assert nl.psi_prime(1.0) == 0.0
    assert nl.psi_prime(-1.0) == 0.0


def test_psi_origin_values(nl):
    assert nl.psi_prime(0.0) == 0.0
    assert nl.psi_second(0.0) == -1.0


def test_psi_derivative_chain(nl, rng):
    for r in rng.uniform(-3, 3, size=100):
        assert abs(central(nl.psi_value, r) - nl.psi_prime(r)) < 1e-6 * max(1, abs(nl.psi_prime(r)))
        assert abs(central(nl.psi_prime, r) - nl.psi_second(r)) < 1e-6 * max(1, abs(nl.psi_second(r)))
        assert abs(central(nl.psi_second, r) - nl.psi_third(r)) < 1e-6 * max(1, abs(nl.psi_third(r)))


def test_psi_split_consistent_and_convex(nl):
    r = np.linspace(-3, 3, 121)
    assert np.allclose(nl.psi1_prime(r) + nl.psi2_prime(r), nl.psi_prime(r))
    assert np.allclose(nl.psi1_second(r) + nl.psi2_second(r), nl.psi_second(r))
    assert (nl.psi1_second(r) >= 0).all()


# -- stress response ----------------------------------------------------------

def test_g_at_zero_and_unit(nl):
    assert con.g_stress(np.zeros(3)) == 1.0
    assert np.abs(con.g_stress_grad(np.zeros(3))).max() == 0.0
    # |A|^2 = 3: entries (1, 1, sqrt(1/2)) with the doubled shear slot
    a = np.array([1.0, 1.0, np.sqrt(0.5)])
    assert abs(con.g_stress(a) - 0.5) < 1e-15


def test_g_range_and_monotonicity(rng):
    scales = np.linspace(0.0, 10.0, 50)
    a = rng.standard_normal(3)
    vals = con.g_stress(scales[:, None] * a)
    assert (vals <= 1.0).all() and (vals > 0.0).all()
    assert (np.diff(vals) <= 0).all()


def test_g_grad_matches_finite_differences(rng):
    for _ in range(100):
        a = rng.standard_normal(3)
        grad = con.g_stress_grad(a)
        for i in range(3):
            d = np.zeros(3)
            d[i] = 1e-5
            fd = (con.g_stress(a + d) - con.g_stress(a - d)) / 2e-5
            # a Voigt shear perturbation moves both off-diagonal entries
            expect = (2.0 if i == 2 else 1.0) * grad[i]
            assert abs(fd - expect) < 1e-6 * max(1.0, abs(expect))


def test_g_hess_matches_finite_differences(rng):
    a = rng.standard_normal((2, 2))
    a = 0.5 * (a + a.T)
    H = con.g_stress_hess(a)

    def g_full(m):
        return 1.0 / np.sqrt(1.0 + (m * m).sum())

    e = 1e-4
    for idx in ((0, 0, 0, 0), (0, 1, 1, 0), (1, 1, 0, 1), (0, 1, 0, 1)):
        i, j, k, l = idx
        p1 = np.zeros((2, 2)); p1[i, j] = e
        p2 = np.zeros((2, 2)); p2[k, l] = e
        fd = (g_full(a + p1 + p2) - g_full(a + p1 - p2)
              - g_full(a - p1 + p2) + g_full(a - p1 - p2)) / (4 * e * e)
        assert abs(fd - H[idx]) < 1e-5


def test_g_constant_selector():
    nl = Nonlinearities(g="constant")
    a = np.random.default_rng(0).standard_normal((7, 3))
    assert np.all(nl.g_of(a) == 1.0)
    assert np.abs(nl.g_grad(a)).max() == 0.0


# -- ramps ---------------------------------------------------------------------

def test_ramp_interpolation_values(nl):
    for fn in (nl.f, nl.h, nl.k):
        assert fn(1.0) == 1.0
        assert fn(-1.0) == 0.0


def test_ramp_bounds_and_lipschitz(nl):
    r = np.linspace(-2.5, 2.5, 2001)
    for fn, d in ((nl.f, nl.f_prime), (nl.h, nl.h_prime), (nl.k, nl.k_prime)):
        assert (np.abs(fn(r)) <= 1.0).all()
        assert (fn(r) >= 0.0).all()
        assert np.abs(d(r)).max() <= 15.0 / 16.0 + 1e-12


def test_ramp_derivatives_match_fd(nl, rng):
    for r in rng.uniform(-1.5, 1.5, size=100):
        assert abs(central(nl.f, r) - nl.f_prime(r)) < 1e-6
        assert abs(central(nl.f_prime, r) - nl.f_second(r)) < 1e-5


# -- weight n -------------------------------------------------------------------

def test_weight_ramp_endpoints(nl):
    xy = np.zeros(2)
    assert nl.n_of(xy, 1.0) == 0.0
    assert nl.n_of(xy, -1.0) == 1.0
    assert (nl.n_of(xy, np.linspace(-2, 2, 41)) >= 0).all()


def test_weight_indicator_region():
    nl = Nonlinearities(weight_n="indicator", region=(0.0, 0.5, 0.0, 0.5))
    xy = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.8]])
    phi = np.zeros(3)
    vals = nl.n_of(xy, phi)
    assert vals[0] == 1.0 and vals[1] == 0.0 and vals[2] == 0.0
    assert np.abs(nl.n_prime(xy, phi)).max() == 0.0


def test_weight_ramp_derivative_fd(nl, rng):
    xy = np.zeros(2)
    # stay away from the blend junctions at phi in {1, 0.8, -0.8, -1}
    for phi in rng.uniform(-0.7, 0.7, size=50):
        fd = (nl.n_of(xy, phi + 1e-5) - nl.n_of(xy, phi - 1e-5)) / 2e-5
        assert abs(fd - nl.n_prime(xy, phi)) < 1e-6


# -- stress/energy -------------------------------------------------------------

def test_stress_free_states(params):
    assert np.abs(con.stress(params, 0.0, params.bar_strain)).max() == 0.0
    full = params.bar_strain + params.misfit_strain
    assert np.abs(con.stress(params, 1.0, full)).max() < 1e-15


def test_stress_linear_in_arguments(params, rng):
    e1, e2 = rng.standard_normal(3), rng.standard_normal(3)
    p1, p2 = rng.standard_normal(2)
    lhs = con.stress(params, p1 + p2, e1 + e2) + con.stress(params, 0.0, np.zeros(3))
    rhs = con.stress(params, p1, e1) + con.stress(params, p2, e2)
    assert np.abs(lhs - rhs).max() < 1e-12


def test_w_phi_is_energy_derivative(params, rng):
    for _ in range(100):
        phi = rng.uniform(-1, 1)
        e = rng.standard_normal(3)
        fd = (con.elastic_energy_density(params, phi + 1e-6, e)
              - con.elastic_energy_density(params, phi - 1e-6, e)) / 2e-6
        val = con.w_phi(params, phi, e)
        assert abs(fd - val) < 1e-6 * max(1.0, abs(val))


def test_w_phi_degenerate_cases(params):
    p0 = ModelParams(misfit_strain=np.zeros(3))
    assert con.w_phi(p0, 0.7, np.array([0.1, -0.2, 0.3])) == 0.0
    assert con.w_phi(params, 0.0, params.bar_strain) == 0.0


# -- sources -------------------------------------------------------------------

def test_source_U_zero_rates():
    p = ModelParams(lambda_p=0.0, lambda_a=0.0)
    nl = Nonlinearities()
    assert con.source_U(p, nl, 0.3, 0.8, np.zeros(3), 0.0) == 0.0


def test_source_U_host_tissue_inactive(params, nl):
    # f(-1) = k(-1) = 0: the host phase neither proliferates nor dies
    assert con.source_U(params, nl, -1.0, 0.9, np.zeros(3), 0.4) == 0.0


def test_source_U_unit_growth(nl):
    p = ModelParams(lambda_p=1.0, lambda_a=0.0)
    val = con.source_U(p, nl, 1.0, 1.0, p.bar_strain + p.misfit_strain, 0.0)
    assert abs(val - 1.0) < 1e-15  # stress-free, f(1) = 1, g(0) = 1


def test_source_S_balances(nl):
    p = ModelParams(lambda_c=1.0, B=0.7)
    # at sigma = sigma_c with no consumption the exchange term vanishes
    assert con.source_S(p, nl, -1.0, p.sigma_c, 0.0) == 0.0
    p0 = ModelParams(B=0.0, lambda_c=1.0)
    assert abs(con.source_S(p0, nl, 1.0, 0.37, 0.0) + 0.37) < 1e-15


def test_source_S_partials_fd(params, nl, rng):
    for _ in range(100):
        phi, sig, s_t = rng.uniform(-1, 1), rng.uniform(0, 1), rng.uniform(0, 0.5)
        d_phi, d_sig = con.source_S_partials(params, nl, phi, sig, s_t)
        fd_phi = (con.source_S(params, nl, phi + 1e-6, sig, s_t)
                  - con.source_S(params, nl, phi - 1e-6, sig, s_t)) / 2e-6
        fd_sig = (con.source_S(params, nl, phi, sig + 1e-6, s_t)
                  - con.source_S(params, nl, phi, sig - 1e-6, s_t)) / 2e-6
        assert abs(fd_phi - d_phi) < 1e-6
        assert abs(fd_sig - d_sig) < 1e-6


# -- drug schedule ---------------------------------------------------------------

def test_schedule_before_first_dose():
    s = DrugSchedule(dosage=2.0, times=(0.5,), lifetime=0.3)
    assert s(0.2) == 0.0


def test_schedule_dose_at_infusion():
    s = DrugSchedule(dosage=2.0, times=(0.5,), lifetime=0.3)
    assert s(0.5) == 2.0


def test_schedule_superposition():
    s = DrugSchedule(dosage=1.0, times=(0.0, 5.0), lifetime=1.0)
    assert abs(s(5.0) - (np.exp(-5.0) + 1.0)) < 1e-15


def test_schedule_validation():
    with pytest.raises(ModelConfigError):
        DrugSchedule(times=(0.5, 0.2))
    with pytest.raises(ModelConfigError):
        DrugSchedule(lifetime=0.0)
    with pytest.raises(ModelConfigError):
        DrugSchedule(dosage=-1.0)


# -- parameter validation ----------------------------------------------------------

def test_params_negative_rate_rejected():
    with pytest.raises(ModelConfigError, match="A1"):
        ModelParams(lambda_p=-0.1)


def test_params_degenerate_nutrient_rejected():
    with pytest.raises(ModelConfigError, match="A1"):
        ModelParams(beta=0.0, B=0.0, kappa=0.0)


def test_params_beta_zero_allowed_with_exchange():
    p = ModelParams(beta=0.0, B=0.5, kappa=0.0)
    assert p.nutrient_cap == max(p.sigma_c, p.supply_bound)


def test_positive_definiteness_constant():
    C = ElasticityTensor.isotropic(1.0, 1.0)
    rng = np.random.default_rng(5)
    for _ in range(50):
        e = rng.standard_normal(3)
        quad_form = float(e @ (np.diag([1, 1, 2]) @ C.voigt) @ e)
        norm2 = e[0] ** 2 + e[1] ** 2 + 2 * e[2] ** 2
        assert quad_form >= C.c0 * norm2 - 1e-12
