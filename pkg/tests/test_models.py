import numpy as np
import pytest

from tamedsde import models as M
from tamedsde.models import AssumptionError, LvCoefficients, Phi

RNG = np.random.default_rng(0)
SQRT01 = np.sqrt(0.1)


def zoo():
    return {
        "lorenz": M.lorenz_additive(1, 1, 1, 0.5 * np.eye(3), [1, 1, 1]),
        "brownian_dynamics": M.brownian_dynamics(None, 2.0, [0.5]),
        "langevin": M.langevin(None, 1.0, 2.0, [1, 1]),
        "vdp_additive": M.van_der_pol(0.2, 0.2, 1.0, Phi("const", [SQRT01]), [0.5, 1.5]),
        "vdp_multiplicative": M.van_der_pol(0.2, 0.2, 1.0, Phi("linear", [0.8]), [0.5, 1.5]),
        "duffing": M.duffing_van_der_pol(1, 1, 1, Phi("linear", [0.5]), [0.5, 1.5]),
        "lotka_volterra": M.lotka_volterra(M.benchmark_lv_coefficients()),
        "gbm": M.geometric_brownian_motion(0.05, 0.2),
    }


def test_canonical_names():
    names = {m.name for m in zoo().values()}
    assert set(M.ZOO) <= names


# hand evaluations


def test_lorenz_values():
    m = zoo()["lorenz"]
    assert np.array_equal(m.drift(np.zeros(3)), np.zeros(3))
    assert np.allclose(m.drift(np.array([1.0, 2.0, 3.0])), [1, -4, -1])
    assert m.lyapunov_u0(np.array([1.0, 2.0, 3.0])) == pytest.approx(14.0)
    assert (m.d, m.m) == (3, 3)


def test_lorenz_rejects_negative_rates():
    with pytest.raises(ValueError):
        M.lorenz_additive(-1, 1, 1, np.eye(3), [1, 1, 1])


def test_langevin_values():
    m = zoo()["langevin"]
    assert np.allclose(m.drift(np.zeros(2)), [0, 0])
    assert np.allclose(m.drift(np.array([1.0, 1.0])), [1, -1])
    assert np.allclose(m.diffusion(np.array([3.0, -2.0])), [[0.0], [np.sqrt(2.0)]])


@pytest.mark.parametrize("beta", [0.0, -1.0])
def test_langevin_rejects_beta(beta):
    with pytest.raises(ValueError):
        M.langevin(None, 1.0, beta, [1, 1])


def test_brownian_dynamics_values():
    m = zoo()["brownian_dynamics"]
    assert m.drift(np.array([2.0]))[0] == pytest.approx(-6.0)
    for crit in (-1.0, 0.0, 1.0):
        assert m.drift(np.array([crit]))[0] == 0.0
    assert np.array_equal(m.diffusion(RNG.standard_normal(1)), m.diffusion(RNG.standard_normal(1)))


def test_brownian_dynamics_rejects_beta():
    with pytest.raises(ValueError):
        M.brownian_dynamics(None, 0.0, [0.0])


def test_double_well_is_nonnegative():
    V = M.double_well()
    x = RNG.standard_normal((1000, 1)) * 3
    assert np.all(V.value(x) >= 0)
    assert np.allclose(V.grad(np.array([[2.0]])), [[6.0]])


def test_van_der_pol_values():
    m = zoo()["vdp_additive"]
    assert np.allclose(m.drift(np.zeros(2)), [0, 0])
    assert np.allclose(m.drift(np.array([1.0, 1.0])), [1, -1])
    g = zoo()["vdp_multiplicative"].diffusion(np.array([2.0, 5.0]))
    assert np.allclose(g, [[0.0], [1.6]])


def test_van_der_pol_rejects_alpha():
    with pytest.raises(ValueError):
        M.van_der_pol(0.2, 0.0, 1.0, Phi("const", [0.1]), [0, 0])


def test_duffing_values():
    m = zoo()["duffing"]
    assert np.allclose(m.drift(np.zeros(2)), [0, 0])
    assert np.allclose(m.drift(np.array([1.0, 1.0])), [1, -2])


def test_duffing_rejects_a3():
    with pytest.raises(ValueError):
        M.duffing_van_der_pol(1, 1, 0, Phi("linear", [0.5]), [0, 0])


def test_lv_values():
    m = zoo()["lotka_volterra"]
    assert m.domain == M.POSITIVE
    assert np.allclose(m.drift(np.array([1.0, 3.0])), [-1.5, -3.0])
    # equilibrium b = A x
    coeffs = M.benchmark_lv_coefficients()
    x_star = np.linalg.solve(coeffs.A, coeffs.b)
    assert np.allclose(m.drift(x_star), 0.0)
    assert np.allclose(m.diffusion(np.array([2.0, 4.0])), [[2.0, 0.0], [0.0, 3.0]])


def test_lv_assumption_names_entry():
    with pytest.raises(AssumptionError, match=r"A\[0,1\]"):
        LvCoefficients([1, 1], [[1, -0.5], [0, 1]], np.eye(2), [1, 1])
    with pytest.raises(AssumptionError, match=r"A\[1,1\]"):
        LvCoefficients([1, 1], [[1, 0.5], [0, 0]], np.eye(2), [1, 1])
    with pytest.raises(AssumptionError):
        LvCoefficients([1, 1], np.eye(2), np.eye(2), [1, 0])


def test_lv_scaled_noise():
    c = M.benchmark_lv_coefficients(2.0)
    assert np.allclose(c.sigma, np.diag([2.0, 1.5]))


def test_phi_label_and_lipschitz():
    assert Phi("linear", [0.8]).lipschitz == pytest.approx(0.8)
    assert Phi("const", [0.3]).lipschitz == 0.0
    with pytest.raises(ValueError):
        Phi("cubic", [1.0])


# structural invariants


@pytest.mark.parametrize("name", list(zoo()))
def test_drift_jacobian_matches_finite_differences(name):
    m = zoo()[name]
    if m.drift_jacobian is None:
        pytest.skip("no analytic drift Jacobian")
    rng = np.random.default_rng(1)
    for x in m.sample_points(100, rng):
        eps = 1e-6 * (1 + np.linalg.norm(x))
        fd = M.central_jacobian(m.drift, x, eps)
        exact = m.drift_jacobian(x)
        assert np.linalg.norm(fd - exact) <= 1e-5 * max(1.0, np.linalg.norm(exact))


@pytest.mark.parametrize("name", list(zoo()))
def test_diffusion_jacobian_matches_finite_differences(name):
    m = zoo()[name]
    rng = np.random.default_rng(2)
    for x in m.sample_points(50, rng):
        fd = M.central_jacobian(m.diffusion, x)
        assert np.allclose(fd, m.diffusion_jacobian(x), atol=1e-6)


@pytest.mark.parametrize("name", ["langevin", "vdp_additive", "vdp_multiplicative", "duffing",
                                  "lorenz", "brownian_dynamics"])
def test_commutativity_passes(name):
    m = zoo()[name]
    assert M.check_commutativity(m, samples=100).passed
    assert M.check_commutativity(m, samples=100, finite_differences=True, tol=1e-6).passed


def test_commutativity_fails_for_gbm():
    rep = M.check_commutativity(zoo()["gbm"], samples=20)
    assert not rep.passed
    x = rep.worst_point[0]
    assert rep.worst == pytest.approx(0.2**2 * abs(x))
    assert "FAIL" in str(rep)


@pytest.mark.parametrize("name", ["lorenz", "brownian_dynamics", "langevin", "vdp_additive",
                                  "vdp_multiplicative", "duffing", "lotka_volterra"])
def test_lyapunov_functions_nonnegative(name):
    m = zoo()[name]
    x = m.sample_points(2000, np.random.default_rng(3)) * 3
    if m.domain == M.POSITIVE:
        x = np.abs(x) + 1e-3
    assert np.all(m.lyapunov_u0(x) >= 0)
    assert np.all(m.lyapunov_u1(x) >= 0)


def test_lv_lyapunov_drift_condition():
    m = zoo()["lotka_volterra"]
    rng = np.random.default_rng(4)
    for scale in (0.1, 1.0, 10.0, 100.0):
        x = m.sample_points(2000, rng) * scale
        assert np.max(M.lyapunov_residual(m, x)) <= 1e-9


def test_lv_lyapunov_constants():
    v, alpha = M.lv_lyapunov_constants(M.benchmark_lv_coefficients())
    # a_min = 0.5, d = 2, m = 2, sigma_max^2 = 1
    assert v == pytest.approx(0.5 * min(1.0, 0.5 / (np.sqrt(2) * 2 * 1.0)))
    assert alpha == pytest.approx(1.0 + 2 * 1.0 + 1.0)
    assert 0.5 / np.sqrt(2) - v * 2 * 1.0 / 2 > 0


@pytest.mark.parametrize("name", ["lorenz", "brownian_dynamics", "langevin", "vdp_additive",
                                  "vdp_multiplicative", "duffing"])
def test_lyapunov_residual_bounded_by_constant(name):
    # the drift condition allows an additive constant; it must not grow with |x|
    m = zoo()[name]
    rng = np.random.default_rng(5)
    worst = [np.max(M.lyapunov_residual(m, m.sample_points(2000, rng) * s)) for s in (1, 3, 10)]
    assert worst[2] <= max(worst[0], 0.0) + 3.0


def test_lv_one_sided_bound():
    c = M.benchmark_lv_coefficients()
    m = M.lotka_volterra(c)
    rng = np.random.default_rng(6)
    x = m.sample_points(5000, rng) * 4
    y = m.sample_points(5000, rng) * 4
    lhs = np.sum((x - y) * (m.drift(x) - m.drift(y)), axis=1)
    rhs = (np.linalg.norm(c.b) + np.linalg.norm(c.A, 2) * np.linalg.norm(x, axis=1)) * np.sum((x - y) ** 2, axis=1)
    assert np.all(lhs <= rhs + 1e-9)


def test_sample_points_respect_domain():
    pts = zoo()["lotka_volterra"].sample_points(500, np.random.default_rng(7))
    assert np.all(pts >= 0.1)


def test_positive_domain_requires_positive_start():
    m = zoo()["lotka_volterra"]
    from dataclasses import replace
    with pytest.raises(AssumptionError):
        replace(m, x0=[1.0, -1.0])
