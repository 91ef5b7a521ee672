import warnings

import numpy as np
import pytest

from tamedsde import harness as H
from tamedsde import models as M
from tamedsde.brownian import generate_paths
from tamedsde.models import Phi

LANGEVIN = M.langevin(None, 1.0, 2.0, [1, 1])
GBM = M.geometric_brownian_motion(0.05, 0.2)


def gbm_oracle(inc, T=1.0):
    return H.exact_reference_gbm(0.05, 0.2, 1.0, inc, T)


# fitting


def test_fit_exact_power_laws():
    levels = [4, 5, 6, 7]
    h = 2.0 ** -np.array(levels)
    slope, res = H.fit_rate(levels, 3 * h)
    assert slope == pytest.approx(1.0) and res == pytest.approx(0.0, abs=1e-12)
    slope, _ = H.fit_rate(levels, 3 * np.sqrt(h))
    assert slope == pytest.approx(0.5)


def test_fit_with_jitter():
    rng = np.random.default_rng(0)
    levels = np.arange(4, 12)
    for truth in (0.5, 1.0, 1.5):
        errors = 2.0 ** (-truth * levels) * np.exp(rng.uniform(-0.05, 0.05, levels.size))
        slope, _ = H.fit_rate(levels, errors)
        assert abs(slope - truth) < 0.05


def test_fit_uses_horizon():
    levels = [3, 4, 5]
    slope, _ = H.fit_rate(levels, (4.0 / 2.0 ** np.array(levels)) ** 2, T=4.0)
    assert slope == pytest.approx(2.0)


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        H.fit_rate([1, 2], [1.0, 0.0])
    with pytest.raises(H.RateUndefinedError):
        H.fit_rate([1], [1.0])


def test_lr_norm():
    x = np.array([1.0, 2.0, 3.0])
    assert H.lr_norm(x, 1) == pytest.approx(2.0)
    assert H.lr_norm(x, 2) == pytest.approx(np.sqrt(14 / 3))


# GBM oracle


def test_gbm_oracle_special_cases():
    inc = generate_paths(0, [0], 1, 1.0, 4)
    t = np.arange(17) / 16
    assert np.allclose(H.exact_reference_gbm(0.3, 0.0, 2.0, inc, 1.0)[0, :, 0], 2 * np.exp(0.3 * t))
    assert np.all(H.exact_reference_gbm(0.0, 0.0, 2.0, inc, 1.0) == 2.0)


def test_gbm_em_rate():
    rep = H.strong_error(GBM, "em", 13, range(6, 11), 500, reference=gbm_oracle)
    assert 0.4 <= rep.slope <= 0.6


def test_deterministic_linear_em_rate():
    m = M.linear_scalar(-1.0, 0.0, 1.0)

    def exact(inc):
        t = np.arange(inc.shape[1] + 1) / inc.shape[1]
        return np.broadcast_to(np.exp(-t)[None, :, None], (inc.shape[0], t.size, 1))

    rep = H.strong_error(m, "em", 14, range(6, 11), 4, reference=exact)
    assert abs(rep.slope - 1.0) < 0.05


# strong_error protocol


def test_ref_level_constraint():
    with pytest.raises(ValueError):
        H.strong_error(LANGEVIN, "sitem", 10, [6, 9], 4)
    with pytest.raises(ValueError):
        H.strong_error(LANGEVIN, "sitem", 12, [6, 9], 4, r=0)


def test_report_fields():
    rep = H.strong_error(LANGEVIN, "sitem", 10, [5, 6, 7], 40)
    assert rep.scheme == "sitem" and rep.model == "langevin"
    assert rep.hs == [1 / 32, 1 / 64, 1 / 128]
    assert all(e > 0 for e in rep.errors)
    assert rep.diverged == [0, 0, 0]
    rows = list(rep.rows())
    assert rows[0].keys() == {"scheme", "model", "level", "h", "error_Lr", "r", "paths", "diverged"}
    samples = rep.error_samples(6)
    assert len(samples) == 40 and all(s.sup_error >= 0 and not s.diverged for s in samples)
    assert "coarse grid points" in rep.note


def test_r_norm_monotone():
    rep = {r: H.strong_error(LANGEVIN, "sitem", 10, [5, 6, 7], 60, r=r) for r in (1, 2, 4)}
    for k in range(3):
        assert rep[1].errors[k] <= rep[2].errors[k] <= rep[4].errors[k]
    assert np.array_equal(rep[1].samples, rep[4].samples)


def test_self_reference_error_is_zero():
    inc = generate_paths(0, range(5), 1, 1.0, 6)
    from tamedsde.schemes import make_scheme, trajectories
    ens = trajectories(make_scheme("sitem", LANGEVIN), inc, 1 / 64)
    assert np.all(H.sup_errors(ens.states, ens.states, 0) == 0)


def cubic_model(x0=10.0):
    from tamedsde.models import SdeModel
    return SdeModel(name="cubic", d=1, m=1, drift=lambda x: -x**3,
                    diffusion=lambda x: np.full(x.shape[:-1] + (1, 1), 0.5), x0=[x0])


def test_divergent_paths_excluded():
    # EM on a cubic drift with a far start overshoots and explodes at coarse levels
    m = cubic_model()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = H.strong_error(m, "em", 12, [3, 4, 8, 9], 8)
    assert rep.diverged[0] == 8
    assert np.isnan(rep.errors[0])
    assert rep.diverged[-1] == 0
    assert rep.error_samples(3)[0].diverged and rep.error_samples(3)[0].sup_error is None


def test_divergence_everywhere_is_rate_undefined():
    m = cubic_model()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(H.RateUndefinedError):
            H.strong_error(m, "em", 7, [3, 4, 5], 4)


def test_exclusion_warns():
    m = cubic_model()
    with pytest.warns(RuntimeWarning):
        H.strong_error(m, "em", 12, [3, 8, 9], 4)


def test_thread_count_invariance():
    reps = [H.strong_error(LANGEVIN, "sitem", 9, [5, 6, 7], 600, threads=t) for t in (1, 3)]
    assert reps[0].samples.tobytes() == reps[1].samples.tobytes()
    assert reps[0].errors == reps[1].errors


@pytest.mark.parametrize("name,model", [
    ("langevin", LANGEVIN),
    ("vdp", M.van_der_pol(0.2, 0.2, 1.0, Phi("linear", [0.8]), [0.5, 1.5])),
    ("lorenz", M.lorenz_additive(1, 1, 1, 0.5 * np.eye(3), [1, 1, 1])),
    ("duffing", M.duffing_van_der_pol(1, 1, 1, Phi("linear", [0.5]), [0.5, 1.5])),
    ("brownian_dynamics", M.brownian_dynamics(None, 2.0, [0.5])),
])
def test_refinement_reduces_error(name, model):
    rep = H.strong_error(model, "sitem", 11, range(5, 10), 500)
    inversions = sum(b > a for a, b in zip(rep.errors, rep.errors[1:]))
    assert inversions <= 1


# long-time moments


def test_streaming_level():
    assert H.streaming_level(500.0, 2**-7) == (16, 64000, 512.0)
    assert H.streaming_level(1.0, 0.25) == (2, 4, 1.0)
    with pytest.raises(ValueError):
        H.streaming_level(1.0, 0.3)


def test_contractive_moments_decrease():
    m = M.linear_scalar(-1.0, 0.0, 2.0)
    s = H.longtime_moments(m, "em", 0.125, 5.0, 3)
    for p in (1, 2):
        assert np.all(np.diff(s.moments[p]) < 0)
    assert s.moments[2][0] == pytest.approx(4.0)


def test_moment_series_layout():
    lv = M.lotka_volterra(M.benchmark_lv_coefficients())
    s = H.longtime_moments(lv, "lv_milstein", 0.25, 10.0, 20, stride=4)
    assert np.allclose(s.times, np.arange(11))
    assert s.value_at(2, 0.0) == pytest.approx(10.0)
    rows = list(s.rows())
    assert len(rows) == 22 and rows[0].keys() == {"t", "p", "moment"}
    assert np.all(s.lost == 0)
    assert s.terminal_norms.shape == (20,)
    assert np.all(np.isfinite(s.running_second))


def test_longtime_stream_matches_grid_run():
    lv = M.lotka_volterra(M.benchmark_lv_coefficients())
    s = H.longtime_moments(lv, "lv_milstein", 2**-3, 2.0, 5)
    from tamedsde.schemes import make_scheme, trajectories
    inc = generate_paths(0, range(5), 2, 2.0, 4)
    ens = trajectories(make_scheme("lv_milstein", lv, T=2.0), inc, 2**-3)
    assert np.allclose(s.terminal_norms, np.linalg.norm(ens.states[:, -1], axis=1), rtol=0, atol=0)


def test_longtime_thread_invariance():
    lv = M.lotka_volterra(M.benchmark_lv_coefficients())
    a = H.longtime_moments(lv, "lv_milstein", 0.25, 20.0, 600, threads=1)
    b = H.longtime_moments(lv, "lv_milstein", 0.25, 20.0, 600, threads=4)
    assert a.moments[1].tobytes() == b.moments[1].tobytes()
    assert a.terminal_norms.tobytes() == b.terminal_norms.tobytes()


# stationary densities


def test_langevin_marginal_normalised():
    _, grid, values = H.analytic_marginal(LANGEVIN)
    assert np.trapezoid(values, grid) == pytest.approx(1.0, abs=1e-6)
    density, _, _ = H.analytic_marginal(LANGEVIN)
    # symmetric double well, modes at +-1
    assert density(np.array([1.0]))[0] == pytest.approx(density(np.array([-1.0]))[0])
    assert density(np.array([1.0]))[0] > density(np.array([0.0]))[0]


def test_vdp_marginal_normalised():
    vdp = M.van_der_pol(0.2, 0.2, 1.0, Phi("const", [np.sqrt(0.1)]), [0.5, 1.5])
    _, grid, values = H.analytic_marginal(vdp)
    assert np.trapezoid(values, grid) == pytest.approx(1.0, abs=1e-6)


def test_density_capability():
    with pytest.raises(H.CapabilityError):
        H.analytic_marginal(M.lotka_volterra(M.benchmark_lv_coefficients()))
    vdp_mult = M.van_der_pol(0.2, 0.2, 1.0, Phi("linear", [0.8]), [0.5, 1.5])
    with pytest.raises(H.CapabilityError):
        H.stationary_density_check(vdp_mult, "sitem", 0.01, 1.0, 1.0, 10, 2)


def test_density_distance_of_exact_samples_is_small():
    _, grid, values = H.analytic_marginal(LANGEVIN)
    cdf = np.concatenate([[0], np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(grid))])
    u = np.random.default_rng(0).uniform(0, 1, 200_000)
    samples = np.interp(u, cdf / cdf[-1], grid)
    assert H.density_distance(samples, LANGEVIN, bins=64).l1 < 0.03


def test_density_bins_stability():
    samples = H.stationary_samples(LANGEVIN, "sitem", 2**-5, 120.0, 50, T_burn=20.0)
    d64 = H.density_distance(samples, LANGEVIN, bins=64).l1
    d128 = H.density_distance(samples, LANGEVIN, bins=128).l1
    assert abs(d128 - d64) < 0.05


def test_density_report_rows():
    rep = H.stationary_density_check(LANGEVIN, "sitem", 2**-4, 5.0, 5.0, 12, 4)
    assert rep.samples == 4 * 6
    rows = list(rep.rows())
    assert len(rows) == 12 and rows[0].keys() == {"bin_center", "empirical", "analytic"}
