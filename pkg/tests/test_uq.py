import numpy as np
import pytest
from scipy.stats import norm

from koopman_uq.dynamics import StateLayout, Trajectory, augment, equilibrium_state, generate_training_set
from koopman_uq.koopman import build_dictionary, fit_edmd, realize
from koopman_uq.sampling import SampleSet
from koopman_uq.uq import (Ensemble, compare, kde, load_ensemble, moments, qoi_relative_angle, run_mc,
                           run_surrogate, save_ensemble)

N = 100_000


def _ens(values, dt=0.01, source="mc"):
    values = np.atleast_2d(values)
    return Ensemble("q", np.arange(values.shape[1]) * dt, values, source)


def check_moments(x, mean, std, skew, kurt, mu4):
    """Compare sample moments with closed forms at 3 standard errors."""
    n = x.size
    ms = moments(_ens(x[:, None]))
    assert abs(ms.mean[0] - mean) <= 3 * std / np.sqrt(n)
    assert abs(ms.std[0] - std) <= 3 * np.sqrt((mu4 - std**4) / n) / (2 * std)
    assert abs(ms.skew[0] - skew) <= 3 * np.sqrt(6 / n)
    assert abs(ms.kurt[0] - kurt) <= 3 * np.sqrt(24 / n)
    return ms


def test_moments_normal():
    x = np.random.default_rng(11).normal(2.0, 0.5, N)
    check_moments(x, 2.0, 0.5, 0.0, 3.0, 3 * 0.5**4)


def test_moments_uniform():
    x = np.random.default_rng(12).uniform(-1.0, 3.0, N)
    s = 4 / np.sqrt(12)
    check_moments(x, 1.0, s, 0.0, 1.8, 1.8 * s**4)


def test_two_point_distribution():
    ms = moments(_ens(np.array([[-1.0], [1.0]] * 50)))
    assert ms.skew[0] == 0 and ms.kurt[0] == pytest.approx(1.0)
    assert ms.std[0] == pytest.approx(np.sqrt(100 / 99))


def test_constant_ensemble():
    ms = moments(_ens(np.full((10, 3), 0.7)))
    assert np.all(ms.std == 0) and np.all(ms.skew == 0)
    assert np.all(np.isnan(ms.kurt)) and not ms.kurt_defined.any()


def test_moments_need_enough_samples():
    with pytest.raises(ValueError):
        moments(_ens(np.ones((3, 2))), max_order=4)


def test_kde_normal():
    x = np.random.default_rng(13).normal(0.0, 1.0, N)
    est = kde(x)
    assert 0.999 <= est.integral() <= 1.001
    assert np.all(est.density >= 0)
    assert np.abs(est.density - norm.pdf(est.grid)).max() <= 0.02
    assert est.grid[0] <= x.min() - 5 * est.bandwidth + 1e-12


def test_kde_permutation_invariant():
    x = np.random.default_rng(14).gamma(2.0, size=2000)
    a = kde(x)
    b = kde(np.random.default_rng(15).permutation(x))
    np.testing.assert_allclose(a.density, b.density, rtol=1e-12, atol=1e-15)


def test_kde_integral_small_sample():
    est = kde([0.0, 0.1, 2.0])
    assert 0.999 <= est.integral() <= 1.001


def test_kde_rejects_degenerate():
    with pytest.raises(ValueError):
        kde([1.0, 1.0, 1.0])


def test_self_compare_is_zero():
    e = _ens(np.random.default_rng(0).normal(size=(50, 600)))
    r = compare(e, e, (0, 5), ks_times=(2.0,))
    assert r["mean_max_abs_err"] == 0 and r["std_rel_err"] == 0 and r["ks"]["2"] == 0


def test_compare_rejects_mismatched_dt():
    a = _ens(np.ones((5, 10)), dt=0.01)
    b = _ens(np.ones((5, 10)), dt=0.02)
    with pytest.raises(ValueError):
        compare(a, b)


def test_compare_speedup_accounting():
    a = Ensemble("q", np.arange(5) * 0.1, np.ones((4, 5)), "mc", wall_time=100.0)
    b = Ensemble("q", np.arange(5) * 0.1, np.ones((4, 5)), "surrogate", wall_time=2.0)
    assert compare(a, b, (0, 0.4), training_time=8.0)["speedup"] == pytest.approx(10.0)


def test_ensemble_roundtrip(tmp_path):
    e = Ensemble("delta_2_minus_10", np.arange(4) * 0.01, np.arange(8.0).reshape(2, 4), "mc", 3.0, (5,))
    save_ensemble(e, tmp_path / "e.npz")
    back = load_ensemble(tmp_path / "e.npz")
    assert back.qoi == e.qoi and back.excluded == (5,) and np.array_equal(back.values, e.values)


def test_qoi_relative_angle_indices():
    tr = Trajectory(np.arange(3) * 0.01, np.arange(15.0).reshape(3, 5), StateLayout(2, (0,)))
    np.testing.assert_array_equal(qoi_relative_angle(tr, 1, 0), [1, 1, 1])
    with pytest.raises(IndexError):
        qoi_relative_angle(tr, 0, 2)


def test_mc_of_one_sample(net39):
    x0 = equilibrium_state(net39)
    e = run_mc(net39, x0[:20], SampleSet(x0[None, 20:], "nominal", None), horizon=0.2)
    assert e.values.shape == (1, 21) and e.qoi == "delta_2_minus_10"
    assert e.values[0, 0] == pytest.approx(x0[1] - x0[9])


def test_surrogate_nominal_equals_realize(net39):
    x0 = equilibrium_state(net39)
    m = net39.H * np.array([[0.95], [1.0], [1.05]])
    trajs = generate_training_set(net39, x0[:20], m, horizon=0.5)
    model = fit_edmd(trajs, build_dictionary("linear", 10, 10, trajs))
    e = run_surrogate(model, x0[:20], SampleSet(x0[None, 20:], "nominal", None), 50)
    sur = realize(model, augment(x0[:20], x0[20:]), 50)
    np.testing.assert_allclose(e.values[0], sur.states[:, 1] - sur.states[:, 9], rtol=0, atol=1e-12)
