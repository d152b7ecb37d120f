import math

import numpy as np
import pytest

from koopman_uq.dynamics import (StateLayout, Trajectory, augment, equilibrium_state,
                                 generate_training_set, simulate, swing_rhs)
from koopman_uq.errors import SimulationError
from koopman_uq.powergrid import ReducedNetwork


def test_equilibrium_is_stationary(net39_intact):
    x0 = equilibrium_state(net39_intact)
    assert np.max(np.abs(swing_rhs(x0, net39_intact))) <= 1e-8


def test_outage_disturbs_equilibrium(net39):
    x0 = equilibrium_state(net39)
    assert np.max(np.abs(swing_rhs(x0, net39))) > 1e-3


def test_pseudo_state_derivative_is_exactly_zero(net39):
    rng = np.random.default_rng(0)
    x = equilibrium_state(net39) + rng.normal(0, 0.1, 30)
    dx = swing_rhs(x, net39)
    assert np.all(dx[20:] == 0.0)
    # batched evaluation agrees with the single-state one
    X = np.vstack([x, x + 0.01])
    np.testing.assert_allclose(swing_rhs(X, net39)[0], dx)


def test_uncertain_subset_layout(net39):
    x0 = equilibrium_state(net39, uncertain=[1, 9])
    assert x0.shape == (22,)
    np.testing.assert_array_equal(x0[20:], net39.H[[1, 9]])
    assert StateLayout.for_network(net39, [1, 9]).column_names()[-1] == "m_2"
    with pytest.raises(IndexError):
        StateLayout.for_network(net39, [10])


def test_smib_small_signal_frequency(smib):
    H, P_max, d_eq = 3.0, 2.0, 0.5
    net = smib(H, P_max, d_eq)
    x0 = augment(np.array([d_eq + 0.01, 0.0, 0.0, 0.0]), [H])
    tr = simulate(x0, net, horizon=10.0, uncertain=[0])
    y = tr.states[:, 0] - tr.states[:, 1] - d_eq
    up = np.flatnonzero((y[:-1] < 0) & (y[1:] >= 0))
    t_cross = tr.times[up] - y[up] * (tr.times[up + 1] - tr.times[up]) / (y[up + 1] - y[up])
    f_sim = (len(t_cross) - 1) / (t_cross[-1] - t_cross[0])
    f_ref = math.sqrt(net.omega_s * P_max * math.cos(d_eq) / (2 * H)) / (2 * math.pi)
    assert abs(f_sim / f_ref - 1) < 0.01


def test_rk4_convergence_order(smib):
    net = smib()
    x0 = augment(np.array([1.2, 0.0, 0.0, 0.0]), [3.0])
    ref = simulate(x0, net, 1.0, dt_int=0.01 / 32, uncertain=[0]).states[-1]
    errs = [np.abs(simulate(x0, net, 1.0, dt_int=h, uncertain=[0]).states[-1] - ref).max()
            for h in (0.01, 0.005, 0.0025)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.5)


def test_simulate_is_deterministic(net39):
    x0 = equilibrium_state(net39)
    a = simulate(x0, net39, horizon=0.5)
    b = simulate(x0, net39, horizon=0.5)
    assert np.array_equal(a.states, b.states)
    assert len(a) == 51 and a.dt == pytest.approx(0.01)
    np.testing.assert_array_equal(a.states[:, 20:], np.broadcast_to(x0[20:], (51, 10)))


def test_lossless_network_conserves_momentum():
    B = np.array([[0, 1.5, 0.8], [1.5, 0, 1.1], [0.8, 1.1, 0]])
    Y = 1j * (B - np.diag(B.sum(axis=1)))
    H = np.array([4.0, 2.5, 6.0])
    net = ReducedNetwork(Y_red=Y, E=np.array([1.05, 1.0, 1.02]), P_m=np.array([0.4, -0.1, -0.3]),
                         delta0=np.array([0.2, 0.0, -0.1]), H=H, D=np.zeros(3), omega_s=2 * math.pi * 60)
    tr = simulate(equilibrium_state(net), net, horizon=2.0)
    momentum = tr.states[:, 3:6] @ H
    np.testing.assert_allclose(momentum, 0.0, atol=1e-10)


def test_zero_horizon_returns_initial_state(net39):
    x0 = equilibrium_state(net39)
    tr = simulate(x0, net39, horizon=0.0)
    assert len(tr) == 1 and np.array_equal(tr.states[0], x0)


@pytest.mark.parametrize("kwargs", [dict(horizon=-1.0), dict(dt_snap=0.0075), dict(horizon=0.015)])
def test_bad_time_grid(net39, kwargs):
    with pytest.raises(ValueError):
        simulate(equilibrium_state(net39), net39, **kwargs)


def test_non_positive_inertia_rejected(net39):
    x0 = equilibrium_state(net39)
    x0[20] = 0.0
    with pytest.raises(ValueError):
        simulate(x0, net39, horizon=0.1)


def test_blow_up_reports_time(smib):
    net = smib()
    # a vanishing inertia off equilibrium overflows within the first snapshot
    x0 = augment(np.array([0.6, 0.0, 0.0, 0.0]), [1e-310])
    with pytest.raises(SimulationError) as info:
        simulate(x0, net, horizon=1.0, uncertain=[0])
    assert info.value.time == pytest.approx(0.01)


def test_csv_roundtrip(tmp_path, net39):
    tr = simulate(equilibrium_state(net39), net39, horizon=0.2)
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    back = Trajectory.from_csv(p, n_g=10)
    assert np.array_equal(back.states, tr.states) and np.array_equal(back.times, tr.times)
    header = p.read_text().splitlines()[0].split(",")
    assert header[:2] == ["t", "delta_1"] and header[-1] == "m_10"


def test_training_set(net39):
    x0 = equilibrium_state(net39)
    m = np.vstack([net39.H * 0.9, net39.H * 1.1])
    trajs = generate_training_set(net39, x0[:20], m, horizon=0.3)
    assert len(trajs) == 2
    for tr, row in zip(trajs, m):
        np.testing.assert_array_equal(tr.states[0, :20], x0[:20])
        np.testing.assert_array_equal(tr.states[:, 20:], np.broadcast_to(row, (31, 10)))
    # lighter machines swing further
    assert np.abs(trajs[0].states[-1, 10:20]).max() > np.abs(trajs[1].states[-1, 10:20]).max()
    with pytest.raises(ValueError):
        generate_training_set(net39, x0[:20], -m, horizon=0.3)
