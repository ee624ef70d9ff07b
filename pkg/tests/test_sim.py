import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshdiss.netmodel import ConfigError, GenConfig, Group, NodeParams, SpreadingNetwork, generate_random
from meshdiss.sim import (
    DisturbanceProfile,
    Trajectory,
    export_csv,
    make_disturbance,
    metric_jx,
    recovery_rates,
    simulate,
)


def _single(gamma=1.0, delta=0.0, x0=1.0, self_loop=0.0):
    g = Group([NodeParams(gamma, delta, x0)], np.array([[self_loop]]))
    return SpreadingNetwork([g], np.zeros((1, 1)))


def test_exponential_decay_matches_closed_form():
    """[DERIVED] with no input dx = -x, so x(1) = e^-1."""
    traj = simulate(_single(), T=1.0, dt=0.01)
    assert traj.states[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-6)


def test_constant_input_steady_state():
    """[DERIVED] dx = -x + (1 - x) * 1 has the fixed point x* = 1/2."""
    net = _single(x0=0.0, self_loop=0.0)
    n_steps = 2 * 2000 + 1
    from meshdiss.sim import DisturbanceSignal
    dist = DisturbanceSignal(0.01, 20.0, np.ones((n_steps, 1)), {}, 1.0)
    traj = simulate(net, dist=dist, T=20.0, dt=0.01)
    assert traj.states[-1, 0] == pytest.approx(0.5, abs=1e-6)


def test_zero_is_an_equilibrium(net1):
    """[DERIVED] x = 0 with w = 0 gives dx = 0 for every node."""
    traj = simulate(net1, T=5.0, dt=0.01, x0=np.zeros(net1.n_nodes))
    assert np.all(traj.states == 0.0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 500))
def test_states_remain_in_unit_box(seed):
    """[DERIVED] the SIS vector field points inward on the faces of [0, 1]^n."""
    net = generate_random(GenConfig(seed=seed, w_range=(0.5, 1.5)))
    dist = make_disturbance(DisturbanceProfile(scale=2.0), net, 170.0, 0.05, seed)
    traj = simulate(net, dist=dist, T=170.0, dt=0.05, seed=seed, record_every=10)
    assert traj.states.min() >= 0.0 and traj.states.max() <= 1.0
    assert traj.max_box_violation < 1e-9


def test_rk4_fourth_order():
    """[DERIVED] halving dt shrinks the error against a fine reference about 16x."""
    g = Group([NodeParams(0.7, 0.0, 0.9), NodeParams(0.5, 0.0, 0.1)], np.array([[0.0, 0.6], [0.4, 0.0]]))
    net = SpreadingNetwork([g], np.zeros((2, 2)))
    ref = simulate(net, T=4.0, dt=0.001).states[-1]
    e1 = np.abs(simulate(net, T=4.0, dt=0.2).states[-1] - ref).max()
    e2 = np.abs(simulate(net, T=4.0, dt=0.1).states[-1] - ref).max()
    assert math.log2(e1 / e2) > 3.5


def test_recovery_rates_within_interval(net1):
    """[DERIVED] gamma(t) = gamma_bar + delta * eta with |eta| <= 1."""
    g = recovery_rates(net1, 50.0, seed=3)
    assert np.all(g >= net1.gamma_bar - net1.delta - 1e-15)
    assert np.all(g <= net1.gamma_bar + net1.delta + 1e-15)


def test_disturbance_deterministic_and_nonnegative(net1):
    a = make_disturbance(DisturbanceProfile(), net1, 200.0, 0.01, seed=4)
    b = make_disturbance(DisturbanceProfile(), net1, 200.0, 0.01, seed=4)
    c = make_disturbance(DisturbanceProfile(), net1, 200.0, 0.01, seed=5)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.values.min() >= 0.0
    assert a.values.shape == (2 * 20000 + 1, net1.n_nodes)


def test_zero_amplitude_disturbance(net1):
    """[TRIVIAL] scale 0 gives an identically zero table."""
    d = make_disturbance(DisturbanceProfile.zero(), net1, 200.0, 0.01, seed=1)
    assert not d.values.any()


def test_sin_component_support(net1):
    """[DERIVED] a sin-only profile is zero outside [t_on + offset, t_off + offset)."""
    prof = DisturbanceProfile.only("sin", scale=1.0)
    d = make_disturbance(prof, net1, 200.0, 0.01, seed=2)
    t = d.half_times
    for c in range(net1.n_nodes):
        off = d.offsets["sin"][c]
        outside = (t < 40.0 + off) | (t >= 45.0 + off)
        assert not d.values[outside, c].any()
        assert d.values[~outside, c].max() > 0.9


def test_amplitude_doubling_is_linear(net1):
    """[DERIVED] the amplitude multiplier scales the whole table (clipping at 0 commutes with x2)."""
    a = make_disturbance(DisturbanceProfile(), net1, 200.0, 0.01, seed=4)
    b = make_disturbance(DisturbanceProfile().scaled(2.0), net1, 200.0, 0.01, seed=4)
    np.testing.assert_allclose(b.values, 2 * a.values, rtol=0, atol=1e-15)


def _traj(t, y):
    t = np.asarray(t, float)
    y = np.asarray(y, float)[:, None]
    z = np.zeros_like(y)
    return Trajectory(t, y, z, z, z, [(0, 0)])


def test_metric_jx_constant():
    """[TRIVIAL] time average of a constant is that constant."""
    assert metric_jx(_traj(np.linspace(0, 10, 101), np.full(101, 0.2))) == pytest.approx(0.2)


def test_metric_jx_exponential():
    """[DERIVED] (1/T) int_0^T e^-t dt = (1 - e^-T) / T; trapezoid error O(h^2)."""
    t = np.linspace(0, 5, 5001)
    assert metric_jx(_traj(t, np.exp(-t))) == pytest.approx((1 - math.exp(-5)) / 5, rel=1e-6)


def test_metric_jx_truncated_horizon():
    t = np.linspace(0, 10, 1001)
    y = np.where(t <= 5, 1.0, 0.0)
    assert metric_jx(_traj(t, y), T=5.0) == pytest.approx(1.0)


def test_csv_export(tmp_path, two_group_net):
    traj = simulate(two_group_net, T=1.0, dt=0.1)
    p = tmp_path / "traj.csv"
    export_csv(traj, p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["t", "group", "node", "x", "u", "w", "gamma"]
    assert len(rows) == 1 + traj.times.size * 3
    assert float(rows[1][3]) == traj.states[0, 0]


@pytest.mark.parametrize("T, dt", [(0.0, 0.01), (1.0, -0.1), (1.0, 0.3)])
def test_bad_grid_rejected(two_group_net, T, dt):
    with pytest.raises(ConfigError):
        simulate(two_group_net, T=T, dt=dt)


def test_disturbance_window_outside_horizon(net1):
    with pytest.raises(ConfigError, match="window"):
        make_disturbance(DisturbanceProfile(), net1, 50.0, 0.01, seed=0)


def test_mismatched_override_rejected(two_group_net):
    with pytest.raises(ConfigError):
        simulate(two_group_net, m_inter=np.zeros((2, 2)), T=1.0, dt=0.1)
