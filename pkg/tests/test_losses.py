import math

import numpy as np
import pytest

from kickstart import losses, nets
from kickstart.errors import ConfigError, NonFiniteError
from kickstart.losses import (a3c_policy_loss, distill_loss, entropy_loss, kickstart_loss,
                              loss_with_targets, value_loss, vtrace_from_arrays)
from kickstart.trajectory import Batch

from oracles import central_differences, make_trajectory, rel_error

# scalar oracles, computed by hand-summed cross-entropy / entropy
DISTILL_07_03_VS_06_04 = 0.63246515619844  # -(0.7 ln 0.6 + 0.3 ln 0.4)
NEG_ENTROPY_07_03 = -0.6108643020548935  # 0.7 ln 0.7 + 0.3 ln 0.3


def test_distill_example_value():
    loss, _ = distill_loss(np.log([0.7, 0.3]), np.log([0.6, 0.4]))
    assert loss == pytest.approx(DISTILL_07_03_VS_06_04, abs=1e-12)


def test_distill_identical_is_entropy_and_zero_gradient():
    logits = np.array([[0.3, -1.2, 2.0], [1.0, 1.0, 1.0]])
    loss, grad = distill_loss(logits, logits)
    p = losses.softmax(logits)
    assert loss == pytest.approx(-(p * np.log(p)).sum(), abs=1e-12)
    assert np.all(grad == 0.0)


def test_entropy_loss_example_and_uniform():
    loss, _ = entropy_loss(np.log([0.7, 0.3]))
    assert loss == pytest.approx(NEG_ENTROPY_07_03, abs=1e-12)
    loss, grad = entropy_loss(np.zeros(4))
    assert loss == pytest.approx(-math.log(4), abs=1e-12)
    assert np.allclose(grad, 0.0, atol=1e-15)


def test_kl_to_uniform_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        logits = rng.normal(size=6) * 3
        p = losses.softmax(logits)
        kl = float(np.sum(p * (np.log(p) - np.log(1 / 6))))
        neg_h, _ = entropy_loss(logits)
        assert kl == pytest.approx(math.log(6) + neg_h, abs=1e-12)


def test_logit_validation():
    with pytest.raises(NonFiniteError):
        distill_loss(np.array([0.0, np.nan]), np.zeros(2))
    with pytest.raises(ConfigError):
        entropy_loss(np.zeros(1))
    with pytest.raises(ValueError):
        distill_loss(np.zeros(3), np.zeros(4))


def test_softmax_stable_for_huge_logits():
    p = losses.softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


# -- V-trace -----------------------------------------------------------------

def test_vtrace_two_step_hand_case():
    # r=(1,0), V=(0.5,0.2,0.0), gamma=0.9, ratios (2, 0.5), clipped at 1
    A = 2
    behaviour = np.log(np.array([[0.25, 0.75], [0.5, 0.5]]))
    target = np.log(np.array([[0.5, 0.5], [0.25, 0.75]]))
    actions = np.array([0, 0])
    out = vtrace_from_arrays(behaviour, target, actions, np.array([1.0, 0.0]),
                             np.array([0.5, 0.2, 0.0]), np.full(2, 0.9), 1.0, 1.0)
    assert np.allclose(out.value_targets, [1.09, 0.1], atol=1e-12, rtol=0)
    assert np.allclose(out.advantages, [0.59, -0.1], atol=1e-12, rtol=0)
    assert np.allclose(out.policy_weights, [1.0, 0.5], atol=1e-12, rtol=0)


def test_vtrace_on_policy_reduces_to_n_step_returns():
    rng = np.random.default_rng(1)
    T, A = 6, 3
    logits = rng.normal(size=(T, A))
    actions = rng.integers(0, A, T)
    rewards = rng.normal(size=T)
    values = rng.normal(size=T + 1)
    disc = np.full(T, 0.9)
    out = vtrace_from_arrays(logits, logits, actions, rewards, values, disc, 1.0, 1.0)
    # on-policy: v_s is the discounted return bootstrapped from V(x_T)
    g = values[-1]
    expected = np.empty(T)
    for t in reversed(range(T)):
        g = rewards[t] + disc[t] * g
        expected[t] = g
    assert np.allclose(out.value_targets, expected, atol=1e-12, rtol=0)
    next_v = np.append(expected[1:], values[-1])
    assert np.allclose(out.advantages, rewards + disc * next_v - values[:-1], atol=1e-12, rtol=0)
    assert np.all(out.policy_weights == 1.0)


def test_vtrace_terminal_cuts_bootstrap():
    logits = np.zeros((2, 2))
    out = vtrace_from_arrays(logits, logits, np.array([0, 1]), np.array([1.0, 2.0]),
                             np.array([0.0, 5.0, 7.0]), np.array([0.0, 0.9]), 1.0, 1.0)
    assert out.value_targets[0] == pytest.approx(1.0)
    assert out.value_targets[1] == pytest.approx(2.0 + 0.9 * 7.0)


def test_vtrace_requires_behaviour_policy():
    with pytest.raises((ValueError, ConfigError)):
        vtrace_from_arrays(None, np.zeros((1, 2)), np.array([0]), np.zeros(1), np.zeros(2),
                           np.ones(1), 1.0, 1.0)


# -- finite differences --------------------------------------------------------

def _fd_logit_check(loss_fn, x, h=1e-5):
    _, grad = loss_fn(x)
    num = central_differences(lambda: loss_fn(x)[0], [x], h)
    return rel_error([grad], num)


@pytest.mark.parametrize("seed", range(100))
def test_scalar_losses_finite_differences(seed):
    rng = np.random.default_rng(seed)
    B, T, A = 2, int(rng.integers(1, 5)), int(rng.integers(2, 6))
    teacher = rng.normal(size=(B, T, A)) * 2
    student = rng.normal(size=(B, T, A)) * 2
    assert _fd_logit_check(lambda s: distill_loss(teacher, s), student) < 1e-4
    assert _fd_logit_check(entropy_loss, student) < 1e-4
    behaviour = rng.normal(size=(B, T, A))
    actions = rng.integers(0, A, size=(B, T))
    values = rng.normal(size=(B, T + 1))
    vt = vtrace_from_arrays(behaviour, student, actions, rng.normal(size=(B, T)), values,
                            np.full((B, T), 0.9), 1.0, 1.0)
    assert _fd_logit_check(lambda s: a3c_policy_loss(actions, vt, s), student.copy()) < 1e-4
    assert _fd_logit_check(lambda v: value_loss(v, vt.value_targets), values[:, :T].copy()) < 1e-4


@pytest.mark.parametrize("seed", range(100))
def test_kickstart_loss_parameter_gradient(seed):
    """Combined (V-trace weighted) loss: analytic parameter gradient vs central differences."""
    rng = np.random.default_rng(1000 + seed)
    D, A, T = 4, int(rng.integers(2, 5)), int(rng.integers(1, 4))
    dims = [D] + [int(rng.integers(2, 5))] * int(rng.integers(0, 3))
    net = nets.init(dims, A, seed)
    trajs = [make_trajectory(rng, T, D, A, teacher_index=i % 2) for i in range(2)]
    lambdas = rng.uniform(0, 2, size=2)
    beta = float(rng.uniform(0, 0.1))
    terms, grads, vt = kickstart_loss(trajs, net, lambdas, beta, 0.5, 0.9)
    batch = Batch.from_trajectories(trajs)

    def f():
        return loss_with_targets(net, batch, vt, lambdas, beta, 0.5)[0].total

    assert f() == pytest.approx(terms.total, abs=1e-12)
    num = central_differences(f, net.parameters())
    assert rel_error(grads.grads, num) < 1e-4


# -- degenerate equivalences ------------------------------------------------------

def test_lambda_zero_is_pure_rl():
    rng = np.random.default_rng(5)
    net = nets.init([6, 5], 3, 0)
    trajs = [make_trajectory(rng, 5, 6, 3) for _ in range(3)]
    t0, g0, _ = kickstart_loss(trajs, net, [0.0], 0.01, 0.5, 0.9)
    rng = np.random.default_rng(5)
    plain = [make_trajectory(rng, 5, 6, 3) for _ in range(3)]
    for p in plain:
        p.teacher_logits = None
        p.teacher_index = None
    t1, g1, _ = kickstart_loss(plain, net, [], 0.01, 0.5, 0.9)
    assert abs(t0.total - t1.total) <= 1e-12
    assert rel_error(g0.grads, g1.grads) <= 1e-12
    assert np.all(g0.flat() == g1.flat())


def test_teacher_equal_student_distill_gradient_zero():
    rng = np.random.default_rng(6)
    net = nets.init([4, 3], 3, 1)
    traj = make_trajectory(rng, 4, 4, 3)
    traj.teacher_logits = nets.forward(net, traj.observations[:-1])[0]
    t, g, _ = kickstart_loss(traj, net, [1.0], 0.0, 0.0, 0.9, rl=False)
    assert np.max(np.abs(g.flat())) <= 1e-12
    assert t.policy_gradient_loss == 0.0 and t.value_loss == 0.0


def test_identical_trajectories_match_single():
    rng = np.random.default_rng(7)
    net = nets.init([4, 5], 3, 2)
    traj = make_trajectory(rng, 5, 4, 3)
    t1, g1, _ = kickstart_loss([traj], net, [0.7], 0.01, 0.5, 0.9)
    t4, g4, _ = kickstart_loss([traj] * 4, net, [0.7], 0.01, 0.5, 0.9)
    assert t4.total == pytest.approx(t1.total, abs=1e-12)
    assert rel_error(g1.grads, g4.grads) < 1e-12


def test_distill_only_has_no_rl_terms():
    rng = np.random.default_rng(8)
    net = nets.init([4, 5], 3, 2)
    t, _, _ = kickstart_loss(make_trajectory(rng, 5, 4, 3), net, [1.0], 0.01, 0.5, 0.9, rl=False)
    assert t.policy_gradient_loss == 0.0 and t.value_loss == 0.0 and t.entropy_loss == 0.0
    assert t.total == pytest.approx(t.distill_loss[0])


def test_missing_teacher_route_is_config_error():
    rng = np.random.default_rng(9)
    net = nets.init([4], 3, 0)
    with pytest.raises(ConfigError):
        kickstart_loss(make_trajectory(rng, 3, 4, 3, teacher_index=1), net, [1.0], 0.01)
    with pytest.raises(ConfigError):
        kickstart_loss(make_trajectory(rng, 3, 4, 3, with_teacher=False), net, [1.0], 0.01)
    with pytest.raises(ConfigError):
        kickstart_loss(make_trajectory(rng, 3, 4, 3), net, [-1.0], 0.01)
