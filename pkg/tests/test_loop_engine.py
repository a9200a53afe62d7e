import numpy as np

import pytest
from pytest import approx, fixture

from CFSFL.components.diffcore import Tensor, backward, grad_check
from CFSFL.components.loop_engine import LoopMode, loss_adversarial, loss_collaborative, policy_step, unroll
from CFSFL.components.recommender import SampleMode, normalize_rows
from CFSFL.components.virtual_user import expert_actions
from CFSFL.constants import FUSION, PHI, PSI, THETA
from CFSFL.exception import ContractError

ROWS = [[0, 3, 7], [2, 5], [1, 8, 9, 4], [6], [0, 1, 2]]


@fixture
def zero_reward(toy_bundle):
    "The toy bundle with an all-zero reward estimator."
    for name in toy_bundle.params.names([PHI]):
        toy_bundle.params[name].data[:] = 0.0
    return toy_bundle


def test_zero_steps_is_the_bare_recommender(toy_bundle):
    trajectory = unroll(ROWS, toy_bundle, 0)
    direct = toy_bundle.recommender.forward(toy_bundle.params, normalize_rows(ROWS, 10), np.zeros((5, 3)),
                                            mode=SampleMode.MEAN)
    assert trajectory.T == 0
    assert np.array_equal(trajectory.final.a.data, direct.a.data)
    assert np.all(trajectory.v0 == 0.0)


def test_step_count_and_starting_feedback(toy_bundle):
    trajectory = unroll(ROWS, toy_bundle, 3)
    assert trajectory.T == 3
    assert len(trajectory.actions) == len(trajectory.rewards) == len(trajectory.feedback) == 3
    assert trajectory.v0.shape == (5, 3)
    assert np.all(trajectory.v0 == 0.0)
    assert trajectory.final is trajectory.steps[-1].policy


def test_two_steps_match_manual_chaining(toy_bundle):
    params = toy_bundle.params.frozen((THETA, PHI, PSI, FUSION))
    x_norm = normalize_rows(ROWS, 10)
    first = policy_step(ROWS, x_norm, Tensor(np.zeros((5, 3))), toy_bundle, params)
    second = policy_step(ROWS, x_norm, first.v, toy_bundle, params)
    trajectory = unroll(ROWS, toy_bundle, 2)
    assert np.array_equal(trajectory.steps[0].v.data, first.v.data)
    assert np.array_equal(trajectory.final.a.data, second.policy.a.data)
    assert np.array_equal(trajectory.rewards[1].data, second.r.data)


def test_feedback_is_unit_norm(toy_bundle):
    for v in unroll(ROWS, toy_bundle, 2).feedback:
        assert np.linalg.norm(v.data, axis=1) == approx(np.ones(5), abs=1e-12)


def test_rewards_and_actions_are_valid(toy_bundle):
    trajectory = unroll(ROWS, toy_bundle, 2)
    for a, r in zip(trajectory.actions, trajectory.rewards):
        assert np.all(np.abs(a.data.sum(axis=1) - 1.0) < 1e-9)
        assert np.all((r.data > 0) & (r.data < 1))


def test_without_feedback_every_step_repeats_the_bare_output(toy_bundle):
    bare = unroll(ROWS, toy_bundle, 0).final.a.data
    trajectory = unroll(ROWS, toy_bundle, 3, use_feedback=False)
    for step in trajectory.steps:
        assert np.all(step.v.data == 0.0)
        assert np.array_equal(step.policy.a.data, bare)


def test_train_mode_is_reproducible(toy_bundle):
    first = unroll(ROWS, toy_bundle, 2, mode=LoopMode.TRAIN, rng=np.random.default_rng(3))
    second = unroll(ROWS, toy_bundle, 2, mode=LoopMode.TRAIN, rng=np.random.default_rng(3))
    other = unroll(ROWS, toy_bundle, 2, mode=LoopMode.TRAIN, rng=np.random.default_rng(4))
    assert np.array_equal(first.final.a.data, second.final.a.data)
    assert not np.array_equal(first.final.a.data, other.final.a.data)


def test_unroll_contracts(toy_bundle):
    with pytest.raises(ContractError):
        unroll(ROWS, toy_bundle, -1)
    with pytest.raises(ContractError):
        unroll([], toy_bundle, 1)
    with pytest.raises(ContractError):
        unroll(ROWS, toy_bundle, 1, mode=LoopMode.TRAIN)


def test_collaborative_loss_with_neutral_reward(zero_reward):
    result = loss_collaborative(ROWS, zero_reward, 2, mode=LoopMode.EVAL)
    assert result.mean_log_reward == approx(np.log(0.5), abs=1e-12)
    assert result.loss.item() == approx(result.elbo + np.log(2.0), abs=1e-9)


def test_collaborative_loss_with_uniform_decoder(zero_reward):
    zero_reward.params["theta.dec.1.W"].data[:] = 0.0
    zero_reward.params["theta.dec.1.b"].data[:] = 0.0
    n = sum(len(row) for row in ROWS)
    result = loss_collaborative(ROWS, zero_reward, 2, beta=0.0, mode=LoopMode.EVAL)
    assert result.trajectory.final.a.data == approx(np.full((5, 10), 0.1), abs=1e-15)
    assert result.elbo == approx(n * np.log(10), abs=1e-9)
    assert result.mean_entropy == approx(np.log(10), abs=1e-12)


def test_collaborative_loss_by_hand(toy_bundle):
    rows = ROWS[:3]
    beta = 0.2
    result = loss_collaborative(rows, toy_bundle, 2, beta=beta, mode=LoopMode.EVAL)
    final = result.trajectory.final
    logits, mu, logvar = final.logits.data, final.mu.data, final.logvar.data

    log_p = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    nll = -sum(log_p[i, j] for i, row in enumerate(rows) for j in row)
    kl = 0.5 * np.sum(np.exp(logvar) + mu ** 2 - 1.0 - logvar)
    g = result.trajectory.steps[-1].reward_logit.data
    expected = nll + beta * kl - np.mean(-np.log1p(np.exp(-g)))
    assert result.loss.item() == approx(expected, abs=1e-9)


def test_entropy_bonus(toy_bundle):
    plain = loss_collaborative(ROWS, toy_bundle, 2, mode=LoopMode.EVAL)
    bonus = loss_collaborative(ROWS, toy_bundle, 2, entropy_weight=0.5, mode=LoopMode.EVAL)
    assert bonus.loss.item() == approx(plain.loss.item() - 0.5 * plain.mean_entropy, abs=1e-9)


def test_collaborative_loss_needs_a_step(toy_bundle):
    with pytest.raises(ContractError):
        loss_collaborative(ROWS, toy_bundle, 0, rng=np.random.default_rng(0))
    with pytest.raises(ContractError):
        loss_collaborative([], toy_bundle, 1, rng=np.random.default_rng(0))


def test_collaborative_grad_check_through_unrolled_loop(toy_bundle):
    params = toy_bundle.params

    def loss():
        return loss_collaborative(ROWS, toy_bundle, 2, mode=LoopMode.EVAL, params=params.frozen((PHI,))).loss

    assert grad_check(loss, params, names=params.names([THETA, PSI, FUSION])) < 1e-4


def test_collaborative_loss_never_moves_the_reward_estimator(toy_bundle):
    result = loss_collaborative(ROWS, toy_bundle, 2, rng=np.random.default_rng(1))
    grads = backward(result.loss, toy_bundle.params)
    for name in toy_bundle.params.names([PHI]):
        assert np.all(grads[name] == 0.0)
    assert any(np.any(grads[name] != 0.0) for name in toy_bundle.params.names([PSI]))
    assert np.any(grads["fusion.B"] != 0.0)


def test_adversarial_loss_with_neutral_reward(zero_reward, rng):
    actions = rng.dirichlet(np.ones(10), size=2)
    result = loss_adversarial(ROWS, ROWS[:2], actions, zero_reward)
    assert result.objective.item() == approx(2 * np.log(0.5), abs=1e-9)
    assert result.mean_reward_expert == result.mean_reward_policy == 0.5


def test_adversarial_loss_matches_formula(toy_bundle, rng):
    user, params = toy_bundle.virtual_user, toy_bundle.params
    policy_rows = ROWS[1:4]
    actions = rng.dirichlet(np.ones(10), size=3)
    result = loss_adversarial(ROWS, policy_rows, actions, toy_bundle)

    g_expert = user.reward_logit(params, user.fuse(params, ROWS, expert_actions(ROWS, 10))).data
    g_policy = user.reward_logit(params, user.fuse(params, policy_rows, actions)).data
    expected = np.mean(-np.logaddexp(0.0, -g_expert)) + np.mean(-np.logaddexp(0.0, g_policy))
    assert result.objective.item() == approx(expected, abs=1e-12)
    assert result.mean_reward_expert == approx(np.mean(1.0 / (1.0 + np.exp(-g_expert))))


def test_adversarial_grad_check(toy_bundle, rng):
    for name in toy_bundle.params.names([PHI]):
        if name.endswith(".b"):
            toy_bundle.params[name].data[:] = rng.normal(scale=0.1, size=toy_bundle.params[name].shape)
    actions = rng.dirichlet(np.ones(10), size=5)
    params = toy_bundle.params
    err = grad_check(lambda: loss_adversarial(ROWS, ROWS, actions, toy_bundle).objective, params,
                     names=params.names([PHI]))
    assert err < 1e-4


def test_adversarial_loss_only_reaches_the_reward_estimator(toy_bundle):
    policy = unroll(ROWS, toy_bundle, 0).final.a
    grads = backward(loss_adversarial(ROWS, ROWS, policy, toy_bundle).objective, toy_bundle.params)
    for name in toy_bundle.params.names([THETA, PSI, FUSION]):
        assert np.all(grads[name] == 0.0)
    assert any(np.any(grads[name] != 0.0) for name in toy_bundle.params.names([PHI]))


def test_adversarial_loss_needs_both_batches(toy_bundle):
    with pytest.raises(ContractError):
        loss_adversarial([], ROWS, np.zeros((5, 10)), toy_bundle)
    with pytest.raises(ContractError):
        loss_adversarial(ROWS, [], np.zeros((0, 10)), toy_bundle)
