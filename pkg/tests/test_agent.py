import dataclasses
import math

import numpy as np
import pytest

from sevot import agent, driveworld as dw
import sevot.seg_lab as sl
from sevot.agent import (
    ActionSample,
    AlternationSchedule,
    Rollout,
    RunConfig,
    Transition,
    UpdateConfig,
    act,
    alternate_optimize,
    init_policy,
    rollout_returns,
    run_actors,
    surrogate_gradients,
    surrogate_loss,
    td_error,
    update,
    update_constants,
)
from sevot.ground_metric import MetricTransform, update_learned_matrix
from sevot.ground_metric import centroid_distances as gm_centroid_distances

from oracles import central_difference_grad, relative_grad_error

TRACK = dw.TrackConfig()
SEG = sl.init_model(seed=0)
LAT_DIM, MEAS_DIM = dw.observation_sizes(TRACK, SEG.hidden_dim)


def _obs(seed=0):
    return dw.observe(dw.reset(seed, TRACK), SEG)


def _tiny_params(seed=0):
    return init_policy(LAT_DIM, MEAS_DIM, seed=seed, latent_hidden=8, meas_hidden=4, trunk_hidden=6)


def test_act_respects_bounds_over_random_draws():
    rng = np.random.default_rng(0)
    obs = _obs(1)
    for trial in range(300):
        params = _tiny_params(seed=trial)
        for _ in range(30):
            sample = act(params, obs, explore=True, rng=rng)
            assert -1.0 <= sample.action.steer <= 1.0
            assert 0.0 <= sample.action.throttle <= 1.0
            assert 0.0 <= sample.action.brake <= 1.0
            assert np.isfinite(sample.log_prob)


def test_act_mean_is_deterministic():
    params = _tiny_params()
    obs = _obs(2)
    a = act(params, obs, explore=False)
    b = act(params, obs, explore=False)
    assert a.action == b.action
    assert a.log_prob == b.log_prob


def test_act_log_prob_matches_quadrature():
    """The squashed density must integrate to one along each action axis."""
    params = _tiny_params(seed=3)
    sample = act(params, _obs(3), explore=False)
    mean, std = sample.mean, np.exp(sample.log_std)

    def gaussian(u, mu, sigma):
        return np.exp(-0.5 * ((u - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))

    def trapezoid(y, x):
        return float(((y[1:] + y[:-1]) / 2 * np.diff(x)).sum())

    # steer: a = tanh(u), density N(atanh a) / (1 - a^2)
    a = np.linspace(-1 + 1e-9, 1 - 1e-9, 40001)
    dens = gaussian(np.arctanh(a), mean[0], std[0]) / (1 - a * a)
    assert trapezoid(dens, a) == pytest.approx(1.0, abs=1e-3)
    # throttle and brake: a = sigmoid(u), density N(logit a) / (a (1 - a))
    for d in (1, 2):
        a = np.linspace(1e-9, 1 - 1e-9, 40001)
        dens = gaussian(np.log(a / (1 - a)), mean[d], std[d]) / (a * (1 - a))
        assert trapezoid(dens, a) == pytest.approx(1.0, abs=1e-3)
    # and the reported log-probability is the sum of the per-axis log densities
    act_sample = act(params, _obs(3), explore=True, rng=np.random.default_rng(0))
    u, action = act_sample.u, act_sample.action
    per_axis = (
        math.log(gaussian(u[0], mean[0], std[0]) / (1 - action.steer**2))
        + math.log(gaussian(u[1], mean[1], std[1]) / (action.throttle * (1 - action.throttle)))
        + math.log(gaussian(u[2], mean[2], std[2]) / (action.brake * (1 - action.brake)))
    )
    assert act_sample.log_prob == pytest.approx(per_axis, abs=1e-9)


def test_act_rejects_non_finite_network():
    params = _tiny_params()
    params.w_pi[:] = np.nan
    with pytest.raises(FloatingPointError):
        act(params, _obs(0), explore=False)


def test_td_error_examples():
    assert td_error(1.0, 0.9, 2.0, 1.0, False) == pytest.approx(1.8)
    assert td_error(1.0, 0.9, 2.0, 1.0, True) == pytest.approx(0.0)
    assert td_error(0.5, 0.0, 9.0, 2.0, False) == pytest.approx(-1.5)
    with pytest.raises(ValueError):
        td_error(1.0, 1.0, 0.0, 0.0, False)


def _transition(reward, value, done, rng=None):
    rng = rng or np.random.default_rng(0)
    return Transition(
        lat=rng.standard_normal(LAT_DIM),
        meas=rng.standard_normal(MEAS_DIM),
        u=rng.standard_normal(3),
        gauss_log_prob=-2.0,
        squash_corr=1.0,
        reward=reward,
        value=value,
        done=done,
    )


def test_rollout_returns_examples():
    single = Rollout(transitions=[_transition(1.0, 0.25, True)], bootstrap_value=99.0)
    returns, advantages = rollout_returns(single, 0.9)
    assert returns.tolist() == [1.0]
    assert advantages.tolist() == [0.75]

    zeros = Rollout(transitions=[_transition(0.0, 0.0, False) for _ in range(4)], bootstrap_value=0.0)
    returns, _ = rollout_returns(zeros, 0.9)
    assert returns.tolist() == [0.0, 0.0, 0.0, 0.0]

    hand = Rollout(transitions=[_transition(1.0, 0.0, False) for _ in range(3)], bootstrap_value=2.0)
    returns, _ = rollout_returns(hand, 0.5)
    np.testing.assert_allclose(returns, [2.0, 2.0, 2.0])

    with pytest.raises(ValueError):
        rollout_returns(Rollout(transitions=[], bootstrap_value=0.0), 0.9)


def _random_rollout(rng, length=5, done_end=False):
    transitions = [
        _transition(float(rng.normal()), float(rng.normal()), False, rng) for _ in range(length - 1)
    ]
    transitions.append(_transition(float(rng.normal()), float(rng.normal()), done_end, rng))
    return Rollout(transitions=transitions, bootstrap_value=float(rng.normal()))


def test_zero_advantages_zero_policy_gradient():
    rng = np.random.default_rng(1)
    params = _tiny_params(seed=1)
    rollout = _random_rollout(rng)
    config = UpdateConfig(entropy_coef=0.0, value_coef=0.0)
    n = len(rollout.transitions)
    consts = (np.zeros(n), np.zeros(n), np.ones(n))
    _, grads, _ = surrogate_gradients(params, [rollout], config, consts)
    for grad in grads.values():
        assert np.all(grad == 0.0)


def test_surrogate_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)

    def pack(params):
        return np.concatenate([v.ravel() for _, v in sorted(params.arrays().items())])

    def unpack(params, flat):
        new = params.copy()
        k = 0
        for name, arr in sorted(new.arrays().items()):
            getattr(new, name)[...] = flat[k : k + arr.size].reshape(arr.shape)
            k += arr.size
        return new

    for trial in range(5):
        params = init_policy(10, 3, seed=trial, latent_hidden=5, meas_hidden=3, trunk_hidden=4)
        rollouts = []
        for _ in range(2):
            transitions = [
                Transition(
                    lat=rng.standard_normal(10),
                    meas=rng.standard_normal(3),
                    u=rng.standard_normal(3) * 0.5,
                    gauss_log_prob=float(rng.normal(-2, 0.3)),
                    squash_corr=float(rng.normal(1, 0.2)),
                    reward=float(rng.normal()),
                    value=float(rng.normal()),
                    done=False,
                )
                for _ in range(4)
            ]
            rollouts.append(Rollout(transitions=transitions, bootstrap_value=float(rng.normal())))
        config = UpdateConfig(entropy_coef=0.01, gamma=0.9)
        consts = update_constants(params, rollouts, config)
        _, grads, _ = surrogate_gradients(params, rollouts, config, consts)
        analytic = np.concatenate([grads[k].ravel() for k in sorted(grads)])
        numeric = central_difference_grad(
            lambda flat: surrogate_loss(unpack(params, flat), rollouts, config, consts)[0],
            pack(params),
            h=1e-6,
        )
        assert relative_grad_error(analytic, numeric) < 1e-6


def test_update_zero_lr_keeps_params():
    rng = np.random.default_rng(3)
    params = _tiny_params(seed=2)
    before = {k: v.copy() for k, v in params.arrays().items()}
    new, diag = update(params, [_random_rollout(rng)], UpdateConfig(lr=0.0))
    assert not diag["rejected"]
    for name, arr in new.arrays().items():
        np.testing.assert_array_equal(arr, before[name])


def test_update_rejects_non_finite_gradients():
    rng = np.random.default_rng(4)
    params = _tiny_params(seed=3)
    rollout = _random_rollout(rng)
    rollout.transitions[0].lat[0] = np.nan
    before = {k: v.copy() for k, v in params.arrays().items()}
    new, diag = update(params, [rollout], UpdateConfig())
    assert diag["rejected"]
    for name, arr in new.arrays().items():
        np.testing.assert_array_equal(arr, before[name])


def test_run_actors_serial_mode_is_deterministic():
    def run_once():
        params = init_policy(LAT_DIM, MEAS_DIM, seed=0)
        envs = [dw.reset(900, TRACK)]
        config = RunConfig(total_steps=300, seed=5)
        result = run_actors(1, envs, params, SEG, config)
        return [(e.length, e.total_reward, e.reason) for e in result.episodes]

    assert run_once() == run_once()


def test_run_actors_step_accounting():
    params = init_policy(LAT_DIM, MEAS_DIM, seed=1)
    envs = [dw.reset(50 + i, TRACK) for i in range(2)]
    config = RunConfig(total_steps=150, rollout_len=20, seed=6)
    result = run_actors(2, envs, params, SEG, config)
    assert len(result.curve) > 0
    last = result.curve[-1]
    assert 150 <= last["step"] <= 150 + 2 * config.rollout_len


def test_run_actors_isolates_failed_worker():
    params = init_policy(LAT_DIM, MEAS_DIM, seed=2)
    good = dw.reset(61, TRACK)
    bad = dataclasses.replace(dw.reset(62, TRACK), x=float("nan"))
    config = RunConfig(total_steps=120, seed=7)
    with pytest.warns(UserWarning, match="dropped"):
        result = run_actors(2, [good, bad], params, SEG, config)
    assert result.curve  # the surviving worker made progress


def test_run_actors_fails_when_all_workers_die():
    params = init_policy(LAT_DIM, MEAS_DIM, seed=3)
    bad = dataclasses.replace(dw.reset(63, TRACK), x=float("nan"))
    with pytest.warns(UserWarning):
        with pytest.raises(RuntimeError):
            run_actors(1, [bad], params, SEG, RunConfig(total_steps=100, seed=8))


def test_alternation_schedule_validation():
    linear = AlternationSchedule.linear(5, steps_per_round=100)
    assert linear.alphas[0] == 10.0
    assert linear.alphas[-1] == 0.0
    assert all(b <= a for a, b in zip(linear.alphas, linear.alphas[1:]))
    assert AlternationSchedule.linear(1, 10).alphas == (0.0,)
    assert AlternationSchedule.linear(0, 10).alphas == ()
    with pytest.raises(ValueError):
        AlternationSchedule(alphas=(1.0, 2.0), steps_per_round=10)
    with pytest.raises(ValueError):
        AlternationSchedule(alphas=(-1.0,), steps_per_round=10)


def test_alternate_optimize_zero_rounds_returns_predefined():
    predefined = sl.default_severity_matrix().transposed()
    params = init_policy(LAT_DIM, MEAS_DIM, seed=4)
    result = alternate_optimize(
        SEG, params, AlternationSchedule.linear(0, 10), predefined,
        MetricTransform.linear(), TRACK, RunConfig(seed=9), k=1,
    )
    assert result.matrix is predefined
    assert result.rounds == []


def test_alternate_optimize_round_invariants_and_reproducibility():
    predefined = sl.default_severity_matrix().transposed()
    params = init_policy(LAT_DIM, MEAS_DIM, seed=5)
    transform = MetricTransform.power(2.0)
    schedule = AlternationSchedule.linear(2, steps_per_round=150)
    result = alternate_optimize(
        SEG, params, schedule, predefined, transform, TRACK,
        RunConfig(seed=10), k=1, feature_frames=8,
    )
    assert len(result.rounds) == 2
    assert result.rounds[-1].alpha == 0.0
    for record in result.rounds:
        costs = record.matrix.costs
        assert np.all(costs >= 0)
        assert np.all(np.diag(costs) == 0.0)
        # step 2 is a pure function of its recorded inputs
        rebuilt = update_learned_matrix(predefined, record.dbar, record.alpha, transform)
        np.testing.assert_array_equal(rebuilt.costs, costs)
        # recomputing distances from the stored centroids is bit-identical
        again = gm_centroid_distances(record.centroids, record.present)
        np.testing.assert_array_equal(
            np.nan_to_num(again, nan=-1.0), np.nan_to_num(record.dbar, nan=-1.0)
        )
    assert result.curve
    assert {"alpha", "round", "step"} <= set(result.curve[0])
