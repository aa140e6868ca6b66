"""Advantage actor-critic over driveworld observations, plus the alternating
optimization that learns the severity ground matrix during agent training."""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import driveworld, seg_lab
from .driveworld import Action, Observation, TrackConfig, WorldState
from .ground_metric import (
    GroundMatrix,
    MetricTransform,
    centroid_distances,
    class_centroids,
    update_learned_matrix,
)
from .seg_lab import LossSpec, SoftmaxModel, batch_loss_grad

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

ACTION_DIM = 3


@dataclass(eq=False)
class PolicyValueParams:
    """Two-branch trunk (latent grid + measurements) with policy/value heads.

    The policy head emits per-action mean and a tanh-squashed log-stddev;
    steer is squashed by tanh, throttle and brake by the unit sigmoid.
    """

    w_lat: np.ndarray
    b_lat: np.ndarray
    w_meas: np.ndarray
    b_meas: np.ndarray
    w_trunk: np.ndarray
    b_trunk: np.ndarray
    w_pi: np.ndarray
    b_pi: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray

    def copy(self) -> PolicyValueParams:
        return copy.deepcopy(self)

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())


def init_policy(
    latent_dim: int,
    meas_dim: int,
    seed: int = 0,
    latent_hidden: int = 64,
    meas_hidden: int = 16,
    trunk_hidden: int = 64,
) -> PolicyValueParams:
    rng = np.random.default_rng(seed)

    def glorot(n_in, n_out):
        return rng.standard_normal((n_in, n_out)) * math.sqrt(2.0 / (n_in + n_out))

    return PolicyValueParams(
        w_lat=glorot(latent_dim, latent_hidden),
        b_lat=np.zeros(latent_hidden),
        w_meas=glorot(meas_dim, meas_hidden),
        b_meas=np.zeros(meas_hidden),
        w_trunk=glorot(latent_hidden + meas_hidden, trunk_hidden),
        b_trunk=np.zeros(trunk_hidden),
        w_pi=glorot(trunk_hidden, 2 * ACTION_DIM),
        b_pi=np.zeros(2 * ACTION_DIM),
        w_v=glorot(trunk_hidden, 1),
        b_v=np.zeros(1),
    )


def obs_vector(obs: Observation):
    return obs.latents.reshape(-1), obs.measurements


def _forward(params: PolicyValueParams, lat: np.ndarray, meas: np.ndarray):
    """Batched forward pass; returns outputs plus the cache for backprop."""
    a_lat = np.tanh(lat @ params.w_lat + params.b_lat)
    a_meas = np.tanh(meas @ params.w_meas + params.b_meas)
    joint = np.concatenate([a_lat, a_meas], axis=-1)
    trunk = np.tanh(joint @ params.w_trunk + params.b_trunk)
    raw = trunk @ params.w_pi + params.b_pi
    mean = raw[:, :ACTION_DIM]
    squash = np.tanh(raw[:, ACTION_DIM:])
    log_std = 0.5 * (LOG_STD_MAX + LOG_STD_MIN) + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * squash
    value = (trunk @ params.w_v + params.b_v)[:, 0]
    cache = {
        "lat": lat, "meas": meas, "a_lat": a_lat, "a_meas": a_meas,
        "joint": joint, "trunk": trunk, "squash": squash,
    }
    return mean, log_std, value, cache


def _backward(params, cache, d_mean, d_log_std, d_value):
    """Parameter gradients given output gradients (batch already summed in)."""
    d_squash = d_log_std * 0.5 * (LOG_STD_MAX - LOG_STD_MIN)
    d_raw = np.concatenate([d_mean, d_squash * (1.0 - cache["squash"] ** 2)], axis=1)
    grads = {}
    grads["w_pi"] = cache["trunk"].T @ d_raw
    grads["b_pi"] = d_raw.sum(axis=0)
    grads["w_v"] = cache["trunk"].T @ d_value[:, None]
    grads["b_v"] = d_value.sum(axis=0, keepdims=True)
    d_trunk = d_raw @ params.w_pi.T + d_value[:, None] @ params.w_v.T
    d_trunk = d_trunk * (1.0 - cache["trunk"] ** 2)
    grads["w_trunk"] = cache["joint"].T @ d_trunk
    grads["b_trunk"] = d_trunk.sum(axis=0)
    d_joint = d_trunk @ params.w_trunk.T
    n_lat = cache["a_lat"].shape[1]
    d_a_lat = d_joint[:, :n_lat] * (1.0 - cache["a_lat"] ** 2)
    d_a_meas = d_joint[:, n_lat:] * (1.0 - cache["a_meas"] ** 2)
    grads["w_lat"] = cache["lat"].T @ d_a_lat
    grads["b_lat"] = d_a_lat.sum(axis=0)
    grads["w_meas"] = cache["meas"].T @ d_a_meas
    grads["b_meas"] = d_a_meas.sum(axis=0)
    return grads


def _softplus(x):
    return np.logaddexp(0.0, x)


def _squash_correction(u: np.ndarray) -> float:
    """log |det d(action)/d(u)| for (tanh, sigmoid, sigmoid) squashing."""
    tanh_term = 2.0 * (math.log(2.0) - u[0] - float(_softplus(-2.0 * u[0])))
    sig_terms = sum(-float(_softplus(u[d])) - float(_softplus(-u[d])) for d in (1, 2))
    return tanh_term + sig_terms


def _gaussian_log_pdf(u, mean, log_std):
    z = (u - mean) / np.exp(log_std)
    return float((-0.5 * z * z - log_std - _HALF_LOG_2PI).sum())


@dataclass(frozen=True, eq=False)
class ActionSample:
    action: Action
    u: np.ndarray  # pre-squash sample
    log_prob: float  # density of the squashed action
    gauss_log_prob: float  # density of u under the diagonal Gaussian
    value: float
    mean: np.ndarray
    log_std: np.ndarray


def act(params: PolicyValueParams, obs: Observation, explore: bool, rng=None) -> ActionSample:
    """Sample (or take the mean of) the squashed diagonal-Gaussian policy.

    The log-probability includes the tanh/sigmoid change-of-variables
    correction.  With explore=False the pre-squash mean is used and the
    returned action is deterministic.
    """
    lat, meas = obs_vector(obs)
    mean, log_std, value, _ = _forward(params, lat[None], meas[None])
    mean, log_std, value = mean[0], log_std[0], float(value[0])
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_std))):
        raise FloatingPointError("policy network produced non-finite outputs")
    if explore:
        if rng is None:
            raise ValueError("exploration requires an rng")
        u = mean + np.exp(log_std) * rng.standard_normal(ACTION_DIM)
    else:
        u = mean.copy()
    action = Action(
        steer=float(np.tanh(u[0])),
        throttle=float(1.0 / (1.0 + np.exp(-u[1]))),
        brake=float(1.0 / (1.0 + np.exp(-u[2]))),
    )
    gauss = _gaussian_log_pdf(u, mean, log_std)
    return ActionSample(
        action=action,
        u=u,
        log_prob=gauss - _squash_correction(u),
        gauss_log_prob=gauss,
        value=value,
        mean=mean,
        log_std=log_std,
    )


def td_error(r: float, gamma: float, v_next: float, v_now: float, terminal: bool) -> float:
    """One-step temporal-difference error r + gamma*V(s') - V(s)."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    return r + gamma * v_next * (0.0 if terminal else 1.0) - v_now


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Transition:
    lat: np.ndarray
    meas: np.ndarray
    u: np.ndarray
    gauss_log_prob: float
    squash_corr: float
    reward: float
    value: float
    done: bool


@dataclass(eq=False)
class Rollout:
    """Up to ``rollout_len`` contiguous transitions plus the bootstrap value
    at the cut (ignored when the last transition is terminal)."""

    transitions: list
    bootstrap_value: float


def rollout_returns(rollout: Rollout, gamma: float):
    """Discounted n-step returns and advantages (return minus stored value)."""
    if not rollout.transitions:
        raise ValueError("empty rollout")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    n = len(rollout.transitions)
    returns = np.zeros(n)
    future = 0.0 if rollout.transitions[-1].done else rollout.bootstrap_value
    for k in range(n - 1, -1, -1):
        t = rollout.transitions[k]
        future = t.reward + gamma * (0.0 if t.done and k == n - 1 else future)
        if t.done and k < n - 1:
            # a rollout never spans episodes; guard anyway
            future = t.reward
        returns[k] = future
    values = np.array([t.value for t in rollout.transitions])
    return returns, returns - values


@dataclass(frozen=True)
class UpdateConfig:
    lr: float = 7e-4
    entropy_coef: float = 0.01
    gamma: float = 0.99
    value_coef: float = 0.5
    ratio_clip: float = 1.0  # importance weights clipped at this value
    normalize_advantages: bool = True  # per-batch standardization (variance control)
    grad_clip: float = 10.0  # global-norm gradient clip; 0 disables


def surrogate_loss(params: PolicyValueParams, rollouts, config: UpdateConfig, consts=None):
    """Mean surrogate over transitions: -ratio*logpi*A - c_e*H + c_v*(V-R)^2.

    Advantages, returns and importance ratios are constants (stop-gradient
    contract); recomputing the loss at perturbed parameters with the same
    ``consts`` is exactly what a finite-difference check differentiates.
    """
    transitions = [t for r in rollouts for t in r.transitions]
    if consts is None:
        consts = update_constants(params, rollouts, config)
    advantages, returns, ratios = consts
    lat = np.stack([t.lat for t in transitions])
    meas = np.stack([t.meas for t in transitions])
    u = np.stack([t.u for t in transitions])
    mean, log_std, value, cache = _forward(params, lat, meas)
    std = np.exp(log_std)
    z = (u - mean) / std
    gauss = (-0.5 * z * z - log_std - _HALF_LOG_2PI).sum(axis=1)
    corr = np.array([t.squash_corr for t in transitions])
    log_pi = gauss - corr
    entropy = log_std.sum(axis=1) + 0.5 * ACTION_DIM * (1.0 + math.log(2.0 * math.pi))
    value_err = value - returns
    loss = float(
        np.mean(-ratios * advantages * log_pi)
        - config.entropy_coef * float(np.mean(entropy))
        + config.value_coef * float(np.mean(value_err**2))
    )
    aux = (transitions, advantages, returns, ratios, mean, log_std, value, cache, z, std)
    return loss, aux


def update_constants(params: PolicyValueParams, rollouts, config: UpdateConfig):
    """Advantages, returns and clipped importance ratios for an update batch."""
    adv_parts, ret_parts, ratio_parts = [], [], []
    for rollout in rollouts:
        returns, advantages = rollout_returns(rollout, config.gamma)
        transitions = rollout.transitions
        lat = np.stack([t.lat for t in transitions])
        meas = np.stack([t.meas for t in transitions])
        u = np.stack([t.u for t in transitions])
        mean, log_std, _, _ = _forward(params, lat, meas)
        z = (u - mean) / np.exp(log_std)
        gauss = (-0.5 * z * z - log_std - _HALF_LOG_2PI).sum(axis=1)
        behavior = np.array([t.gauss_log_prob for t in transitions])
        ratio = np.minimum(np.exp(gauss - behavior), config.ratio_clip)
        adv_parts.append(advantages)
        ret_parts.append(returns)
        ratio_parts.append(ratio)
    advantages = np.concatenate(adv_parts)
    if config.normalize_advantages:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    return advantages, np.concatenate(ret_parts), np.concatenate(ratio_parts)


def surrogate_gradients(params: PolicyValueParams, rollouts, config: UpdateConfig, consts=None):
    """Analytic parameter gradients of :func:`surrogate_loss`."""
    if consts is None:
        consts = update_constants(params, rollouts, config)
    loss, aux = surrogate_loss(params, rollouts, config, consts)
    transitions, advantages, returns, ratios, mean, log_std, value, cache, z, std = aux
    n = len(transitions)
    weight = (ratios * advantages)[:, None] / n
    d_mean = -weight * z / std  # d(-ratio*A*logpi)/d mean
    d_log_std = -weight * (z * z - 1.0) - config.entropy_coef / n
    d_value = 2.0 * config.value_coef * (value - returns) / n
    grads = _backward(params, cache, d_mean, d_log_std, d_value)
    diagnostics = {
        "loss": loss,
        "entropy": float(np.mean(log_std.sum(axis=1)))
        + 0.5 * ACTION_DIM * (1.0 + math.log(2.0 * math.pi)),
        "mean_advantage": float(advantages.mean()),
    }
    return loss, grads, diagnostics


def update(params: PolicyValueParams, rollouts, config: UpdateConfig):
    """One gradient step on the surrogate; returns (new params, diagnostics).

    A step whose gradient is non-finite is rejected and flagged in the
    diagnostics instead of corrupting the parameters.
    """
    consts = update_constants(params, rollouts, config)
    loss, grads, diag = surrogate_gradients(params, rollouts, config, consts)
    if config.grad_clip > 0:
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > config.grad_clip:
            scale = config.grad_clip / norm
            grads = {k: g * scale for k, g in grads.items()}
    finite = all(np.all(np.isfinite(g)) for g in grads.values())
    diagnostics = dict(diag)
    diagnostics["grad_norm"] = float(
        math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    )
    diagnostics["rejected"] = not finite
    if not finite:
        return params, diagnostics
    new = params.copy()
    for name, grad in grads.items():
        getattr(new, name)[...] -= config.lr * grad
    return new, diagnostics


# ---------------------------------------------------------------------------
# Actor/learner loop (cooperative round-robin workers, serial learner)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    total_steps: int = 20000
    rollout_len: int = 20
    lr: float = 7e-4
    entropy_coef: float = 0.01
    gamma: float = 0.99
    lr_decay: bool = True
    seed: int = 0
    pool: int = 4
    reward_scale: float = 0.05  # conditions the critic; logs keep raw rewards
    keep_step_logs: bool = False
    frame_reservoir: int = 256
    seg_finetune_every: int = 0  # learner updates between segmenter steps; 0 disables
    seg_finetune_lr: float = 0.05


@dataclass(eq=False)
class EpisodeRecord:
    length: int
    total_reward: float
    reason: str | None
    distance_km: float
    reached_goal: bool
    seed: int
    steps: list | None = None


@dataclass(eq=False)
class RunResult:
    params: PolicyValueParams
    episodes: list
    curve: list
    frames: list  # reservoir of rendered SceneSamples from worker episodes
    segmenter: SoftmaxModel


class _Worker:
    """One rollout worker owning a world and a parameter snapshot."""

    def __init__(self, index, initial: WorldState, segmenter, config: RunConfig, track: TrackConfig):
        self.index = index
        self.state = initial
        self.segmenter = segmenter
        self.config = config
        self.track = track
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(7, index)))
        self.episode_seed = initial.seed
        self.snapshot: PolicyValueParams | None = None
        self.prev_latent = None
        self.obs = None
        self.episode_reward = 0.0
        self.episode_distance = 0.0
        self.step_rows: list = []

    def _reset_world(self):
        self.episode_seed = int(self.rng.integers(0, 2**31 - 1))
        self.state = driveworld.reset(self.episode_seed, self.track)
        self.prev_latent = None
        self.obs = None
        self.episode_reward = 0.0
        self.episode_distance = 0.0
        self.step_rows = []

    def collect(self, frames_sink, episodes_sink):
        rollout = Rollout(transitions=[], bootstrap_value=0.0)
        params = self.snapshot
        if self.obs is None:
            self.obs = driveworld.observe(self.state, self.segmenter, self.prev_latent, self.config.pool)
        obs = self.obs
        for _ in range(self.config.rollout_len):
            self.prev_latent = obs.latents[1]
            sample = act(params, obs, explore=True, rng=self.rng)
            next_state, outcome = driveworld.step(self.state, sample.action)
            self.episode_reward += outcome.reward
            self.episode_distance += next_state.speed * self.track.dt
            if self.config.keep_step_logs:
                self.step_rows.append(
                    driveworld.step_log_row(next_state.step_count - 1, sample.action, outcome, next_state)
                )
            if frames_sink is not None and self.rng.random() < 0.1:
                frames_sink(driveworld.render_front_view(self.state))
            lat, meas = obs_vector(obs)
            rollout.transitions.append(
                Transition(
                    lat=lat,
                    meas=meas,
                    u=sample.u,
                    gauss_log_prob=sample.gauss_log_prob,
                    squash_corr=sample.gauss_log_prob - sample.log_prob,
                    reward=outcome.reward * self.config.reward_scale,
                    value=sample.value,
                    done=outcome.done,
                )
            )
            if outcome.done:
                episodes_sink(
                    EpisodeRecord(
                        length=next_state.step_count,
                        total_reward=self.episode_reward,
                        reason=outcome.reason,
                        distance_km=self.episode_distance / 1000.0,
                        reached_goal=outcome.reason == "goal",
                        seed=self.episode_seed,
                        steps=self.step_rows if self.config.keep_step_logs else None,
                    )
                )
                self._reset_world()
                self.obs = driveworld.observe(self.state, self.segmenter, None, self.config.pool)
                break
            self.state = next_state
            obs = driveworld.observe(self.state, self.segmenter, self.prev_latent, self.config.pool)
            self.obs = obs
        if rollout.transitions and not rollout.transitions[-1].done:
            tail = act(params, self.obs, explore=False)
            rollout.bootstrap_value = tail.value
        return rollout


def run_actors(
    k: int,
    envs,
    params: PolicyValueParams,
    segmenter: SoftmaxModel,
    config: RunConfig,
    ground_matrix: GroundMatrix | None = None,
) -> RunResult:
    """k cooperative workers feeding one serial learner.

    Workers collect fixed-length rollouts round-robin from independent
    worlds and refresh their parameter snapshot after every learner update;
    staleness is handled by importance-weight clipping at 1.  The learning
    rate decays linearly to zero over ``config.total_steps``.  A worker
    that raises is dropped (the run continues with the rest); the run only
    fails when every worker is gone.  When ``seg_finetune_every`` is set,
    the learner periodically fine-tunes the segmenter with the one-hot
    transport loss under ``ground_matrix`` on reservoir frames.
    """
    if k < 1:
        raise ValueError("need at least one actor")
    envs = list(envs)
    if len(envs) != k:
        raise ValueError(f"expected {k} initial worlds, got {len(envs)}")
    segmenter = segmenter.copy()
    track = envs[0].track.config
    workers = [_Worker(i, envs[i], segmenter, config, track) for i in range(k)]
    for worker in workers:
        worker.snapshot = params.copy()

    reservoir_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(11,)))
    frames: list = []
    seen = 0

    def frames_sink(frame):
        nonlocal seen
        seen += 1
        if len(frames) < config.frame_reservoir:
            frames.append(frame)
        else:
            j = int(reservoir_rng.integers(0, seen))
            if j < config.frame_reservoir:
                frames[j] = frame

    episodes: list = []
    curve: list = []
    steps_done = 0
    updates_done = 0
    recent: list = []

    def episodes_sink(record):
        episodes.append(record)
        recent.append(record)
        if len(recent) > 20:
            recent.pop(0)

    update_cfg = UpdateConfig(
        lr=config.lr, entropy_coef=config.entropy_coef, gamma=config.gamma
    )
    while steps_done < config.total_steps and workers:
        for worker in list(workers):
            if steps_done >= config.total_steps:
                break
            try:
                rollout = worker.collect(frames_sink, episodes_sink)
            except Exception as exc:  # worker panic isolation
                warnings.warn(f"worker {worker.index} failed and was dropped: {exc}")
                workers.remove(worker)
                continue
            if not rollout.transitions:
                continue
            steps_done += len(rollout.transitions)
            lr_now = config.lr * max(0.0, 1.0 - steps_done / config.total_steps) if config.lr_decay else config.lr
            params, diag = update(params, [rollout], replace(update_cfg, lr=lr_now))
            updates_done += 1
            worker.snapshot = params.copy()
            if (
                config.seg_finetune_every
                and ground_matrix is not None
                and updates_done % config.seg_finetune_every == 0
                and frames
            ):
                frame = frames[int(reservoir_rng.integers(0, len(frames)))]
                _, grads = batch_loss_grad(
                    segmenter, frame, LossSpec("wasserstein", matrix=ground_matrix)
                )
                for name, grad in grads.items():
                    getattr(segmenter, name)[...] -= config.seg_finetune_lr * grad
            if updates_done % 10 == 0 or steps_done >= config.total_steps:
                curve.append(
                    {
                        "step": steps_done,
                        "lr": lr_now,
                        "entropy": diag["entropy"],
                        "mean_reward": float(np.mean([e.total_reward for e in recent])) if recent else None,
                        "mean_episode_length": float(np.mean([e.length for e in recent])) if recent else None,
                    }
                )
    if not workers:
        raise RuntimeError("all workers failed")
    return RunResult(params=params, episodes=episodes, curve=curve, frames=frames, segmenter=segmenter)


# ---------------------------------------------------------------------------
# Alternating optimization of the ground matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlternationSchedule:
    """Rounds of Step-1 training and Step-2 matrix refitting.

    The mixing weight alpha must be nonincreasing; the linear schedule
    decays from 10 to 0 (a single round jumps straight to 0, the fully
    learned endpoint).
    """

    alphas: tuple
    steps_per_round: int

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if any(b > a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("alpha schedule must be nonincreasing")
        if any(a < 0 for a in alphas):
            raise ValueError("alpha must be nonnegative")
        object.__setattr__(self, "alphas", alphas)

    @property
    def rounds(self) -> int:
        return len(self.alphas)

    @classmethod
    def linear(cls, rounds: int, steps_per_round: int, alpha_start: float = 10.0):
        if rounds <= 0:
            alphas = ()
        elif rounds == 1:
            alphas = (0.0,)
        else:
            alphas = tuple(np.linspace(alpha_start, 0.0, rounds))
        return cls(alphas=alphas, steps_per_round=steps_per_round)


@dataclass(eq=False)
class RoundRecord:
    alpha: float
    matrix: GroundMatrix
    dbar: np.ndarray
    centroids: np.ndarray
    present: np.ndarray
    features: np.ndarray  # pooled penultimate features used for the centroids
    labels: np.ndarray
    mean_episode_length: float | None


@dataclass(eq=False)
class AlternationResult:
    matrix: GroundMatrix
    params: PolicyValueParams
    segmenter: SoftmaxModel
    rounds: list
    curve: list = field(default_factory=list)


def alternate_optimize(
    segmenter: SoftmaxModel,
    params: PolicyValueParams,
    schedule: AlternationSchedule,
    predefined: GroundMatrix,
    transform: MetricTransform,
    track: TrackConfig = TrackConfig(),
    run_config: RunConfig = RunConfig(),
    k: int = 4,
    feature_frames: int = 64,
) -> AlternationResult:
    """Alternate agent/segmenter training with ground-matrix refitting.

    Step 1 of each round trains the actor-critic (and optionally fine-tunes
    the segmenter) under the current matrix; Step 2 recomputes class
    centroids from penultimate features over frames sampled uniformly from
    the round's episodes and mixes their pairwise l1 distances with the
    predefined table using the round's alpha.  With an empty schedule the
    predefined matrix is returned unchanged.
    """
    working = predefined.transformed(transform)
    rounds: list[RoundRecord] = []
    curve: list = []
    if schedule.rounds == 0:
        return AlternationResult(matrix=predefined, params=params, segmenter=segmenter, rounds=rounds)
    for round_index, alpha in enumerate(schedule.alphas):
        round_cfg = replace(
            run_config,
            total_steps=schedule.steps_per_round,
            seed=run_config.seed + round_index,
        )
        envs = [
            driveworld.reset(run_config.seed * 1000 + round_index * 100 + i, track)
            for i in range(k)
        ]
        result = run_actors(k, envs, params, segmenter, round_cfg, ground_matrix=working)
        params = result.params
        segmenter = result.segmenter
        for row in result.curve:
            curve.append({**row, "round": round_index, "alpha": float(alpha)})

        round_rng = np.random.default_rng(
            np.random.SeedSequence(run_config.seed, spawn_key=(13, round_index))
        )
        if not result.frames:
            raise RuntimeError("no rendered frames collected for the matrix update")
        picks = round_rng.integers(0, len(result.frames), size=feature_frames)
        feats, labels = [], []
        for j in picks:
            frame = result.frames[int(j)]
            h = seg_lab.penultimate(segmenter, frame)
            feats.append(h.reshape(-1, h.shape[-1]))
            labels.append(frame.labels.reshape(-1))
        features = np.concatenate(feats, axis=0)
        labels = np.concatenate(labels, axis=0)
        centroids, present = class_centroids(features, labels, seg_lab.N_CLASSES)
        dbar = centroid_distances(centroids, present)
        working = update_learned_matrix(predefined, dbar, alpha, transform)
        lengths = [e.length for e in result.episodes]
        rounds.append(
            RoundRecord(
                alpha=float(alpha),
                matrix=working,
                dbar=dbar,
                centroids=centroids,
                present=present,
                features=features,
                labels=labels,
                mean_episode_length=float(np.mean(lengths)) if lengths else None,
            )
        )
    return AlternationResult(
        matrix=working, params=params, segmenter=segmenter, rounds=rounds, curve=curve
    )
