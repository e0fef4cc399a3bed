"""AWET trainer: offline pre-training on expert data and online fine-tuning.

The loss functions are exposed individually (``offline_critic_loss``,
``offline_actor_loss``, ``td_targets``, ``agent_advantage``,
``online_critic_loss``, ``online_actor_loss``) so that each can be checked in
isolation; :class:`Trainer` strings them together into the two stages.

Noise magnitudes (``sigma``, ``sigma_tilde``, ``c``) are fractions of the
action half-range, so the same config works for every task.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from awet import nnet
from awet.demos import (
    AgentBuffer,
    Batch,
    ExpertBuffer,
    SignReport,
    Transition,
    sample_batch,
    validate_reward_signs,
)
from awet.dtw import GateDecision, TerminationMonitor, gate_rollout
from awet.envs import Task
from awet.errors import (
    DegenerateAdvantageError,
    MissingAnnotationError,
    NumericOverflowError,
    RejectedInputError,
)
from awet.nnet import AdamState, MlpSpec, ParameterSet

STREAMS = ("init", "explore", "smoothing", "sampling", "episodes")


@dataclass
class AwetConfig:
    gamma: float = 0.98
    lr: float = 1e-3
    c_l: float = 0.5
    c_clip: float = 0.5
    lambda1: float = 1e-4
    lambda2: float = 1e-4
    rho: float = 0.995
    sigma: float = 0.1
    sigma_tilde: float = 0.2
    c: float = 0.5
    policy_delay: int = 2
    offline_steps: int = 1000
    online_episodes: int = 2000
    batch_e: int = 100
    batch_a: int = 100
    base_alg: str = "td3"
    use_advantage_weight: bool = True
    use_early_termination: bool = True
    use_loss_clip: bool = True
    # False gives the from-scratch baseline: no expert batch in any online loss.
    use_expert_data: bool = True
    # False makes the online actor maximise critic 1 only, as plain TD3 does.
    actor_min_critic: bool = True
    advantage_critic: str = "elementwise"  # or "argmin"
    dtw_mode: str = "prefix_match"  # or "full_expert"
    normalize_rewards: bool = False
    hidden_sizes: tuple[int, ...] = (400, 300)
    buffer_capacity: int = 1_000_000

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        checks = [
            (0.0 <= self.gamma < 1.0, "gamma must lie in [0, 1)"),
            (self.lr > 0, "lr must be > 0"),
            (0.0 <= self.c_l <= 1.0, "c_l must lie in [0, 1]"),
            (self.c_clip > 0, "c_clip must be > 0"),
            (self.lambda1 >= 0 and self.lambda2 >= 0, "lambda1/lambda2 must be >= 0"),
            (0.0 <= self.rho <= 1.0, "rho must lie in [0, 1]"),
            (self.sigma >= 0 and self.sigma_tilde >= 0 and self.c >= 0, "noise scales must be >= 0"),
            (self.policy_delay >= 1, "policy_delay must be >= 1"),
            (self.offline_steps >= 0 and self.online_episodes >= 0, "budgets must be >= 0"),
            (self.batch_e >= 1 and self.batch_a >= 1, "batch sizes must be >= 1"),
            (self.base_alg in ("td3", "ddpg"), "base_alg must be td3 or ddpg"),
            (self.advantage_critic in ("elementwise", "argmin"), "advantage_critic must be elementwise or argmin"),
            (self.dtw_mode in ("prefix_match", "full_expert"), "dtw_mode must be prefix_match or full_expert"),
            (self.buffer_capacity >= 1, "buffer_capacity must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise RejectedInputError(msg)


def base_alg_variant(config: AwetConfig) -> AwetConfig:
    """Apply base-algorithm adjustments.

    ``ddpg`` drops target policy smoothing and the policy delay; the twin
    critics and min-backup are kept so the advantage weight stays defined.
    """
    if config.base_alg == "ddpg":
        return dataclasses.replace(config, sigma_tilde=0.0, policy_delay=1)
    return config


def td3_baseline_config(config: AwetConfig) -> AwetConfig:
    """Plain TD3 (or DDPG) from scratch with the same budget and network sizes."""
    return dataclasses.replace(
        config,
        offline_steps=0,
        use_expert_data=False,
        use_advantage_weight=False,
        use_loss_clip=False,
        use_early_termination=False,
        actor_min_critic=False,
    )


def make_streams(seed: int, cell: tuple[int, ...] = ()) -> dict[str, np.random.Generator]:
    """Independent named generators derived from ``(seed, *cell, stream_index)``."""
    return {
        name: np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, cell), i]))
        for i, name in enumerate(STREAMS)
    }


def stream_ids(seed: int, cell: tuple[int, ...] = ()) -> list[str]:
    prefix = ":".join(str(int(v)) for v in (seed, *cell))
    return [f"{prefix}:{name}" for name in STREAMS]


# -- networks --------------------------------------------------------------------


@dataclass
class AgentNets:
    actor_spec: MlpSpec
    critic_spec: MlpSpec
    actor: ParameterSet
    critic1: ParameterSet
    critic2: ParameterSet
    actor_t: ParameterSet
    critic1_t: ParameterSet
    critic2_t: ParameterSet
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState

    @classmethod
    def create(
        cls,
        obs_dim: int,
        act_dim: int,
        action_scale,
        hidden_sizes=(400, 300),
        rng: np.random.Generator | None = None,
        lr: float = 1e-3,
    ) -> "AgentNets":
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = tuple(hidden_sizes)
        actor_spec = MlpSpec((obs_dim, *hidden, act_dim), "relu", "tanh", tuple(np.broadcast_to(action_scale, act_dim)))
        critic_spec = MlpSpec((obs_dim + act_dim, *hidden, 1), "relu", "identity")
        actor = nnet.init_params(actor_spec, rng)
        c1 = nnet.init_params(critic_spec, rng)
        c2 = nnet.init_params(critic_spec, rng)
        return cls(
            actor_spec,
            critic_spec,
            actor,
            c1,
            c2,
            actor.copy(),
            c1.copy(),
            c2.copy(),
            AdamState.for_params(actor, lr=lr),
            AdamState.for_params(c1, lr=lr),
            AdamState.for_params(c2, lr=lr),
        )

    @property
    def critics(self) -> tuple[ParameterSet, ParameterSet]:
        return self.critic1, self.critic2

    def sync_targets(self) -> None:
        self.actor_t.assign(self.actor)
        self.critic1_t.assign(self.critic1)
        self.critic2_t.assign(self.critic2)

    def polyak(self, rho: float) -> None:
        nnet.polyak_update(self.critic1_t, self.critic1, rho)
        nnet.polyak_update(self.critic2_t, self.critic2, rho)
        nnet.polyak_update(self.actor_t, self.actor, rho)

    def copy(self) -> "AgentNets":
        return AgentNets(
            self.actor_spec,
            self.critic_spec,
            *(p.copy() for p in (self.actor, self.critic1, self.critic2, self.actor_t, self.critic1_t, self.critic2_t)),
            *(o.copy() for o in (self.actor_opt, self.critic1_opt, self.critic2_opt)),
        )

    def act(self, obs) -> np.ndarray:
        return nnet.forward(self.actor_spec, self.actor, obs)


def _sa(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.concatenate([s, a], axis=-1)


def min_q(nets: AgentNets, s, a, target: bool = False) -> np.ndarray:
    """Elementwise minimum over the two critics (or their targets), shape (batch,)."""
    c1, c2 = (nets.critic1_t, nets.critic2_t) if target else nets.critics
    x = _sa(s, a)
    q1 = nnet.forward(nets.critic_spec, c1, x)[:, 0]
    q2 = nnet.forward(nets.critic_spec, c2, x)[:, 0]
    return np.minimum(q1, q2)


# -- offline losses -----------------------------------------------------------------


def offline_critic_loss(spec: MlpSpec, critic: ParameterSet, batch: Batch, lambda1: float):
    """MSE to the Monte-Carlo returns plus ``lambda1`` times the L2 penalty.

    Returns ``(loss, grads)``.
    """
    if batch.q_mc is None:
        raise MissingAnnotationError("offline critic training needs q_mc annotations")
    tape = nnet.forward_tape(spec, critic, _sa(batch.s, batch.a))
    diff = tape.output[:, 0] - batch.q_mc
    n = len(diff)
    mse = float(np.sum(diff * diff) / n)
    grads, _ = nnet.backward(spec, critic, tape, (2.0 * diff / n)[:, None])
    loss = mse
    if lambda1:
        loss += lambda1 * nnet.l2_penalty(critic)
        grads.flat[critic.weight_mask] += 2.0 * lambda1 * critic.flat[critic.weight_mask]
    return loss, grads


def _min_critic_backprop(nets: AgentNets, s: np.ndarray, act: np.ndarray, coef: np.ndarray, use_min: bool = True):
    """Value of sum(coef * minQ(s, act)) and its gradient w.r.t. ``act``.

    Critics are frozen: only input gradients are computed. With
    ``use_min=False`` critic 1 alone is used.
    """
    x = _sa(s, act)
    obs_dim = s.shape[1]
    t1 = nnet.forward_tape(nets.critic_spec, nets.critic1, x)
    q1 = t1.output[:, 0]
    if not use_min:
        _, gx = nnet.backward(nets.critic_spec, nets.critic1, t1, coef[:, None], want_params=False)
        return q1, gx[:, obs_dim:]
    t2 = nnet.forward_tape(nets.critic_spec, nets.critic2, x)
    q2 = t2.output[:, 0]
    first = q1 <= q2
    _, g1 = nnet.backward(nets.critic_spec, nets.critic1, t1, np.where(first, coef, 0.0)[:, None], want_params=False)
    _, g2 = nnet.backward(nets.critic_spec, nets.critic2, t2, np.where(first, 0.0, coef)[:, None], want_params=False)
    return np.where(first, q1, q2), (g1 + g2)[:, obs_dim:]


def offline_actor_loss(nets: AgentNets, batch: Batch, c_l: float, lambda2: float):
    """``-(1 - c_l) * L_Q + c_l * L_BC + lambda2 * L2`` with critics frozen.

    Returns ``(loss, grads, terms)`` where ``terms`` holds ``l_q`` and ``l_bc``.
    """
    n = len(batch)
    tape = nnet.forward_tape(nets.actor_spec, nets.actor, batch.s)
    mu = tape.output
    coef = np.full(n, -(1.0 - c_l) / n)
    qmin, dq_da = _min_critic_backprop(nets, batch.s, mu, coef)
    l_q = float(np.mean(qmin))
    diff = mu - batch.a
    l_bc = float(np.sum(diff * diff) / n)
    grad_mu = dq_da + c_l * 2.0 * diff / n
    grads, _ = nnet.backward(nets.actor_spec, nets.actor, tape, grad_mu)
    loss = -(1.0 - c_l) * l_q + c_l * l_bc
    if lambda2:
        loss += lambda2 * nnet.l2_penalty(nets.actor)
        grads.flat[nets.actor.weight_mask] += 2.0 * lambda2 * nets.actor.flat[nets.actor.weight_mask]
    return loss, grads, {"l_q": l_q, "l_bc": l_bc}


def offline_train_critics(nets: AgentNets, expert: ExpertBuffer, config: AwetConfig, rng: np.random.Generator) -> list[float]:
    """Fit both critics to the expert Monte-Carlo returns; returns mean loss per step."""
    if not isinstance(expert, ExpertBuffer):
        raise MissingAnnotationError("offline training needs an annotated ExpertBuffer")
    history = []
    for _ in range(config.offline_steps):
        batch = sample_batch(expert, config.batch_e, rng)
        losses = []
        for critic, opt in ((nets.critic1, nets.critic1_opt), (nets.critic2, nets.critic2_opt)):
            loss, grads = offline_critic_loss(nets.critic_spec, critic, batch, config.lambda1)
            nnet.adam_step(critic, grads, opt)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def offline_train_actor(nets: AgentNets, expert: ExpertBuffer, config: AwetConfig, rng: np.random.Generator) -> list[float]:
    history = []
    for _ in range(config.offline_steps):
        batch = sample_batch(expert, config.batch_e, rng)
        loss, grads, _ = offline_actor_loss(nets, batch, config.c_l, config.lambda2)
        nnet.adam_step(nets.actor, grads, nets.actor_opt)
        history.append(loss)
    return history


# -- online losses ------------------------------------------------------------------


def smoothing_noise(rng: np.random.Generator, shape, sigma_tilde: float, c: float, half_range) -> np.ndarray:
    """Clipped Gaussian target-policy noise in action units."""
    half_range = np.asarray(half_range, dtype=np.float64)
    if sigma_tilde == 0.0:
        return np.zeros(shape)
    eps = rng.normal(0.0, 1.0, size=shape) * (sigma_tilde * half_range)
    return np.clip(eps, -c * half_range, c * half_range)


def td_targets(nets: AgentNets, batch: Batch, gamma: float, noise, low, high) -> np.ndarray:
    """``y = r + gamma * (1 - d) * min_j Q'_j(s', clip(mu'(s') + noise))``."""
    a_next = nnet.forward(nets.actor_spec, nets.actor_t, batch.s_next)
    if noise is not None:
        a_next = np.clip(a_next + noise, low, high)
    q_next = min_q(nets, batch.s_next, a_next, target=True)
    return batch.r + gamma * (1.0 - batch.d) * q_next


def agent_advantage(q_agent: float, q_expert: float) -> float:
    """Batch-level agent advantage ``Q_A / (Q_A + Q_E)``.

    Raises :class:`DegenerateAdvantageError` when the denominator is zero.
    """
    denom = q_agent + q_expert
    if denom == 0.0:
        raise DegenerateAdvantageError("Q_A + Q_E = 0")
    return q_agent / denom


def batch_advantage(
    q_agent: tuple[np.ndarray, np.ndarray],
    q_expert: tuple[np.ndarray, np.ndarray],
    mode: str = "elementwise",
) -> tuple[float, float, float]:
    """A_A from per-critic Q values on the agent and expert batches.

    Returns ``(a_a, mean_q_agent, mean_q_expert)``. ``elementwise`` takes the
    per-sample minimum over critics before averaging; ``argmin`` uses the single
    critic with the lowest mean over both batches. A zero denominator falls
    back to 0.5 with a warning; a ratio outside [0, 1] (batch means of
    opposite sign) is clipped into it.
    """
    if mode == "elementwise":
        qa = float(np.mean(np.minimum(*q_agent)))
        qe = float(np.mean(np.minimum(*q_expert)))
    else:
        means = [np.mean(np.concatenate([qa_i, qe_i])) for qa_i, qe_i in zip(q_agent, q_expert)]
        i = int(np.argmin(means))
        qa, qe = float(np.mean(q_agent[i])), float(np.mean(q_expert[i]))
    try:
        a_a = agent_advantage(qa, qe)
    except DegenerateAdvantageError:
        warnings.warn("degenerate agent advantage (Q_A + Q_E = 0); using 0.5", RuntimeWarning, stacklevel=2)
        return 0.5, qa, qe
    return min(max(a_a, 0.0), 1.0), qa, qe


def online_critic_loss(
    spec: MlpSpec,
    critic: ParameterSet,
    batch_a: Batch,
    y: np.ndarray,
    batch_e: Batch | None,
    a_a: float,
    c_clip: float,
    use_clip: bool = True,
    tape: nnet.GradientTape | None = None,
):
    """``a_a * clip(L_BA, -c_clip, c_clip) + (1 - a_a) * L_BE`` for one critic.

    With ``batch_e=None`` the loss is the plain TD loss ``L_BA`` (weight 1,
    no clip unless ``use_clip``). ``tape`` may carry a forward pass already
    taken on ``[agent rows; expert rows]``. Returns ``(loss, grads, parts)``.
    """
    n_a = len(batch_a)
    if tape is None:
        x = _sa(batch_a.s, batch_a.a)
        if batch_e is not None:
            x = np.concatenate([x, _sa(batch_e.s, batch_e.a)])
        tape = nnet.forward_tape(spec, critic, x)
    q = tape.output[:, 0]
    diff_a = q[:n_a] - y
    l_ba = float(np.sum(diff_a * diff_a) / n_a)
    if use_clip:
        l_ba_c = min(max(l_ba, -c_clip), c_clip)
        gate = 1.0 if -c_clip <= l_ba <= c_clip else 0.0
    else:
        l_ba_c, gate = l_ba, 1.0
    if batch_e is None:
        w_a, w_e = 1.0, 0.0
        grad = (w_a * gate * 2.0) * diff_a / n_a
        l_be = float("nan")
        loss = w_a * l_ba_c
    else:
        n_e = len(batch_e)
        diff_e = q[n_a:] - batch_e.q_mc
        l_be = float(np.sum(diff_e * diff_e) / n_e)
        w_a, w_e = a_a, 1.0 - a_a
        grad = np.concatenate([(w_a * gate * 2.0) * diff_a / n_a, (w_e * 2.0) * diff_e / n_e])
        loss = w_a * l_ba_c + w_e * l_be
    if not math.isfinite(loss):
        raise NumericOverflowError("non-finite critic loss", diagnostics={"l_ba": l_ba, "l_be": l_be, "a_a": a_a})
    grads, _ = nnet.backward(spec, critic, tape, grad[:, None])
    return loss, grads, {"l_ba": l_ba, "l_ba_clipped": l_ba_c, "l_be": l_be, "total": loss}


def online_actor_loss(
    nets: AgentNets,
    batch_a: Batch,
    batch_e: Batch | None,
    c_l: float,
    use_min: bool = True,
):
    """``-(1 - c_l) * L_QE + c_l * L_BC - L_QA`` with critics frozen.

    Without an expert batch this is the plain ``-L_QA``. Returns
    ``(loss, grads, terms)``.
    """
    n_a = len(batch_a)
    if batch_e is None:
        tape = nnet.forward_tape(nets.actor_spec, nets.actor, batch_a.s)
        coef = np.full(n_a, -1.0 / n_a)
        q, dq_da = _min_critic_backprop(nets, batch_a.s, tape.output, coef, use_min)
        l_qa = float(np.mean(q))
        grads, _ = nnet.backward(nets.actor_spec, nets.actor, tape, dq_da)
        return -l_qa, grads, {"l_qa": l_qa, "l_qe": float("nan"), "l_bc": float("nan")}
    n_e = len(batch_e)
    s = np.concatenate([batch_a.s, batch_e.s])
    tape = nnet.forward_tape(nets.actor_spec, nets.actor, s)
    mu = tape.output
    coef = np.concatenate([np.full(n_a, -1.0 / n_a), np.full(n_e, -(1.0 - c_l) / n_e)])
    q, dq_da = _min_critic_backprop(nets, s, mu, coef, use_min)
    l_qa = float(np.mean(q[:n_a]))
    l_qe = float(np.mean(q[n_a:]))
    diff = mu[n_a:] - batch_e.a
    l_bc = float(np.sum(diff * diff) / n_e)
    dq_da[n_a:] += c_l * 2.0 * diff / n_e
    grads, _ = nnet.backward(nets.actor_spec, nets.actor, tape, dq_da)
    loss = -(1.0 - c_l) * l_qe + c_l * l_bc - l_qa
    return loss, grads, {"l_qa": l_qa, "l_qe": l_qe, "l_bc": l_bc}


# -- reports -------------------------------------------------------------------------


@dataclass
class LossReport:
    update: int
    episode: int
    l_ba: tuple[float, float]
    l_ba_clipped: tuple[float, float]
    l_be: tuple[float, float]
    critic_total: tuple[float, float]
    a_a: float
    q_agent: float
    q_expert: float
    l_qa: float = float("nan")
    l_qe: float = float("nan")
    l_bc: float = float("nan")
    gate: str = "none"
    episode_return: float = float("nan")

    FIELDS = (
        "update", "episode", "l_ba1", "l_ba2", "l_ba_clipped1", "l_ba_clipped2", "l_be1", "l_be2",
        "critic_total1", "critic_total2", "a_a", "q_agent", "q_expert", "l_qa", "l_qe", "l_bc", "gate",
        "episode_return",
    )

    def as_row(self) -> list:
        return [
            self.update, self.episode, *self.l_ba, *self.l_ba_clipped, *self.l_be, *self.critic_total,
            self.a_a, self.q_agent, self.q_expert, self.l_qa, self.l_qe, self.l_bc, self.gate, self.episode_return,
        ]


@dataclass
class EpisodeLog:
    episode: int
    episode_return: float
    steps: int
    gate: str  # "continue", "terminate_and_discard" or "none"
    gate_distance: float
    updates: int
    env_steps_total: int


@dataclass
class EvalResult:
    mean_return: float
    success_rate: float
    successes: int
    episodes: int


def evaluate(task: Task, nets: AgentNets, seeds) -> EvalResult:
    """Deterministic policy (no noise) on one episode per seed, batched."""
    seeds = list(seeds)
    state, obs = task.reset_batch(seeds)
    total = np.zeros(len(seeds))
    for _ in range(task.spec.max_steps):
        res = task.step(state, nets.act(obs))
        total += res.reward
        state, obs = res.state, res.next_obs
    success = task.is_success(state)
    k = int(np.sum(success))
    return EvalResult(float(np.mean(total)), k / len(seeds), k, len(seeds))


# -- trainer ---------------------------------------------------------------------------


@dataclass
class TrainerStats:
    updates: int = 0
    actor_updates: int = 0
    episodes: int = 0
    discarded: int = 0
    env_steps: int = 0
    a_a_sum: float = 0.0
    a_a_count: int = 0
    gate_calls: int = 0

    @property
    def a_a_mean(self) -> float:
        return self.a_a_sum / self.a_a_count if self.a_a_count else float("nan")


class Trainer:
    """Owns nets, buffers, RNG streams and the online loop for one run."""

    def __init__(
        self,
        task: Task,
        config: AwetConfig,
        expert: ExpertBuffer | None,
        seed: int = 0,
        cell: tuple[int, ...] = (),
        nets: AgentNets | None = None,
        monitor: TerminationMonitor | None = None,
        report_sink: Callable[[LossReport], None] | None = None,
    ):
        self.task = task
        self.config = base_alg_variant(config)
        cfg = self.config
        self.expert = expert
        if cfg.use_expert_data or cfg.offline_steps or cfg.use_early_termination:
            if expert is None:
                raise MissingAnnotationError("this configuration needs an expert buffer")
        spec = task.spec
        low, high = np.asarray(spec.action_low), np.asarray(spec.action_high)
        if not np.allclose(low, -high):
            raise RejectedInputError("actor output scaling assumes symmetric action bounds")
        self.low, self.high = low, high
        self.half_range = spec.half_range
        self.streams = make_streams(seed, cell)
        self.stream_ids = stream_ids(seed, cell)
        self.nets = nets if nets is not None else AgentNets.create(
            spec.obs_dim, spec.act_dim, high, cfg.hidden_sizes, self.streams["init"], cfg.lr
        )
        self.agent = AgentBuffer(cfg.buffer_capacity, spec.obs_dim, spec.act_dim)
        self.monitor = monitor
        if cfg.use_early_termination and self.monitor is None:
            self.monitor = TerminationMonitor.from_corpus(expert.features(), spec.max_steps, cfg.dtw_mode)
        self.report_sink = report_sink
        self.stats = TrainerStats()
        self.reward_sign = 0
        self.reward_scale = 1.0
        self.offline_done = False
        self.online_started = False
        self.episode_log: list[EpisodeLog] = []

    # offline -------------------------------------------------------------------------
    def run_offline_stage(self) -> dict:
        cfg = self.config
        if cfg.offline_steps == 0:
            self.offline_done = True
            return {"critic": [], "actor": []}
        rng = self.streams["sampling"]
        critic_hist = offline_train_critics(self.nets, self.expert, cfg, rng)
        actor_hist = offline_train_actor(self.nets, self.expert, cfg, rng)
        self.offline_done = True
        return {"critic": critic_hist, "actor": actor_hist}

    # online ---------------------------------------------------------------------------
    def start_online(self) -> None:
        """Copy online nets into targets and fix the reward sign."""
        self.nets.sync_targets()
        if self.expert is not None:
            report = validate_reward_signs(self.expert.r)
            report.raise_if_violated()
            self.reward_sign = report.sign
        self.online_started = True

    def _check_episode_rewards(self, rewards) -> None:
        rewards = np.asarray(rewards, dtype=np.float64)
        if self.reward_sign == 0:
            report = validate_reward_signs(rewards)
            report.raise_if_violated()
            self.reward_sign = report.sign
            return
        bad = np.flatnonzero(rewards * self.reward_sign < 0)
        if bad.size:
            SignReport(False, self.reward_sign, [("agent", int(i), float(rewards[i])) for i in bad]).raise_if_violated()

    def collect_episode(self) -> EpisodeLog:
        cfg = self.config
        task = self.task
        ep_seed = int(self.streams["episodes"].integers(2**31 - 1))
        explore = self.streams["explore"]
        state, obs = task.reset(ep_seed)
        transitions: list[Transition] = []
        observations = [obs]
        gate = "none"
        gate_distance = float("nan")
        ep_return = 0.0
        gate_step = self.monitor.gate_step if (cfg.use_early_termination and self.monitor) else None
        for t in range(task.spec.max_steps):
            a = self.nets.act(obs)
            if cfg.sigma > 0:
                a = a + explore.normal(0.0, 1.0, size=a.shape) * (cfg.sigma * self.half_range)
            a = np.clip(a, self.low, self.high)
            res = task.step(state, a)
            r = res.reward / self.reward_scale
            transitions.append(Transition(obs, a, r, res.next_obs, res.done))
            ep_return += res.reward
            state, obs = res.state, res.next_obs
            observations.append(obs)
            if gate_step is not None and t + 1 == gate_step:
                self.stats.gate_calls += 1
                decision, gate_distance = gate_rollout(self.monitor, np.asarray(observations))
                gate = decision.value
                if decision is GateDecision.TERMINATE:
                    break
        steps = len(transitions)
        self.stats.env_steps += steps
        if gate == GateDecision.TERMINATE.value:
            self.stats.discarded += 1
        else:
            self._check_episode_rewards([tr.r for tr in transitions])
            self.agent.add_transitions(transitions)
        return EpisodeLog(self.stats.episodes, ep_return, steps, gate, gate_distance, 0, self.stats.env_steps)

    def update(self, episode: int = -1, gate: str = "none", ep_return: float = float("nan")) -> LossReport:
        """One critic update, plus an actor/target update every ``policy_delay``-th call."""
        cfg = self.config
        nets = self.nets
        rng = self.streams["sampling"]
        batch_a = sample_batch(self.agent, cfg.batch_a, rng)
        batch_e = sample_batch(self.expert, cfg.batch_e, rng) if cfg.use_expert_data else None
        noise = None
        if cfg.sigma_tilde > 0:
            noise = smoothing_noise(
                self.streams["smoothing"], batch_a.a.shape, cfg.sigma_tilde, cfg.c, self.half_range
            )
        y = td_targets(nets, batch_a, cfg.gamma, noise, self.low, self.high)

        x = _sa(batch_a.s, batch_a.a)
        if batch_e is not None:
            x = np.concatenate([x, _sa(batch_e.s, batch_e.a)])
        tapes = [nnet.forward_tape(nets.critic_spec, c, x) for c in nets.critics]
        n_a = len(batch_a)
        if batch_e is not None and cfg.use_advantage_weight:
            a_a, qa, qe = batch_advantage(
                (tapes[0].output[:n_a, 0], tapes[1].output[:n_a, 0]),
                (tapes[0].output[n_a:, 0], tapes[1].output[n_a:, 0]),
                cfg.advantage_critic,
            )
        else:
            a_a = 0.5 if batch_e is not None else 1.0
            qa = float(np.mean(np.minimum(tapes[0].output[:n_a, 0], tapes[1].output[:n_a, 0])))
            qe = float(np.mean(np.minimum(tapes[0].output[n_a:, 0], tapes[1].output[n_a:, 0]))) if batch_e is not None else float("nan")
        parts = []
        for critic, opt, tape in zip(nets.critics, (nets.critic1_opt, nets.critic2_opt), tapes):
            _, grads, p = online_critic_loss(
                nets.critic_spec, critic, batch_a, y, batch_e, a_a, cfg.c_clip, cfg.use_loss_clip, tape=tape
            )
            nnet.adam_step(critic, grads, opt)
            parts.append(p)
        report = LossReport(
            self.stats.updates,
            episode,
            (parts[0]["l_ba"], parts[1]["l_ba"]),
            (parts[0]["l_ba_clipped"], parts[1]["l_ba_clipped"]),
            (parts[0]["l_be"], parts[1]["l_be"]),
            (parts[0]["total"], parts[1]["total"]),
            a_a,
            qa,
            qe,
            gate=gate,
            episode_return=ep_return,
        )
        if self.stats.updates % cfg.policy_delay == 0:
            _, grads, terms = online_actor_loss(nets, batch_a, batch_e, cfg.c_l, cfg.actor_min_critic)
            nnet.adam_step(nets.actor, grads, nets.actor_opt)
            nets.polyak(cfg.rho)
            report.l_qa, report.l_qe, report.l_bc = terms["l_qa"], terms["l_qe"], terms["l_bc"]
            self.stats.actor_updates += 1
        self.stats.updates += 1
        if batch_e is not None:
            self.stats.a_a_sum += a_a
            self.stats.a_a_count += 1
        if self.report_sink is not None:
            self.report_sink(report)
        return report

    def run_episode(self) -> EpisodeLog:
        """Collect one rollout, then one update per environment step taken."""
        if not self.online_started:
            self.start_online()
        log = self.collect_episode()
        n_updates = 0
        if len(self.agent) > 0:
            for _ in range(log.steps):
                try:
                    self.update(log.episode, log.gate, log.episode_return)
                except NumericOverflowError as exc:
                    exc.diagnostics.update(episode=log.episode, update=self.stats.updates)
                    raise
                n_updates += 1
        log.updates = n_updates
        self.stats.episodes += 1
        self.episode_log.append(log)
        return log

    def run_online_stage(
        self,
        episodes: int | None = None,
        on_episode: Callable[[EpisodeLog], None] | None = None,
    ) -> list[EpisodeLog]:
        if not self.online_started:
            self.start_online()
        n = self.config.online_episodes if episodes is None else episodes
        logs = []
        for _ in range(n):
            log = self.run_episode()
            logs.append(log)
            if on_episode is not None:
                on_episode(log)
        return logs
