"""Demonstrations, replay buffers and Monte-Carlo return annotation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from awet.envs import Task, make, rollout_expert
from awet.errors import (
    EmptyBufferError,
    GenerationFailureError,
    MissingAnnotationError,
    RejectedInputError,
    SignViolationError,
)

DEMO_HEADER = "#awet-demos v1"


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    d: bool
    q_mc: float | None = None


@dataclass
class Trajectory:
    transitions: list[Transition]
    seed: int | None = None
    task: str = ""
    source: str = "expert"

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.r for t in self.transitions])

    def observations(self) -> np.ndarray:
        """States visited, ``s_0 .. s_T`` (length ``len(self) + 1``)."""
        if not self.transitions:
            return np.empty((0, 0))
        return np.stack([t.s for t in self.transitions] + [self.transitions[-1].s_next])

    @property
    def annotated(self) -> bool:
        return all(t.q_mc is not None for t in self.transitions)


def _trajectory_from_steps(steps, seed, task_name, source="expert") -> Trajectory:
    return Trajectory(
        [Transition(np.asarray(s), np.asarray(a), float(r), np.asarray(s2), bool(d)) for s, a, r, s2, d in steps],
        seed=seed,
        task=task_name,
        source=source,
    )


def generate_demos(task: str | Task, n_episodes: int, seed: int) -> list[Trajectory]:
    """Roll out the scripted expert until ``n_episodes`` successes are collected.

    Failed episodes are dropped and replaced by fresh seeds drawn from a
    generator seeded with ``seed``; more than ``10 * n_episodes`` attempts
    raises :class:`GenerationFailureError`.
    """
    if isinstance(task, str):
        task = make(task)
    if n_episodes < 0:
        raise RejectedInputError("n_episodes must be >= 0")
    rng = np.random.default_rng(seed)
    demos: list[Trajectory] = []
    attempts = 0
    while len(demos) < n_episodes:
        if attempts >= 10 * n_episodes:
            raise GenerationFailureError(
                f"{task.name}: only {len(demos)}/{n_episodes} successful expert episodes in {attempts} attempts"
            )
        ep_seed = int(rng.integers(2**31 - 1))
        attempts += 1
        steps, success = rollout_expert(task, ep_seed)
        if success:
            demos.append(_trajectory_from_steps(steps, ep_seed, task.name))
    return demos


def mc_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Discounted reward-to-go by backward recursion ``q_t = r_t + gamma * q_{t+1}``.

    ``rewards[t]`` is the reward received on the transition out of step t.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    q = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        q[t] = acc
    return q


def annotate_mc_returns(trajectories: Iterable[Trajectory], gamma: float) -> list[Trajectory]:
    if not 0.0 <= gamma < 1.0:
        raise RejectedInputError("gamma must lie in [0, 1)")
    out = []
    for traj in trajectories:
        q = mc_returns(traj.rewards, gamma)
        out.append(replace(traj, transitions=[replace(t, q_mc=float(qt)) for t, qt in zip(traj.transitions, q)]))
    return out


def normalize_rewards(trajectories: Sequence[Trajectory]) -> tuple[list[Trajectory], float]:
    """Divide rewards by the largest absolute expert reward.

    Returns the rescaled trajectories and the scale so agent rewards can be
    divided by the same constant. Annotations are dropped.
    """
    scale = max((np.max(np.abs(t.rewards)) for t in trajectories if len(t)), default=0.0)
    if scale == 0.0:
        return list(trajectories), 1.0
    out = [
        replace(tr, transitions=[replace(t, r=t.r / scale, q_mc=None) for t in tr.transitions])
        for tr in trajectories
    ]
    return out, float(scale)


@dataclass
class SignReport:
    ok: bool
    sign: int  # -1, 0 (all zero) or +1
    offenders: list[tuple[str, int, float]] = field(default_factory=list)

    def raise_if_violated(self) -> None:
        if not self.ok:
            shown = ", ".join(f"{src}[{i}]={r:g}" for src, i, r in self.offenders[:5])
            raise SignViolationError(
                f"rewards must share one sign; {len(self.offenders)} offending transitions ({shown})",
                self.offenders,
            )


def validate_reward_signs(expert_rewards, agent_rewards=()) -> SignReport:
    """Check every reward is <= 0, or every reward is >= 0 (zeros always pass).

    The majority sign among non-zero rewards is taken as the reference;
    offenders are the non-zero rewards of the other sign, reported as
    ``(source, index, reward)``.
    """
    sources = [("expert", np.asarray(expert_rewards, dtype=float).ravel()),
               ("agent", np.asarray(agent_rewards, dtype=float).ravel())]
    n_pos = sum(int(np.sum(r > 0)) for _, r in sources)
    n_neg = sum(int(np.sum(r < 0)) for _, r in sources)
    if n_pos == 0 and n_neg == 0:
        return SignReport(True, 0)
    sign = 1 if n_pos >= n_neg else -1
    offenders = []
    for name, r in sources:
        bad = np.flatnonzero(r * sign < 0)
        offenders.extend((name, int(i), float(r[i])) for i in bad)
    return SignReport(not offenders, sign, offenders)


# -- buffers -------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    d: np.ndarray
    q_mc: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.r)


class ExpertBuffer:
    """Immutable, Q-annotated expert data ``D_E`` with a trajectory index."""

    kind = "expert"

    def __init__(self, trajectories: Sequence[Trajectory]):
        if not trajectories:
            raise EmptyBufferError("expert buffer needs at least one trajectory")
        if not all(t.annotated for t in trajectories):
            raise MissingAnnotationError("expert transitions must carry Monte-Carlo returns")
        self.trajectories = list(trajectories)
        flat = [t for tr in trajectories for t in tr.transitions]
        self.s = np.stack([t.s for t in flat])
        self.a = np.stack([t.a for t in flat])
        self.r = np.array([t.r for t in flat])
        self.s_next = np.stack([t.s_next for t in flat])
        self.d = np.array([float(t.d) for t in flat])
        self.q_mc = np.array([t.q_mc for t in flat], dtype=np.float64)
        for arr in (self.s, self.a, self.r, self.s_next, self.d, self.q_mc):
            arr.setflags(write=False)
        bounds = np.cumsum([0] + [len(tr) for tr in trajectories])
        self.index = list(zip(bounds[:-1], bounds[1:]))

    def __len__(self) -> int:
        return len(self.r)

    def features(self) -> list[np.ndarray]:
        """Observation sequence ``s_0 .. s_T`` of each trajectory."""
        return [tr.observations() for tr in self.trajectories]

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, len(self), size=batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.d[idx], self.q_mc[idx])

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.s, self.a, self.r, self.s_next, self.d, self.q_mc):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


class AgentBuffer:
    """Bounded FIFO ring ``D_A``; the oldest transitions are evicted first."""

    kind = "agent"

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise RejectedInputError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, obs_dim))
        self.d = np.zeros(capacity)
        self._next = 0
        self._size = 0
        self.n_added = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s, a, r, s_next, d) -> None:
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s_next[i], self.d[i] = s, a, r, s_next, float(d)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.n_added += 1

    def add_transitions(self, transitions: Iterable[Transition]) -> None:
        for t in transitions:
            self.add(t.s, t.a, t.r, t.s_next, t.d)

    def _order(self) -> np.ndarray:
        start = (self._next - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def contents(self) -> Batch:
        """Stored transitions, oldest first."""
        idx = self._order()
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.d[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, self._size, size=batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.d[idx])

    def digest(self) -> str:
        c = self.contents()
        h = hashlib.sha256()
        for arr in (c.s, c.a, c.r, c.s_next, c.d):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def sample_batch(buffer: ExpertBuffer | AgentBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement."""
    if len(buffer) == 0:
        raise EmptyBufferError(f"cannot sample from an empty {buffer.kind} buffer")
    if batch_size < 1:
        raise RejectedInputError("batch_size must be >= 1")
    return buffer.sample(batch_size, rng)


# -- dataset file ----------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_demos(path: str | Path, trajectories: Sequence[Trajectory], task: str, gamma: float | None) -> None:
    """Write the line-delimited demo dataset.

    Header: ``#awet-demos v1 task=.. obs=.. act=.. gamma=.. episodes=.. steps=..``.
    One line per transition: ``ep step s.. a.. r s'.. d q_mc``. Episode seeds
    are kept as ``# seed ep=<i> value=<seed>`` comment lines.
    """
    if not trajectories:
        obs = act = steps = 0
    else:
        first = trajectories[0].transitions[0]
        obs, act, steps = len(first.s), len(first.a), len(trajectories[0])
    g = "none" if gamma is None else _fmt(gamma)
    lines = [f"{DEMO_HEADER} task={task} obs={obs} act={act} gamma={g} episodes={len(trajectories)} steps={steps}"]
    for ep, tr in enumerate(trajectories):
        if tr.seed is not None:
            lines.append(f"# seed ep={ep} value={tr.seed}")
        for k, t in enumerate(tr.transitions):
            q = "nan" if t.q_mc is None else _fmt(t.q_mc)
            fields = [str(ep), str(k), *map(_fmt, t.s), *map(_fmt, t.a), _fmt(t.r), *map(_fmt, t.s_next), str(int(t.d)), q]
            lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def load_demos(path: str | Path, task: Task | None = None) -> tuple[list[Trajectory], dict]:
    """Read a dataset written by :func:`save_demos`; returns (trajectories, header)."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(DEMO_HEADER):
        raise RejectedInputError(f"{path}: missing '{DEMO_HEADER}' header")
    header = dict(kv.split("=", 1) for kv in text[0][len(DEMO_HEADER):].split())
    obs, act = int(header["obs"]), int(header["act"])
    if task is not None and (task.spec.obs_dim != obs or task.spec.act_dim != act or task.name != header["task"]):
        raise RejectedInputError(
            f"{path}: dataset is {header['task']} obs={obs} act={act}, "
            f"expected {task.name} obs={task.spec.obs_dim} act={task.spec.act_dim}"
        )
    width = 2 + obs + act + 1 + obs + 2
    episodes: dict[int, list[Transition]] = {}
    seeds: dict[int, int] = {}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "seed":
                kv = dict(p.split("=", 1) for p in parts[1:])
                seeds[int(kv["ep"])] = int(kv["value"])
            continue
        f = line.split()
        if len(f) != width:
            raise RejectedInputError(f"{path}:{lineno}: expected {width} fields, found {len(f)}")
        ep = int(f[0])
        vals = np.array([float(v) for v in f[2:]])
        s = vals[:obs]
        a = vals[obs : obs + act]
        r = vals[obs + act]
        s2 = vals[obs + act + 1 : 2 * obs + act + 1]
        d = bool(int(f[-2]))
        q = float(f[-1])
        episodes.setdefault(ep, []).append(Transition(s, a, float(r), s2, d, None if np.isnan(q) else q))
    trajs = [Trajectory(episodes[ep], seeds.get(ep), header["task"]) for ep in sorted(episodes)]
    if len(trajs) != int(header["episodes"]):
        raise RejectedInputError(f"{path}: header says {header['episodes']} episodes, found {len(trajs)}")
    return trajs, header
