"""Closed-form continuous-control tasks with scripted experts.

Four fixed-horizon tasks stand in for simulator benchmarks:

* ``pendulum``    1-DoF swing-up, torque control.
* ``reacher2``    2-link planar arm driven by joint torques, reach a goal.
* ``pusher2``     point effector pushing a disc-shaped object onto a goal.
* ``reach_point`` 2-D point with velocity control, reach a goal.

All dynamics use explicit Euler with ``dt = 0.05`` and every reward is a
negative cost (``<= 0``). Dynamics, rewards, observations, success predicates
and experts are vectorised over a leading batch axis so evaluation can roll
out many episodes at once.

Task constants
--------------
The constants live in one frozen dataclass per task (``PENDULUM``,
``REACHER2``, ``PUSHER2``, ``REACH_POINT``); ``constants_text()`` renders
them as ``[task]`` / ``key = value`` sections.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from awet.errors import RejectedInputError

DT = 0.05
MAX_STEPS = 50


@dataclass(frozen=True)
class PendulumConstants:
    gravity: float = 10.0
    length: float = 1.0
    mass: float = 1.0
    max_torque: float = 7.0
    max_speed: float = 8.0
    dt: float = DT
    angle_cost: float = 1.0
    speed_cost: float = 0.1
    torque_cost: float = 0.001
    success_angle: float = 0.15
    success_speed: float = 1.0
    reset_speed: float = 1.0
    # expert gains
    energy_gain: float = 2.0
    capture_angle: float = 0.8
    kp: float = 60.0
    kd: float = 12.0


@dataclass(frozen=True)
class Reacher2Constants:
    link1: float = 0.6
    link2: float = 0.4
    torque_gain: float = 20.0
    damping: float = 2.0
    max_speed: float = 10.0
    dt: float = DT
    control_cost: float = 0.01
    success_distance: float = 0.05
    goal_radius_min: float = 0.35
    goal_radius_max: float = 0.9
    reset_joint_noise: float = 0.1
    reset_elbow: float = 1.2
    kp: float = 20.0
    kd: float = 1.0


@dataclass(frozen=True)
class Pusher2Constants:
    speed: float = 1.0  # effector displacement per second at |action| = 1
    contact_radius: float = 0.05
    dt: float = DT
    reach_cost: float = 0.5
    push_cost: float = 1.0
    control_cost: float = 0.01
    success_distance: float = 0.05
    start_noise: float = 0.05
    object_low: tuple[float, float] = (0.2, -0.4)
    object_high: tuple[float, float] = (0.5, 0.4)
    goal_low: tuple[float, float] = (-0.4, -0.6)
    goal_high: tuple[float, float] = (0.6, 0.6)
    gain: float = 10.0


@dataclass(frozen=True)
class ReachPointConstants:
    speed: float = 1.0
    dt: float = DT
    control_cost: float = 0.01
    success_distance: float = 0.05
    start_noise: float = 0.1
    goal_low: float = -0.8
    goal_high: float = 0.8
    gain: float = 10.0


PENDULUM = PendulumConstants()
REACHER2 = Reacher2Constants()
PUSHER2 = Pusher2Constants()
REACH_POINT = ReachPointConstants()


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    max_steps: int = MAX_STEPS

    def __post_init__(self):
        low, high = np.asarray(self.action_low), np.asarray(self.action_high)
        if low.shape != (self.act_dim,) or high.shape != (self.act_dim,):
            raise RejectedInputError("action bounds must have act_dim entries")
        if not np.all(low < high):
            raise RejectedInputError("action_low must be < action_high elementwise")
        if self.max_steps < 2:
            raise RejectedInputError("max_steps must be >= 2")

    @property
    def half_range(self) -> np.ndarray:
        return (np.asarray(self.action_high) - np.asarray(self.action_low)) / 2.0


@dataclass(frozen=True)
class EnvState:
    """Task state vector (or a batch of them) plus the shared step counter."""

    x: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    next_obs: np.ndarray
    reward: float | np.ndarray
    done: bool
    success: bool | np.ndarray


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def _wrap(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


class Task:
    """Base class; subclasses implement the vectorised hooks."""

    name: str
    state_dim: int

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._low = np.asarray(spec.action_low, dtype=np.float64)
        self._high = np.asarray(spec.action_high, dtype=np.float64)

    # hooks -----------------------------------------------------------------
    def _sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def _dynamics(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _reward(self, x: np.ndarray, u: np.ndarray, x_next: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _success(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _observe(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _expert(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # public API ------------------------------------------------------------
    def reset(self, seed: int) -> tuple[EnvState, np.ndarray]:
        x = self._sample(np.random.default_rng(seed), 1)[0]
        return EnvState(x, 0), self._observe(x)

    def reset_batch(self, seeds) -> tuple[EnvState, np.ndarray]:
        x = np.stack([self._sample(np.random.default_rng(int(s)), 1)[0] for s in seeds])
        return EnvState(x, 0), self._observe(x)

    def observe(self, state: EnvState) -> np.ndarray:
        return self._observe(state.x)

    def clip_action(self, action) -> np.ndarray:
        return np.clip(action, self._low, self._high)

    def step(self, state: EnvState, action) -> StepResult:
        action = np.asarray(action, dtype=np.float64)
        if action.shape[-1:] != (self.spec.act_dim,) or action.shape[:-1] != state.x.shape[:-1]:
            raise RejectedInputError(
                f"action shape {action.shape} does not match act_dim {self.spec.act_dim}"
            )
        if state.t >= self.spec.max_steps:
            raise RejectedInputError("episode already finished; call reset")
        u = self.clip_action(action)
        x_next = self._dynamics(state.x, u)
        reward = self._reward(state.x, u, x_next)
        t = state.t + 1
        success = self._success(x_next)
        if x_next.ndim == 1:
            reward, success = float(reward), bool(success)
        return StepResult(EnvState(x_next, t), self._observe(x_next), reward, t == self.spec.max_steps, success)

    def expert_action(self, state: EnvState) -> np.ndarray:
        return self.clip_action(self._expert(state.x))

    def is_success(self, state: EnvState) -> bool | np.ndarray:
        s = self._success(state.x)
        return bool(s) if np.ndim(s) == 0 else s


class Pendulum(Task):
    """Swing-up; angle measured from upright, observation (cos, sin, speed)."""

    name = "pendulum"
    state_dim = 2

    def __init__(self, c: PendulumConstants = PENDULUM, max_steps: int = MAX_STEPS):
        super().__init__(EnvSpec("pendulum", 3, 1, (-c.max_torque,), (c.max_torque,), max_steps))
        self.c = c

    def _sample(self, rng, n):
        theta = rng.uniform(-np.pi, np.pi, size=n)
        speed = rng.uniform(-self.c.reset_speed, self.c.reset_speed, size=n)
        return np.stack([theta, speed], axis=-1)

    def _accel(self, theta, speed, torque):
        c = self.c
        return c.gravity / c.length * np.sin(theta) + torque / (c.mass * c.length**2)

    def _dynamics(self, x, u):
        c = self.c
        theta, speed = x[..., 0], x[..., 1]
        acc = self._accel(theta, speed, u[..., 0])
        new_theta = _wrap(theta + c.dt * speed)
        new_speed = np.clip(speed + c.dt * acc, -c.max_speed, c.max_speed)
        return np.stack([new_theta, new_speed], axis=-1)

    def _reward(self, x, u, x_next):
        c = self.c
        theta = _wrap(x[..., 0])
        return -(c.angle_cost * theta**2 + c.speed_cost * x[..., 1] ** 2 + c.torque_cost * u[..., 0] ** 2)

    def _success(self, x):
        c = self.c
        return (np.abs(_wrap(x[..., 0])) <= c.success_angle) & (np.abs(x[..., 1]) <= c.success_speed)

    def _observe(self, x):
        return np.stack([np.cos(x[..., 0]), np.sin(x[..., 0]), x[..., 1]], axis=-1)

    def energy(self, x):
        """Zero at upright rest, ``-2 m g l`` hanging at rest."""
        c = self.c
        theta, speed = x[..., 0], x[..., 1]
        return 0.5 * c.mass * c.length**2 * speed**2 + c.mass * c.gravity * c.length * (np.cos(theta) - 1.0)

    def _expert(self, x):
        c = self.c
        theta, speed = _wrap(x[..., 0]), x[..., 1]
        direction = np.where(speed == 0.0, 1.0, np.sign(speed))
        pump = -c.energy_gain * self.energy(x) * direction
        pd = -c.kp * theta - c.kd * speed
        near_top = np.abs(theta) < c.capture_angle
        u = np.where(near_top, pd, pump)
        return np.clip(u, -c.max_torque, c.max_torque)[..., None]


class Reacher2(Task):
    """Planar two-link arm; joint accelerations proportional to torque."""

    name = "reacher2"
    state_dim = 6

    def __init__(self, c: Reacher2Constants = REACHER2, max_steps: int = MAX_STEPS):
        super().__init__(EnvSpec("reacher2", 10, 2, (-1.0, -1.0), (1.0, 1.0), max_steps))
        self.c = c

    def _sample(self, rng, n):
        c = self.c
        q = rng.uniform(-c.reset_joint_noise, c.reset_joint_noise, size=(n, 2))
        q[:, 1] += c.reset_elbow
        radius = rng.uniform(c.goal_radius_min, c.goal_radius_max, size=n)
        angle = rng.uniform(-np.pi, np.pi, size=n)
        goal = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
        return np.concatenate([q, np.zeros((n, 2)), goal], axis=-1)

    def fingertip(self, x):
        c = self.c
        q1, q2 = x[..., 0], x[..., 1]
        return np.stack(
            [
                c.link1 * np.cos(q1) + c.link2 * np.cos(q1 + q2),
                c.link1 * np.sin(q1) + c.link2 * np.sin(q1 + q2),
            ],
            axis=-1,
        )

    def jacobian(self, x):
        c = self.c
        q1, q2 = x[..., 0], x[..., 1]
        s1, c1 = np.sin(q1), np.cos(q1)
        s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)
        return np.stack(
            [
                np.stack([-c.link1 * s1 - c.link2 * s12, -c.link2 * s12], axis=-1),
                np.stack([c.link1 * c1 + c.link2 * c12, c.link2 * c12], axis=-1),
            ],
            axis=-2,
        )

    def _dynamics(self, x, u):
        c = self.c
        q, dq = x[..., 0:2], x[..., 2:4]
        acc = c.torque_gain * u - c.damping * dq
        new_q = _wrap(q + c.dt * dq)
        new_dq = np.clip(dq + c.dt * acc, -c.max_speed, c.max_speed)
        return np.concatenate([new_q, new_dq, x[..., 4:6]], axis=-1)

    def _reward(self, x, u, x_next):
        dist = _norm(self.fingertip(x_next) - x_next[..., 4:6])
        return -(dist + self.c.control_cost * np.sum(u * u, axis=-1))

    def _success(self, x):
        return _norm(self.fingertip(x) - x[..., 4:6]) <= self.c.success_distance

    def _observe(self, x):
        q, dq, goal = x[..., 0:2], x[..., 2:4], x[..., 4:6]
        return np.concatenate([np.cos(q), np.sin(q), dq, goal, self.fingertip(x) - goal], axis=-1)

    def _expert(self, x):
        c = self.c
        err = x[..., 4:6] - self.fingertip(x)
        jt_err = np.einsum("...ij,...i->...j", self.jacobian(x), err)
        return c.kp * jt_err - c.kd * x[..., 2:4]


class Pusher2(Task):
    """Point effector and a sticky object.

    Once the effector is within ``contact_radius`` of the object the object
    moves rigidly with the effector.
    """

    name = "pusher2"
    state_dim = 6

    def __init__(self, c: Pusher2Constants = PUSHER2, max_steps: int = MAX_STEPS):
        super().__init__(EnvSpec("pusher2", 10, 2, (-1.0, -1.0), (1.0, 1.0), max_steps))
        self.c = c

    def _sample(self, rng, n):
        c = self.c
        eff = rng.uniform(-c.start_noise, c.start_noise, size=(n, 2))
        obj = rng.uniform(c.object_low, c.object_high, size=(n, 2))
        goal = rng.uniform(c.goal_low, c.goal_high, size=(n, 2))
        return np.concatenate([eff, obj, goal], axis=-1)

    def in_contact(self, x):
        return _norm(x[..., 2:4] - x[..., 0:2]) <= self.c.contact_radius

    def _dynamics(self, x, u):
        c = self.c
        delta = c.speed * c.dt * u
        held = self.in_contact(x)[..., None]
        eff = x[..., 0:2] + delta
        obj = np.where(held, x[..., 2:4] + delta, x[..., 2:4])
        return np.concatenate([eff, obj, x[..., 4:6]], axis=-1)

    def _reward(self, x, u, x_next):
        c = self.c
        reach = _norm(x_next[..., 2:4] - x_next[..., 0:2])
        push = _norm(x_next[..., 4:6] - x_next[..., 2:4])
        return -(c.reach_cost * reach + c.push_cost * push + c.control_cost * np.sum(u * u, axis=-1))

    def _success(self, x):
        return _norm(x[..., 4:6] - x[..., 2:4]) <= self.c.success_distance

    def _observe(self, x):
        eff, obj, goal = x[..., 0:2], x[..., 2:4], x[..., 4:6]
        return np.concatenate([eff, obj, goal, obj - eff, goal - obj], axis=-1)

    def _expert(self, x):
        c = self.c
        eff, obj, goal = x[..., 0:2], x[..., 2:4], x[..., 4:6]
        # Approach the object, then carry it so that it lands on the goal.
        target = np.where(self.in_contact(x)[..., None], goal + (eff - obj), obj)
        return c.gain * (target - eff)


class ReachPoint(Task):
    """2-D point with velocity control."""

    name = "reach_point"
    state_dim = 4

    def __init__(self, c: ReachPointConstants = REACH_POINT, max_steps: int = MAX_STEPS):
        super().__init__(EnvSpec("reach_point", 4, 2, (-1.0, -1.0), (1.0, 1.0), max_steps))
        self.c = c

    def _sample(self, rng, n):
        c = self.c
        eff = rng.uniform(-c.start_noise, c.start_noise, size=(n, 2))
        goal = rng.uniform(c.goal_low, c.goal_high, size=(n, 2))
        return np.concatenate([eff, goal], axis=-1)

    def _dynamics(self, x, u):
        c = self.c
        return np.concatenate([x[..., 0:2] + c.speed * c.dt * u, x[..., 2:4]], axis=-1)

    def _reward(self, x, u, x_next):
        dist = _norm(x_next[..., 2:4] - x_next[..., 0:2])
        return -(dist + self.c.control_cost * np.sum(u * u, axis=-1))

    def _success(self, x):
        return _norm(x[..., 2:4] - x[..., 0:2]) <= self.c.success_distance

    def _observe(self, x):
        return x.copy()

    def _expert(self, x):
        return self.c.gain * (x[..., 2:4] - x[..., 0:2])


TASKS = {cls.name: cls for cls in (Pendulum, Reacher2, Pusher2, ReachPoint)}


def make(name: str, max_steps: int = MAX_STEPS) -> Task:
    try:
        return TASKS[name](max_steps=max_steps)
    except KeyError:
        raise RejectedInputError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


def constants_text() -> str:
    """All task constants as ``[task]`` sections of ``key = value`` lines."""
    lines = ["[common]", f"dt = {DT}", f"max_steps = {MAX_STEPS}", ""]
    for name, consts in [
        ("pendulum", PENDULUM),
        ("reacher2", REACHER2),
        ("pusher2", PUSHER2),
        ("reach_point", REACH_POINT),
    ]:
        lines.append(f"[{name}]")
        for f in dataclasses.fields(consts):
            lines.append(f"{f.name} = {getattr(consts, f.name)}")
        lines.append("")
    return "\n".join(lines)


def rollout_expert(task: Task, seed: int) -> tuple[list, bool]:
    """Run the scripted expert for one episode; returns (steps, success).

    Each step is ``(obs, action, reward, next_obs, done)``.
    """
    state, obs = task.reset(seed)
    steps = []
    for _ in range(task.spec.max_steps):
        action = task.expert_action(state)
        res = task.step(state, action)
        steps.append((obs, action, res.reward, res.next_obs, res.done))
        state, obs = res.state, res.next_obs
    return steps, bool(task.is_success(state))
