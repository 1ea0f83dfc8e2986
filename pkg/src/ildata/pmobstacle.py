"""PMObstacle: a 2-D point mass that must reach a goal without hitting a disc obstacle.

Dynamics are a single integrator with additive Gaussian system noise,
s' = clip_bounds(s + clip(a, +-action_limit) + eta), eta ~ N(0, sigma_s^2 I).
A scripted waypoint expert routes above the obstacle; Gaussian policy noise
can be added to its actions when collecting data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import Dataset, Trajectory

ENV_ID = "pmobstacle-v1"

SUCCESS, COLLISION, TIMEOUT = "success", "collision", "timeout"


@dataclass(frozen=True)
class EnvConfig:
    bounds: tuple[float, float] = (-1.0, 1.0)
    obstacle_center: tuple[float, float] = (0.0, 0.0)
    obstacle_radius: float = 0.32
    start_low: tuple[float, float] = (-0.9, -0.1)
    start_high: tuple[float, float] = (-0.7, 0.1)
    goal: tuple[float, float] = (0.8, 0.0)
    goal_radius: float = 0.05
    max_steps: int = 60
    action_limit: float = 0.1
    sigma_s: float = 0.0

    def __post_init__(self):
        lo, hi = self.bounds
        c = np.asarray(self.obstacle_center)
        g = np.asarray(self.goal)
        if not lo < hi:
            raise ValueError("bounds must satisfy low < high")
        if not (self.obstacle_radius > 0 and self.goal_radius > 0 and self.action_limit > 0):
            raise ValueError("radii and action_limit must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.sigma_s >= 0:
            raise ValueError("sigma_s must be nonnegative")
        if np.any(c < lo) or np.any(c > hi) or np.any(g < lo) or np.any(g > hi):
            raise ValueError("obstacle and goal must lie inside the bounds")
        if np.linalg.norm(g - c) <= self.obstacle_radius:
            raise ValueError("goal lies inside the obstacle")
        nearest = np.clip(c, self.start_low, self.start_high)
        if np.linalg.norm(nearest - c) <= self.obstacle_radius:
            raise ValueError("start region intersects the obstacle")

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds), "obstacle_center": list(self.obstacle_center),
            "obstacle_radius": self.obstacle_radius, "start_low": list(self.start_low),
            "start_high": list(self.start_high), "goal": list(self.goal),
            "goal_radius": self.goal_radius, "max_steps": self.max_steps,
            "action_limit": self.action_limit, "sigma_s": self.sigma_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EnvConfig:
        d = dict(d)
        for key in ("bounds", "obstacle_center", "start_low", "start_high", "goal"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


def _segment_hits_disc(p: np.ndarray, q: np.ndarray, center: np.ndarray, radius: float) -> bool:
    d = q - p
    dd = float(d @ d)
    t = 0.0 if dd == 0.0 else min(1.0, max(0.0, float((center - p) @ d) / dd))
    return float(np.linalg.norm(p + t * d - center)) < radius


@dataclass(frozen=True)
class ScriptedExpert:
    waypoints: tuple[tuple[float, float], ...] = ((-0.3, 0.45), (0.3, 0.45), (0.8, 0.0))
    gain: float = 1.0
    sigma_p: float = 0.0
    switch_radius: float = 0.1

    def validate(self, config: EnvConfig) -> None:
        if not (self.gain > 0 and self.sigma_p >= 0 and self.switch_radius >= 0):
            raise ValueError("gain must be positive, sigma_p and switch_radius nonnegative")
        if not self.waypoints:
            raise ValueError("expert needs at least one waypoint")
        wps = np.asarray(self.waypoints, dtype=np.float64)
        if not np.allclose(wps[-1], config.goal):
            raise ValueError("final waypoint must equal the goal")
        c = np.asarray(config.obstacle_center)
        for a, b in zip(wps[:-1], wps[1:]):
            if _segment_hits_disc(a, b, c, config.obstacle_radius):
                raise ValueError(f"waypoint segment {a} -> {b} crosses the obstacle")

    def nominal_action(self, state, waypoint: int, action_limit: float) -> tuple[np.ndarray, int]:
        """Noise-free action and the (possibly advanced) active waypoint index."""
        state = np.asarray(state, dtype=np.float64)
        last = len(self.waypoints) - 1
        while waypoint < last and np.linalg.norm(np.asarray(self.waypoints[waypoint]) - state) <= self.switch_radius:
            waypoint += 1
        action = self.gain * (np.asarray(self.waypoints[waypoint]) - state)
        # uniform rescale so the direction survives the per-dimension limit
        peak = float(np.max(np.abs(action)))
        if peak > action_limit:
            action = action * (action_limit / peak)
        return action, waypoint


def expert_action(state, expert: ScriptedExpert, rng: np.random.Generator,
                  waypoint: int = 0, action_limit: float = 0.1) -> tuple[np.ndarray, int]:
    """Nominal waypoint-following action plus N(0, sigma_p^2 I) noise.

    Returns the action and the active waypoint index to pass on the next call.
    """
    action, waypoint = expert.nominal_action(state, waypoint, action_limit)
    if expert.sigma_p > 0:
        action = action + rng.normal(0.0, expert.sigma_p, size=2)
    return action, waypoint


class ExpertController:
    """Stateful callable wrapping a :class:`ScriptedExpert` for rollouts."""

    def __init__(self, expert: ScriptedExpert, action_limit: float = 0.1,
                 rng: np.random.Generator | None = None):
        self.expert = expert
        self.action_limit = action_limit
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.waypoint = 0

    def reset(self) -> None:
        self.waypoint = 0

    def __call__(self, state) -> np.ndarray:
        action, self.waypoint = expert_action(state, self.expert, self.rng, self.waypoint, self.action_limit)
        return action


def step(state, action, sigma_s: float, rng: np.random.Generator,
         config: EnvConfig = EnvConfig()) -> np.ndarray:
    lo, hi = config.bounds
    a = np.clip(np.asarray(action, dtype=np.float64), -config.action_limit, config.action_limit)
    nxt = np.asarray(state, dtype=np.float64) + a
    if sigma_s > 0:
        nxt = nxt + rng.normal(0.0, sigma_s, size=2)
    return np.clip(nxt, lo, hi)


@dataclass
class RolloutResult:
    trajectory: Trajectory
    outcome: str


def episode_seed(seed: int, episode: int) -> int:
    """Per-episode seed: first word of numpy's SeedSequence over (seed, episode)."""
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


def rollout(policy: Callable, config: EnvConfig, sigma_s: float, rng: np.random.Generator,
            metadata: dict | None = None, seed: int = 0) -> RolloutResult:
    """Run one episode. Recorded actions are the clipped actions actually applied."""
    lo, hi = config.start_low, config.start_high
    state = rng.uniform(lo, hi)
    center = np.asarray(config.obstacle_center)
    goal = np.asarray(config.goal)
    if hasattr(policy, "reset"):
        policy.reset()
    states, actions = [state], []
    outcome = TIMEOUT
    for _ in range(config.max_steps):
        a = np.clip(np.asarray(policy(state), dtype=np.float64), -config.action_limit, config.action_limit)
        nxt = step(state, a, sigma_s, rng, config)
        actions.append(a)
        states.append(nxt)
        if _segment_hits_disc(state, nxt, center, config.obstacle_radius):
            outcome = COLLISION
            break
        state = nxt
        if np.linalg.norm(state - goal) <= config.goal_radius:
            outcome = SUCCESS
            break
    traj = Trajectory(np.array(states), np.array(actions), outcome == SUCCESS, seed, dict(metadata or {}))
    return RolloutResult(traj, outcome)


def collect_dataset(config: EnvConfig, expert: ScriptedExpert, n_episodes: int, seed: int) -> Dataset:
    """Expert rollouts under ``config.sigma_s`` and ``expert.sigma_p``; failures are kept and flagged."""
    expert.validate(config)
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    meta = {"sigma_s": float(config.sigma_s), "sigma_p": float(expert.sigma_p)}
    trajectories = []
    for i in range(n_episodes):
        ep_seed = episode_seed(seed, i)
        rng = np.random.default_rng(ep_seed)
        controller = ExpertController(expert, config.action_limit, rng)
        trajectories.append(rollout(controller, config, config.sigma_s, rng, meta, ep_seed).trajectory)
    return Dataset(trajectories, ENV_ID, 2, 2)


def successful_only(dataset: Dataset) -> Dataset:
    kept = [t for t in dataset.trajectories if t.success]
    if not kept:
        raise ValueError("dataset has no successful trajectories")
    return dataset.with_trajectories(kept)


def evaluate(policy: Callable, config: EnvConfig, sigma_s_eval: float, n_episodes: int,
             seed: int) -> tuple[float, float]:
    """Success rate in percent and its binomial standard error (also in percent)."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    successes = 0
    for i in range(n_episodes):
        rng = np.random.default_rng(episode_seed(seed, i))
        successes += rollout(policy, config, sigma_s_eval, rng).outcome == SUCCESS
    p = successes / n_episodes
    return 100.0 * p, 100.0 * math.sqrt(p * (1.0 - p) / n_episodes)
