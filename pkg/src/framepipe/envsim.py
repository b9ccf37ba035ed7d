"""Closed-loop planar target tracking, sensitive to context staleness.

The agent chases a moving target under an action-norm budget. Per-frame
observation noise is a pure function of (seed, frame), so two runs with the
same seed see identical streams regardless of how many times or in which
order observations are taken. Accuracy is the mean per-frame distance
between agent and target; an episode succeeds when that mean stays under
the configured threshold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ActionNormExceeded, EpisodeOver
from .policy import Observation


@dataclass(frozen=True)
class CirclePath:
    """Constant angular velocity circle; omega is radians per frame."""

    radius: float = 1.0
    omega: float = math.pi / 12

    def position(self, frame: int) -> np.ndarray:
        a = self.omega * frame
        return self.radius * np.array([math.cos(a), math.sin(a)])


class RandomWalkPath:
    """Seeded Gaussian random walk starting at the origin."""

    def __init__(self, step_sigma: float = 0.05, seed: int = 0):
        self.step_sigma = step_sigma
        self.seed = seed
        self._points = [np.zeros(2)]
        self._rng = np.random.default_rng(seed)

    def position(self, frame: int) -> np.ndarray:
        while len(self._points) <= frame:
            step = self._rng.normal(0.0, self.step_sigma, 2)
            self._points.append(self._points[-1] + step)
        return self._points[frame].copy()


class TrackingEnv:
    """Frame-indexed tracking episode with deterministic noise."""

    def __init__(self, path=None, noise_sigma: float = 0.02, max_step: float = 0.8,
                 success_threshold: float = 0.75, episode_frames: int = 300,
                 seed: int = 0, agent_start=(0.0, 0.0)):
        self.path = path if path is not None else CirclePath()
        self.noise_sigma = noise_sigma
        self.max_step = max_step
        self.success_threshold = success_threshold
        self.episode_frames = episode_frames
        self.seed = seed
        self.agent_start = np.asarray(agent_start, dtype=np.float64)
        self.reset()

    def reset(self) -> None:
        self.agent = self.agent_start.copy()
        self.current_frame = 0
        self._errors: list[float] = []
        self._rows: list[tuple] = []
        self._frame_action = np.zeros(2)
        self._frame_had_action = False

    def copy(self) -> "TrackingEnv":
        fresh_path = self.path
        if isinstance(self.path, RandomWalkPath):
            fresh_path = RandomWalkPath(self.path.step_sigma, self.path.seed)
        return TrackingEnv(path=fresh_path, noise_sigma=self.noise_sigma,
                           max_step=self.max_step,
                           success_threshold=self.success_threshold,
                           episode_frames=self.episode_frames, seed=self.seed,
                           agent_start=tuple(self.agent_start))

    # -- core frame protocol ---------------------------------------------------

    def target(self, frame: int) -> np.ndarray:
        return self.path.position(frame)

    def observe(self, frame: int) -> Observation:
        if frame >= self.episode_frames:
            raise EpisodeOver(f"frame {frame} beyond episode of {self.episode_frames}")
        rng = np.random.default_rng((self.seed, frame))
        noise = rng.normal(0.0, self.noise_sigma, 2) if self.noise_sigma > 0 else np.zeros(2)
        estimate = self.target(frame) + noise
        return Observation(frame=frame, vector=np.concatenate([estimate, self.agent]))

    def apply_action(self, action) -> None:
        """Move the agent; the instantaneous error lands in this frame's record."""
        if self.current_frame >= self.episode_frames:
            raise EpisodeOver(f"frame {self.current_frame} beyond episode")
        vec = np.asarray(action, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if norm > self.max_step * (1.0 + 1e-9) + 1e-12:
            raise ActionNormExceeded(f"|action| = {norm} > max_step = {self.max_step}")
        self.agent = self.agent + vec
        self._frame_action = self._frame_action + vec
        self._frame_had_action = True

    def advance_frame(self) -> None:
        """Seal the current frame's error and move the clock forward."""
        t = self.current_frame
        if t >= self.episode_frames:
            raise EpisodeOver(f"frame {t} beyond episode")
        target = self.target(t)
        err = float(np.linalg.norm(target - self.agent))
        self._errors.append(err)
        self._rows.append((t, float(target[0]), float(target[1]),
                           float(self.agent[0]), float(self.agent[1]),
                           float(self._frame_action[0]), float(self._frame_action[1]), err))
        self._frame_action = np.zeros(2)
        self._frame_had_action = False
        self.current_frame = t + 1

    @property
    def last_error(self) -> float:
        if not self._errors:
            raise EpisodeOver("no frame sealed yet")
        return self._errors[-1]

    # -- evaluation ---------------------------------------------------------------

    def evaluate(self, actions=None) -> dict:
        """Aggregate recorded errors, or replay an action stream from scratch.

        `actions` maps frame index to a displacement vector (dict or
        sequence indexed by frame); frames without an entry hold position.
        """
        if actions is None:
            errors = list(self._errors)
        else:
            replay = self.copy()
            lookup = actions if isinstance(actions, dict) else dict(enumerate(actions))
            for t in range(replay.episode_frames):
                act = lookup.get(t)
                if act is not None:
                    replay.apply_action(act)
                replay.advance_frame()
            errors = list(replay._errors)
        if not errors:
            return {"success": False, "mean_error": float("inf"), "errors": []}
        mean_error = float(np.mean(errors))
        return {"success": mean_error <= self.success_threshold,
                "mean_error": mean_error, "errors": errors}

    def export_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "target_x", "target_y", "agent_x", "agent_y",
                             "action_x", "action_y", "error"])
            writer.writerows(self._rows)


def run_uniform_staleness(env: TrackingEnv, policy, age: int) -> dict:
    """Closed loop where every action consumes an observation `age` frames old.

    Each frame the policy runs a full perceive + generate cycle on the
    buffered observation from `age` frames back (age 0 acts on the current
    frame's observation). This isolates context age from every scheduling
    concern, which is what the staleness-monotonicity property needs.
    """
    buffered = {}
    for t in range(env.episode_frames):
        buffered[t] = env.observe(t)
        src = t - age
        if src >= 0:
            ctx = policy.perception.perceive(buffered[src])
            state = policy.generation.initial_state(seed=src)
            for _ in range(policy.generation.n_iterations):
                state = policy.generation.step(state, ctx)
            action = policy.generation.finish(state, emitted_frame=t)
            env.apply_action(policy.generation.decode_action(action))
            del buffered[src]
        env.advance_frame()
    return env.evaluate()
