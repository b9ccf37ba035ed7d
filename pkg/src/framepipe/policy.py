"""Perception and generation policy abstractions plus the two toy families.

The iterative-refinement ("conditioning") policy contracts its state toward
the conditioning vector, x <- x + eta * (H - x), so every closed-loop claim
about which context an iteration consumed has an exact closed form. The
token-sequential ("autoregressive") policy emits a fixed 7-token action
encoding via a deterministic quantizer; its cost accounting mirrors a
prefill/decode transformer split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .context import ContextKind, PublicContext
from .errors import (
    IncompleteGeneration,
    KindMismatch,
    SequenceComplete,
    ShapeMismatch,
)

# Fixed published token schema: [sign_x, hi_x, lo_x, sign_y, hi_y, lo_y, stop].
# Signs: 0 zero, 1 positive, 2 negative. Magnitudes: two base-8 digits, 0..63
# buckets across [0, max_action]. Position 7 is a stop/no-op marker.
ACTION_TOKEN_COUNT = 7
STOP_TOKEN = 0
_MAG_LEVELS = 63


@dataclass(frozen=True)
class Observation:
    frame: int
    vector: np.ndarray

    @property
    def id(self) -> int:
        return self.frame


@dataclass(frozen=True)
class PerceptionLayer:
    cost: float
    fn: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.cost <= 0:
            raise ValueError("layer cost must be strictly positive")


class PerceptionModel:
    """Ordered compute layers ending in a public-context payload."""

    def __init__(self, layers: Sequence[PerceptionLayer], output_kind: ContextKind,
                 finalize: Callable[[np.ndarray, Observation], PublicContext],
                 obs_width: int):
        if not layers:
            raise ValueError("perception needs at least one layer")
        self.layers = tuple(layers)
        self.output_kind = output_kind
        self._finalize = finalize
        self.obs_width = obs_width

    @property
    def layer_costs(self) -> tuple[float, ...]:
        return tuple(layer.cost for layer in self.layers)

    @property
    def total_cost(self) -> float:
        return float(sum(self.layer_costs))

    def start(self, obs: Observation) -> np.ndarray:
        vec = np.asarray(obs.vector, dtype=np.float64)
        if vec.shape != (self.obs_width,):
            raise ShapeMismatch(f"observation width {vec.shape} != ({self.obs_width},)")
        return vec

    def apply_layers(self, latent: np.ndarray, start: int, stop: int) -> np.ndarray:
        for layer in self.layers[start:stop]:
            latent = layer.fn(latent)
        return latent

    def finalize(self, latent: np.ndarray, obs: Observation) -> PublicContext:
        return self._finalize(latent, obs)

    def perceive(self, obs: Observation) -> PublicContext:
        latent = self.start(obs)
        latent = self.apply_layers(latent, 0, len(self.layers))
        return self.finalize(latent, obs)


@dataclass
class GenState:
    kind: ContextKind
    vector: Optional[np.ndarray] = None
    tokens: list[int] = field(default_factory=list)
    steps: int = 0


@dataclass(frozen=True)
class ActionOutput:
    kind: ContextKind
    values: tuple
    emitted_frame: int = -1
    staleness_profile: tuple[float, ...] = ()

    def as_vector(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def encode_action_tokens(displacement, max_action: float, l_a: int = ACTION_TOKEN_COUNT) -> tuple[int, ...]:
    """Quantize a planar displacement into the fixed 7-token schema.

    For l_a beyond 7 the schema repeats cyclically; decoding reads the first
    block, so longer responses only exercise the cost model.
    """
    width = max_action / _MAG_LEVELS
    block: list[int] = []
    for raw in np.asarray(displacement, dtype=np.float64)[:2]:
        v = float(min(max(raw, -max_action), max_action))
        mag = min(_round_half_up(abs(v) / width), _MAG_LEVELS)
        sign = 0 if mag == 0 else (1 if v > 0 else 2)
        block.extend((sign, mag // 8, mag % 8))
    block.append(STOP_TOKEN)
    return tuple(block[i % ACTION_TOKEN_COUNT] for i in range(l_a))


def decode_action_tokens(tokens, max_action: float) -> np.ndarray:
    """Inverse of the token schema, up to one bucket width per axis."""
    toks = list(tokens)
    if len(toks) < ACTION_TOKEN_COUNT:
        raise ValueError(f"need {ACTION_TOKEN_COUNT} tokens, got {len(toks)}")
    width = max_action / _MAG_LEVELS
    out = []
    for axis in range(2):
        sign, hi, lo = toks[3 * axis: 3 * axis + 3]
        mag = hi * 8 + lo
        s = 0.0 if sign == 0 else (1.0 if sign == 1 else -1.0)
        out.append(s * mag * width)
    return np.array(out)


def scripted_ar_policy(ctx: PublicContext, max_action: float, l_a: int = ACTION_TOKEN_COUNT) -> int:
    """Next token for the displacement encoded in the context's X_V.

    Deterministic in (context, prefix length); the prefix is read from the
    context's action tokens, so per-request progress rides in on a
    per-request context view.
    """
    if ctx.kind != ContextKind.AUTOREGRESSIVE:
        raise KindMismatch("scripted policy requires an autoregressive context")
    progress = len(ctx.action_tokens)
    if progress >= l_a:
        raise SequenceComplete(f"all {l_a} tokens already generated")
    displacement = np.asarray(ctx.vision_tokens, dtype=np.float64)[0, :2]
    return encode_action_tokens(displacement, max_action, l_a)[progress]


@dataclass(frozen=True)
class GenerationModel:
    """Iterative generator: refinement steps or token appends.

    `n_iterations` is the diffusion step count, or l_a for token policies.
    Cost fields are hardware-independent work units; the autoregressive
    accounting charges a flat cost per prefill call plus one decode per
    subsequent token, matching a long-context regime where a handful of
    extra tokens does not move the prefill cost.
    """

    kind: ContextKind
    n_iterations: int
    step_cost: float
    eta: float = 0.08
    max_action: float = 0.8
    noise_init: bool = False
    init_sigma: float = 1.0
    state_dim: int = 2
    prefill_cost: float = 10.0
    decode_cost: float = 1.0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be positive")
        if self.step_cost <= 0:
            raise ValueError("step_cost must be strictly positive")
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")

    @property
    def total_cost(self) -> float:
        if self.kind == ContextKind.AUTOREGRESSIVE:
            return self.prefill_cost + (self.n_iterations - 1) * self.decode_cost
        return self.n_iterations * self.step_cost

    def initial_state(self, seed: Optional[int] = None) -> GenState:
        if self.kind == ContextKind.AUTOREGRESSIVE:
            return GenState(kind=self.kind, tokens=[])
        if self.noise_init:
            rng = np.random.default_rng(self.init_sigma_seed(seed))
            vec = rng.normal(0.0, self.init_sigma, self.state_dim)
        else:
            vec = np.zeros(self.state_dim)
        return GenState(kind=self.kind, vector=vec)

    @staticmethod
    def init_sigma_seed(seed: Optional[int]):
        return 0 if seed is None else seed

    def step(self, state: GenState, ctx: PublicContext) -> GenState:
        if ctx.kind != self.kind:
            raise KindMismatch(f"context kind {ctx.kind} != model kind {self.kind}")
        if self.kind == ContextKind.CONDITIONING:
            target = np.asarray(ctx.conditioning, dtype=np.float64)
            if target.shape != (self.state_dim,):
                raise ShapeMismatch(f"conditioning width {target.shape} != ({self.state_dim},)")
            new_vec = state.vector + self.eta * (target - state.vector)
            return GenState(kind=self.kind, vector=new_vec, steps=state.steps + 1)
        view = ctx.with_action_tokens(state.tokens)
        token = scripted_ar_policy(view, self.max_action, self.n_iterations)
        return GenState(kind=self.kind, tokens=state.tokens + [token], steps=state.steps + 1)

    def finish(self, state: GenState, emitted_frame: int = -1,
               staleness_profile: tuple[float, ...] = ()) -> ActionOutput:
        if state.steps < self.n_iterations:
            raise IncompleteGeneration(
                f"{state.steps}/{self.n_iterations} iterations applied")
        if staleness_profile and len(staleness_profile) != self.n_iterations:
            raise ValueError("staleness profile must cover every iteration")
        if self.kind == ContextKind.AUTOREGRESSIVE:
            values = tuple(state.tokens)
        else:
            vec = np.asarray(state.vector, dtype=np.float64)
            norm = float(np.linalg.norm(vec))
            if norm > self.max_action:
                vec = vec * (self.max_action / norm)
            values = tuple(float(v) for v in vec)
        return ActionOutput(kind=self.kind, values=values, emitted_frame=emitted_frame,
                            staleness_profile=tuple(staleness_profile))

    def decode_action(self, action: ActionOutput) -> np.ndarray:
        """Environment-facing displacement for either policy family."""
        if self.kind == ContextKind.AUTOREGRESSIVE:
            vec = decode_action_tokens(action.values, self.max_action)
            norm = float(np.linalg.norm(vec))
            if norm > self.max_action:
                vec = vec * (self.max_action / norm)
            return vec
        return action.as_vector()


@dataclass(frozen=True)
class Policy:
    """A perception model paired with the generation model it feeds."""

    perception: PerceptionModel
    generation: GenerationModel

    @property
    def kind(self) -> ContextKind:
        return self.generation.kind

    @property
    def sequential_cost(self) -> float:
        return self.perception.total_cost + self.generation.total_cost


def _identity_layers(costs: Sequence[float]) -> list[PerceptionLayer]:
    return [PerceptionLayer(cost=float(c), fn=lambda latent: latent) for c in costs]


def make_conditioning_policy(layer_costs: Sequence[float] = (14.0, 14.0),
                             n_iterations: int = 100, step_cost: float = 1.0,
                             eta: float = 0.08, max_action: float = 0.8,
                             noise_init: bool = False) -> Policy:
    """Refinement policy over the tracking observation [px, py, ax, ay]."""

    def finalize(latent: np.ndarray, obs: Observation) -> PublicContext:
        conditioning = latent[:2] - latent[2:4]
        return PublicContext(kind=ContextKind.CONDITIONING,
                             conditioning=conditioning,
                             source_observation_id=obs.id,
                             produced_frame=obs.frame)

    perception = PerceptionModel(_identity_layers(layer_costs), ContextKind.CONDITIONING,
                                 finalize, obs_width=4)
    generation = GenerationModel(kind=ContextKind.CONDITIONING, n_iterations=n_iterations,
                                 step_cost=step_cost, eta=eta, max_action=max_action,
                                 noise_init=noise_init)
    return Policy(perception=perception, generation=generation)


def make_autoregressive_policy(layer_costs: Sequence[float] = (14.0, 14.0),
                               l_a: int = ACTION_TOKEN_COUNT,
                               prefill_cost: float = 10.0, decode_cost: float = 1.0,
                               max_action: float = 0.8,
                               vision_len: int = 96, language_len: int = 32,
                               latent_width: int = 64) -> Policy:
    """Token policy whose context mirrors the X_V / X_L / X_A layout.

    The displacement drives row 0 of the vision latents; the remaining rows
    exist so the context length dwarfs the response length, as in the
    long-context regime the merged prefill targets.
    """

    def finalize(latent: np.ndarray, obs: Observation) -> PublicContext:
        vision = np.zeros((vision_len, latent_width))
        vision[0, :2] = latent[:2] - latent[2:4]
        language = np.zeros((language_len, latent_width))
        return PublicContext(kind=ContextKind.AUTOREGRESSIVE,
                             vision_tokens=vision, language_tokens=language,
                             action_tokens=(),
                             source_observation_id=obs.id,
                             produced_frame=obs.frame)

    perception = PerceptionModel(_identity_layers(layer_costs), ContextKind.AUTOREGRESSIVE,
                                 finalize, obs_width=4)
    generation = GenerationModel(kind=ContextKind.AUTOREGRESSIVE, n_iterations=l_a,
                                 step_cost=decode_cost, max_action=max_action,
                                 prefill_cost=prefill_cost, decode_cost=decode_cost)
    return Policy(perception=perception, generation=generation)
