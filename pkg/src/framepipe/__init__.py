"""framepipe: frame-based pipeline execution for perception/generation policies."""

__version__ = "0.1.0"

from .context import ContextKind, ContextStore, PublicContext
from .executor import PipelineConfig, RunResult, run_decoupled, run_parallel, run_pipelined, run_sequential
from .envsim import CirclePath, RandomWalkPath, TrackingEnv
from .metrics import RolloutMetrics, compare, summarize
from .partition import StagePlan, split_generation, split_perception
from .policy import Policy, make_autoregressive_policy, make_conditioning_policy
from .transformer import CausalTransformer, TransformerConfig

__all__ = [
    "CausalTransformer",
    "CirclePath",
    "ContextKind",
    "ContextStore",
    "PipelineConfig",
    "Policy",
    "PublicContext",
    "RandomWalkPath",
    "RolloutMetrics",
    "RunResult",
    "StagePlan",
    "TrackingEnv",
    "TransformerConfig",
    "compare",
    "make_autoregressive_policy",
    "make_conditioning_policy",
    "run_decoupled",
    "run_parallel",
    "run_pipelined",
    "run_sequential",
    "split_generation",
    "split_perception",
    "summarize",
]
