"""Beam search over reasoning states for program synthesis, grounded by
sandboxed execution and a generative critic, plus the benchmark harness
around it (Pass@1 / Tests / Valid / Time, baselines, ablations, sweeps)."""

from .config import (
    AblationFlags,
    AppConfig,
    CompletionPolicy,
    GatewayConfig,
    ResourceLimits,
    SearchConfig,
)
from .dataset import ProblemRecord, load_problems
from .errors import OrpsError
from .evaluation import (
    BenchmarkReport,
    MethodRun,
    MethodSpec,
    Outcome,
    aggregate,
    evaluate_solution,
    run_method,
    scaling_sweep,
)
from .executor import ExecutionReport, ExecutionService, PerfProfile, format_feedback, relative_time
from .gateway import (
    Completion,
    HttpChatBackend,
    ModelGateway,
    ParsedCritique,
    ScriptedBackend,
    parse_programmer,
    parse_score,
)
from .search import SearchEngine, chain_reward, render_context, run_search, select_beam
from .tree import SearchResult, Segment, TraceNode, Tree, TreeStore

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "AppConfig",
    "BenchmarkReport",
    "Completion",
    "CompletionPolicy",
    "ExecutionReport",
    "ExecutionService",
    "GatewayConfig",
    "HttpChatBackend",
    "MethodRun",
    "MethodSpec",
    "ModelGateway",
    "OrpsError",
    "Outcome",
    "ParsedCritique",
    "PerfProfile",
    "ProblemRecord",
    "ResourceLimits",
    "ScriptedBackend",
    "SearchConfig",
    "SearchEngine",
    "SearchResult",
    "Segment",
    "TraceNode",
    "Tree",
    "TreeStore",
    "aggregate",
    "chain_reward",
    "evaluate_solution",
    "format_feedback",
    "load_problems",
    "parse_programmer",
    "parse_score",
    "relative_time",
    "render_context",
    "run_method",
    "run_search",
    "scaling_sweep",
    "select_beam",
    "__version__",
]
