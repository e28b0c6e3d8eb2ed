"""Reproducible runners for the four desk-scale studies."""

from .alea_epis import AleaEpisConfig, run_alea_epis
from .linear_subset import LinearSubsetConfig, run_linear_subset
from .quantile_cls import QuantileClsConfig, run_quantile_classification
from .recording import RunResult, TokenTrace, config_hash, write_run
from .token_curriculum import TokenCurriculumConfig, build_token_trace, run_token_curriculum

__all__ = [
    "AleaEpisConfig",
    "LinearSubsetConfig",
    "QuantileClsConfig",
    "TokenCurriculumConfig",
    "RunResult",
    "TokenTrace",
    "config_hash",
    "write_run",
    "run_alea_epis",
    "run_linear_subset",
    "run_quantile_classification",
    "run_token_curriculum",
    "build_token_trace",
]
