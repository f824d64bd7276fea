"""Two-stage demonstration selection with a coverage + log-det diversity objective."""
from .config import RunConfig, objective_config
from .embeddings import EmbeddingSet, SimilarityKernel, cosine_kernel, dispersion_stats, load_embeddings
from .errors import ConfigError, DataError, DivselError, InvariantViolation
from .objective import ObjectiveConfig, marginal_gain, objective_value
from .prompt import DEFAULT_TEMPLATE, assemble_prompt, enumerate_permutations
from .selector import naive_greedy, rank_stage2, retrieve_stage1, select_demonstrations

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "DivselError", "InvariantViolation",
    "EmbeddingSet", "SimilarityKernel", "cosine_kernel", "dispersion_stats", "load_embeddings",
    "ObjectiveConfig", "marginal_gain", "objective_value",
    "naive_greedy", "rank_stage2", "retrieve_stage1", "select_demonstrations",
    "RunConfig", "objective_config",
    "DEFAULT_TEMPLATE", "assemble_prompt", "enumerate_permutations",
]
