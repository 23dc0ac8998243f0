"""Scaffolded task design: decompose, scaffold, and diagnose model failures.

The package turns a corpus of question/answer pairs into chains of teacher
sub-tasks, generates progressively scaffolded rewrites of each question,
filters them through teacher verification, clusters the survivors into a
skill catalog, and then locates the minimum scaffolding level at which each
target model first succeeds. Everything runs offline against a deterministic
simulator when endpoints are configured as ``sim:``.
"""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig, config_from_dict, load_config
from .pipeline import Pipeline, StageError
from .records import RunDir

__all__ = [
    "ConfigError",
    "Pipeline",
    "RunConfig",
    "RunDir",
    "StageError",
    "config_from_dict",
    "load_config",
    "__version__",
]
