"""Command-line experiments, reports and verification sweeps."""
from .config import ConfigError, ExperimentConfig, load_config
from .svg import emit_svg_scatter, svg_scatter
from .verification import CheckResult, run_verify

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "emit_svg_scatter", "svg_scatter",
           "CheckResult", "run_verify"]
