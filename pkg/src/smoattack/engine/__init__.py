"""Scenario configuration, simulation, trace files, figures and the CLI."""

from .config import ScenarioConfig, load_config, parse_config
from .io import read_trace, write_metrics, write_trace
from .plots import emit_plots
from .runner import RunMetrics, SimTrace, compare_runs, run_scenario

__all__ = [
    "ScenarioConfig", "load_config", "parse_config", "SimTrace", "RunMetrics",
    "run_scenario", "compare_runs", "write_trace", "read_trace", "write_metrics", "emit_plots",
]
