"""Shear-layer and single-cell benchmarks, reports and the command line."""

from chembalance.harness.benchmark import (
    MODES,
    BenchmarkReport,
    run_benchmark,
    single_cell_benchmark,
    write_single_cell_csv,
)
from chembalance.harness.config import ConfigError, RunConfig, load_config, parse_config
from chembalance.harness.field import FieldState, init_shear_layer, mixing_step
from chembalance.harness.report import emit_report

__all__ = [
    "MODES",
    "BenchmarkReport",
    "ConfigError",
    "FieldState",
    "RunConfig",
    "emit_report",
    "init_shear_layer",
    "load_config",
    "mixing_step",
    "parse_config",
    "run_benchmark",
    "single_cell_benchmark",
    "write_single_cell_csv",
]
