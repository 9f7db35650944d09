"""Scenario generators, Monte Carlo engine and coverage reports."""

from .engine import Scenario, SimulationResult, load_presets, run_monte_carlo, scenario_from_config
from .reports import ReportTable, coverage_report, ell1_uniformity, report_for
from .scenarios import (
    GENERATORS,
    generate_example1,
    generate_example2,
    generate_setting1,
    generate_setting2,
    generate_setting3,
    generate_setting4,
    mixing_matrix_setting1,
    setting4_c0,
)

__all__ = [
    "GENERATORS",
    "ReportTable",
    "Scenario",
    "SimulationResult",
    "coverage_report",
    "ell1_uniformity",
    "generate_example1",
    "generate_example2",
    "generate_setting1",
    "generate_setting2",
    "generate_setting3",
    "generate_setting4",
    "load_presets",
    "mixing_matrix_setting1",
    "report_for",
    "run_monte_carlo",
    "scenario_from_config",
    "setting4_c0",
]
