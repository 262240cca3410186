"""Configuration, scenario pipeline, check suite, reports and the command line."""
from .config import SCENARIOS, ConfigError, ScenarioConfig, load_config, parse_config
from .report import CheckRecord, RunReport, emit_report, read_report_csv, report_csv, report_text
from .scenarios import RunState, StageError, run_pipeline, run_scenario
from .checks import CHECK_NAMES, run_checks

__all__ = [n for n in dir() if not n.startswith("_")]
