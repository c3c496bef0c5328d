from .config import RunConfig, build_config, load_config
from .runner import (
    OracleBackend,
    RunManifest,
    load_run,
    oracle_backend,
    read_manifest,
    report_runs,
    run_eval,
    run_profile,
)
from .tables import render_tables

__all__ = [
    "RunConfig", "build_config", "load_config", "OracleBackend", "RunManifest", "load_run",
    "oracle_backend", "read_manifest", "report_runs", "run_eval", "run_profile", "render_tables",
]
