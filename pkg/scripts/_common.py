"""Shared helpers for the experiment scripts."""
from __future__ import annotations

import sys

from cachedos.cli import Experiment, run_rows, write_csv
from cachedos.presets import attacker_spec, load_preset, victim_spec
from cachedos.workload import WorkloadKind


def experiment(preset: str, kind: WorkloadKind, n: int = 3, fits: str = "LLC",
               laps: int = 1, **options) -> Experiment:
    sim = load_preset(preset)
    return Experiment(sim, victim_spec(sim, fits), attacker_spec(sim, kind), n, laps, **options)


def emit(experiments, out=None) -> None:
    """Run experiments in order, streaming CSV rows as each finishes."""
    write_csv(run_rows(list(experiments)), out or sys.stdout)
