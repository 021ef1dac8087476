#!/usr/bin/env python3
"""Slowdown as DRAM transfer rate drops, with a way-partitioned LLC by default."""
import argparse
import dataclasses

from _common import emit, experiment
from cachedos.cli import MEMFREQ_RATES
from cachedos.presets import PRESET_NAMES
from cachedos.workload import WorkloadKind

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--preset", default="pi3-lpddr2", choices=PRESET_NAMES)
parser.add_argument("--kind", default="BkPllWrite", type=WorkloadKind.parse)
parser.add_argument("--shared", action="store_true", help="leave the LLC unpartitioned")
parser.add_argument("--rates", type=int, nargs="+", default=list(MEMFREQ_RATES))
args = parser.parse_args()

base = experiment(args.preset, args.kind, partition=not args.shared)
emit(dataclasses.replace(base, sim=base.sim.with_rate(r)) for r in args.rates)
