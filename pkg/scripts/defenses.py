#!/usr/bin/env python3
"""Bank-aware write attack under way partitioning, in-order attackers and throttling."""
import argparse

from _common import emit, experiment
from cachedos.presets import PRESET_NAMES
from cachedos.workload import WorkloadKind

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--preset", default="xu4-a15", choices=PRESET_NAMES)
parser.add_argument("--budgets", type=int, nargs="+", default=[1, 2, 4, 16],
                    help="attacker L1 misses allowed per 1000-cycle epoch")
args = parser.parse_args()

kind = WorkloadKind.BK_PLL_WRITE
rows = [experiment(args.preset, WorkloadKind.SEQ_WRITE),
        experiment(args.preset, kind),
        experiment(args.preset, kind, partition=True),
        experiment(args.preset, kind, in_order=True)]
rows += [experiment(args.preset, kind, throttle=b) for b in args.budgets]
emit(rows)
