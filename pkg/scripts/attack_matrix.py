#!/usr/bin/env python3
"""Slowdown of each attacker kind against LLC- and DRAM-resident victims."""
import argparse

from _common import emit, experiment
from cachedos.presets import PRESET_NAMES
from cachedos.workload import ATTACKER_KINDS

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--preset", action="append", choices=PRESET_NAMES,
                    help="repeatable; default xu4-a15 and pi4-a72")
parser.add_argument("--victim", choices=("LLC", "DRAM"), action="append")
parser.add_argument("-n", "--attackers", type=int, default=3)
args = parser.parse_args()

emit(experiment(p, k, args.attackers, fits=v)
     for p in args.preset or ("xu4-a15", "pi4-a72")
     for v in args.victim or ("LLC", "DRAM")
     for k in ATTACKER_KINDS)
