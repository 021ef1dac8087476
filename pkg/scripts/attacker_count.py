#!/usr/bin/env python3
"""Victim slowdown for 0..cores-1 attackers of every kind."""
import argparse

from _common import emit, experiment
from cachedos.presets import PRESET_NAMES, load_preset
from cachedos.workload import ATTACKER_KINDS

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--preset", default="boom-medium", choices=PRESET_NAMES)
parser.add_argument("--victim", default="LLC", choices=("LLC", "DRAM"))
args = parser.parse_args()

cores = len(load_preset(args.preset).cores)
emit(experiment(args.preset, k, n, fits=args.victim)
     for k in ATTACKER_KINDS for n in range(cores))
