"""Command-line front end: run experiments, sweeps and address-map inspection.

Experiments are described by INI files::

    [sim]
    preset = xu4-a15          # any other key overrides the preset
    [victim]
    kind = SeqRead
    working_set = 96KiB
    [attacker]
    kind = BkPllWrite
    mlp = 8
    [experiment]
    n_attackers = 3

All results go to standard output as CSV.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .addrmap import (
    BankBitsNotControllable,
    BankMask,
    DramGeometry,
    XorMapping,
    coord_of,
    load_mapping,
)
from .cachesim import CacheConfig
from .dramsim import DramConfig
from .engine import CoreConfig, ExperimentResult, SimConfig, apply_throttle, solo_vs_corun
from .presets import ATTACKER_MLP, PRESET_NAMES, default_workloads, load_preset
from .workload import WorkloadKind, WorkloadSpec, bank_histogram, build_program, classify_working_set

CSV_COLUMNS = (
    "preset", "victim", "attacker", "n_attackers", "mem_mts", "partitioned", "throttle",
    "solo_cycles_per_iter", "corun_cycles_per_iter", "slowdown", "victim_blocked_cycles",
    "dram_row_hits", "dram_row_conflicts", "seed",
)
MEMFREQ_RATES = tuple(range(1000, 0, -100))
SWEEP_AXES = ("attackers", "memfreq", "attacker-kind")


class ConfigError(ValueError):
    """A configuration problem, already formatted as ``file:line: message``."""


# -- value parsing ------------------------------------------------------------------

_SIZE_RE = re.compile(r"^\s*(\d+)\s*(B|KiB|MiB|GiB)?\s*$")
_SIZE_UNITS = {None: 1, "B": 1, "KiB": 1 << 10, "MiB": 1 << 20, "GiB": 1 << 30}


def parse_size(text: str) -> int:
    """``4096``, ``96KiB`` or ``2MiB`` as a byte count."""
    m = _SIZE_RE.match(text)
    if not m:
        raise ValueError(f"bad size {text!r} (use an integer with optional KiB/MiB suffix)")
    return int(m.group(1)) * _SIZE_UNITS[m.group(2)]


def format_size(n: int) -> str:
    for unit in ("GiB", "MiB", "KiB"):
        scale = _SIZE_UNITS[unit]
        if n >= scale and n % scale == 0:
            return f"{n // scale}{unit}"
    return str(n)


def parse_bool(text: str) -> bool:
    key = text.strip().lower()
    if key in ("1", "on", "yes", "true"):
        return True
    if key in ("0", "off", "no", "false"):
        return False
    raise ValueError(f"bad boolean {text!r} (use on/off)")


def parse_int(text: str) -> int:
    return int(text.strip(), 0)


def parse_optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none", "off") else parse_int(text)


def parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(parse_int(p) for p in text.split(",") if p.strip())


def parse_xor(text: str) -> tuple[tuple[int, ...], ...]:
    """``13^17, 14^18`` -> ((13, 17), (14, 18))."""
    return tuple(tuple(parse_int(b) for b in group.split("^"))
                 for group in text.split(",") if group.strip())


# -- [sim] section --------------------------------------------------------------------

SIM_KEYS: dict[str, Callable[[str], object]] = {
    "name": str.strip,
    "cores": parse_int,
    "window": parse_int,
    "cpu_freq": parse_int,
    "line_size": parse_int,
    "l1_size": parse_size,
    "l1_ways": parse_int,
    "l1_mshrs": parse_int,
    "l1_wb_entries": parse_int,
    "l1_latency": parse_int,
    "llc_size": parse_size,
    "llc_ways": parse_int,
    "llc_mshrs": parse_int,
    "llc_wb_entries": parse_int,
    "llc_latency": parse_int,
    "bank_bits": parse_int_list,
    "bank_xor": parse_xor,
    "row_size": parse_size,
    "mem_mts": parse_int,
    "tRCD": parse_int,
    "tRP": parse_int,
    "tCL": parse_int,
    "tBURST": parse_int,
    "scheduler_window": parse_int,
}


def sim_fields(sim: SimConfig) -> dict[str, object]:
    """Flatten a SimConfig into [sim] keys. All cores must share one window."""
    windows = {c.window for c in sim.cores}
    if len(windows) != 1:
        raise ValueError("only uniform core windows can be serialized")
    d = sim.dram
    fields: dict[str, object] = dict(
        name=sim.name, cores=len(sim.cores), window=windows.pop(), cpu_freq=d.cpu_freq,
        line_size=sim.line_size,
        l1_size=sim.l1.size, l1_ways=sim.l1.ways, l1_mshrs=sim.l1.num_mshrs,
        l1_wb_entries=sim.l1.wb_entries, l1_latency=sim.l1.hit_latency,
        llc_size=sim.llc.size, llc_ways=sim.llc.ways, llc_mshrs=sim.llc.num_mshrs,
        llc_wb_entries=sim.llc.wb_entries, llc_latency=sim.llc.hit_latency,
        row_size=d.geometry.row_size, mem_mts=d.transfer_rate,
        tRCD=d.tRCD, tRP=d.tRP, tCL=d.tCL, tBURST=d.tBURST,
        scheduler_window=d.scheduler_window,
    )
    if isinstance(d.mapping, BankMask):
        fields["bank_bits"] = d.mapping.bits
    else:
        fields["bank_xor"] = d.mapping.functions
    return fields


def build_sim(fields: dict[str, object]) -> SimConfig:
    missing = [k for k in SIM_KEYS if k not in fields and k not in ("name", "bank_bits", "bank_xor")]
    if missing:
        raise ValueError(f"[sim] is missing {', '.join(missing)} (or set preset)")
    if ("bank_bits" in fields) == ("bank_xor" in fields):
        raise ValueError("[sim] needs exactly one of bank_bits, bank_xor")
    if "bank_bits" in fields:
        mapping = BankMask(tuple(fields["bank_bits"]))
    else:
        mapping = XorMapping(tuple(fields["bank_xor"]))
    line = fields["line_size"]
    geom = DramGeometry(1 << mapping.bit_count, fields["row_size"], line)
    return SimConfig(
        cores=tuple(CoreConfig(window=fields["window"]) for _ in range(fields["cores"])),
        l1=CacheConfig.of_size(fields["l1_size"], fields["l1_ways"], line,
                               num_mshrs=fields["l1_mshrs"], wb_entries=fields["l1_wb_entries"],
                               hit_latency=fields["l1_latency"]),
        llc=CacheConfig.of_size(fields["llc_size"], fields["llc_ways"], line,
                                num_mshrs=fields["llc_mshrs"], wb_entries=fields["llc_wb_entries"],
                                hit_latency=fields["llc_latency"]),
        dram=DramConfig(geom, mapping, tRCD=fields["tRCD"], tRP=fields["tRP"], tCL=fields["tCL"],
                        tBURST=fields["tBURST"], transfer_rate=fields["mem_mts"],
                        cpu_freq=fields["cpu_freq"], scheduler_window=fields["scheduler_window"]),
        name=str(fields.get("name", "custom")),
    )


def format_sim_section(sim: SimConfig) -> str:
    """The [sim] section that rebuilds ``sim`` exactly."""
    out = ["[sim]"]
    for key, value in sim_fields(sim).items():
        if key == "bank_bits":
            text = ", ".join(map(str, value))
        elif key == "bank_xor":
            text = ", ".join("^".join(map(str, f)) for f in value)
        elif key.endswith("_size") and key != "line_size":
            text = format_size(value)
        else:
            text = str(value)
        out.append(f"{key} = {text}")
    return "\n".join(out) + "\n"


# -- config files -------------------------------------------------------------------

WORKLOAD_KEYS: dict[str, Callable[[str], object]] = {
    "kind": WorkloadKind.parse,
    "working_set": parse_size,
    "mlp": parse_int,
    "target_bank": parse_optional_int,
    "seed": parse_int,
}

EXPERIMENT_KEYS: dict[str, Callable[[str], object]] = {
    "n_attackers": parse_int,
    "laps": parse_int,
    "partition": parse_bool,
    "throttle": parse_optional_int,
    "in_order": parse_bool,
}

SECTIONS = {"sim": None, "victim": WORKLOAD_KEYS, "attacker": WORKLOAD_KEYS,
            "experiment": EXPERIMENT_KEYS, "workload": WORKLOAD_KEYS}


@dataclass(frozen=True)
class Experiment:
    sim: SimConfig
    victim: WorkloadSpec
    attacker: WorkloadSpec
    n_attackers: int
    laps: int = 1
    partition: bool = False
    throttle: Optional[int] = None
    in_order: bool = False

    def configured_sim(self) -> SimConfig:
        sim = self.sim.with_partition(self.partition)
        if self.in_order:
            sim = sim.with_attackers(in_order=True)
        for core in range(1, len(sim.cores)):
            sim = apply_throttle(sim, core, self.throttle)
        return sim


def _line_of(text: str, section: str, key: Optional[str] = None) -> int:
    """1-based line of ``key`` inside ``[section]`` (or of the header)."""
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        if current == section and key is not None:
            name = re.split(r"[=:]", stripped, 1)[0].strip()
            if name == key:
                return lineno
    return 0


class ConfigFile:
    """An INI file read with configparser; errors name the offending line."""

    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                           interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source)
        except configparser.Error as exc:
            lineno = getattr(exc, "lineno", None)
            if lineno is None and getattr(exc, "errors", None):
                lineno = exc.errors[0][0]
            msg = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
            raise ConfigError(f"{source}:{lineno or 0}: {msg}") from None
        self.parser = parser
        for section in parser.sections():
            if section not in SECTIONS:
                self.fail(section, None, f"unknown section [{section}]")

    @classmethod
    def load(cls, path: str | Path) -> "ConfigFile":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        return cls(text, str(path))

    def fail(self, section: str, key: Optional[str], msg: str):
        raise ConfigError(f"{self.source}:{_line_of(self.text, section, key)}: {msg}")

    def has(self, section: str) -> bool:
        return self.parser.has_section(section)

    def values(self, section: str, schema: dict[str, Callable[[str], object]]) -> dict[str, object]:
        if not self.parser.has_section(section):
            return {}
        out = {}
        for key, raw in self.parser.items(section):
            conv = schema.get(key)
            if conv is None:
                self.fail(section, key, f"unknown key {key!r} in [{section}]")
            try:
                out[key] = conv(raw)
            except ValueError as exc:
                self.fail(section, key, f"{key}: {exc}")
        return out

    def sim(self, preset: Optional[str] = None) -> SimConfig:
        raw = dict(self.parser.items("sim")) if self.has("sim") else {}
        name = preset or raw.get("preset")
        fields: dict[str, object] = {}
        if name:
            try:
                fields = sim_fields(load_preset(name.strip()))
            except ValueError as exc:
                self.fail("sim", "preset", str(exc))
        if preset is None:
            schema = dict(SIM_KEYS, preset=str.strip)
            overrides = self.values("sim", schema)
            overrides.pop("preset", None)
            if "bank_bits" in overrides:
                fields.pop("bank_xor", None)
            if "bank_xor" in overrides:
                fields.pop("bank_bits", None)
            fields.update(overrides)
        try:
            return build_sim(fields)
        except ValueError as exc:
            self.fail("sim", None, str(exc))

    def workload(self, section: str, default: WorkloadSpec) -> WorkloadSpec:
        vals = self.values(section, WORKLOAD_KEYS)
        kind = vals.get("kind", default.kind)
        if "target_bank" not in vals:
            vals["target_bank"] = (default.target_bank if default.target_bank is not None else 0) \
                if kind.is_bank_aware else None
        try:
            return dataclasses.replace(default, **vals)
        except ValueError as exc:
            self.fail(section, None, str(exc))

    def experiment(self, preset: Optional[str] = None) -> Experiment:
        sim = self.sim(preset)
        w = default_workloads(sim)
        victim = self.workload("victim", WorkloadSpec(WorkloadKind.SEQ_READ, w.victim_llc,
                                                      sim.line_size))
        attacker = self.workload("attacker", WorkloadSpec(
            WorkloadKind.BK_PLL_WRITE, w.attacker, sim.line_size, mlp=ATTACKER_MLP,
            target_bank=0, seed=1))
        vals = self.values("experiment", EXPERIMENT_KEYS)
        vals.setdefault("n_attackers", len(sim.cores) - 1)
        exp = Experiment(sim, victim, attacker, **vals)
        if not 0 <= exp.n_attackers < len(sim.cores):
            self.fail("experiment", "n_attackers",
                      f"n_attackers must be in 0..{len(sim.cores) - 1}")
        if exp.laps < 1:
            self.fail("experiment", "laps", "laps must be >= 1")
        if exp.throttle is not None and exp.throttle < 1:
            self.fail("experiment", "throttle", "throttle must be >= 1 or none")
        return exp


# -- experiments and CSV -----------------------------------------------------------

def run_experiment(exp: Experiment) -> ExperimentResult:
    return solo_vs_corun(exp.configured_sim(), exp.victim, exp.attacker, exp.n_attackers, exp.laps)


def csv_row(exp: Experiment, res: ExperimentResult) -> list[str]:
    sim = exp.sim
    co = res.corun
    return [
        sim.name,
        f"{exp.victim.kind.value}({classify_working_set(exp.victim.working_set, sim.llc.size)})",
        exp.attacker.kind.value,
        str(exp.n_attackers),
        str(sim.dram.transfer_rate),
        "1" if exp.partition else "0",
        str(exp.throttle or 0),
        f"{res.solo_cycles_per_iter:.4f}",
        f"{res.corun_cycles_per_iter:.4f}",
        f"{res.slowdown:.4f}",
        str(co.victim.blocked_cycles),
        str(co.dram_row_hits),
        str(co.dram_row_conflicts),
        str(exp.attacker.seed),
    ]


def write_csv(rows: Iterable[list[str]], out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row)
        out.flush()


def sweep_experiments(exp: Experiment, axis: str) -> list[Experiment]:
    if axis == "attackers":
        return [dataclasses.replace(exp, n_attackers=n) for n in range(len(exp.sim.cores))]
    if axis == "memfreq":
        return [dataclasses.replace(exp, sim=exp.sim.with_rate(r)) for r in MEMFREQ_RATES]
    if axis == "attacker-kind":
        out = []
        for kind in WorkloadKind:
            bank = (exp.attacker.target_bank or 0) if kind.is_bank_aware else None
            out.append(dataclasses.replace(
                exp, attacker=dataclasses.replace(exp.attacker, kind=kind, target_bank=bank)))
        return out
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


def run_rows(experiments: Sequence[Experiment]) -> Iterable[list[str]]:
    for exp in experiments:
        yield csv_row(exp, run_experiment(exp))


# -- mapinspect ---------------------------------------------------------------------

def inspect_addresses(mapping, geom: DramGeometry, addrs: Sequence[int]) -> list[str]:
    lines = []
    for addr in addrs:
        c = coord_of(geom, mapping, addr)
        lines.append(f"0x{addr:x}: bank {c.bank} row {c.row} col {c.col}")
    return lines


def inspect_workload(mapping, geom: DramGeometry, spec: WorkloadSpec) -> list[str]:
    prog = build_program(spec, mapping, geom)
    hist = bank_histogram(prog, mapping, geom)
    total = sum(hist)
    lines = [f"workload {spec.kind.value}: {prog.node_count} nodes in {prog.chain_count} chain(s)"]
    width = len(str(max(hist)))
    lines += [f"bank {b:>3}: {n:>{width}}" for b, n in enumerate(hist)]
    if spec.kind.is_bank_aware:
        hits = hist[spec.target_bank]
        verdict = "PASS" if hits == total else "FAIL"
        pct = 100.0 * hits / total
        pct_text = f"{pct:.0f}" if pct in (0.0, 100.0) else f"{pct:.2f}"
        lines.append(f"purity: {verdict} {pct_text}% in bank {spec.target_bank}")
    return lines


# -- argument handling --------------------------------------------------------------

def _parse_addr_list(values: Sequence[str]) -> list[int]:
    out = []
    for v in values:
        for part in v.split(","):
            if part.strip():
                out.append(int(part.strip(), 0))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cachedos", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one co-run experiment")
    run_p.add_argument("-c", "--config", required=True)
    run_p.add_argument("--preset", choices=PRESET_NAMES, help="replace the [sim] section")

    sw = sub.add_parser("sweep", help="sweep one experiment axis")
    sw.add_argument("-c", "--config", required=True)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--preset", choices=PRESET_NAMES, help="replace the [sim] section")

    mi = sub.add_parser("mapinspect", help="decode addresses or check workload bank purity")
    src = mi.add_mutually_exclusive_group(required=True)
    src.add_argument("-m", "--mapping", help="mapping file")
    src.add_argument("--preset", choices=PRESET_NAMES, help="use a preset's mapping")
    what = mi.add_mutually_exclusive_group(required=True)
    what.add_argument("--addr", action="append", help="address(es), hex or decimal")
    what.add_argument("-c", "--config", help="file with a [workload] section")

    pr = sub.add_parser("preset", help="print a preset as a [sim] section")
    pr.add_argument("name", choices=PRESET_NAMES)
    return p


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out if out is not None else sys.stdout
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            exp = ConfigFile.load(args.config).experiment(args.preset)
            write_csv(run_rows([exp]), out)
        elif args.command == "sweep":
            exp = ConfigFile.load(args.config).experiment(args.preset)
            write_csv(run_rows(sweep_experiments(exp, args.axis)), out)
        elif args.command == "mapinspect":
            if args.mapping:
                mapping, geom = load_mapping(args.mapping)
            else:
                sim = load_preset(args.preset)
                mapping, geom = sim.dram.mapping, sim.dram.geometry
            if args.addr:
                lines = inspect_addresses(mapping, geom, _parse_addr_list(args.addr))
            else:
                cfg = ConfigFile.load(args.config)
                if not cfg.has("workload"):
                    raise ConfigError(f"{args.config}:0: missing [workload] section")
                default = WorkloadSpec(WorkloadKind.BK_PLL_READ, 64 * geom.line_size,
                                       geom.line_size, mlp=1, target_bank=0)
                lines = inspect_workload(mapping, geom, cfg.workload("workload", default))
            out.write("\n".join(lines) + "\n")
        else:
            out.write(format_sim_section(load_preset(args.name)))
    except BankBitsNotControllable as exc:
        print(f"BankBitsNotControllable: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def run_config_text(text: str, preset: Optional[str] = None, axis: Optional[str] = None) -> str:
    """Run a config given as text and return the CSV (used by tests and scripts)."""
    exp = ConfigFile(text, "<config>").experiment(preset)
    exps = [exp] if axis is None else sweep_experiments(exp, axis)
    buf = io.StringIO()
    write_csv(run_rows(exps), buf)
    return buf.getvalue()


if __name__ == "__main__":
    sys.exit(main())
