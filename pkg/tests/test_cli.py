import csv
import io
import subprocess
import sys
from pathlib import Path

import pytest

from cachedos.cli import (
    CSV_COLUMNS,
    ConfigError,
    ConfigFile,
    build_sim,
    format_sim_section,
    main,
    parse_bool,
    parse_size,
    parse_xor,
    run_config_text,
    sim_fields,
)
from cachedos.presets import PRESET_NAMES, load_preset

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).resolve().parent / "golden"


def cli(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


# -- value parsing ------------------------------------------------------------------

@pytest.mark.parametrize("text, value", [
    ("64", 64), ("64B", 64), ("32KiB", 32768), ("2 MiB", 2 << 20), ("1GiB", 1 << 30),
])
def test_parse_size(text, value):
    assert parse_size(text) == value


@pytest.mark.parametrize("text", ["32KB", "-1", "1.5MiB", "", "MiB"])
def test_parse_size_rejects(text):
    with pytest.raises(ValueError):
        parse_size(text)


def test_parse_bool_and_xor():
    assert parse_bool("on") and parse_bool("Yes") and not parse_bool("off")
    with pytest.raises(ValueError):
        parse_bool("maybe")
    assert parse_xor("13^17, 14^18") == ((13, 17), (14, 18))


# -- config files -------------------------------------------------------------------

@pytest.mark.parametrize("name", PRESET_NAMES)
def test_preset_round_trips_through_sim_section(name):
    sim = load_preset(name)
    text = format_sim_section(sim)
    rebuilt = ConfigFile(text, "<preset>").sim()
    assert rebuilt == sim
    assert build_sim(sim_fields(sim)) == sim


def test_preset_subcommand_output_parses_back():
    code, out = cli("preset", "pi4-a72")
    assert code == 0 and out.startswith("[sim]\nname = pi4-a72\n")
    assert ConfigFile(out, "x").sim() == load_preset("pi4-a72")


def test_xor_mapping_round_trip():
    text = "[sim]\npreset = pi4-a72\nbank_xor = 11^15, 12^16, 13^17, 14^18\n"
    sim = ConfigFile(text, "x").sim()
    again = ConfigFile(format_sim_section(sim), "y").sim()
    assert again == sim and "bank_xor = 11^15" in format_sim_section(sim)


def test_unknown_key_reports_file_and_line():
    text = "[sim]\npreset = xu4-a15\n\n[experiment]\nn_attackers = 1\nbogus = 3\n"
    with pytest.raises(ConfigError, match=r"^exp\.ini:6: unknown key 'bogus' in \[experiment\]"):
        ConfigFile(text, "exp.ini").experiment()


@pytest.mark.parametrize("text, line, fragment", [
    ("[sim]\npreset = xu4-a15\n[victim]\nworking_set = 12 parsecs\n", 4, "working_set"),
    ("[sim]\npreset = nope\n", 2, "unknown preset"),
    ("[sim]\npreset = xu4-a15\n[nonsense]\n", 3, "unknown section"),
    ("[sim]\npreset = xu4-a15\n[experiment]\nn_attackers = 9\n", 4, "n_attackers"),
    ("[sim]\npreset = xu4-a15\n[experiment]\nlaps = 0\n", 4, "laps"),
    ("[sim]\npreset = xu4-a15\nmem_mts = 50\n", 1, "transfer rate"),
    ("[sim]\ncores = 4\n", 1, "missing"),
    ("[sim]\npreset = xu4-a15\npreset = pi4-a72\n", 3, "already exists"),
])
def test_config_errors_point_at_lines(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        ConfigFile(text, "f").experiment()
    assert str(info.value).startswith(f"f:{line}:")
    assert fragment in str(info.value)


def test_experiment_defaults():
    exp = ConfigFile("[sim]\npreset = xu4-a15\n", "x").experiment()
    assert exp.n_attackers == 3 and exp.laps == 1 and not exp.partition
    assert exp.victim.working_set == 96 * 1024
    assert exp.attacker.kind.value == "BkPllWrite"
    assert exp.attacker.working_set == 4 << 20 and exp.attacker.mlp == 8
    assert exp.attacker.target_bank == 0


def test_configured_sim_applies_options():
    text = ("[sim]\npreset = pi3-lpddr2\n[experiment]\npartition = on\n"
            "throttle = 5\nin_order = yes\n")
    sim = ConfigFile(text, "x").experiment().configured_sim()
    assert sim.partitioned
    assert sim.cores[0].throttle is None and not sim.cores[0].in_order
    assert all(c.throttle == 5 and c.in_order for c in sim.cores[1:])


# -- running ------------------------------------------------------------------------

def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_zero_attackers_prints_unit_slowdown():
    text = (CONFIGS / "small.ini").read_text().replace("n_attackers = 3", "n_attackers = 0")
    table = rows(run_config_text(text))
    assert table[0] == list(CSV_COLUMNS)
    assert table[1][CSV_COLUMNS.index("n_attackers")] == "0"
    assert table[1][CSV_COLUMNS.index("slowdown")] == "1.0000"


@pytest.mark.parametrize("axis, count", [("attackers", 4), ("memfreq", 10), ("attacker-kind", 6)])
def test_sweep_row_counts_and_golden_output(axis, count):
    code, out = cli("sweep", "-c", str(CONFIGS / "small.ini"), "--axis", axis)
    assert code == 0
    assert len(rows(out)) == count + 1
    assert out == (GOLDEN / f"small_{axis}.csv").read_text()


def test_run_golden_output_on_preset_config():
    code, out = cli("run", "-c", str(CONFIGS / "xu4_bkpllwrite.ini"))
    assert code == 0
    assert out == (GOLDEN / "xu4_bkpllwrite.csv").read_text()


def test_memfreq_sweep_is_monotone_in_golden():
    table = rows((GOLDEN / "small_memfreq.csv").read_text())[1:]
    rates = [int(r[CSV_COLUMNS.index("mem_mts")]) for r in table]
    corun = [float(r[CSV_COLUMNS.index("corun_cycles_per_iter")]) for r in table]
    assert rates == list(range(1000, 0, -100))
    assert corun == sorted(corun)


def test_mapinspect_addresses():
    code, out = cli("mapinspect", "-m", str(CONFIGS / "xu4.map"), "--addr", "0x0,0x2000",
                    "--addr", "0x10100")
    assert code == 0
    assert out.splitlines() == [
        "0x0: bank 0 row 0 col 0",
        "0x2000: bank 2 row 0 col 0",
        "0x10100: bank 17 row 0 col 0",
    ]


def test_mapinspect_workload_purity():
    code, out = cli("mapinspect", "--preset", "pi4-a72", "-c", str(CONFIGS / "bkpll_workload.ini"))
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "workload BkPllRead: 1024 nodes in 4 chain(s)"
    assert lines[1 + 3] == "bank   3: 1024"
    assert lines[-1] == "purity: PASS 100% in bank 3"


def test_uncontrollable_bits_exit_code(tmp_path, capsys):
    mapping = tmp_path / "high.map"
    mapping.write_text("banks 2\nrow_size 8192\nbit 22\n")
    code, _ = cli("mapinspect", "-m", str(mapping), "-c", str(CONFIGS / "bkpll_workload.ini"))
    assert code == 3
    assert capsys.readouterr().err.startswith("BankBitsNotControllable:")


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[sim]\npreset = xu4-a15\nbogus = 1\n")
    assert cli("run", "-c", str(bad))[0] == 2
    assert f"{bad}:3: unknown key 'bogus'" in capsys.readouterr().err
    assert cli("run", "-c", str(tmp_path / "missing.ini"))[0] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cachedos", "preset", "xu4-a15"],
                          capture_output=True, text=True, check=True)
    assert "llc_mshrs = 11" in proc.stdout
