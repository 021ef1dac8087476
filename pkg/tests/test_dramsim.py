import itertools

import pytest
from hypothesis import given, strategies as st

from cachedos.addrmap import BankMask, DramCoord, DramGeometry
from cachedos.dramsim import (
    BankState,
    Dram,
    DramConfig,
    MemRequest,
    ReqKind,
    RowOutcome,
    check_rate,
    load_timing,
    parse_timing,
    row_outcome,
    service_time,
)


def two_bank_config(window=8, **kw):
    return DramConfig(DramGeometry(2, 8192), BankMask((13,)), scheduler_window=window, **kw)


def test_cycle_conversion():
    cfg = two_bank_config(transfer_rate=1600, cpu_freq=2000)
    assert cfg.scale == 2.5
    assert cfg.to_cpu(18) == 45 and cfg.to_cpu(1) == 3      # ceil(2.5)
    bank = BankState()
    coord = DramCoord(0, 4, 0)
    assert service_time(bank, coord, cfg) == cfg.to_cpu(14 + 14 + 4)
    bank.open_row = 4
    assert service_time(bank, coord, cfg) == 45
    bank.open_row = 5
    assert service_time(bank, coord, cfg) == cfg.to_cpu(14 + 14 + 14 + 4)


def test_row_outcome():
    assert row_outcome(BankState(), DramCoord(0, 1, 0)) is RowOutcome.CLOSED
    assert row_outcome(BankState(1), DramCoord(0, 1, 0)) is RowOutcome.HIT
    assert row_outcome(BankState(2), DramCoord(0, 1, 0)) is RowOutcome.CONFLICT


@pytest.mark.parametrize("rate", [99, 3201, 0])
def test_rate_out_of_range(rate):
    with pytest.raises(ValueError):
        check_rate(rate)
    with pytest.raises(ValueError):
        two_bank_config(transfer_rate=rate)


def test_config_validation():
    with pytest.raises(ValueError):
        two_bank_config(tCL=0)
    with pytest.raises(ValueError):
        two_bank_config(window=0)
    with pytest.raises(ValueError):
        DramConfig(DramGeometry(4, 8192), BankMask((13,)))


def test_timing_parse(tmp_path):
    assert parse_timing("tCL = 11  # comment\n\ntRP=0x0c\n") == {"tCL": 11, "tRP": 12}
    with pytest.raises(ValueError, match="t:2:"):
        parse_timing("tCL = 1\ntFAW = 3\n", "t")
    with pytest.raises(ValueError, match="integer"):
        parse_timing("tCL = fast\n")
    f = tmp_path / "lpddr.timing"
    f.write_text("tRCD = 18\n")
    assert load_timing(f) == {"tRCD": 18}


def test_duplicate_ids_rejected():
    d = Dram(two_bank_config())
    d.enqueue(MemRequest(1, ReqKind.READ, DramCoord(0, 0, 0), 0), 0)
    with pytest.raises(ValueError):
        d.enqueue(MemRequest(1, ReqKind.READ, DramCoord(1, 0, 0), 0), 0)


# -- FR-FCFS against a reference scheduler ------------------------------------------

def reference(cfg, trace):
    """Straightforward FR-FCFS: returns {id: (start, finish)}.

    trace holds (arrival, bank, row) tuples, ids are list indexes.
    """
    t_hit = cfg.to_cpu(cfg.tCL + cfg.tBURST)
    t_closed = cfg.to_cpu(cfg.tRCD + cfg.tCL + cfg.tBURST)
    t_conf = cfg.to_cpu(cfg.tRP + cfg.tRCD + cfg.tCL + cfg.tBURST)
    open_row = {}
    bank_free = {}
    queue = []
    out = {}
    cycle = 0
    while len(out) < len(trace):
        for rid, _ in [(r, f) for r, f in out.items() if f[1] == cycle]:
            _, b, row = trace[rid]
            open_row[b] = row
        queue += [i for i, (a, _, _) in enumerate(trace) if a == cycle]
        window = queue[:cfg.scheduler_window]
        ok = [i for i in window
              if trace[i][0] < cycle and bank_free.get(trace[i][1], 0) <= cycle]
        hits = [i for i in ok if open_row.get(trace[i][1]) == trace[i][2]]
        pick = (hits or ok or [None])[0]
        if pick is not None:
            _, b, row = trace[pick]
            if b not in open_row:
                t = t_closed
            elif open_row[b] == row:
                t = t_hit
            else:
                t = t_conf
            bank_free[b] = cycle + t
            out[pick] = (cycle, cycle + t)
            queue.remove(pick)
        cycle += 1
    return out


def simulate(cfg, trace):
    d = Dram(cfg)
    starts, finishes = {}, {}
    cycle = 0
    while len(finishes) < len(trace):
        for req in d.complete(cycle):
            finishes[req.id] = cycle
        for i, (a, b, row) in enumerate(trace):
            if a == cycle:
                d.enqueue(MemRequest(i, ReqKind.READ, DramCoord(b, row, 0), a), cycle)
        started = d.schedule(cycle)
        if started is not None:
            starts[started] = cycle
        cycle += 1
        assert cycle < 100_000
    assert d.idle
    return {i: (starts[i], finishes[i]) for i in starts}


COORDS = [(b, r) for b in range(2) for r in range(2)]


@pytest.mark.parametrize("window", [1, 2, 8])
@pytest.mark.parametrize("spacing", [0, 7])
def test_fr_fcfs_matches_reference_on_all_small_traces(window, spacing):
    cfg = two_bank_config(window=window, tRCD=3, tRP=3, tCL=2, tBURST=1, cpu_freq=800)
    checked = 0
    for n in range(1, 7):
        for coords in itertools.product(COORDS, repeat=n):
            trace = [(i * spacing, b, r) for i, (b, r) in enumerate(coords)]
            assert simulate(cfg, trace) == reference(cfg, trace), trace
            checked += 1
    assert checked == sum(4 ** n for n in range(1, 7))


@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 1), st.integers(0, 3)),
                min_size=1, max_size=24),
       st.integers(1, 6))
def test_fr_fcfs_matches_reference_random(trace, window):
    trace = sorted(trace, key=lambda t: t[0])
    cfg = two_bank_config(window=window, tRCD=3, tRP=4, tCL=2, tBURST=1, cpu_freq=800)
    assert simulate(cfg, trace) == reference(cfg, trace)


def test_row_hit_bypasses_older_conflict():
    cfg = two_bank_config(window=4)
    got = simulate(cfg, [(0, 0, 0), (1, 0, 1), (2, 0, 0)])
    assert got[2][0] < got[1][0]


def test_window_horizon_hides_younger_hit():
    cfg = two_bank_config(window=2)
    got = simulate(cfg, [(0, 0, 0), (1, 0, 1), (2, 0, 1), (3, 0, 0)])
    # request 3 is a row hit after request 0 but sits outside the 2-entry window
    assert got[1][0] < got[3][0]
    wide = simulate(two_bank_config(window=4), [(0, 0, 0), (1, 0, 1), (2, 0, 1), (3, 0, 0)])
    assert wide[3][0] < wide[1][0]


def test_one_start_per_cycle_and_next_event():
    d = Dram(two_bank_config())
    d.enqueue(MemRequest(0, ReqKind.READ, DramCoord(0, 0, 0), 0), 0)
    d.enqueue(MemRequest(1, ReqKind.WRITEBACK, DramCoord(1, 0, 0), 0), 0)
    assert d.next_event(0) == 1
    assert d.schedule(0) is None          # nothing has arrived before cycle 0
    assert d.schedule(1) == 0 and d.schedule(1) is None
    assert d.schedule(2) == 1
    assert d.outstanding == 2
    assert d.next_event(2) == 1 + d._t_closed
    assert d.row_closed == 2 and d.bank_requests == [1, 1]
