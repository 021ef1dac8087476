import dataclasses

import pytest

from cachedos.addrmap import BankMask, DramGeometry
from cachedos.cachesim import CacheConfig
from cachedos.dramsim import DramConfig
from cachedos.engine import (
    EPOCH,
    CoreConfig,
    SimConfig,
    Simulator,
    apply_throttle,
    core_base,
    corun_programs,
    run,
    solo_vs_corun,
    sweep_memfreq,
)
from cachedos.workload import WorkloadKind, WorkloadSpec, build_program

KiB = 1024
VICTIM = WorkloadSpec(WorkloadKind.SEQ_READ, 4 * KiB)


def tiny_sim(cores=2, l1_mshrs=4, llc_mshrs=4, window=8, **dram_kw):
    return SimConfig(
        cores=tuple(CoreConfig(window=window) for _ in range(cores)),
        l1=CacheConfig.of_size(2 * KiB, 2, num_mshrs=l1_mshrs, wb_entries=2, hit_latency=2),
        llc=CacheConfig.of_size(16 * KiB, 4, num_mshrs=llc_mshrs, wb_entries=4, hit_latency=8),
        dram=DramConfig(DramGeometry(2, 8192), BankMask((13,)), tRCD=4, tRP=4, tCL=4,
                        tBURST=2, transfer_rate=800, cpu_freq=800, scheduler_window=4,
                        **dram_kw),
    )


def attacker(kind=WorkloadKind.PLL_READ, mlp=8, size=64 * KiB, **kw):
    if kind.is_bank_aware:
        kw.setdefault("target_bank", 0)
    return WorkloadSpec(kind, size, mlp=mlp, seed=1, **kw)


def test_config_validation():
    sim = tiny_sim()
    with pytest.raises(ValueError):
        CoreConfig(window=0)
    with pytest.raises(ValueError):
        CoreConfig(throttle=0)
    with pytest.raises(ValueError):
        SimConfig((), sim.l1, sim.llc, sim.dram)
    with pytest.raises(ValueError):
        sim.replace(l1=dataclasses.replace(sim.l1, line_size=32))
    with pytest.raises(ValueError):
        apply_throttle(sim, 1, 0)


def test_simulator_rejects_bad_programs():
    sim = tiny_sim()
    prog = build_program(VICTIM)
    with pytest.raises(ValueError):
        Simulator(sim, [None, prog])
    with pytest.raises(ValueError):
        Simulator(sim, [prog, prog, prog])
    with pytest.raises(ValueError):
        Simulator(sim, [build_program(WorkloadSpec(WorkloadKind.SEQ_READ, 4096, line_size=32))])
    with pytest.raises(ValueError):
        corun_programs(sim, VICTIM, attacker(), 2)
    with pytest.raises(ValueError):
        Simulator(sim, [prog]).run(0)


def test_no_attackers_means_slowdown_exactly_one():
    res = solo_vs_corun(tiny_sim(cores=4), VICTIM, None, 0, laps=2)
    assert res.slowdown == 1.0
    assert res.corun == res.solo


def test_runs_are_deterministic():
    sim = tiny_sim(cores=3)
    a = solo_vs_corun(sim, VICTIM, attacker(WorkloadKind.BK_PLL_WRITE), 2)
    b = solo_vs_corun(sim, VICTIM, attacker(WorkloadKind.BK_PLL_WRITE), 2)
    assert a.corun == b.corun


def test_llc_hit_core_blocked_only_when_mshrs_fill():
    sim = tiny_sim(llc_mshrs=4).with_partition()
    saturating = run(sim, corun_programs(sim, VICTIM, attacker(mlp=8), 1), 2)
    assert saturating.llc_max_mshr_occupancy == 4
    assert saturating.victim.llc_misses == 0
    assert saturating.victim.blocked_cycles > 0

    light = run(sim, corun_programs(sim, VICTIM, attacker(mlp=2), 1), 2)
    assert light.llc_max_mshr_occupancy < 4
    assert light.victim.llc_misses == 0
    assert light.victim.blocked_cycles == 0
    assert light.victim.llc_hits > 0


def test_conservation_and_clean_drain():
    sim = tiny_sim(cores=3)
    progs = corun_programs(sim, VICTIM, attacker(WorkloadKind.PLL_WRITE, mlp=4), 2)
    s = Simulator(sim, progs)
    m = s.run(2)
    lap = progs[0].accesses_per_lap
    assert m.victim.completed == 2 * lap
    assert m.issued_total == m.completed_total
    assert not s.llc.mshrs and not s._timers
    assert all(not c.l1.mshrs and not c.out_q and c.inflight == 0 for c in s.cores)
    assert s.dram_reads == s.llc.misses - s.llc.merges
    assert m.dram_writebacks > 0
    assert sum(m.bank_accesses) == m.dram_reads + m.dram_writebacks
    for c in m.cores:
        assert c.issued == c.l1_hits + c.l1_misses


def test_warm_caches_installs_lap_and_leaves_writes_dirty():
    sim = tiny_sim()
    victim = build_program(VICTIM)
    writer = build_program(WorkloadSpec(WorkloadKind.SEQ_WRITE, 1 * KiB), base=core_base(1))
    s = Simulator(sim, [victim, writer])
    s.warm_caches()
    assert all(s.llc.contains(a) for a in victim.chains[0])
    assert all(s.cores[1].l1.is_dirty(a) for a in writer.chains[0])
    assert s.llc.misses == 0 and s.cycle == 0


def test_generous_throttle_changes_nothing():
    sim = tiny_sim(cores=2)
    spec = attacker(WorkloadKind.PLL_WRITE)
    free = solo_vs_corun(sim, VICTIM, spec, 1, laps=2)
    loose = solo_vs_corun(apply_throttle(sim, 1, 10 ** 9), VICTIM, spec, 1, laps=2)
    assert loose.corun == free.corun


def test_tight_throttle_caps_attacker_misses_per_epoch():
    sim = apply_throttle(tiny_sim(cores=2), 1, 3)
    spec = attacker(WorkloadKind.PLL_READ)
    m = run(sim, corun_programs(sim, VICTIM, spec, 1), 3)
    epochs = m.total_cycles // EPOCH + 1
    assert m.cores[1].l1_misses <= 3 * epochs
    free = solo_vs_corun(tiny_sim(cores=2), VICTIM, spec, 1, laps=3)
    assert m.cycles_per_iter <= free.corun_cycles_per_iter


def test_in_order_cores_keep_one_access_in_flight():
    sim = tiny_sim(cores=2).with_attackers(in_order=True)
    assert sim.cores[1].effective_window == 1 and sim.cores[0].effective_window == 8
    s = Simulator(sim, corun_programs(sim, VICTIM, attacker(mlp=8), 1))
    peak = 0
    s.warm_caches()
    for _ in range(3000):
        s.step()
        peak = max(peak, s.cores[1].inflight)
    assert peak == 1


def test_more_attacker_parallelism_never_helps_victim():
    sim = tiny_sim(cores=2)
    slow = [solo_vs_corun(sim, VICTIM, attacker(mlp=m), 1).slowdown for m in (1, 8)]
    assert slow[0] <= slow[1]


def test_memfreq_sweep_validation_and_order():
    sim = tiny_sim(cores=2)
    with pytest.raises(ValueError):
        sweep_memfreq(sim, VICTIM, attacker(), [])
    with pytest.raises(ValueError):
        sweep_memfreq(sim, VICTIM, attacker(), [50])
    rows = sweep_memfreq(sim, WorkloadSpec(WorkloadKind.SEQ_READ, 32 * KiB), attacker(), [800, 200])
    assert [r for r, _ in rows] == [800, 200]
    assert rows[1][1].corun_cycles_per_iter > rows[0][1].corun_cycles_per_iter


def test_max_cycles_guard():
    sim = tiny_sim()
    with pytest.raises(RuntimeError):
        run(sim, corun_programs(sim, VICTIM, None, 0), 5, max_cycles=10)
