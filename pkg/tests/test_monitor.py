import pytest
from hypothesis import given, strategies as st

from faasched.host import OTHER, REVOKE, RR, AppCounters, AppSched, HostConfig, HostModel, HostSnapshot
from faasched.monitor import (AppState, assemble_state, collect_window, detect_lock_usage, fairness,
                              window_fairness)
from faasched.workload import Category, FunctionSpec, InvalidParameter, catalog_by_id


def sched(cls=OTHER, prio=0, alloc=0, npids=3, ls=True, ipc=1.0, lock=False):
    return AppSched(cls, prio, alloc, tuple(range(alloc)), tuple(range(100, 100 + npids)), npids // 3,
                    lock, ls, ipc)


def snap(t, counters, scheds):
    return HostSnapshot(t, 6, counters, scheds, {k: 0 for k in counters})


def test_fairness_examples():
    assert fairness([0.7, 0.7, 0.7]) == 1.0
    assert fairness([0.5, 1.0]) == 0.5
    assert fairness([0.9, 0.6, 0.75]) == pytest.approx(0.6 / 0.9)
    for bad in ([], [0.5, 0.0], [-1.0]):
        with pytest.raises(InvalidParameter):
            fairness(bad)


@given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=20), st.floats(0.01, 100.0))
def test_fairness_scale_invariant_and_bounded(xs, k):
    f = fairness(xs)
    assert 0 < f <= 1
    assert fairness([k * x for x in xs]) == pytest.approx(f)
    assert (f == 1.0) == (min(xs) == max(xs))


def test_lock_detection():
    cat = catalog_by_id()
    assert detect_lock_usage(cat["OD"])
    assert not detect_lock_usage(cat["MR"])
    mine = FunctionSpec("U", Category.LS, 0.1, 1.0, uses_futex_lock=True)
    cache = {}
    assert detect_lock_usage(mine, cache) and cache == {"U": True}


def test_collect_window_deltas():
    a = snap(0.0, {"X": AppCounters(cpu_wait_time=1.0, nvcs=4, itlb_misses=100, blocked_time=0.5)}, {"X": sched()})
    b = snap(5.0, {"X": AppCounters(cpu_wait_time=1.5, nvcs=9, itlb_misses=400, blocked_time=0.75)}, {"X": sched()})
    assert collect_window(a, b, "X").tolist() == [0.75, 5, 300]
    with pytest.raises(InvalidParameter):
        collect_window(a, b, "nope")
    with pytest.raises(InvalidParameter):
        collect_window(b, a, "X")


def test_nvcs_from_hand_trace():
    # B runs, A (RR) preempts it twice: exactly two preemptions for B
    cfg = HostConfig(num_cores=1, autoscale=False, window=10.0).without_interference()
    h = HostModel(cfg)
    for i in "AB":
        h.add_app(FunctionSpec(i, Category.LS, 1.0, 0.1), sandboxes=1)
    h.apply_sched_policy("A", 50, REVOKE)
    res = h.run_traces({"B": [(0.0, 3.0)], "A": [(0.5, 0.1), (1.5, 0.1)]}, 10.0)
    assert collect_window(res.windows[0], res.windows[1], "B")[1] == 2
    assert collect_window(res.windows[0], res.windows[1], "A")[1] == 0


def test_assemble_counts_other_rr_processes():
    c = {k: AppCounters() for k in "MNO"}
    scheds = {"M": sched(RR, 50), "N": sched(RR, 40), "O": sched(RR, 90)}
    a, b = snap(0.0, c, scheds), snap(5.0, c, scheds)
    s = assemble_state(a, b, "M")
    assert (s.p_id, s.p_low, s.p_high) == (50, 3, 3)
    scheds["M"] = sched()
    s = assemble_state(a, snap(5.0, c, scheds), "M")
    assert (s.p_id, s.p_low, s.p_high) == (0, 0, 6)


def test_assemble_single_app_and_a_other():
    c = {"M": AppCounters()}
    s = assemble_state(snap(0, c, {"M": sched()}), snap(5, c, {"M": sched()}), "M")
    assert (s.p_low, s.p_high, s.a_other) == (0, 0, 0)
    c = {k: AppCounters() for k in "MNL"}
    sc = {"M": sched(RR, 10, 1), "N": sched(RR, 20, 2), "L": sched(ls=False)}
    s = assemble_state(snap(0, c, sc), snap(5, c, sc), "M")
    assert s.a_other == 2 and s.a_id == 1


def test_window_fairness_uses_ipc_ratio():
    a = snap(0, {"P": AppCounters(), "Q": AppCounters()}, {"P": sched(ipc=2.0), "Q": sched(ipc=1.0)})
    b = snap(5, {"P": AppCounters(instructions=200, cycles=100), "Q": AppCounters(instructions=50, cycles=100)},
             {"P": sched(ipc=2.0), "Q": sched(ipc=1.0)})
    assert window_fairness(a, b) == pytest.approx(0.5)
    assert window_fairness(a, a.__class__(5, 6, a.counters, a.sched, {})) == 1.0


def test_assemble_is_pure():
    cfg = HostConfig(seed=2)
    cat = catalog_by_id()
    h = HostModel(cfg, [cat["EG"], cat["IR"]])
    s0 = h.snapshot()
    h.run_traces({"EG": [(0.1, 0.2)], "IR": [(0.2, 0.01)]}, 10.0)
    s1 = h.snapshot()
    assert assemble_state(s0, s1, "EG") == assemble_state(s0, s1, "EG")
    st_ = assemble_state(s0, s1, "EG")
    assert 0 < st_.s_fair <= 1 and min(st_.s_cont) >= 0 and len(st_.f_pid) <= 7


def test_appstate_pid_cap():
    with pytest.raises(InvalidParameter):
        AppState("X", tuple(range(8)), 0, 0, False, (0, 0, 0), 1.0, 0, 0, 0)
