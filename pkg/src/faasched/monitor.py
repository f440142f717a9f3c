"""Turns host counter snapshots into per-application observations."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .host import RR, HostSnapshot
from .workload import FunctionSpec, InvalidParameter

MAX_PIDS = 7


@dataclass
class AppState:
    app: str
    f_pid: tuple[int, ...]
    p_id: int
    a_id: int
    f_lock: bool
    s_cont: tuple[float, float, float]  # (cpu wait s, nvcs, itlb misses) in the window
    s_fair: float
    p_low: int
    p_high: int
    a_other: int
    time: float = 0.0

    def __post_init__(self):
        if len(self.f_pid) > MAX_PIDS:
            raise InvalidParameter(f"{self.app}: {len(self.f_pid)} pids exceed {MAX_PIDS}")

    def row(self) -> dict:
        d = asdict(self)
        d["f_pid"] = " ".join(map(str, self.f_pid))
        wait, nvcs, misses = self.s_cont
        del d["s_cont"]
        d.update(wait=wait, nvcs=nvcs, itlb_misses=misses)
        d["f_lock"] = int(self.f_lock)
        return d


STATE_COLUMNS = ["time", "app", "f_pid", "p_id", "a_id", "f_lock", "wait", "nvcs", "itlb_misses",
                 "s_fair", "p_low", "p_high", "a_other"]


def collect_window(start: HostSnapshot, end: HostSnapshot, app: str) -> np.ndarray:
    """Window deltas of (cpu wait, nvcs, iTLB misses) summed over an app's processes.

    Time spent blocked on the app's lock counts as waiting.
    """
    if end.time <= start.time:
        raise InvalidParameter("window must have positive length")
    if app not in end.counters:
        raise InvalidParameter(f"unknown app {app!r}")
    b = end.counters[app]
    a = start.counters.get(app)
    if a is None:
        wait0 = nvcs0 = miss0 = 0.0
    else:
        wait0 = a.cpu_wait_time + a.blocked_time
        nvcs0 = a.nvcs
        miss0 = a.itlb_misses
    v = np.array([b.cpu_wait_time + b.blocked_time - wait0, b.nvcs - nvcs0, b.itlb_misses - miss0])
    return np.maximum(v, 0.0)  # guards float noise; counters never decrease


def fairness(slowdowns) -> float:
    s = [float(x) for x in slowdowns]
    if not s:
        raise InvalidParameter("fairness needs at least one slowdown")
    if any(not x > 0 for x in s):
        raise InvalidParameter("slowdowns must be positive")
    return min(s) / max(s)


def window_slowdowns(start: HostSnapshot, end: HostSnapshot) -> dict[str, float]:
    """IPC_shared / IPC_alone per app for apps that ran during the window."""
    out = {}
    for app, b in end.counters.items():
        a = start.counters.get(app)
        cycles = b.cycles - (a.cycles if a else 0.0)
        instr = b.instructions - (a.instructions if a else 0.0)
        if cycles <= 0 or instr <= 0:
            continue
        ipc_alone = end.sched[app].isolated_ipc
        out[app] = (instr / cycles) / ipc_alone
    return out


def window_fairness(start: HostSnapshot, end: HostSnapshot) -> float:
    s = window_slowdowns(start, end)
    return fairness(s.values()) if s else 1.0


def detect_lock_usage(spec: FunctionSpec, cache: dict | None = None) -> bool:
    if cache is not None:
        return cache.setdefault(spec.id, spec.uses_futex_lock)
    return spec.uses_futex_lock


def assemble_state(start: HostSnapshot, end: HostSnapshot, app: str, s_fair: float | None = None) -> AppState:
    s_cont = collect_window(start, end, app)
    me = end.sched[app]
    p_id = me.priority if me.sched_class == RR else 0
    p_low = p_high = a_other = 0
    for other, sch in end.sched.items():
        if other == app:
            continue
        if sch.sched_class == RR:
            n = len(sch.pids)
            if sch.priority <= p_id:
                p_low += n
            else:
                p_high += n
        if sch.is_ls:
            a_other += sch.alloc
    if s_fair is None:
        s_fair = window_fairness(start, end)
    return AppState(app, tuple(me.pids[:MAX_PIDS]), p_id, me.alloc, me.uses_futex_lock,
                    tuple(float(x) for x in s_cont), s_fair, p_low, p_high, a_other, end.time)
