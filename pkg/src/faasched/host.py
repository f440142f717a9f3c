"""Discrete-event model of one serverless host.

Cores keep per-core run queues.  SCHED_RR tasks always beat SCHED_OTHER
tasks; RR tasks of equal priority rotate on a 100 ms slice, OTHER tasks share
a core by least virtual runtime on a 10 ms tick.  A woken task goes to an
idle core in its mask when there is one, and a core that runs dry pulls
waiting work from its neighbours, so no core idles while eligible work waits.

Each sandbox is three processes (worker, shim, auxiliary).  Only worker
threads consume request demand; the other two wake briefly at request start
and finish.  Per-core kernel threads model housekeeping and network softirq
work.  Cross-application context switches flush the incoming task's iTLB and
charge a miss penalty that lengthens its execution.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

import numpy as np

from .workload import FunctionSpec, InvalidParameter, RequestStream, generate_trace, required_servers

OTHER, RR = 0, 1
SLEEPING, RUNNABLE, RUNNING, BLOCKED = 0, 1, 2, 3
WORKER, SHIM, AUX, KTHREAD = "worker", "shim", "auxiliary", "kthread"

P_MIN, P_MAX = 1, 99
_EPS = 1e-12


class Fallback(Enum):
    REVOKE = "revoke"


REVOKE = Fallback.REVOKE


@dataclass
class HostConfig:
    num_cores: int = 6
    window: float = 5.0
    tick: float = 0.010
    rr_slice: float = 0.100
    sched_latency: float = 0.006
    wakeup_granularity: float = 0.001
    # iTLB model
    itlb: bool = True
    k_miss: float = 4.0
    penalty_cycles: float = 40.0
    clock_hz: float = 3.8e9
    # futex model
    futex: bool = True
    lock_fraction: float = 0.3
    # shim / auxiliary wakeups per request start and finish
    aux_noise: bool = True
    aux_burst: float = 1e-4
    # per-core kernel threads
    kthreads: bool = True
    kthread_period: float = 0.1
    kthread_burst: float = 2e-4
    net_burst: float = 5e-5
    # sandbox pool
    autoscale: bool = True
    rho_target: float = 0.9
    autoscale_window: float = 60.0
    cold_start: float = 0.5
    max_procs_per_app: int = 7
    initial_sandboxes: dict[str, int] | None = None
    seed: int = 0
    check_invariants: bool = False

    def without_interference(self) -> "HostConfig":
        from dataclasses import replace
        return replace(self, itlb=False, futex=False, aux_noise=False, kthreads=False)


@dataclass
class RequestRecord:
    app: str
    arrival: float
    start_exec: float
    completion: float
    cold_start: bool = False

    @property
    def execution_latency(self) -> float:
        return self.completion - self.start_exec

    @property
    def response_latency(self) -> float:
        return self.completion - self.arrival


@dataclass
class Enforcement:
    time: float
    app: str
    priority: int | Fallback
    alloc: int | Fallback
    accepted: bool
    reason: str = ""
    cores: tuple[int, ...] = ()


COUNTER_FIELDS = ("cpu_wait_time", "run_time", "blocked_time", "sleep_time", "nvcs", "vcs",
                  "itlb_flushes", "itlb_misses", "instructions", "cycles")


class Task:
    """One schedulable thread.  Counters are cumulative over the task's life."""

    __slots__ = (
        "tid", "pid", "app", "role", "sandbox", "core", "queued_on", "state", "since",
        "cpu_wait_time", "run_time", "blocked_time", "sleep_time", "nvcs", "vcs",
        "itlb_flushes", "itlb_misses", "work_done", "penalty_done",
        "remaining", "penalty", "vruntime", "vr_base", "rr_left", "pinned_core",
        "ipc", "footprint",
    )

    def __init__(self, tid, pid, app, role, sandbox, now, ipc=1.0, footprint=0, pinned_core=None):
        self.tid = tid
        self.pid = pid
        self.app = app
        self.role = role
        self.sandbox = sandbox
        self.core = None  # last core this task ran on
        self.queued_on = None
        self.state = SLEEPING
        self.since = now
        self.cpu_wait_time = 0.0
        self.run_time = 0.0
        self.blocked_time = 0.0
        self.sleep_time = 0.0
        self.nvcs = 0
        self.vcs = 0
        self.itlb_flushes = 0
        self.itlb_misses = 0.0
        self.work_done = 0.0
        self.penalty_done = 0.0
        self.remaining = 0.0
        self.penalty = 0.0
        self.vruntime = 0.0
        self.vr_base = 0.0
        self.rr_left = 0.0
        self.pinned_core = pinned_core
        self.ipc = ipc
        self.footprint = footprint


class Core:
    __slots__ = ("idx", "current", "queue", "run_start", "epoch", "last_app", "min_vr")

    def __init__(self, idx):
        self.idx = idx
        self.current: Task | None = None
        self.queue: list[Task] = []
        self.run_start = 0.0
        self.epoch = 0
        self.last_app = None
        self.min_vr = 0.0


class Sandbox:
    __slots__ = ("idx", "app", "pids", "threads", "shim", "aux", "ready", "retiring",
                 "request", "phases", "locked_phase", "outstanding")

    def __init__(self, idx, app):
        self.idx = idx
        self.app = app
        self.pids: tuple[int, int, int] = (0, 0, 0)
        self.threads: list[Task] = []
        self.shim: Task | None = None
        self.aux: Task | None = None
        self.ready = False
        self.retiring = False
        self.request = None
        self.phases: list[tuple[bool, float]] = []
        self.locked_phase = False
        self.outstanding = 0

    def tasks(self):
        yield from self.threads
        yield self.shim
        yield self.aux


class _Pending:
    __slots__ = ("arrival", "demand", "cold", "start")

    def __init__(self, arrival, demand):
        self.arrival = arrival
        self.demand = demand
        self.cold = False
        self.start = None


class AppRuntime:
    def __init__(self, spec: FunctionSpec):
        self.spec = spec
        self.queue: deque[_Pending] = deque()
        self.sandboxes: list[Sandbox] = []
        self.next_sandbox = 0
        self.sched_class = OTHER
        self.priority = 0
        self.dedicated: tuple[int, ...] = ()
        self.pinned: tuple[int, ...] | None = None
        self.lock_holder: Sandbox | None = None
        self.lock_waiters: deque[Sandbox] = deque()
        self.retired = dict.fromkeys(COUNTER_FIELDS, 0.0)
        self.window_arrivals: list[int] = []
        self.arrivals_this_window = 0

    @property
    def alloc(self) -> int:
        return len(self.dedicated)

    @property
    def live_sandboxes(self) -> list[Sandbox]:
        return [s for s in self.sandboxes if not s.retiring]


@dataclass
class AppCounters:
    cpu_wait_time: float = 0.0
    run_time: float = 0.0
    blocked_time: float = 0.0
    sleep_time: float = 0.0
    nvcs: float = 0.0
    vcs: float = 0.0
    itlb_flushes: float = 0.0
    itlb_misses: float = 0.0
    instructions: float = 0.0
    cycles: float = 0.0


@dataclass
class AppSched:
    sched_class: int
    priority: int
    alloc: int
    cores: tuple[int, ...]
    pids: tuple[int, ...]
    sandboxes: int
    uses_futex_lock: bool
    is_ls: bool
    isolated_ipc: float


@dataclass
class HostSnapshot:
    time: float
    num_cores: int
    counters: dict[str, AppCounters]
    sched: dict[str, AppSched]
    arrivals: dict[str, int]


@dataclass
class SimResult:
    records: list[RequestRecord]
    windows: list[HostSnapshot]
    enforcements: list[Enforcement]
    violations: list[str]
    host: "HostModel"


# event kinds, ordered so that simultaneous events resolve deterministically
_EV_DONE, _EV_SLICE, _EV_READY, _EV_KTHREAD, _EV_ARRIVAL, _EV_WINDOW = range(6)


class HostModel:
    def __init__(self, config: HostConfig, specs: Iterable[FunctionSpec] = (),
                 trace: Callable[[str], None] | None = None):
        if config.num_cores < 1:
            raise InvalidParameter("num_cores must be >= 1")
        self.cfg = config
        self.now = 0.0
        self.cores = [Core(i) for i in range(config.num_cores)]
        self.all_cores = tuple(range(config.num_cores))
        self.apps: dict[str, AppRuntime] = {}
        self.tasks: dict[int, Task] = {}
        self._next_tid = 1
        self._next_pid = 1
        self._events: list = []
        self._seq = 0
        self._queued = 0
        self._queued_rr = 0
        self.default_mask = self.all_cores
        self.records: list[RequestRecord] = []
        self.enforcements: list[Enforcement] = []
        self.violations: list[str] = []
        self.trace = trace
        self._net_rr = 0
        self._rng = np.random.Generator(np.random.Philox(key=[config.seed & (2**64 - 1), 7]))
        self.kthreads: list[Task] = []
        if config.kthreads:
            for c in self.cores:
                kt = Task(self._tid(), self._pid(), None, KTHREAD, None, 0.0, pinned_core=c.idx)
                self.tasks[kt.tid] = kt
                self.kthreads.append(kt)
        for spec in specs:
            self.add_app(spec)

    # ------------------------------------------------------------------ setup
    def _tid(self):
        t = self._next_tid
        self._next_tid += 1
        return t

    def _pid(self):
        p = self._next_pid
        self._next_pid += 1
        return p

    def add_app(self, spec: FunctionSpec, sandboxes: int | None = None):
        if spec.id in self.apps:
            raise InvalidParameter(f"duplicate app {spec.id}")
        app = AppRuntime(spec)
        self.apps[spec.id] = app
        if sandboxes is None and self.cfg.initial_sandboxes:
            sandboxes = self.cfg.initial_sandboxes.get(spec.id)
        if sandboxes is None:
            sandboxes = min(required_servers(spec.arrival_rate, spec.mean_service_time, self.cfg.rho_target),
                            self.sandbox_cap)
        for _ in range(sandboxes):
            sb = self._new_sandbox(app)
            sb.ready = True

    @property
    def sandbox_cap(self) -> int:
        return max(1, self.cfg.max_procs_per_app // 3)

    def _new_sandbox(self, app: AppRuntime) -> Sandbox:
        spec = app.spec
        sb = Sandbox(app.next_sandbox, spec.id)
        app.next_sandbox += 1
        wpid, spid, apid = self._pid(), self._pid(), self._pid()
        sb.pids = (wpid, spid, apid)
        for _ in range(spec.threads):
            sb.threads.append(Task(self._tid(), wpid, spec.id, WORKER, sb, self.now,
                                   spec.isolated_ipc, spec.code_footprint))
        sb.shim = Task(self._tid(), spid, spec.id, SHIM, sb, self.now, spec.isolated_ipc, spec.code_footprint)
        sb.aux = Task(self._tid(), apid, spec.id, AUX, sb, self.now, spec.isolated_ipc, spec.code_footprint)
        for t in sb.tasks():
            self.tasks[t.tid] = t
        app.sandboxes.append(sb)
        return sb

    # ------------------------------------------------------------- accounting
    def _set_state(self, t: Task, state: int):
        dt = self.now - t.since
        s = t.state
        if s == RUNNABLE:
            t.cpu_wait_time += dt
        elif s == RUNNING:
            t.run_time += dt
        elif s == BLOCKED:
            t.blocked_time += dt
        else:
            t.sleep_time += dt
        t.state = state
        t.since = self.now

    def _account(self, core: Core):
        t = core.current
        if t is None:
            return
        dt = self.now - core.run_start
        core.run_start = self.now
        if dt <= 0:
            return
        p = dt if dt < t.penalty else t.penalty
        t.penalty -= p
        t.penalty_done += p
        w = dt - p
        t.remaining -= w
        t.work_done += w
        t.vruntime += dt
        t.rr_left -= dt
        self._update_min_vr(core)

    def _negligible(self, dt: float) -> bool:
        """True when `dt` is too small to move the clock."""
        return dt <= _EPS or self.now + dt <= self.now

    def _emit(self, kind, core, t, detail=""):
        if self.trace is not None:
            self.trace(f"{self.now!r},{kind},{'' if core is None else core},"
                       f"{'' if t is None else t.pid},{'' if t is None or t.app is None else t.app},{detail}")

    def _push(self, time, kind, a=None, b=None):
        self._seq += 1
        heapq.heappush(self._events, (time, kind, self._seq, a, b))

    # ------------------------------------------------------------ scheduling
    def _mask(self, t: Task) -> tuple[int, ...]:
        if t.pinned_core is not None:
            return (t.pinned_core,)
        app = self.apps[t.app]
        if app.pinned is not None:
            return app.pinned
        return self.default_mask

    def _class(self, t: Task) -> tuple[int, int]:
        if t.app is None:
            return OTHER, 0
        app = self.apps[t.app]
        return app.sched_class, app.priority

    def _rank(self, t: Task) -> int:
        """0 for OTHER, the RT priority for RR."""
        if t.app is None:
            return 0
        app = self.apps[t.app]
        return app.priority if app.sched_class == RR else 0

    def _idle(self, core: Core) -> bool:
        return core.current is None and not core.queue

    def _update_min_vr(self, core: Core):
        cur = core.current
        m = cur.vruntime if cur is not None and cur.role != KTHREAD and self._rank(cur) == 0 else None
        for q in core.queue:
            if q.role != KTHREAD and self._rank(q) == 0 and (m is None or q.vruntime < m):
                m = q.vruntime
        if m is not None and m > core.min_vr:
            core.min_vr = m

    def _enqueue(self, core: Core, t: Task, front=False, wakeup=False):
        if t.core is not core.idx:
            # carry vruntime lag across cores
            base = self.cores[t.core].min_vr if t.core is not None else core.min_vr
            t.vruntime = t.vruntime - base + core.min_vr
        if wakeup:
            floor = core.min_vr - self.cfg.sched_latency / 2
            if t.vruntime < floor:
                t.vruntime = floor
        t.core = core.idx
        t.queued_on = core.idx
        if front:
            core.queue.insert(0, t)
        else:
            core.queue.append(t)
        self._queued += 1
        if self._rank(t) > 0:
            self._queued_rr += 1

    def _dequeue(self, t: Task):
        core = self.cores[t.queued_on]
        core.queue.remove(t)
        t.queued_on = None
        self._queued -= 1
        if self._rank(t) > 0:
            self._queued_rr -= 1

    def _wake(self, t: Task):
        """Make a sleeping/blocked task runnable and place it."""
        self._set_state(t, RUNNABLE)
        self._place(t, wakeup=True)

    def _place(self, t: Task, wakeup: bool):
        mask = self._mask(t)
        cores = self.cores
        last = t.core
        if last is not None and last in mask and self._idle(cores[last]):
            target = cores[last]
            self._enqueue(target, t, wakeup=wakeup)
            self._switch_in(target)
            return
        for i in mask:
            if self._idle(cores[i]):
                target = cores[i]
                self._enqueue(target, t, wakeup=wakeup)
                self._switch_in(target)
                return
        rank = self._rank(t)
        if rank > 0:
            best = None
            best_rank = None
            for i in mask:
                c = cores[i]
                cr = self._rank(c.current) if c.current is not None else -1
                if best is None or cr < best_rank or (cr == best_rank and len(c.queue) < len(best.queue)):
                    best, best_rank = c, cr
            self._enqueue(best, t, front=not wakeup, wakeup=wakeup)
            if best.current is None:
                self._switch_in(best)
            elif best_rank < rank:
                self._preempt(best, requeue_local=self._rank(best.current) == 0)
                self._switch_in(best)
            else:
                self._arm(best)
            return
        best = None
        best_load = None
        for i in mask:
            c = cores[i]
            load = len(c.queue) + (c.current is not None)
            if best is None or load < best_load or (load == best_load and i == last):
                best, best_load = c, load
        self._enqueue(best, t, wakeup=wakeup)
        cur = best.current
        if cur is None:
            self._switch_in(best)
            return
        if wakeup and self._rank(cur) == 0:
            self._account(best)
            if t.vruntime + self.cfg.wakeup_granularity < cur.vruntime:
                self._preempt(best, requeue_local=True)
                self._switch_in(best)
                return
        self._arm(best)

    def _preempt(self, core: Core, requeue_local: bool):
        """Kick the running task off `core` (non-voluntary switch)."""
        t = core.current
        self._account(core)
        core.current = None
        core.epoch += 1
        t.nvcs += 1
        self._set_state(t, RUNNABLE)
        self._emit("preempt", core.idx, t)
        mask = self._mask(t)
        if requeue_local and core.idx in mask and not any(self._idle(self.cores[i]) for i in mask):
            self._enqueue(core, t, front=self._rank(t) > 0)
        else:
            self._place(t, wakeup=False)

    def _pick_local(self, core: Core) -> Task | None:
        best = None
        best_rank = -1
        for q in core.queue:
            r = self._rank(q)
            if r > best_rank:
                best, best_rank = q, r
            elif r == 0 and best_rank == 0 and q.vruntime < best.vruntime:
                best = q
        return best

    def schedule_next(self, core_idx: int) -> Task | None:
        """Choose what `core_idx` should run next; None means idle."""
        core = self.cores[core_idx]
        best = self._pick_local(core)
        best_rank = self._rank(best) if best is not None else -1
        if self._queued_rr > len([q for q in core.queue if self._rank(q) > 0]):
            for c in self.cores:
                if c is core:
                    continue
                for q in c.queue:
                    r = self._rank(q)
                    if r > best_rank and core_idx in self._mask(q):
                        best, best_rank = q, r
        if best is None and self._queued > 0:
            for c in self.cores:
                if c is core:
                    continue
                for q in c.queue:
                    if core_idx in self._mask(q) and (best is None or q.since < best.since):
                        best = q
        return best

    def _switch_in(self, core: Core):
        """Run the best candidate on an empty core."""
        t = self.schedule_next(core.idx)
        if t is None:
            core.epoch += 1
            return
        if t.queued_on != core.idx:
            self._dequeue(t)
            self._enqueue(core, t)
        self._dequeue(t)
        self._run(core, t)

    def _run(self, core: Core, t: Task):
        self.account_context_switch(core, t)
        self._set_state(t, RUNNING)
        t.core = core.idx
        core.current = t
        core.run_start = self.now
        if self._negligible(t.rr_left):
            t.rr_left = self.cfg.rr_slice
        self._emit("run", core.idx, t)
        self._arm(core)

    def account_context_switch(self, core: Core, incoming: Task):
        if incoming.role == KTHREAD:
            return  # kernel threads borrow the previous address space
        if core.last_app is not None and incoming.app != core.last_app and self.cfg.itlb:
            misses = self.cfg.k_miss * incoming.footprint
            incoming.itlb_flushes += 1
            incoming.itlb_misses += misses
            incoming.penalty += misses * self.cfg.penalty_cycles / self.cfg.clock_hz
            self._emit("itlb_flush", core.idx, incoming, f"misses={misses:g}")
        core.last_app = incoming.app

    def _arm(self, core: Core):
        """(Re)schedule completion and slice/tick events for the running task."""
        t = core.current
        if t is None:
            return
        self._account(core)
        core.epoch += 1
        done_at = self.now + t.penalty + max(t.remaining, 0.0)
        self._push(done_at, _EV_DONE, core.idx, core.epoch)
        rank = self._rank(t)
        if rank > 0:
            if any(self._rank(q) == rank for q in core.queue):
                end = self.now + max(t.rr_left, 0.0)
                if end < done_at:
                    self._push(end, _EV_SLICE, core.idx, core.epoch)
        elif any(self._rank(q) == 0 for q in core.queue):
            end = self.now + self.cfg.tick
            if end < done_at:
                self._push(end, _EV_SLICE, core.idx, core.epoch)

    def _on_done(self, core: Core):
        t = core.current
        self._account(core)
        if not self._negligible(t.remaining + t.penalty):
            self._arm(core)  # work was added while running
            return
        t.remaining = 0.0
        t.penalty = 0.0
        core.current = None
        core.epoch += 1
        t.vcs += 1
        self._set_state(t, SLEEPING)
        self._emit("sleep", core.idx, t)
        self._burst_finished(t)
        if core.current is None:
            self._switch_in(core)

    def _on_slice(self, core: Core):
        t = core.current
        self._account(core)
        rank = self._rank(t)
        if rank > 0:
            if self._negligible(t.rr_left):
                t.rr_left = self.cfg.rr_slice
                if any(self._rank(q) == rank for q in core.queue):
                    core.current = None
                    core.epoch += 1
                    t.nvcs += 1
                    self._set_state(t, RUNNABLE)
                    self._enqueue(core, t)
                    self._switch_in(core)
                    return
        else:
            cand = self._pick_local(core)
            if cand is not None and self._rank(cand) == 0 and cand.vruntime < t.vruntime:
                self._preempt(core, requeue_local=True)
                self._switch_in(core)
                return
        self._arm(core)

    # --------------------------------------------------------- work sources
    def _add_work(self, t: Task, amount: float):
        t.remaining += amount
        if t.state == SLEEPING:
            self._wake(t)
        elif t.state == RUNNING:
            self._arm(self.cores[t.core])

    def _kernel_work(self, core_idx: int, amount: float):
        if self.kthreads:
            self._add_work(self.kthreads[core_idx], amount)

    def _housekeeping(self):
        # every core's kernel thread fires together, idle cores first, so a
        # displaced task finds no free core while the burst lasts
        for c in sorted(self.cores, key=lambda c: c.current is not None):
            self._kernel_work(c.idx, self.cfg.kthread_burst)

    def _net_softirq(self):
        if not self.kthreads:
            return
        c = self._net_rr % len(self.cores)
        self._net_rr += 1
        self._kernel_work(c, self.cfg.net_burst)

    def _burst_finished(self, t: Task):
        if t.role != WORKER:
            return
        sb = t.sandbox
        sb.outstanding -= 1
        if sb.outstanding == 0:
            self._phase_done(sb)

    # ------------------------------------------------------ request lifecycle
    def _arrival(self, app_id: str, req: _Pending):
        app = self.apps[app_id]
        app.arrivals_this_window += 1
        self._net_softirq()
        app.queue.append(req)
        self._try_dispatch(app)

    def _try_dispatch(self, app: AppRuntime):
        while app.queue:
            sb = next((s for s in app.sandboxes if s.ready and not s.retiring and s.request is None), None)
            if sb is None:
                return
            self._dispatch(app, sb, app.queue.popleft())

    def _dispatch(self, app: AppRuntime, sb: Sandbox, req: _Pending):
        sb.request = req
        req.start = self.now
        self._emit("dispatch", None, sb.threads[0], f"sandbox={sb.idx}")
        if self.cfg.aux_noise:
            self._add_work(sb.shim, self.cfg.aux_burst)
            self._add_work(sb.aux, self.cfg.aux_burst)
        d = req.demand
        if app.spec.uses_futex_lock and self.cfg.futex:
            f = self.cfg.lock_fraction
            sb.phases = [(True, f * d), (False, (1.0 - f) * d)]
        else:
            sb.phases = [(False, d)]
        self._next_phase(sb)

    def _next_phase(self, sb: Sandbox):
        while sb.phases:
            locked, work = sb.phases.pop(0)
            if work <= 0:
                continue
            sb.locked_phase = locked
            if locked and not self.futex_gate(sb):
                sb.phases.insert(0, (locked, work))
                return
            self._start_work(sb, work)
            return
        self._complete(sb)

    def futex_gate(self, sb: Sandbox) -> bool:
        """Acquire the per-app lock for `sb`, or block its worker and return False."""
        app = self.apps[sb.app]
        if app.lock_holder is None or app.lock_holder is sb:
            app.lock_holder = sb
            return True
        app.lock_waiters.append(sb)
        for t in sb.threads:
            t.vcs += 1
            self._set_state(t, BLOCKED)
            self._emit("futex_block", None, t)
        return False

    def _release_lock(self, sb: Sandbox):
        app = self.apps[sb.app]
        app.lock_holder = None
        if app.lock_waiters:
            nxt = app.lock_waiters.popleft()
            app.lock_holder = nxt
            locked, work = nxt.phases.pop(0)
            for t in nxt.threads:
                self._set_state(t, SLEEPING)
            self._start_work(nxt, work)

    def _start_work(self, sb: Sandbox, work: float):
        sb.outstanding = len(sb.threads)
        for t in sb.threads:
            self._add_work(t, work)

    def _phase_done(self, sb: Sandbox):
        if sb.locked_phase:
            sb.locked_phase = False
            self._release_lock(sb)
        self._next_phase(sb)

    def _complete(self, sb: Sandbox):
        app = self.apps[sb.app]
        req = sb.request
        sb.request = None
        rec = RequestRecord(sb.app, req.arrival, req.start, self.now, req.cold)
        self.records.append(rec)
        self._emit("complete", None, sb.threads[0], f"sandbox={sb.idx}")
        if self.cfg.aux_noise:
            self._add_work(sb.shim, self.cfg.aux_burst)
            self._add_work(sb.aux, self.cfg.aux_burst)
        self._net_softirq()
        if sb.retiring:
            self._retire(app, sb)
        self._try_dispatch(app)

    def _retire(self, app: AppRuntime, sb: Sandbox):
        if sb.request is not None:
            return
        busy = [t for t in sb.tasks() if t.state != SLEEPING]
        if busy:
            return  # finishes its noise bursts first; retried at the next window
        for t in sb.tasks():
            self._set_state(t, SLEEPING)
            for f in COUNTER_FIELDS:
                app.retired[f] += self._counter(t, f)
            del self.tasks[t.tid]
        app.sandboxes.remove(sb)

    # -------------------------------------------------------------- autoscale
    def autoscale(self, app_id: str) -> int:
        app = self.apps[app_id]
        spec = app.spec
        W = self.cfg.window
        m = max(1, int(round(self.cfg.autoscale_window / W)))
        recent = app.window_arrivals[-m:]
        lam = sum(recent) / (len(recent) * W) if recent else spec.arrival_rate
        target = min(required_servers(lam, spec.mean_service_time, self.cfg.rho_target), self.sandbox_cap)
        live = app.live_sandboxes
        if target > len(live):
            for _ in range(target - len(live)):
                sb = self._new_sandbox(app)
                self._push(self.now + self.cfg.cold_start, _EV_READY, app_id, sb)
        elif target < len(live):
            excess = len(live) - target
            order = sorted(live, key=lambda s: (s.ready, s.request is not None, -s.idx))
            for sb in order[:excess]:
                sb.retiring = True
                if not sb.ready:
                    for t in sb.tasks():
                        del self.tasks[t.tid]
                    app.sandboxes.remove(sb)
                else:
                    self._retire(app, sb)
        for sb in [s for s in app.sandboxes if s.retiring]:
            self._retire(app, sb)
        return len(app.live_sandboxes)

    def _sandbox_ready(self, app_id: str, sb: Sandbox):
        app = self.apps[app_id]
        if sb.retiring or sb not in app.sandboxes:
            return
        sb.ready = True
        if app.queue:
            app.queue[0].cold = True
        self._try_dispatch(app)

    # ------------------------------------------------------------ enforcement
    def _lowest_free_cores(self, app_id: str, n: int) -> tuple[int, ...] | None:
        taken = set()
        for other_id, other in self.apps.items():
            if other_id != app_id:
                taken.update(other.dedicated)
        free = [i for i in self.all_cores if i not in taken]
        if len(free) < n:
            return None
        return tuple(free[:n])

    def _refresh_default_mask(self):
        dedicated = set()
        for app in self.apps.values():
            dedicated.update(app.dedicated)
        mask = tuple(i for i in self.all_cores if i not in dedicated)
        self.default_mask = mask or self.all_cores

    def apply_sched_policy(self, app_id: str, priority, alloc) -> Enforcement:
        if app_id not in self.apps:
            raise InvalidParameter(f"unknown app {app_id!r}")
        app = self.apps[app_id]
        reason = ""
        cores: tuple[int, ...] = ()
        if priority is not REVOKE and not (P_MIN <= int(priority) <= P_MAX):
            reason = f"priority {priority} outside [{P_MIN},{P_MAX}]"
        elif alloc is not REVOKE and alloc < 0:
            reason = f"negative core allocation {alloc}"
        elif alloc is not REVOKE and alloc > 0:
            held = sum(a.alloc for k, a in self.apps.items() if k != app_id)
            if held + alloc > self.cfg.num_cores - 1:
                reason = f"dedicating {held + alloc} of {self.cfg.num_cores} cores leaves none for SCHED_OTHER"
            else:
                cores = self._lowest_free_cores(app_id, alloc)
                if cores is None:
                    reason = "not enough free cores"
        accepted = not reason
        if accepted:
            if priority is REVOKE:
                app.sched_class, app.priority = OTHER, 0
            else:
                app.sched_class, app.priority = RR, int(priority)
            app.dedicated = cores
            app.pinned = cores if cores else None
        else:
            app.sched_class, app.priority = OTHER, 0
            app.dedicated = ()
            app.pinned = None
            self.violations.append(f"{self.now!r}:{app_id}:{reason}")
        self._refresh_default_mask()
        self._reapply()
        enf = Enforcement(self.now, app_id, priority, alloc, accepted, reason, app.dedicated)
        self.enforcements.append(enf)
        self._emit("enforce", None, None, f"{app_id} prio={priority} alloc={alloc} ok={accepted}")
        return enf

    def set_affinity(self, app_id: str, cores: Iterable[int] | None):
        """Pin every process of an app to `cores` without dedicating them."""
        if app_id not in self.apps:
            raise InvalidParameter(f"unknown app {app_id!r}")
        app = self.apps[app_id]
        if cores is None:
            app.pinned = app.dedicated or None
        else:
            cores = tuple(sorted(set(cores)))
            if not cores or any(c < 0 or c >= self.cfg.num_cores for c in cores):
                raise InvalidParameter(f"bad core set {cores}")
            app.pinned = cores
        self._reapply()

    def _reapply(self):
        """Restore placement invariants after a class, priority or mask change."""
        # queue membership counts depend on rank, so recount from scratch
        displaced = []
        for core in self.cores:
            cur = core.current
            if cur is not None and core.idx not in self._mask(cur):
                self._account(core)
                core.current = None
                core.epoch += 1
                cur.nvcs += 1
                self._set_state(cur, RUNNABLE)
                displaced.append(cur)
            for q in core.queue:
                q.queued_on = None
                displaced.append(q)
            core.queue = []
        self._queued = 0
        self._queued_rr = 0
        for core in self.cores:
            if core.current is not None:
                self._arm(core)
        for t in displaced:
            self._place(t, wakeup=False)
        for core in self.cores:
            if core.current is None:
                self._switch_in(core)

    # -------------------------------------------------------------- snapshots
    def _counter(self, t: Task, name: str) -> float:
        if name == "instructions":
            return t.work_done * self.cfg.clock_hz * t.ipc
        if name == "cycles":
            return (t.work_done + t.penalty_done) * self.cfg.clock_hz
        v = getattr(t, name)
        if t.state == RUNNABLE and name == "cpu_wait_time":
            v += self.now - t.since
        elif t.state == RUNNING and name == "run_time":
            v += self.now - t.since
        elif t.state == BLOCKED and name == "blocked_time":
            v += self.now - t.since
        elif t.state == SLEEPING and name == "sleep_time":
            v += self.now - t.since
        return v

    def snapshot(self) -> HostSnapshot:
        for core in self.cores:
            if core.current is not None:
                self._account(core)
                self._arm(core)
        counters = {}
        sched = {}
        for app_id, app in self.apps.items():
            tot = dict(app.retired)
            pids = []
            for sb in app.sandboxes:
                if not sb.ready and not sb.request:
                    pass
                pids.extend(sb.pids)
                for t in sb.tasks():
                    for f in COUNTER_FIELDS:
                        tot[f] += self._counter(t, f)
            counters[app_id] = AppCounters(**tot)
            sched[app_id] = AppSched(app.sched_class, app.priority, app.alloc, app.dedicated,
                                     tuple(pids), len(app.live_sandboxes), app.spec.uses_futex_lock,
                                     app.spec.is_ls, app.spec.isolated_ipc)
        arrivals = {k: a.arrivals_this_window for k, a in self.apps.items()}
        return HostSnapshot(self.now, self.cfg.num_cores, counters, sched, arrivals)

    def process_counters(self, pid: int) -> dict[str, float]:
        """Counters of one live process, summed over its threads."""
        out = dict.fromkeys(COUNTER_FIELDS, 0.0)
        for t in self.tasks.values():
            if t.pid == pid:
                for f in COUNTER_FIELDS:
                    out[f] += self._counter(t, f)
        return out

    # ------------------------------------------------------------- invariants
    def check_invariants(self):
        errors = []
        for core in self.cores:
            cur = core.current
            if cur is not None:
                if core.idx not in self._mask(cur):
                    errors.append(f"task {cur.tid} runs on core {core.idx} outside its mask")
                if cur.state != RUNNING:
                    errors.append(f"task {cur.tid} on core {core.idx} not marked running")
        waiting = [q for c in self.cores for q in c.queue]
        for q in waiting:
            if q.state != RUNNABLE:
                errors.append(f"queued task {q.tid} in state {q.state}")
            for i in self._mask(q):
                c = self.cores[i]
                if c.current is None:
                    errors.append(f"core {i} idle while task {q.tid} waits")
                elif self._rank(q) > self._rank(c.current):
                    errors.append(f"RR task {q.tid} waits while lower class runs on core {i}")
        running = [c.current.tid for c in self.cores if c.current is not None]
        if len(running) != len(set(running)):
            errors.append("task running on two cores")
        return errors

    # ---------------------------------------------------------------- driver
    def run(self, streams: list[RequestStream], horizon: float, controller=None) -> SimResult:
        for s in streams:
            if s.spec.id not in self.apps:
                self.add_app(s.spec)
        return self.run_traces({s.spec.id: generate_trace(s) for s in streams}, horizon, controller)

    def run_traces(self, arrivals: dict[str, list[tuple[float, float]]], horizon: float,
                   controller=None) -> SimResult:
        """Replay explicit (arrival, demand) lists for apps already added to the host."""
        traces = {}
        for app_id, trace in arrivals.items():
            if app_id not in self.apps:
                raise InvalidParameter(f"unknown app {app_id!r}")
            traces[app_id] = iter(sorted(trace))
        for app_id, it in traces.items():
            nxt = next(it, None)
            if nxt is not None:
                self._push(nxt[0], _EV_ARRIVAL, app_id, _Pending(*nxt))
        if self.kthreads:
            self._push(self._rng.random() * self.cfg.kthread_period, _EV_KTHREAD)
        W = self.cfg.window
        windows = [self.snapshot()]
        if horizon > 0 and self.apps:
            self._push(W, _EV_WINDOW, 1)
        if controller is not None and hasattr(controller, "attach"):
            controller.attach(self)
        events = self._events
        check = self.cfg.check_invariants
        while events:
            time, kind, _, a, b = heapq.heappop(events)
            if time > horizon and kind in (_EV_ARRIVAL, _EV_WINDOW, _EV_KTHREAD):
                continue
            self.now = time
            if kind == _EV_DONE:
                core = self.cores[a]
                if core.epoch != b or core.current is None:
                    continue
                self._on_done(core)
            elif kind == _EV_SLICE:
                core = self.cores[a]
                if core.epoch != b or core.current is None:
                    continue
                self._on_slice(core)
            elif kind == _EV_ARRIVAL:
                self._arrival(a, b)
                nxt = next(traces[a], None)
                if nxt is not None:
                    self._push(nxt[0], _EV_ARRIVAL, a, _Pending(*nxt))
            elif kind == _EV_KTHREAD:
                self._housekeeping()
                gap = self.cfg.kthread_period * (0.5 + self._rng.random())
                self._push(time + gap, _EV_KTHREAD)
            elif kind == _EV_READY:
                self._sandbox_ready(a, b)
            elif kind == _EV_WINDOW:
                snap = self.snapshot()
                for app in self.apps.values():
                    app.window_arrivals.append(app.arrivals_this_window)
                    app.arrivals_this_window = 0
                windows.append(snap)
                if self.cfg.autoscale:
                    for app_id in self.apps:
                        self.autoscale(app_id)
                if controller is not None:
                    controller.on_window(self, windows[-2], snap)
                if time + W <= horizon + _EPS:
                    self._push(time + W, _EV_WINDOW, a + 1)
            if check:
                errs = self.check_invariants()
                if errs:
                    raise AssertionError(f"t={self.now}: " + "; ".join(errs))
        return SimResult(self.records, windows, self.enforcements, self.violations, self)


def run(config: HostConfig, streams: list[RequestStream], controller=None, horizon: float | None = None,
        trace: Callable[[str], None] | None = None) -> SimResult:
    """Simulate `streams` on a fresh host; requests admitted before the horizon drain to completion."""
    if horizon is None:
        horizon = max((s.horizon for s in streams), default=0.0)
    host = HostModel(config, [s.spec for s in streams], trace=trace)
    return host.run(streams, horizon, controller)
