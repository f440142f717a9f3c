"""Advantage actor-critic scheduling agent.

The actor and critic are small tanh MLPs trained online with one-step TD
errors; the backward pass is written out by hand since the nets are tiny.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .host import P_MAX, P_MIN, REVOKE
from .monitor import AppState, assemble_state, window_fairness
from .workload import InvalidParameter

NEG_INF = float("-inf")
N_FEATURES = 10
MAX_PROCS = 7


@dataclass
class RewardConfig:
    a: float = 1000.0
    b: float = 100.0
    c: float = 1000.0
    tau: float = 0.75
    p_min: int = P_MIN
    p_max: int = P_MAX

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0 or not 0 < self.tau < 1 or self.p_min >= self.p_max:
            raise InvalidParameter("bad reward constants")


@dataclass
class AgentConfig:
    hidden: int = 64
    lr: float = 1e-4
    gamma: float = 0.99
    epsilon: float = 0.3
    p_step: int = 10
    a_step: int = 2
    seed: int = 0
    init_scale: float = 0.1
    reward: RewardConfig = field(default_factory=RewardConfig)


def action_table(p_step: int = 10, a_step: int = 2) -> list[tuple[float, float]]:
    dps = (NEG_INF, -p_step, 0, p_step)
    das = (NEG_INF, -a_step, 0, a_step)
    return [(dp, da) for dp in dps for da in das]


ACTIONS = action_table()
N_ACTIONS = len(ACTIONS)


# ---------------------------------------------------------------- features

@dataclass
class CalibrationBounds:
    """Per-window contention ranges used for min-max scaling."""

    lo: tuple[float, float, float] = (0.0, 0.0, 0.0)
    hi: tuple[float, float, float] = (1.0, 50.0, 1e5)

    def __post_init__(self):
        if any(not h > l for l, h in zip(self.lo, self.hi)):
            raise InvalidParameter("calibration bounds need lo < hi for every feature")

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(x) for x in d["lo"]), tuple(float(x) for x in d["hi"]))


def scale_contention(s_cont, bounds: CalibrationBounds) -> np.ndarray:
    v = np.asarray(s_cont, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidParameter("non-finite contention vector")
    lo = np.asarray(bounds.lo)
    hi = np.asarray(bounds.hi)
    return 10.0 * (np.clip(v, lo, hi) - lo) / (hi - lo)


def contention_magnitude(s_cont, bounds: CalibrationBounds) -> float:
    """Length of the scaled contention vector, mapped into [0, 1]."""
    return float(np.linalg.norm(scale_contention(s_cont, bounds)) / (10.0 * math.sqrt(3.0)))


def preprocess(state: AppState, bounds: CalibrationBounds, num_cores: int, num_apps: int) -> np.ndarray:
    scaled = scale_contention(state.s_cont, bounds)
    n = np.linalg.norm(scaled)
    cont = scaled / n if n > 0 else np.zeros(3)
    scalars = [state.s_fair, state.p_id, state.a_id, state.p_low, state.p_high, state.a_other]
    if not all(math.isfinite(x) for x in scalars):
        raise InvalidParameter("non-finite state field")
    core_span = max(num_cores - 1, 1)
    proc_span = MAX_PROCS * max(num_apps - 1, 1)
    rest = np.array([
        state.s_fair,
        1.0 if state.f_lock else 0.0,
        state.p_id / P_MAX,
        state.a_id / core_span,
        state.p_low / proc_span,
        state.p_high / proc_span,
        state.a_other / core_span,
    ])
    return np.concatenate([cont, np.clip(rest, 0.0, 1.0)])


# ------------------------------------------------------------------ reward

def reward(s_fair: float, r_cont: float, a_used: float | None, p_used: float | None, num_cores: int,
           cfg: RewardConfig = RewardConfig()) -> float:
    """Pass None for a_used / p_used when that half of the action is a reset."""
    if a_used is not None and a_used > num_cores:
        return -cfg.c
    if p_used is not None and (p_used > cfg.p_max or p_used < cfg.p_min):
        return -cfg.c
    r_fair = s_fair if s_fair > cfg.tau else 0.0
    return cfg.a * r_fair - cfg.b * r_cont


def td_error(r: float, v_s: float, v_next: float, gamma: float) -> float:
    return r + gamma * v_next - v_s


def exploration_ratio(t: float, total: float) -> float:
    """Probability that a decision step explores: 5/6 at t=0 falling to 1/101."""
    if total <= 0:
        raise InvalidParameter("total duration must be positive")
    start, end = 5.0 / 6.0, 1.0 / 101.0
    frac = min(max(t / total, 0.0), 1.0)
    return start + (end - start) * frac


def mask_actions(state: AppState) -> np.ndarray:
    """Lock users may only reset the core allocation."""
    if state.f_lock:
        return np.array([da == NEG_INF for _, da in ACTIONS])
    return np.ones(N_ACTIONS, dtype=bool)


def select_action(probs: np.ndarray, mask: np.ndarray, mode: str, epsilon: float,
                  rng: np.random.Generator) -> int:
    p = np.where(mask, probs, 0.0)
    total = p.sum()
    if not mask.any():
        raise RuntimeError("every action is masked")
    if total > 0:
        p = p / total
    else:
        p = mask / mask.sum()
    if mode == "explore" and rng.random() < epsilon:
        allowed = np.flatnonzero(mask)
        return int(allowed[rng.integers(allowed.size)])
    if mode not in ("explore", "exploit"):
        raise InvalidParameter(f"unknown mode {mode!r}")
    p = np.where(mask, p, -1.0)
    return int(np.argmax(p))


# -------------------------------------------------------------------- nets

class MLP:
    """tanh hidden layers, linear output."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, scale: float = 0.1):
        self.sizes = list(sizes)
        self.params: list[np.ndarray] = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = scale * math.sqrt(6.0 / (n_in + n_out))
            self.params.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            self.params.append(np.zeros(n_out))

    def forward(self, x: np.ndarray):
        acts = [x]
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = np.tanh(z) if i < n_layers - 1 else z
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        grads = [None] * len(self.params)
        g = grad_out
        n_layers = len(self.params) // 2
        for i in reversed(range(n_layers)):
            if i < n_layers - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = np.outer(acts[i], g)
            grads[2 * i + 1] = g.copy()
            g = self.params[2 * i] @ g
        return grads


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


class A2CAgent:
    def __init__(self, cfg: AgentConfig = None, n_features: int = N_FEATURES):
        self.cfg = cfg or AgentConfig()
        rng = np.random.Generator(np.random.Philox(key=[self.cfg.seed & (2**64 - 1), 3]))
        h = self.cfg.hidden
        self.actor = MLP([n_features, h, h, N_ACTIONS], rng, self.cfg.init_scale)
        self.critic = MLP([n_features, h, h, 1], rng, self.cfg.init_scale)
        self.steps = 0
        self.skipped_updates = 0

    def policy(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.actor.forward(x)[0])

    def value(self, x: np.ndarray) -> float:
        return float(self.critic.forward(x)[0][0])

    def critic_loss_grad(self, x: np.ndarray, target: float):
        """Loss 0.5*(V(x)-target)^2 and its gradient w.r.t. critic params."""
        v, acts = self.critic.forward(x)
        err = v[0] - target
        return 0.5 * err * err, self.critic.backward(acts, np.array([err]))

    def update(self, x, action: int, r: float, x_next, terminal: bool = False) -> float:
        cfg = self.cfg
        v_next = 0.0 if terminal else self.value(x_next)
        v, c_acts = self.critic.forward(x)
        delta = td_error(r, float(v[0]), v_next, cfg.gamma)
        logits, a_acts = self.actor.forward(x)
        p = softmax(logits)
        g_logp = -p
        g_logp[action] += 1.0  # d log pi(a) / d logits
        c_grads = self.critic.backward(c_acts, np.array([1.0]))
        a_grads = self.actor.backward(a_acts, g_logp)
        if not (math.isfinite(delta) and all(np.all(np.isfinite(g)) for g in c_grads + a_grads)):
            self.skipped_updates += 1
            return float("nan")
        step = cfg.lr * delta
        for prm, g in zip(self.critic.params, c_grads):
            prm += step * g
        for prm, g in zip(self.actor.params, a_grads):
            prm += step * g
        self.steps += 1
        return delta

    # checkpoints hold every weight plus enough header to rebuild the nets
    def save(self, path: str | Path) -> None:
        arrays = {f"actor_{i}": p for i, p in enumerate(self.actor.params)}
        arrays.update({f"critic_{i}": p for i, p in enumerate(self.critic.params)})
        with open(path, "wb") as f:
            np.savez(f, actor_dims=np.array(self.actor.sizes), critic_dims=np.array(self.critic.sizes),
                     seed=np.array(self.cfg.seed), steps=np.array(self.steps),
                     skipped=np.array(self.skipped_updates), **arrays)

    @classmethod
    def load(cls, path: str | Path, cfg: AgentConfig | None = None) -> "A2CAgent":
        with np.load(path) as z:
            dims = [int(d) for d in z["actor_dims"]]
            cfg = cfg or AgentConfig()
            cfg = AgentConfig(**{**asdict(cfg), "hidden": dims[1], "seed": int(z["seed"]),
                                 "reward": cfg.reward})
            agent = cls(cfg, n_features=dims[0])
            if [int(d) for d in z["critic_dims"]] != agent.critic.sizes or dims != agent.actor.sizes:
                raise InvalidParameter("checkpoint layer sizes do not match")
            agent.actor.params = [z[f"actor_{i}"].copy() for i in range(len(agent.actor.params))]
            agent.critic.params = [z[f"critic_{i}"].copy() for i in range(len(agent.critic.params))]
            agent.steps = int(z["steps"])
            agent.skipped_updates = int(z["skipped"])
        return agent


# -------------------------------------------------------------- controller

@dataclass
class Decision:
    time: float
    app: str
    action: int
    d_priority: float
    d_alloc: float
    priority: object
    alloc: object
    mode: str
    penalized: bool
    reward: float = float("nan")
    delta: float = float("nan")


def attempted_usage(state: AppState, action: int, actions=ACTIONS):
    """(priority, alloc, a_used, p_used) implied by a shift, before any range check.

    Resets use REVOKE and skip the corresponding usage (None).  Keeping the
    default class (p_id 0 with no priority shift) is not a priority request.
    """
    dp, da = actions[action]
    if dp == NEG_INF or (state.p_id == 0 and dp == 0):
        prio, p_used = REVOKE, None
    else:
        p_used = state.p_id + dp
        prio = int(p_used)
    if da == NEG_INF:
        alloc, a_used = REVOKE, None
    else:
        a_used = state.a_id + state.a_other + da
        alloc = max(0, int(state.a_id + da))
    return prio, alloc, a_used, p_used


def apply_action(host, state: AppState, action: int, num_cores: int,
                 cfg: RewardConfig = RewardConfig(), actions=ACTIONS):
    """Turn a shift into an absolute policy and enforce it.

    Returns (priority, alloc, a_used, p_used, penalized).  Out-of-range
    shifts, or policies the host refuses, reset the app to the default policy.
    """
    app = state.app
    prio, alloc, a_used, p_used = attempted_usage(state, action, actions)
    penalized = (a_used is not None and a_used > num_cores) or \
        (p_used is not None and not cfg.p_min <= p_used <= cfg.p_max)
    if penalized:
        host.apply_sched_policy(app, REVOKE, REVOKE)
        return REVOKE, REVOKE, a_used, p_used, True
    cur_prio = state.p_id if state.p_id else REVOKE
    norm_alloc = 0 if alloc is REVOKE else alloc
    if prio == cur_prio and norm_alloc == state.a_id:
        return prio, alloc, a_used, p_used, False
    res = host.apply_sched_policy(app, prio, alloc)
    return prio, alloc, a_used, p_used, not res.accepted


class FaaSchedController:
    """Decides a policy shift for every LS app at each window boundary."""

    name = "faasched"

    def __init__(self, agent: A2CAgent, bounds: CalibrationBounds, training: bool = True,
                 total_time: float = 18000.0, seed: int = 0):
        self.agent = agent
        self.bounds = bounds
        self.training = training
        self.total_time = total_time
        self.rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), 5]))
        self.decisions: list[Decision] = []
        self.states: list[AppState] = []
        self._pending: dict[str, tuple] = {}

    def attach(self, host):
        self._pending = {}

    def on_window(self, host, prev, snap):
        num_cores = host.cfg.num_cores
        num_apps = len(snap.sched)
        s_fair = window_fairness(prev, snap)
        rcfg = self.agent.cfg.reward
        for app_id, sch in snap.sched.items():
            if not sch.is_ls:
                continue
            state = assemble_state(prev, snap, app_id, s_fair)
            self.states.append(state)
            x = preprocess(state, self.bounds, num_cores, num_apps)
            pend = self._pending.pop(app_id, None)
            if pend is not None:
                x_prev, dec, a_used, p_used = pend
                if dec.penalized:
                    r = -rcfg.c
                else:
                    r = reward(state.s_fair, contention_magnitude(state.s_cont, self.bounds),
                               a_used, p_used, num_cores, rcfg)
                dec.reward = r
                if self.training and dec.mode == "explore":
                    dec.delta = self.agent.update(x_prev, dec.action, r, x)
            if self.training and self.rng.random() < exploration_ratio(host.now, self.total_time):
                mode = "explore"
            else:
                mode = "exploit"
            probs = self.agent.policy(x)
            a = select_action(probs, mask_actions(state), mode, self.agent.cfg.epsilon, self.rng)
            prio, alloc, a_used, p_used, pen = apply_action(host, state, a, num_cores, rcfg)
            dp, da = ACTIONS[a]
            dec = Decision(host.now, app_id, a, dp, da, prio, alloc, mode, pen)
            self.decisions.append(dec)
            self._pending[app_id] = (x, dec, a_used, p_used)
