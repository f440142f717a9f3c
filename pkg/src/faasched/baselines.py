"""Reference controllers: fixed priority schemes, static core partitions, and no-op."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .host import P_MAX, P_MIN, REVOKE
from .workload import InvalidParameter


class SchemeKind(str, Enum):
    RID = "rid"
    FP = "fp"
    SI = "si"
    SD = "sd"


@dataclass
class PriorityScheme:
    kind: SchemeKind
    step: int = 10
    fixed_value: int = 80

    def __post_init__(self):
        self.kind = SchemeKind(self.kind)


def _clamp(p: int) -> int:
    return min(P_MAX, max(P_MIN, p))


def next_priority(scheme: PriorityScheme, current: int, rng: np.random.Generator | None = None) -> int:
    k = scheme.kind
    if k is SchemeKind.FP:
        return scheme.fixed_value
    if k is SchemeKind.SI:
        return _clamp(current + scheme.step)
    if k is SchemeKind.SD:
        return _clamp(current - scheme.step)
    if rng is None:
        raise InvalidParameter("RID needs an rng")
    sign = 1 if rng.random() < 0.5 else -1
    return _clamp(current + sign * scheme.step)


def partition_cores(m: int, n: int, num_cores: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if m < 1 or n < 1 or m + n != num_cores:
        raise InvalidParameter(f"partition {m}:{n} does not cover {num_cores} cores")
    return tuple(range(m)), tuple(range(m, num_cores))


class LassController:
    """Leaves every process under the default policy; only autoscaling acts."""

    name = "lass"

    def attach(self, host):
        pass

    def on_window(self, host, prev, snap):
        pass


class SchemeController:
    """Applies a priority scheme to every LS app once per window, without dedicated cores."""

    def __init__(self, scheme: PriorityScheme, seed: int = 0):
        self.scheme = scheme
        self.name = scheme.kind.value
        self.rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), 11]))

    def attach(self, host):
        pass

    def on_window(self, host, prev, snap):
        for app_id, app in host.apps.items():
            if not app.spec.is_ls:
                continue
            p = next_priority(self.scheme, app.priority, self.rng)
            host.apply_sched_policy(app_id, p, REVOKE)


class PartitionController:
    """Static m:n split, LS apps on the low cores."""

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n
        self.name = f"partition({m},{n})"

    def attach(self, host):
        ls, ld = partition_cores(self.m, self.n, host.cfg.num_cores)
        for app_id, app in host.apps.items():
            host.set_affinity(app_id, ls if app.spec.is_ls else ld)

    def on_window(self, host, prev, snap):
        pass
