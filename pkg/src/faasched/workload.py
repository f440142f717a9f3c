"""Function specifications, Poisson request traces and queue-utilization math."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np


class InvalidParameter(ValueError):
    pass


class Category(str, Enum):
    LS = "LS"
    LD = "LD"


@dataclass(frozen=True)
class FunctionSpec:
    id: str
    category: Category
    mean_service_time: float  # seconds
    arrival_rate: float  # requests / second
    uses_futex_lock: bool = False
    isolated_ipc: float = 1.0
    code_footprint: int = 400  # abstract iTLB pages
    threads: int = 1  # parallel worker threads per request
    # (cpu wait s, nvcs, itlb misses) per window; filled in by calibration
    isolated_contention_baseline: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.mean_service_time <= 0 or self.arrival_rate <= 0:
            raise InvalidParameter(f"{self.id}: service time and arrival rate must be positive")
        if self.isolated_ipc <= 0:
            raise InvalidParameter(f"{self.id}: isolated_ipc must be positive")
        if self.threads < 1:
            raise InvalidParameter(f"{self.id}: threads must be >= 1")
        object.__setattr__(self, "category", Category(self.category))

    @property
    def is_ls(self) -> bool:
        return self.category is Category.LS

    @property
    def utilization(self) -> float:
        return self.arrival_rate * self.mean_service_time


@dataclass(frozen=True)
class RequestStream:
    spec: FunctionSpec
    rng_seed: int
    horizon: float


def queue_utilization(lam: float, mu: float, c: int) -> float:
    """rho = lambda * mu / c for an M/M/c queue."""
    if lam <= 0 or mu <= 0 or c < 1:
        raise InvalidParameter(f"need lambda > 0, mu > 0, c >= 1 (got {lam}, {mu}, {c})")
    return lam * mu / c


# absorbs float noise such as 300 * 0.003 / 0.9 == 1.0000000000000002
_CEIL_SLACK = 1e-9


def required_servers(lam: float, mu: float, rho_target: float) -> int:
    if rho_target <= 0 or rho_target > 1:
        raise InvalidParameter(f"rho_target must lie in (0, 1], got {rho_target}")
    if lam < 0 or mu <= 0:
        raise InvalidParameter("lambda must be >= 0 and mu > 0")
    return max(1, math.ceil(lam * mu / rho_target - _CEIL_SLACK))


def _stream_rng(seed: int, lane: int) -> np.random.Generator:
    # Philox is counter based; the key picks the stream, so each lane is independent.
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), lane]))


def _exponential(rng: np.random.Generator, mean: float, n: int) -> np.ndarray:
    u = rng.random(n)
    return -mean * np.log1p(-u)  # inverse CDF


def generate_trace(stream: RequestStream, chunk: int = 4096) -> list[tuple[float, float]]:
    """Ordered (arrival_time, service_demand) pairs up to the stream horizon.

    Arrival gaps and service demands come from separate Philox lanes, so the
    i-th request gets the same demand whatever the horizon.
    """
    if stream.horizon <= 0:
        return []
    spec = stream.spec
    gaps_rng = _stream_rng(stream.rng_seed, 0)
    demand_rng = _stream_rng(stream.rng_seed, 1)
    out: list[tuple[float, float]] = []
    t = 0.0
    while True:
        gaps = _exponential(gaps_rng, 1.0 / spec.arrival_rate, chunk)
        demands = _exponential(demand_rng, spec.mean_service_time, chunk)
        for g, d in zip(gaps.tolist(), demands.tolist()):
            t += g
            if t > stream.horizon:
                return out
            out.append((t, d))


# id, category, mu (s), lambda (rps), lock, footprint, isolated ipc, threads.
# Footprint, IPC and thread counts are modelling defaults; see README.
_CATALOG = [
    ("MR", "LS", 0.125, 7.20, False, 600, 1.4, 1),
    ("EG", "LS", 0.220, 4.09, False, 900, 1.2, 1),
    ("SA", "LS", 0.400, 2.25, False, 1000, 1.1, 1),
    ("BS", "LS", 0.160, 5.63, False, 300, 1.6, 1),
    ("OD", "LS", 0.300, 3.00, True, 400, 1.3, 1),
    ("VP", "LD", 13.100, 0.07, False, 500, 1.5, 4),
    ("IR", "LD", 0.003, 300.00, False, 200, 1.7, 1),
    ("PC", "LD", 1.450, 0.62, False, 300, 0.9, 1),
    ("DV", "LD", 0.450, 2.00, False, 400, 1.2, 1),
    ("PRA", "LD", 8.750, 0.10, False, 500, 1.0, 4),
]


def builtin_catalog() -> list[FunctionSpec]:
    return [
        FunctionSpec(
            id=i, category=Category(cat), mean_service_time=mu, arrival_rate=lam,
            uses_futex_lock=lock, code_footprint=fp, isolated_ipc=ipc, threads=thr,
        )
        for i, cat, mu, lam, lock, fp, ipc, thr in _CATALOG
    ]


def catalog_by_id(specs: list[FunctionSpec] | None = None) -> dict[str, FunctionSpec]:
    return {s.id: s for s in (specs if specs is not None else builtin_catalog())}


CATALOG_COLUMNS = ["id", "category", "mu", "lambda", "uses_futex_lock", "code_footprint",
                   "isolated_ipc", "threads"]


def write_catalog(specs: list[FunctionSpec], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CATALOG_COLUMNS)
        for s in specs:
            w.writerow([s.id, s.category.value, repr(s.mean_service_time), repr(s.arrival_rate),
                        int(s.uses_futex_lock), s.code_footprint, repr(s.isolated_ipc), s.threads])


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no", ""):
        return False
    raise InvalidParameter(f"not a boolean: {text!r}")


def read_catalog(path: str | Path) -> list[FunctionSpec]:
    """Parse a catalog file; only id, category, mu and lambda are mandatory."""
    specs = []
    with open(path, newline="") as f:
        rows = csv.DictReader(f)
        missing = {"id", "category", "mu", "lambda"} - set(rows.fieldnames or [])
        if missing:
            raise InvalidParameter(f"catalog {path} lacks columns {sorted(missing)}")
        for row in rows:
            kw = {}
            if row.get("uses_futex_lock") is not None:
                kw["uses_futex_lock"] = _parse_bool(row["uses_futex_lock"])
            if row.get("code_footprint"):
                kw["code_footprint"] = int(row["code_footprint"])
            if row.get("isolated_ipc"):
                kw["isolated_ipc"] = float(row["isolated_ipc"])
            if row.get("threads"):
                kw["threads"] = int(row["threads"])
            try:
                category = Category(row["category"].strip().upper())
            except ValueError:
                raise InvalidParameter(f"bad category {row['category']!r}") from None
            specs.append(FunctionSpec(id=row["id"].strip(), category=category,
                                      mean_service_time=float(row["mu"]),
                                      arrival_rate=float(row["lambda"]), **kw))
    return specs
