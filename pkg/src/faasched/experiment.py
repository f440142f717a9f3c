"""Experiment orchestration: config files, calibration, controller runs and outputs."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import os
import re
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agent import A2CAgent, AgentConfig, CalibrationBounds, FaaSchedController, RewardConfig
from .baselines import LassController, PartitionController, PriorityScheme, SchemeController
from .host import HostConfig, RequestRecord, SimResult, run
from .metrics import QUARTILE_METHOD, SUMMARY_COLUMNS, iqr, mean, summarize, variance
from .monitor import STATE_COLUMNS, assemble_state, collect_window, window_fairness
from .workload import FunctionSpec, InvalidParameter, RequestStream, builtin_catalog, read_catalog


class ConfigError(Exception):
    pass


@dataclass
class CalibrationConfig:
    horizon: float = 600.0
    headroom: float = 10.0
    floor_wait: float = 0.01  # seconds of wait per second of window
    floor_nvcs: float = 1.0  # per second of window
    floor_flushes: float = 1.0  # per second of window, scaled by k_miss * footprint
    file: str = ""


@dataclass
class ExperimentConfig:
    workloads: list[str] = field(default_factory=lambda: ["EG", "VP"])
    catalog: str = ""
    horizon: float = 1800.0
    train_duration: float = 18000.0
    seed: int = 1
    controller: str = "lass"
    out: str = "results"
    eval_workloads: list[str] = field(default_factory=list)
    host: HostConfig = field(default_factory=HostConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)

    def specs(self, ids: list[str] | None = None) -> list[FunctionSpec]:
        cat = {s.id: s for s in (read_catalog(self.catalog) if self.catalog else builtin_catalog())}
        ids = self.workloads if ids is None else ids
        missing = [i for i in ids if i not in cat]
        if missing:
            raise ConfigError(f"unknown workloads {missing}")
        if len(set(ids)) != len(ids):
            raise ConfigError("workload list has duplicates")
        return [cat[i] for i in ids]

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------ config files

def _split_list(text: str) -> list[str]:
    return [t for t in re.split(r"[\s,+]+", text.strip()) if t]


def _coerce(text: str, typ, key: str):
    try:
        if typ is bool:
            t = text.strip().lower()
            if t in ("1", "true", "yes", "on"):
                return True
            if t in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def _apply_section(obj, items: dict, section: str, skip=()):
    hints = {f.name: f.type for f in dataclasses.fields(obj)}
    for key, raw in items.items():
        if key not in hints or key in skip:
            raise ConfigError(f"unknown key [{section}] {key}")
        cur = getattr(obj, key)
        if isinstance(cur, list):
            val = _split_list(raw)
        elif isinstance(cur, bool):
            val = _coerce(raw, bool, key)
        elif isinstance(cur, int):
            val = _coerce(raw, int, key)
        elif isinstance(cur, float):
            val = _coerce(raw, float, key)
        else:
            val = _coerce(raw, str, key)
        setattr(obj, key, val)


_REWARD_KEYS = {"a", "b", "c", "tau"}
_HOST_SKIP = ("initial_sandboxes", "check_invariants")
_SECTIONS = ("experiment", "host", "agent", "calibration")


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        with open(path) as f:
            parser.read_file(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from None
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    if parser.has_section("experiment"):
        _apply_section(cfg, dict(parser["experiment"]), "experiment", skip=("host", "agent", "calibration"))
    if parser.has_section("host"):
        _apply_section(cfg.host, dict(parser["host"]), "host", skip=_HOST_SKIP)
    if parser.has_section("agent"):
        items = dict(parser["agent"])
        reward_items = {k: items.pop(k) for k in list(items) if k in _REWARD_KEYS}
        _apply_section(cfg.agent, items, "agent", skip=("reward",))
        _apply_section(cfg.agent.reward, reward_items, "agent")
        try:
            RewardConfig(**asdict(cfg.agent.reward))
        except InvalidParameter as e:
            raise ConfigError(str(e)) from None
    if parser.has_section("calibration"):
        _apply_section(cfg.calibration, dict(parser["calibration"]), "calibration")
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    if not cfg.workloads:
        raise ConfigError("no workloads configured")
    if cfg.host.num_cores < 1 or cfg.host.window <= 0 or cfg.horizon <= 0 or cfg.train_duration <= 0:
        raise ConfigError("num_cores, window, horizon and train_duration must be positive")
    parse_controller(cfg.controller)
    cfg.specs()
    for mix in cfg.eval_workloads:
        cfg.specs(mix.split("/"))


# -------------------------------------------------------------- controllers

_PARTITION = re.compile(r"partition\((\d+),(\d+)\)$")


def parse_controller(name: str):
    n = name.strip().lower().replace(" ", "")
    if n in ("faasched", "lass", "rid", "fp", "si", "sd"):
        return n, ()
    m = _PARTITION.match(n)
    if m:
        return "partition", (int(m.group(1)), int(m.group(2)))
    raise ConfigError(f"unknown controller {name!r}")


def make_controller(cfg: ExperimentConfig, calibration: "Calibration", agent: A2CAgent | None = None,
                    training: bool = False, total_time: float | None = None):
    kind, args = parse_controller(cfg.controller)
    if kind == "lass":
        return LassController()
    if kind in ("rid", "fp", "si", "sd"):
        return SchemeController(PriorityScheme(kind, step=cfg.agent.p_step), seed=cfg.seed)
    if kind == "partition":
        m, n = args
        if m + n != cfg.host.num_cores or m < 1 or n < 1:
            raise ConfigError(f"partition {m}:{n} does not cover {cfg.host.num_cores} cores")
        return PartitionController(m, n)
    if agent is None:
        agent = A2CAgent(cfg.agent)
    return FaaSchedController(agent, calibration.bounds, training=training,
                              total_time=total_time or cfg.train_duration, seed=cfg.seed)


# --------------------------------------------------------------- streams

def make_streams(specs: list[FunctionSpec], seed: int, horizon: float) -> list[RequestStream]:
    # one independent seed per app; the same app keeps its trace across controllers
    return [RequestStream(s, seed * 1000 + _app_salt(s.id), horizon) for s in specs]


def _app_salt(app_id: str) -> int:
    return sum((i + 1) * ord(ch) for i, ch in enumerate(app_id)) % 997


def host_config(cfg: ExperimentConfig, seed: int | None = None) -> HostConfig:
    return dataclasses.replace(cfg.host, seed=cfg.seed if seed is None else seed)


# --------------------------------------------------------------- calibrate

@dataclass
class Calibration:
    bounds: CalibrationBounds
    apps: dict[str, dict]
    meta: dict = field(default_factory=dict)

    def isolated_stats(self) -> dict:
        return {a: {k: d[k] for k in ("execution", "response")} for a, d in self.apps.items()}

    def to_json(self) -> str:
        return json.dumps({"bounds": self.bounds.to_dict(), "apps": self.apps, "meta": self.meta},
                          indent=2, sort_keys=True)

    def save(self, path: str | Path):
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Calibration":
        with open(path) as f:
            d = json.load(f)
        return cls(CalibrationBounds.from_dict(d["bounds"]), d["apps"], d.get("meta", {}))


def _latency_stats(xs: list[float]) -> dict:
    if len(xs) < 2:
        return {"mean": float("nan"), "variance": float("nan"), "iqr": float("nan"), "n": len(xs)}
    return {"mean": mean(xs), "variance": variance(xs), "iqr": iqr(xs), "n": len(xs)}


def calibrate(cfg: ExperimentConfig, specs: list[FunctionSpec] | None = None) -> Calibration:
    """Solo runs of every app on the full host; yields baselines and scaling bounds."""
    specs = specs if specs is not None else cfg.specs()
    hcfg = host_config(cfg)
    W = hcfg.window
    cc = cfg.calibration
    apps = {}
    peak = np.zeros(3)
    footprint = 0
    for spec in specs:
        res = run(hcfg, make_streams([spec], cfg.seed, cc.horizon))
        recs = [r for r in res.records if r.app == spec.id]
        conts = [collect_window(a, b, spec.id) for a, b in zip(res.windows, res.windows[1:])]
        cont = np.array(conts) if conts else np.zeros((1, 3))
        peak = np.maximum(peak, cont.max(axis=0))
        footprint = max(footprint, spec.code_footprint)
        end = res.windows[-1].counters[spec.id]
        ipc = end.instructions / end.cycles if end.cycles > 0 else spec.isolated_ipc
        apps[spec.id] = {
            "isolated_ipc": ipc,
            "execution": _latency_stats([r.execution_latency for r in recs]),
            "response": _latency_stats([r.response_latency for r in recs]),
            "contention_baseline": cont.mean(axis=0).tolist(),
            "contention_max": cont.max(axis=0).tolist(),
        }
    floor = np.array([cc.floor_wait * W, cc.floor_nvcs * W,
                      cc.floor_flushes * W * hcfg.k_miss * max(footprint, 1)])
    hi = np.maximum(cc.headroom * peak, floor)
    meta = {"seed": cfg.seed, "horizon": cc.horizon, "window": W, "headroom": cc.headroom}
    return Calibration(CalibrationBounds((0.0, 0.0, 0.0), tuple(float(x) for x in hi)), apps, meta)


def ensure_calibration(cfg: ExperimentConfig, specs: list[FunctionSpec]) -> Calibration:
    if cfg.calibration.file and Path(cfg.calibration.file).exists():
        cal = Calibration.load(cfg.calibration.file)
        missing = [s for s in specs if s.id not in cal.apps]
        if not missing:
            return cal
        extra = calibrate(cfg, missing)
        cal.apps.update(extra.apps)
        return cal
    return calibrate(cfg, specs)


def apply_calibration(specs: list[FunctionSpec], cal: Calibration) -> list[FunctionSpec]:
    out = []
    for s in specs:
        d = cal.apps.get(s.id)
        if d is None:
            out.append(s)
            continue
        out.append(dataclasses.replace(s, isolated_ipc=d["isolated_ipc"],
                                       isolated_contention_baseline=tuple(d["contention_baseline"])))
    return out


# ------------------------------------------------------------------- runs

@dataclass
class ExperimentResult:
    controller: str
    records: list[RequestRecord]
    state_rows: list[dict]
    summary: list
    metadata: dict
    sim: SimResult
    ctl: object = None


def state_rows(res: SimResult) -> list[dict]:
    rows = []
    for a, b in zip(res.windows, res.windows[1:]):
        fair = window_fairness(a, b)
        for app in b.sched:
            rows.append(assemble_state(a, b, app, fair).row())
    return rows


def run_experiment(cfg: ExperimentConfig, calibration: Calibration, specs: list[FunctionSpec] | None = None,
                   agent: A2CAgent | None = None, training: bool = False, horizon: float | None = None,
                   seed: int | None = None) -> ExperimentResult:
    seed = cfg.seed if seed is None else seed
    horizon = cfg.horizon if horizon is None else horizon
    specs = apply_calibration(specs if specs is not None else cfg.specs(), calibration)
    ctl = make_controller(cfg, calibration, agent, training, total_time=horizon if training else None)
    res = run(host_config(cfg, seed), make_streams(specs, seed, horizon), ctl)
    summary = summarize(res.records, calibration.isolated_stats())
    meta = {
        "controller": cfg.controller,
        "seed": seed,
        "horizon": horizon,
        "training": training,
        "workloads": [s.id for s in specs],
        "quartile_method": f"{QUARTILE_METHOD} interpolation at rank q*(n-1)",
        "variance": "population",
        "config": cfg.to_dict(),
        "calibration_bounds": calibration.bounds.to_dict(),
        "requests": len(res.records),
        "enforcements": len(res.enforcements),
        "violations": res.violations,
    }
    if isinstance(ctl, FaaSchedController):
        meta["agent_steps"] = ctl.agent.steps
        meta["skipped_updates"] = ctl.agent.skipped_updates
        meta["decisions"] = len(ctl.decisions)
        meta["penalties"] = sum(d.penalized for d in ctl.decisions)
    return ExperimentResult(cfg.controller, res.records, state_rows(res), summary, meta, res, ctl)


def train(cfg: ExperimentConfig, calibration: Calibration, agent: A2CAgent | None = None,
          seed: int | None = None) -> tuple[A2CAgent, ExperimentResult]:
    agent = agent or A2CAgent(cfg.agent)
    tcfg = dataclasses.replace(cfg, controller="faasched")
    res = run_experiment(tcfg, calibration, agent=agent, training=True, horizon=cfg.train_duration, seed=seed)
    return agent, res


def evaluate(cfg: ExperimentConfig, calibration: Calibration, agent: A2CAgent,
             seed: int | None = None) -> list[ExperimentResult]:
    """Exploit-only runs on the training mix or each held-out mix."""
    ecfg = dataclasses.replace(cfg, controller="faasched")
    mixes = [m.split("/") for m in cfg.eval_workloads] or [cfg.workloads]
    out = []
    for ids in mixes:
        specs = cfg.specs(ids)
        cal = ensure_calibration(cfg, specs) if any(s.id not in calibration.apps for s in specs) else calibration
        out.append(run_experiment(ecfg, cal, specs, agent=agent, training=False, seed=seed))
    return out


# ----------------------------------------------------------------- output

REQUEST_COLUMNS = ["app", "arrival", "start_exec", "completion", "execution_latency",
                   "response_latency", "cold_start"]


def atomic_write_text(path: str | Path, text: str):
    _atomic(path, lambda f: f.write(text))


def _atomic(path, writer):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            writer(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_csv(records, path: str | Path) -> None:
    def write(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REQUEST_COLUMNS)
        for r in records:
            w.writerow([r.app, repr(r.arrival), repr(r.start_exec), repr(r.completion),
                        repr(r.execution_latency), repr(r.response_latency), int(r.cold_start)])
    _atomic(path, write)


def read_records(path: str | Path) -> list[RequestRecord]:
    with open(path, newline="") as f:
        rows = csv.DictReader(f)
        if rows.fieldnames != REQUEST_COLUMNS:
            raise InvalidParameter(f"{path}: unexpected header {rows.fieldnames}")
        return [RequestRecord(r["app"], float(r["arrival"]), float(r["start_exec"]),
                              float(r["completion"]), r["cold_start"] == "1") for r in rows]


def emit_states(rows: list[dict], path: str | Path) -> None:
    def write(f):
        w = csv.DictWriter(f, STATE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    _atomic(path, write)


def emit_summary(summaries, path: str | Path) -> None:
    def write(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in summaries:
            w.writerow(row.row())
    _atomic(path, write)


def write_outputs(result: ExperimentResult, out_dir: str | Path, prefix: str = "") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(result.records, out / f"{prefix}requests.csv")
    emit_states(result.state_rows, out / f"{prefix}windows.csv")
    emit_summary(result.summary, out / f"{prefix}summary.csv")
    meta = dict(result.metadata)
    meta["created"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    atomic_write_text(out / f"{prefix}metadata.json", json.dumps(meta, indent=2, sort_keys=True, default=str))
    return out
