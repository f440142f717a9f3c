"""LS jitter and LD cost of the fixed priority schemes and static core splits on one LS+LD pair."""

import argparse
import dataclasses

from faasched.experiment import ExperimentConfig, calibrate, run_experiment
from faasched.metrics import iqr, mean, variance

SCHEMES = ["lass", "rid", "fp", "si", "sd"]


def sweep(ls="EG", ld="VP", seed=23, horizon=1800.0, num_cores=6):
    cfg = ExperimentConfig(workloads=[ls, ld], horizon=horizon, seed=seed)
    cfg.host.num_cores = num_cores
    cal = calibrate(cfg)
    controllers = SCHEMES + [f"partition({m},{num_cores - m})" for m in range(1, num_cores)]
    rows = []
    for name in controllers:
        res = run_experiment(dataclasses.replace(cfg, controller=name), cal)
        resp = [r.response_latency for r in res.records if r.app == ls]
        ld_exec = [r.execution_latency for r in res.records if r.app == ld]
        rows.append((name, iqr(resp), variance(resp), mean(resp), mean(ld_exec)))
    return rows


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--ls", default="EG")
    p.add_argument("--ld", default="VP")
    p.add_argument("--seed", type=int, default=23)
    p.add_argument("--horizon", type=float, default=1800.0)
    a = p.parse_args()
    print("controller,ls_resp_iqr,ls_resp_var,ls_resp_mean,ld_exec_mean")
    for name, q, v, m, d in sweep(a.ls, a.ld, a.seed, a.horizon):
        print(f"{name},{q:.4f},{v:.4f},{m:.4f},{d:.4f}")
