"""Train on EG+VP, then compare exploit-only FaaSched against LaSS on held-out traces."""

import argparse
import dataclasses
import time

from faasched.agent import A2CAgent
from faasched.experiment import ExperimentConfig, calibrate, run_experiment, train
from faasched.metrics import mean, variance


def compare(train_seed=11, eval_seed=23, train_duration=18000.0, horizon=3600.0, ls="EG", ld="VP", verbose=True):
    cfg = ExperimentConfig(workloads=[ls, ld], train_duration=train_duration, horizon=horizon, seed=train_seed)
    cal = calibrate(cfg)
    t0 = time.time()
    agent, tr = train(cfg, cal)
    if verbose:
        print(f"trained {agent.steps} updates in {time.time() - t0:.0f}s, penalties {tr.metadata['penalties']}")
    out = {}
    for name in ("lass", "faasched"):
        ecfg = dataclasses.replace(cfg, controller=name, seed=eval_seed)
        res = run_experiment(ecfg, cal, agent=agent if name == "faasched" else None)
        ls_resp = [r.response_latency for r in res.records if r.app == ls]
        ld_exec = [r.execution_latency for r in res.records if r.app == ld]
        out[name] = {"ls_var": variance(ls_resp), "ls_mean": mean(ls_resp), "ld_exec_mean": mean(ld_exec),
                     "n_ls": len(ls_resp), "n_ld": len(ld_exec)}
        if verbose:
            print(name, out[name])
    var_red = 1 - out["faasched"]["ls_var"] / out["lass"]["ls_var"]
    ld_deg = out["faasched"]["ld_exec_mean"] / out["lass"]["ld_exec_mean"] - 1
    if verbose:
        print(f"LS response variance reduction {var_red:.1%}, LD mean execution change {ld_deg:+.1%}")
    return var_red, ld_deg, agent, out


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--train-seed", type=int, default=11)
    p.add_argument("--eval-seed", type=int, default=23)
    p.add_argument("--train-duration", type=float, default=18000.0)
    p.add_argument("--horizon", type=float, default=3600.0)
    a = p.parse_args()
    compare(a.train_seed, a.eval_seed, a.train_duration, a.horizon)
