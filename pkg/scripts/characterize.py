"""Solo vs. colocated contention for every LS app next to IR and VP under LaSS."""

import argparse
import statistics

from faasched.baselines import LassController
from faasched.experiment import make_streams
from faasched.host import HostConfig, run
from faasched.monitor import collect_window
from faasched.workload import catalog_by_id

LS_APPS = ["MR", "EG", "SA", "BS", "OD"]


def contention(ls, partner, seed, horizon):
    cat = catalog_by_id()
    specs = [cat[ls]] + ([cat[partner]] if partner else [])
    res = run(HostConfig(seed=seed), make_streams(specs, seed, horizon), LassController())
    return collect_window(res.windows[0], res.windows[-1], ls)


def ratios(ls, partner, seeds, horizon):
    """Median over seeds of colocated/solo (wait, nvcs) for one pair."""
    wait, nvcs = [], []
    for seed in seeds:
        solo = contention(ls, None, seed, horizon)
        pair = contention(ls, partner, seed, horizon)
        wait.append(pair[0] / solo[0])
        nvcs.append(pair[1] / solo[1])
    return statistics.median(wait), statistics.median(nvcs)


def main(seeds=range(5), horizon=60.0):
    out = {}
    for partner in ("IR", "VP"):
        for ls in LS_APPS:
            w, n = ratios(ls, partner, seeds, horizon)
            out[(ls, partner)] = (w, n)
            print(f"{ls}+{partner}: wait x{w:.2f}, nvcs x{n:.2f}")
    return out


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--horizon", type=float, default=60.0)
    a = p.parse_args()
    main(range(a.seeds), a.horizon)
