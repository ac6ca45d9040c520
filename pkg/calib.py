"""Calibration sweep for the policy-eval harness defaults (scratch script)."""
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

import duelq
from duelq.agents import TrainConfig, train_policy_eval


def one(args):
    lr, arch, nA, seed, updates = args
    spec = duelq.build_corridor(nA)
    qs = duelq.solve_q_star(spec)
    pi = duelq.epsilon_greedy_policy(qs, 0.001)
    qpi = duelq.solve_q_pi(spec, pi)
    build = duelq.build_single_stream if arch == "single" else duelq.build_dueling
    net = build(70, nA, seed=seed)
    cfg = TrainConfig(lr=lr, seed=seed, updates=updates)
    curve = train_policy_eval(spec, pi, net, cfg, qpi, arch_label=arch)
    # SE at a few reference indices
    import bisect
    def at(t):
        i = bisect.bisect_left(curve.updates, t)
        return curve.se[min(i, len(curve.se) - 1)]
    return (lr, arch, nA, seed, at(50000), at(100000), at(200000), at(300000))


if __name__ == "__main__":
    updates = 300000
    lrs = [float(x) for x in sys.argv[1].split(",")]
    seeds = [1, 2, 3]
    jobs = [(lr, arch, nA, seed, updates)
            for lr in lrs for nA in (5, 10, 20)
            for arch in ("single", "duel") for seed in seeds]
    with ProcessPoolExecutor(max_workers=2) as pool:
        results = list(pool.map(one, jobs))
    by = {}
    for lr, arch, nA, seed, *ses in results:
        by.setdefault((lr, nA, arch), []).append(ses)
    for lr in lrs:
        for nA in (5, 10, 20):
            meds = {}
            for arch in ("single", "duel"):
                m = np.median(np.array(by[(lr, nA, arch)]), axis=0)
                meds[arch] = m
                print(f"lr={lr} nA={nA:2d} {arch:6s} median SE "
                      f"@50k={m[0]:8.3f} @100k={m[1]:8.3f} @200k={m[2]:8.3f} @300k={m[3]:8.3f}")
            r = meds["single"] / meds["duel"]
            print(f"lr={lr} nA={nA:2d} ratio single/duel "
                  f"@50k={r[0]:6.2f} @100k={r[1]:6.2f} @200k={r[2]:6.2f} @300k={r[3]:6.2f}")
