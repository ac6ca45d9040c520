"""Criterion-bundle evaluation for candidate harness defaults (scratch)."""
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
    return (lr, arch, nA, seed, curve.updates, curve.se)


if __name__ == "__main__":
    lr = float(sys.argv[1])
    updates = int(sys.argv[2])
    n_seeds = int(sys.argv[3])
    seeds = list(range(1, n_seeds + 1))
    jobs = [(lr, arch, nA, seed, updates)
            for nA in (5, 10, 20) for arch in ("single", "duel")
            for seed in seeds]
    with ProcessPoolExecutor(max_workers=2) as pool:
        results = list(pool.map(one, jobs))
    curves = {}
    for lr_, arch, nA, seed, ups, ses in results:
        curves.setdefault((nA, arch), []).append(ses)
    grid = results[0][4]
    finals = {}
    for (nA, arch), group in sorted(curves.items()):
        med = np.median(np.array(group), axis=0)
        finals[(nA, arch)] = med[-1]
        # print final plus a few waypoints
        import bisect
        pts = []
        for t in (10000, 50000, 100000, updates):
            i = bisect.bisect_left(grid, min(t, updates))
            pts.append(f"@{t//1000}k={med[i]:8.3f}")
        print(f"nA={nA:2d} {arch:6s} median " + " ".join(pts))
    print()
    ratios = {}
    for nA in (5, 10, 20):
        r = finals[(nA, "single")] / finals[(nA, "duel")]
        ratios[nA] = r
        print(f"nA={nA:2d}: final SE single={finals[(nA,'single')]:8.3f} "
              f"duel={finals[(nA,'duel')]:8.3f}  ratio={r:6.3f}")
    ok_band = 0.5 <= ratios[5] <= 2.0
    ok_le = finals[(10, "duel")] <= finals[(10, "single")] and \
        finals[(20, "duel")] <= finals[(20, "single")]
    ok_mono = ratios[5] <= ratios[10] <= ratios[20]
    print(f"band5={ok_band} duel<=single(10,20)={ok_le} monotone={ok_mono}")
