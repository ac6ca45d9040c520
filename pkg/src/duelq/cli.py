"""Command-line experiment harness.

Subcommands:

* ``run``          - execute a batch of seeded runs from a JSON config and
                     write one squared-error CSV (plus a final checkpoint)
                     per (architecture, action count, seed), with a manifest.
* ``aggregate``    - per-index median curves across seeds.
* ``metric``       - normalized score-improvement utility.
* ``saliency``     - per-state stream saliency dump for a dueling checkpoint.
* ``oracle-dump``  - exact DP tables (q*, q_pi, v_pi, a_pi) as CSV.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure. All CSVs are
written via write-then-rename so an interrupted run never leaves truncated
files; reruns of the same config produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import glob as globmod
import hashlib
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, _kernels
from .agents import (AgentState, SECurve, TrainConfig, exact_return_of_greedy,
                     train_ddqn, train_policy_eval)
from .corridor import (advantage_of, build_corridor, epsilon_greedy_policy,
                       solve_q_pi, solve_q_star)
from .network import (DUELING, build_dueling, build_single_stream, load_net,
                      q_values, saliency, save_net)
from .replay import PrioritizedBuffer, UniformBuffer

ARCHS = ("single", "duel")


class ConfigError(ValueError):
    """Invalid experiment configuration (reported with a line number)."""


class UsageError(ValueError):
    """Bad command-line arguments."""


@dataclass
class ExperimentConfig:
    """Validated, fully-defaulted description of one experiment batch."""

    mode: str
    archs: list = field(default_factory=lambda: list(ARCHS))
    n_actions: list = field(default_factory=lambda: [5, 10, 20])
    aggregator: str = "mean"
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    updates: int = 200_000
    lr: float = 0.05
    clip_norm: float = 10.0
    sync_period: int = 500
    minibatch: int = 32
    behavior_epsilon: float = 0.001
    sampling: str = "uniform"
    replay: str = "uniform"
    buffer_capacity: int = 10_000
    explore_start: float = 1.0
    explore_end: float = 0.05
    explore_frac: float = 0.2
    warmup: int = 500
    update_period: int = 1
    out_dir: str = "runs"

    def to_dict(self):
        return {k: getattr(self, k) for k in _CONFIG_FIELDS}

    def hash(self):
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


_CONFIG_FIELDS = [f for f in ExperimentConfig.__dataclass_fields__]

_VALIDATORS = {
    "mode": lambda v: v in ("policy-eval", "control"),
    "archs": lambda v: isinstance(v, list) and v and all(a in ARCHS for a in v),
    "n_actions": lambda v: isinstance(v, list) and v
    and all(n in (5, 10, 20) for n in v),
    "aggregator": lambda v: v in ("mean", "max", "naive"),
    "seeds": lambda v: isinstance(v, list) and v
    and all(isinstance(s, int) and not isinstance(s, bool) for s in v),
    "updates": lambda v: isinstance(v, int) and v >= 1,
    "lr": lambda v: isinstance(v, (int, float)) and v > 0,
    "clip_norm": lambda v: isinstance(v, (int, float)) and v > 0,
    "sync_period": lambda v: isinstance(v, int) and v >= 1,
    "minibatch": lambda v: isinstance(v, int) and v >= 1,
    "behavior_epsilon": lambda v: isinstance(v, (int, float)) and 0 <= v <= 1,
    "sampling": lambda v: v in ("uniform", "rollout"),
    "replay": lambda v: v in ("uniform", "prioritized"),
    "buffer_capacity": lambda v: isinstance(v, int) and v >= 1,
    "explore_start": lambda v: isinstance(v, (int, float)) and 0 <= v <= 1,
    "explore_end": lambda v: isinstance(v, (int, float)) and 0 <= v <= 1,
    "explore_frac": lambda v: isinstance(v, (int, float)) and 0 < v <= 1,
    "warmup": lambda v: isinstance(v, int) and v >= 1,
    "update_period": lambda v: isinstance(v, int) and v >= 1,
    "out_dir": lambda v: isinstance(v, str) and bool(v),
}


def _key_line(text, key):
    """Best-effort line number of a key in the raw config text."""
    for i, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return 0


def load_config(path):
    """Parse and strictly validate a JSON experiment config."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    if "mode" not in raw:
        raise ConfigError(f"{path}:1: missing required key 'mode'")
    for key, value in raw.items():
        if key not in _VALIDATORS:
            raise ConfigError(f"{path}:{_key_line(text, key)}: "
                              f"unknown key '{key}'")
        if not _VALIDATORS[key](value):
            raise ConfigError(f"{path}:{_key_line(text, key)}: "
                              f"invalid value for '{key}': {value!r}")
    return ExperimentConfig(**raw)


# ---------------------------------------------------------------------------
# metric utility

def improvement_metric(agent, baseline, human, random):
    """Normalized score improvement over the better of human and baseline.

    ``(agent - baseline) / (max(human, baseline) - random)``; raises on a
    non-positive denominator.
    """
    denom = max(human, baseline) - random
    if denom <= 0:
        raise ValueError("max(human, baseline) must exceed the random score")
    return (agent - baseline) / denom


# ---------------------------------------------------------------------------
# file helpers

def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def curve_to_csv(curve):
    lines = ["update,se,arch,n_actions,seed"]
    for u, se in zip(curve.updates, curve.se):
        lines.append(f"{u},{float(se)!r},{curve.arch},{curve.n_actions},{curve.seed}")
    return "\n".join(lines) + "\n"


def read_curve_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["update", "se", "arch", "n_actions", "seed"]:
            raise ValueError(f"{path}: unexpected curve CSV header")
        updates, ses = [], []
        arch = n_actions = seed = None
        for line in fh:
            u, se, arch, n_actions, seed = line.strip().split(",")
            updates.append(int(u))
            ses.append(float(se))
    return SECurve(updates, ses, arch, int(n_actions), int(seed))


# ---------------------------------------------------------------------------
# run

_ORACLE_CACHE = {}


def _oracle(n_actions, behavior_epsilon):
    key = (n_actions, behavior_epsilon)
    if key not in _ORACLE_CACHE:
        spec = build_corridor(n_actions)
        q_star = solve_q_star(spec)
        policy = epsilon_greedy_policy(q_star, behavior_epsilon)
        q_pi = solve_q_pi(spec, policy)
        _ORACLE_CACHE[key] = (spec, q_star, policy, q_pi)
    return _ORACLE_CACHE[key]


def _build_net(arch, n_actions, seed):
    if arch == "single":
        return build_single_stream(70, n_actions, seed)
    return build_dueling(70, n_actions, seed)


def run_one(cfg_dict, arch, n_actions, seed):
    """Execute a single seeded run; returns (curve, net, wall_time)."""
    cfg = ExperimentConfig(**cfg_dict)
    spec, q_star, policy, q_pi = _oracle(n_actions, cfg.behavior_epsilon)
    net = _build_net(arch, n_actions, seed)
    tc = TrainConfig(lr=cfg.lr, clip_norm=cfg.clip_norm,
                     sync_period=cfg.sync_period, seed=seed,
                     updates=cfg.updates, minibatch=cfg.minibatch)
    t0 = time.perf_counter()
    if cfg.mode == "policy-eval":
        curve = train_policy_eval(spec, policy, net, tc, q_pi,
                                  aggregator=cfg.aggregator,
                                  sampling=cfg.sampling, arch_label=arch)
    else:
        target = net.clone()
        if cfg.replay == "prioritized":
            buffer = PrioritizedBuffer(cfg.buffer_capacity)
        else:
            buffer = UniformBuffer(cfg.buffer_capacity)
        agent = AgentState(online=net, target=target, config=tc,
                           aggregator=cfg.aggregator, buffer=buffer)
        returns = []
        log_every = max(1, cfg.updates // 50)

        def log(step_i, ag):
            returns.append((step_i, exact_return_of_greedy(
                spec, ag.online, cfg.aggregator)))

        train_ddqn(spec, tc, agent, explore_start=cfg.explore_start,
                   explore_end=cfg.explore_end, explore_frac=cfg.explore_frac,
                   warmup=cfg.warmup, update_period=cfg.update_period,
                   log_every=log_every, log_fn=log)
        curve = returns
    return curve, net, time.perf_counter() - t0


def _run_worker(args):
    cfg_dict, arch, n_actions, seed = args
    cfg = ExperimentConfig(**cfg_dict)
    curve, net, wall = run_one(cfg_dict, arch, n_actions, seed)
    tag = f"{arch}_{n_actions}a_seed{seed}"
    if cfg.mode == "policy-eval":
        csv_path = os.path.join(cfg.out_dir, f"se_{tag}.csv")
        _atomic_write(csv_path, curve_to_csv(curve))
    else:
        csv_path = os.path.join(cfg.out_dir, f"return_{tag}.csv")
        lines = ["update,greedy_return,arch,n_actions,seed"]
        for u, ret in curve:
            lines.append(f"{u},{float(ret)!r},{arch},{n_actions},{seed}")
        _atomic_write(csv_path, "\n".join(lines) + "\n")
    ckpt_path = os.path.join(cfg.out_dir, f"net_{tag}.npz")
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_net(net, ckpt_path)
    return {"file": os.path.basename(csv_path),
            "checkpoint": os.path.basename(ckpt_path),
            "arch": arch, "n_actions": n_actions, "seed": seed,
            "wall_time_s": round(wall, 3)}


def cmd_run(args):
    cfg = load_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.seeds:
        try:
            cfg.seeds = [int(s) for s in args.seeds.split(",") if s]
        except ValueError as exc:
            raise UsageError(f"--seeds expects a comma-separated integer "
                             f"list, got {args.seeds!r}") from exc
        if not cfg.seeds:
            raise UsageError("--seeds produced an empty list")

    jobs = [(cfg.to_dict(), arch, n, seed)
            for arch in cfg.archs for n in cfg.n_actions for seed in cfg.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(_run_worker, jobs))
    else:
        records = [_run_worker(j) for j in jobs]

    manifest = {
        "config_sha256": cfg.hash(),
        "code_version": __version__,
        "kernel_backend": _kernels.current(),
        "config": cfg.to_dict(),
        "runs": records,
    }
    _atomic_write(os.path.join(cfg.out_dir, "manifest.json"),
                  json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(records)} runs + manifest to {cfg.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# aggregate

def aggregate_curves(curves):
    """Per-index median across seeds for one (arch, n_actions) group."""
    grid = curves[0].updates
    for c in curves[1:]:
        if c.updates != grid:
            raise ValueError(
                f"curves have misaligned update grids (seed {c.seed} differs "
                f"from seed {curves[0].seed})")
    stacked = np.array([c.se for c in curves])
    return grid, np.median(stacked, axis=0)


def cmd_aggregate(args):
    paths = sorted(globmod.glob(args.glob))
    if not paths:
        raise UsageError(f"no files match {args.glob!r}")
    groups = {}
    for path in paths:
        curve = read_curve_csv(path)
        groups.setdefault((curve.arch, curve.n_actions), []).append(curve)
    os.makedirs(args.out, exist_ok=True)
    for (arch, n_actions), curves in sorted(groups.items()):
        grid, med = aggregate_curves(curves)
        lines = ["update,se_median,arch,n_actions,n_seeds"]
        for u, se in zip(grid, med):
            lines.append(f"{u},{float(se)!r},{arch},{n_actions},{len(curves)}")
        out_path = os.path.join(args.out, f"median_{arch}_{n_actions}a.csv")
        _atomic_write(out_path, "\n".join(lines) + "\n")
        print(f"wrote {out_path} ({len(curves)} seeds)")
    return 0


# ---------------------------------------------------------------------------
# other subcommands

def cmd_metric(args):
    value = improvement_metric(args.agent, args.baseline, args.human,
                               args.random)
    print(f"{value!r} ({value * 100.0:.1f}%)")
    return 0


def cmd_saliency(args):
    net = load_net(args.checkpoint)
    if net.topology != DUELING:
        raise ValueError("saliency needs a dueling checkpoint; this one is "
                         f"{net.topology!r}")
    n = net.input_dim
    eye = np.eye(n)
    lines = ["state,value_saliency,advantage_saliency"]
    for s in range(n):
        val_sal, adv_sal = saliency(net, eye[s])
        lines.append(f"{s},{float(val_sal[s])!r},{float(adv_sal[s])!r}")
    _atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.out} ({n} states)")
    return 0


def cmd_oracle_dump(args):
    spec, q_star, policy, q_pi = _oracle(args.n_actions, args.epsilon)
    v_pi, a_pi = advantage_of(q_pi, policy)
    lines = ["state,action,q_star,q_pi,v_pi,a_pi"]
    for s in range(spec.n_states):
        for a in range(spec.n_actions):
            lines.append(f"{s},{a},{float(q_star.q[s, a])!r},{float(q_pi.q[s, a])!r},"
                         f"{float(v_pi[s])!r},{float(a_pi[s, a])!r}")
    _atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.out} ({spec.n_states * spec.n_actions} rows)")
    return 0


# ---------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="duelq",
                     description="Corridor Q-network experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute runs from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None,
                       help="override the config's output directory")
    p_run.add_argument("--seeds", default=None,
                       help="comma-separated seed list override")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes")
    p_run.set_defaults(func=cmd_run)

    p_agg = sub.add_parser("aggregate", help="median curves across seeds")
    p_agg.add_argument("glob", help="glob of per-seed curve CSVs")
    p_agg.add_argument("--out", required=True)
    p_agg.set_defaults(func=cmd_aggregate)

    p_met = sub.add_parser("metric", help="normalized score improvement")
    for name in ("agent", "baseline", "human", "random"):
        p_met.add_argument(f"--{name}", type=float, required=True)
    p_met.set_defaults(func=cmd_metric)

    p_sal = sub.add_parser("saliency",
                           help="per-state saliency of a dueling checkpoint")
    p_sal.add_argument("--checkpoint", required=True)
    p_sal.add_argument("--out", required=True)
    p_sal.set_defaults(func=cmd_saliency)

    p_ora = sub.add_parser("oracle-dump", help="exact DP tables as CSV")
    p_ora.add_argument("--n-actions", type=int, default=5)
    p_ora.add_argument("--epsilon", type=float, default=0.001)
    p_ora.add_argument("--out", required=True)
    p_ora.set_defaults(func=cmd_oracle_dump)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
