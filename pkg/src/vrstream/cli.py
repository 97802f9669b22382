"""Command-line entry point: ``vrstream <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import agents as rl
from . import checks, report, sim
from .config import ConfigError, load_config, save_resolved
from .phy import SchedulerInstance, brute_force_schedule, random_allocation, schedule
from .traces import TraceFormatError, generate_traces, load_traces, save_traces, split_traces

log = logging.getLogger("vrstream")

# the three-user instance used as the default for schedule/oracle
DEFAULT_INSTANCE = {"T": 7, "T_B": 10, "lambda": 0.0,
                    "rates_bps": [10e6, 9e6, 10e6], "afer_bps": [2e6, 2e6, 2e6]}


def world(cfg):
    """Traces (loaded or generated), the train/test split and per-video data."""
    if cfg.traces_path:
        all_traces = load_traces(cfg.traces_path, tiles=cfg.tiles)
    else:
        all_traces = generate_traces(cfg.videos, cfg.traces_per_video, cfg.chunks, cfg.grid,
                                     seed=cfg.seed, step=cfg.walk_step, block=cfg.fov_block,
                                     spread=cfg.anchor_spread)
    train, test = split_traces(all_traces, cfg.train_fraction, cfg.seed)
    return sim.prepare_videos(cfg.sim(), train, test)


def _instance(args):
    """Instance JSON (``U, T, T_B, lambda, rates_bps, afer_bps, max_iters``) plus flag overrides."""
    doc = dict(DEFAULT_INSTANCE)
    if args.instance:
        try:
            doc.update(json.loads(Path(args.instance).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{args.instance}: invalid JSON ({exc})") from None
    if args.rates_mbps:
        doc["rates_bps"] = [r * 1e6 for r in args.rates_mbps]
    if args.afer_mbps:
        doc["afer_bps"] = [r * 1e6 for r in args.afer_mbps]
    for flag, key in (("slots", "T"), ("coherence_slots", "T_B"), ("lam", "lambda")):
        if getattr(args, flag) is not None:
            doc[key] = getattr(args, flag)
    rates = [float(r) for r in doc["rates_bps"]]
    req = [float(r) for r in doc["afer_bps"]]
    if len(req) == 1:
        req = req * len(rates)
    if "U" in doc and int(doc["U"]) != len(rates):
        raise ValueError(f"U={doc['U']} but {len(rates)} rates given")
    inst = SchedulerInstance(tuple(rates), tuple(req), int(doc["T"]), int(doc["T_B"]),
                             float(doc["lambda"]), doc.get("max_iters"))
    initial = None
    if args.random_init:
        initial = random_allocation(inst, np.random.default_rng(args.seed or 0))
    return inst, initial


def _emit(doc, args, name):
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n", encoding="utf-8")


def cmd_schedule(args, cfg, explicit):
    inst, initial = _instance(args)
    res = schedule(inst, initial)
    doc = res.to_json()
    doc["average_rates_bps"] = [t / inst.coherence_slots * r for t, r in zip(res.allocation, inst.rates)]
    _emit(doc, args, "schedule.json")
    return 0


def cmd_oracle(args, cfg, explicit):
    inst, _ = _instance(args)
    res = brute_force_schedule(inst)
    _emit({"allocation": res.allocation, "max_violation_bps": res.max_violation,
           "objective": res.objective}, args, "oracle.json")
    return 0


def cmd_gen_traces(args, cfg, explicit):
    traces = generate_traces(cfg.videos, cfg.traces_per_video, cfg.chunks, cfg.grid,
                             seed=cfg.seed, step=cfg.walk_step, block=cfg.fov_block,
                             spread=cfg.anchor_spread)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    save_traces(traces, out / "traces.csv")
    save_resolved(cfg, out / "config.json", explicit)
    print(f"wrote {len(traces)} traces to {out / 'traces.csv'}")
    return 0


def _train(cfg, videos, out: Path, explicit):
    scfg = cfg.sim()
    env = sim.TrainingEnvironment(scfg, videos)
    agents = rl.make_agents(scfg.tiles, scfg.ladder().levels, cfg.seed, gamma=scfg.gamma,
                            skip_action=scfg.skip_action)
    t0 = time.time()

    def progress(it, r):
        if (it + 1) % 500 == 0:
            log.info("iteration %d  mean reward %.4f  (%.0fs)", it + 1, r, time.time() - t0)

    result = rl.train(env, agents, cfg.iterations, workers=cfg.workers, seed=cfg.seed,
                      beta=scfg.beta_value, actor_lr=scfg.actor_lr, critic_lr=scfg.critic_lr,
                      miss_penalty=scfg.miss_penalty, progress=progress)
    ckpt = out / "checkpoints"
    rl.save_agents(ckpt, result.agents, {"beta": scfg.beta_value, "iterations": cfg.iterations,
                                         "size_bound_bits": env.scaler.size_bits,
                                         "budget_bound_bits": env.scaler.budget_bits})
    report.write_curve(result.curve, out / "learning_curve.csv")
    if result.curve:
        report.svg_plot({"mean reward": list(enumerate(result.curve, start=1))},
                        out / "learning_curve.svg", "Training", "iteration", "mean reward")
    save_resolved(cfg, out / "config.json", explicit)
    return result.agents, env.scaler


def cmd_train(args, cfg, explicit):
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    videos = world(cfg)
    _train(cfg, videos, out, explicit)
    print(f"trained {cfg.tiles} tile agents for {cfg.iterations} iterations; checkpoints in {out / 'checkpoints'}")
    return 0


def cmd_eval(args, cfg, explicit):
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    videos = world(cfg)
    scfg = cfg.sim()
    agents = scaler = None
    if args.checkpoints:
        agents, meta = rl.load_agents(args.checkpoints)
        if len(agents) != scfg.tiles:
            raise ConfigError(f"checkpoints hold {len(agents)} agents, grid has {scfg.tiles} tiles")
        scaler = rl.FeatureScaler(meta["size_bound_bits"], meta["budget_bound_bits"])
    elif cfg.iterations > 0:
        agents, scaler = _train(cfg, videos, out, explicit)
    names = [n for n in sim.SCHEMES if n != "PROPOSED" or agents is not None]
    if agents is None:
        print("no checkpoints and iterations=0: PROPOSED skipped, baselines only")
    results = sim.evaluate(scfg, videos, names, cfg.eval_episodes, agents, scaler)
    table = sim.aggregate(results)
    report.write_chunk_report(results, out / "report.csv")
    report.write_aggregate(table, out / "aggregate.csv")
    report.svg_plot({n: table[n]["reward_cdf"] for n in names}, out / "reward_cdf.svg",
                    "Reward CDF", "reward", "fraction", step=True)
    report.svg_plot({n: table[n]["normalized_cdf"] for n in names}, out / "normalized_cdf.svg",
                    "Normalized reward CDF", "normalized reward", "fraction", step=True)
    save_resolved(cfg, out / "config.json", explicit)
    for n in names:
        print(f"{n:9s} mean reward {table[n]['mean_reward']:.4f}")
    return 0


def cmd_selfcheck(args, cfg, explicit):
    ok = True
    pol = [checks.check_policy_gradient(s) for s in range(20)]
    val = [checks.check_value_gradient(s) for s in range(20)]
    ident = max(checks.score_identity_residual(s) for s in range(20))
    worst_p = max(max(r.max_rel_error, r.directional_rel_error) for r in pol)
    worst_v = max(max(r.max_rel_error, r.directional_rel_error) for r in val)
    for label, err, tol in (("policy gradient", worst_p, 1e-3), ("value gradient", worst_v, 1e-3),
                            ("score identity", ident, 1e-6)):
        passed = err < tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {label}: worst error {err:.3e} (limit {tol:g})")
    rep = checks.check_scheduler(200, seed=cfg.seed)
    passed = rep.mismatches == 0 and rep.increasing_traces == 0
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'}  scheduler: {rep.mismatches} optimality mismatches, "
          f"{rep.increasing_traces} non-monotone traces over {rep.instances} instances")
    return 0 if ok else 1


COMMANDS = {
    "schedule": cmd_schedule,
    "oracle": cmd_oracle,
    "gen-traces": cmd_gen_traces,
    "train": cmd_train,
    "eval": cmd_eval,
    "selfcheck": cmd_selfcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="vrstream", parents=[common],
                                description="Tile-based 360 video streaming simulator.")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def instance_args(sp):
        sp.add_argument("--instance", help="JSON with U, T, T_B, lambda, rates_bps, afer_bps, max_iters")
        sp.add_argument("--rates-mbps", dest="rates_mbps", type=float, nargs="+")
        sp.add_argument("--afer-mbps", dest="afer_mbps", type=float, nargs="+")
        sp.add_argument("--slots", type=int)
        sp.add_argument("--coherence-slots", dest="coherence_slots", type=int)
        sp.add_argument("--lam", type=float)
        sp.add_argument("--random-init", dest="random_init", action="store_true",
                        help="seeded random starting allocation instead of the floor split")

    instance_args(sub.add_parser("schedule", parents=[common], help="run the slot scheduler once"))
    instance_args(sub.add_parser("oracle", parents=[common], help="exhaustive scheduler optimum"))
    sub.add_parser("gen-traces", parents=[common], help="write a synthetic trace CSV")
    tr = sub.add_parser("train", parents=[common], help="train the tile agents")
    tr.add_argument("--iterations", type=int)
    tr.add_argument("--workers", type=int)
    ev = sub.add_parser("eval", parents=[common], help="evaluate all schemes")
    ev.add_argument("--iterations", type=int)
    ev.add_argument("--workers", type=int)
    ev.add_argument("--checkpoints", help="directory written by train")
    ev.add_argument("--episodes", dest="eval_episodes", type=int)
    sub.add_parser("selfcheck", parents=[common], help="gradient and scheduler property suites")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    for name in ("checkpoints", "instance", "random_init"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for key in ("iterations", "workers", "eval_episodes"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    try:
        cfg, explicit = load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg, explicit)
    except (ConfigError, sim.DataError, TraceFormatError, FileNotFoundError, ValueError) as exc:
        print(f"vrstream {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
