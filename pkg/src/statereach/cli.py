"""Command-line pipeline: calibrate, explore, train-llc, optimize, landscape, report.

Every artifact is written next to a manifest that records its content hash,
the producing command, the effective config and its upstream hashes.
Settings come from flags, then an optional ``key = value`` config file,
then built-in defaults.  Exit codes: 0 success, 1 runtime failure,
2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, SimulationDiverged, TrainingError, UsageError

log = logging.getLogger("statereach")

ARTIFACTS_ENV = "STATEREACH_ARTIFACTS"
WORKERS_ENV = "STATEREACH_WORKERS"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
MODES = ("baseline", "llc_naive", "llc_contact")
# settings that steer where things go or how fast, not what is computed
NON_CONFIG_KEYS = {"config", "artifacts", "workers", "verbose", "command", "func", "out"}


class CliError(Exception):
    pass


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _artifact_root(args) -> Path:
    return Path(args.artifacts or os.environ.get(ARTIFACTS_ENV, "artifacts"))


def _effective_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in NON_CONFIG_KEYS}


def _out_path(args, kind, name) -> Path:
    p = Path(args.out) if args.out else _artifact_root(args) / kind / name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _seeds(text) -> list[int]:
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None


def _load_ranges(path):
    from .sim.state import StateRanges

    return StateRanges.from_dict(json.loads(Path(path).read_text()))


def _make_env(env_id):
    from .sim import make_env

    return make_env(env_id)


# ---------------------------------------------------------------- commands


def cmd_calibrate(args, argv):
    from .manifest import write_manifest
    from .sim import calibrate_state_ranges

    env = _make_env(args.env)
    ranges = calibrate_state_ranges(env, args.steps, args.seed)
    out = _out_path(args, "ranges", f"{args.env}_s{args.seed}.json")
    out.write_text(json.dumps(ranges.to_dict(), indent=2, sort_keys=True))
    write_manifest(out, "state_ranges", argv, _effective_config(args))
    print(f"ranges -> {out}")
    return out


def cmd_explore(args, argv):
    from .explore import ExplorationConfig, coverage_report, run_exploration
    from .manifest import write_manifest
    from .sim import calibrate_state_ranges

    env = _make_env(args.env)
    mode = {"contact": "contact_based", "naive": "naive"}[args.mode]
    upstream = []
    if args.ranges:
        ranges = _load_ranges(args.ranges)
        upstream.append(args.ranges)
    else:
        ranges = calibrate_state_ranges(env, seed=args.seed)
    cfg = ExplorationConfig(mode=mode, K=args.K, N=args.budget, seed=args.seed)
    buf = run_exploration(env, cfg, ranges)
    buf.metadata["ranges"] = ranges.to_dict()
    out = _out_path(args, "buffers", f"{args.env}_{args.mode}_N{args.budget}_s{args.seed}.tsv")
    buf.save(out)
    write_manifest(out, "exploration_buffer", argv, _effective_config(args), upstream)
    rep = coverage_report(buf, env, ranges, args.bins)
    up = float(rep.points[:, 3].mean())
    print(f"buffer -> {out}")
    print(f"coverage: episodes={len(buf)} transitions={buf.n_transitions} "
          f"occupancy={rep.occupancy} upright_fraction={up:.3f}")
    return out


def cmd_train_llc(args, argv):
    from .explore import ExplorationBuffer
    from .llc import LlcTrainConfig, train_llcs
    from .manifest import ArtifactManifest, write_manifest
    from .sim.state import StateRanges

    ArtifactManifest.read(args.buffer)  # refuse buffers without provenance
    buf = ExplorationBuffer.load(args.buffer)
    env_id = buf.metadata.get("env_id")
    if args.env and args.env != env_id:
        raise ConfigError(f"buffer was collected on {env_id!r}, not {args.env!r}")
    env = _make_env(env_id)
    upstream = [args.buffer]
    if args.ranges:
        ranges = _load_ranges(args.ranges)
        upstream.append(args.ranges)
    elif buf.metadata.get("ranges"):
        ranges = StateRanges.from_dict(buf.metadata["ranges"])
    else:
        raise ConfigError("no StateRanges in the buffer metadata; pass --ranges")
    cfg = LlcTrainConfig(H_max=args.hmax, M=args.M, N=args.N, seed=args.seed,
                         target_mode="single" if args.single_target else "trajectory",
                         ablation_feasible_only=args.feasible_only,
                         pretrain_epochs=args.pretrain_epochs)
    rows = []

    def progress(stats, _llc):
        rows.append(stats)
        log.info("H=%d iter=%d tracking_error=%.5f", stats.H, stats.iteration, stats.tracking_error)

    llc, _ = train_llcs(env, buf, ranges, cfg, callback=progress)
    llc.metadata["exploration_mode"] = buf.metadata.get("config", {}).get("mode")
    llc.metadata["buffer_digest"] = buf.digest()
    mode_tag = {"contact_based": "contact", "naive": "naive"}.get(llc.metadata["exploration_mode"], "x")
    out = _out_path(args, "llc", f"{env_id}_{mode_tag}_H{args.hmax}_s{args.seed}")
    llc.save(out)
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["H", "iteration", "mean_return", "tracking_error", "positive_samples", "states"])
        for s in rows:
            w.writerow([s.H, s.iteration, repr(s.mean_return), repr(s.tracking_error),
                        s.positive_samples, s.states])
    write_manifest(out, "llc_set", argv, _effective_config(args), upstream)
    print(f"llc -> {out} ({args.hmax} policies)")
    return out


def _resolve_llc(args, env):
    """(action space mode, LlcSet or None, upstream list) for --mode/--llc/--H."""
    from .llc import LlcSet
    from .manifest import ArtifactManifest

    if args.mode == "baseline":
        return "torque", None, []
    if not args.llc:
        raise ConfigError(f"--mode {args.mode} needs --llc DIR")
    ArtifactManifest.read(args.llc)
    llc = LlcSet.load(args.llc, env.spec)
    want = "naive" if args.mode == "llc_naive" else "contact_based"
    got = llc.metadata.get("exploration_mode")
    if got is not None and got != want:
        raise ConfigError(f"--mode {args.mode} but the LLC set was trained on {got} exploration data")
    H = args.H if args.H is not None else llc.H_max
    if not 1 <= H <= llc.H_max:
        raise ConfigError(f"--H {H} does not fit the LLC set (H_max={llc.H_max})")
    args.H = H
    return "llc", llc, [args.llc]


def _write_decision(path, decision):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in decision:
            w.writerow([repr(float(x)) for x in row])


def _read_decision(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(x) for x in row] for row in csv.reader(fh) if row])


def cmd_optimize(args, argv):
    from .manifest import write_manifest
    from .optimize import CmaConfig, MpcConfig, PpoConfig, cma_es_offline, ppo_hlc, run_mpc
    from .sim import make_task

    env = _make_env(args.env)
    task = make_task(env.spec, args.task)
    mode, llc, upstream = _resolve_llc(args, env)
    tag = f"{args.optimizer}_{args.env}_{args.task}_{args.mode}" + (f"_H{args.H}" if mode == "llc" else "")
    outdir = Path(args.out) if args.out else _artifact_root(args) / "runs" / tag
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for seed in _seeds(args.seeds):
        path = outdir / f"seed{seed}.csv"
        extra_files = []
        if args.optimizer == "cma":
            cfg = CmaConfig(horizon_seconds=args.horizon, popsize=args.popsize,
                            iterations=args.iterations, H=args.H if mode == "llc" else None,
                            seed=seed, workers=args.workers)
            decision, rec = cma_es_offline(env, task, mode, llc, cfg, action_space=args.mode)
            rec.save(path)
            _write_decision(outdir / f"seed{seed}.decision.csv", decision)
            extra_files.append(outdir / f"seed{seed}.decision.csv")
        elif args.optimizer == "mpc":
            cfg = MpcConfig(N=args.rollouts, T=args.plan_steps, H=args.H if mode == "llc" else None, seed=seed)
            _, _, rec = run_mpc(env, task, mode, llc, cfg, n_steps=args.steps, action_space=args.mode)
            rec.save(path)
        else:
            cfg = PpoConfig(total_steps=args.ppo_steps, H=args.H if mode == "llc" else None, seed=seed)
            policy, rec = ppo_hlc(env, task, mode, llc, cfg, action_space=args.mode)
            rec.save(path)
            policy.save(outdir / f"seed{seed}.policy.npz")
            extra_files.append(outdir / f"seed{seed}.policy.npz")
        cfg_dict = dict(_effective_config(args), seed=seed)
        write_manifest(path, "run_record", argv, cfg_dict, upstream)
        for f in extra_files:
            write_manifest(f, "run_output", argv, cfg_dict, upstream)
        final = rec.final_return if rec.rows else float("nan")
        print(f"{args.optimizer} seed={seed} final_mean_return={final:.4f} budget={rec.budget} -> {path}")
        written.append(path)
    return written


def cmd_landscape(args, argv):
    from .landscape import PolicyObjective, SliceConfig, TrajectoryObjective, evaluate_slice, make_slice_spec
    from .manifest import write_manifest
    from .nn import GaussianPolicy
    from .optimize import RunRecord, agent_from_record
    from .sim import make_task

    env = _make_env(args.env)
    task = make_task(env.spec, args.task)
    mode, llc, upstream = _resolve_llc(args, env)
    cfg = SliceConfig(args.resolution, args.extent, args.episodes, args.seed)
    rng = np.random.default_rng(args.seed)
    if args.decision:
        decision = _read_decision(args.decision)
        obj = TrajectoryObjective(env, task, mode, llc, args.H, len(decision))
        center = obj.space.to_coords(decision)
        upstream.append(args.decision)
    elif args.policy:
        if not args.record:
            raise ConfigError("--policy needs --record (the PPO run record) for its observation normalizer")
        policy = GaussianPolicy.load(args.policy)
        agent = agent_from_record(env, RunRecord.load(args.record), mode, llc)
        obj = PolicyObjective(env, task, policy, agent, args.episodes)
        center = policy.flat_parameters()
        upstream += [args.policy, args.record]
    else:
        raise ConfigError("landscape needs --decision (trajectory slice) or --policy (policy slice)")
    spec = make_slice_spec(center, rng, cfg)
    grid = evaluate_slice(spec, obj, args.workers)
    grid.meta.update({"env_id": args.env, "task_id": args.task, "mode": args.mode, "H": args.H})
    out = _out_path(args, "landscapes", f"{args.env}_{args.task}_{args.mode}_s{args.seed}.csv")
    grid.save(out)
    write_manifest(out, "slice_grid", argv, _effective_config(args), upstream)
    from .landscape import basin_width

    print(f"slice -> {out}; center={grid.center_value:.4f} basin_width(0.9)={basin_width(grid, 0.9)}")
    return out


def cmd_report(args, argv):
    from .manifest import write_manifest
    from .optimize import RunRecord, aggregate_scores, write_score_table

    files = []
    for entry in args.records:
        p = Path(entry)
        files += sorted(p.rglob("seed*.csv")) if p.is_dir() else [p]
    files = [f for f in files if not f.name.endswith(".decision.csv")]
    if not files:
        raise ConfigError("no run records found")
    records = [RunRecord.load(f) for f in files]
    table = aggregate_scores(records)
    out = _out_path(args, "reports", "scores.csv")
    write_score_table(table, out)
    write_manifest(out, "score_table", argv, _effective_config(args), files)
    for row in table:
        print(f"{row['optimizer']:>4} {row['action_space']:>12} H={row['H']} "
              f"score={row['score']:.3f} runs={row['n_runs']} budget={row['mean_budget']:.0f}")
    if args.coverage:
        from .explore import ExplorationBuffer, coverage_report
        from .sim.state import StateRanges

        buf = ExplorationBuffer.load(args.coverage)
        env = _make_env(buf.metadata["env_id"])
        rep = coverage_report(buf, env, StateRanges.from_dict(buf.metadata["ranges"]), args.bins)
        cov = out.with_name(Path(args.coverage).stem + "_coverage.csv")
        rep.save_csv(cov)
        write_manifest(cov, "coverage_scatter", argv, _effective_config(args), [args.coverage])
        print(f"coverage -> {cov} (occupancy {rep.occupancy})")
    print(f"scores -> {out}")
    return out


def cmd_verify(args, argv):
    from .manifest import verify_chain

    for p in verify_chain(args.artifact):
        print(f"ok {p}")


# ------------------------------------------------------------------ parser


def _add_llc_args(p):
    p.add_argument("--env", required=True)
    p.add_argument("--task", default="balance")
    p.add_argument("--mode", choices=MODES, default="baseline")
    p.add_argument("--llc", help="LLC set directory (llc_* modes)")
    p.add_argument("--H", type=int, default=None, help="target horizon (default: the set's H_max)")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags take precedence")
    common.add_argument("--artifacts", help=f"artifact root (env {ARTIFACTS_ENV}, default ./artifacts)")
    common.add_argument("--workers", type=int, default=None, help=f"worker processes (env {WORKERS_ENV})")
    common.add_argument("--out", help="explicit output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="statereach", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("calibrate", parents=[common], help="calibrate joint ranges")
    p.add_argument("--env", required=True)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)
    subs["calibrate"] = p

    p = sub.add_parser("explore", parents=[common], help="collect random exploration data")
    p.add_argument("--env", required=True)
    p.add_argument("--mode", choices=("contact", "naive"), default="contact")
    p.add_argument("--budget", type=int, default=100_000)
    p.add_argument("--K", type=int, default=None, help="episode length (default 5 contact, 100 naive)")
    p.add_argument("--ranges", help="StateRanges JSON from 'calibrate' (default: calibrate now)")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_explore)
    subs["explore"] = p

    p = sub.add_parser("train-llc", parents=[common], help="train low-level controllers")
    p.add_argument("--buffer", required=True)
    p.add_argument("--env", default=None, help="optional check against the buffer's env")
    p.add_argument("--ranges", default=None)
    p.add_argument("--hmax", type=int, default=5)
    p.add_argument("--M", type=int, default=50, help="PPO iterations per H")
    p.add_argument("--N", type=int, default=1500, help="actions per iteration")
    p.add_argument("--pretrain-epochs", type=int, default=5)
    p.add_argument("--single-target", action="store_true")
    p.add_argument("--feasible-only", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_llc)
    subs["train-llc"] = p

    p = sub.add_parser("optimize", parents=[common], help="run a movement optimizer")
    p.add_argument("--optimizer", choices=("cma", "mpc", "ppo"), required=True)
    _add_llc_args(p)
    p.add_argument("--seeds", default="0", help="comma-separated")
    p.add_argument("--horizon", type=float, default=4.0, help="CMA-ES trajectory seconds")
    p.add_argument("--popsize", type=int, default=16)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--rollouts", type=int, default=250, help="MPC rollouts")
    p.add_argument("--plan-steps", type=int, default=20, help="MPC horizon in control steps")
    p.add_argument("--steps", type=int, default=None, help="MPC episode steps (default: task limit)")
    p.add_argument("--ppo-steps", type=int, default=300_000)
    p.set_defaults(func=cmd_optimize)
    subs["optimize"] = p

    p = sub.add_parser("landscape", parents=[common], help="random 2D objective slice")
    _add_llc_args(p)
    p.add_argument("--decision", help="decision CSV from 'optimize --optimizer cma'")
    p.add_argument("--policy", help="policy .npz from 'optimize --optimizer ppo'")
    p.add_argument("--record", help="run record CSV of that policy")
    p.add_argument("--resolution", type=int, default=41)
    p.add_argument("--extent", type=float, default=1.0)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_landscape)
    subs["landscape"] = p

    p = sub.add_parser("report", parents=[common], help="normalized score table and exports")
    p.add_argument("--records", nargs="+", required=True, help="run record files or directories")
    p.add_argument("--coverage", help="exploration buffer to export as a coverage scatter")
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_report)
    subs["report"] = p

    p = sub.add_parser("verify", parents=[common], help="check an artifact's manifest chain")
    p.add_argument("artifact")
    p.set_defaults(func=cmd_verify)
    subs["verify"] = p
    return parser, subs


def _apply_config_file(parser, subs, argv):
    command = next((a for a in argv if not a.startswith("-")), None)
    path = None
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            path = argv[k + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    if path is None or command not in subs:
        return
    values = read_config_file(path)
    sp = subs[command]
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in actions or key in NON_CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown setting {key!r} for '{command}'")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                value = act.type(raw) if act.type else raw
            except ValueError:
                raise ConfigError(f"{path}: bad value {raw!r} for {key!r}") from None
            if act.choices and value not in act.choices:
                raise ConfigError(f"{path}: {key}={raw!r} not in {list(act.choices)}")
            defaults[key] = value
        act.required = False
    sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        _apply_config_file(parser, subs, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is None:
        try:
            args.workers = int(os.environ.get(WORKERS_ENV, "1"))
        except ValueError:
            print(f"error: {WORKERS_ENV} must be an integer", file=sys.stderr)
            return EXIT_USAGE
    try:
        args.func(args, ["statereach", *argv])
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, SimulationDiverged, RuntimeError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
