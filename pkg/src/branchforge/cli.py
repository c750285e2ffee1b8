"""Command-line entry point.

    branchforge generate --family set_cover --count 20 --out-dir inst
    branchforge solve --instance inst/instances/inst_0000.json --policy sb --budget 100 --seed 7
    branchforge dagger --iterations 10 --out-dir run
    branchforge kida --pool run/pool.json --k 3 --out-dir avg
    branchforge eval degeneracy --duplicate-column --out-dir probe

Exit codes: 0 success, 1 usage error, 2 runtime error. All randomness flows
from ``--seed`` (falling back to ``$BRANCHFORGE_SEED``, then 0).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .bnb import run_bnb, write_trace
from .branching import make_policy
from .dagger import DaggerConfig, collect_expert_samples, derive_seed, run_dagger
from .ensemble import DEFAULT_TOP_K, epoch_weight_average, kida_average, read_manifest, select_top_k
from .evaluation import (
    degeneracy_probe, offline_metrics, online_accuracy, reward_comparison, write_metrics, write_online,
    write_reward_runs, write_reward_summary, write_trajectories,
)
from .features import read_samples, write_samples
from .gcnn import ArchConfig, TrainConfig, init_model, load_model, save_model, train
from .milp import duplicate_column_instance, gen_assignment, gen_set_cover, read_instance, write_instance

SEED_ENV = "BRANCHFORGE_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV} or 0)")
    p.add_argument("--out-dir", type=Path, default=Path("out"), help="every output goes under this directory")
    p.add_argument("--jobs", type=int, default=1, help="episode-level worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _add_family(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=("set_cover", "assignment"), default="set_cover")
    p.add_argument("--n-items", type=int, default=10)
    p.add_argument("--n-sets", type=int, default=20)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--n-bins", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="branchforge", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", parents=[common], help="write random instances as JSON")
    _add_family(p)
    p.add_argument("--count", type=int, default=10)

    p = sub.add_parser("solve", parents=[common], help="one branch-and-bound run and its trace")
    p.add_argument("--instance", type=Path, required=True)
    p.add_argument("--policy", default="sb", help="sb, pseudocost, random, mostfrac, model:<path>, mixture:<path>:<p>")
    p.add_argument("--budget", type=int, default=100)

    p = sub.add_parser("dagger", parents=[common], help="dataset-aggregation training run")
    d = DaggerConfig()
    p.add_argument("--iterations", type=int, default=d.n_iterations)
    p.add_argument("--p-expert", type=float, default=d.p_expert)
    p.add_argument("--epochs-major", type=int, default=d.epochs_major)
    p.add_argument("--epochs-minor", type=int, default=d.epochs_minor)
    p.add_argument("--major-every", type=int, default=d.major_every)
    p.add_argument("--instances-per-iteration", type=int, default=d.instances_per_iteration)
    p.add_argument("--budget", type=int, default=d.step_budget)
    p.add_argument("--fresh-init", action="store_true", help="train every round from a new initialization")
    p.add_argument("--label-all-states", action="store_true")
    p.add_argument("--per-episode-coin", action="store_true")
    p.add_argument("--n-items", type=int, default=d.n_items)
    p.add_argument("--n-sets", type=int, default=d.n_sets)
    p.add_argument("--density", type=float, default=d.density)
    p.add_argument("--n-validation", type=int, default=d.n_validation)
    p.add_argument("--embed-dim", type=int, default=d.embed_dim)
    p.add_argument("--dropout", type=float, default=d.dropout_rate)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("kida", parents=[common], help="average the top-k models of a pool")
    p.add_argument("--pool", type=Path, required=True, help="pool manifest (JSON)")
    p.add_argument("--k", type=int, default=DEFAULT_TOP_K)
    p.add_argument("--all", action="store_true", help="average the whole pool instead of the top k")

    p = sub.add_parser("ewa", parents=[common], help="average checkpoints of one training run")
    p.add_argument("--models", type=Path, nargs="+", required=True)

    p = sub.add_parser("train", parents=[common], help="offline imitation of strong branching")
    p.add_argument("--samples", type=Path, nargs="*", default=[], help="labelled sample files; collected if omitted")
    _add_family(p)
    p.add_argument("--collect-instances", type=int, default=100)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--checkpoint-every", type=int, default=0, help="save a checkpoint every k epochs (0: off)")

    p = sub.add_parser("eval", parents=[common], help="metrics, rewards and the degeneracy probe")
    p.add_argument("mode", choices=("offline", "online", "reward", "degeneracy"))
    p.add_argument("--model", type=Path)
    p.add_argument("--samples", type=Path, nargs="*", default=[])
    p.add_argument("--instances", type=Path, nargs="*", default=[], help="instance files or directories")
    p.add_argument("--policies", nargs="*", default=["sb", "random", "mostfrac"])
    p.add_argument("--seeds", type=int, nargs="*", default=None)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--duplicate-column", action="store_true", help="probe the crafted duplicate-column instance")
    return parser


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"${SEED_ENV} must be an integer, got {env!r}") from None


def _instance_paths(paths: Sequence[Path]) -> list[Path]:
    out = []
    for p in paths:
        out.extend(sorted(p.rglob("*.json")) if p.is_dir() else [p])
    return out


def _make_instance(args, seed: int):
    if args.family == "set_cover":
        return gen_set_cover(seed, args.n_items, args.n_sets, args.density)
    return gen_assignment(seed, args.n_items, args.n_bins)


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


def _write_config(out: Path, args) -> None:
    cfg = {k: _jsonable(v) for k, v in vars(args).items() if k != "verbose"}
    (out / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def _policy(spec: str):
    # malformed names are usage errors; unreadable model files are runtime errors
    try:
        return make_policy(spec)
    except ValueError as exc:
        if str(exc).startswith(("unknown policy", "mixture policy needs")):
            raise UsageError(str(exc)) from None
        raise


def cmd_generate(args, out: Path) -> None:
    inst_dir = out / "instances"
    inst_dir.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        inst = _make_instance(args, derive_seed(args.seed, k))
        write_instance(inst, inst_dir / f"inst_{k:04d}.json")


def cmd_solve(args, out: Path) -> None:
    trace = run_bnb(read_instance(args.instance), _policy(args.policy), args.budget, args.seed)
    write_trace(trace, out / "trace.csv")
    print(f"reward {trace.reward!r} incumbent {trace.incumbent!r} steps_to_close {trace.steps_to_close}")


def cmd_dagger(args, out: Path) -> None:
    config = DaggerConfig(
        n_iterations=args.iterations, p_expert=args.p_expert, epochs_major=args.epochs_major,
        epochs_minor=args.epochs_minor, major_every=args.major_every,
        instances_per_iteration=args.instances_per_iteration, step_budget=args.budget,
        warm_start=not args.fresh_init, master_seed=args.seed, label_all_states=args.label_all_states,
        per_episode_coin=args.per_episode_coin, n_items=args.n_items, n_sets=args.n_sets, density=args.density,
        n_validation=args.n_validation, embed_dim=args.embed_dim, dropout_rate=args.dropout,
        learning_rate=args.lr, batch_size=args.batch_size, jobs=args.jobs,
    )
    run = run_dagger(config, out, resume=args.resume)
    last = run.log[-1]
    print(f"{len(run.models)} models, |D|={last['total_samples']}, last validation reward {last['validation_reward']!r}")


def cmd_kida(args, out: Path) -> None:
    pool = read_manifest(args.pool)
    models = [e.model for e in pool] if args.all else select_top_k(pool, args.k)
    save_model(kida_average(models), out / "kida.model")


def cmd_ewa(args, out: Path) -> None:
    save_model(epoch_weight_average([load_model(p) for p in args.models]), out / "ewa.model")


def cmd_train(args, out: Path) -> None:
    if args.samples:
        samples = [s for p in args.samples for s in read_samples(p)]
    else:
        insts = [_make_instance(args, derive_seed(args.seed, 1, k)) for k in range(args.collect_instances)]
        samples = collect_expert_samples(insts, args.budget, args.seed)
        write_samples(samples, out / "train.samples")
    arch = ArchConfig(embed_dim=args.embed_dim, dropout_rate=args.dropout)
    tcfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       seed=derive_seed(args.seed, 3))
    ckpt_dir = out / "checkpoints"

    def on_epoch(epoch, model):
        if args.checkpoint_every and epoch % args.checkpoint_every == 0:
            ckpt_dir.mkdir(exist_ok=True)
            save_model(model, ckpt_dir / f"epoch_{epoch:04d}.model")

    model, losses = train(init_model(arch, derive_seed(args.seed, 4)), samples, tcfg, on_epoch)
    save_model(model, out / "model.model")
    (out / "losses.csv").write_text("epoch,loss\n" + "".join(f"{e},{l!r}\n" for e, l in enumerate(losses, 1)))
    print(f"trained on {len(samples)} samples, final loss {losses[-1]:.4f}")


def cmd_eval(args, out: Path) -> None:
    need_model = args.mode in ("offline", "online")
    if need_model and args.model is None:
        raise UsageError(f"eval {args.mode} needs --model")
    model = load_model(args.model) if args.model is not None else None
    if args.mode == "offline":
        if not args.samples:
            raise UsageError("eval offline needs --samples")
        samples = [s for p in args.samples for s in read_samples(p)]
        rec = offline_metrics(model, samples, policy_name=str(args.model), seed=args.seed)
        write_metrics([rec], out / "metrics.csv")
        print(f"top1 {rec.top1:.4f} top3 {rec.top3:.4f} top5 {rec.top5:.4f} loss {rec.mean_loss:.4f}")
        return
    if args.mode == "degeneracy":
        if args.duplicate_column:
            inst = duplicate_column_instance()
        else:
            paths = _instance_paths(args.instances)
            if len(paths) != 1:
                raise UsageError("eval degeneracy needs exactly one instance or --duplicate-column")
            inst = read_instance(paths[0])
        rep = degeneracy_probe(inst, args.budget, model=model, seed=args.seed)
        write_trajectories(rep.trajectories, out / "trajectories.csv")
        summary = {k: v for k, v in asdict(rep).items() if k != "trajectories"}
        (out / "degeneracy.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        print(f"fraction_degenerate {rep.fraction_degenerate!r} over {rep.sb_calls} SB calls")
        return
    paths = _instance_paths(args.instances)
    if not paths:
        raise UsageError(f"eval {args.mode} needs --instances")
    instances = [read_instance(p) for p in paths]
    if args.mode == "online":
        if len(instances) != 1:
            raise UsageError("eval online takes exactly one instance")
        acc = online_accuracy(model, instances[0], args.budget, args.seed)
        write_online(acc.series, out / "online_acc.csv")
        print(f"online agreement {acc.mean!r} over {len(acc.series)} steps")
        return
    # reward
    specs = list(args.policies)
    if model is not None:
        specs.append(f"model:{args.model}")
    for spec in specs:
        _policy(spec)  # fail early on bad names
    seeds = args.seeds if args.seeds else [args.seed]
    table = reward_comparison({s: (lambda s=s: make_policy(s)) for s in specs}, instances, args.budget, seeds)
    write_reward_runs(table.runs, out / "reward_runs.csv")
    write_reward_summary(table.summary, out / "reward_summary.csv")
    for name, d in table.summary.items():
        print(f"{name}: {d['mean']:.4f} +- {d['std']:.4f} (n={d['n']}, missing={d['missing']})")


COMMANDS = {
    "generate": cmd_generate, "solve": cmd_solve, "dagger": cmd_dagger, "kida": cmd_kida,
    "ewa": cmd_ewa, "train": cmd_train, "eval": cmd_eval,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.seed = resolve_seed(args.seed)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
    except UsageError:
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out: Path = args.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_config(out, args)
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        sys.stderr.write(f"branchforge {args.command}: error: {exc}\n")
        return 1
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        sys.stderr.write(f"branchforge {args.command}: {type(exc).__name__}: {exc}\n")
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
