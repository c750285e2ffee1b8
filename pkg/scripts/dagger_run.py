"""Dataset-aggregation run on small set-cover instances, followed by model averaging.

Runs the aggregation loop, then compares on fresh instances:
the last round's model, the average of the top-k rounds by validation reward,
the average of every round, an epoch weight average of one training run on the
final dataset, and the classical rules. Also writes the per-round
accuracy-vs-reward table with its Spearman correlation.

    python scripts/dagger_run.py --iterations 12 --instances-per-iteration 4500
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from branchforge.branching import ModelPolicy, make_policy
from branchforge.dagger import DaggerConfig, collect_expert_samples, derive_seed, run_dagger
from branchforge.ensemble import PoolEntry, epoch_weight_average, kida_average, select_top_k
from branchforge.evaluation import (
    MetricsRecord, accuracy_reward_table, offline_metrics, reward_comparison, write_metrics, write_reward_runs,
    write_reward_summary,
)
from branchforge.gcnn import TrainConfig, init_model, train
from branchforge.lp import solve_lp
from branchforge.milp import gen_set_cover

HELD_OUT_STREAM, EVAL_STREAM, EWA_STREAM = 21, 22, 23


def branching_instances(stream: int, count: int, cfg: DaggerConfig):
    """Fresh instances with a fractional root, so every policy has to decide at least once."""
    out, k = [], 0
    while len(out) < count:
        inst = gen_set_cover(derive_seed(cfg.master_seed, stream, k), cfg.n_items, cfg.n_sets, cfg.density)
        k += 1
        if any(abs(v - round(v)) > 1e-6 for v in solve_lp(inst).x):
            out.append(inst)
    return out


def ewa_model(cfg: DaggerConfig, dataset, epochs: int, last: int):
    """Train once on the final dataset and average the last ``last`` epoch checkpoints."""
    checkpoints = []

    def keep(epoch, model):
        if epoch > epochs - last:
            checkpoints.append(model.copy())

    tcfg = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, epochs=epochs,
                       seed=derive_seed(cfg.master_seed, EWA_STREAM))
    train(init_model(cfg.arch, derive_seed(cfg.master_seed, EWA_STREAM, 1)), dataset, tcfg, on_epoch=keep)
    return epoch_weight_average(checkpoints)


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=12)
    p.add_argument("--instances-per-iteration", type=int, default=4500)
    p.add_argument("--p-expert", type=float, default=0.05)
    p.add_argument("--n-validation", type=int, default=50)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--eval-instances", type=int, default=40)
    p.add_argument("--held-out-instances", type=int, default=1500)
    p.add_argument("--ewa-epochs", type=int, default=100)
    p.add_argument("--ewa-last", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--out-dir", default="results/dagger")
    args = p.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = DaggerConfig(n_iterations=args.iterations, instances_per_iteration=args.instances_per_iteration,
                       p_expert=args.p_expert, n_validation=args.n_validation, step_budget=args.budget,
                       master_seed=args.seed, jobs=args.jobs)
    t0 = time.time()
    run = run_dagger(cfg, out / "run", resume=args.resume)
    decisions = sum(r["decisions"] for r in run.log)
    expert = sum(r["expert_decisions"] for r in run.log)
    print(f"aggregation: {len(run.models)} rounds, |D|={len(run.dataset)}, expert rate {expert / decisions:.4f} "
          f"over {decisions} decisions, {time.time() - t0:.0f}s")
    for r in run.log:
        print(f"  round {r['iteration']:>2}: epochs {r['epochs']:>3} |D| {r['total_samples']:>5} "
              f"val reward {r['validation_reward']:.3f}")

    pool = [PoolEntry(m, r["validation_reward"], r["iteration"]) for m, r in zip(run.models, run.log)]
    candidates = {
        "last": run.models[-1],
        f"kida_top{args.k}": kida_average(select_top_k(pool, args.k)),
        "kida_all": kida_average(run.models),
        "ewa": ewa_model(cfg, run.dataset.samples, args.ewa_epochs, args.ewa_last),
    }
    held_out = collect_expert_samples(
        [gen_set_cover(derive_seed(args.seed, HELD_OUT_STREAM, k), cfg.n_items, cfg.n_sets, cfg.density)
         for k in range(args.held_out_instances)], args.budget, args.seed)
    eval_insts = branching_instances(EVAL_STREAM, args.eval_instances, cfg)

    factories = {name: (lambda m=m, name=name: ModelPolicy(m, name)) for name, m in candidates.items()}
    for rule in ("sb", "pseudocost", "random", "mostfrac"):
        factories[rule] = lambda rule=rule: make_policy(rule)
    table = reward_comparison(factories, eval_insts, args.budget, seeds=(0, 1, 2))
    write_reward_runs(table.runs, out / "reward_runs.csv")
    write_reward_summary(table.summary, out / "reward_summary.csv")
    records = []
    for name, m in candidates.items():
        rec = offline_metrics(m, held_out, policy_name=name, seed=args.seed)
        records.append(MetricsRecord(rec.top1, rec.top3, rec.top5, rec.mean_loss, table.summary[name]["mean"],
                                     rec.n_samples, name, args.seed))
    write_metrics(records, out / "averaging_metrics.csv")
    print(f"\n{'policy':>12} {'top1':>6} {'loss':>6} {'reward':>10}")
    for name, d in table.summary.items():
        rec = next((r for r in records if r.policy_name == name), None)
        acc = f"{rec.top1:6.3f} {rec.mean_loss:6.3f}" if rec else f"{'':>6} {'':>6}"
        print(f"{name:>12} {acc} {d['mean']:10.3f}")

    pool_models = {f"pi_{i}": m for i, m in enumerate(run.models, start=1)}
    pool_records, rho = accuracy_reward_table(pool_models, held_out, eval_insts, args.budget)
    write_metrics(pool_records, out / "pool_accuracy_reward.csv")
    (out / "pool_spearman.json").write_text(json.dumps({"spearman_top1_reward": rho}, indent=1) + "\n")
    print(f"\npool accuracy vs reward: Spearman {rho!r}")
    for r in pool_records:
        print(f"  {r.policy_name:>6} top1 {r.top1:.3f} reward {r.cum_reward:.3f}")
    print(f"total {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
