"""Offline imitation of strong branching on small set-cover instances.

Collects SB-labelled states from one seed stream, trains the GCNN, then reports
held-out top-k accuracy against the uniform baseline E[1/c] and the online
agreement of the trained model when it drives the search itself.

    python scripts/imitation.py --train-instances 15000 --test-instances 5000 --epochs 60
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from branchforge.dagger import collect_expert_samples, derive_seed
from branchforge.evaluation import offline_metrics, online_accuracy_many, uniform_baseline, write_metrics
from branchforge.gcnn import ArchConfig, TrainConfig, init_model, save_model, train
from branchforge.milp import gen_set_cover

TRAIN_STREAM, TEST_STREAM, ONLINE_STREAM = 11, 12, 13


def instances(stream: int, count: int, seed: int, n_items: int, n_sets: int, density: float):
    return [gen_set_cover(derive_seed(seed, stream, k), n_items, n_sets, density) for k in range(count)]


def run(args) -> dict:
    fam = (args.n_items, args.n_sets, args.density)
    t0 = time.time()
    train_set = collect_expert_samples(instances(TRAIN_STREAM, args.train_instances, args.seed, *fam), args.budget, args.seed)
    test_set = collect_expert_samples(instances(TEST_STREAM, args.test_instances, args.seed, *fam), args.budget, args.seed + 1)
    t_collect = time.time() - t0

    model = init_model(ArchConfig(embed_dim=args.embed_dim), derive_seed(args.seed, 0))
    model, losses = train(model, train_set, TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                                                        seed=derive_seed(args.seed, 1)))
    rec = offline_metrics(model, test_set, policy_name="gcnn", seed=args.seed)
    base = uniform_baseline(test_set)
    online = online_accuracy_many(model, instances(ONLINE_STREAM, args.online_instances, args.seed, *fam),
                                  args.budget, args.seed)
    summary = {
        "train_samples": len(train_set), "test_samples": len(test_set),
        "top1": rec.top1, "top3": rec.top3, "top5": rec.top5, "test_loss": rec.mean_loss,
        "train_loss_first": losses[0], "train_loss_last": losses[-1],
        "uniform_baseline": base, "top1_over_baseline": rec.top1 / base,
        "online_agreement": online,
        "collect_seconds": round(t_collect, 1), "total_seconds": round(time.time() - t0, 1),
    }
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(model, out / "model.model")
        write_metrics([rec], out / "metrics.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return summary


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-instances", type=int, default=15000)
    p.add_argument("--test-instances", type=int, default=5000)
    p.add_argument("--online-instances", type=int, default=200)
    p.add_argument("--n-items", type=int, default=10)
    p.add_argument("--n-sets", type=int, default=20)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--out-dir", default="results/imitation")
    for k, v in run(p.parse_args()).items():
        print(f"{k:>20}: {v}")


if __name__ == "__main__":
    main()
