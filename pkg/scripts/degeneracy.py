"""Strong-branching degeneracy probe.

Runs strong branching, random, most-fractional (and optionally a trained
model) on the duplicate-column instance or on a given instance file, reports
how often every strong-branching score collapsed to the epsilon floor, and
the steps at which another rule's dual bound is at least as good as strong
branching's.

    python scripts/degeneracy.py --budget 20
    python scripts/degeneracy.py --instance out/instances/inst_0000.json --model out/model.model
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from branchforge.evaluation import degeneracy_probe, weakly_dominated_at, write_trajectories
from branchforge.gcnn import load_model
from branchforge.milp import duplicate_column_instance, read_instance


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--instance", type=Path, help="instance JSON (default: the duplicate-column instance)")
    p.add_argument("--model", type=Path)
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="results/degeneracy")
    args = p.parse_args()

    inst = read_instance(args.instance) if args.instance else duplicate_column_instance()
    model = load_model(args.model) if args.model else None
    rep = degeneracy_probe(inst, args.budget, model=model, seed=args.seed)
    sb = rep.trajectories["sb"]
    dominated = {name: weakly_dominated_at(sb, tr) for name, tr in rep.trajectories.items() if name != "sb"}
    strictly = {name: [t for t in range(1, len(sb)) if tr[t] > sb[t]] for name, tr in rep.trajectories.items()
                if name != "sb"}

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(rep.trajectories, out / "trajectories.csv")
    summary = {"fraction_degenerate": rep.fraction_degenerate, "sb_calls": rep.sb_calls,
               "weakly_dominating_steps": dominated, "strictly_better_steps": strictly}
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")

    print(f"fraction_degenerate {rep.fraction_degenerate:.3f} over {rep.sb_calls} SB calls")
    print(f"{'step':>4} " + " ".join(f"{name:>10}" for name in rep.trajectories))
    for t in range(len(sb)):
        print(f"{t:>4} " + " ".join(f"{tr[t]:10.4f}" for tr in rep.trajectories.values()))
    for name in dominated:
        print(f"{name}: >= SB at {len(dominated[name])} steps, strictly better at {len(strictly[name])}")


if __name__ == "__main__":
    main()
