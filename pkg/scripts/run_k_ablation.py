#!/usr/bin/env python3
"""Sweep the number of samples used to build agreement targets.

The distilled calibrator trains on agreement shares computed from k sampled
responses per query.  This sweep subsamples the logged k down to each grid
value and reports how calibration degrades as sampling gets cheaper, with
token probabilities as the single-sample reference line.

Example::

    python3 scripts/run_k_ablation.py --grid 5,10,20,50,100 --out runs/ablation
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from conscal import evaluation, records, synth


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-queries", type=int, default=1000)
    parser.add_argument("--k", type=int, default=100, help="samples logged per query")
    parser.add_argument("--grid", default="5,10,20,50,100", help="target sample counts")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--bins", type=int, default=12)
    parser.add_argument("--cal-frac", type=float, default=0.4)
    parser.add_argument("--out", default=None, help="directory for ablation.json")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    grid = [int(part) for part in args.grid.split(",")]
    bad = [k for k in grid if not 1 <= k <= args.k]
    if bad:
        raise SystemExit(f"grid values must lie in [1, {args.k}]: {bad}")

    config = synth.benchmark_config(n_queries=args.n_queries, k=args.k, seed=args.seed)
    queries, generations, labels = synth.generate(config)
    sets, diagnostics = records.group_generations(queries, generations)
    if diagnostics:
        raise SystemExit(f"generator produced invalid records: {diagnostics[0]}")
    data = evaluation.build_dataset(sets, labels)
    print(f"benchmark: {data.n} queries x {args.k} samples, {args.trials} trials per point")

    rows = []
    token_reference = None
    for k_sub in grid:
        trial_config = evaluation.TrialConfig(
            n_trials=args.trials,
            cal_fraction=args.cal_frac,
            master_seed=args.seed,
            bins=args.bins,
            methods=("distilled", "token_prob") if token_reference is None else ("distilled",),
            k_subsample=k_sub,
        )
        result = evaluation.run_trials(data, trial_config)
        summary = result.methods["distilled"]
        if token_reference is None:
            token_reference = result.methods["token_prob"]
        rows.append(
            {
                "k": k_sub,
                "ece1": summary.ece1,
                "ece2": summary.ece2,
                "brier": summary.brier,
                "auroc": summary.auroc,
            }
        )

    print(f"\n{'k':>6}{'ece1':>9}{'ece2':>9}{'brier':>9}{'auroc':>9}")
    for row in rows:
        print(
            f"{row['k']:>6}{row['ece1']:9.4f}{row['ece2']:9.4f}"
            f"{row['brier']:9.4f}{row['auroc']:9.4f}"
        )
    print(
        f"{'token':>6}{token_reference.ece1:9.4f}{token_reference.ece2:9.4f}"
        f"{token_reference.brier:9.4f}{token_reference.auroc:9.4f}"
    )

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        document = {
            "n_queries": args.n_queries,
            "k_logged": args.k,
            "trials": args.trials,
            "bins": args.bins,
            "seed": args.seed,
            "sweep": rows,
            "token_prob_reference": {
                "ece1": token_reference.ece1,
                "ece2": token_reference.ece2,
                "brier": token_reference.brier,
                "auroc": token_reference.auroc,
            },
        }
        with open(os.path.join(args.out, "ablation.json"), "w", encoding="utf-8") as handle:
            json.dump(document, handle, indent=2)
            handle.write("\n")
        print(f"\nwrote ablation.json to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
