#!/usr/bin/env python3
"""Calibrate on one difficulty regime and test on a harder one.

Generates a dataset with a main group and a shifted group whose difficulty
distribution differs, then compares every method's calibration in-domain
(random splits inside the main group) against the fixed out-of-domain split
(calibrate on all of main, test on all of shifted).

Example::

    python3 scripts/run_shift_study.py --trials 20 --out runs/shift
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from conscal import evaluation, records, synth


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-queries", type=int, default=500, help="queries per group")
    parser.add_argument("--k", type=int, default=100, help="samples per query")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--bins", type=int, default=12)
    parser.add_argument("--cal-frac", type=float, default=0.4)
    parser.add_argument(
        "--methods",
        default=",".join(evaluation.DEFAULT_METHODS),
        help="comma-separated method ids",
    )
    parser.add_argument("--out", default=None, help="directory for shift.json")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    config = evaluation.TrialConfig(
        n_trials=args.trials,
        cal_fraction=args.cal_frac,
        master_seed=args.seed,
        bins=args.bins,
        methods=tuple(args.methods.split(",")),
    )
    config.validate()

    generator = synth.shifted_benchmark_config(
        n_queries=args.n_queries, k=args.k, seed=args.seed
    )
    queries, generations, labels = synth.generate(generator)
    sets, diagnostics = records.group_generations(queries, generations)
    if diagnostics:
        raise SystemExit(f"generator produced invalid records: {diagnostics[0]}")
    data = evaluation.build_dataset(sets, labels)

    arms = evaluation.shift_eval(data, config, ["main"], ["shifted"])
    in_domain = arms["in_domain"].methods
    shifted = arms["shifted"].methods
    in_acc = next(iter(in_domain.values())).accuracy
    out_acc = next(iter(shifted.values())).accuracy
    print(
        f"shift study: {args.n_queries} queries per group, accuracy "
        f"{in_acc:.3f} in-domain vs {out_acc:.3f} shifted"
    )

    print(f"\n{'method':<12}{'in ece2':>10}{'out ece2':>10}{'delta':>10}{'out auroc':>11}")
    ranked = sorted(config.methods, key=lambda m: shifted[m].ece2)
    for method in ranked:
        delta = shifted[method].ece2 - in_domain[method].ece2
        auroc = "        --" if shifted[method].auroc is None else f"{shifted[method].auroc:11.4f}"
        print(
            f"{method:<12}{in_domain[method].ece2:10.4f}{shifted[method].ece2:10.4f}"
            f"{delta:+10.4f}{auroc}"
        )

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        echo = evaluation.config_echo(
            config,
            n_queries_per_group=args.n_queries,
            k=args.k,
            generator_seed=args.seed,
            train_groups=["main"],
            test_groups=["shifted"],
        )
        document = {
            "format": evaluation.REPORT_FORMAT,
            "kind": "shift",
            "config": echo,
            "in_domain": evaluation.report_document(arms["in_domain"], echo),
            "shifted": evaluation.report_document(arms["shifted"], echo),
        }
        with open(os.path.join(args.out, "shift.json"), "w", encoding="utf-8") as handle:
            json.dump(document, handle, indent=2)
            handle.write("\n")
        print(f"\nwrote shift.json to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
