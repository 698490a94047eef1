"""Command line entry point: ``augflat <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import augment, duality, flatness, harness, robustness
from ._rng import child_rng, uniform_ball
from .data import Dataset, SyntheticSpec, make_synthetic
from .io import load_checkpoint, load_dataset, save_checkpoint, save_dataset


def parse_data(arg: str, split: str = "test") -> Dataset:
    """A dataset path, or ``synthetic:<kind>[:key=value,...]`` (one split of it)."""
    if arg.startswith("synthetic:"):
        parts = arg.split(":", 2)
        fields = {"kind": parts[1]}
        if len(parts) == 3 and parts[2]:
            for item in parts[2].split(","):
                k, v = item.split("=", 1)
                fields[k] = float(v) if k in ("sep", "noise") else int(v)
        train, test = make_synthetic(SyntheticSpec(**fields))
        return train if split == "train" else test
    return load_dataset(arg)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _severities(text: str) -> list[int]:
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.split(",") if t]


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    ds = parse_data(args.data, "train")
    with open(args.config) as fh:
        cfg = harness.TrainConfig.from_dict(json.load(fh))
    model = harness.build_model(json.loads(args.arch), ds)
    params, trace = harness.train(model, ds, cfg)
    save_checkpoint(args.out, model, params, cfg.dtype, cfg.seed)
    print(f"epochs={len(trace)} final_loss={trace[-1]:.6g} "
          f"train_error={robustness.error_rate(model, params, ds.x, ds.y):.2f}%")
    return 0


def cmd_run_experiment(args) -> int:
    cfg = harness.ExperimentConfig.from_json(args.config)
    res = harness.run_experiment(cfg, args.out_dir)
    for r in res.records:
        state = "FAILED " + "; ".join(k for k in r.skipped if k.startswith("error:")) if r.failed else "ok"
        print(f"{r.arm} seed={r.seed}: {state}")
    return 1 if res.failed else 0


def cmd_duality_check(args) -> int:
    model, params, _ = load_checkpoint(args.model)
    ds = parse_data(args.data)
    if args.points:
        ds = ds.subset(np.arange(min(args.points, len(ds))))
    cov = duality.sample_bound_coverage(model, params, ds, args.gamma, args.samples,
                                        args.direction, args.seed)
    # exact-output residuals of translated pairs, a handful per point
    residuals = []
    for i, x in enumerate(ds.x):
        rng = child_rng(args.seed, 10_000 + i)
        for _ in range(args.residual_pairs):
            if args.direction == "param_to_input":
                D = uniform_ball(rng, 1, model.param_count, args.gamma)[0]
                d = duality.translate_param_to_input(model, params, x, D)
            else:
                d = uniform_ball(rng, 1, model.n_inputs, args.gamma)[0]
                D = duality.translate_input_to_param(model, params, x, d)
            residuals.append(duality.duality_residual(model, params, x, D, d).residual)
    q = np.quantile(residuals, [0.5, 0.9, 0.99, 1.0]) if residuals else [np.nan] * 4
    with open(args.report, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "ratio"])
        for i, r in cov.radius.per_point_ratios:
            w.writerow([i, repr(r)])
        w.writerow([])
        w.writerow(["direction", "gamma", "bound", "samples", "violations", "max_norm",
                    "residual_q50", "residual_q90", "residual_q99", "residual_max"])
        w.writerow([cov.direction, repr(args.gamma), repr(cov.radius.radius), cov.n_samples,
                    cov.violations, repr(cov.max_norm), *[repr(float(v)) for v in q]])
    print(f"bound={cov.radius.radius:.6g} violations={cov.violations}/{cov.n_samples}")
    return 0 if cov.violations == 0 else 1


def cmd_psa_ecdf(args) -> int:
    with open(args.aug) as fh:
        cfg = augment.AugmentationConfig.from_dict(json.load(fh))
    ds = parse_data(args.data, "train")
    thresholds = _floats(args.thresholds)
    samples = augment.distance_samples(cfg, ds, args.n, args.seed)
    rep = augment.psa_report(samples, thresholds)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["aug_id", "dataset", "threshold", "ecdf"])
        for t in thresholds:
            w.writerow([samples.aug_id, samples.dataset_id, repr(t), repr(rep.ecdf_at[t])])
    print(f"gamma_A_hat={rep.gamma_A_hat:.6g} compliant={rep.compliant}")
    return 0


def cmd_flatness(args) -> int:
    model, params, _ = load_checkpoint(args.model)
    ds = parse_data(args.data, "train")
    cfg = flatness.FlatnessConfig.preset(args.preset, seed=args.seed)
    rep = flatness.flatness_report(model, params, ds, cfg)
    _write_json(args.out, rep.to_dict())
    return 0


def cmd_attack(args) -> int:
    model, params, _ = load_checkpoint(args.model)
    ds = parse_data(args.data)
    cfg = robustness.ATTACK_PRESETS[args.preset]
    err = robustness.adversarial_error(model, params, ds, cfg, args.seed)
    clean = robustness.error_rate(model, params, ds.x, ds.y)
    _write_json(args.out, {"preset": args.preset, "attack": cfg.name,
                           "clean_error": clean, "adv_error": err})
    return 0


def cmd_corrupt(args) -> int:
    ds = parse_data(args.data)
    os.makedirs(args.out_dir, exist_ok=True)
    fmt = args.format or ("csv" if args.data.endswith(".csv") else "idx")
    for kind in args.kinds.split(","):
        for s in _severities(args.severities):
            out = robustness.corrupt_dataset(ds, robustness.CorruptionSpec(kind, s), args.seed)
            name = f"{kind}-{s}" + (".csv" if fmt == "csv" else "")
            save_dataset(out, os.path.join(args.out_dir, name), fmt)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="augflat")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True, help="TrainConfig JSON")
    s.add_argument("--arch", default='{"kind": "mlp", "hidden": [64, 64]}')
    s.add_argument("--out", required=True, help="checkpoint path")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("run-experiment", help="arms x seeds study")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_run_experiment)

    s = sub.add_parser("duality-check", help="sample the compensatory radius bound")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--report", required=True)
    s.add_argument("--direction", choices=["param_to_input", "input_to_param"],
                   default="param_to_input")
    s.add_argument("--points", type=int, default=0, help="use only the first N points")
    s.add_argument("--residual-pairs", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_duality_check)

    s = sub.add_parser("psa-ecdf", help="distance eCDF of an augmentation")
    s.add_argument("--aug", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--thresholds", default="0.01,0.05,0.1,0.5")
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_psa_ecdf)

    s = sub.add_parser("flatness", help="flatness metrics of a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--preset", choices=["cifar", "inet"], default="cifar")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_flatness)

    s = sub.add_parser("attack", help="PGD adversarial error")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--preset", choices=sorted(robustness.ATTACK_PRESETS), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_attack)

    s = sub.add_parser("corrupt", help="write corrupted copies of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--kinds", default=",".join(robustness.CORRUPTIONS))
    s.add_argument("--severities", default="1..5")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--format", choices=["csv", "idx"])
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_corrupt)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"augflat {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
