"""Command-line entry point wiring the library into reproducible experiments.

Subcommands: gen-data, train, attack, sensitivity, sweep.  All randomness is
seeded (--seed, falling back to the SIADV_SEED environment variable), configs
and reports are JSON, and output files are written atomically.

Exit codes: 0 success, 1 gate unmet (--gate), 2 usage/IO error, 3 internal
gate failure (e.g. training below the accuracy floor).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import attacks, classifier, data, evaluation, sensitivity

SEED_ENV_VAR = "SIADV_SEED"
TRAIN_ACCURACY_GATE = 0.90

EXIT_OK = 0
EXIT_GATE = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV_VAR}={env!r} is not an integer") from None
    return 0


def _atomic_json(path, obj) -> None:
    data._atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def _load_config(path, allowed: dict[str, type], required: tuple[str, ...] = ()) -> dict:
    """Read a JSON config, rejecting unknown keys and naming missing ones."""
    if path is None:
        cfg = {}
    else:
        try:
            with open(path, "r", encoding="ascii") as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"config {path} must be a JSON object")
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(set(required) - set(cfg))
    if missing:
        raise UsageError(f"missing required config keys: {', '.join(missing)}")
    return cfg


def cmd_gen_data(args) -> int:
    seed = _resolve_seed(args.seed)
    train, test = data.make_dataset(seed, args.n_train, args.n_test, args.n_points)
    try:
        data.save_dataset(args.out, train, test, args.n_points, seed, force=args.force)
    except FileExistsError as exc:
        raise UsageError(str(exc)) from None
    print(f"wrote {len(train)} train and {len(test)} test clouds to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    try:
        train_set, test_set, _ = data.load_dataset(args.data)
    except (FileNotFoundError, NotADirectoryError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load dataset from {args.data}: {exc}") from None
    cfg = classifier.TrainConfig(epochs=args.epochs, seed=seed)
    try:
        params = classifier.train(args.arch, train_set, test_set, cfg)
    except classifier.TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    accuracy = params.train_meta["test_accuracy"]
    classifier.save_params(params, args.out)
    print(f"test_accuracy={accuracy:.4f}")
    if accuracy < TRAIN_ACCURACY_GATE:
        print(f"accuracy below the {TRAIN_ACCURACY_GATE} gate", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


_WHITE_KEYS = {"method": str, "step_size": float, "iterations": int,
               "linf_radius": float, "knn_k": int}
_BLACK_KEYS = {"step_size": float, "max_queries": int, "ordering": str, "knn_k": int}


def cmd_attack(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.mode == "black" and args.surrogate is None:
        raise UsageError("black mode requires --surrogate")
    try:
        target = classifier.load_params(args.model)
        surrogate = classifier.load_params(args.surrogate) if args.surrogate else None
        _, test_set, _ = data.load_dataset(args.data)
    except (FileNotFoundError, classifier.CheckpointError) as exc:
        raise UsageError(str(exc)) from None

    samples = test_set.samples
    if args.n_samples is not None:
        samples = samples[:args.n_samples]

    if args.mode == "white":
        raw = _load_config(args.config, _WHITE_KEYS)
        method = raw.pop("method", "tangent")
        if method not in ("tangent", "ifgm"):
            raise UsageError(f"unknown white-box method {method!r}")
        cfg = attacks.WhiteBoxConfig(**raw)
        mode = "white" if method == "tangent" else "ifgm"
        attack_name = "whitebox_tangent" if method == "tangent" else "ifgm"
        config_dict = {"method": method, **asdict(cfg)}
    else:
        raw = _load_config(args.config, _BLACK_KEYS)
        cfg = attacks.BlackBoxConfig(seed=seed, **raw)
        mode = "black"
        attack_name = f"blackbox_{cfg.ordering}"
        config_dict = asdict(cfg)

    outcomes, report = attacks.batch_attack(
        mode, target, samples, cfg, surrogate=surrogate,
        parallelism=args.jobs, defense=args.defense, seed=seed)

    doc = {
        "attack": attack_name,
        "mode": args.mode,
        "config": config_dict,
        "defense": args.defense,
        "seed": seed,
        "n_samples": len(samples),
        "aggregate": report.to_dict() if report is not None else None,
        "samples": [
            attacks.outcome_report(o, i, attack_name, config_dict)
            for i, o in enumerate(outcomes)
        ],
    }
    _atomic_json(args.report, doc)
    if report is not None:
        print(f"asr={report.asr:.4f} avg_queries={report.avg_queries:.1f} "
              f"cd_x1e4={report.mean_chamfer:.3f} hd_x1e2={report.mean_hausdorff:.3f}")
    if args.gate is not None and (report is None or report.asr < args.gate):
        print(f"ASR below the requested gate {args.gate}", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def _infer_label(args, cloud, class_names) -> tuple[int | None, str]:
    if args.label is not None:
        if args.label.isdigit():
            return int(args.label), "flag"
        if args.label in class_names:
            return class_names.index(args.label), "flag"
        raise UsageError(f"unknown label {args.label!r}")
    stem = os.path.basename(args.input)
    stem = stem[:-4] if stem.endswith(".xyz") else stem
    if "_" in stem:
        candidate = stem.split("_", 1)[1]
        if candidate in class_names:
            return class_names.index(candidate), "filename"
    return None, "predicted"


def cmd_sensitivity(args) -> int:
    try:
        params = classifier.load_params(args.model)
        cloud = data.read_xyz(args.input)
    except (FileNotFoundError, classifier.CheckpointError, data.XYZFormatError) as exc:
        raise UsageError(str(exc)) from None
    label, source = _infer_label(args, cloud, data.CLASS_NAMES)
    predicted = classifier.predict(params, cloud.points)
    if label is None:
        label = predicted
        print("warning: no ground-truth label given; scoring against the "
              "predicted class", file=sys.stderr)
    smap = sensitivity.compute_sensitivity_map(params, cloud.points, label, k=args.k)
    if predicted != label:
        print(f"warning: input is misclassified (predicted {predicted}, "
              f"label {label}); sensitivity map is all zeros", file=sys.stderr)
    data.write_ply_colored(cloud, smap.scores, args.out)
    _atomic_json(args.report, {
        "label": int(label),
        "label_source": source,
        "predicted": int(predicted),
        "scores": smap.scores.tolist(),
        "directions": smap.directions.tolist(),
        "ranking": smap.ranking.tolist(),
    })
    return EXIT_OK


def cmd_sweep(args) -> int:
    seed = _resolve_seed(args.seed)
    try:
        params = classifier.load_params(args.model)
        _, test_set, _ = data.load_dataset(args.data)
    except (FileNotFoundError, classifier.CheckpointError) as exc:
        raise UsageError(str(exc)) from None
    samples = test_set.samples
    if args.n_samples is not None:
        samples = samples[:args.n_samples]
    curve = sensitivity.perturb_sweep(params, samples, args.ordering,
                                      step=args.step, seed=seed)
    lines = ["fraction,accuracy"]
    lines += [f"{f:.4f},{acc:.6f}" for f, acc in curve]
    data._atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(curve)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapeadv")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-train", type=int, default=480)
    p.add_argument("--n-test", type=int, default=240)
    p.add_argument("--n-points", type=int, default=1024)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a classifier on a dataset directory")
    p.add_argument("--arch", choices=("A", "B"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=30)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run a batch attack and write a report")
    p.add_argument("--mode", choices=("white", "black"), required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--surrogate", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--report", required=True)
    p.add_argument("--defense", choices=("sor", "drop30", "drop50"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--n-samples", type=int, default=None)
    p.add_argument("--gate", type=float, default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sensitivity", help="export a colored sensitivity map")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--label", default=None)
    p.add_argument("--k", type=int, default=20)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("sweep", help="accuracy-vs-fraction perturbation sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ordering", choices=("descending", "ascending", "random"),
                   required=True)
    p.add_argument("--step", type=float, default=0.03)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-samples", type=int, default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
