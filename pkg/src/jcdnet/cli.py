"""Command-line entry points: ``jcdnet {synth,train,eval,ablate,gradcheck}``.

Every command checks all of its inputs before it writes anything.  Progress
goes to stderr as one JSON object per line (``{"event": ..., ...}``); the
human-readable result goes to stdout.

Exit codes: 0 success, 1 invalid input, 2 failure while running,
3 gradient check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .config import EXPERIMENTS, RunConfig, load_run_config, synthetic_run_config
from .data import (
    ConfigError, FeatureDataError, FeatureFormatError, atomic_write_bytes, load_dataset, load_manifest,
)
from .evaluation import conjoint_subset_filter, map_report
from .gradcheck import run_checks
from .inference import read_proposals, write_proposals_jsonl
from .synth import SynthConfig, synth_generate, write_dataset
from .train import format_ablation, model_config_for, predict, run_ablation, train, validate_training

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3

_INVALID = (ConfigError, FeatureFormatError, FeatureDataError, CheckpointError, FileNotFoundError,
            IsADirectoryError, ValueError, TypeError, KeyError)


class InputError(Exception):
    """Wraps any problem found while validating inputs (exit code 1)."""


def log_event(event: str, **fields) -> None:
    print(json.dumps({"event": event, **fields}, sort_keys=True), file=sys.stderr, flush=True)


def _run_config(args) -> RunConfig:
    if args.config is None and getattr(args, "preset", "full") == "synthetic":
        cfg = synthetic_run_config()
        if args.set:
            cfg = cfg.with_overrides(args.set)
    else:
        cfg = load_run_config(args.config, args.set or ())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _validated(fn):
    """Run the validation phase, turning input errors into :class:`InputError`."""
    try:
        return fn()
    except _INVALID as exc:
        raise InputError(f"{type(exc).__name__}: {exc}") from exc


# commands ---------------------------------------------------------------
def cmd_synth(args) -> int:
    def prepare():
        doc = {}
        if args.config:
            with open(args.config) as fh:
                doc = json.load(fh)
        for item in args.set or ():
            key, _, raw = item.partition("=")
            if not _:
                raise ValueError(f"override {item!r} is not key=value")
            try:
                doc[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                doc[key.strip()] = raw
        if args.seed is not None:
            doc["seed"] = args.seed
        unknown = set(doc) - set(SynthConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        cfg = SynthConfig(**doc)
        if not 0 <= args.holdout < cfg.num_videos:
            raise ConfigError(f"--holdout must lie in [0, {cfg.num_videos}), got {args.holdout}")
        return cfg

    cfg = _validated(prepare)
    result = synth_generate(cfg)
    path = write_dataset(result.dataset, args.out, args.holdout)
    atomic_write_bytes(Path(args.out) / "synth_config.json", (json.dumps(cfg.to_dict(), indent=2) + "\n").encode())
    log_event("synth_done", manifest=str(path), videos=len(result.dataset.videos))
    print(f"wrote {len(result.dataset.videos)} videos, {result.dataset.num_classes} classes to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    def prepare():
        cfg = _run_config(args)
        dataset = load_dataset(_need(args.manifest, "--manifest"))
        validate_training(cfg, dataset)
        return cfg, dataset

    cfg, dataset = _validated(prepare)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out / "config.json", (json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n").encode())
    log_event("train_start", videos=len(dataset.videos), epochs=cfg.optim.epochs, seed=cfg.seed)
    on_step = (lambda record: log_event("step", **record)) if args.verbose else None
    result = train(dataset, cfg, out_dir=out, log_fn=on_step)
    final = result.history[-1]["total"] if result.history else None
    log_event("train_done", steps=len(result.history), final_loss=final, checkpoint=str(out / "checkpoint.jcdc"))
    print(f"trained {len(result.history)} steps; checkpoint at {out / 'checkpoint.jcdc'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    def prepare():
        cfg = _run_config(args)
        manifest = load_manifest(_need(args.manifest, "--manifest"))
        dataset = load_dataset(manifest)
        # shapes are checked against what the config and the manifest imply
        if args.proposals:
            # score an existing proposal file instead of running a model
            given = read_proposals(args.proposals, list(dataset.classes))
            bad = sorted({p.class_id for p in given if not 0 <= p.class_id < dataset.num_classes})
            if bad:
                raise ConfigError(f"{args.proposals}: class ids {bad} are outside the manifest vocabulary")
            params = mcfg = None
        else:
            given = None
            mcfg = model_config_for(cfg, dataset)
            params, _, _ = load_checkpoint(_need(args.checkpoint, "--checkpoint"), expect=mcfg)
        if not dataset.ground_truth():
            raise ConfigError("manifest has no ground-truth segments to evaluate against")
        if args.subset == "conjoint":
            conjoint_subset_filter(manifest)
        return cfg, manifest, dataset, params, mcfg, given

    cfg, manifest, dataset, params, mcfg, given = _validated(prepare)
    proposals = given if given is not None else predict(params, mcfg, dataset, cfg)
    classes = list(dataset.classes)
    gts = dataset.ground_truth()
    if args.subset == "conjoint":
        manifest, proposals = conjoint_subset_filter(manifest, proposals)
        classes = list(manifest.classes)
        gts = manifest.ground_truth()
    report = map_report(proposals, gts, activitynet=args.activitynet, class_names=classes)
    out = Path(args.out)
    write_proposals_jsonl(out / "proposals.jsonl", proposals, classes)
    atomic_write_bytes(out / "report.json", (report.to_json() + "\n").encode())
    log_event("eval_done", proposals=len(proposals), **report.summary())
    print(report.format_table())
    return EXIT_OK


def cmd_ablate(args) -> int:
    def prepare():
        cfg = _run_config(args)
        train_set = load_dataset(_need(args.manifest, "--manifest"))
        eval_set = load_dataset(args.eval_manifest) if args.eval_manifest else train_set
        exps = [int(e) for e in args.experiments.split(",")]
        bad = [e for e in exps if e not in EXPERIMENTS]
        if bad:
            raise ConfigError(f"unknown experiment ids {bad}; valid ids are {sorted(EXPERIMENTS)}")
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
        for e in exps:
            validate_training(cfg.for_experiment(e), train_set)
        return cfg, train_set, eval_set, exps, seeds

    cfg, train_set, eval_set, exps, seeds = _validated(prepare)
    t0 = time.perf_counter()
    results = run_ablation(train_set, eval_set, cfg, exps, seeds)
    table = format_ablation(results, args.avg_lo, args.avg_hi)
    doc = {str(e): {str(s): results[e][s].summary() for s in sorted(results[e])} for e in sorted(results)}
    out = Path(args.out)
    atomic_write_bytes(out / "ablation.json", (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    atomic_write_bytes(out / "ablation.txt", (table + "\n").encode())
    log_event("ablate_done", experiments=exps, seeds=seeds, seconds=round(time.perf_counter() - t0, 1))
    print(table)
    return EXIT_OK


def cmd_gradcheck(args=None, checks=None) -> int:
    t0 = time.perf_counter()
    outcomes = run_checks(checks)
    failed = [o.name for o in outcomes if not o.passed]
    for o in outcomes:
        status = "ok" if o.passed else "FAIL"
        print(f"{o.name:<20} max_rel_err={o.result.max_rel_error:.3e}  tol={o.tolerance:.0e}  "
              f"checked={o.result.checked:<4d} kinks={o.result.excluded:<3d} {status}")
    seconds = time.perf_counter() - t0
    log_event("gradcheck_done", checks=len(outcomes), failed=failed, seconds=round(seconds, 2))
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}")
        return EXIT_GRADCHECK
    print(f"all {len(outcomes)} gradient checks passed in {seconds:.1f}s")
    return EXIT_OK


def _need(value, flag: str):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


# argument parsing -------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jcdnet", description="Weakly supervised temporal action localization.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (repeatable)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")

    def run_flags(p):
        p.add_argument("--manifest", metavar="PATH", help="dataset manifest JSON")
        p.add_argument("--preset", choices=("full", "synthetic"), default="full",
                       help="defaults used when no --config is given")

    p = sub.add_parser("synth", help="generate a synthetic conjoint-action dataset")
    common(p)
    p.add_argument("--holdout", type=int, default=0,
                   help="also write train/test manifests with this many test videos")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    common(p)
    run_flags(p)
    p.add_argument("--verbose", action="store_true", help="log every step to stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="localize actions and report mAP")
    common(p)
    run_flags(p)
    p.add_argument("--checkpoint", metavar="PATH", help="checkpoint written by train")
    p.add_argument("--proposals", metavar="PATH", help="score this .jsonl/.csv proposal file instead of a model")
    p.add_argument("--subset", choices=("conjoint",), help="restrict evaluation to the conjoint classes")
    p.add_argument("--activitynet", action="store_true", help="add the 0.5:0.95 IoU grid")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the ablation experiments")
    common(p)
    run_flags(p)
    p.add_argument("--eval-manifest", metavar="PATH", help="evaluation manifest (default: the training one)")
    p.add_argument("--experiments", default=",".join(str(e) for e in sorted(EXPERIMENTS)),
                   help="comma-separated experiment ids (default: all)")
    p.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    p.add_argument("--avg-lo", type=float, default=0.3, help="lower IoU of the averaged column")
    p.add_argument("--avg-hi", type=float, default=0.9, help="upper IoU of the averaged column")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and loss")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return args.func(args)
    except InputError as exc:
        log_event("invalid_input", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit code 2
        log_event("runtime_error", error=f"{type(exc).__name__}: {exc}")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
