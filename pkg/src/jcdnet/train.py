"""Training loop, evaluation and the ablation runner."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import ConfigError, Dataset, atomic_write_bytes, build_batch, sample_snippets
from .evaluation import map_report
from .inference import localize
from .losses import total_loss
from .model import ModelConfig, forward, init_params
from .optim import AdamState, adam_step
from .rng import Xoshiro256


def model_config_for(cfg: RunConfig, dataset: Dataset) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        num_classes=dataset.num_classes,
        feature_dim=dataset.feature_dim,
        hidden_dim=m.hidden_dim,
        snippets_per_video=m.snippets_per_video,
        conv_kernel=m.conv_kernel,
        dropout_rate=m.dropout_rate,
        use_cad=cfg.flags.use_cad,
        use_tea=cfg.flags.use_tea,
    )


def validate_training(cfg: RunConfig, dataset: Dataset) -> None:
    cfg.flags.validate()
    if not dataset.videos:
        raise ConfigError("dataset has no videos")
    unlabeled = [v.video_id for v in dataset.videos if not v.classes]
    if unlabeled:
        raise ConfigError(f"training videos without a foreground label: {unlabeled[:5]}")
    if cfg.optim.epochs < 0 or cfg.optim.batch_size < 1:
        raise ConfigError("epochs must be >= 0 and batch_size >= 1")
    # fails early if the pair requirement cannot be met
    build_batch(dataset, Xoshiro256(0), cfg.optim.batch_size, cfg.optim.num_pairs)


@dataclass
class TrainResult:
    params: dict
    model_config: ModelConfig
    history: list = field(default_factory=list)


def train(dataset: Dataset, cfg: RunConfig, out_dir=None, log_fn=None) -> TrainResult:
    """Train from scratch; deterministic given ``cfg.seed``.

    With ``out_dir`` the checkpoint is rewritten after every epoch and the
    per-step loss log goes to ``train_log.jsonl``.
    """
    validate_training(cfg, dataset)
    rng = Xoshiro256(cfg.seed)
    mcfg = model_config_for(cfg, dataset)
    params = init_params(mcfg, rng, dtype=np.float32)
    names = list(params)
    state = AdamState.for_params(params.values(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
    steps_per_epoch = max(1, math.ceil(len(dataset.videos) / cfg.optim.batch_size))

    out_dir = Path(out_dir) if out_dir is not None else None
    log_lines = []
    history = []
    step = 0
    for epoch in range(cfg.optim.epochs):
        for _ in range(steps_per_epoch):
            batch = build_batch(dataset, rng, cfg.optim.batch_size, cfg.optim.num_pairs)
            xs, labels = [], []
            for i in batch.indices:
                v = dataset.videos[i]
                x, _ = sample_snippets(v.features, mcfg.snippets_per_video, "train", rng)
                xs.append(x)
                labels.append(v.label)
            x = ag.Tensor(np.stack(xs).astype(np.float32))
            out = forward(x, mcfg, params, mode="train", rng=rng)
            loss, comps = total_loss(out, np.stack(labels), batch.pairs, cfg.loss, cfg.flags)
            for p in params.values():
                p.grad = None
            ag.backward(loss)
            adam_step([params[n] for n in names], [params[n].grad for n in names], state)
            step += 1
            record = {"step": step, "epoch": epoch + 1, **comps, "total": loss.item()}
            history.append(record)
            log_lines.append(json.dumps(record, sort_keys=True))
            if log_fn is not None:
                log_fn(record)
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint.jcdc", params, mcfg, {"epoch": epoch + 1, "step": step})
            atomic_write_bytes(out_dir / "train_log.jsonl", ("\n".join(log_lines) + "\n").encode())
    if out_dir is not None and cfg.optim.epochs == 0:
        save_checkpoint(out_dir / "checkpoint.jcdc", params, mcfg, {"epoch": 0, "step": 0})
    return TrainResult(params, mcfg, history)


def predict(params: dict, mcfg: ModelConfig, dataset: Dataset, cfg: RunConfig) -> list:
    """Eval-mode forward over every snippet of every video, then localize."""
    proposals = []
    with ag.no_grad():
        for v in dataset.videos:
            x, _ = sample_snippets(v.features, mcfg.snippets_per_video, "eval")
            out = forward(ag.Tensor(x.astype(np.float32)), mcfg, params, mode="eval")
            proposals.extend(localize(out, cfg.inference, v.video_id, fps=v.fps))
    return proposals


def evaluate(params: dict, mcfg: ModelConfig, dataset: Dataset, cfg: RunConfig, activitynet: bool = False):
    proposals = predict(params, mcfg, dataset, cfg)
    report = map_report(proposals, dataset.ground_truth(), activitynet=activitynet,
                        class_names=dataset.classes)
    return proposals, report


def run_ablation(train_set: Dataset, eval_set: Dataset, cfg: RunConfig, experiments, seeds) -> dict:
    """Train and evaluate each experiment id under each seed.

    Returns ``{exp_id: {seed: MapReport}}``.
    """
    results: dict = {}
    for exp_id in sorted(experiments):
        results[exp_id] = {}
        for seed in seeds:
            run = replace(cfg.for_experiment(exp_id), seed=seed)
            trained = train(train_set, run)
            _, report = evaluate(trained.params, trained.model_config, eval_set, run)
            results[exp_id][seed] = report
    return results


def format_ablation(results: dict, lo: float = 0.3, hi: float = 0.9) -> str:
    seeds = sorted({s for per in results.values() for s in per})
    head = f"{'Exp':>4} " + " ".join(f"{'seed ' + str(s):>9}" for s in seeds) + f" {'AVG':>8}"
    lines = [f"AVG mAP({lo:g}:{hi:g}) per experiment", head]
    for exp_id in sorted(results):
        vals = [results[exp_id][s].average(lo, hi) for s in seeds]
        lines.append(f"{exp_id:>4} " + " ".join(f"{100 * v:9.2f}" for v in vals) + f" {100 * np.mean(vals):8.2f}")
    return "\n".join(lines)
