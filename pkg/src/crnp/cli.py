"""Command-line entry point: train, eval, ablate, theory.

Every run writes its fully-resolved configuration next to its artifacts, so
any result can be reproduced from the output directory alone. Exit codes are
a stable contract: 0 success, 2 configuration error, 3 invariant violation,
4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from .config import RunConfig, config_digest, load_config, resolved_text
from .data import (
    Dataset,
    ManifestError,
    ManifestMissingFileError,
    SyntheticSpec,
    load_manifest,
    split,
    standardize,
    synth_clusters,
    synth_seg2d,
)
from .errors import ConfigError, InvariantViolation, UsageError
from .metrics import (
    MetricsReport,
    RegressionSpec,
    accuracy,
    auroc_macro,
    dice_score,
    ood_separation,
    theory_demo,
)
from .model import (
    CheckpointError,
    CrnpModel,
    ModelArch,
    ensemble_predict,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Rng
from .train import TrainConfig, alternating_train, write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_IO = 4


# ---------------------------------------------------------------------------
# dataset plumbing


def _dataset_digest(views: list[np.ndarray], labels: np.ndarray) -> str:
    h = hashlib.sha256()
    for v in views:
        h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(labels.astype(np.int64)).tobytes())
    return h.hexdigest()[:16]


def _load_classification(cfg: RunConfig):
    if cfg.dataset == "clusters":
        ds = synth_clusters(SyntheticSpec(
            generator="clusters", sample_count=cfg.synth_samples,
            class_count=cfg.synth_classes, modality_count=cfg.synth_modalities,
            feature_dim=cfg.synth_dim, noise=cfg.noise_list(),
            cluster_spread=cfg.synth_spread, seed=cfg.seed))
    else:
        ds = load_manifest(cfg.dataset)
    digest = _dataset_digest(ds.views, ds.labels)
    train, test = split(ds, cfg.split_fraction, cfg.seed)
    if cfg.standardize:
        train, test = standardize(train, test)
    return train, test, digest


def _load_seg(cfg: RunConfig):
    ds = synth_seg2d(SyntheticSpec(
        generator="seg2d", sample_count=cfg.synth_samples, seed=cfg.seed,
        corrupt_rect=cfg.corrupt_rect(), corrupt_noise=cfg.synth_corrupt_noise,
        corrupt_moving=cfg.synth_corrupt_moving,
        contrast=tuple(float(v) for v in cfg.synth_contrast.split(",")),
        pixel_noise=cfg.synth_pixel_noise,
        ellipse_min=cfg.synth_ellipse_min, ellipse_max=cfg.synth_ellipse_max))
    digest = _dataset_digest(ds.images, ds.labels)
    order = Rng(cfg.seed).child("seg-split").permutation(ds.n)
    cut = int(round(cfg.split_fraction * ds.n))
    return ds.subset(np.sort(order[:cut])), ds.subset(np.sort(order[cut:])), digest


def _task_for(cfg: RunConfig) -> str:
    if cfg.dataset == "seg2d":
        return "dense_prediction"
    if cfg.dataset == "clusters":
        return "classification"
    return "classification"  # manifests carry vector features


def _arch_from(cfg: RunConfig, task: str, class_count: int, modality_dims: list[int],
               seed: int, crnp_enabled: bool | None = None,
               attention: str | None = None, fusion_fn: str | None = None) -> ModelArch:
    return ModelArch(
        task=task,
        class_count=class_count,
        modality_dims=modality_dims,
        feature_dim=cfg.feature_dim,
        encoder_kind="dense" if task == "classification" else "conv2d",
        encoder_hidden=cfg.encoder_hidden,
        conv_channels=[8, 16, cfg.feature_dim],
        rnp_output_dim=cfg.rnp_output_dim or None,
        rnp_hidden=cfg.rnp_hidden or None,
        rnp_layer_kind=cfg.rnp_layer_kind,
        rnp_weight_decay=cfg.rnp_weight_decay,
        rnp_score_mode=cfg.rnp_score_mode,
        normalize_scope=None if cfg.normalize_scope == "auto" else cfg.normalize_scope,
        decoder_mode=cfg.decoder_mode,
        fusion_fn=cfg.fusion_fn if fusion_fn is None else fusion_fn,
        attention=cfg.attention if attention is None else attention,
        d_k=cfg.d_k or None,
        attention_residual=cfg.attention_residual,
        max_tokens=cfg.max_tokens,
        crnp_enabled=cfg.crnp_enabled if crnp_enabled is None else crnp_enabled,
        seed=seed,
    )


def _train_config(cfg: RunConfig, n_train: int, seed: int) -> TrainConfig:
    total = cfg.total_iterations
    if cfg.epochs > 0:
        total = cfg.epochs * max(1, math.ceil(n_train / cfg.batch_size))
    return TrainConfig(
        optimizer=cfg.optimizer, lr=cfg.lr, lr_min=cfg.lr_min, momentum=cfg.momentum,
        adam_betas=(cfg.adam_beta1, cfg.adam_beta2), weight_decay=cfg.weight_decay,
        schedule=cfg.schedule, total_iterations=total, batch_size=cfg.batch_size,
        alternation_cadence=cfg.alternation_cadence, rnp_warmup_steps=cfg.rnp_warmup_steps,
        rnp_lr=cfg.rnp_lr or None, rnp_optimizer=cfg.rnp_optimizer or None,
        checkpoint_every=cfg.checkpoint_every, track_best=cfg.select == "best",
        seed=seed,
    )


# ---------------------------------------------------------------------------
# evaluation


def _masked_views(data) -> tuple[list[np.ndarray], np.ndarray]:
    if isinstance(data, Dataset):
        return data.views, data.labels
    return data.images, data.labels


def evaluate_models(models: list[CrnpModel], test, cfg: RunConfig, seed: int,
                    started: float) -> MetricsReport:
    views, labels = _masked_views(test)
    probs = ensemble_predict(models, views)
    report = MetricsReport(seed=seed, config_digest=config_digest(cfg),
                           wall_clock_s=round(time.time() - started, 3))
    if models[0].arch.task == "classification":
        pred = probs.argmax(axis=1)
        report.accuracy = accuracy(pred, labels)
        report.auroc_macro = auroc_macro(probs, labels)
    else:
        pred = probs.argmax(axis=1)
        per_class = {str(c): dice_score(pred, labels, c)
                     for c in range(models[0].arch.class_count)}
        fg = [v for c, v in per_class.items() if c != "0"]
        per_class["fg_mean"] = float(np.mean(fg))
        report.per_class_dice = per_class
        report.accuracy = accuracy(pred.reshape(-1), labels.reshape(-1))
    if cfg.ood_sigma >= 0:
        report.ood_auroc = ood_separation(models[0], views, cfg.ood_sigma, seed)
    return report


def _export_uncertainty(model: CrnpModel, views: list[np.ndarray], path: str) -> None:
    """One row per sample per modality: sample index, modality, raw values."""
    from .tensor import no_grad

    with no_grad():
        feats = model.encode(views)
        maps = model.uncertainty_maps(feats)
    n = maps[0].raw.shape[0]
    with open(path, "w") as f:
        width = maps[0].raw.reshape(n, -1).shape[1]
        f.write("sample,modality," + ",".join(f"u{i}" for i in range(width)) + "\n")
        for p, m in enumerate(maps):
            flat = m.raw.reshape(n, -1)
            for i in range(n):
                f.write(f"{i},{p}," + ",".join(f"{v:.10g}" for v in flat[i]) + "\n")


# ---------------------------------------------------------------------------
# commands


def _out_dir(cfg: RunConfig) -> str:
    root = os.environ.get("CRNP_OUT_ROOT", "")
    path = os.path.join(root, cfg.out_dir, cfg.experiment) if root else os.path.join(
        cfg.out_dir, cfg.experiment)
    os.makedirs(path, exist_ok=True)
    return path


def _run_single_training(cfg: RunConfig, seed: int, checkpoint_fn=None):
    task = _task_for(cfg)
    if task == "classification":
        train, test, digest = _load_classification(cfg)
        views, labels = train.views, train.labels
        dims = [v.shape[1] for v in views]
        class_count = train.class_count
    else:
        train, test, digest = _load_seg(cfg)
        views, labels = train.images, train.labels
        dims = [im.shape[1] for im in views]
        class_count = int(labels.max()) + 1
    arch = _arch_from(cfg, task, class_count, dims, seed)
    model = CrnpModel(arch)
    tcfg = _train_config(cfg, len(labels), seed)
    result = alternating_train(model, views, labels, tcfg, checkpoint_fn=checkpoint_fn)
    return model, result, test, digest


def cmd_train(cfg: RunConfig) -> int:
    started = time.time()
    if cfg.select not in ("final", "best"):
        raise ConfigError(f"select must be final|best, got {cfg.select!r}")
    out = _out_dir(cfg)
    with open(os.path.join(out, "config.resolved.cfg"), "w") as f:
        f.write(resolved_text(cfg))
    models = []
    test = None
    for i in range(max(1, cfg.ensemble_size)):
        seed = cfg.seed + i
        suffix = "" if cfg.ensemble_size <= 1 else f"_{i}"

        def periodic(model, cycle, suffix=suffix):
            save_checkpoint(model, os.path.join(out, f"checkpoint{suffix}_cycle{cycle + 1}.ckpt"))

        model, result, test, _ = _run_single_training(
            cfg, seed, checkpoint_fn=periodic if cfg.checkpoint_every > 0 else None)
        if cfg.select == "best":
            result.restore_best()
        save_checkpoint(model, os.path.join(out, f"checkpoint{suffix}.ckpt"))
        write_trace_csv(result.trace, os.path.join(out, f"trace{suffix}.csv"))
        models.append(model)
    report = evaluate_models(models, test, cfg, cfg.seed, started)
    with open(os.path.join(out, "metrics.json"), "w") as f:
        f.write(report.to_json())
    print(report.to_json())
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint_paths: list[str]) -> int:
    started = time.time()
    models = [load_checkpoint(p) for p in checkpoint_paths]
    task = models[0].arch.task
    if any(m.arch.task != task or m.arch.class_count != models[0].arch.class_count
           for m in models):
        raise UsageError("checkpoints disagree on task/class count")
    if task == "classification":
        _, test, _ = _load_classification(cfg)
    else:
        _, test, _ = _load_seg(cfg)
    report = evaluate_models(models, test, cfg, cfg.seed, started)
    views, _ = _masked_views(test)
    if cfg.export_uncertainty:
        _export_uncertainty(models[0], views, cfg.export_uncertainty)
    if cfg.export_logits:
        logits = np.mean([m.predict_logits(views) for m in models], axis=0)
        flat = logits.reshape(len(logits), -1)
        with open(cfg.export_logits, "w") as f:
            f.write("sample," + ",".join(f"l{i}" for i in range(flat.shape[1])) + "\n")
            for i, row in enumerate(flat):
                f.write(f"{i}," + ",".join(f"{v:.10g}" for v in row) + "\n")
    print(report.to_json())
    return EXIT_OK


ABLATION_MODES = [
    ("base", False, "none"),
    ("crnp", True, "none"),
    ("crnp_ca", True, "cross"),
    ("crnp_sa", True, "self"),
]


def cmd_ablate(cfg: RunConfig) -> int:
    """Train the mode grid (Base / gating / gating+cross / gating+self, per
    fusion function) on a shared seed set; one CSV row per grid cell per seed."""
    out = _out_dir(cfg)
    with open(os.path.join(out, "config.resolved.cfg"), "w") as f:
        f.write(resolved_text(cfg))
    fusions = [f.strip() for f in cfg.ablate_fusions.split(",") if f.strip()]
    rows = []
    base_cache: dict[int, MetricsReport] = {}
    for fusion in fusions:
        for mode, gating, attn in ABLATION_MODES:
            for seed in cfg.seeds_list():
                if mode == "base" and seed in base_cache:
                    report = base_cache[seed]
                else:
                    started = time.time()
                    task = _task_for(cfg)
                    if task == "classification":
                        train, test, digest = _load_classification(cfg)
                        views, labels = train.views, train.labels
                        dims = [v.shape[1] for v in views]
                        class_count = train.class_count
                    else:
                        train, test, digest = _load_seg(cfg)
                        views, labels = train.images, train.labels
                        dims = [im.shape[1] for im in views]
                        class_count = int(labels.max()) + 1
                    arch = _arch_from(cfg, task, class_count, dims, seed,
                                      crnp_enabled=gating, attention=attn,
                                      fusion_fn=fusion)
                    model = CrnpModel(arch)
                    alternating_train(model, views, labels, _train_config(cfg, len(labels), seed))
                    report = evaluate_models([model], test, cfg, seed, started)
                    report.config_digest = digest  # rows share the dataset digest
                    if mode == "base":
                        base_cache[seed] = report
                rows.append((mode, fusion, seed, report))
    path = os.path.join(out, "ablation.csv")
    with open(path, "w") as f:
        f.write("mode,fusion,seed,dataset_digest,accuracy,auroc_macro,dice_fg\n")
        for mode, fusion, seed, r in rows:
            dice_fg = r.per_class_dice.get("fg_mean", "")
            acc = "" if r.accuracy is None else f"{r.accuracy:.6f}"
            auroc = "" if r.auroc_macro is None else f"{r.auroc_macro:.6f}"
            dice = "" if dice_fg == "" else f"{dice_fg:.6f}"
            f.write(f"{mode},{fusion},{seed},{r.config_digest},{acc},{auroc},{dice}\n")
    print(path)
    return EXIT_OK


def cmd_theory(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    with open(os.path.join(out, "config.resolved.cfg"), "w") as f:
        f.write(resolved_text(cfg))
    spec = RegressionSpec(hidden=cfg.theory_hidden, steps=cfg.theory_steps,
                          n_train=cfg.theory_train_n)
    correlations = []
    for seed in cfg.seeds_list():
        corr, grid, err, var = theory_demo(spec, cfg.theory_k, seed)
        correlations.append((seed, corr))
        with open(os.path.join(out, f"grid_seed{seed}.csv"), "w") as f:
            f.write("x,rnp_error,ensemble_variance\n")
            for x, e, v in zip(grid, err, var):
                f.write(f"{x:.6g},{e:.10g},{v:.10g}\n")
    median = float(np.median([c for _, c in correlations]))
    with open(os.path.join(out, "theory.csv"), "w") as f:
        f.write("seed,spearman\n")
        for seed, corr in correlations:
            f.write(f"{seed},{corr:.6f}\n")
        f.write(f"median,{median:.6f}\n")
    print(json.dumps({"median_spearman": median,
                      "per_seed": {str(s): round(c, 6) for s, c in correlations}}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing / entry point


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crnp",
                                     description="cross-modal random network prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    pt = sub.add_parser("train", help="train a model (or ensemble) and report metrics")
    pt.add_argument("--select", choices=("final", "best"), default=None,
                    help="evaluate/save the final weights (default) or the best-loss snapshot")
    common(pt)
    pe = sub.add_parser("eval", help="evaluate one checkpoint or a logit-averaged ensemble")
    pe.add_argument("checkpoints", nargs="+", help="checkpoint files")
    pe.add_argument("--ood", type=float, default=None, metavar="SIGMA",
                    help="also report OOD separation at this noise level")
    pe.add_argument("--export-uncertainty", default=None, metavar="PATH",
                    help="write raw uncertainty vectors as CSV")
    pe.add_argument("--export-logits", default=None, metavar="PATH",
                    help="write (ensemble-averaged) logits as CSV")
    common(pe)
    common(sub.add_parser("ablate", help="run the fusion/attention mode grid"))
    common(sub.add_parser("theory", help="randomized-prior ensemble comparison"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        if args.command == "train":
            if args.select is not None:
                cfg.select = args.select
            return cmd_train(cfg)
        if args.command == "eval":
            if args.ood is not None:
                cfg.ood_sigma = args.ood
            if args.export_uncertainty is not None:
                cfg.export_uncertainty = args.export_uncertainty
            if args.export_logits is not None:
                cfg.export_logits = args.export_logits
            return cmd_eval(cfg, args.checkpoints)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        return cmd_theory(cfg)
    except (ConfigError, UsageError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ManifestMissingFileError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except ManifestError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (CheckpointError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
