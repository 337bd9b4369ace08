"""Evaluation metrics, OOD-uncertainty separation, and the randomized-prior
ensemble experiment that validates the residual-as-variance reading.

AUROC uses midranks for ties; Spearman is Pearson on midranks. Both are exact
(no sampling), deterministic, and cheap at desk scale.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ood_perturb
from .errors import UsageError
from .model import CrnpModel
from .nets import dense_stack
from .rnp import PHI_HIDDEN_LAYERS, PSI_HIDDEN_LAYERS, rnp_fit_step, rnp_init, rnp_score
from .tensor import Rng, Tensor, backward, no_grad, reset_tape


def accuracy(pred_labels, true_labels) -> float:
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.size == 0:
        raise UsageError("accuracy of an empty prediction set is undefined")
    if pred.shape != true.shape:
        raise UsageError(f"length mismatch: {pred.shape} vs {true.shape}")
    return float((pred == true).mean())


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc_binary(scores: np.ndarray, positives: np.ndarray) -> float:
    """Rank-statistic AUROC with midrank tie correction."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("AUROC needs both positive and negative samples")
    ranks = _midranks(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auroc_macro(scores: np.ndarray, true_labels) -> float:
    """One-vs-rest AUROC per class, macro-averaged over classes present."""
    scores = np.asarray(scores, dtype=np.float64)
    true = np.asarray(true_labels)
    if scores.ndim != 2 or len(scores) != len(true):
        raise UsageError(f"scores {scores.shape} do not match {len(true)} labels")
    if np.abs(scores.sum(axis=1) - 1.0).max() > 1e-6 or scores.min() < -1e-12:
        raise UsageError("score rows must be simplex points")
    present = np.unique(true)
    per_class = []
    for c in range(scores.shape[1]):
        if c not in present:
            warnings.warn(f"class {c} absent from the truth; excluded from macro AUROC")
            continue
        per_class.append(auroc_binary(scores[:, c], true == c))
    return float(np.mean(per_class))


def dice_score(pred_labels: np.ndarray, true_labels: np.ndarray, cls: int) -> float:
    """2|P∩T| / (|P|+|T|) for one class; empty-vs-empty counts as 1."""
    pred = np.asarray(pred_labels) == cls
    true = np.asarray(true_labels) == cls
    if pred.shape != true.shape:
        raise UsageError(f"shape mismatch: {pred.shape} vs {true.shape}")
    denom = int(pred.sum()) + int(true.sum())
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(pred, true).sum() / denom)


def spearman(a, b) -> float:
    """Spearman rank correlation (midranks for ties)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if len(a) != len(b) or len(a) < 3:
        raise UsageError("spearman needs two equal-length vectors of >=3 values")
    ra, rb = _midranks(a), _midranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if denom == 0:
        raise UsageError("spearman undefined for a constant vector")
    return float((ra * rb).sum() / denom)


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    accuracy: float | None = None
    auroc_macro: float | None = None
    per_class_dice: dict[str, float] = field(default_factory=dict)
    ood_auroc: float | None = None
    seed: int = 0
    config_digest: str = ""
    wall_clock_s: float = 0.0

    def __post_init__(self):
        for name in ("accuracy", "auroc_macro", "ood_auroc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise UsageError(f"{name}={v} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# OOD separation


def raw_uncertainty_table(model: CrnpModel, views: list[np.ndarray]) -> np.ndarray:
    """Per-sample raw cross-modal uncertainty vectors, one block per modality."""
    with no_grad():
        feats = model.encode(views)
        maps = model.uncertainty_maps(feats)
    n = maps[0].raw.shape[0]
    return np.concatenate([m.raw.reshape(n, -1) for m in maps], axis=1)


def ood_separation(model: CrnpModel, id_views: list[np.ndarray], sigma: float,
                   seed: int, export_path: str | None = None) -> float:
    """AUROC of summed cross-modal uncertainty as an in- vs out-of-distribution
    detector, where OOD samples are the inputs plus additive Gaussian noise.

    Optionally exports the raw uncertainty vectors (one row per sample, ID
    rows first) for external embedding or plotting.
    """
    ood_views = ood_perturb(id_views, sigma, seed)
    u_id = model.sample_uncertainty(id_views)
    u_ood = model.sample_uncertainty(ood_views)
    scores = np.concatenate([u_id, u_ood])
    labels = np.concatenate([np.zeros(len(u_id), dtype=bool), np.ones(len(u_ood), dtype=bool)])
    if export_path:
        table_id = raw_uncertainty_table(model, id_views)
        table_ood = raw_uncertainty_table(model, ood_views)
        table = np.concatenate([table_id, table_ood], axis=0)
        with open(export_path, "w") as f:
            f.write("is_ood," + ",".join(f"u{i}" for i in range(table.shape[1])) + "\n")
            for is_ood, row in zip(labels, table):
                f.write(f"{int(is_ood)}," + ",".join(f"{v:.10g}" for v in row) + "\n")
    return auroc_binary(scores, labels)


# ---------------------------------------------------------------------------
# randomized-prior theory experiment


@dataclass
class RegressionSpec:
    """1-D regression protocol for the prior-ensemble experiment."""

    n_train: int = 60
    train_low: float = -0.6
    train_high: float = 0.6
    target_noise: float = 0.05
    perturb_sigma: float = 0.1
    grid_low: float = -2.0
    grid_high: float = 2.0
    grid_n: int = 81
    hidden: int = 32
    steps: int = 600
    lr: float = 1e-2
    weight_decay: float = 1e-5

    def target(self, x: np.ndarray) -> np.ndarray:
        return np.sin(2.0 * np.pi * x)


def _fit_prior_pair(x: np.ndarray, y_tilde: np.ndarray, spec: RegressionSpec, rng: Rng):
    """One ensemble member: frozen random prior plus trainable additive term,
    fit to the perturbed targets by summed squared error with an L2 penalty."""
    from .train import Adam

    psi = dense_stack(1, 1, PSI_HIDDEN_LAYERS, spec.hidden, rng.child("psi"))
    phi = dense_stack(1, 1, PHI_HIDDEN_LAYERS, spec.hidden, rng.child("phi"))
    for p in psi.parameters():
        p.requires_grad = False
    opt = Adam(spec.lr)
    xt, yt = Tensor(x), Tensor(y_tilde)
    for _ in range(spec.steps):
        reset_tape()
        resid = yt - (psi(xt) + phi(xt))
        loss = (resid * resid).sum()
        for p in phi.parameters():
            loss = loss + spec.weight_decay * (p * p).sum()
            p.zero_grad()
        backward(loss)
        opt.step(phi.parameters())
    reset_tape()

    def predict(grid: np.ndarray) -> np.ndarray:
        with no_grad():
            return (psi(Tensor(grid)) + phi(Tensor(grid))).data.reshape(-1)

    return predict


def theory_demo(spec: RegressionSpec, k: int, seed: int):
    """Compare a single RNP's fitting error against the predictive variance of
    a K-member randomized-prior ensemble on the same 1-D inputs.

    Returns (rank_correlation, grid, rnp_error, ensemble_variance).
    """
    from .train import Adam

    if k == 1:
        raise UsageError("ensemble variance is undefined for a single member")
    if k < 5:
        raise UsageError(f"need at least 5 ensemble members, got {k}")
    if spec.grid_n < 3 or spec.grid_high <= spec.grid_low:
        raise UsageError("degenerate evaluation grid")
    rng = Rng(seed).child("theory")
    x = rng.uniform(spec.train_low, spec.train_high, (spec.n_train, 1))
    y = spec.target(x) + rng.normal(0.0, spec.target_noise, x.shape)
    grid = np.linspace(spec.grid_low, spec.grid_high, spec.grid_n).reshape(-1, 1)

    preds = []
    for member in range(k):
        mrng = rng.child(f"member{member}")
        y_tilde = y + mrng.normal(0.0, spec.perturb_sigma, y.shape)
        predict = _fit_prior_pair(x, y_tilde, spec, mrng)
        preds.append(predict(grid))
    variance = np.var(np.stack(preds), axis=0)

    module = rnp_init(1, 1, layer_kind="dense", rng=rng.child("rnp"),
                      hidden_dim=spec.hidden, score_mode="scalar",
                      weight_decay=spec.weight_decay)
    opt = Adam(spec.lr)
    for _ in range(spec.steps):
        rnp_fit_step(module, x, opt)
    rnp_error = rnp_score(module, grid).reshape(-1)

    return spearman(rnp_error, variance), grid.reshape(-1), rnp_error, variance
