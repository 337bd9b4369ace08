"""Two-phase alternating optimization, optimizers, schedules, and losses.

Each training cycle first runs `alternation_cadence` predictor-fitting steps
(only the phi nets move; the features they fit are computed with recording
disabled, so nothing upstream can receive gradients), then one main step that
updates everything except phi and the frozen random nets. A PhaseLedger hashes
both parameter groups around every phase and raises the moment either phase
touches the other's weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvariantViolation, UsageError
from .model import CrnpModel
from .rnp import rnp_fit_step
from .tensor import (
    Rng,
    Tensor,
    backward,
    digest_arrays,
    log_softmax,
    no_grad,
    reset_tape,
    softmax,
)

OPTIMIZERS = ("sgd_momentum", "adam")
SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 3e-4
    lr_min: float = 0.0
    momentum: float = 0.99
    adam_betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-5
    schedule: str = "constant"
    total_iterations: int = 100
    batch_size: int = 32
    alternation_cadence: int = 1
    rnp_warmup_steps: int = 200
    rnp_lr: float | None = None          # None -> lr
    rnp_optimizer: str | None = None     # None -> same family as `optimizer`
    checkpoint_every: int = 0            # cycles between checkpoint callbacks; 0 = off
    track_best: bool = False             # snapshot weights at the lowest main loss
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.alternation_cadence < 1:
            raise ConfigError(f"alternation_cadence must be >=1, got {self.alternation_cadence}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.rnp_optimizer is not None and self.rnp_optimizer not in OPTIMIZERS:
            raise ConfigError(
                f"rnp_optimizer must be one of {OPTIMIZERS}, got {self.rnp_optimizer!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")


# ---------------------------------------------------------------------------
# optimizers


class SgdMomentum:
    def __init__(self, lr: float, momentum: float = 0.99, weight_decay: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: dict[int, np.ndarray] = {}

    def step(self, params: list[Tensor]) -> None:
        for p in params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self._velocity.get(id(p))
            v = g.copy() if v is None else self.momentum * v + g
            self._velocity[id(p)] = v
            p.data -= self.lr * v


class Adam:
    def __init__(self, lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 weight_decay: float = 0.0, eps: float = 1e-8):
        self.lr = lr
        self.betas = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._t: dict[int, int] = {}

    def step(self, params: list[Tensor]) -> None:
        b1, b2 = self.betas
        for p in params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            t = self._t.get(id(p), 0) + 1
            m = b1 * self._m.get(id(p), np.zeros_like(g)) + (1 - b1) * g
            v = b2 * self._v.get(id(p), np.zeros_like(g)) + (1 - b2) * g * g
            self._t[id(p)], self._m[id(p)], self._v[id(p)] = t, m, v
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(cfg: TrainConfig, lr: float | None = None,
                   weight_decay: float | None = None, family: str | None = None):
    lr = cfg.lr if lr is None else lr
    wd = cfg.weight_decay if weight_decay is None else weight_decay
    family = family or cfg.optimizer
    if family == "sgd_momentum":
        return SgdMomentum(lr, momentum=cfg.momentum, weight_decay=wd)
    return Adam(lr, betas=tuple(cfg.adam_betas), weight_decay=wd)


# ---------------------------------------------------------------------------
# schedules and losses


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Half-cosine decay from lr_max at t=0 to lr_min at t=total; clamps past the end."""
    if t >= total:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


def one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    """Labels (B,) -> (B,C); labels (B,H,W) -> (B,C,H,W)."""
    labels = np.asarray(labels)
    eye = np.eye(class_count)
    if labels.ndim == 1:
        return eye[labels]
    return np.moveaxis(eye[labels], -1, 1)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood; class axis is 1."""
    target = one_hot(labels, logits.shape[1])
    per_elem = Tensor(target) * log_softmax(logits, axis=1)
    count = target.size // logits.shape[1]
    return per_elem.sum() * (-1.0 / count)


DICE_SMOOTH = 1e-5


def _check_one_hot(target: np.ndarray) -> None:
    vals = np.unique(target)
    if not np.isin(vals, (0.0, 1.0)).all() or not np.allclose(target.sum(axis=1), 1.0):
        raise UsageError("dice_loss target must be one-hot along the class axis")


def dice_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """1 - mean soft Dice over classes; pred is a simplex field, target one-hot."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise UsageError(f"dice_loss shapes differ: {pred.shape} vs {target.shape}")
    _check_one_hot(target)
    axes = (0,) + tuple(range(2, pred.ndim))
    t = Tensor(target)
    inter = (pred * t).sum(axis=axes)
    denom = pred.sum(axis=axes) + Tensor(target.sum(axis=axes))
    dice = (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    return 1.0 - dice.mean()


def task_loss(model: CrnpModel, logits: Tensor, labels: np.ndarray) -> Tensor:
    if model.arch.task == "classification":
        return cross_entropy(logits, labels)
    probs = softmax(logits, axis=1)
    return dice_loss(probs, one_hot(labels, model.arch.class_count)) + cross_entropy(logits, labels)


# ---------------------------------------------------------------------------
# phase ledger


@dataclass
class PhaseLedger:
    """Before/after digests of the phi and main parameter groups, per phase."""

    records: list[dict] = field(default_factory=list)

    def check_rnp_phase(self, cycle: int, phi_before: str, phi_after: str,
                        main_before: str, main_after: str) -> None:
        if main_before != main_after:
            raise InvariantViolation(
                f"cycle {cycle}: RNP phase modified the main parameter group"
            )
        self.records.append({"cycle": cycle, "phase": "rnp",
                             "phi_changed": phi_before != phi_after})

    def check_main_phase(self, cycle: int, phi_before: str, phi_after: str,
                         main_before: str, main_after: str) -> None:
        if phi_before != phi_after:
            raise InvariantViolation(
                f"cycle {cycle}: main phase modified the predictor (phi) group"
            )
        self.records.append({"cycle": cycle, "phase": "main",
                             "main_changed": main_before != main_after})

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r["phase"]] = out.get(r["phase"], 0) + 1
        return out


@dataclass
class TrainResult:
    model: CrnpModel
    trace: list[tuple[int, str, float, float]]  # (iteration, phase, loss, lr)
    ledger: PhaseLedger
    best_cycle: int | None = None
    best_state: list[np.ndarray] | None = None  # parameter copies at the best main loss

    def restore_best(self) -> None:
        if self.best_state is None:
            raise UsageError("training ran without track_best")
        for (_, p), data in zip(self.model.named_parameters(), self.best_state):
            p.data = data.copy()


# ---------------------------------------------------------------------------
# alternating training


class _BatchStream:
    """Deterministic shuffled minibatches, reshuffling each pass."""

    def __init__(self, n: int, batch_size: int, rng: Rng):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def _rnp_steps(model: CrnpModel, views: list[np.ndarray], idx: np.ndarray,
               rnp_opts: list, count: int) -> float:
    """`count` phi-only fit steps on one batch; features are detached."""
    with no_grad():
        feats = [f.data for f in model.encode([v[idx] for v in views])]
    last = 0.0
    for _ in range(count):
        losses = [rnp_fit_step(b.rnp, f, opt)
                  for b, f, opt in zip(model.bundles, feats, rnp_opts)]
        last = sum(losses) / len(losses)
    return last


def alternating_train(model: CrnpModel, views: list[np.ndarray], labels: np.ndarray,
                      cfg: TrainConfig, checkpoint_fn=None) -> TrainResult:
    """Train `model` on per-modality arrays `views` with targets `labels`.

    Every cycle: cadence RNP steps (phi only), one main step (everything but
    phi and the frozen random nets), ledger checks on both. Identical config
    and data reproduce the loss trace and final weights bitwise.

    `checkpoint_fn(model, cycle)` fires every `cfg.checkpoint_every` cycles;
    with `cfg.track_best` the result carries a weight snapshot from the cycle
    with the lowest main-phase loss (evaluation uses the final weights unless
    the caller explicitly restores that snapshot).
    """
    if len(views) != len(model.bundles):
        raise UsageError(f"model has {len(model.bundles)} modalities, got {len(views)} views")
    rng = Rng(cfg.seed).child("batches")
    stream = _BatchStream(len(labels), cfg.batch_size, rng)
    gating = model.arch.crnp_enabled

    main_params = model.main_parameters()
    phi_params = model.phi_parameters()
    psi_params = model.psi_parameters()
    main_opt = make_optimizer(cfg)
    rnp_lr = cfg.rnp_lr if cfg.rnp_lr is not None else cfg.lr
    # R(phi) lives inside the RNP objective, so its optimizer runs undecayed
    rnp_opts = [make_optimizer(cfg, lr=rnp_lr, weight_decay=0.0, family=cfg.rnp_optimizer)
                for _ in model.bundles]

    ledger = PhaseLedger()
    trace: list[tuple[int, str, float, float]] = []
    best_loss = float("inf")
    best_cycle: int | None = None
    best_state: list[np.ndarray] | None = None

    def digest_main() -> str:
        return digest_arrays([p.data for p in main_params] + [p.data for p in psi_params])

    def digest_phi() -> str:
        return digest_arrays([p.data for p in phi_params])

    if gating:
        for w in range(cfg.rnp_warmup_steps):
            loss = _rnp_steps(model, views, stream.next(), rnp_opts, 1)
            trace.append((w, "warmup", loss, rnp_lr))

    for cycle in range(cfg.total_iterations):
        lr = cfg.lr if cfg.schedule == "constant" else cosine_lr(
            cycle, cfg.total_iterations, cfg.lr, cfg.lr_min)
        main_opt.lr = lr
        idx = stream.next()

        if gating:
            phi0, main0 = digest_phi(), digest_main()
            loss_rnp = _rnp_steps(model, views, idx, rnp_opts, cfg.alternation_cadence)
            phi1, main1 = digest_phi(), digest_main()
            ledger.check_rnp_phase(cycle, phi0, phi1, main0, main1)
            trace.append((cycle, "rnp", loss_rnp, rnp_lr))
        else:
            phi1, _ = digest_phi(), None

        main0 = digest_main()
        reset_tape()
        logits, per_decoder, _ = model.forward_graph([v[idx] for v in views])
        if model.arch.decoder_mode == "separate":
            loss = task_loss(model, per_decoder[0], labels[idx])
            for l in per_decoder[1:]:
                loss = loss + task_loss(model, l, labels[idx])
            loss = loss * (1.0 / len(per_decoder))
        else:
            loss = task_loss(model, logits, labels[idx])
        for p in main_params:
            p.zero_grad()
        backward(loss)
        main_opt.step(main_params)
        reset_tape()
        phi2, main1 = digest_phi(), digest_main()
        ledger.check_main_phase(cycle, phi1, phi2, main0, main1)
        model.check_psi_frozen()
        trace.append((cycle, "main", float(loss.data), lr))
        if cfg.track_best and float(loss.data) < best_loss:
            best_loss = float(loss.data)
            best_cycle = cycle
            best_state = [p.data.copy() for _, p in model.named_parameters()]
        if checkpoint_fn is not None and cfg.checkpoint_every > 0 \
                and (cycle + 1) % cfg.checkpoint_every == 0:
            checkpoint_fn(model, cycle)

    return TrainResult(model, trace, ledger, best_cycle, best_state)


def write_trace_csv(trace: list[tuple[int, str, float, float]], path: str) -> None:
    with open(path, "w") as f:
        f.write("iteration,phase,loss,lr\n")
        for it, phase, loss, lr in trace:
            f.write(f"{it},{phase},{loss:.12g},{lr:.12g}\n")
