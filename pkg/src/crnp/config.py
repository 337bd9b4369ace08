"""Run configuration: flat key = value files, named presets, CLI overrides.

The grammar is documented in docs/config_format.md: one `key = value` pair per
line, `#` comments, later assignments win. Assigning `preset = <name>` expands
that preset's values at that point in the sequence, so a file can start from a
preset and override individual keys below it.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError


@dataclass
class RunConfig:
    experiment: str = "run"
    dataset: str = "clusters"          # clusters | seg2d | path to a manifest JSON
    out_dir: str = "runs"
    seed: int = 0
    seeds: str = "0"                   # comma list for multi-run commands
    split_fraction: float = 0.8
    standardize: bool = True
    # optimization
    optimizer: str = "adam"
    lr: float = 3e-4
    lr_min: float = 0.0
    momentum: float = 0.99
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weight_decay: float = 1e-5
    schedule: str = "constant"
    epochs: int = 0                    # >0: total_iterations = epochs * batches/epoch
    total_iterations: int = 200
    batch_size: int = 32
    alternation_cadence: int = 1
    rnp_warmup_steps: int = 200
    rnp_lr: float = 0.0                # 0: same as lr
    rnp_optimizer: str = ""            # empty: same family as optimizer
    # model
    feature_dim: int = 32
    encoder_hidden: int = 64
    rnp_output_dim: int = 0            # 0: same as feature_dim
    rnp_hidden: int = 0                # 0: same as the RNP input dim
    rnp_layer_kind: str = "auto"       # dense | depthwise_conv | pointwise_conv
    rnp_weight_decay: float = 1e-5
    rnp_score_mode: str = "auto"
    normalize_scope: str = "auto"
    decoder_mode: str = "shared"
    fusion_fn: str = "residual"
    attention: str = "self"
    d_k: int = 0                       # 0: same as feature_dim
    attention_residual: bool = True
    max_tokens: int = 4096
    crnp_enabled: bool = True
    # synthetic datasets
    synth_samples: int = 400
    synth_classes: int = 3
    synth_modalities: int = 2
    synth_dim: int = 8
    synth_noise: str = "0.6"           # single value or comma list per modality
    synth_spread: float = 3.0
    synth_pixel_noise: float = 0.1
    synth_ellipse_min: float = 0.12
    synth_ellipse_max: float = 0.3
    synth_corrupt_rect: str = "none"   # "r0,c0,r1,c1"
    synth_corrupt_noise: float = 2.0
    synth_corrupt_moving: bool = False
    synth_contrast: str = "1.0,1.0"    # foreground level per modality
    # evaluation extras
    ood_sigma: float = -1.0            # <0: no OOD report; 0 is a valid null probe
    export_uncertainty: str = ""
    export_logits: str = ""
    select: str = "final"              # final | best (lowest main-phase loss)
    checkpoint_every: int = 0          # cycles between periodic checkpoints; 0 = off
    ensemble_size: int = 1
    ablate_fusions: str = "residual"
    # randomized-prior experiment
    theory_k: int = 10
    theory_steps: int = 600
    theory_hidden: int = 32
    theory_train_n: int = 60

    def seeds_list(self) -> list[int]:
        return [int(s) for s in str(self.seeds).split(",") if s.strip() != ""]

    def noise_list(self) -> list[float]:
        vals = [float(s) for s in str(self.synth_noise).split(",")]
        if len(vals) == 1:
            vals = vals * self.synth_modalities
        if len(vals) != self.synth_modalities:
            raise ConfigError(
                f"synth_noise needs 1 or {self.synth_modalities} values, got {len(vals)}"
            )
        return vals

    def corrupt_rect(self) -> tuple[int, int, int, int] | None:
        if self.synth_corrupt_rect in ("", "none"):
            return None
        parts = [int(v) for v in self.synth_corrupt_rect.split(",")]
        if len(parts) != 4:
            raise ConfigError(f"synth_corrupt_rect needs r0,c0,r1,c1, got {self.synth_corrupt_rect!r}")
        return tuple(parts)


PRESETS: dict[str, dict[str, str]] = {
    # six-view digit classification, Adam with decoupled-from-nothing L2 decay
    "handwritten": {
        "dataset": "data/handwritten/manifest.json",
        "optimizer": "adam", "lr": "3e-4", "weight_decay": "1e-5",
        "adam_beta1": "0.9", "adam_beta2": "0.999", "schedule": "constant",
        "epochs": "500", "batch_size": "256", "rnp_warmup_steps": "200",
        "feature_dim": "32", "rnp_output_dim": "32", "encoder_hidden": "64",
        "rnp_score_mode": "scalar",
        "attention": "self", "fusion_fn": "residual", "split_fraction": "0.8",
    },
    "clusters": {
        "dataset": "clusters", "optimizer": "adam", "lr": "3e-3",
        "total_iterations": "300", "batch_size": "64", "rnp_warmup_steps": "200",
        "feature_dim": "16", "encoder_hidden": "32",
        "synth_samples": "400", "synth_classes": "3", "synth_dim": "8",
    },
    # corrupted-modality benchmark: modality A weak but clean, modality B
    # strong but blinded by a strong-noise patch that moves per sample, so
    # static weighting cannot cope and per-input gating pays off
    "seg2d": {
        "dataset": "seg2d", "optimizer": "sgd_momentum", "momentum": "0.99",
        "lr": "3e-3", "schedule": "cosine", "batch_size": "8",
        "total_iterations": "200", "rnp_warmup_steps": "80",
        "rnp_optimizer": "adam", "rnp_lr": "1e-2",
        "rnp_layer_kind": "pointwise_conv",
        "feature_dim": "32", "attention": "self", "fusion_fn": "residual",
        "synth_samples": "96", "split_fraction": "0.5",
        "synth_corrupt_rect": "0,0,24,24", "synth_corrupt_moving": "true",
        "synth_corrupt_noise": "3.0", "synth_pixel_noise": "0.3",
        "synth_ellipse_min": "0.07", "synth_ellipse_max": "0.15",
        "synth_contrast": "0.4,2.2",
    },
    "theory": {
        "theory_k": "10", "seeds": "0,1,2,3,4,5,6,7,8,9",
    },
}


def _convert(name: str, default, raw: str):
    kind = type(default)
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_pairs(text: str, where: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, value = stripped.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional file, and --set overrides.

    Assignments apply in order (file lines, then overrides); `preset = name`
    expands the named preset at that point, so anything written after it wins.
    """
    pairs: list[tuple[str, str]] = []
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        pairs.extend(parse_pairs(open(path).read(), path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))

    defaults = {f.name: f.default for f in fields(RunConfig)}
    values: dict = {}

    def assign(key: str, raw: str):
        if key == "preset":
            if raw not in PRESETS:
                raise ConfigError(f"unknown preset {raw!r}; choose from {sorted(PRESETS)}")
            for k, v in PRESETS[raw].items():
                assign(k, v)
            return
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, defaults[key], raw)

    for key, raw in pairs:
        assign(key, raw)
    return RunConfig(**values)


def resolved_text(cfg: RunConfig) -> str:
    lines = [f"{name} = {value}" for name, value in sorted(asdict(cfg).items())]
    return "\n".join(lines) + "\n"


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(resolved_text(cfg).encode()).hexdigest()[:16]
