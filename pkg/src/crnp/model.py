"""Full multi-modal model: per-modality encoders and RNP modules, uncertainty
fusion, optional attention, decoders, ensembling, and versioned checkpoints.

Weight draws flow through name-derived child streams of the architecture seed,
so two models that differ only in toggles (gating on/off, attention mode)
share every weight they have in common, bitwise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, UsageError
from .fusion import (
    AttentionParams,
    FusionConfig,
    cross_attention,
    fuse,
    init_attention,
    scaled_dot_attention,
)
from .nets import Conv2dLayer, DenseLayer, Stack, dense_stack
from .rnp import RnpModule, UncertaintyMap, normalize_uncertainty, rnp_init
from .tensor import Rng, Tensor, concat, digest_arrays, leaky_relu, no_grad, softmax, upsample2x

TASKS = ("classification", "dense_prediction")

CHECKPOINT_MAGIC = b"CRNP1"
CHECKPOINT_VERSION = 1


class CheckpointError(IOError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """The file does not start with the expected magic header."""


class CheckpointVersionError(CheckpointError):
    """The file's format version is not supported."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before the declared payload does."""


@dataclass
class ModelArch:
    """Serializable description of a model; building twice from the same arch
    yields bitwise-identical weights."""

    task: str
    class_count: int
    modality_dims: list[int]
    feature_dim: int = 32
    encoder_kind: str = "dense"           # dense | conv2d
    encoder_hidden: int = 64
    conv_channels: list[int] = field(default_factory=lambda: [8, 16, 32])
    rnp_output_dim: int | None = None     # None -> feature_dim
    rnp_hidden: int | None = None
    rnp_kernel: int = 3
    rnp_layer_kind: str = "auto"          # auto -> dense (vectors) / depthwise_conv (maps)
    rnp_weight_decay: float = 1e-5
    rnp_score_mode: str = "auto"
    normalize_scope: str | None = None    # None -> batch (vectors) / spatial (dense)
    decoder_mode: str = "shared"          # shared | separate
    fusion_fn: str = "residual"
    attention: str = "none"
    d_k: int | None = None
    attention_residual: bool = True
    max_tokens: int = 4096
    crnp_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >=2, got {self.class_count}")
        if not self.modality_dims:
            raise ConfigError("at least one modality is required")
        if self.decoder_mode not in ("shared", "separate"):
            raise ConfigError(f"decoder_mode must be shared|separate, got {self.decoder_mode!r}")
        if self.encoder_kind not in ("dense", "conv2d"):
            raise ConfigError(f"encoder_kind must be dense|conv2d, got {self.encoder_kind!r}")
        if self.encoder_kind == "conv2d" and self.feature_dim != self.conv_channels[-1]:
            raise ConfigError(
                f"feature_dim {self.feature_dim} must equal the last conv channel "
                f"count {self.conv_channels[-1]}"
            )

    @property
    def scope(self) -> str:
        if self.normalize_scope:
            return self.normalize_scope
        return "spatial" if self.task == "dense_prediction" else "batch"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelArch":
        return cls(**json.loads(text))


@dataclass
class ModalityBundle:
    encoder: Stack
    rnp: RnpModule | None


class DenseDecoder:
    """Upsampling conv decoder back to input resolution: a 1x1 channel merge
    at the bottleneck, two nearest-neighbor doublings with 3x3 convs, then a
    1x1 conv to class channels."""

    def __init__(self, in_ch: int, class_count: int, rng: Rng):
        self.merge = Conv2dLayer(in_ch, 16, 1, rng.child("c0"), padding=0)
        self.conv1 = Conv2dLayer(16, 8, 3, rng.child("c1"))
        self.conv2 = Conv2dLayer(8, 8, 3, rng.child("c2"))
        self.conv3 = Conv2dLayer(8, class_count, 1, rng.child("c3"), padding=0)

    def __call__(self, x: Tensor) -> Tensor:
        x = leaky_relu(self.merge(x), 0.25)
        x = leaky_relu(self.conv1(upsample2x(x)), 0.25)
        x = leaky_relu(self.conv2(upsample2x(x)), 0.25)
        return self.conv3(x)

    def parameters(self) -> list[Tensor]:
        return (self.merge.parameters() + self.conv1.parameters()
                + self.conv2.parameters() + self.conv3.parameters())


class CrnpModel:
    def __init__(self, arch: ModelArch):
        self.arch = arch
        rng = Rng(arch.seed)
        n = arch.feature_dim
        m = arch.rnp_output_dim or n
        self.bundles: list[ModalityBundle] = []
        for p, dim in enumerate(arch.modality_dims):
            enc_rng = rng.child(f"encoder{p}")
            if arch.encoder_kind == "dense":
                encoder = dense_stack(dim, n, n_hidden=2, hidden_dim=arch.encoder_hidden, rng=enc_rng)
            else:
                chans = [dim] + list(arch.conv_channels)
                layers = [
                    Conv2dLayer(chans[i], chans[i + 1], 3, enc_rng.child(f"conv{i}"),
                                stride=1 if i == 0 else 2)
                    for i in range(len(chans) - 1)
                ]
                encoder = Stack(layers)
            rnp = None
            if arch.crnp_enabled:
                kind = arch.rnp_layer_kind
                if kind == "auto":
                    kind = "dense" if arch.encoder_kind == "dense" else "depthwise_conv"
                rnp = rnp_init(
                    n, m,
                    layer_kind=kind,
                    rng=rng.child(f"rnp{p}"),
                    hidden_dim=arch.rnp_hidden,
                    kernel_size=arch.rnp_kernel,
                    score_mode=arch.rnp_score_mode,
                    weight_decay=arch.rnp_weight_decay,
                )
            self.bundles.append(ModalityBundle(encoder, rnp))

        self.fusion = FusionConfig(
            fusion_fn=arch.fusion_fn,
            attention=arch.attention,
            d_k=arch.d_k,
            attention_residual=arch.attention_residual,
            max_tokens=arch.max_tokens,
        )
        self.concat_projections: list = []
        if arch.crnp_enabled and arch.fusion_fn == "concat":
            for p in range(len(arch.modality_dims)):
                prj_rng = rng.child(f"proj{p}")
                if arch.encoder_kind == "dense":
                    self.concat_projections.append(DenseLayer(2 * n, n, prj_rng))
                else:
                    self.concat_projections.append(Conv2dLayer(2 * n, n, 1, prj_rng, padding=0))

        self.attention_params: AttentionParams | None = None
        if arch.attention != "none":
            self.attention_params = init_attention(n, arch.d_k, rng.child("attention"))

        n_mod = len(arch.modality_dims)
        dec_rng = rng.child("decoder")
        self.decoders: list = []
        if arch.task == "classification":
            if arch.decoder_mode == "shared":
                self.decoders.append(DenseLayer(n_mod * n, arch.class_count, dec_rng))
            else:
                self.decoders = [DenseLayer(n, arch.class_count, dec_rng.child(f"d{p}"))
                                 for p in range(n_mod)]
        else:
            if arch.decoder_mode == "shared":
                self.decoders.append(DenseDecoder(n_mod * n, arch.class_count, dec_rng))
            else:
                self.decoders = [DenseDecoder(n, arch.class_count, dec_rng.child(f"d{p}"))
                                 for p in range(n_mod)]

    # -- parameter groups ----------------------------------------------------

    def phi_parameters(self) -> list[Tensor]:
        return [p for b in self.bundles if b.rnp for p in b.rnp.phi_parameters()]

    def psi_parameters(self) -> list[Tensor]:
        return [p for b in self.bundles if b.rnp for p in b.rnp.psi_parameters()]

    def main_parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for b in self.bundles:
            params.extend(b.encoder.parameters())
        for prj in self.concat_projections:
            params.extend(prj.parameters())
        if self.attention_params is not None:
            params.extend(self.attention_params.parameters())
        for d in self.decoders:
            params.extend(d.parameters())
        return params

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for p, b in enumerate(self.bundles):
            for i, t in enumerate(b.encoder.parameters()):
                out.append((f"encoder{p}.{i}", t))
            if b.rnp:
                for i, t in enumerate(b.rnp.psi_parameters()):
                    out.append((f"rnp{p}.psi.{i}", t))
                for i, t in enumerate(b.rnp.phi_parameters()):
                    out.append((f"rnp{p}.phi.{i}", t))
        for p, prj in enumerate(self.concat_projections):
            for i, t in enumerate(prj.parameters()):
                out.append((f"proj{p}.{i}", t))
        if self.attention_params is not None:
            for i, t in enumerate(self.attention_params.parameters()):
                out.append((f"attention.{i}", t))
        for d_i, d in enumerate(self.decoders):
            for i, t in enumerate(d.parameters()):
                out.append((f"decoder{d_i}.{i}", t))
        return out

    def check_psi_frozen(self) -> None:
        for b in self.bundles:
            if b.rnp:
                b.rnp.check_psi_frozen()

    # -- forward -------------------------------------------------------------

    def encode(self, inputs: list) -> list[Tensor]:
        if len(inputs) != len(self.bundles):
            raise UsageError(
                f"model has {len(self.bundles)} modalities, got {len(inputs)} inputs"
            )
        return [b.encoder(x if isinstance(x, Tensor) else Tensor(x))
                for b, x in zip(self.bundles, inputs)]

    def uncertainty_maps(self, feats: list[Tensor]) -> list[UncertaintyMap]:
        """Cross-modal maps for every modality (raw + normalized), detached."""
        scores = [b.rnp.score(f.data) for b, f in zip(self.bundles, feats)]
        maps = []
        for p in range(len(feats)):
            raw = np.sum([scores[q] for q in range(len(feats)) if q != p], axis=0)
            maps.append(UncertaintyMap(raw=raw, normalized=normalize_uncertainty(raw, self.arch.scope)))
        return maps

    def _fuse_one(self, p: int, x: Tensor, u_hat: np.ndarray) -> Tensor:
        cfg = self.fusion
        if cfg.fusion_fn == "concat":
            cfg = FusionConfig(fusion_fn="concat", attention=cfg.attention, d_k=cfg.d_k,
                               attention_residual=cfg.attention_residual,
                               max_tokens=cfg.max_tokens,
                               concat_projection=self.concat_projections[p])
        return fuse(x, u_hat, cfg)

    def _tokens(self, feat: Tensor) -> Tensor:
        """(B, N) -> (B, 1, N); (B, C, H, W) -> (B, H*W, C)."""
        if self.arch.task == "classification":
            b, n = feat.shape
            return feat.reshape(b, 1, n)
        b, c, h, w = feat.shape
        return feat.reshape(b, c, h * w).swapaxes(1, 2)

    def _untokens(self, tokens: Tensor, like_shape: tuple) -> Tensor:
        if self.arch.task == "classification":
            b, _, n = tokens.shape
            return tokens.reshape(b, n)
        b, c, h, w = like_shape
        return tokens.swapaxes(1, 2).reshape(b, c, h, w)

    def _apply_attention(self, tilde: list[Tensor]) -> list[Tensor]:
        mode = self.fusion.attention
        if mode == "none" or self.attention_params is None:
            return tilde
        token_sets = [self._tokens(f) for f in tilde]
        counts = [t.shape[1] for t in token_sets]
        if sum(counts) > self.fusion.max_tokens:
            raise ConfigError(
                f"{sum(counts)} attention tokens exceed the configured cap "
                f"{self.fusion.max_tokens}"
            )
        outs: list[Tensor] = []
        if mode == "self":
            all_tokens = concat(token_sets, axis=1)
            attended = scaled_dot_attention(all_tokens, all_tokens, self.attention_params)
            start = 0
            for t in token_sets:
                outs.append(attended[:, start : start + t.shape[1], :])
                start += t.shape[1]
        else:  # cross: queries from p, keys/values from the other modalities
            for p, t in enumerate(token_sets):
                others = [token_sets[q] for q in range(len(token_sets)) if q != p]
                kv = others[0] if len(others) == 1 else concat(others, axis=1)
                outs.append(cross_attention(t, kv, self.attention_params))
        result = []
        for p, (t, o) in enumerate(zip(token_sets, outs)):
            merged = t + o if self.fusion.attention_residual else o
            result.append(self._untokens(merged, tilde[p].shape))
        return result

    def forward_graph(self, inputs: list) -> tuple[Tensor, list[Tensor], list[UncertaintyMap]]:
        """Differentiable pipeline. Returns (combined logits, per-decoder
        logits, uncertainty maps). Maps are empty when gating is disabled."""
        feats = self.encode(inputs)
        maps: list[UncertaintyMap] = []
        if self.arch.crnp_enabled:
            maps = self.uncertainty_maps(feats)
            tilde = [self._fuse_one(p, f, m.normalized) for p, (f, m) in enumerate(zip(feats, maps))]
        else:
            tilde = feats
        tilde = self._apply_attention(tilde)
        if self.arch.decoder_mode == "shared":
            joint = concat(tilde, axis=1)
            logits = [self.decoders[0](joint)]
        else:
            logits = [d(f) for d, f in zip(self.decoders, tilde)]
        if len(logits) == 1:
            combined = logits[0]
        else:
            combined = logits[0]
            for l in logits[1:]:
                combined = combined + l
            combined = combined * (1.0 / len(logits))
        return combined, logits, maps

    def forward(self, inputs: list) -> tuple[np.ndarray, list[UncertaintyMap]]:
        """Inference: simplex predictions plus per-modality uncertainty maps."""
        with no_grad():
            logits, _, maps = self.forward_graph(inputs)
            probs = softmax(logits, axis=1).data
        return probs, maps

    def predict_logits(self, inputs: list) -> np.ndarray:
        with no_grad():
            logits, _, _ = self.forward_graph(inputs)
        return logits.data

    def sample_uncertainty(self, inputs: list) -> np.ndarray:
        """Summed cross-modal uncertainty, one scalar per sample."""
        if not self.arch.crnp_enabled:
            raise UsageError("uncertainty scoring needs the RNP modules enabled")
        with no_grad():
            feats = self.encode(inputs)
            maps = self.uncertainty_maps(feats)
        total = np.zeros(maps[0].raw.shape[0])
        for m in maps:
            total += m.raw.reshape(m.raw.shape[0], -1).sum(axis=1)
        return total


def ensemble_predict(models: list[CrnpModel], inputs: list) -> np.ndarray:
    """Average pre-softmax logits over models, then one softmax."""
    if not models:
        raise UsageError("ensemble needs at least one model")
    first = models[0].arch
    for m in models[1:]:
        if m.arch.task != first.task or m.arch.class_count != first.class_count:
            raise UsageError(
                "ensemble members disagree on task/class count: "
                f"{(first.task, first.class_count)} vs {(m.arch.task, m.arch.class_count)}"
            )
    logits = models[0].predict_logits(inputs)
    for m in models[1:]:
        logits = logits + m.predict_logits(inputs)
    logits /= len(models)
    with no_grad():
        return softmax(Tensor(logits), axis=1).data


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: CrnpModel, path: str) -> None:
    named = model.named_parameters()
    entries = [{"name": name, "shape": list(t.shape)} for name, t in named]
    header = {
        "arch": asdict(model.arch),
        "entries": entries,
        "psi_digests": [b.rnp.psi_digest for b in model.bundles if b.rnp],
    }
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for _, t in named)
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(CHECKPOINT_VERSION.to_bytes(4, "little"))
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        f.write(payload)


def load_checkpoint(path: str) -> CrnpModel:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(CHECKPOINT_MAGIC) or blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a model checkpoint (bad magic header)")
    off = len(CHECKPOINT_MAGIC)
    if len(blob) < off + 12:
        raise CheckpointTruncatedError(f"{path}: header cut short")
    version = int.from_bytes(blob[off : off + 4], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    off += 4
    header_len = int.from_bytes(blob[off : off + 8], "little")
    off += 8
    if len(blob) < off + header_len:
        raise CheckpointTruncatedError(f"{path}: header cut short")
    header = json.loads(blob[off : off + header_len].decode())
    off += header_len

    expected = sum(int(np.prod(e["shape"])) * 8 for e in header["entries"])
    if len(blob) - off < expected:
        raise CheckpointTruncatedError(
            f"{path}: payload has {len(blob) - off} bytes, expected {expected}"
        )
    model = CrnpModel(ModelArch(**header["arch"]))
    named = model.named_parameters()
    if [n for n, _ in named] != [e["name"] for e in header["entries"]]:
        raise CheckpointFormatError(f"{path}: parameter table does not match architecture")
    for (name, t), entry in zip(named, header["entries"]):
        count = int(np.prod(entry["shape"]))
        arr = np.frombuffer(blob[off : off + count * 8], dtype="<f8").reshape(entry["shape"])
        t.data = arr.astype(np.float64).copy()
        off += count * 8
    rnp_bundles = [b for b in model.bundles if b.rnp]
    for b, stored in zip(rnp_bundles, header["psi_digests"]):
        b.rnp.psi_digest = stored
        current = digest_arrays(b.rnp.psi.weight_arrays())
        if current != stored:
            raise CheckpointFormatError(
                f"{path}: random-net weights do not match their stored digest"
            )
    return model
