"""Random network prediction: fixed random target net, small trainable
predictor, the fitting objective, and raw uncertainty scoring.

A module holds two networks over the same feature space: `psi`, randomly
initialized and frozen for the module's entire lifetime (its weight hash is
recorded at construction and re-checked around every update), and `phi`, a
strictly smaller trainable net fit to psi's outputs by summed squared error
plus an L2 penalty on phi. The fitting residual is the uncertainty signal:
phi tracks psi well where features are dense and poorly where they are
sparse, so large residuals flag low-density inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvariantViolation
from .nets import Stack, dense_stack, depthwise_stack, pointwise_stack
from .tensor import Rng, Tensor, backward, digest_arrays, no_grad, reset_tape

EPS = 1e-8  # guard for max-normalization of all-zero maps

PSI_HIDDEN_LAYERS = 3
PHI_HIDDEN_LAYERS = 2


@dataclass
class UncertaintyMap:
    """Raw non-negative residuals plus their [0,1] normalized form."""

    raw: np.ndarray
    normalized: np.ndarray | None = None


class RnpModule:
    """A frozen random net psi and a smaller trainable predictor phi."""

    def __init__(self, psi: Stack, phi: Stack, input_dim: int, output_dim: int,
                 layer_kind: str, score_mode: str, weight_decay: float):
        if phi.param_count() >= psi.param_count():
            raise ConfigError(
                f"predictor capacity {phi.param_count()} must be below the random "
                f"net's {psi.param_count()}"
            )
        for p in psi.parameters():
            p.requires_grad = False
        self.psi = psi
        self.phi = phi
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.layer_kind = layer_kind
        self.score_mode = score_mode
        self.weight_decay = weight_decay
        self.psi_digest = digest_arrays(psi.weight_arrays())

    # -- invariants ----------------------------------------------------------

    def check_psi_frozen(self) -> None:
        current = digest_arrays(self.psi.weight_arrays())
        if current != self.psi_digest:
            raise InvariantViolation(
                "random-net weights changed since construction "
                f"(digest {current[:12]} != {self.psi_digest[:12]})"
            )

    def phi_parameters(self) -> list[Tensor]:
        return self.phi.parameters()

    def psi_parameters(self) -> list[Tensor]:
        return self.psi.parameters()

    # -- forward paths -------------------------------------------------------

    def residual_graph(self, x: Tensor) -> Tensor:
        """Differentiable phi(x) - psi(x), used by the fitting objective."""
        return self.phi(x) - self.psi(x)

    def score(self, x) -> np.ndarray:
        """Raw uncertainty for a batch; read-only, never touches weights."""
        with no_grad():
            diff = self.residual_graph(x if isinstance(x, Tensor) else Tensor(x)).data
        sq = diff * diff
        if self.score_mode == "vector":
            return sq
        return sq.sum(axis=1, keepdims=True)


def rnp_init(input_dim: int, output_dim: int, layer_kind: str = "dense",
             rng: Rng | None = None, hidden_dim: int | None = None,
             kernel_size: int = 3, score_mode: str = "auto",
             weight_decay: float = 1e-5) -> RnpModule:
    """Build an RNP module: psi with 3 hidden layers, phi with 2.

    `hidden_dim` defaults to the input dimension (channel count for the
    depthwise kind). `score_mode` "auto" resolves to per-channel residuals
    when output and input dims match, a summed scalar otherwise.
    """
    if input_dim < 1 or output_dim < 1:
        raise ConfigError(f"dims must be >=1, got N={input_dim}, M={output_dim}")
    if layer_kind not in ("dense", "depthwise_conv", "pointwise_conv"):
        raise ConfigError(f"unknown layer_kind {layer_kind!r}")
    if score_mode not in ("auto", "vector", "scalar"):
        raise ConfigError(f"unknown score_mode {score_mode!r}")
    rng = rng or Rng(0)
    if score_mode == "auto":
        score_mode = "vector" if input_dim == output_dim else "scalar"
    h = hidden_dim or input_dim
    if layer_kind == "dense":
        psi = dense_stack(input_dim, output_dim, PSI_HIDDEN_LAYERS, h, rng.child("psi"))
        phi = dense_stack(input_dim, output_dim, PHI_HIDDEN_LAYERS, h, rng.child("phi"))
    elif layer_kind == "pointwise_conv":
        psi = pointwise_stack(input_dim, output_dim, PSI_HIDDEN_LAYERS, h, rng.child("psi"))
        phi = pointwise_stack(input_dim, output_dim, PHI_HIDDEN_LAYERS, h, rng.child("phi"))
    else:
        psi = depthwise_stack(input_dim, output_dim, PSI_HIDDEN_LAYERS, kernel_size, rng.child("psi"))
        phi = depthwise_stack(input_dim, output_dim, PHI_HIDDEN_LAYERS, kernel_size, rng.child("phi"))
    return RnpModule(psi, phi, input_dim, output_dim, layer_kind, score_mode, weight_decay)


def rnp_fit_step(module: RnpModule, x, optimizer) -> float:
    """One predictor update: summed squared residual over the batch plus
    the L2 penalty on phi, minimized w.r.t. phi only.

    The random net's digest is verified before and after; any drift raises.
    Returns the loss value (data term + penalty) before the step.
    """
    module.check_psi_frozen()
    xt = x if isinstance(x, Tensor) else Tensor(x)
    reset_tape()
    diff = module.residual_graph(xt)
    loss = (diff * diff).sum()
    if module.weight_decay:
        penalty = Tensor(0.0)
        for p in module.phi_parameters():
            penalty = penalty + (p * p).sum()
        loss = loss + module.weight_decay * penalty
    for p in module.phi_parameters():
        p.zero_grad()
    backward(loss)
    optimizer.step(module.phi_parameters())
    reset_tape()
    module.check_psi_frozen()
    return float(loss.data)


def rnp_data_term(module: RnpModule, x) -> float:
    """Summed squared residual over a batch, no parameter updates."""
    with no_grad():
        diff = module.residual_graph(x if isinstance(x, Tensor) else Tensor(x)).data
    return float((diff * diff).sum())


def rnp_score(module: RnpModule, x) -> np.ndarray:
    return module.score(x)


def normalize_uncertainty(u: np.ndarray, scope: str = "batch") -> np.ndarray:
    """Divide by the per-scope maximum (plus a small epsilon).

    scope "batch": max over the leading sample axis, per remaining channel;
    scope "spatial": max over the trailing two spatial axes, per sample and
    channel; scope "sample": one max per sample over all remaining axes
    (keeps relative magnitudes between channels). All-zero input stays
    all-zero; ordering and zeros are preserved.
    """
    u = np.asarray(u, dtype=np.float64)
    if (u < 0).any():
        raise ValueError("uncertainty values must be non-negative")
    if scope == "batch":
        m = u.max(axis=0, keepdims=True) if u.ndim > 0 else u.max()
    elif scope == "spatial":
        if u.ndim < 2:
            raise ValueError(f"spatial scope needs spatial axes, got shape {u.shape}")
        m = u.max(axis=(-2, -1), keepdims=True)
    elif scope == "sample":
        m = u.reshape(u.shape[0], -1).max(axis=1).reshape((-1,) + (1,) * (u.ndim - 1))
    else:
        raise ConfigError(f"unknown normalization scope {scope!r}")
    return u / (m + EPS)
