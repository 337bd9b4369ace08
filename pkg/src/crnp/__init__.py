"""Cross-modal random network prediction (CRNP).

A numpy-based library for feature-density uncertainty estimation via random
network fitting and uncertainty-weighted multi-modal fusion, for classification
and dense per-pixel prediction, plus the desk-scale experiment harness that
verifies the mechanism.
"""

from .data import (
    Dataset,
    DatasetManifest,
    SegDataset,
    SyntheticSpec,
    load_manifest,
    ood_perturb,
    split,
    standardize,
    synth_clusters,
    synth_seg2d,
)
from .errors import ConfigError, DimensionError, InvariantViolation, UsageError
from .fusion import (
    AttentionParams,
    FusionConfig,
    cross_attention,
    cross_uncertainty,
    fuse,
    init_attention,
    self_attention,
)
from .metrics import (
    MetricsReport,
    RegressionSpec,
    accuracy,
    auroc_macro,
    dice_score,
    ood_separation,
    spearman,
    theory_demo,
)
from .model import (
    CrnpModel,
    ModalityBundle,
    ModelArch,
    ensemble_predict,
    load_checkpoint,
    save_checkpoint,
)
from .rnp import (
    RnpModule,
    UncertaintyMap,
    normalize_uncertainty,
    rnp_fit_step,
    rnp_init,
    rnp_score,
)
from .tensor import (
    Rng,
    Tensor,
    backward,
    concat,
    conv2d,
    leaky_relu,
    log_softmax,
    matmul,
    no_grad,
    parameter,
    reset_tape,
    softmax,
)
from .train import (
    Adam,
    PhaseLedger,
    SgdMomentum,
    TrainConfig,
    TrainResult,
    alternating_train,
    cosine_lr,
    cross_entropy,
    dice_loss,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
