"""Dataset ingestion (multi-view feature files), synthetic generators for
desk-scale experiments, out-of-distribution perturbation, and splits.

On disk a dataset is a JSON manifest naming one headerless CSV matrix per
view plus a labels file; see docs/manifest_format.md. Generators are pure
functions of (spec, seed).
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .tensor import Rng


class ManifestError(Exception):
    """Base class for dataset loading failures."""


class ManifestMissingFileError(ManifestError):
    pass


class ManifestCountError(ManifestError):
    """Row counts disagree between views/labels."""


class ManifestValueError(ManifestError):
    """A cell could not be parsed; carries row/column coordinates."""


class ManifestSchemaError(ManifestError):
    """The manifest JSON itself is malformed."""


@dataclass
class DatasetManifest:
    name: str
    task: str
    class_count: int
    views: list[dict]          # {view_name, matrix_file, feature_dim}
    labels_file: str
    sample_count: int


@dataclass
class Dataset:
    """In-memory multi-view dataset; `views` holds one (n, d_v) array per view."""

    name: str
    task: str
    class_count: int
    view_names: list[str]
    views: list[np.ndarray]
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.name, self.task, self.class_count, self.view_names,
                       [v[idx] for v in self.views], self.labels[idx], dict(self.meta))


def _read_csv_matrix(path: str, what: str) -> np.ndarray:
    if not os.path.exists(path):
        raise ManifestMissingFileError(f"{what}: file not found: {path}")
    rows: list[list[float]] = []
    with open(path) as f:
        for r, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            parsed = []
            for c, cell in enumerate(cells):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ManifestValueError(
                        f"{what}: non-numeric cell at row {r}, column {c}: {cell!r}"
                    ) from None
                if not np.isfinite(parsed[-1]):
                    raise ManifestValueError(
                        f"{what}: non-finite cell at row {r}, column {c}: {cell!r}"
                    )
            rows.append(parsed)
    if not rows:
        raise ManifestValueError(f"{what}: file {path} is empty")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ManifestValueError(f"{what}: ragged rows, widths {sorted(widths)}")
    return np.array(rows, dtype=np.float64)


def read_manifest(path: str) -> DatasetManifest:
    """Parse and schema-check the manifest JSON (no matrix loading)."""
    if not os.path.exists(path):
        raise ManifestMissingFileError(f"manifest not found: {path}")
    try:
        spec = json.loads(open(path).read())
    except json.JSONDecodeError as e:
        raise ManifestSchemaError(f"{path}: not valid JSON: {e}") from None
    for key in ("name", "task", "class_count", "views", "labels_file"):
        if key not in spec:
            raise ManifestSchemaError(f"{path}: missing required key {key!r}")
    if not spec["views"]:
        raise ManifestSchemaError(f"{path}: view list is empty")
    return DatasetManifest(
        name=spec["name"], task=spec["task"], class_count=int(spec["class_count"]),
        views=spec["views"], labels_file=spec["labels_file"],
        sample_count=int(spec.get("sample_count", -1)),
    )


def load_manifest(path: str) -> Dataset:
    """Load and validate a dataset manifest; every inconsistency is a distinct
    error naming the offending file and coordinates."""
    manifest = read_manifest(path)
    base = os.path.dirname(os.path.abspath(path))

    views, names = [], []
    for v in manifest.views:
        mat = _read_csv_matrix(os.path.join(base, v["matrix_file"]), f"view {v['view_name']}")
        if "feature_dim" in v and mat.shape[1] != v["feature_dim"]:
            raise ManifestCountError(
                f"view {v['view_name']}: declared feature_dim {v['feature_dim']} "
                f"but matrix has {mat.shape[1]} columns"
            )
        views.append(mat)
        names.append(v["view_name"])

    labels_mat = _read_csv_matrix(os.path.join(base, manifest.labels_file), "labels")
    labels = labels_mat.reshape(-1)
    if not np.array_equal(labels, labels.astype(int)):
        raise ManifestValueError("labels: values must be integers")
    labels = labels.astype(int)

    counts = {name: v.shape[0] for name, v in zip(names, views)}
    counts["labels"] = len(labels)
    if manifest.sample_count >= 0:
        counts["declared"] = manifest.sample_count
    if len(set(counts.values())) != 1:
        raise ManifestCountError(f"sample counts disagree: {counts}")
    if labels.min() < 0 or labels.max() >= manifest.class_count:
        raise ManifestValueError(
            f"labels range [{labels.min()}, {labels.max()}] outside "
            f"class_count {manifest.class_count}"
        )
    return Dataset(manifest.name, manifest.task, manifest.class_count, names, views, labels)


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split: deterministic, disjoint, exhaustive."""
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"split fraction must lie in (0,1), got {fraction}")
    rng = Rng(seed).child("split")
    classes, counts = np.unique(dataset.labels, return_counts=True)
    if counts.min() < 2:
        warnings.warn("a class has fewer than 2 samples; falling back to a plain random split")
        order = rng.permutation(dataset.n)
        cut = int(round(fraction * dataset.n))
        return dataset.subset(np.sort(order[:cut])), dataset.subset(np.sort(order[cut:]))
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for c in classes:
        members = np.flatnonzero(dataset.labels == c)
        members = members[rng.permutation(len(members))]
        cut = int(round(fraction * len(members)))
        cut = min(max(cut, 1), len(members) - 1)
        train_idx.append(members[:cut])
        test_idx.append(members[cut:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return dataset.subset(tr), dataset.subset(te)


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Per-view zero mean / unit variance, statistics from the train split only."""
    stats = []
    for v in train.views:
        mu = v.mean(axis=0)
        sd = v.std(axis=0)
        sd[sd == 0] = 1.0
        stats.append((mu, sd))
    out = []
    for ds in (train, *others):
        views = [(v - mu) / sd for v, (mu, sd) in zip(ds.views, stats)]
        out.append(Dataset(ds.name, ds.task, ds.class_count, ds.view_names, views,
                           ds.labels, dict(ds.meta)))
    return tuple(out)


# ---------------------------------------------------------------------------
# synthetic generators


@dataclass
class SyntheticSpec:
    generator: str = "clusters"        # clusters | seg2d
    sample_count: int = 200
    modality_count: int = 2
    seed: int = 0
    # clusters
    class_count: int = 2
    feature_dim: int = 8
    cluster_spread: float = 3.0
    noise: float | list[float] = 0.5   # per-modality when a list
    # seg2d
    image_size: int = 32
    corrupt_rect: tuple[int, int, int, int] | None = None  # (r0, c0, r1, c1) in modality B
    corrupt_noise: float = 2.0
    corrupt_moving: bool = False       # keep the rect's size but place it per sample
    pixel_noise: float = 0.1
    ellipse_min: float = 0.12          # semi-axis range as a fraction of image size
    ellipse_max: float = 0.3
    contrast: tuple[float, float] = (1.0, 1.0)  # foreground level per modality

    def noise_for(self, p: int) -> float:
        if isinstance(self.noise, (list, tuple)):
            return float(self.noise[p])
        return float(self.noise)


def synth_clusters(spec: SyntheticSpec) -> Dataset:
    """Gaussian class clusters, one cloud per (class, modality).

    Class means are drawn once per modality; each sample is its class mean
    plus isotropic noise at that modality's level. `meta` records the true
    means and noise levels so closed-form oracles can use them.
    """
    rng = Rng(spec.seed).child("clusters")
    n, c, d = spec.sample_count, spec.class_count, spec.feature_dim
    labels = np.arange(n) % c
    labels = labels[rng.permutation(n)]
    views, means, noises = [], [], []
    for p in range(spec.modality_count):
        mu = rng.normal(0.0, spec.cluster_spread, (c, d))
        sigma = spec.noise_for(p)
        x = mu[labels] + rng.normal(0.0, 1.0, (n, d)) * sigma
        views.append(x)
        means.append(mu)
        noises.append(sigma)
    return Dataset(
        name=f"clusters-{spec.seed}", task="classification", class_count=c,
        view_names=[f"m{p}" for p in range(spec.modality_count)],
        views=views, labels=labels,
        meta={"means": means, "noises": noises, "spec": spec},
    )


@dataclass
class SegDataset:
    """Dense-prediction data: per-modality image stacks plus pixel labels."""

    images: list[np.ndarray]   # each (n, 1, H, W)
    labels: np.ndarray         # (n, H, W) int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "SegDataset":
        return SegDataset([im[idx] for im in self.images], self.labels[idx], dict(self.meta))


def synth_seg2d(spec: SyntheticSpec) -> SegDataset:
    """Two-modality ellipse segmentation images.

    Each sample is a random filled ellipse (foreground 1, background 0) plus
    pixel noise. Modality B's `corrupt_rect` region is overwritten with strong
    noise, so only modality A carries label signal there.
    """
    s = spec.image_size
    if spec.corrupt_rect is not None:
        r0, c0, r1, c1 = spec.corrupt_rect
        if not (0 <= r0 < r1 <= s and 0 <= c0 < c1 <= s):
            raise UsageError(
                f"corruption region {spec.corrupt_rect} outside {s}x{s} image"
            )
    rng = Rng(spec.seed).child("seg2d")
    n = spec.sample_count
    yy, xx = np.mgrid[0:s, 0:s]
    labels = np.zeros((n, s, s), dtype=int)
    base = np.zeros((n, s, s))
    for i in range(n):
        cy, cx = rng.uniform(s * 0.3, s * 0.7, 2)
        ay, ax = rng.uniform(s * spec.ellipse_min, s * spec.ellipse_max, 2)
        theta = rng.uniform(0, np.pi, 1)[0]
        dy, dx = yy - cy, xx - cx
        ry = dy * np.cos(theta) + dx * np.sin(theta)
        rx = -dy * np.sin(theta) + dx * np.cos(theta)
        mask = (ry / ay) ** 2 + (rx / ax) ** 2 <= 1.0
        labels[i][mask] = 1
        base[i] = mask.astype(float)
    images = []
    for p in range(2):
        img = spec.contrast[p] * base + rng.normal(0.0, spec.pixel_noise, (n, s, s))
        if p == 1 and spec.corrupt_rect is not None:
            r0, c0, r1, c1 = spec.corrupt_rect
            h, w = r1 - r0, c1 - c0
            for i in range(n):
                if spec.corrupt_moving:
                    ro = int(rng.integers(0, s - h + 1))
                    co = int(rng.integers(0, s - w + 1))
                else:
                    ro, co = r0, c0
                img[i, ro : ro + h, co : co + w] = rng.normal(0.0, spec.corrupt_noise, (h, w))
        images.append(img[:, None, :, :])
    return SegDataset(images, labels, meta={"spec": spec})


def ood_perturb(features, sigma: float, seed: int):
    """Additive elementwise Gaussian noise, deterministic per seed.

    Accepts one array or a list of per-view arrays; sigma=0 returns the input
    values unchanged.
    """
    if sigma < 0:
        raise UsageError(f"sigma must be non-negative, got {sigma}")
    rng = Rng(seed).child("ood")
    single = not isinstance(features, (list, tuple))
    arrays = [features] if single else list(features)
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        out.append(a + rng.normal(0.0, 1.0, a.shape) * sigma if sigma > 0 else a.copy())
    return out[0] if single else out
