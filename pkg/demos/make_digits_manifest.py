"""Build a six-view multi-feature dataset from scikit-learn's bundled
handwritten digit images (1797 samples, 10 classes) and write it in the
manifest format this package ingests.

The views mirror the classic multiple-feature construction for digit images:
raw pixels, Fourier magnitudes, Karhunen-Loeve (PCA) coefficients, image
moments, row/column profiles, and morphological summaries. Everything is a
deterministic function of the images.

Usage: python demos/make_digits_manifest.py [out_dir]   (default data/digits6)
"""

import json
import os
import sys

import numpy as np
from sklearn.datasets import load_digits


def fourier_view(images: np.ndarray) -> np.ndarray:
    """Magnitudes of the 32 lowest-frequency 2-D DFT coefficients."""
    spec = np.abs(np.fft.fft2(images))
    flat = spec.reshape(len(images), -1)
    return flat[:, :32]


def pca_view(pixels: np.ndarray, dims: int = 32) -> np.ndarray:
    centered = pixels - pixels.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:dims].T


def moments_view(images: np.ndarray) -> np.ndarray:
    """Central moments up to order 3 plus spread statistics (12 values)."""
    n, h, w = images.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    mass = images.sum(axis=(1, 2)) + 1e-9
    cy = (images * yy).sum(axis=(1, 2)) / mass
    cx = (images * xx).sum(axis=(1, 2)) / mass
    dy = yy[None] - cy[:, None, None]
    dx = xx[None] - cx[:, None, None]
    feats = [cy, cx]
    for py, px in [(2, 0), (0, 2), (1, 1), (3, 0), (0, 3), (2, 1), (1, 2)]:
        feats.append((images * dy**py * dx**px).sum(axis=(1, 2)) / mass)
    feats.append(images.max(axis=(1, 2)))
    feats.append(images.std(axis=(1, 2)))
    feats.append(mass / (h * w))
    return np.stack(feats, axis=1)


def profiles_view(images: np.ndarray) -> np.ndarray:
    """Row sums, column sums, and the two diagonal projections."""
    rows = images.sum(axis=2)
    cols = images.sum(axis=1)
    diag = np.stack([[np.trace(im, offset=k) for k in range(-4, 5)] for im in images])
    anti = np.stack([[np.trace(im[:, ::-1], offset=k) for k in range(-4, 5)] for im in images])
    return np.concatenate([rows, cols, diag, anti], axis=1)


def morphological_view(images: np.ndarray) -> np.ndarray:
    """Six coarse shape statistics of the thresholded glyph."""
    fg = images > images.mean()
    area = fg.sum(axis=(1, 2)).astype(float)
    rows_any = fg.any(axis=2)
    cols_any = fg.any(axis=1)
    height = rows_any.sum(axis=1).astype(float)
    width = cols_any.sum(axis=1).astype(float)
    perimeter = (np.abs(np.diff(fg.astype(int), axis=1)).sum(axis=(1, 2))
                 + np.abs(np.diff(fg.astype(int), axis=2)).sum(axis=(1, 2))).astype(float)
    ink = images.sum(axis=(1, 2))
    aspect = height / (width + 1e-9)
    return np.stack([area, height, width, perimeter, ink, aspect], axis=1)


def build_views(images: np.ndarray, pixels: np.ndarray) -> dict[str, np.ndarray]:
    return {
        "pix": pixels,
        "fou": fourier_view(images),
        "kar": pca_view(pixels),
        "mom": moments_view(images),
        "pro": profiles_view(images),
        "mor": morphological_view(images),
    }


def write_manifest(out_dir: str, views: dict[str, np.ndarray], labels: np.ndarray,
                   name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for view_name, mat in views.items():
        fname = f"{view_name}.csv"
        np.savetxt(os.path.join(out_dir, fname), mat, delimiter=",", fmt="%.10g")
        entries.append({"view_name": view_name, "matrix_file": fname,
                        "feature_dim": int(mat.shape[1])})
    np.savetxt(os.path.join(out_dir, "labels.csv"), labels, delimiter=",", fmt="%d")
    manifest = {
        "name": name,
        "task": "classification",
        "class_count": int(labels.max()) + 1,
        "views": entries,
        "labels_file": "labels.csv",
        "sample_count": int(len(labels)),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def main(out_dir: str = "data/digits6") -> str:
    bunch = load_digits()
    images = bunch.images.astype(float)
    pixels = bunch.data.astype(float)
    path = write_manifest(out_dir, build_views(images, pixels), bunch.target, "digits6")
    print(path)
    return path


if __name__ == "__main__":
    main(*sys.argv[1:])
