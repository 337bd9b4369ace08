"""One-time converter for the UCI multiple-features handwritten digit archive
(the six mfeat-* files) into the CSV + JSON manifest this package ingests.

The raw archive is whitespace-separated, 2000 rows per file, ordered by class
(200 samples each for digits 0..9). Download it yourself from the UCI
repository, unpack, then run:

    python demos/convert_uci_handwritten.py <dir with mfeat-* files> data/handwritten

See docs/handwritten.md for the full walkthrough.
"""

import json
import os
import sys

import numpy as np

VIEWS = [
    ("fac", "mfeat-fac", 216),
    ("fou", "mfeat-fou", 76),
    ("kar", "mfeat-kar", 64),
    ("mor", "mfeat-mor", 6),
    ("pix", "mfeat-pix", 240),
    ("zer", "mfeat-zer", 47),
]


def main(src_dir: str, out_dir: str = "data/handwritten") -> str:
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    n = None
    for view_name, fname, dim in VIEWS:
        src = os.path.join(src_dir, fname)
        if not os.path.exists(src):
            raise SystemExit(f"missing {src}; the archive has six mfeat-* files")
        mat = np.loadtxt(src)
        if mat.shape[1] != dim:
            raise SystemExit(f"{fname}: expected {dim} columns, found {mat.shape[1]}")
        n = mat.shape[0] if n is None else n
        if mat.shape[0] != n:
            raise SystemExit(f"{fname}: row count {mat.shape[0]} != {n}")
        out_name = f"{view_name}.csv"
        np.savetxt(os.path.join(out_dir, out_name), mat, delimiter=",", fmt="%.10g")
        entries.append({"view_name": view_name, "matrix_file": out_name, "feature_dim": dim})
    labels = np.repeat(np.arange(10), n // 10)
    np.savetxt(os.path.join(out_dir, "labels.csv"), labels, delimiter=",", fmt="%d")
    manifest = {
        "name": "handwritten",
        "task": "classification",
        "class_count": 10,
        "views": entries,
        "labels_file": "labels.csv",
        "sample_count": int(n),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    print(path)
    return path


if __name__ == "__main__":
    if len(sys.argv) < 2:
        raise SystemExit(__doc__)
    main(*sys.argv[1:3])
