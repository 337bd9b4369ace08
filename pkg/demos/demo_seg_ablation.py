"""Cross-modal weighting on the corrupted-modality segmentation benchmark.

Two modalities image the same random ellipse: A is weak-contrast but clean,
B is strong-contrast but blinded by a strong-noise patch that moves from
sample to sample, so the reliable modality changes per input and position.
The mode grid (plain fusion baseline, uncertainty gating, gating + cross /
self attention) trains on shared seeds and lands in one CSV. Expect the gated
models to beat the baseline: they amplify A exactly where B's predictor
residual flags trouble.

Takes a couple of minutes per seed per mode (12 trainings at the default
three seeds). Usage: python demos/demo_seg_ablation.py [out_dir] [seeds]
"""

import sys

from crnp.cli import main as crnp_main


def main(out_dir: str = "runs", seeds: str = "0,1,2") -> None:
    rc = crnp_main([
        "ablate",
        "--set", "preset=seg2d",
        "--set", f"out_dir={out_dir}",
        "--set", "experiment=seg-ablation",
        "--set", f"seeds={seeds}",
    ])
    if rc != 0:
        raise SystemExit(rc)
    path = f"{out_dir}/seg-ablation/ablation.csv"
    print(open(path).read())


if __name__ == "__main__":
    main(*sys.argv[1:3])
