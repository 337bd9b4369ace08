import json

import numpy as np
import pytest

from crnp.data import (
    Dataset,
    ManifestCountError,
    ManifestMissingFileError,
    ManifestSchemaError,
    ManifestValueError,
    SyntheticSpec,
    load_manifest,
    ood_perturb,
    split,
    standardize,
    synth_clusters,
    synth_seg2d,
)
from crnp.errors import UsageError
from crnp.tensor import Rng


def _write_manifest(tmp_path, n=20, views=2, label_rows=None, bad_cell=None):
    for v in range(views):
        rows = []
        for r in range(n):
            cells = [f"{0.1 * (r + c + v):.4f}" for c in range(3)]
            rows.append(",".join(cells))
        if bad_cell and v == 0:
            r, c, text = bad_cell
            cells = rows[r].split(",")
            cells[c] = text
            rows[r] = ",".join(cells)
        (tmp_path / f"view{v}.csv").write_text("\n".join(rows) + "\n")
    labels = [str(i % 4) for i in range(label_rows if label_rows is not None else n)]
    (tmp_path / "labels.csv").write_text("\n".join(labels) + "\n")
    manifest = {
        "name": "fixture",
        "task": "classification",
        "class_count": 4,
        "views": [{"view_name": f"v{v}", "matrix_file": f"view{v}.csv", "feature_dim": 3}
                  for v in range(views)],
        "labels_file": "labels.csv",
        "sample_count": n,
    }
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


class TestLoadManifest:
    def test_multi_view_load(self, tmp_path):
        ds = load_manifest(str(_write_manifest(tmp_path, n=20, views=6)))
        assert ds.n == 20 and len(ds.views) == 6
        assert all(v.shape == (20, 3) for v in ds.views)
        assert ds.views[0].dtype == np.float64

    def test_label_count_mismatch_names_both_counts(self, tmp_path):
        path = _write_manifest(tmp_path, n=20, label_rows=19)
        with pytest.raises(ManifestCountError) as ei:
            load_manifest(str(path))
        assert "20" in str(ei.value) and "19" in str(ei.value)

    def test_empty_view_list(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"name": "x", "task": "classification",
                                    "class_count": 2, "views": [],
                                    "labels_file": "labels.csv"}))
        with pytest.raises(ManifestSchemaError):
            load_manifest(str(path))

    def test_missing_matrix_file(self, tmp_path):
        path = _write_manifest(tmp_path)
        (tmp_path / "view1.csv").unlink()
        with pytest.raises(ManifestMissingFileError):
            load_manifest(str(path))

    def test_non_numeric_cell_with_coordinates(self, tmp_path):
        path = _write_manifest(tmp_path, bad_cell=(3, 1, "oops"))
        with pytest.raises(ManifestValueError) as ei:
            load_manifest(str(path))
        assert "row 3" in str(ei.value) and "column 1" in str(ei.value)

    def test_nan_cell_rejected(self, tmp_path):
        path = _write_manifest(tmp_path, bad_cell=(2, 2, "nan"))
        with pytest.raises(ManifestValueError):
            load_manifest(str(path))

    def test_declared_count_mismatch(self, tmp_path):
        path = _write_manifest(tmp_path, n=20)
        spec = json.loads(path.read_text())
        spec["sample_count"] = 21
        path.write_text(json.dumps(spec))
        with pytest.raises(ManifestCountError):
            load_manifest(str(path))

    def test_feature_dim_mismatch(self, tmp_path):
        path = _write_manifest(tmp_path)
        spec = json.loads(path.read_text())
        spec["views"][0]["feature_dim"] = 7
        path.write_text(json.dumps(spec))
        with pytest.raises(ManifestCountError):
            load_manifest(str(path))


def _dataset(n=2000, classes=10, seed=0):
    rng = Rng(seed)
    return Dataset("d", "classification", classes, ["a", "b"],
                   [rng.normal(0, 1, (n, 4)), rng.normal(0, 1, (n, 6))],
                   np.arange(n) % classes)


class TestSplit:
    def test_80_20_counts(self):
        tr, te = split(_dataset(2000), 0.8, seed=1)
        assert tr.n == 1600 and te.n == 400

    def test_deterministic(self):
        a = split(_dataset(), 0.8, seed=5)[0]
        b = split(_dataset(), 0.8, seed=5)[0]
        assert np.array_equal(a.views[0], b.views[0])
        assert np.array_equal(a.labels, b.labels)

    def test_partition_disjoint_exhaustive(self):
        ds = _dataset(333, classes=4)
        tr, te = split(ds, 0.7, seed=2)
        joined = np.sort(np.concatenate([tr.views[0][:, 0], te.views[0][:, 0]]))
        assert np.array_equal(joined, np.sort(ds.views[0][:, 0]))
        assert tr.n + te.n == ds.n

    def test_stratified_within_one(self):
        ds = _dataset(1000, classes=7)
        tr, _ = split(ds, 0.8, seed=3)
        counts = np.bincount(tr.labels, minlength=7)
        per_class = np.bincount(ds.labels, minlength=7) * 0.8
        assert np.abs(counts - per_class).max() <= 1.0

    def test_small_class_falls_back_with_warning(self):
        ds = _dataset(21, classes=10)
        ds.labels = np.array([0] * 20 + [1])
        with pytest.warns(UserWarning):
            tr, te = split(ds, 0.8, seed=1)
        assert tr.n + te.n == 21

    def test_bad_fraction(self):
        with pytest.raises(UsageError):
            split(_dataset(100), 1.5, seed=0)


class TestStandardize:
    def test_train_statistics(self):
        ds = _dataset(400)
        tr, te = split(ds, 0.8, seed=0)
        str_, ste = standardize(tr, te)
        for v in str_.views:
            assert np.abs(v.mean(axis=0)).max() < 1e-12
            assert np.abs(v.std(axis=0) - 1.0).max() < 1e-12
        # test split transformed with the same statistics, not its own
        assert not np.allclose(ste.views[0].mean(axis=0), 0.0, atol=1e-12)


class TestSynthClusters:
    def test_shapes_and_balance(self):
        ds = synth_clusters(SyntheticSpec(sample_count=200, class_count=2,
                                          modality_count=2, feature_dim=5, seed=1))
        assert len(ds.views) == 2
        assert all(v.shape == (200, 5) for v in ds.views)
        assert np.bincount(ds.labels).tolist() == [100, 100]

    def test_zero_noise_duplicates_class_mean(self):
        ds = synth_clusters(SyntheticSpec(sample_count=40, class_count=2, noise=0.0, seed=2))
        means = ds.meta["means"][0]
        for c in (0, 1):
            rows = ds.views[0][ds.labels == c]
            assert np.allclose(rows, means[c], atol=1e-12)

    def test_bayes_discriminant_is_a_ceiling(self):
        """Closed-form Gaussian discriminant accuracy bounds a trained model."""
        spec = SyntheticSpec(sample_count=400, class_count=3, modality_count=2,
                             feature_dim=4, noise=1.2, cluster_spread=2.0, seed=3)
        ds = synth_clusters(spec)
        means, noises = ds.meta["means"], ds.meta["noises"]

        def bayes_predict(views):
            dist = np.zeros((len(views[0]), spec.class_count))
            for p, v in enumerate(views):
                for c in range(spec.class_count):
                    dist[:, c] += ((v - means[p][c]) ** 2).sum(axis=1) / (noises[p] ** 2)
            return dist.argmin(axis=1)

        bayes_acc = (bayes_predict(ds.views) == ds.labels).mean()
        assert bayes_acc > 0.9
        # nearest-class-mean with wrong (unit) weighting cannot beat Bayes
        naive = np.zeros((ds.n, spec.class_count))
        for p, v in enumerate(ds.views):
            for c in range(spec.class_count):
                naive[:, c] += ((v - means[p][c]) ** 2).sum(axis=1)
        naive_acc = (naive.argmin(axis=1) == ds.labels).mean()
        assert naive_acc <= bayes_acc + 1e-9


class TestSynthSeg2d:
    def test_shapes(self):
        ds = synth_seg2d(SyntheticSpec(generator="seg2d", sample_count=6, seed=1))
        assert len(ds.images) == 2
        assert ds.images[0].shape == (6, 1, 32, 32)
        assert ds.labels.shape == (6, 32, 32)
        assert set(np.unique(ds.labels)) <= {0, 1}

    def test_no_corruption_modalities_agree(self):
        ds = synth_seg2d(SyntheticSpec(generator="seg2d", sample_count=4,
                                       pixel_noise=0.0, seed=2))
        assert np.allclose(ds.images[0], ds.images[1])

    def test_full_corruption_removes_label_signal(self):
        ds = synth_seg2d(SyntheticSpec(generator="seg2d", sample_count=30, seed=3,
                                       corrupt_rect=(0, 0, 32, 32)))
        b = ds.images[1].reshape(30, -1)
        y = ds.labels.reshape(30, -1).astype(float)
        corr = np.corrcoef(b.reshape(-1), y.reshape(-1))[0, 1]
        assert abs(corr) < 0.05

    def test_threshold_oracle_floor(self):
        """Thresholding clean modality A at 0.5 is an accurate baseline."""
        ds = synth_seg2d(SyntheticSpec(generator="seg2d", sample_count=20,
                                       pixel_noise=0.1, seed=4))
        pred = (ds.images[0][:, 0] > 0.5).astype(int)
        acc = (pred == ds.labels).mean()
        assert acc > 0.95

    def test_corruption_outside_image_rejected(self):
        with pytest.raises(UsageError):
            synth_seg2d(SyntheticSpec(generator="seg2d", corrupt_rect=(0, 0, 40, 10)))

    def test_reproducible(self):
        a = synth_seg2d(SyntheticSpec(generator="seg2d", sample_count=3, seed=9))
        b = synth_seg2d(SyntheticSpec(generator="seg2d", sample_count=3, seed=9))
        assert np.array_equal(a.images[0], b.images[0])
        assert np.array_equal(a.labels, b.labels)


class TestOodPerturb:
    def test_sigma_zero_identity(self):
        x = Rng(1).normal(0, 1, (10, 4))
        out = ood_perturb(x, 0.0, seed=3)
        assert np.array_equal(out, x)

    def test_same_seed_same_noise(self):
        x = Rng(2).normal(0, 1, (10, 4))
        assert np.array_equal(ood_perturb(x, 1.0, 5), ood_perturb(x, 1.0, 5))

    def test_sample_statistics(self):
        x = np.zeros((200, 50))
        out = ood_perturb(x, 2.0, seed=7)
        shift = out.mean()
        var = out.var()
        assert abs(shift) < 0.05
        assert abs(var - 4.0) < 0.2

    def test_list_of_views(self):
        views = [Rng(3).normal(0, 1, (5, 2)), Rng(4).normal(0, 1, (5, 3))]
        out = ood_perturb(views, 0.5, seed=1)
        assert len(out) == 2 and out[0].shape == (5, 2)

    def test_negative_sigma_rejected(self):
        with pytest.raises(UsageError):
            ood_perturb(np.zeros(3), -1.0, 0)
