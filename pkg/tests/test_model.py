import numpy as np
import pytest

from crnp import tensor as T
from crnp.errors import UsageError
from crnp.model import (
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    CrnpModel,
    ModelArch,
    ensemble_predict,
    load_checkpoint,
    save_checkpoint,
)
from crnp.tensor import Rng

from oracles import relative_error


@pytest.fixture(autouse=True)
def fresh_tape():
    T.reset_tape()
    yield
    T.reset_tape()


def _cls_arch(**kw):
    base = dict(task="classification", class_count=3, modality_dims=[5, 7],
                feature_dim=8, encoder_hidden=16, seed=11)
    base.update(kw)
    return ModelArch(**base)


def _cls_inputs(n=4, seed=1):
    rng = Rng(seed)
    return [rng.normal(0, 1, (n, 5)), rng.normal(0, 1, (n, 7))]


class _ZeroRnp:
    def score(self, x):
        return np.zeros_like(np.asarray(x))


class TestForward:
    def test_simplex_rows(self):
        model = CrnpModel(_cls_arch(attention="self"))
        probs, _ = model.forward(_cls_inputs())
        assert probs.shape == (4, 3)
        assert (probs >= 0).all()
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6

    def test_modality_count_mismatch(self):
        model = CrnpModel(_cls_arch())
        with pytest.raises(UsageError):
            model.forward(_cls_inputs()[:1])

    def test_uncertainty_maps_returned(self):
        model = CrnpModel(_cls_arch())
        _, maps = model.forward(_cls_inputs())
        assert len(maps) == 2
        for m in maps:
            assert (m.raw >= 0).all()
            assert (m.normalized >= 0).all() and (m.normalized <= 1).all()

    def test_zero_uncertainty_collapse_bitwise(self):
        """Stubbed zero maps + residual fusion = the gating-disabled model."""
        crnp = CrnpModel(_cls_arch(crnp_enabled=True, fusion_fn="residual"))
        for b in crnp.bundles:
            b.rnp = _ZeroRnp()
        base = CrnpModel(_cls_arch(crnp_enabled=False))
        x = _cls_inputs()
        assert np.array_equal(crnp.predict_logits(x), base.predict_logits(x))

    def test_dense_prediction_simplex_per_pixel(self):
        arch = ModelArch(task="dense_prediction", class_count=2, modality_dims=[1, 1],
                         feature_dim=32, encoder_kind="conv2d", attention="self", seed=2)
        model = CrnpModel(arch)
        x = [Rng(3).normal(0, 1, (2, 1, 32, 32)) for _ in range(2)]
        probs, maps = model.forward(x)
        assert probs.shape == (2, 2, 32, 32)
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6
        assert maps[0].raw.shape == (2, 32, 8, 8)

    def test_separate_decoders(self):
        model = CrnpModel(_cls_arch(decoder_mode="separate"))
        probs, _ = model.forward(_cls_inputs())
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6


def _leaky(x):
    return np.where(x > 0, x, 0.25 * x)


def _run_dense_stack(stack, x):
    for i, layer in enumerate(stack.layers):
        x = x @ layer.w.data + layer.b.data
        if i < len(stack.layers) - 1:
            x = _leaky(x)
    return x


def test_full_pipeline_matches_hand_traced_oracle():
    """Two-modality model on one sample, recomputed step by step in numpy."""
    arch = _cls_arch(attention="self", fusion_fn="residual", seed=21)
    model = CrnpModel(arch)
    x = [Rng(9).normal(0, 1, (1, 5)), Rng(10).normal(0, 1, (1, 7))]
    probs, _ = model.forward(x)

    feats = [_run_dense_stack(b.encoder, xi) for b, xi in zip(model.bundles, x)]
    scores = []
    for b, f in zip(model.bundles, feats):
        diff = _run_dense_stack(b.rnp.phi, f) - _run_dense_stack(b.rnp.psi, f)
        scores.append(diff**2)
    u = [scores[1], scores[0]]  # cross rule: each map from the other modality
    u_hat = [ui / (ui.max(axis=0, keepdims=True) + 1e-8) for ui in u]
    tilde = [f + uh * f for f, uh in zip(feats, u_hat)]

    tokens = np.concatenate([tilde[0], tilde[1]], axis=0)  # (2, N)
    ap = model.attention_params
    q, k, v = tokens @ ap.w_q.data, tokens @ ap.w_k.data, tokens @ ap.w_v.data
    att = q @ k.T / np.sqrt(ap.d_k)
    att = np.exp(att - att.max(axis=1, keepdims=True))
    att /= att.sum(axis=1, keepdims=True)
    out_tokens = tokens + att @ v
    joint = np.concatenate([out_tokens[0:1], out_tokens[1:2]], axis=1)
    dec = model.decoders[0]
    logits = joint @ dec.w.data + dec.b.data
    expected = np.exp(logits - logits.max())
    expected /= expected.sum()
    assert relative_error(probs, expected) < 1e-12


class _StubModel:
    def __init__(self, logits, task="classification", class_count=2):
        self._logits = np.asarray(logits, dtype=np.float64)
        self.arch = type("A", (), {"task": task, "class_count": class_count})()

    def predict_logits(self, inputs):
        return self._logits.copy()


class TestEnsemble:
    def test_three_identical_models_match_single(self):
        model = CrnpModel(_cls_arch())
        x = _cls_inputs()
        single, _ = model.forward(x)
        triple = ensemble_predict([model, model, model], x)
        assert np.allclose(triple, single, rtol=0, atol=1e-12)

    def test_one_model_identity_bitwise(self):
        model = CrnpModel(_cls_arch())
        x = _cls_inputs()
        single, _ = model.forward(x)
        assert np.array_equal(ensemble_predict([model], x), single)

    def test_logit_averaging_arithmetic(self):
        models = [_StubModel([[2.0, 0.0]]), _StubModel([[0.0, 2.0]]), _StubModel([[1.0, 1.0]])]
        probs = ensemble_predict(models, [])
        assert np.allclose(probs, [[0.5, 0.5]], atol=1e-12)

    def test_argmax_matches_external_mean(self):
        models = [CrnpModel(_cls_arch(seed=s)) for s in (1, 2, 3)]
        x = _cls_inputs(n=16)
        probs = ensemble_predict(models, x)
        mean_logits = np.mean([m.predict_logits(x) for m in models], axis=0)
        assert np.array_equal(probs.argmax(axis=1), mean_logits.argmax(axis=1))

    def test_heterogeneous_class_counts_rejected(self):
        with pytest.raises(UsageError):
            ensemble_predict([_StubModel([[0.0, 1.0]], class_count=2),
                              _StubModel([[0.0, 1.0]], class_count=3)], [])


class TestCheckpoint:
    def test_roundtrip_bitwise_and_byte_identical(self, tmp_path):
        model = CrnpModel(_cls_arch(attention="cross", fusion_fn="concat"))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, str(p1))
        loaded = load_checkpoint(str(p1))
        save_checkpoint(loaded, str(p2))
        assert p1.read_bytes() == p2.read_bytes()
        for (_, a), (_, b) in zip(model.named_parameters(), loaded.named_parameters()):
            assert np.array_equal(a.data, b.data)

    def test_predictions_preserved(self, tmp_path):
        model = CrnpModel(_cls_arch())
        x = _cls_inputs()
        before, _ = model.forward(x)
        save_checkpoint(model, str(tmp_path / "m.ckpt"))
        after, _ = load_checkpoint(str(tmp_path / "m.ckpt")).forward(x)
        assert np.array_equal(before, after)

    def test_psi_digest_survives_roundtrip(self, tmp_path):
        model = CrnpModel(_cls_arch())
        digests = [b.rnp.psi_digest for b in model.bundles]
        save_checkpoint(model, str(tmp_path / "m.ckpt"))
        loaded = load_checkpoint(str(tmp_path / "m.ckpt"))
        assert [b.rnp.psi_digest for b in loaded.bundles] == digests
        loaded.check_psi_frozen()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOTAMODEL")
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(str(p))

    def test_version_mismatch(self, tmp_path):
        model = CrnpModel(_cls_arch())
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, str(p))
        blob = bytearray(p.read_bytes())
        blob[5:9] = (99).to_bytes(4, "little")
        p.write_bytes(bytes(blob))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(str(p))

    def test_truncation(self, tmp_path):
        model = CrnpModel(_cls_arch())
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, str(p))
        blob = p.read_bytes()
        p.write_bytes(blob[: len(blob) - 64])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(str(p))
