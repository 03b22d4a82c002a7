import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quadnet import numerics as nx
from quadnet.errors import BatchSizeError, CheckpointError, ConfigError, DimensionError
from quadnet.model import (
    EmbeddingDimWarning,
    ModelConfig,
    index_to_label,
    init_model,
    label_to_index,
    load_checkpoint,
    predict_from_probs,
    save_checkpoint,
)
from quadnet.numerics import Tensor

from conftest import make_model

# biases that feed a train-mode batch norm: the normalisation cancels any shift,
# so their gradient is identically zero and only rounding noise is measurable
BN_INVARIANT = {"backbone.1.bias", "head.0.bias"}


def test_same_seed_gives_identical_weights():
    a, b = make_model(seed=11), make_model(seed=11)
    for p, q in zip(a.parameters(), b.parameters()):
        assert p.data.tobytes() == q.data.tobytes()


def test_different_seed_differs():
    a, b = make_model(seed=1), make_model(seed=2)
    assert not np.array_equal(a.parameters()[0].data, b.parameters()[0].data)


def test_init_ranges_and_batchnorm_defaults():
    m = make_model(input_dim=16, backbone_hidden=[9])
    w = m.backbone[0].weight.data
    assert np.all(np.abs(w) <= 1 / math.sqrt(16))
    assert np.all(np.abs(m.backbone[1].weight.data) <= 1 / 3)
    assert np.array_equal(m.head_bn.gamma.data, np.ones(6))
    assert np.array_equal(m.head_bn.beta.data, np.zeros(6))
    assert np.array_equal(m.head_bn.running_mean, np.zeros(6))
    assert np.array_equal(m.head_bn.running_var, np.ones(6))


def test_shape_contract(rng):
    m = make_model(input_dim=16, embed_dim=8, num_classes=5)
    x = Tensor(rng.normal(size=(4, 16)))
    emb, logits = m.forward(x)
    assert emb.shape == (4, 8)
    assert logits.shape == (4, 6)


def test_head_width_is_classes_plus_one(rng):
    m = make_model(input_dim=3, embed_dim=7, num_classes=6)
    assert m.classify(Tensor(rng.normal(size=(3, 7)))).shape == (3, 7)


def test_large_embedding_dim_warns():
    with pytest.warns(EmbeddingDimWarning):
        m = init_model(ModelConfig(input_dim=8, embed_dim=40, num_classes=5))
    assert m.config.embed_dim == 40


def test_small_embedding_dim_rejected():
    with pytest.raises(ConfigError):
        init_model(ModelConfig(input_dim=8, embed_dim=1, num_classes=5))


def test_no_warning_at_boundary():
    with warnings.catch_warnings():
        warnings.simplefilter("error", EmbeddingDimWarning)
        init_model(ModelConfig(input_dim=8, embed_dim=6, num_classes=5))


def test_zero_weights_give_zero_embedding(rng):
    m = make_model()
    for layer in m.backbone:
        layer.weight.data[...] = 0
        layer.bias.data[...] = 0
    assert np.array_equal(m.embed(Tensor(rng.normal(size=(5, 16)))).data, np.zeros((5, 6)))


def test_zero_head_gives_zero_logits(rng):
    m = make_model()
    for layer in (m.head_in, m.head_out):
        layer.weight.data[...] = 0
        layer.bias.data[...] = 0
    m.eval()
    assert np.array_equal(m.classify(Tensor(rng.normal(size=(3, 6)))).data, np.zeros((3, 6)))


def test_eval_mode_is_repeatable(rng):
    m = make_model().eval()
    x = Tensor(rng.normal(size=(5, 16)))
    assert np.array_equal(m.forward(x)[1].data, m.forward(x)[1].data)


def test_train_mode_constant_batch_is_finite():
    m = make_model().train()
    logits = m.classify(Tensor(np.ones((4, 6))))
    assert np.all(np.isfinite(logits.data))
    assert np.all(m.head_bn.running_var > 0)


def test_single_row_in_train_mode_is_rejected(rng):
    m = make_model().train()
    emb = m.embed(Tensor(rng.normal(size=(1, 16))))  # no batch norm on this path
    with pytest.raises(BatchSizeError):
        m.classify(emb)
    m.eval()
    assert m.classify(emb).shape == (1, 6)


def test_empty_batch_rejected():
    m = make_model().eval()
    with pytest.raises(BatchSizeError):
        m.classify(Tensor(np.zeros((0, 6))))


def test_width_mismatch_rejected(rng):
    m = make_model()
    with pytest.raises(DimensionError):
        m.classify(Tensor(rng.normal(size=(3, 5))))
    with pytest.raises(DimensionError):
        m.embed(Tensor(rng.normal(size=(3, 15))))


def test_softmax_uniform():
    p = nx.softmax(Tensor(np.zeros((2, 7)))).data
    assert np.allclose(p, 1 / 7, atol=1e-15)


def test_softmax_log3():
    p = nx.softmax(Tensor([[0.0, math.log(3.0)]])).data
    assert p[0] == pytest.approx([0.25, 0.75], abs=1e-15)


def test_softmax_stable_for_large_logits():
    p = nx.softmax(Tensor([[1000.0, 0.0]])).data
    assert p[0, 0] == pytest.approx(1.0) and p[0, 1] < 1e-300


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(logits):
    p = nx.softmax(Tensor(logits)).data
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)


@pytest.mark.parametrize(
    "probs, label",
    [([0.9, 0.05, 0.05], -1), ([0.1, 0.1, 0.1, 0.7], 2), ([0.4, 0.4, 0.2], -1)],
)
def test_prediction_label_mapping(probs, label):
    assert predict_from_probs(np.array([probs]))[0] == label


def test_label_mapping_is_bijection():
    labels = np.arange(-1, 9)
    idx = label_to_index(labels)
    assert sorted(idx.tolist()) == list(range(10))
    assert np.array_equal(index_to_label(idx), labels)


def test_eval_output_independent_of_batch_mates(rng):
    m = make_model()
    m.train()
    m.classify(m.embed(Tensor(rng.normal(size=(16, 16)))))  # move running stats off their defaults
    m.eval()
    row = rng.normal(size=(1, 16))
    a = m.forward(Tensor(np.vstack([row, rng.normal(size=(3, 16))])))[1].data[0]
    b = m.forward(Tensor(np.vstack([row, rng.normal(size=(5, 16)) * 4])))[1].data[0]
    assert np.allclose(a, b, rtol=0, atol=1e-13)


def test_train_output_depends_on_batch_mates(rng):
    m = make_model().train()
    row = rng.normal(size=(1, 16))
    a = m.forward(Tensor(np.vstack([row, rng.normal(size=(3, 16))])))[1].data[0]
    b = m.forward(Tensor(np.vstack([row, rng.normal(size=(5, 16)) * 4])))[1].data[0]
    assert not np.allclose(a, b)


@pytest.mark.parametrize("seed", range(4))
def test_classify_embed_gradients(seed):
    rng = np.random.default_rng(seed)
    m = make_model(seed=seed).train()
    x = Tensor(rng.uniform(-2, 2, (8, 16)))
    w = Tensor(rng.uniform(-1, 1, (8, 6)))
    f = lambda: nx.reduce_sum(nx.mul(m.classify(m.embed(x)), w))  # noqa: E731
    identifiable = [p for p in m.parameters() if p.name not in BN_INVARIANT]
    assert nx.finite_diff_check(f, identifiable, 1e-5) <= 1e-4
    invariant = [p for p in m.parameters() if p.name in BN_INVARIANT]
    nx.backward(f(), m.parameters())
    for p in invariant:
        assert np.abs(p.grad).max() <= 1e-12
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + 1e-5
            up = f().item()
            flat[i] = orig - 1e-5
            down = f().item()
            flat[i] = orig
            assert abs(up - down) / 2e-5 <= 1e-9


def test_checkpoint_round_trip(tmp_path, rng):
    m = make_model(seed=5)
    m.train()
    m.classify(m.embed(Tensor(rng.normal(size=(8, 16)))))
    save_checkpoint(m, tmp_path / "m.qnm")
    back = load_checkpoint(tmp_path / "m.qnm")
    assert back.config == m.config
    for a, b in zip(m.state(), back.state()):
        assert a.tobytes() == b.tobytes()
    raw = (tmp_path / "m.qnm").read_bytes()
    assert raw[:4] == b"QNM1"


def test_checkpoint_rejects_bad_magic_and_version(tmp_path):
    m = make_model()
    path = tmp_path / "m.qnm"
    save_checkpoint(m, path)
    raw = bytearray(path.read_bytes())
    (tmp_path / "bad.qnm").write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "bad.qnm")
    raw[4] = 9
    (tmp_path / "v9.qnm").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v9.qnm")
    (tmp_path / "short.qnm").write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.qnm")
