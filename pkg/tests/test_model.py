import math

import numpy as np
import pytest

from adlex import tensor as tn
from adlex.errors import InvalidSeverity, MissingEmbedding, ShapeMismatch, TooShort
from adlex.model import (UNK, CoAttentionParams, Example, LossConfig, ModelConfig, PrecomputedEncoder, Vocab,
                         balanced_class_weights, build_model, coattention, joint_loss, load_model, save_model,
                         split_transcript)
from adlex.tensor import Tensor

VOCAB = Vocab.build([["the", "boy", "is", "on", "a", "stool", "she", "oh", "fell", "."]])
EX = Example("x", ("the", "boy", "is", "on", "the", "stool", "."), 1, 2)


def rand(rng, *shape):
    return Tensor(rng.normal(size=shape))


# --------------------------------------------------------------------------- encoders

def test_vocab_reserves_unk():
    assert VOCAB.itos[0] == UNK
    assert VOCAB.ids(["the", "never-seen"])[1] == 0


@pytest.mark.parametrize("context", ["mean", "selfattn"])
def test_toy_encoder_shapes_and_determinism(context):
    m = build_model(ModelConfig(kind="stl", embed_dim=6, context=context), VOCAB, seed=1)
    C = m.encoder.encode(["boy"])
    assert C.shape == (6, 1)
    np.testing.assert_array_equal(m.encoder.encode(EX.tokens).data, m.encoder.encode(EX.tokens).data)
    assert m.encoder.encode([]).shape == (6, 1)


def test_max_len_truncates():
    m = build_model(ModelConfig(kind="stl", embed_dim=4, max_len=3), VOCAB, seed=1)
    assert m.encoder.encode(EX.tokens).shape == (4, 3)


def test_precomputed_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    mats = {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 7))}
    PrecomputedEncoder.save(tmp_path / "emb", mats)
    enc = PrecomputedEncoder.load(tmp_path / "emb")
    for k in mats:
        assert enc.encode(key=k).data.tobytes() == mats[k].tobytes()
    with pytest.raises(MissingEmbedding):
        enc.encode(key="zzz")
    model = build_model(ModelConfig(kind="siamese", encoder="precomputed"), seed=0, encoder=enc)
    assert 0.0 < model.predict_proba([Example("b", (), 0)])[0] < 1.0
    with pytest.raises(MissingEmbedding):
        build_model(ModelConfig(kind="stl", encoder="precomputed"), seed=0)


def test_split_transcript():
    toks = [str(i) for i in range(11)]
    a, b = split_transcript(toks)
    assert (len(a), len(b)) == (6, 5) and a + b == toks
    assert [len(x) for x in split_transcript(toks[:10])] == [5, 5]
    with pytest.raises(TooShort):
        split_transcript(["x"])


# --------------------------------------------------------------------------- co-attention

def test_coattention_shapes_and_normalisation():
    rng = np.random.default_rng(2)
    params = CoAttentionParams.init(4, 3, tn.make_rng(0, "c"))
    p, a_s, a_c = coattention(rand(rng, 4, 3), rand(rng, 4, 5), params)
    assert p.shape == (1, 8) and a_s.shape == (1, 5) and a_c.shape == (1, 3)
    assert abs(a_s.data.sum() - 1) < 1e-12 and abs(a_c.data.sum() - 1) < 1e-12


def test_coattention_single_tokens():
    rng = np.random.default_rng(3)
    C, S = rand(rng, 4, 1), rand(rng, 4, 1)
    p, a_s, a_c = coattention(C, S, CoAttentionParams.init(4, 2, tn.make_rng(0)))
    assert a_s.data[0, 0] == 1.0 and a_c.data[0, 0] == 1.0
    np.testing.assert_allclose(p.data[0], np.concatenate([S.data[:, 0], C.data[:, 0]]), atol=1e-15)


def test_coattention_permutation_equivariance():
    rng = np.random.default_rng(4)
    C, S = rand(rng, 5, 4), rand(rng, 5, 6)
    params = CoAttentionParams.init(5, 3, tn.make_rng(1))
    p, a_s, a_c = coattention(C, S, params)
    perm_s, perm_c = rng.permutation(6), rng.permutation(4)
    p2, a_s2, a_c2 = coattention(Tensor(C.data[:, perm_c]), Tensor(S.data[:, perm_s]), params)
    np.testing.assert_allclose(a_s2.data[0], a_s.data[0, perm_s], atol=1e-12)
    np.testing.assert_allclose(a_c2.data[0], a_c.data[0, perm_c], atol=1e-12)
    np.testing.assert_allclose(p2.data, p.data, atol=1e-12)


def test_coattention_rejects_bad_shapes():
    params = CoAttentionParams.init(4, 2, tn.make_rng(0))
    with pytest.raises(ShapeMismatch):
        coattention(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 2))), params)


# --------------------------------------------------------------------------- heads and losses

def test_stl_zero_weights_gives_half():
    m = build_model(ModelConfig(kind="stl"), VOCAB, seed=0)
    for p in (m.out.W, m.out.b):
        p.data[...] = 0.0
    assert m.predict_proba([EX])[0] == 0.5


def test_siamese_shares_one_encoder():
    m = build_model(ModelConfig(kind="siamese", embed_dim=6), VOCAB, seed=0)
    counts = {n: p.data.size for n, p in m.parameters().items()}
    enc = sum(p.data.size for p in m.encoder.parameters().values())
    co = sum(p.data.size for p in m.co.parameters().values())
    head = sum(p.data.size for p in {**m.hidden.parameters(), **m.out.parameters()}.values())
    assert sum(counts.values()) == enc + co + head
    C, S = m.encode_pair(Example("y", ("the", "boy", "the", "boy"), 0))
    np.testing.assert_array_equal(C.data, S.data)
    m.encoder.E.data[VOCAB.stoi["boy"]] += 1.0
    C2, S2 = m.encode_pair(Example("y", ("the", "boy", "the", "boy"), 0))
    np.testing.assert_array_equal(C2.data, S2.data)
    assert not np.array_equal(C.data, C2.data)


def test_siamese_dropout_only_in_training():
    m = build_model(ModelConfig(kind="siamese"), VOCAB, seed=0)
    assert m.logit(EX).item() == m.logit(EX).item()
    a = m.logit(EX, True, tn.make_rng(0, "a")).item()
    b = m.logit(EX, True, tn.make_rng(0, "b")).item()
    assert a != b


@pytest.mark.parametrize("kind, context", [("stl", "mean"), ("stl", "selfattn"), ("siamese", "mean"),
                                           ("siamese", "selfattn"), ("mtl", "mean"), ("mtl-de", "mean")])
def test_model_gradients_pass_fd_check(kind, context):
    m = build_model(ModelConfig(kind=kind, embed_dim=4, attn_hidden=3, hidden=6, context=context), VOCAB, seed=3)
    cfg = LossConfig(0.3, (1.0, 2.0, 0.5, 1.5))
    assert tn.fd_check(lambda: m.loss(EX, False, None, cfg), m.parameters().values()) < 1e-4


def test_mtl_outputs_are_distributions():
    m = build_model(ModelConfig(kind="mtl"), VOCAB, seed=0)
    dem, sev = m.forward(EX)
    assert dem.shape == (2,) and sev.shape == (4,)
    assert abs(dem.sum() - 1) < 1e-12 and abs(sev.sum() - 1) < 1e-12
    for head in (m.dem_head, m.sev_head):
        head.W.data[...] = 0.0
        head.b.data[...] = 0.0
    dem, sev = m.forward(EX)
    np.testing.assert_array_equal(dem, [0.5, 0.5])
    np.testing.assert_array_equal(sev, [0.25] * 4)


def test_double_encoder_with_identity_task_layers_matches_shared():
    de = build_model(ModelConfig(kind="mtl-de"), VOCAB, seed=0)
    de.dem_mix.Wv.data[...] = 0.0
    de.sev_mix.Wv.data[...] = 0.0
    shared = build_model(ModelConfig(kind="mtl"), VOCAB, seed=5)
    shared.load_state(de.state())
    for a, b in zip(de.forward(EX), shared.forward(EX)):
        np.testing.assert_allclose(a, b, atol=1e-15)
    assert "enc.E" in de.encoder_parameter_names()
    assert not any(n.startswith("task.") for n in de.encoder_parameter_names())


def _logits(values):
    return Tensor(np.array([values], dtype=np.float64))


def test_joint_loss_boundaries():
    dem, sev = _logits([0.3, -0.4]), _logits([0.1, 0.2, -0.5, 1.0])
    pure = tn.softmax_cross_entropy(dem, 1).item()
    assert joint_loss(dem, sev, 1, 2, LossConfig(0.0)).item() == pure
    assert joint_loss(dem, sev, 1, None, LossConfig(1.0)).item() == 0.0
    for label in (0, 1):
        assert joint_loss(_logits([0.0, 0.0]), sev, label, None, LossConfig(0.0)).item() == pytest.approx(math.log(2), abs=1e-15)


def test_joint_loss_is_affine_in_alpha():
    dem, sev = _logits([0.3, -0.4]), _logits([0.1, 0.2, -0.5, 1.0])
    w = (1.0, 2.0, 0.5, 1.5)
    l0, l5, l1 = (joint_loss(dem, sev, 0, 1, LossConfig(a, w)).item() for a in (0.0, 0.5, 1.0))
    assert l5 == pytest.approx((l0 + l1) / 2, abs=1e-12)


def test_joint_loss_validation():
    dem, sev = _logits([0.0, 0.0]), _logits([0.0] * 4)
    with pytest.raises(InvalidSeverity):
        joint_loss(dem, sev, 1, 4, LossConfig())
    with pytest.raises(InvalidSeverity):
        joint_loss(dem, sev, 2, None, LossConfig())
    with pytest.raises(ValueError):
        LossConfig(1.5)


def test_balanced_class_weights():
    assert balanced_class_weights([0, 0, 0, 1, 2, 2, None]) == (0.5, 1.5, 0.75, 1.0)


def test_save_load_model_roundtrip(tmp_path):
    m = build_model(ModelConfig(kind="siamese", embed_dim=6), VOCAB, seed=2)
    save_model(tmp_path / "m.json", m)
    back = load_model(tmp_path / "m.json")
    assert back.config == m.config and back.encoder.vocab.itos == m.encoder.vocab.itos
    np.testing.assert_array_equal(back.predict_proba([EX]), m.predict_proba([EX]))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(kind="cnn")
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=1)
    assert ModelConfig(embed_dim=16).k == 8
