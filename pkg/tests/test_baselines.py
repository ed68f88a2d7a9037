import numpy as np
import pytest

from mlpair.autograd import Tensor
from mlpair.baselines import AttnBlock, GcnBlock, build_model, build_unified_model
from mlpair.relation import ModelConfig, build_mlp_air


def softmax(z):
    e = np.exp(z - z.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def ln(v, g, b, eps=1e-5):
    mu = v.mean(-1, keepdims=True)
    var = ((v - mu) ** 2).mean(-1, keepdims=True)
    return (v - mu) / np.sqrt(var + eps) * g + b


def gelu(v):
    return 0.5 * v * (1 + np.tanh(np.sqrt(2 / np.pi) * (v + 0.044715 * v**3)))


@pytest.fixture
def x():
    return np.random.default_rng(0).normal(size=(3, 4, 6))


# GCN

def test_gcn_single_token():
    block = GcnBlock("actor", 6, 0.0, np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(3, 1, 6))
    np.testing.assert_array_equal(block.adjacency(Tensor(x)).data, np.ones((3, 1, 1)))
    expect = x + np.maximum(x @ block.w_g.data, 0)
    np.testing.assert_allclose(block(Tensor(x)).data, expect, atol=1e-14)


def test_gcn_zero_wg_identity(x):
    block = GcnBlock("time", 6, 0.0, np.random.default_rng(1), zero_init=True)
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_gcn_two_token_hand_case():
    block = GcnBlock("actor", 2, 0.0, np.random.default_rng(0))
    block.w_a.data = np.array([[1.0, 0.0], [0.0, 2.0]])
    block.w_b.data = np.array([[0.5, 1.0], [-1.0, 0.0]])
    block.w_g.data = np.array([[1.0, -1.0], [0.5, 0.5]])
    x = np.array([[[1.0, 2.0], [-1.0, 0.5]]])
    ea, eb = x[0] @ block.w_a.data, x[0] @ block.w_b.data
    s = np.array([[ea[i] @ eb[j] for j in range(2)] for i in range(2)]) / np.sqrt(2)
    a = np.exp(s) / np.exp(s).sum(1, keepdims=True)
    expect = x[0] + np.maximum(a @ x[0] @ block.w_g.data, 0)
    np.testing.assert_allclose(block(Tensor(x)).data[0], expect, atol=1e-14)


def test_gcn_adjacency_rows_sum_to_one(x):
    for axis in ("actor", "time"):
        a = GcnBlock(axis, 6, 0.0, np.random.default_rng(3)).adjacency(Tensor(x)).data
        np.testing.assert_allclose(a.sum(-1), 1.0, atol=1e-12)


def test_gcn_token_permutation_equivariant(x):
    block = GcnBlock("actor", 6, 0.0, np.random.default_rng(4))
    perm = np.array([3, 0, 2, 1])
    np.testing.assert_allclose(block(Tensor(x[:, perm])).data, block(Tensor(x)).data[:, perm], atol=1e-9)
    tblock = GcnBlock("time", 6, 0.0, np.random.default_rng(5))
    perm_t = np.array([2, 0, 1])
    np.testing.assert_allclose(tblock(Tensor(x[perm_t])).data, tblock(Tensor(x)).data[perm_t], atol=1e-9)


def test_gcn_shape_error():
    with pytest.raises(ValueError):
        GcnBlock("actor", 6, 0.0, np.random.default_rng(0))(Tensor(np.zeros((3, 4, 5))))


# attention

def test_attn_zero_output_weights_identity(x):
    block = AttnBlock("actor", 6, 2, 0.0, np.random.default_rng(1), zero_init=True)
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_attn_single_token_is_ffn(x):
    block = AttnBlock("actor", 6, 3, 0.0, np.random.default_rng(2))
    x1 = x[:, :1]
    w = block.attention_weights(Tensor(x1)).data
    np.testing.assert_array_equal(w, np.ones_like(w))
    v = ln(x1, block.ln1_gamma.data, block.ln1_beta.data) @ block.w_v.data + block.b_v.data
    h = x1 + v @ block.w_o.data + block.b_o.data
    f = gelu(ln(h, block.ln2_gamma.data, block.ln2_beta.data) @ block.w1.data + block.b1.data)
    expect = h + f @ block.w2.data + block.b2.data
    np.testing.assert_allclose(block(Tensor(x1)).data, expect, atol=1e-13)


def test_attn_two_token_one_head_hand_case():
    rng = np.random.default_rng(3)
    block = AttnBlock("actor", 4, 1, 0.0, rng)
    x = rng.normal(size=(1, 2, 4))
    p = {k: getattr(block, k).data for k in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o", "w1", "b1", "w2", "b2")}
    h0 = ln(x[0], block.ln1_gamma.data, block.ln1_beta.data)
    q, k, v = h0 @ p["w_q"] + p["b_q"], h0 @ p["w_k"] + p["b_k"], h0 @ p["w_v"] + p["b_v"]
    att = softmax(q @ k.T / np.sqrt(4))
    h = x[0] + (att @ v) @ p["w_o"] + p["b_o"]
    out = h + gelu(ln(h, block.ln2_gamma.data, block.ln2_beta.data) @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]
    np.testing.assert_allclose(block(Tensor(x)).data[0], out, atol=1e-13)
    np.testing.assert_allclose(block.attention_weights(Tensor(x)).data[0, 0], att, atol=1e-14)


def test_attn_rows_sum_to_one(x):
    for axis in ("actor", "time"):
        w = AttnBlock(axis, 6, 2, 0.0, np.random.default_rng(4)).attention_weights(Tensor(x)).data
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)


def test_attn_token_permutation_equivariant(x):
    block = AttnBlock("time", 6, 2, 0.0, np.random.default_rng(5))
    perm = np.array([1, 2, 0])
    np.testing.assert_allclose(block(Tensor(x[perm])).data, block(Tensor(x)).data[perm], atol=1e-9)
    ablock = AttnBlock("actor", 6, 2, 0.0, np.random.default_rng(6))
    perm_n = np.array([2, 3, 1, 0])
    np.testing.assert_allclose(ablock(Tensor(x[:, perm_n])).data, ablock(Tensor(x)).data[:, perm_n], atol=1e-9)


def test_attn_head_divisibility():
    with pytest.raises(ValueError):
        AttnBlock("actor", 6, 4, 0.0, np.random.default_rng(0))


# unified framework

def cfg(**kw):
    base = dict(frames=3, actors=4, dim=6, heads=2, dropout=0.0, group_classes=3, action_classes=2, seed=9)
    base.update(kw)
    return ModelConfig(**base)


def test_mlp_method_is_relation_core(x):
    a = build_unified_model("mlp", cfg())
    b = build_mlp_air(cfg())
    assert a(x).fused_group.data.tobytes() == b(x).fused_group.data.tobytes()


def test_all_methods_same_shapes(x):
    shapes = set()
    for method in ("mlp", "gcn", "transformer"):
        out = build_model(cfg(method=method))(x)
        shapes.add((out.fused_group.shape, out.fused_individual.shape, out.embedding["st"].shape))
    assert shapes == {((3,), (4, 2), (6,))}


def test_unknown_method():
    with pytest.raises(ValueError):
        build_unified_model("rnn", cfg())


@pytest.mark.parametrize("method,target", [("mlp", 0.53e6), ("gcn", 0.79e6), ("transformer", 1.58e6)])
def test_param_counts_block_one(method, target):
    model = build_model(ModelConfig(method=method, frames=9, actors=12, dim=256))
    relation = sum(p.data.size for _, p in model.relation_parameters())
    assert abs(relation - target) / target < 0.02


def test_zero_init_baselines_double(x):
    for method in ("gcn", "transformer"):
        model = build_model(cfg(method=method, zero_init=True))
        for path in model.paths.values():
            np.testing.assert_array_equal(path.trunk(Tensor(x)).data, 2 * x)
