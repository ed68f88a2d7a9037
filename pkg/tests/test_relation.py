import math

import numpy as np
import pytest

from mlpair.autograd import ShapeError, Tensor, grad_check, mul, sum_all
from mlpair.relation import (
    MlpBlock,
    ModelConfig,
    RelationModel,
    RelationModule,
    build_mlp_air,
    dual_forward,
    mlp_r,
    mlp_s,
    mlp_t,
    path_forward,
    pool_and_classify,
    srm,
    trm,
)
from mlpair.modules import Linear


def gelu(v):
    return 0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v**3)))


def set_block(block, **values):
    for k, v in values.items():
        getattr(block, k).data = np.asarray(v, dtype=np.float64)


def small_cfg(**kw):
    base = dict(frames=3, actors=4, dim=5, dropout=0.0, group_classes=3, action_classes=2, seed=1)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def x():
    return np.random.default_rng(0).normal(size=(3, 4, 5))


# single blocks

def test_zero_second_layer_is_identity(x):
    for axis, length in (("actor", 4), ("time", 3), ("channel", 5)):
        block = MlpBlock(axis, length, 5, 0.0, np.random.default_rng(1), zero_init=True)
        np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_mlp_s_hand_value():
    # D=1: LayerNorm over one channel outputs beta for every actor
    block = MlpBlock("actor", 2, 1, 0.0, np.random.default_rng(0))
    set_block(block, ln_gamma=[1.0], ln_beta=[0.5], w1=[[1, 2], [3, 4]], b1=[0.1, -0.2],
              w2=[[0.5, -1], [2, 0.25]], b2=[0.3, 0.4])
    x = np.array([[[1.0], [-2.0]]])
    z = [0.5 * 1 + 0.5 * 3 + 0.1, 0.5 * 2 + 0.5 * 4 - 0.2]
    g = [gelu(v) for v in z]
    expect = [1.0 + g[0] * 0.5 + g[1] * 2 + 0.3, -2.0 + g[0] * -1 + g[1] * 0.25 + 0.4]
    out = mlp_s(block, Tensor(x)).data
    np.testing.assert_allclose(out[0, :, 0], expect, rtol=1e-14)


def test_mlp_t_hand_value():
    block = MlpBlock("time", 2, 1, 0.0, np.random.default_rng(0))
    set_block(block, ln_beta=[-1.0], w1=[[2, 0], [1, 1]], b1=[0.0, 0.5], w2=[[1, 0], [0, 3]], b2=[0.0, -0.1])
    x = np.array([[[0.25]], [[4.0]]])
    g = [gelu(-1 * 2 + -1 * 1), gelu(-1 * 0 + -1 * 1 + 0.5)]
    expect = [0.25 + g[0] * 1 + g[1] * 0, 4.0 + g[0] * 0 + g[1] * 3 - 0.1]
    np.testing.assert_allclose(mlp_t(block, Tensor(x)).data[:, 0, 0], expect, rtol=1e-14)


def test_mlp_r_hand_value():
    block = MlpBlock("channel", 2, 2, 0.0, np.random.default_rng(0))
    set_block(block, ln_gamma=[2.0, 1.0], ln_beta=[0.0, 1.0], w1=[[1, -1], [0.5, 2]], b1=[0.2, 0.0],
              w2=[[1, 1], [-1, 0.5]], b2=[0.0, 0.1])
    x = np.array([3.0, 1.0])  # mean 2, variance 1
    s = math.sqrt(1 + 1e-5)
    ln = [2 * (1 / s), 1 - 1 / s]
    z = [ln[0] * 1 + ln[1] * 0.5 + 0.2, ln[0] * -1 + ln[1] * 2]
    g = [gelu(v) for v in z]
    expect = [3.0 + g[0] - g[1], 1.0 + g[0] + 0.5 * g[1] + 0.1]
    out = mlp_r(block, Tensor(x.reshape(1, 1, 2))).data
    np.testing.assert_allclose(out[0, 0], expect, rtol=1e-13)


def test_axis_length_mismatch():
    block = MlpBlock("actor", 5, 5, 0.0, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((3, 4, 5))))
    with pytest.raises(ValueError):
        mlp_t(block, Tensor(np.zeros((3, 5, 5))))


# equivariance

def test_mlp_s_frame_equivariant_not_actor(x):
    block = MlpBlock("actor", 4, 5, 0.0, np.random.default_rng(2))
    perm_t = np.array([2, 0, 1])
    np.testing.assert_allclose(block(Tensor(x[perm_t])).data, block(Tensor(x)).data[perm_t], atol=1e-12)
    perm_n = np.array([1, 0, 3, 2])
    diff = np.abs(block(Tensor(x[:, perm_n])).data - block(Tensor(x)).data[:, perm_n]).max()
    assert diff > 1e-3


def test_mlp_t_actor_equivariant_not_frame(x):
    block = MlpBlock("time", 3, 5, 0.0, np.random.default_rng(3))
    perm_n = np.array([3, 1, 0, 2])
    np.testing.assert_allclose(block(Tensor(x[:, perm_n])).data, block(Tensor(x)).data[:, perm_n], atol=1e-12)
    rev = x[::-1].copy()
    assert np.abs(block(Tensor(rev)).data - block(Tensor(x)).data[::-1]).max() > 1e-3


def test_mlp_r_equivariant_both(x):
    block = MlpBlock("channel", 5, 5, 0.0, np.random.default_rng(4))
    pt, pn = np.array([1, 2, 0]), np.array([2, 3, 1, 0])
    ref = block(Tensor(x)).data
    np.testing.assert_allclose(block(Tensor(x[pt][:, pn])).data, ref[pt][:, pn], atol=1e-12)


# composition

def test_srm_is_mlp_r_after_mlp_s(x):
    rng = np.random.default_rng(5)
    s, r = MlpBlock("actor", 4, 5, 0.0, rng), MlpBlock("channel", 5, 5, 0.0, rng)
    module = RelationModule([s, r])
    composed = mlp_r(r, mlp_s(s, Tensor(x))).data
    assert srm(module, Tensor(x)).data.tobytes() == composed.tobytes()


def test_trm_is_mlp_r_after_mlp_t(x):
    rng = np.random.default_rng(6)
    t, r = MlpBlock("time", 3, 5, 0.0, rng), MlpBlock("channel", 5, 5, 0.0, rng)
    assert trm(RelationModule([t, r]), Tensor(x)).data.tobytes() == mlp_r(r, mlp_t(t, Tensor(x))).data.tobytes()


def test_two_blocks_equal_manual_double_application(x):
    model = build_mlp_air(small_cfg(blocks=2, paths="st"))
    path = model.paths["st"]
    xt = Tensor(x)
    s = path.spatial[1](path.spatial[0](xt))
    manual = path.temporal[1](path.temporal[0](xt + s))
    assert path_forward(path, xt).data.tobytes() == manual.data.tobytes()


def test_blocks_flag_stacks_modules():
    model = build_mlp_air(small_cfg(blocks=3))
    for path in model.paths.values():
        assert len(path.spatial) == 3 and len(path.temporal) == 3
        assert [b.axis for b in path.spatial[0].blocks] == ["actor", "channel"]
        assert [b.axis for b in path.temporal[0].blocks] == ["time", "channel"]


def test_zero_init_srm_identity(x):
    model = build_mlp_air(small_cfg(zero_init=True))
    np.testing.assert_array_equal(srm(model.paths["st"].spatial[0], Tensor(x)).data, x)


def test_zero_init_paths_double(x):
    model = build_mlp_air(small_cfg(zero_init=True))
    for path in model.paths.values():
        np.testing.assert_array_equal(path_forward(path, Tensor(x)).data, 2 * x)


def test_st_and_ts_differ(x):
    model = build_mlp_air(small_cfg())
    st = path_forward(model.paths["st"], Tensor(x)).data
    ts = path_forward(model.paths["ts"], Tensor(x)).data
    assert np.abs(st - ts).max() > 1e-3


def test_path_gradient_check(x):
    model = build_mlp_air(small_cfg(frames=3, actors=3, dim=3))
    xin = np.random.default_rng(7).normal(size=(3, 3, 3))
    proj = Tensor(np.random.default_rng(8).normal(size=(3, 3, 3)))
    for path in model.paths.values():
        err = grad_check(lambda t: sum_all(mul(path_forward(path, t), proj)), Tensor(xin.copy()))
        assert err < 1e-4


def test_shape_preserved_batched():
    model = build_mlp_air(small_cfg())
    xb = np.random.default_rng(1).normal(size=(2, 3, 4, 5))
    for path in model.paths.values():
        assert path_forward(path, Tensor(xb)).shape == (2, 3, 4, 5)


# pooling and heads

def heads(d=5, cg=3, ca=2, seed=0):
    rng = np.random.default_rng(seed)
    return Linear(d, cg, rng), Linear(d, ca, rng)


def test_pool_single_actor_embedding_is_temporal_mean():
    x = np.random.default_rng(2).normal(size=(4, 1, 5))
    _, _, emb = pool_and_classify(Tensor(x), *heads())
    np.testing.assert_allclose(emb.data, x.mean(0)[0], atol=1e-15)


def test_pool_constant_features():
    c = np.linspace(-1, 1, 5)
    x = np.broadcast_to(c, (3, 4, 5)).copy()
    g, i = heads()
    group, ind, _ = pool_and_classify(Tensor(x), g, i)
    np.testing.assert_allclose(group.data, c @ g.w.data + g.b.data, atol=1e-14)
    assert ind.shape == (4, 2)


def test_pool_two_actor_bruteforce():
    x = np.random.default_rng(3).normal(size=(3, 2, 5))
    g, i = heads()
    group, ind, emb = pool_and_classify(Tensor(x), g, i)
    per_actor = [[sum(x[t, n, d] for t in range(3)) / 3 for d in range(5)] for n in range(2)]
    pooled = [max(per_actor[0][d], per_actor[1][d]) for d in range(5)]
    np.testing.assert_allclose(emb.data, pooled, atol=1e-15)
    np.testing.assert_allclose(ind.data, np.array(per_actor) @ i.w.data + i.b.data, atol=1e-14)


# dual forward

def test_identical_paths_fuse_to_either(x):
    model = build_mlp_air(small_cfg())
    model.paths["ts"].load_state_dict(model.paths["st"].state_dict())
    model.paths["ts"].order = "st"
    out = dual_forward(model, x)
    np.testing.assert_allclose(out.fused_group.data, out.group["st"].data, atol=1e-15)


def test_fused_is_mean_of_two_paths(x):
    out = build_mlp_air(small_cfg())(x)
    np.testing.assert_allclose(out.fused_group.data, (out.group["st"].data + out.group["ts"].data) / 2, atol=1e-15)
    assert out.scene is None


def test_fused_with_scene_is_three_way_mean(x):
    model = build_mlp_air(small_cfg(scene=True, scene_dim=4))
    out = model(x, np.ones(4))
    expect = (out.group["st"].data + out.group["ts"].data + out.scene.data) / 3
    np.testing.assert_allclose(out.fused_group.data, expect, atol=1e-15)


def test_scene_without_head_rejected(x):
    with pytest.raises(ValueError):
        build_mlp_air(small_cfg())(x, np.ones(4))


def test_fused_argmax_shift_invariant(x):
    out = build_mlp_air(small_cfg())(x)
    assert np.argmax(out.fused_group.data) == np.argmax(out.fused_group.data + 12.3)


def test_single_path_modes(x):
    for mode in ("st", "ts"):
        out = build_mlp_air(small_cfg(paths=mode))(x)
        assert list(out.group) == [mode]
        np.testing.assert_array_equal(out.fused_group.data, out.group[mode].data)


def test_no_mlp_r_and_mlp_r_only_structures():
    no_r = build_mlp_air(small_cfg(mlp_r=False))
    assert [b.axis for b in no_r.paths["st"].spatial[0].blocks] == ["actor"]
    only_r = build_mlp_air(small_cfg(token_mix=False))
    assert [b.axis for b in only_r.paths["st"].temporal[0].blocks] == ["channel"]
    with pytest.raises(ValueError):
        small_cfg(mlp_r=False, token_mix=False)


def test_paths_do_not_share_weights():
    model = build_mlp_air(small_cfg())
    ids_st = {id(p) for p in model.paths["st"].parameters()}
    assert ids_st.isdisjoint({id(p) for p in model.paths["ts"].parameters()})
    a = model.paths["st"].spatial[0].blocks[0].w1.data
    b = model.paths["ts"].spatial[0].blocks[0].w1.data
    assert not np.array_equal(a, b)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(method="cnn")
    with pytest.raises(ValueError):
        ModelConfig(method="gcn", mlp_r=False)
    with pytest.raises(ValueError):
        ModelConfig(method="transformer", dim=10, heads=3)
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)
    cfg = small_cfg(blocks=2)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_same_seed_same_model():
    a, b = RelationModel(small_cfg()), RelationModel(small_cfg())
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


def test_zero_init_gradients_finite(x):
    model = build_mlp_air(small_cfg(zero_init=True))
    out = model(Tensor(x))
    sum_all(out.fused_group).backward()
    for _, p in model.named_parameters():
        assert p.grad is None or np.all(np.isfinite(p.grad))


def test_dropout_only_in_train_mode(x):
    model = build_mlp_air(small_cfg(dropout=0.5))
    ref = model(x).fused_group.data
    again = model(x, rng=np.random.default_rng(0)).fused_group.data
    np.testing.assert_array_equal(ref, again)
    model.train()
    noisy = model(x, rng=np.random.default_rng(0)).fused_group.data
    assert not np.array_equal(ref, noisy)
