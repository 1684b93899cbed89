import math

import numpy as np
import pytest
import torch

from sheafdiff.graph import Graph, graph_laplacian, ring_lattice
from sheafdiff.nn import (
    JOINT_VARIANTS,
    VARIANTS,
    GraphData,
    Mlp,
    MlpSpec,
    TrainConfig,
    build_model,
    counted_parameters,
    encode_input,
    finite_difference_check,
    jdsnn_layer,
    load_checkpoint,
    loss_and_gradients,
    mlp_restriction_maps,
    param_count,
    preset,
    risnn_restriction_update,
    save_checkpoint,
    snn_layer,
    train,
)
from sheafdiff.nn.layers import flatten_blocks, identity_maps
from sheafdiff.nn.ops import degree_inv_sqrt, dual_laplacian, graph_laplacian_apply, sheaf_laplacian
from sheafdiff.sheaf import CellularSheaf, sheaf_laplacian_dense
from sheafdiff.synth import DatasetSpec, generate_dataset
from sheafdiff.verify import random_connected_graph, random_orthogonal

DT = torch.float64


def edges_t(g):
    return torch.as_tensor(g.src.copy()), torch.as_tensor(g.dst.copy())


def random_blocks(n, d, c, seed):
    return torch.as_tensor(np.random.default_rng(seed).standard_normal((n, d, c)))


def zero_mlp(n_in, n_out, bias_value=None):
    mlp = Mlp(MlpSpec((n_in, n_out), ("identity",)))
    with torch.no_grad():
        mlp.layers[0].weight.zero_()
        mlp.layers[0].bias.zero_()
        if bias_value is not None:
            mlp.layers[0].bias.copy_(bias_value)
    return mlp


def test_encode_input_layouts():
    raw = torch.arange(6, dtype=DT).reshape(2, 3)
    np.testing.assert_array_equal(encode_input(raw, 3, 1)[:, :, 0], raw)
    padded = encode_input(raw[:, :2], 3, 1)
    np.testing.assert_array_equal(padded[:, 2, 0], 0.0)
    raw15 = torch.arange(30, dtype=DT).reshape(2, 15)
    blk = encode_input(raw15, 3, 5)
    assert blk.shape == (2, 3, 5)
    np.testing.assert_array_equal(blk[0, :, 1], [3, 4, 5])
    np.testing.assert_array_equal(flatten_blocks(blk), raw15)
    with pytest.raises(ValueError):
        encode_input(torch.zeros(2, 4), 3, 1)


@torch.no_grad()
def test_mlp_restriction_map_examples():
    g = ring_lattice(6, 2)
    src, dst = edges_t(g)
    x = random_blocks(6, 3, 1, 0)
    np.testing.assert_array_equal(mlp_restriction_maps(x, src, dst, zero_mlp(6, 9)), 0.0)
    ident = mlp_restriction_maps(x, src, dst, zero_mlp(6, 9, torch.eye(3, dtype=DT).reshape(-1)))
    np.testing.assert_array_equal(ident, identity_maps(g.m, 3))
    diag = mlp_restriction_maps(x, src, dst, Mlp(MlpSpec((6, 3), ("tanh",))), "diagonal")
    off = ~torch.eye(3, dtype=torch.bool)
    assert torch.all(diag[..., off] == 0)
    assert torch.any(diag[..., ~off] != 0)
    with pytest.raises(ValueError):
        mlp_restriction_maps(x, src, dst, zero_mlp(6, 4))


@torch.no_grad()
def test_mlp_restriction_maps_swap_arguments_per_incidence():
    g = Graph.from_edges(2, [(0, 1)])
    src, dst = edges_t(g)
    x = random_blocks(2, 2, 1, 1)
    mlp = Mlp(MlpSpec((4, 4), ("tanh",)))
    maps = mlp_restriction_maps(x, src, dst, mlp)
    flat = flatten_blocks(x)
    np.testing.assert_allclose(maps[0, 0].reshape(-1), mlp(torch.cat([flat[0], flat[1]])).detach())
    np.testing.assert_allclose(maps[0, 1].reshape(-1), mlp(torch.cat([flat[1], flat[0]])).detach())


def test_snn_layer_identity_and_zero_sheaf():
    g = random_connected_graph(7, np.random.default_rng(2))
    src, dst = edges_t(g)
    x = random_blocks(7, 2, 3, 3)
    out = snn_layer(x, identity_maps(g.m, 2), src, dst)
    lap = graph_laplacian(g, dense=True)
    expect = x.numpy() - np.einsum("uv,vdc->udc", lap, x.numpy())
    np.testing.assert_allclose(out, expect, atol=1e-12)
    np.testing.assert_array_equal(snn_layer(x, torch.zeros(g.m, 2, 2, 2, dtype=DT), src, dst), x)


def test_snn_layer_matches_dense_oracle():
    rng = np.random.default_rng(4)
    n, d, c = 6, 2, 3
    g = random_connected_graph(n, rng, extra=0.4)
    src, dst = edges_t(g)
    maps = torch.as_tensor(rng.standard_normal((g.m, 2, d, d)))
    x = random_blocks(n, d, c, 5)
    w1 = torch.as_tensor(rng.standard_normal((d, d)))
    w2 = torch.as_tensor(rng.standard_normal((c, c)))
    dis = degree_inv_sqrt(maps, src, dst, n, 1e-3)
    out = snn_layer(x, maps, src, dst, w1, w2, "tanh", dis)
    lap = sheaf_laplacian_dense(CellularSheaf(g, d, maps.numpy()))
    dblk = np.zeros((n * d, n * d))
    for u in range(n):
        dblk[u * d:(u + 1) * d, u * d:(u + 1) * d] = dis[u].numpy()
    X = x.numpy().reshape(n * d, c)
    Y = np.kron(np.eye(n), w1.numpy()) @ X @ w2.numpy()
    expect = X - np.tanh(dblk @ lap @ dblk @ Y)
    np.testing.assert_allclose(out.reshape(n * d, c), expect, rtol=1e-10, atol=1e-12)
    # D^{-1/2} really is the inverse square root of the regularised degree blocks
    deg = np.zeros((n, d, d))
    for e, (u, v) in enumerate(g.edges.tolist()):
        deg[u] += maps[e, 0].numpy().T @ maps[e, 0].numpy()
        deg[v] += maps[e, 1].numpy().T @ maps[e, 1].numpy()
    deg += 1e-3 * np.eye(d)
    np.testing.assert_allclose(dis.numpy() @ deg @ dis.numpy(), np.broadcast_to(np.eye(d), deg.shape), atol=1e-8)


def test_jdsnn_layer_zero_strength_examples():
    g = ring_lattice(5, 2)
    src, dst = edges_t(g)
    x = random_blocks(5, 3, 1, 6)
    fstar = torch.as_tensor(np.random.default_rng(7).standard_normal((g.m, 2, 3, 3)))
    x1, f1 = jdsnn_layer(x, fstar, src, dst, 0.0, 0.0)
    np.testing.assert_array_equal(x1, 0.0)
    np.testing.assert_array_equal(f1, 0.0)


def test_jdsnn_global_section_diffusion_terms_vanish():
    g = ring_lattice(6, 2)
    src, dst = edges_t(g)
    x = torch.ones(6, 3, 1, dtype=DT) * torch.tensor([1.0, -2.0, 0.5], dtype=DT)[:, None]
    fstar = identity_maps(g.m, 3)
    np.testing.assert_array_equal(sheaf_laplacian(fstar.transpose(-1, -2), x, src, dst), 0.0)
    np.testing.assert_array_equal(dual_laplacian(x, fstar, src, dst), 0.0)
    x1, f1 = jdsnn_layer(x, fstar, src, dst, 0.7, 0.3)
    # with W = I the update is X - (X - alpha Delta X) = alpha Delta X = 0
    np.testing.assert_allclose(x1, 0.0, atol=1e-15)
    np.testing.assert_allclose(f1, 0.0, atol=1e-15)


def test_jdsnn_now_p2_blocks_differ():
    g = Graph.from_edges(2, [(0, 1)])
    src, dst = edges_t(g)
    x = torch.tensor([[[1.0]], [[2.0]]], dtype=DT)
    beta = 0.5
    _, f1 = jdsnn_layer(x, identity_maps(1, 1), src, dst, 1.0, beta, sigma_f="identity")
    # r = x_u - x_v = -1, so F*(1) = beta * (x_u r, -x_v r) = beta * (-1, 2)
    np.testing.assert_allclose(f1[0, :, 0, 0], [-beta, 2 * beta])


def test_jdsnn_euler_dual_mode():
    g = Graph.from_edges(2, [(0, 1)])
    src, dst = edges_t(g)
    x = torch.tensor([[[1.0]], [[2.0]]], dtype=DT)
    _, f1 = jdsnn_layer(x, identity_maps(1, 1), src, dst, 1.0, 1.0, dual_mode="euler")
    np.testing.assert_allclose(f1[0, :, 0, 0], [1 + 1, 1 - 2])


@torch.no_grad()
def test_risnn_examples():
    g = ring_lattice(5, 2)
    src, dst = edges_t(g)
    x = torch.ones(5, 2, 3, dtype=DT)
    mlp = Mlp(MlpSpec((4, 4), ("tanh",), bias=True))
    maps = risnn_restriction_update(x, identity_maps(g.m, 2), src, dst, mlp)
    const = mlp(torch.zeros(4, dtype=DT)).detach().reshape(2, 2)
    np.testing.assert_allclose(maps.detach(), const.expand_as(maps), atol=1e-15)
    xr = random_blocks(5, 2, 3, 8)
    nobias = Mlp(MlpSpec((4, 4), ("tanh",), bias=False))
    prev = torch.as_tensor(np.random.default_rng(9).standard_normal((g.m, 2, 2, 2)))
    a = risnn_restriction_update(xr, prev, src, dst, nobias, "NoT")
    b = risnn_restriction_update(xr, 3 * prev + 1, src, dst, nobias, "NoT")
    np.testing.assert_array_equal(a, b)
    full = risnn_restriction_update(xr, prev, src, dst, nobias, "full")
    assert not torch.allclose(full, a)


@torch.no_grad()
def test_risnn_rotation_invariance():
    rng = np.random.default_rng(10)
    g = random_connected_graph(6, rng, extra=0.4)
    src, dst = edges_t(g)
    mlp = Mlp(MlpSpec((9, 9), ("tanh",), bias=False))
    x = random_blocks(6, 3, 5, 11)
    prev = torch.as_tensor(rng.standard_normal((g.m, 2, 3, 3)))
    for variant in ("full", "NoT"):
        base = risnn_restriction_update(x, prev, src, dst, mlp, variant)
        for _ in range(10):
            q = torch.as_tensor(random_orthogonal(5, rng))
            rot = risnn_restriction_update(x @ q, prev, src, dst, mlp, variant)
            np.testing.assert_allclose(rot.detach(), base.detach(), atol=1e-12)


def test_mlp_baseline_is_affine():
    data = GraphData.from_arrays(np.random.default_rng(0).standard_normal((5, 3)), [(0, 1)], [0, 1, 0, 1, 0], 2)
    model = build_model(preset("MLPBaseline"), 3, 2, seed=0)
    lin = model.decoder
    np.testing.assert_allclose(model(data).detach(), (data.x @ lin.weight.T + lin.bias).detach())


def test_vanilla_one_layer_is_graph_step_then_decoder():
    g = ring_lattice(6, 2)
    ds_x = np.random.default_rng(1).standard_normal((6, 3))
    data = GraphData.from_arrays(ds_x, g.edges, [0, 1] * 3, 2)
    model = build_model(preset("VanillaSheaf", layers=1, normalization="none", encoder=False), 3, 2)
    x = torch.as_tensor(ds_x)
    step = x - graph_laplacian_apply(x, data.src, data.dst, 6)
    np.testing.assert_allclose(model(data).detach(), model.decoder(step).detach(), atol=1e-12)


def test_gcn_six_cycle_hand_computation():
    g = ring_lattice(6, 2)
    x = np.random.default_rng(2).standard_normal((6, 3))
    data = GraphData.from_arrays(x, g.edges, [0, 1] * 3, 2)
    model = build_model(preset("GCN", layers=1, encoder=False), 3, 2)
    w = model.weights[0].detach().numpy()
    adj = graph_laplacian(g, dense=True)
    adj = np.diag(np.diag(adj)) - adj
    # every node has 2 neighbours, so the self-loop degree is 3
    hat = (np.eye(6) - adj) / 3.0
    expect = x - hat @ x @ w
    out, _ = model.propagate(model.encode(data), data, None)
    np.testing.assert_allclose(out[:, :, 0].detach(), expect, atol=1e-12)


def test_reduction_chain_snn_vanilla_graph():
    g = random_connected_graph(8, np.random.default_rng(3))
    x = np.random.default_rng(4).standard_normal((8, 3))
    data = GraphData.from_arrays(x, g.edges, [0, 1] * 4, 2)
    kw = dict(layers=2, normalization="none", encoder=False, sheaf_act="identity")
    snn = build_model(preset("SNN", **kw), 3, 2)
    with torch.no_grad():
        for learner in snn.sheaf_learners:
            learner.layers[0].weight.zero_()
            learner.layers[0].bias.copy_(torch.eye(3, dtype=DT).reshape(-1))
    vanilla = build_model(preset("VanillaSheaf", **kw), 3, 2)
    xs = snn.encode(data)
    a, _ = snn.propagate(xs, data, None)
    b, _ = vanilla.propagate(xs, data, None)
    h = xs
    for _ in range(2):
        h = h - graph_laplacian_apply(h, data.src, data.dst, 8)
    np.testing.assert_allclose(a.detach(), b.detach(), atol=1e-10)
    np.testing.assert_allclose(b.detach(), h.detach(), atol=1e-10)


def test_param_count_claims():
    for d in (2, 3, 4):
        assert param_count(preset("JdSNN", d=d)).sheaf_per_layer == 2 * d * d
        assert param_count(preset("RiSNN", d=d)).sheaf_per_layer == d ** 4
    snn = param_count(preset("SNN", d=3, c=5))
    assert snn.sheaf_per_layer == 279
    model = build_model(preset("SNN", d=3, c=5, layers=1), 3, 2)
    weights = sum(p.numel() for n, p in model.named_parameters() if n.endswith("weight") and "sheaf" in n)
    assert weights == 270 >= 2 * 9 * 5


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("c", [1, 2])
@pytest.mark.parametrize("use_w", [False, True])
def test_counted_parameters_match_closed_form(variant, c, use_w):
    cfg = preset(variant, c=c, use_W1_W2=use_w)
    model = build_model(cfg, 4, 3)
    expect = param_count(cfg, 4, 3)
    got = counted_parameters(model)
    assert (got["sheaf"], got["diffusion"], got["io"]) == (expect.sheaf, expect.diffusion, expect.io)
    assert sum(p.numel() for p in model.parameters() if p.requires_grad) == expect.total


def test_sheaf_group_scaling_in_channels():
    cs = (1, 2, 4, 8)
    for v in ("JdSNN", "RiSNN", "RiSNN_NoT"):
        assert len({counted_parameters(build_model(preset(v, c=c), 3, 2))["sheaf"] for c in cs}) == 1
    snn = [counted_parameters(build_model(preset("SNN", c=c), 3, 2))["sheaf"] for c in cs]
    slopes = np.diff(snn) / np.diff(cs)
    assert np.all(slopes == slopes[0]) and slopes[0] > 0


def test_uniform_logits_give_log_classes():
    data = GraphData.from_arrays(np.ones((4, 3)), [(0, 1)], [0, 1, 2, 3], 4)
    model = build_model(preset("MLPBaseline"), 3, 4)
    with torch.no_grad():
        model.decoder.weight.zero_()
        model.decoder.bias.zero_()
    loss, _ = loss_and_gradients(model, data, data.masks["train"])
    assert loss == pytest.approx(math.log(4), abs=1e-12)


def test_empty_mask_and_parameter_free_model():
    g = ring_lattice(6, 2)
    data = GraphData.from_arrays(np.ones((6, 3)), g.edges, [0, 1] * 3, 2)
    model = build_model(preset("JdSNN_NoW"), 3, 2)
    with pytest.raises(ValueError, match="empty mask"):
        loss_and_gradients(model, data, torch.zeros(6, dtype=torch.bool))
    frozen = build_model(preset("JdSNN_NoW", encoder=False, train_decoder=False), 3, 2)
    _, grads = loss_and_gradients(frozen, data, data.masks["train"])
    assert grads == {}
    assert finite_difference_check(frozen, data, data.masks["train"]) == []


@pytest.fixture(scope="module")
def small_data():
    ds = generate_dataset(DatasetSpec(N=40, K=4, n_c=3, het=0.5, seed=1))
    return GraphData.from_dataset(ds)


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradients_match_finite_differences(variant, small_data):
    model = build_model(preset(variant), 3, 3, seed=2)
    checks = finite_difference_check(model, small_data, small_data.masks["train"], probes=20)
    assert max(r[-1] for r in checks) < 1e-4


def test_degree_blocks_are_detached(small_data):
    model = build_model(preset("JdSNN"), 3, 3)
    cache = {}
    model(small_data, norm_cache=cache)
    assert cache and all(not t.requires_grad for t in cache.values())


def separable_data():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 50)
    x = rng.standard_normal((100, 2)) * 0.3
    x[:, 0] += np.where(y == 1, 2.0, -2.0)
    perm = rng.permutation(100)
    masks = {k: torch.zeros(100, dtype=torch.bool) for k in ("train", "val", "test")}
    masks["train"][perm[:60]] = True
    masks["val"][perm[60:80]] = True
    masks["test"][perm[80:]] = True
    return GraphData.from_arrays(x, [(0, 1)], y, 2, masks)


def test_train_separable_toy():
    res = train(preset("MLPBaseline"), separable_data(), TrainConfig(epochs=200, patience=200))
    assert res.test_acc == 1.0


def test_train_lr_zero_keeps_parameters():
    data = separable_data()
    model = build_model(preset("MLPBaseline"), 2, 2, seed=3)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    res = train(preset("MLPBaseline"), data, TrainConfig(lr=0.0, epochs=5), model=build_model(preset("MLPBaseline"), 2, 2, seed=3))
    for k, v in res.model.state_dict().items():
        torch.testing.assert_close(v, before[k], rtol=0, atol=0)


def test_train_deterministic(small_data):
    cfg = preset("JdSNN")
    tc = TrainConfig(epochs=15, seed=4)
    a, b = train(cfg, small_data, tc), train(cfg, small_data, tc)
    assert a.history == b.history


def test_checkpoint_round_trip(tmp_path, small_data):
    res = train(preset("RiSNN"), small_data, TrainConfig(epochs=5))
    manifest = save_checkpoint(tmp_path / "ck", res.model, 0, res.best_epoch, {"val": res.val_acc})
    model, back = load_checkpoint(tmp_path / "ck")
    assert back == manifest
    torch.testing.assert_close(model(small_data), res.model(small_data), rtol=0, atol=0)
    blob = (tmp_path / "ck.bin").read_bytes()
    (tmp_path / "ck.bin").write_bytes(blob[:-8])
    with pytest.raises(ValueError, match="checksum"):
        load_checkpoint(tmp_path / "ck")


def test_joint_variants_record_state(small_data):
    for v in JOINT_VARIANTS:
        model = build_model(preset(v), 3, 3)
        _, extras = model(small_data, return_state=True)
        assert len(extras["fstar"]) == model.config.layers + 1
