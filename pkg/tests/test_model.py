import numpy as np
import pytest

from cian import checkpoint
from cian.attention import PackageOp, cross_modal_block, intra_modal_block
from cian.data import MerchantRecord
from cian.errors import ConfigError, DataFormatError, DegenerateInputError, DimensionError
from cian.model import (
    DEPLOYED_SCALE,
    ModelConfig,
    _block,
    encode_pair,
    export_embeddings,
    gather_pair_similarity,
    init_params,
    param_shapes,
    score_matrix,
    score_pair,
    score_pairs,
    value_map,
)
from cian.numerics import cosine_similarity

VARIANTS = ["fc", "intra", "cross", "both"]
OPS = ["dot", "gaussian", "kernel-gaussian"]


def small(**kw):
    base = dict(t_dim=5, d_dim=4, common_dim=6)
    base.update(kw)
    return ModelConfig(**base)


def test_config_defaults_and_aliases():
    cfg = ModelConfig()
    assert (cfg.t_dim, cfg.d_dim, cfg.common_dim) == (32, 48, 64)
    assert DEPLOYED_SCALE == dict(t_dim=415, d_dim=768, common_dim=1024)
    assert ModelConfig(variant="CrossOnly").variant == "cross"
    assert ModelConfig(variant="IntraOnly").variant == "intra"


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(variant="mlp")
    with pytest.raises(ConfigError):
        ModelConfig(package_op="cosine")
    with pytest.raises(ConfigError):
        ModelConfig(common_dim=0)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"t_dim": 3, "colour": "red"})
    assert ModelConfig.from_dict(ModelConfig().to_dict()) == ModelConfig()


def test_param_names_function_of_config():
    assert list(param_shapes(small(variant="fc"))) == [
        "proj_t.W", "proj_t.b", "proj_d.W", "proj_d.b", "fc_t.W", "fc_t.b", "fc_d.W", "fc_d.b",
    ]
    both = param_shapes(small())
    assert "t.intra0.W_q" in both and "d.cross0.b_v" in both
    assert not any("cross" in n for n in param_shapes(small(variant="intra")))
    assert not any("intra" in n for n in param_shapes(small(variant="cross")))
    assert param_shapes(small()) == param_shapes(small(seed=99))
    assert set(init_params(small())) == set(both)


def test_init_biases_zero_and_seeded():
    a, b = init_params(small(seed=3)), init_params(small(seed=3))
    for n in a:
        np.testing.assert_array_equal(a[n], b[n])
        if n.endswith("b") or ".b_" in n:
            assert not a[n].any()


def test_fc_identity_is_linear_image(rng):
    cfg = ModelConfig(t_dim=4, d_dim=4, common_dim=4, variant="fc")
    p = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    for n in ("proj_t.W", "proj_d.W", "fc_t.W", "fc_d.W"):
        p[n] = np.eye(4)
    t = rng.normal(size=4)
    e_t, _ = encode_pair(t, rng.normal(size=4), p, cfg)
    np.testing.assert_allclose(e_t.data, t)


def test_cross_only_zero_input_gives_zero(rng):
    cfg = small(variant="cross")
    p = {k: (v if ".W" in k else np.zeros_like(v)) for k, v in init_params(cfg).items()}
    e_t, _ = encode_pair(np.zeros(5), rng.normal(size=4), p, cfg)
    assert not e_t.data.any()


def _straight_line_both(t, d, p, cfg):
    op = cfg.op
    pt = p["proj_t.W"] @ t + p["proj_t.b"]
    pd = p["proj_d.W"] @ d + p["proj_d.b"]

    def attend(x, y, pre):
        v = p[pre + ".W_v"] @ x + p[pre + ".b_v"]
        k = p[pre + ".W_k"] @ x + p[pre + ".b_k"]
        q = p[pre + ".W_q"] @ y + p[pre + ".b_q"]
        s = {"dot": k * q, "gaussian": np.exp(k * q), "kernel-gaussian": np.exp(np.tanh(k) * np.tanh(q))}[op.kind]
        s = s / np.sqrt(len(s))
        a = np.exp(s - s.max())
        return a / a.sum() * v

    xt = attend(pt, pt, "t.intra0")
    xd = attend(pd, pd, "d.intra0")
    return attend(xt, pd, "t.cross0"), attend(xd, pt, "d.cross0")


@pytest.mark.parametrize("op", OPS)
def test_both_matches_straight_line(op, rng):
    cfg = small(package_op=op)
    p = init_params(cfg, seed=4)
    p = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in p.items()}
    t, d = rng.normal(size=5), rng.normal(size=4)
    e_t, e_d = encode_pair(t, d, p, cfg)
    ot, od = _straight_line_both(t, d, p, cfg)
    np.testing.assert_allclose(e_t.data, ot, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(e_d.data, od, rtol=1e-12, atol=1e-15)
    assert score_pair(t, d, p, cfg) == pytest.approx(cosine_similarity(ot, od), abs=1e-12)


def test_score_pair_extremes():
    cfg = ModelConfig(t_dim=3, d_dim=3, common_dim=3, variant="fc")
    p = {k: np.zeros_like(v) for k, v in init_params(cfg).items()}
    for n in ("proj_t.W", "proj_d.W", "fc_t.W", "fc_d.W"):
        p[n] = np.eye(3)
    assert score_pair([1, 2, 3], [1, 2, 3], p, cfg) == pytest.approx(1.0)
    assert score_pair([1, 0, 0], [0, 1, 0], p, cfg) == 0.0
    with pytest.raises(DegenerateInputError):
        score_pair([0, 0, 0], [0, 1, 0], p, cfg)


def test_dimension_mismatch():
    cfg = small()
    with pytest.raises(DimensionError):
        encode_pair(np.ones(4), np.ones(4), init_params(cfg), cfg)


def test_uniform_attention_degenerates_to_linear(rng):
    cfg = small(variant="both", intra_t=False, intra_d=False)
    p = init_params(cfg, seed=1)
    for br in ("t", "d"):
        p[f"{br}.cross0.W_k"][:] = 0
        p[f"{br}.cross0.W_q"][:] = 0
    t, d = rng.normal(size=5), rng.normal(size=4)
    e_t, _ = encode_pair(t, d, p, cfg)
    v = p["t.cross0.W_v"] @ (p["proj_t.W"] @ t) + p["t.cross0.b_v"]
    np.testing.assert_allclose(e_t.data, v / 6, rtol=1e-13)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("op", OPS)
def test_score_matrix_equals_pairwise(variant, op, backend, rng, monkeypatch):
    from cian import kernels

    monkeypatch.setattr(kernels, "_impl", kernels.available_backends()[backend])
    cfg = small(variant=variant, package_op=op)
    p = init_params(cfg, seed=2)
    T, D = rng.normal(size=(4, 5)), rng.normal(size=(3, 4))
    S = score_matrix(T, D, p, cfg)
    ref = np.array([[score_pair(t, d, p, cfg) for d in D] for t in T])
    np.testing.assert_allclose(S, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("cfg", [small(score_mode="outer"), small(cross_depth=2), small(cross_d=False)])
def test_score_matrix_generic_paths(cfg, rng):
    p = init_params(cfg, seed=5)
    T, D = rng.normal(size=(3, 5)), rng.normal(size=(2, 4))
    ref = np.array([[score_pair(t, d, p, cfg) for d in D] for t in T])
    np.testing.assert_allclose(score_matrix(T, D, p, cfg), ref, rtol=1e-12, atol=1e-12)


def test_gather_and_score_pairs_agree(rng):
    cfg = small()
    p = init_params(cfg)
    T, D = rng.normal(size=(4, 5)), rng.normal(size=(4, 4))
    S = score_matrix(T, D, p, cfg)
    rows, cols = np.array([0, 3, 1]), np.array([2, 0, 1])
    np.testing.assert_allclose(gather_pair_similarity(T, D, rows, cols, p, cfg).data, S[rows, cols], rtol=1e-12)
    np.testing.assert_allclose(score_pairs(T, D, p, cfg), np.diag(S), rtol=1e-12)


def _records(rng, n, cfg):
    return [MerchantRecord(f"m{i}", i % 2, rng.normal(size=cfg.t_dim), rng.normal(size=cfg.d_dim)) for i in range(n)]


def test_export_embeddings_rows_and_blocks_off(rng):
    cfg = small(variant="both", intra_t=False, intra_d=False, cross_t=False, cross_d=False)
    p = init_params(cfg)
    recs = _records(rng, 7, cfg)
    rows = export_embeddings(recs, p, cfg)
    assert len(rows) == 7
    for r, rec in zip(rows, recs):
        np.testing.assert_allclose(r["e_t"], p["proj_t.W"] @ rec.t + p["proj_t.b"])
        assert r["id"] == rec.id and r["category"] == rec.category
    again = export_embeddings(recs, p, cfg)
    assert all(np.array_equal(a["e_t"], b["e_t"]) for a, b in zip(rows, again))


@pytest.mark.parametrize("block", ["cross", "intra"])
def test_value_map_reproduces_block(block, rng):
    cfg = small()
    p = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in init_params(cfg, seed=8).items()}
    t, d = rng.normal(size=5), rng.normal(size=4)
    W, b, a, v = value_map(p, cfg, t, d, block)
    np.testing.assert_allclose(W @ t + b, v, rtol=1e-12, atol=1e-14)
    pt = p["proj_t.W"] @ t + p["proj_t.b"]
    pd = p["proj_d.W"] @ d + p["proj_d.b"]
    intra = intra_modal_block(pt, _block(p, "t.intra0"), PackageOp())
    if block == "intra":
        ref = intra
    else:
        ref = cross_modal_block(intra.output.data, pd, _block(p, "t.cross0"), PackageOp())
    np.testing.assert_allclose(a * v, ref.output.data, rtol=1e-12, atol=1e-14)


def test_value_map_errors():
    with pytest.raises(ConfigError):
        value_map(init_params(small(variant="fc")), small(variant="fc"), np.ones(5), np.ones(4))
    with pytest.raises(ConfigError):
        value_map(init_params(small(variant="cross")), small(variant="cross"), np.ones(5), np.ones(4), "intra")


# -- checkpoint ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant", VARIANTS)
def test_checkpoint_round_trip(variant, tmp_path, rng):
    cfg = small(variant=variant, package_op="gaussian")
    p = {k: rng.normal(size=v.shape) for k, v in init_params(cfg).items()}
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, p, cfg)
    q, cfg2 = checkpoint.load(path)
    assert cfg2 == cfg
    for k in p:
        assert q[k].tobytes() == p[k].tobytes()
    T, D = rng.normal(size=(3, 5)), rng.normal(size=(3, 4))
    np.testing.assert_allclose(score_matrix(T, D, q, cfg2), score_matrix(T, D, p, cfg), rtol=0, atol=1e-12)
    assert checkpoint.dumps(q, cfg2) == path.read_bytes()


def test_checkpoint_header_layout():
    import json
    import struct

    cfg = small()
    blob = checkpoint.dumps(init_params(cfg), cfg)
    assert blob.startswith(checkpoint.MAGIC)
    (n,) = struct.unpack_from("<Q", blob, 8)
    header = json.loads(blob[16 : 16 + n])
    assert header["format_version"] == 1 and header["config"] == cfg.to_dict()
    offsets = [e["offset"] for e in header["tensors"]]
    assert offsets == sorted(offsets) and offsets[0] == 0
    assert len(blob) - 16 - n == header["payload_bytes"] == sum(8 * int(np.prod(e["shape"])) for e in header["tensors"])


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:-8],
        lambda b: b[:-1] + bytes([b[-1] ^ 1]),
        lambda b: b[:20],
        lambda b: b[:8],
    ],
)
def test_checkpoint_corruption_detected(mutate):
    cfg = small()
    blob = checkpoint.dumps(init_params(cfg), cfg)
    with pytest.raises(DataFormatError):
        checkpoint.loads(mutate(blob))


def test_checkpoint_rejects_mismatched_params():
    cfg = small()
    p = init_params(cfg)
    p.pop("proj_t.W")
    with pytest.raises(DataFormatError):
        checkpoint.dumps(p, cfg)
