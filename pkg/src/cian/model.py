"""Two-branch transaction/text embedding network.

Each branch starts with a linear input projection into the shared space,
then optionally an intra-modal attention block and a cross-modal block whose
query is the *other* branch's projected features.  Because of the cross
block, the embedding of a transaction depends on which description it is
paired with; scoring is always done per pair.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from cian import kernels
from cian.attention import PACKAGE_KINDS, SCORE_MODES, BlockParams, PackageOp, cross_modal_block, intra_modal_block
from cian.errors import ConfigError, DimensionError
from cian.numerics import (
    Tensor,
    as_tensor,
    cosine_similarity,
    dot,
    kaiming_init,
    l2_normalize,
    linear,
    take,
)

VARIANTS = ("fc", "intra", "cross", "both")
_VARIANT_ALIASES = {"FC": "fc", "IntraOnly": "intra", "CrossOnly": "cross", "Both": "both"}


@dataclass(frozen=True)
class ModelConfig:
    t_dim: int = 32
    d_dim: int = 48
    common_dim: int = 64
    package_op: str = "dot"
    variant: str = "both"
    score_mode: str = "coordinate"
    intra_depth: int = 1
    cross_depth: int = 1
    intra_t: bool = True
    intra_d: bool = True
    cross_t: bool = True
    cross_d: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", _VARIANT_ALIASES.get(self.variant, self.variant))
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.package_op not in PACKAGE_KINDS:
            raise ConfigError(f"package_op must be one of {PACKAGE_KINDS}, got {self.package_op!r}")
        if self.score_mode not in SCORE_MODES:
            raise ConfigError(f"score_mode must be one of {SCORE_MODES}, got {self.score_mode!r}")
        for name in ("t_dim", "d_dim", "common_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.intra_depth < 0 or self.cross_depth < 0:
            raise ConfigError("block depths must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def n_intra(self, branch: str) -> int:
        on = self.intra_t if branch == "t" else self.intra_d
        return self.intra_depth if (self.variant in ("intra", "both") and on) else 0

    def n_cross(self, branch: str) -> int:
        on = self.cross_t if branch == "t" else self.cross_d
        return self.cross_depth if (self.variant in ("cross", "both") and on) else 0

    @property
    def op(self) -> PackageOp:
        return PackageOp(self.package_op)


DEPLOYED_SCALE = dict(t_dim=415, d_dim=768, common_dim=1024)


def _block_names(prefix):
    return [f"{prefix}.{n}" for n in ("W_v", "W_k", "W_q", "b_v", "b_k", "b_q")]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; a function of the config alone."""
    c = config.common_dim
    shapes = {
        "proj_t.W": (c, config.t_dim),
        "proj_t.b": (c,),
        "proj_d.W": (c, config.d_dim),
        "proj_d.b": (c,),
    }
    if config.variant == "fc":
        for br in ("t", "d"):
            shapes[f"fc_{br}.W"] = (c, c)
            shapes[f"fc_{br}.b"] = (c,)
        return shapes
    for br in ("t", "d"):
        for kind, n in (("intra", config.n_intra(br)), ("cross", config.n_cross(br))):
            for i in range(n):
                for name in _block_names(f"{br}.{kind}{i}"):
                    shapes[name] = (c, c) if ".W_" in name else (c,)
    return shapes


def init_params(config: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Kaiming-normal weights, zero biases."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 2:
            params[name] = kaiming_init(shape, shape[1], rng)
        else:
            params[name] = np.zeros(shape)
    return params


def _block(params, prefix) -> BlockParams:
    return BlockParams(*(params[n] for n in _block_names(prefix)))


def _check_inputs(t, d, config):
    if t.shape[-1] != config.t_dim:
        raise DimensionError(f"transaction input has dim {t.shape[-1]}, config t_dim={config.t_dim}")
    if d.shape[-1] != config.d_dim:
        raise DimensionError(f"text input has dim {d.shape[-1]}, config d_dim={config.d_dim}")


def project(t, d, params, config):
    t, d = as_tensor(t), as_tensor(d)
    _check_inputs(t, d, config)
    return linear(params["proj_t.W"], params["proj_t.b"], t), linear(params["proj_d.W"], params["proj_d.b"], d)


def _intra_chain(x, params, config, br):
    op = config.op
    for i in range(config.n_intra(br)):
        x = intra_modal_block(x, _block(params, f"{br}.intra{i}"), op, config.score_mode).output
    return x


def encode_pair(t, d, params, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Embeddings ``(e_t, e_d)`` of a transaction/text pair (batched on axis 0)."""
    p_t, p_d = project(t, d, params, config)
    if config.variant == "fc":
        return linear(params["fc_t.W"], params["fc_t.b"], p_t), linear(params["fc_d.W"], params["fc_d.b"], p_d)
    op = config.op
    x_t = _intra_chain(p_t, params, config, "t")
    x_d = _intra_chain(p_d, params, config, "d")
    for i in range(config.n_cross("t")):
        x_t = cross_modal_block(x_t, p_d, _block(params, f"t.cross{i}"), op, config.score_mode).output
    for i in range(config.n_cross("d")):
        x_d = cross_modal_block(x_d, p_t, _block(params, f"d.cross{i}"), op, config.score_mode).output
    return x_t, x_d


def pair_similarity(t, d, params, config) -> Tensor:
    """Differentiable cosine similarity per pair."""
    e_t, e_d = encode_pair(t, d, params, config)
    return dot(l2_normalize(e_t), l2_normalize(e_d))


def score_pair(t, d, params, config) -> float:
    e_t, e_d = encode_pair(np.asarray(t), np.asarray(d), params, config)
    return cosine_similarity(e_t.data, e_d.data)


def score_pairs(T, D, params, config) -> np.ndarray:
    """Scores of aligned rows ``(T[i], D[i])``."""
    return pair_similarity(np.asarray(T), np.asarray(D), params, config).data


def _plain(params):
    return {k: (v.data if isinstance(v, Tensor) else np.asarray(v)) for k, v in params.items()}


def _kernel_eligible(config):
    return (
        config.variant != "fc"
        and config.score_mode == "coordinate"
        and config.n_cross("t") <= 1
        and config.n_cross("d") <= 1
    )


def score_matrix(T, D, params, config: ModelConfig) -> np.ndarray:
    """``S[i, j] = score_pair(T[i], D[j])`` for every transaction/text combination."""
    T, D = np.asarray(T, dtype=np.float64), np.asarray(D, dtype=np.float64)
    params = _plain(params)
    _check_inputs(T, D, config)
    if config.variant == "fc":
        # no cross-conditioning: embeddings are per-side
        e_t, e_d = encode_pair(T, D, params, config)
        a = e_t.data / np.linalg.norm(e_t.data, axis=1, keepdims=True)
        b = e_d.data / np.linalg.norm(e_d.data, axis=1, keepdims=True)
        return a @ b.T
    if not _kernel_eligible(config):
        return _score_matrix_generic(T, D, params, config)
    p_t, p_d = (x.data for x in project(T, D, params, config))
    x_t = _intra_chain(p_t, params, config, "t").data
    x_d = _intra_chain(p_d, params, config, "d").data

    def cross_parts(x_self, p_other, prefix, n):
        if n == 0:
            return x_self, x_self, x_self
        bp = _block(params, prefix)
        v = x_self @ bp.W_v.T + bp.b_v
        k = x_self @ bp.W_k.T + bp.b_k
        q = p_other @ bp.W_q.T + bp.b_q
        return v, k, q

    Vt, Kt, Qt = cross_parts(x_t, p_d, "t.cross0", config.n_cross("t"))
    Vd, Kd, Qd = cross_parts(x_d, p_t, "d.cross0", config.n_cross("d"))
    return kernels.pair_scores(
        Vt, Kt, Qt, Vd, Kd, Qd, kernels.PACKAGE_CODES[config.package_op], config.n_cross("t") > 0, config.n_cross("d") > 0
    )


def _score_matrix_generic(T, D, params, config, chunk=4096):
    n_t, n_d = len(T), len(D)
    ii, jj = np.divmod(np.arange(n_t * n_d), n_d)
    out = np.empty(n_t * n_d)
    for lo in range(0, out.size, chunk):
        sl = slice(lo, lo + chunk)
        out[sl] = pair_similarity(T[ii[sl]], D[jj[sl]], params, config).data
    return out.reshape(n_t, n_d)


def gather_pair_similarity(T, D, rows, cols, params, config) -> Tensor:
    """Differentiable scores of pairs ``(T[rows[k]], D[cols[k]])``."""
    return pair_similarity(take(as_tensor(T), rows), take(as_tensor(D), cols), params, config)


def export_embeddings(records, params, config, partner=None) -> list[dict]:
    """Pre- and post-embedding transaction vectors, one row per merchant.

    ``partner`` maps a record to the text vector that conditions its cross
    blocks; by default a merchant is paired with its own description.
    """
    params = _plain(params)
    rows = []
    if not records:
        return rows
    T = np.stack([r.t for r in records])
    D = np.stack([(partner(r) if partner else r.d) for r in records])
    e_t, _ = encode_pair(T, D, params, config)
    for r, e in zip(records, e_t.data):
        rows.append({"id": r.id, "category": r.category, "t": np.asarray(r.t, dtype=np.float64), "e_t": e})
    return rows


def value_map(params, config: ModelConfig, t, d, block="cross"):
    """Affine map from raw transaction features to a transaction-branch block's value.

    Returns ``(W_eff, b_eff, a, v)`` with ``v == W_eff @ t + b_eff`` at this
    ``t``: attention weights of any earlier block are frozen at their
    realised values, which makes the chain affine.  ``a`` and ``v`` are the
    selected block's realised weights and value vector.
    """
    params = _plain(params)
    t = np.asarray(t, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if config.variant == "fc":
        raise ConfigError("the FC variant has no attention block to explain")
    if config.score_mode != "coordinate":
        raise ConfigError("explanations need coordinate-wise attention weights")
    op = config.op
    W = params["proj_t.W"].copy()
    b = params["proj_t.b"].copy()
    p_d = params["proj_d.W"] @ d + params["proj_d.b"]
    x = W @ t + b
    stages = [("intra", i) for i in range(config.n_intra("t"))] + [("cross", i) for i in range(config.n_cross("t"))]
    target = [s for s in stages if s[0] == block]
    if not target:
        raise ConfigError(f"model has no transaction-branch {block} block")
    for kind, i in stages:
        bp = _block(params, f"t.{kind}{i}")
        out = (intra_modal_block(x, bp, op) if kind == "intra" else cross_modal_block(x, p_d, bp, op))
        Wv = bp.W_v @ W
        bv = bp.W_v @ b + bp.b_v
        if (kind, i) == target[-1]:
            return Wv, bv, out.weights.data, out.value.data
        a = out.weights.data
        W, b = a[:, None] * Wv, a * bv
        x = out.output.data
    raise AssertionError("unreachable")
