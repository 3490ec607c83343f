"""Synthetic merchant data with planted structure, pair construction and JSONL I/O.

Each category owns a disjoint set of *informative* transaction coordinates and
one *flag* coordinate in text space.  A merchant's binary subtype ``s`` is
written into its text flag and flips the sign of an offset on its category's
informative coordinates, so part of the transaction signal can only be read
correctly together with the text.  Informative coordinates of a merchant
also share a latent draw, giving correlated groups inside ``t``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from cian.errors import ConfigError, DataFormatError


@dataclass(frozen=True)
class GeneratorConfig:
    n_categories: int = 6
    merchants_per_category: int = 200
    t_dim: int = 32
    d_dim: int = 48
    n_informative: int = 4
    mean_scale: float = 2.0
    subtype_offset: float = 0.5
    group_latent: float = 0.3
    text_scale: float = 1.0
    flag_scale: float = 2.0
    noise: float = 0.3
    text_noise: float = 0.3
    nuisance_rank: int = 2
    nuisance_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.n_categories < 2:
            raise ConfigError("n_categories must be >= 2")
        if self.merchants_per_category < 1:
            raise ConfigError("merchants_per_category must be >= 1")
        if self.n_informative < 1 or self.n_categories * self.n_informative > self.t_dim:
            raise ConfigError(
                f"need n_categories * n_informative <= t_dim for disjoint informative sets "
                f"({self.n_categories} * {self.n_informative} > {self.t_dim})"
            )
        if self.n_categories > self.d_dim:
            raise ConfigError("each category needs its own text flag coordinate (n_categories <= d_dim)")
        if self.noise < 0 or self.text_noise < 0 or self.nuisance_scale < 0:
            raise ConfigError("noise scales must be non-negative")
        if self.nuisance_rank < 0:
            raise ConfigError("nuisance_rank must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MerchantRecord:
    id: str
    category: int
    t: np.ndarray
    d: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, MerchantRecord)
            and self.id == other.id
            and self.category == other.category
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.d, other.d)
        )


@dataclass
class GroundTruth:
    informative: dict[int, list[int]]
    flag: dict[int, int]
    category_means: np.ndarray = field(repr=False)

    def to_json(self) -> dict:
        return {
            "informative": {str(c): v for c, v in self.informative.items()},
            "flag": {str(c): v for c, v in self.flag.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GroundTruth":
        return cls(
            {int(c): list(v) for c, v in doc["informative"].items()},
            {int(c): int(v) for c, v in doc["flag"].items()},
            np.empty((0, 0)),
        )


@dataclass
class PairSample:
    anchor_id: str
    text_id: str
    t: np.ndarray
    d: np.ndarray
    label: int
    category_t: int
    category_d: int


def generate_dataset(cfg: GeneratorConfig) -> tuple[list[MerchantRecord], GroundTruth]:
    rng = np.random.default_rng(cfg.seed)
    C, n_inf = cfg.n_categories, cfg.n_informative
    coords = rng.permutation(cfg.t_dim)
    informative = {c: sorted(int(j) for j in coords[c * n_inf : (c + 1) * n_inf]) for c in range(C)}
    flags = {c: int(j) for c, j in enumerate(rng.permutation(cfg.d_dim)[:C])}

    mu = rng.normal(0.0, 0.1 * cfg.mean_scale, size=(C, cfg.t_dim))
    for c in range(C):
        mu[c, informative[c]] += cfg.mean_scale
    # keep category means at least 4 noise-sigmas apart
    gaps = [np.linalg.norm(mu[a] - mu[b]) for a in range(C) for b in range(a + 1, C)]
    if cfg.noise > 0 and min(gaps) < 4 * cfg.noise:
        mu *= 4 * cfg.noise / min(gaps)
    nu = rng.normal(0.0, cfg.text_scale, size=(C, cfg.d_dim))
    for c in range(C):
        nu[c, list(flags.values())] = 0.0
    # fixed sign pattern of the subtype offset within each informative set
    pattern = {c: rng.choice([-1.0, 1.0], size=n_inf) for c in range(C)}

    records = []
    width = max(5, len(str(C * cfg.merchants_per_category)))
    for c in range(C):
        for _ in range(cfg.merchants_per_category):
            idx = len(records)
            s = 1.0 if rng.random() < 0.5 else -1.0
            t = mu[c] + rng.normal(0.0, cfg.noise, size=cfg.t_dim)
            t[informative[c]] += s * cfg.subtype_offset * pattern[c] + cfg.group_latent * rng.normal()
            d = nu[c] + rng.normal(0.0, cfg.text_noise, size=cfg.d_dim)
            d[flags[c]] += s * cfg.flag_scale
            records.append(MerchantRecord(f"m{idx:0{width}d}", c, t, d))
    _add_nuisance(records, cfg, coords[C * n_inf :])
    return records, GroundTruth(informative, flags, mu)


def _add_nuisance(records, cfg, free):
    """Category-independent low-rank variation on the uninformative coordinates.

    Stands in for merchant size/activity: it moves every category the same
    way, so centroid distances cancel it but unsupervised clustering of raw
    ``t`` is pulled along it.  Drawn from its own stream so that a zero scale
    leaves the rest of the dataset untouched.
    """
    if cfg.nuisance_scale == 0 or cfg.nuisance_rank == 0 or free.size == 0:
        return
    rng = np.random.default_rng([cfg.seed, 1])
    basis, _ = np.linalg.qr(rng.normal(size=(free.size, min(cfg.nuisance_rank, free.size))))
    for r in records:
        r.t[free] += basis @ rng.normal(0.0, cfg.nuisance_scale, size=basis.shape[1])


def split_records(records, fractions=(0.8, 0.1, 0.1), seed=0):
    """Deterministic stratified split into train/val/test lists."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    by_cat: dict[int, list[MerchantRecord]] = {}
    for r in records:
        by_cat.setdefault(r.category, []).append(r)
    parts = ([], [], [])
    for c in sorted(by_cat):
        group = [by_cat[c][i] for i in rng.permutation(len(by_cat[c]))]
        n_tr = int(round(fractions[0] * len(group)))
        n_va = int(round(fractions[1] * len(group)))
        parts[0].extend(group[:n_tr])
        parts[1].extend(group[n_tr : n_tr + n_va])
        parts[2].extend(group[n_tr + n_va :])
    return tuple(sorted(p, key=lambda r: r.id) for p in parts)


def build_pairs(records, negatives_per_positive=1, seed=0) -> list[PairSample]:
    """Own-description positives plus ``k`` other-category negatives per merchant."""
    cats = sorted({r.category for r in records})
    if len(cats) < 2:
        raise ConfigError("build_pairs needs at least two categories")
    rng = np.random.default_rng(seed)
    pairs = []
    for r in records:
        pairs.append(PairSample(r.id, r.id, r.t, r.d, 1, r.category, r.category))
        others = [o for o in records if o.category != r.category]
        for j in rng.integers(0, len(others), size=negatives_per_positive):
            o = others[int(j)]
            pairs.append(PairSample(r.id, o.id, r.t, o.d, 0, r.category, o.category))
    return pairs


# ---------------------------------------------------------------------------
# JSONL I/O


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            doc = {"id": r.id, "category": int(r.category), "t": [float(x) for x in r.t], "d": [float(x) for x in r.d]}
            fh.write(json.dumps(doc) + "\n")


def read_jsonl(path) -> list[MerchantRecord]:
    records = []
    dims = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                rec = MerchantRecord(
                    str(doc["id"]),
                    int(doc["category"]),
                    np.array(doc["t"], dtype=np.float64),
                    np.array(doc["d"], dtype=np.float64),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed record ({exc})") from None
            if rec.t.ndim != 1 or rec.d.ndim != 1:
                raise DataFormatError(f"{path}:{lineno}: 't' and 'd' must be flat lists")
            if not (np.all(np.isfinite(rec.t)) and np.all(np.isfinite(rec.d))):
                raise DataFormatError(f"{path}:{lineno}: non-finite feature value")
            if dims is None:
                dims = (rec.t.size, rec.d.size)
            elif (rec.t.size, rec.d.size) != dims:
                raise DataFormatError(
                    f"{path}:{lineno}: dims (t={rec.t.size}, d={rec.d.size}) differ from earlier lines "
                    f"(t={dims[0]}, d={dims[1]})"
                )
            records.append(rec)
    return records


def write_pairs(pairs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"anchor": p.anchor_id, "text": p.text_id, "label": int(p.label)}) + "\n")


def read_pairs(path, records) -> list[PairSample]:
    by_id = {r.id: r for r in records}
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                a, b = by_id[doc["anchor"]], by_id[doc["text"]]
                label = int(doc["label"])
            except (ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad pair line ({exc})") from None
            pairs.append(PairSample(a.id, b.id, a.t, b.d, label, a.category, b.category))
    return pairs


def min_mean_separation(means) -> float:
    means = np.asarray(means)
    return min(
        math.dist(means[a], means[b]) for a in range(len(means)) for b in range(a + 1, len(means))
    )


def save_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
