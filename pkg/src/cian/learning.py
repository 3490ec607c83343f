"""Triplet training with batch-hard negatives, and thresholded evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from cian import kernels
from cian.errors import ConfigError, NumericalError, ParameterError
from cian.model import ModelConfig, gather_pair_similarity, init_params, score_matrix, score_pairs
from cian.numerics import AdamState, adam_step, as_tensor, hinge, mean, take, value_and_grad

log = logging.getLogger(__name__)


def triplet_loss(s_pos: float, s_neg: float, margin: float) -> float:
    if margin < 0:
        raise ParameterError(f"margin must be >= 0, got {margin}")
    return max(0.0, margin - s_pos + s_neg)


@dataclass(frozen=True)
class MarginSchedule:
    m0: float = 0.1
    m_max: float = 0.5
    delta: float = 0.05

    def __post_init__(self):
        if not (0 <= self.m0 <= self.m_max) or self.delta < 0:
            raise ConfigError(f"need 0 <= m0 <= m_max and delta >= 0, got {self}")


def margin_at(epoch: int, sched: MarginSchedule) -> float:
    return min(sched.m_max, sched.m0 + sched.delta * epoch)


def mine_hardest_negatives(categories, scores):
    """Batch-hard negative per anchor row.

    Returns ``(pairs, skipped)`` where ``pairs`` lists ``(anchor, negative)``
    indices and ``skipped`` counts anchors with no other-category candidate.
    """
    categories = np.asarray(categories)
    idx = kernels.hardest_negatives(scores, categories, categories)
    pairs = [(i, int(j)) for i, j in enumerate(idx) if j >= 0]
    return pairs, int((idx < 0).sum())


LR_SCHEDULES = ("constant", "cosine")


def lr_at(epoch: int, hyper: "TrainConfig") -> float:
    """Learning rate for an epoch; ``cosine`` anneals from ``lr`` towards zero over the run."""
    if hyper.lr_schedule == "constant" or hyper.epochs <= 1:
        return hyper.lr
    return 0.5 * hyper.lr * (1.0 + math.cos(math.pi * epoch / hyper.epochs))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 0.01
    lr_schedule: str = "cosine"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    m0: float = 0.1
    m_max: float = 0.5
    delta: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 2:
            raise ConfigError("epochs must be >= 0 and batch_size >= 2")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        MarginSchedule(self.m0, self.m_max, self.delta)

    @property
    def schedule(self) -> MarginSchedule:
        return MarginSchedule(self.m0, self.m_max, self.delta)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _anchor_arrays(pairs):
    """Unique merchants (by anchor id) from the positive pairs, in first-seen order."""
    seen = {}
    for p in pairs:
        if p.label == 1 and p.anchor_id not in seen:
            seen[p.anchor_id] = p
    if not seen:
        raise ConfigError("no positive pairs to train on")
    ps = list(seen.values())
    return np.stack([p.t for p in ps]), np.stack([p.d for p in ps]), np.array([p.category_t for p in ps])


def _batch_loss(T, D, cats, params, config, margin):
    S = score_matrix(T, D, params, config)
    mined, skipped = mine_hardest_negatives(cats, S)
    if not mined:
        return None, 0, skipped
    anchors = np.array([a for a, _ in mined])
    negs = np.array([n for _, n in mined])
    n = anchors.size
    rows = np.concatenate([anchors, anchors])
    cols = np.concatenate([anchors, negs])

    def loss_fn(leaves):
        sims = gather_pair_similarity(T, D, rows, cols, leaves, config)
        s_pos = take(sims, np.arange(n))
        s_neg = take(sims, np.arange(n, 2 * n))
        return mean(hinge(as_tensor(margin) - s_pos + s_neg))

    return loss_fn, n, skipped


def _epoch_loss(T, D, cats, params, config, margin, batch_size):
    total, count = 0.0, 0
    for lo in range(0, len(T), batch_size):
        sl = slice(lo, lo + batch_size)
        loss_fn, n, _ = _batch_loss(T[sl], D[sl], cats[sl], params, config, margin)
        if loss_fn is None:
            continue
        total += float(loss_fn(params).data) * n
        count += n
    return total / count if count else 0.0


def train(config: ModelConfig, train_pairs, val_pairs, hyper: TrainConfig = TrainConfig(), params=None, on_epoch=None):
    """Fit the model; returns ``(params, trace)``.

    ``trace`` has one dict per epoch with the mean training loss (before
    each batch's update), the validation loss after the epoch, and the
    margin in force.
    """
    if not train_pairs:
        raise ConfigError("empty training set")
    params = {k: np.array(v, dtype=np.float64) for k, v in (params or init_params(config)).items()}
    T, D, cats = _anchor_arrays(train_pairs)
    if val_pairs:
        Tv, Dv, cv = _anchor_arrays(val_pairs)
    rng = np.random.default_rng(hyper.seed)
    state = AdamState()
    trace = []
    for epoch in range(hyper.epochs):
        margin = margin_at(epoch, hyper.schedule)
        lr = lr_at(epoch, hyper)
        order = rng.permutation(len(T))
        total, count = 0.0, 0
        for b, lo in enumerate(range(0, len(T), hyper.batch_size)):
            idx = order[lo : lo + hyper.batch_size]
            loss_fn, n, skipped = _batch_loss(T[idx], D[idx], cats[idx], params, config, margin)
            if loss_fn is None:
                log.debug("epoch %d batch %d: all %d anchors skipped", epoch, b, skipped)
                continue
            loss, grads = value_and_grad(loss_fn, params)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericalError(f"non-finite loss/gradient at epoch {epoch}, batch {b} (rows {lo}..{lo + len(idx) - 1})")
            params, state = adam_step(
                params, grads, state, lr, hyper.beta1, hyper.beta2, hyper.eps_hat, hyper.weight_decay
            )
            total += loss * n
            count += n
        val_loss = _epoch_loss(Tv, Dv, cv, params, config, margin, hyper.batch_size) if val_pairs else float("nan")
        rec = {"epoch": epoch, "train_loss": total / count if count else 0.0, "val_loss": val_loss, "margin": margin}
        log.info("epoch %(epoch)d train_loss=%(train_loss).5f val_loss=%(val_loss).5f margin=%(margin).3f lr=%(lr).2e", {**rec, "lr": lr})
        trace.append(rec)
        if on_epoch:
            on_epoch(rec)
    return params, trace


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from_counts(tp, fp, fn, tn, threshold=0.0) -> Metrics:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return Metrics(p, r, f1, threshold, tp, fp, fn, tn)


def compute_metrics(scores, labels, threshold) -> Metrics:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.size == 0:
        raise ConfigError("empty evaluation set")
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    tn = int(np.sum(~pred & ~labels))
    return metrics_from_counts(tp, fp, fn, tn, float(threshold))


def select_threshold(scores, labels) -> float:
    """Threshold with the best F1 among midpoints of adjacent sorted scores."""
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise ParameterError("threshold selection needs both positive and negative labels")
    threshold, _ = kernels.best_threshold(scores, labels)
    return threshold


def pair_scores_and_labels(pairs, params, config):
    T = np.stack([p.t for p in pairs])
    D = np.stack([p.d for p in pairs])
    return score_pairs(T, D, params, config), np.array([p.label for p in pairs])


def evaluate(pairs, params, config, threshold) -> Metrics:
    if not pairs:
        raise ConfigError("empty test set")
    if not -1.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must lie in [-1, 1], got {threshold}")
    scores, labels = pair_scores_and_labels(pairs, params, config)
    return compute_metrics(scores, labels, threshold)
