"""Sequential recommender with an exponential-moving-average encoder.

The user representation is a left fold over the clicked prefix:
the first item initializes it, each further item ``i`` applies
``rep <- decay * rep + (1 - decay) * e_i``. Because of this, the rank-one
update used by the guidance score is exact rather than approximate.

Other encoders can be plugged in by providing ``encode``/``update_user_rep``
with the same signatures; the guidance policies only consume representations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .embedspace import EMBED_DIM
from .interactions import InteractionLog


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class RecommenderModel:
    item_table: np.ndarray
    head_scale: float = 1.0
    head_bias: float = 0.0
    encoder_decay: float = 0.8
    train_seed: int = 0

    def __post_init__(self):
        self.item_table = np.asarray(self.item_table, dtype=float)
        if not 0.0 < self.encoder_decay < 1.0:
            raise ValueError("encoder_decay must lie in (0, 1)")
        if not np.all(np.isfinite(self.item_table)):
            raise ValueError("item_table must be finite")

    @property
    def n_items(self) -> int:
        return len(self.item_table)

    def embedding(self, item_id) -> np.ndarray:
        item_id = int(item_id)
        if not 0 <= item_id < len(self.item_table):
            raise KeyError(f"unknown item id {item_id}")
        return self.item_table[item_id]

    def copy(self) -> "RecommenderModel":
        return RecommenderModel(self.item_table.copy(), self.head_scale, self.head_bias,
                                self.encoder_decay, self.train_seed)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 15
    l2_reg: float = 1e-3
    batch_size: int = 32
    embed_dim: int = EMBED_DIM
    init_noise: float = 0.1
    seed: int = 0
    encoder_decay: float = 0.8

    def __post_init__(self):
        if self.learning_rate < 0 or self.l2_reg < 0 or self.init_noise < 0:
            raise ValueError("learning_rate, l2_reg and init_noise must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.embed_dim != EMBED_DIM:
            raise ValueError(f"embed_dim must equal {EMBED_DIM}")
        if not 0.0 < self.encoder_decay < 1.0:
            raise ValueError("encoder_decay must lie in (0, 1)")


def update_user_rep(rep: np.ndarray, item_id, model: RecommenderModel) -> np.ndarray:
    g = model.encoder_decay
    return g * rep + (1.0 - g) * model.embedding(item_id)


def encode(prefix, model: RecommenderModel) -> np.ndarray:
    if len(prefix) == 0:
        return np.zeros(model.item_table.shape[1])
    rep = model.embedding(prefix[0]).copy()
    for item_id in prefix[1:]:
        rep = update_user_rep(rep, item_id, model)
    return rep


def encode_extended(prefix, model: RecommenderModel) -> np.ndarray:
    """``encode(prefix + [i])`` for every catalog item ``i`` at once, shape (n_items, d)."""
    if len(prefix) == 0:
        return model.item_table.copy()
    g = model.encoder_decay
    return g * encode(prefix, model) + (1.0 - g) * model.item_table


def predict_click(rep: np.ndarray, item_id, model: RecommenderModel) -> float:
    return float(expit(model.head_scale * float(np.dot(rep, model.embedding(item_id))) + model.head_bias))


def predict_all(reps: np.ndarray, model: RecommenderModel) -> np.ndarray:
    """Click probabilities for every (user rep, item) pair, shape (n_users, n_items)."""
    return expit(model.head_scale * (np.atleast_2d(reps) @ model.item_table.T) + model.head_bias)


# --- training -------------------------------------------------------------

class Impressions(NamedTuple):
    """Logged impressions with pointers into padded per-user click histories."""
    users: np.ndarray
    n_prefix: np.ndarray  # clicks the user had before this impression
    items: np.ndarray
    labels: np.ndarray
    histories: np.ndarray  # (n_users, max_clicks) padded with 0
    index: np.ndarray  # position of each impression in the source log


def build_impressions(log: InteractionLog) -> Impressions:
    order = log.chronological_order()
    users = log.user[order]
    items = log.item[order]
    clicked = log.clicked[order]
    n_users = int(users.max()) + 1 if len(users) else 0
    n_prefix = np.zeros(len(order), dtype=np.int64)
    lists = [[] for _ in range(n_users)]
    for k, (u, i, c) in enumerate(zip(users, items, clicked)):
        n_prefix[k] = len(lists[u])
        if c:
            lists[u].append(i)
    width = max((len(h) for h in lists), default=0)
    histories = np.zeros((n_users, max(width, 1)), dtype=np.int64)
    for u, h in enumerate(lists):
        histories[u, :len(h)] = h
    return Impressions(users, n_prefix, items, clicked.astype(float), histories, order)


def prefix_weights(n_prefix: np.ndarray, width: int, decay: float) -> np.ndarray:
    """Closed-form weights of the EMA fold: item k of an n-prefix gets
    decay^(n-1) for k == 0 and (1 - decay) * decay^(n-1-k) otherwise."""
    n = np.asarray(n_prefix)[:, None]
    k = np.arange(width)[None, :]
    w = (1.0 - decay) * decay ** np.maximum(n - 1 - k, 0)
    w = np.where(k == 0, decay ** np.maximum(n - 1, 0), w)
    return np.where(k < n, w, 0.0)


def batch_loss_and_grad(model: RecommenderModel, hist_rows: np.ndarray, n_prefix: np.ndarray,
                        items: np.ndarray, labels: np.ndarray, l2_reg: float):
    """Batch objective: mean BCE + (l2/2) * sum of ||e_r||^2 over the distinct rows r in the batch.

    Returns ``(loss, rows, row_grads, d_scale, d_bias)``; ``rows`` may repeat,
    accumulate with ``np.add.at``.
    """
    T = model.item_table
    B, L = hist_rows.shape
    weights = prefix_weights(n_prefix, L, model.encoder_decay)
    mask = weights > 0
    hist_emb = T[hist_rows]  # (B, L, d)
    reps = np.einsum("bl,bld->bd", weights, hist_emb)
    item_emb = T[items]
    s = np.einsum("bd,bd->b", reps, item_emb)
    z = model.head_scale * s + model.head_bias
    # BCE for 0/1 labels as softplus(-(2y-1) z): no cancellation when saturated
    bce = np.logaddexp(0.0, (1.0 - 2.0 * labels) * z)
    touched = np.unique(np.concatenate([hist_rows[mask], items]))
    loss = float(bce.mean() + 0.5 * l2_reg * np.sum(T[touched] ** 2))

    dz = (expit(z) - labels) / B
    d_scale = float(np.dot(dz, s))
    d_bias = float(dz.sum())
    d_rep = (dz * model.head_scale)[:, None] * item_emb
    d_item = (dz * model.head_scale)[:, None] * reps
    d_hist = weights[:, :, None] * d_rep[:, None, :]
    rows = np.concatenate([items, hist_rows[mask], touched])
    grads = np.concatenate([d_item, d_hist[mask], l2_reg * T[touched]])
    return loss, rows, grads, d_scale, d_bias


def sgd_step(model: RecommenderModel, hist_rows, n_prefix, items, labels, lr: float,
             l2_reg: float) -> float:
    """One in-place gradient step on a batch; returns the pre-step batch loss."""
    loss, rows, grads, d_scale, d_bias = batch_loss_and_grad(model, hist_rows, n_prefix, items,
                                                             labels, l2_reg)
    if not math.isfinite(loss):
        raise TrainingDivergedError("non-finite training loss")
    np.add.at(model.item_table, rows, -lr * grads)
    model.head_scale -= lr * d_scale
    model.head_bias -= lr * d_bias
    return loss


def dense_grad(model: RecommenderModel, rows: np.ndarray, grads: np.ndarray) -> np.ndarray:
    out = np.zeros_like(model.item_table)
    np.add.at(out, rows, grads)
    return out


class TrainResult(NamedTuple):
    model: RecommenderModel
    final_loss: float
    epoch_losses: list


def init_model(n_items: int, cfg: TrainConfig) -> RecommenderModel:
    rng = np.random.default_rng(cfg.seed)
    table = cfg.init_noise * rng.standard_normal((n_items, cfg.embed_dim))
    return RecommenderModel(table, 1.0, 0.0, cfg.encoder_decay, cfg.seed)


def mean_log_loss(imps: Impressions, model: RecommenderModel, sel=None, chunk: int = 4096) -> float:
    sel = np.arange(len(imps.users)) if sel is None else np.asarray(sel)
    total = 0.0
    for start in range(0, len(sel), chunk):
        k = sel[start:start + chunk]
        z = _logits(model, imps, k)
        total += float(np.sum(np.logaddexp(0.0, (1.0 - 2.0 * imps.labels[k]) * z)))
    return total / len(sel)


def _logits(model: RecommenderModel, imps: Impressions, k: np.ndarray) -> np.ndarray:
    rows = imps.histories[imps.users[k]]
    weights = prefix_weights(imps.n_prefix[k], rows.shape[1], model.encoder_decay)
    reps = np.einsum("bl,bld->bd", weights, model.item_table[rows])
    s = np.einsum("bd,bd->b", reps, model.item_table[imps.items[k]])
    return model.head_scale * s + model.head_bias


def train(log: InteractionLog, cfg: TrainConfig, n_items: int, mask=None) -> TrainResult:
    """Minibatch SGD on binary cross-entropy over logged impressions.

    ``mask`` (over log records) restricts which impressions are trained on;
    click prefixes are always built from the full log.
    """
    if len(log) == 0:
        raise ValueError("cannot train on an empty log")
    imps = build_impressions(log)
    sel = np.arange(len(imps.users))
    if mask is not None:
        sel = sel[np.asarray(mask)[imps.index]]
    if len(sel) == 0:
        raise ValueError("training mask selects no impressions")
    if imps.labels[sel].min() == imps.labels[sel].max():
        raise ValueError("training impressions must contain both clicks and non-clicks")

    model = init_model(n_items, cfg)
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.learning_rate
    epoch_losses = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(sel)
        running = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            k = perm[start:start + cfg.batch_size]
            loss = sgd_step(model, imps.histories[imps.users[k]], imps.n_prefix[k], imps.items[k],
                            imps.labels[k], lr, cfg.l2_reg)
            running += loss * len(k)
        epoch_losses.append(running / len(sel))
    final = mean_log_loss(imps, model, sel)
    if not math.isfinite(final) or not np.all(np.isfinite(model.item_table)):
        raise TrainingDivergedError("training produced non-finite parameters")
    return TrainResult(model, final, epoch_losses)


# --- evaluation -----------------------------------------------------------

def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined when only one class is present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def log_loss(labels: np.ndarray, probs: np.ndarray, eps: float = 1e-15) -> float:
    p = np.clip(np.asarray(probs, dtype=float), eps, 1 - eps)
    y = np.asarray(labels, dtype=float)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def evaluate_model(log: InteractionLog, model: RecommenderModel, mask=None) -> dict:
    """Log loss and AUC on the masked impressions (prefixes from the full log)."""
    imps = build_impressions(log)
    sel = np.arange(len(imps.users))
    if mask is not None:
        sel = sel[np.asarray(mask)[imps.index]]
    z = _logits(model, imps, sel)
    labels = imps.labels[sel]
    return {"log_loss": log_loss(labels, expit(z)), "auc": roc_auc(labels, z)}


def holdout_mask(log: InteractionLog, fraction: float = 0.1) -> np.ndarray:
    """True for records in the last ``fraction`` of collection rounds."""
    last = int(log.round.max())
    cutoff = last - max(1, int(round(fraction * last)))
    return log.round > cutoff
