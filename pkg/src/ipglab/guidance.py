"""Per-round item selection: IPG (simplified and exact), heuristic, greedy,
random, and the simulator-side oracle used during log collection.

All selections break ties toward the lowest item id (``np.argmax`` semantics).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import recsys
from .recsys import RecommenderModel
from .simenv import Catalog, SimConfig, click_probabilities


class PolicyKind(str, enum.Enum):
    RANDOM = "random"
    GREEDY = "greedy"
    HEURISTIC = "heuristic"
    IPG = "ipg"
    IPG_EXACT = "ipg_exact"
    ORACLE = "oracle"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError("heuristic alpha must be finite and non-negative")

    @property
    def name(self) -> str:
        if self.kind is PolicyKind.HEURISTIC:
            return f"heuristic:{self.alpha:g}"
        return self.kind.value

    @classmethod
    def parse(cls, text: str, alpha: float = 1.0) -> "Policy":
        """Accept ``ipg``, ``heuristic``, ``heuristic:2.0`` and so on."""
        name, _, arg = text.strip().partition(":")
        if arg:
            alpha = float(arg)
        return cls(PolicyKind(name.lower()), alpha)


@dataclass(frozen=True)
class ScoredItem:
    item_id: int
    interaction_prob: float
    guide_score: float
    ipg_score: float


def guiding_score(rep: np.ndarray, item_id, target_id, model: RecommenderModel) -> float:
    """Predicted gain in target affinity from clicking ``item_id``, constant factor dropped."""
    e_i = model.embedding(item_id)
    e_j = model.embedding(target_id)
    return float(np.dot(e_i - rep, e_j))


def guiding_score_exact(prefix: Sequence[int], item_id, target_id, model: RecommenderModel) -> float:
    """Re-encode the extended prefix and measure the change in target affinity."""
    e_j = model.embedding(target_id)
    after = recsys.encode(list(prefix) + [int(item_id)], model)
    before = recsys.encode(prefix, model)
    return float(np.dot(e_j, after) - np.dot(e_j, before))


def ipg_score(p: float, g: float) -> float:
    return p * g


def score_items(rep: np.ndarray, target_id, model: RecommenderModel) -> list:
    """Every catalog item scored one at a time (reference path, not vectorized)."""
    out = []
    for i in range(model.n_items):
        p = recsys.predict_click(rep, i, model)
        g = guiding_score(rep, i, target_id, model)
        out.append(ScoredItem(i, p, g, ipg_score(p, g)))
    return out


@dataclass
class SelectionContext:
    """Inputs a policy may read; each policy uses only the fields it needs.

    Batched over users: ``reps`` is (n_users, d), ``prefixes``/``rngs``/``users``
    are per-user sequences.
    """
    model: Optional[RecommenderModel] = None
    reps: Optional[np.ndarray] = None
    prefixes: Optional[Sequence[Sequence[int]]] = None
    target_id: Optional[int] = None
    users: Optional[Sequence] = None  # SimUserState, oracle only
    sim_cfg: Optional[SimConfig] = None
    rngs: Optional[Sequence[np.random.Generator]] = None


def _require(ctx: SelectionContext, *names):
    missing = [n for n in names if getattr(ctx, n) is None]
    if missing:
        raise ValueError(f"selection context is missing {', '.join(missing)}")


def select_batch(policy: Policy, ctx: SelectionContext, catalog: Catalog) -> np.ndarray:
    """One item id per user in the context."""
    n_items = len(catalog)
    if n_items == 0:
        raise ValueError("empty catalog")
    kind = policy.kind

    if kind is PolicyKind.RANDOM:
        _require(ctx, "rngs")
        return np.array([int(rng.integers(n_items)) for rng in ctx.rngs], dtype=np.int64)

    if kind is PolicyKind.ORACLE:
        _require(ctx, "users", "sim_cfg")
        return np.array([int(np.argmax(click_probabilities(u, catalog.embeddings, ctx.sim_cfg)))
                         for u in ctx.users], dtype=np.int64)

    _require(ctx, "model")
    model = ctx.model
    if model.n_items != n_items:
        raise ValueError("model and catalog disagree on the number of items")

    if kind is PolicyKind.IPG_EXACT:
        _require(ctx, "prefixes", "target_id")
        e_j = model.embedding(ctx.target_id)
        picks = []
        for prefix in ctx.prefixes:
            rep = recsys.encode(prefix, model)
            p = recsys.predict_all(rep, model)[0]
            g = recsys.encode_extended(prefix, model) @ e_j - np.dot(rep, e_j)
            picks.append(int(np.argmax(p * g)))
        return np.array(picks, dtype=np.int64)

    _require(ctx, "reps")
    reps = np.atleast_2d(ctx.reps)
    if kind is PolicyKind.GREEDY:
        return np.argmax(recsys.predict_all(reps, model), axis=1)
    _require(ctx, "target_id")
    e_j = model.embedding(ctx.target_id)
    if kind is PolicyKind.HEURISTIC:
        scores = reps @ model.item_table.T + policy.alpha * (model.item_table @ e_j)[None, :]
        return np.argmax(scores, axis=1)
    if kind is PolicyKind.IPG:
        p = recsys.predict_all(reps, model)
        g = (model.item_table @ e_j)[None, :] - (reps @ e_j)[:, None]
        return np.argmax(p * g, axis=1)
    raise ValueError(f"unsupported policy {kind}")


def select(policy: Policy, ctx: SelectionContext, catalog: Catalog) -> int:
    """Single-user selection; context sequences hold exactly one entry."""
    return int(select_batch(policy, ctx, catalog)[0])
