"""Ground-truth user simulator.

Click model ``sigmoid(w * (e_u . e_i - b_ui - b))`` with item-level boredom
``b_ui = coeff * n_ui``; preference drift toward clicked items; category-level
boredom that damps an over-consumed block and renormalizes the user.
"""
from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .embedspace import EMBED_DIM, N_CATEGORIES, InvalidStateError, check_dimension, main_categories


@dataclass(frozen=True)
class SimConfig:
    w: float = 10.0
    b: float = 0.8
    gamma: float = 0.8
    boredom_window: int = 10
    boredom_trigger: int = 5
    boredom_decay: float = 0.8
    item_boredom_coeff: float = 0.1

    def __post_init__(self):
        for name in ("w", "b", "gamma", "boredom_decay", "item_boredom_coeff"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.boredom_window < 1 or self.boredom_trigger < 1:
            raise ValueError("boredom_window and boredom_trigger must be positive")
        if self.boredom_trigger > self.boredom_window:
            raise ValueError("boredom_trigger cannot exceed boredom_window")

    def with_gamma(self, gamma: float) -> "SimConfig":
        return SimConfig(**{**self.__dict__, "gamma": gamma})


class Catalog:
    """Immutable item table: true embeddings plus their main categories."""

    def __init__(self, embeddings: np.ndarray):
        embeddings = np.array(embeddings, dtype=float)
        check_dimension(embeddings)
        embeddings.setflags(write=False)
        self.embeddings = embeddings
        self.categories = main_categories(embeddings)
        self.categories.setflags(write=False)

    def __len__(self):
        return len(self.embeddings)

    def __getitem__(self, item_id: int) -> np.ndarray:
        return self.embeddings[self.check(item_id)]

    def check(self, item_id) -> int:
        item_id = int(item_id)
        if not 0 <= item_id < len(self.embeddings):
            raise KeyError(f"unknown item id {item_id}")
        return item_id


@dataclass
class SimUserState:
    embedding: np.ndarray
    # (item_id, main_category) of the most recent clicks, oldest first
    recent_clicks: deque = field(default_factory=deque)
    click_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.embedding = np.array(self.embedding, dtype=float)
        check_dimension(self.embedding)

    def n_clicks(self, item_id: int) -> int:
        return self.click_counts.get(item_id, 0)


@dataclass(frozen=True)
class Feedback:
    clicked: bool
    click_probability: float
    user_embedding_after: np.ndarray


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def click_probability(user: SimUserState, item: np.ndarray, n_ui: int, cfg: SimConfig) -> float:
    if n_ui < 0:
        raise ValueError("n_ui must be non-negative")
    affinity = float(np.dot(user.embedding, item))
    return _sigmoid(cfg.w * (affinity - cfg.item_boredom_coeff * n_ui - cfg.b))


def click_probabilities(user: SimUserState, items: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Click probability against every row of ``items`` (n_ui taken from the user)."""
    counts = np.zeros(len(items))
    for item_id, n in user.click_counts.items():
        counts[item_id] = n
    logits = cfg.w * (items @ user.embedding - cfg.item_boredom_coeff * counts - cfg.b)
    return 1.0 / (1.0 + np.exp(-logits))


def sample_click(prob: float, rng: np.random.Generator) -> bool:
    # random() lies in [0, 1): prob=0 never clicks, prob=1 always clicks
    return bool(rng.random() < prob)


def apply_preference_evolution(user: SimUserState, item: np.ndarray, cfg: SimConfig) -> None:
    user.embedding = cfg.gamma * user.embedding + (1.0 - cfg.gamma) * np.asarray(item, dtype=float)


def apply_category_boredom(user: SimUserState, cfg: SimConfig) -> bool:
    """Damp every category that fills the trigger quota of the recent window.

    All triggered blocks are decayed first, then the embedding is renormalized once.
    """
    counts = np.bincount([c for _, c in user.recent_clicks], minlength=N_CATEGORIES)
    triggered = np.flatnonzero(counts >= cfg.boredom_trigger)
    if triggered.size == 0:
        return False
    e = user.embedding.copy()
    for c in triggered:
        e[2 * c:2 * c + 2] *= cfg.boredom_decay
    norm = math.sqrt(float(np.dot(e, e)))
    if not norm > 0:
        raise InvalidStateError("user embedding collapsed to zero under category boredom")
    user.embedding = e / norm
    return True


def record_click(user: SimUserState, item_id: int, category: int, cfg: SimConfig) -> None:
    user.click_counts[item_id] = user.click_counts.get(item_id, 0) + 1
    user.recent_clicks.append((item_id, int(category)))
    while len(user.recent_clicks) > cfg.boredom_window:
        user.recent_clicks.popleft()


def step(user: SimUserState, item_id: int, catalog: Catalog, cfg: SimConfig,
         rng: np.random.Generator) -> Feedback:
    """One recommendation round for one user. Only a click mutates the state."""
    item_id = catalog.check(item_id)
    item = catalog.embeddings[item_id]
    prob = click_probability(user, item, user.n_clicks(item_id), cfg)
    clicked = sample_click(prob, rng)
    if clicked:
        record_click(user, item_id, catalog.categories[item_id], cfg)
        apply_preference_evolution(user, item, cfg)
        apply_category_boredom(user, cfg)
    return Feedback(clicked, prob, user.embedding.copy())


def new_user(embedding: np.ndarray) -> SimUserState:
    return SimUserState(np.array(embedding, dtype=float))


@dataclass(frozen=True)
class SimSnapshot:
    users: tuple

    def __len__(self):
        return len(self.users)


def snapshot(users) -> SimSnapshot:
    return SimSnapshot(tuple(copy.deepcopy(u) for u in users))


def restore(snap: SimSnapshot) -> list:
    return [copy.deepcopy(u) for u in snap.users]


def snapshot_bytes(snap: SimSnapshot) -> bytes:
    """Canonical byte form, used for hashing and equality checks."""
    parts = []
    for u in snap.users:
        parts.append(np.asarray(u.embedding, dtype="<f8").tobytes())
        parts.append(repr(list(u.recent_clicks)).encode())
        parts.append(repr(sorted(u.click_counts.items())).encode())
    return b"|".join(parts)


def embeddings_of(users) -> np.ndarray:
    if not users:
        return np.empty((0, EMBED_DIM))
    return np.stack([u.embedding for u in users])
