"""Structured 20-d embedding space: 10 category blocks of 2 components.

Embeddings are plain float64 numpy arrays. Block ``c`` covers components
``2c`` and ``2c + 1``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

N_CATEGORIES = 10
BLOCK_SIZE = 2
EMBED_DIM = N_CATEGORIES * BLOCK_SIZE


class InvalidStateError(ValueError):
    """Raised when a vector cannot satisfy a contract (e.g. zero norm)."""


def spawn_stream(seed: int, *key: int) -> np.random.Generator:
    """Derive an independent stream from the master seed.

    Split rule: ``SeedSequence(seed, spawn_key=key)``. Every worker/user gets
    its own key, so the draws never depend on the execution schedule.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def normalize_propensities(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    return raw / raw.sum()


def sample_propensities(rng: np.random.Generator) -> np.ndarray:
    while True:
        raw = rng.uniform(0.0, 1.0, size=N_CATEGORIES)
        if raw.sum() > 0:
            return normalize_propensities(raw)


class EmbeddingDraw(NamedTuple):
    raw: np.ndarray  # clamped component draws, shape (10, 2)
    propensities: np.ndarray  # shape (10,)
    scaled: np.ndarray  # raw * propensity, pre-normalization, shape (20,)
    embedding: np.ndarray  # unit norm, shape (20,)


def draw_embedding(rng: np.random.Generator, noise_std: float = 0.4) -> EmbeddingDraw:
    """Run the generation pipeline and keep every intermediate.

    Order: propensities, component draws clamped to [0, 1], scale each block
    by its propensity, normalize. An all-zero outcome is redrawn from scratch.
    """
    while True:
        props = sample_propensities(rng)
        raw = np.clip(rng.normal(0.0, noise_std, size=(N_CATEGORIES, BLOCK_SIZE)), 0.0, 1.0)
        scaled = (raw * props[:, None]).reshape(EMBED_DIM)
        norm = np.sqrt(np.dot(scaled, scaled))
        if norm > 0:
            return EmbeddingDraw(raw, props, scaled, scaled / norm)


def sample_embedding(rng: np.random.Generator, noise_std: float = 0.4) -> np.ndarray:
    return draw_embedding(rng, noise_std).embedding


def sample_population(n: int, rng: np.random.Generator, noise_std: float = 0.4) -> np.ndarray:
    """Generate ``n`` embeddings sequentially from one stream, shape (n, 20)."""
    out = np.empty((n, EMBED_DIM))
    for k in range(n):
        out[k] = sample_embedding(rng, noise_std)
    return out


def block_norms(e: np.ndarray) -> np.ndarray:
    """Per-category block norms; works on a single vector or a (n, 20) matrix."""
    e = np.asarray(e, dtype=float)
    blocks = e.reshape(e.shape[:-1] + (N_CATEGORIES, BLOCK_SIZE))
    return np.sqrt(np.sum(blocks * blocks, axis=-1))


def main_category(e: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(block_norms(e)))


def main_categories(E: np.ndarray) -> np.ndarray:
    return np.argmax(block_norms(E), axis=-1)


def inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))


def renormalize(e: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    norm = np.sqrt(np.dot(e, e))
    if not norm > 0:
        raise InvalidStateError("cannot renormalize a zero vector")
    return e / norm


def check_dimension(e: np.ndarray) -> None:
    if np.shape(e)[-1] != EMBED_DIM:
        raise InvalidStateError(f"expected embedding dimension {EMBED_DIM}, got {np.shape(e)[-1]}")
