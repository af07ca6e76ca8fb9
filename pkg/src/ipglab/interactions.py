"""Columnar interaction log shared by the simulator harness and the trainer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COLLECTION = 0
GUIDANCE = 1
PHASE_NAMES = {COLLECTION: "collection", GUIDANCE: "guidance"}
PHASE_CODES = {v: k for k, v in PHASE_NAMES.items()}


@dataclass
class InteractionLog:
    user: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    phase: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))
    round: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    item: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    clicked: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))

    def __len__(self):
        return len(self.user)

    @classmethod
    def from_rounds(cls, chunks) -> "InteractionLog":
        """Build from an iterable of ``(phase, round, users, items, clicked)`` chunks."""
        cols = {k: [] for k in ("user", "phase", "round", "item", "clicked")}
        for phase, rnd, users, items, clicked in chunks:
            users = np.asarray(users, dtype=np.int64)
            cols["user"].append(users)
            cols["phase"].append(np.full(len(users), phase, dtype=np.int8))
            cols["round"].append(np.full(len(users), rnd, dtype=np.int64))
            cols["item"].append(np.asarray(items, dtype=np.int64))
            cols["clicked"].append(np.asarray(clicked, dtype=bool))
        if not cols["user"]:
            return cls()
        return cls(**{k: np.concatenate(v) for k, v in cols.items()})

    def select(self, mask) -> "InteractionLog":
        mask = np.asarray(mask)
        return InteractionLog(self.user[mask], self.phase[mask], self.round[mask],
                              self.item[mask], self.clicked[mask])

    def chronological_order(self) -> np.ndarray:
        """Indices sorted by (user, phase, round), stable."""
        return np.lexsort((self.round, self.phase, self.user))

    def clicked_histories(self, n_users: int) -> list:
        """Per-user clicked item ids in chronological order."""
        order = self.chronological_order()
        hist = [[] for _ in range(n_users)]
        for u, i, c in zip(self.user[order], self.item[order], self.clicked[order]):
            if c:
                hist[u].append(int(i))
        return hist

    def __eq__(self, other):
        if not isinstance(other, InteractionLog):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("user", "phase", "round", "item", "clicked"))
