"""Plain-text file formats.

Every file starts with comment lines (``# ...``) naming the format, its
version, the master seed and the config hash of the run that produced it.
Floats are written with ``repr`` (shortest exact round-trip), so every
save/load cycle is lossless. Columns are tab-separated.
"""
from __future__ import annotations

from collections import deque
from pathlib import Path

import numpy as np

from .harness import EpisodeRecord, EpisodeSummary, GuidanceReport
from .interactions import PHASE_CODES, PHASE_NAMES, InteractionLog
from .recsys import RecommenderModel
from .simenv import SimSnapshot, SimUserState

MATRIX_VERSION = 1
LOG_VERSION = 1
SNAPSHOT_VERSION = 1
MODEL_VERSION = 1
EPISODES_VERSION = 1


class FormatError(ValueError):
    pass


def _f(x) -> str:
    return repr(float(x))


def header(kind: str, version: int, seed=None, config_hash=None, **extra) -> str:
    parts = [f"# ipglab {kind} v{version}"]
    meta = []
    if seed is not None:
        meta.append(f"seed={seed}")
    if config_hash is not None:
        meta.append(f"config_hash={config_hash}")
    meta.extend(f"{k}={v}" for k, v in extra.items())
    if meta:
        parts.append("# " + " ".join(meta))
    return "\n".join(parts) + "\n"


def _read(path, kind: str, version: int):
    """Return (metadata dict, data lines) after checking the format line."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(f"# ipglab {kind} v"):
        raise FormatError(f"{path}: not an ipglab {kind} file")
    found = lines[0].rsplit("v", 1)[1]
    if found != str(version):
        raise FormatError(f"{path}: {kind} format version {found}, expected {version}")
    meta, data = {}, []
    for line in lines[1:]:
        if line.startswith("#"):
            for tok in line[1:].split():
                k, sep, v = tok.partition("=")
                if sep:
                    meta[k] = v
        elif line:
            data.append(line)
    return meta, data


# --- embedding matrices -----------------------------------------------------

def save_matrix(path, matrix: np.ndarray, kind: str = "matrix", **meta) -> None:
    """Row = entity id, then one column per component."""
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w") as fh:
        fh.write(header(kind, MATRIX_VERSION, rows=matrix.shape[0], cols=matrix.shape[1], **meta))
        for i, row in enumerate(matrix):
            fh.write(str(i) + "\t" + "\t".join(map(_f, row)) + "\n")


def load_matrix(path, kind: str = "matrix") -> np.ndarray:
    meta, data = _read(path, kind, MATRIX_VERSION)
    out = np.empty((int(meta["rows"]), int(meta["cols"])))
    for k, line in enumerate(data):
        cols = line.split("\t")
        if int(cols[0]) != k:
            raise FormatError(f"{path}: row ids must be 0..n-1 in order")
        out[k] = [float(x) for x in cols[1:]]
    return out


# --- interaction logs -------------------------------------------------------

def save_log(path, log: InteractionLog, **meta) -> None:
    with open(path, "w") as fh:
        fh.write(header("log", LOG_VERSION, **meta))
        fh.write("user\tphase\tround\titem\tclicked\n")
        for u, p, r, i, c in zip(log.user.tolist(), log.phase.tolist(), log.round.tolist(),
                                 log.item.tolist(), log.clicked.tolist()):
            fh.write(f"{u}\t{PHASE_NAMES[p]}\t{r}\t{i}\t{int(c)}\n")


def load_log(path) -> InteractionLog:
    _, data = _read(path, "log", LOG_VERSION)
    rows = [line.split("\t") for line in data[1:]]
    if not rows:
        return InteractionLog()
    u, p, r, i, c = zip(*rows)
    return InteractionLog(np.array(u, dtype=np.int64),
                          np.array([PHASE_CODES[x] for x in p], dtype=np.int8),
                          np.array(r, dtype=np.int64), np.array(i, dtype=np.int64),
                          np.array([x == "1" for x in c], dtype=bool))


# --- simulator snapshots ----------------------------------------------------

def save_snapshot(path, snap: SimSnapshot, **meta) -> None:
    """Record types: ``E user v0..v19``, ``W user item category`` (oldest first),
    ``C user item count``."""
    with open(path, "w") as fh:
        fh.write(header("snapshot", SNAPSHOT_VERSION, users=len(snap), **meta))
        for u, st in enumerate(snap.users):
            fh.write(f"E\t{u}\t" + "\t".join(map(_f, st.embedding)) + "\n")
            for item, cat in st.recent_clicks:
                fh.write(f"W\t{u}\t{item}\t{cat}\n")
            for item, n in sorted(st.click_counts.items()):
                fh.write(f"C\t{u}\t{item}\t{n}\n")


def load_snapshot(path) -> SimSnapshot:
    meta, data = _read(path, "snapshot", SNAPSHOT_VERSION)
    n = int(meta["users"])
    emb = [None] * n
    windows = [deque() for _ in range(n)]
    counts = [{} for _ in range(n)]
    for line in data:
        cols = line.split("\t")
        u = int(cols[1])
        if cols[0] == "E":
            emb[u] = np.array([float(x) for x in cols[2:]])
        elif cols[0] == "W":
            windows[u].append((int(cols[2]), int(cols[3])))
        elif cols[0] == "C":
            counts[u][int(cols[2])] = int(cols[3])
        else:
            raise FormatError(f"{path}: unknown record type {cols[0]!r}")
    if any(e is None for e in emb):
        raise FormatError(f"{path}: missing user embedding rows")
    return SimSnapshot(tuple(SimUserState(e, w, c) for e, w, c in zip(emb, windows, counts)))


# --- recommender model ------------------------------------------------------

def save_model(path, model: RecommenderModel, **meta) -> None:
    with open(path, "w") as fh:
        fh.write(header("model", MODEL_VERSION, **meta))
        fh.write(f"encoder_decay\t{_f(model.encoder_decay)}\n")
        fh.write(f"head_scale\t{_f(model.head_scale)}\n")
        fh.write(f"head_bias\t{_f(model.head_bias)}\n")
        fh.write(f"train_seed\t{model.train_seed}\n")
        n, d = model.item_table.shape
        fh.write(f"item_table\t{n}\t{d}\n")
        for row in model.item_table:
            fh.write("\t".join(map(_f, row)) + "\n")


def load_model(path) -> RecommenderModel:
    _, data = _read(path, "model", MODEL_VERSION)
    scalars = {}
    k = 0
    while not data[k].startswith("item_table"):
        key, val = data[k].split("\t")
        scalars[key] = val
        k += 1
    _, n, d = data[k].split("\t")
    table = np.array([[float(x) for x in line.split("\t")] for line in data[k + 1:k + 1 + int(n)]])
    if table.shape != (int(n), int(d)):
        raise FormatError(f"{path}: item table shape mismatch")
    return RecommenderModel(table, float(scalars["head_scale"]), float(scalars["head_bias"]),
                            float(scalars["encoder_decay"]), int(scalars["train_seed"]))


# --- guidance episodes and reports -------------------------------------------

EPISODE_COLUMNS = "gamma\tpolicy\ttarget_id\tround\tn_users\tclicks\tgain\n"


def save_episodes(path, summaries, **meta) -> None:
    """One row per (gamma, policy, target, round); round 0 is the episode start."""
    with open(path, "w") as fh:
        fh.write(header("episodes", EPISODES_VERSION, **meta))
        fh.write(EPISODE_COLUMNS)
        for s in summaries:
            for k, gain in enumerate(s.gain):
                clicks = s.clicks[k - 1] if k else 0
                fh.write(f"{_f(s.gamma)}\t{s.policy}\t{s.target_id}\t{k}\t{s.n_users}\t{clicks}\t{_f(gain)}\n")


def load_episodes(path) -> list:
    _, data = _read(path, "episodes", EPISODES_VERSION)
    groups: dict = {}
    for line in data[1:]:
        g, p, t, k, n, c, gain = line.split("\t")
        key = (float(g), p, int(t))
        groups.setdefault(key, []).append((int(k), int(n), int(c), float(gain)))
    out = []
    for (g, p, t), rows in groups.items():
        rows.sort()
        out.append(EpisodeSummary(g, p, t, rows[0][1], tuple(r[2] for r in rows[1:]),
                                  tuple(r[3] for r in rows)))
    return out


def save_report(path, report: GuidanceReport, aggregate: bool = False, **meta) -> None:
    rows = report.aggregate if aggregate else report.rows
    with open(path, "w") as fh:
        fh.write(header("aggregate" if aggregate else "report", 1, **meta))
        fh.write("gamma\tpolicy\ttarget_id\tK\thr\tioi\n")
        for r in rows:
            target = "mean" if aggregate else str(r.target_id)
            fh.write(f"{_f(r.gamma)}\t{r.policy}\t{target}\t{r.K}\t{_f(r.hr)}\t{_f(r.ioi)}\n")


def load_report_rows(path, aggregate: bool = False) -> list:
    _, data = _read(path, "aggregate" if aggregate else "report", 1)
    out = []
    for line in data[1:]:
        g, p, t, K, hr, ioi = line.split("\t")
        out.append((float(g), p, -1 if t == "mean" else int(t), int(K), float(hr), float(ioi)))
    return out


def save_trajectory(path, record: EpisodeRecord, user: int, catalog_embeddings: np.ndarray,
                    **meta) -> None:
    """Case-study dump for one user: one row per guidance round.

    The comment header carries the target embedding and the user's true
    embedding at the start of the episode.
    """
    target = catalog_embeddings[record.target_id]
    d = target.shape[0]
    with open(path, "w") as fh:
        fh.write(header("trajectory", 1, user=user, target=record.target_id, policy=record.policy,
                        gamma=_f(record.gamma), **meta))
        fh.write("# target_embedding=" + ",".join(map(_f, target)) + "\n")
        fh.write("# user_embedding_start=" + ",".join(map(_f, record.true_embeddings[user, 0])) + "\n")
        cols = ["round", "item_id", "clicked"] + [f"u{k}" for k in range(d)] + [f"i{k}" for k in range(d)]
        fh.write("\t".join(cols) + "\n")
        for k in range(record.rounds):
            item = int(record.items[user, k])
            vals = [str(k + 1), str(item), str(int(record.clicked[user, k]))]
            vals += [_f(x) for x in record.true_embeddings[user, k + 1]]
            vals += [_f(x) for x in catalog_embeddings[item]]
            fh.write("\t".join(vals) + "\n")


def load_trajectory(path) -> dict:
    meta, data = _read(path, "trajectory", 1)
    cols = data[0].split("\t")
    rows = [line.split("\t") for line in data[1:]]
    d = sum(c.startswith("u") for c in cols)
    return {
        "meta": meta,
        "target_embedding": np.array([float(x) for x in meta["target_embedding"].split(",")]),
        "user_embedding_start": np.array([float(x) for x in meta["user_embedding_start"].split(",")]),
        "items": np.array([int(r[1]) for r in rows]),
        "clicked": np.array([r[2] == "1" for r in rows]),
        "user_embeddings": np.array([[float(x) for x in r[3:3 + d]] for r in rows]),
        "item_embeddings": np.array([[float(x) for x in r[3 + d:3 + 2 * d]] for r in rows]),
    }
