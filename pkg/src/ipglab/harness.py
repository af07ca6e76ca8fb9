"""Two-phase protocol: log collection, then guidance episodes toward sampled targets.

Random streams (all derived from the master seed, see ``spawn_stream``):

    (seed, 0)                      item embeddings
    (seed, 1)                      user embeddings
    (seed, 2, user)                log collection, one stream per user
    (seed, 3, gamma_key, target, user)
                                   guidance episode, shared by all policies so
                                   comparisons between policies are paired
    (seed, 4)                      target sampling

Users never interact, so an episode's outcome for one user depends only on
that user's stream and state.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import recsys, simenv
from .config import ExperimentConfig
from .embedspace import sample_population, spawn_stream
from .guidance import Policy, PolicyKind, SelectionContext, select_batch
from .interactions import COLLECTION, InteractionLog
from .recsys import RecommenderModel
from .simenv import Catalog, SimConfig, SimSnapshot

log = logging.getLogger(__name__)


@dataclass
class World:
    catalog: Catalog
    user_embeddings: np.ndarray

    def new_users(self) -> list:
        return [simenv.new_user(e) for e in self.user_embeddings]


def generate_world(n_users: int, n_items: int, seed: int, noise_std: float = 0.4) -> World:
    items = sample_population(n_items, spawn_stream(seed, 0), noise_std)
    users = sample_population(n_users, spawn_stream(seed, 1), noise_std)
    return World(Catalog(items), users)


def run_log_collection(users: list, catalog: Catalog, cfg: SimConfig, rounds: int = 100,
                       oracle_fraction: float = 0.3, seed: int = 0) -> InteractionLog:
    """Mixed oracle/random exposure; mutates ``users`` in place.

    The oracle-or-random coin is flipped per (user, round).
    """
    rngs = [spawn_stream(seed, 2, u) for u in range(len(users))]
    ids = np.arange(len(users))
    oracle, random = Policy(PolicyKind.ORACLE), Policy(PolicyKind.RANDOM)
    chunks = []
    for rnd in range(1, rounds + 1):
        use_oracle = np.array([rng.random() < oracle_fraction for rng in rngs], dtype=bool)
        items = np.empty(len(users), dtype=np.int64)
        o = np.flatnonzero(use_oracle)
        r = np.flatnonzero(~use_oracle)
        if len(o):
            items[o] = select_batch(oracle, SelectionContext(users=[users[u] for u in o], sim_cfg=cfg), catalog)
        if len(r):
            items[r] = select_batch(random, SelectionContext(rngs=[rngs[u] for u in r]), catalog)
        clicked = np.array([simenv.step(users[u], items[u], catalog, cfg, rngs[u]).clicked
                            for u in ids], dtype=bool)
        chunks.append((COLLECTION, rnd, ids, items, clicked))
    return InteractionLog.from_rounds(chunks)


@dataclass
class EpisodeRecord:
    """Per-user, per-round trace of one guidance episode.

    Index 0 of the embedding arrays is the state after restore, before round 1;
    index k is the state after round k's interaction.
    """
    policy: str
    target_id: int
    gamma: float
    items: np.ndarray  # (n_users, rounds)
    clicked: np.ndarray  # (n_users, rounds) bool
    true_embeddings: np.ndarray  # (n_users, rounds + 1, d)
    reps: np.ndarray  # (n_users, rounds + 1, d)

    @property
    def rounds(self) -> int:
        return self.items.shape[1]

    @property
    def n_users(self) -> int:
        return self.items.shape[0]


def gamma_key(gamma: float) -> int:
    return int(round(gamma * 1_000_000))


def run_guidance(snap: SimSnapshot, catalog: Catalog, model: RecommenderModel, policy: Policy,
                 target_id: int, histories: list, cfg: SimConfig, rounds: int = 20,
                 seed: int = 0) -> EpisodeRecord:
    """Restore the snapshot and guide every user toward ``target_id``.

    ``histories`` holds each user's clicked items from the collection phase;
    the model-side representation is the encoder over that history plus the
    clicks made during the episode. The model itself stays frozen.
    """
    target_id = catalog.check(target_id)
    users = simenv.restore(snap)
    n = len(users)
    # streams keyed by (gamma, user) only: shared across targets and policies
    rngs = [spawn_stream(seed, 3, gamma_key(cfg.gamma), u) for u in range(n)]
    prefixes = [list(h) for h in histories]
    reps = np.stack([recsys.encode(p, model) for p in prefixes]) if n else np.empty((0, model.item_table.shape[1]))

    items = np.empty((n, rounds), dtype=np.int64)
    clicked = np.zeros((n, rounds), dtype=bool)
    true_emb = np.empty((n, rounds + 1, catalog.embeddings.shape[1]))
    rep_hist = np.empty((n, rounds + 1, reps.shape[1]))
    true_emb[:, 0] = simenv.embeddings_of(users)
    rep_hist[:, 0] = reps

    for k in range(rounds):
        ctx = SelectionContext(model=model, reps=reps, prefixes=prefixes, target_id=target_id,
                               users=users, sim_cfg=cfg, rngs=rngs)
        items[:, k] = select_batch(policy, ctx, catalog)
        for u in range(n):
            fb = simenv.step(users[u], items[u, k], catalog, cfg, rngs[u])
            if fb.clicked:
                clicked[u, k] = True
                i = int(items[u, k])
                if prefixes[u]:
                    reps[u] = recsys.update_user_rep(reps[u], i, model)
                else:
                    reps[u] = model.embedding(i)
                prefixes[u].append(i)
            true_emb[u, k + 1] = fb.user_embedding_after
        rep_hist[:, k + 1] = reps
    return EpisodeRecord(policy.name, target_id, cfg.gamma, items, clicked, true_emb, rep_hist)


def _check_k(records: EpisodeRecord, K: int):
    if not 1 <= K <= records.rounds:
        raise ValueError(f"K={K} outside 1..{records.rounds}")


def hit_ratio(records: EpisodeRecord, K: int) -> float:
    _check_k(records, K)
    return float(records.clicked[:, :K].sum() / (K * records.n_users))


def target_gain(records: EpisodeRecord, target_embedding: np.ndarray) -> np.ndarray:
    """Mean over users of the true target affinity gain since the episode start, per round (0..R)."""
    aff = records.true_embeddings @ target_embedding
    return (aff - aff[:, :1]).mean(axis=0)


def ioi(records: EpisodeRecord, target_id: int, K: int, catalog: Catalog) -> float:
    _check_k(records, K)
    return float(target_gain(records, catalog[target_id])[K])


@dataclass(frozen=True)
class EpisodeSummary:
    """Per-round aggregate of an episode: enough to recompute HR@K and IoI@K."""
    gamma: float
    policy: str
    target_id: int
    n_users: int
    clicks: tuple  # clicks per round, rounds 1..R
    gain: tuple  # mean target-affinity gain, rounds 0..R

    def hit_ratio(self, K: int) -> float:
        if not 1 <= K <= len(self.clicks):
            raise ValueError(f"K={K} outside 1..{len(self.clicks)}")
        return sum(self.clicks[:K]) / (K * self.n_users)

    def ioi(self, K: int) -> float:
        if not 1 <= K <= len(self.clicks):
            raise ValueError(f"K={K} outside 1..{len(self.clicks)}")
        return self.gain[K]


def summarize(records: EpisodeRecord, catalog: Catalog) -> EpisodeSummary:
    return EpisodeSummary(records.gamma, records.policy, records.target_id, records.n_users,
                          tuple(int(c) for c in records.clicked.sum(axis=0)),
                          tuple(float(g) for g in target_gain(records, catalog[records.target_id])))


@dataclass(frozen=True)
class ReportRow:
    gamma: float
    policy: str
    target_id: int  # -1 on aggregate rows
    K: int
    hr: float
    ioi: float


@dataclass
class GuidanceReport:
    rows: list
    aggregate: list
    config: ExperimentConfig | None = None
    targets: tuple = ()

    def mean(self, policy: str, K: int, gamma: float | None = None, metric: str = "ioi") -> float:
        for row in self.aggregate:
            if row.policy == policy and row.K == K and (gamma is None or row.gamma == gamma):
                return getattr(row, metric)
        raise KeyError((policy, K, gamma))


def build_report(summaries: list, k_values, config=None, targets=()) -> GuidanceReport:
    rows = [ReportRow(s.gamma, s.policy, s.target_id, K, s.hit_ratio(K), s.ioi(K))
            for s in summaries for K in k_values]
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.gamma, r.policy, r.K), []).append(r)
    aggregate = [ReportRow(g, p, -1, K, float(np.mean([r.hr for r in rs])),
                           float(np.mean([r.ioi for r in rs])))
                 for (g, p, K), rs in groups.items()]
    return GuidanceReport(rows, aggregate, config, tuple(targets))


def sample_targets(n_items: int, n_targets: int, seed: int) -> list:
    rng = spawn_stream(seed, 4)
    return [int(t) for t in rng.choice(n_items, size=n_targets, replace=False)]


@dataclass
class Prepared:
    """Everything produced before the guidance phase."""
    world: World
    log: InteractionLog
    snapshot: SimSnapshot
    model: RecommenderModel
    train_loss: float
    histories: list = field(default_factory=list)


def collect(cfg: ExperimentConfig, world: World | None = None):
    world = world or generate_world(cfg.n_users, cfg.n_items, cfg.seed, cfg.embed_noise_std)
    users = world.new_users()
    logs = run_log_collection(users, world.catalog, cfg.sim_config(), cfg.collection_rounds,
                              cfg.oracle_fraction, cfg.seed)
    return world, logs, simenv.snapshot(users)


def prepare(cfg: ExperimentConfig) -> Prepared:
    world, logs, snap = collect(cfg)
    result = recsys.train(logs, cfg.train_config(), cfg.n_items)
    log.info("trained recommender: final loss %.4f", result.final_loss)
    return Prepared(world, logs, snap, result.model, result.final_loss,
                    logs.clicked_histories(cfg.n_users))


# worker-side state for process pools; set once per worker by the initializer
_EPISODE_STATE: dict = {}


def _init_worker(state):
    _EPISODE_STATE.clear()
    _EPISODE_STATE.update(state)


def _run_task(task):
    gamma, policy, target = task
    s = _EPISODE_STATE
    rec = run_guidance(s["snapshot"], s["catalog"], s["model"], policy, target, s["histories"],
                       s["cfg"].sim_config(gamma), s["cfg"].guidance_rounds, s["cfg"].seed)
    return summarize(rec, s["catalog"])


def guidance_tasks(cfg: ExperimentConfig, targets) -> list:
    return [(g, p, t) for g in cfg.gammas for t in targets for p in cfg.policy_list()]


def run_episodes(cfg: ExperimentConfig, prep: Prepared, targets, workers: int | None = None) -> list:
    """Run every (gamma, target, policy) episode; results come back in task order."""
    state = {"snapshot": prep.snapshot, "catalog": prep.world.catalog, "model": prep.model,
             "histories": prep.histories, "cfg": cfg}
    tasks = guidance_tasks(cfg, targets)
    workers = cfg.workers if workers is None else workers
    if workers <= 1:
        _init_worker(state)
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(state,)) as pool:
        return list(pool.map(_run_task, tasks))


def run_experiment(cfg: ExperimentConfig, workers: int | None = None,
                   prep: Prepared | None = None) -> GuidanceReport:
    """World -> logs -> model -> snapshot -> every (gamma, target, policy) episode -> report."""
    prep = prep or prepare(cfg)
    targets = sample_targets(cfg.n_items, cfg.n_targets, cfg.seed)
    summaries = run_episodes(cfg, prep, targets, workers)
    return build_report(summaries, cfg.k_values, cfg, targets)


def mean_click_probability(users: list, catalog: Catalog, cfg: SimConfig) -> float:
    """Exhaustive average of the true click probability over users x catalog."""
    return float(np.mean([simenv.click_probabilities(u, catalog.embeddings, cfg) for u in users]))
