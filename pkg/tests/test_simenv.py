import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipglab import simenv
from ipglab.embedspace import sample_population, spawn_stream
from ipglab.simenv import Catalog, SimConfig, SimUserState


def basis(k, scale=1.0):
    e = np.zeros(20)
    e[k] = scale
    return e


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


@pytest.fixture
def catalog():
    return Catalog(sample_population(30, spawn_stream(0, 0)))


def test_config_defaults_and_validation():
    c = SimConfig()
    assert (c.b, c.gamma, c.boredom_window, c.boredom_trigger, c.boredom_decay, c.item_boredom_coeff) == \
        (0.8, 0.8, 10, 5, 0.8, 0.1)
    with pytest.raises(ValueError):
        SimConfig(gamma=1.0)
    with pytest.raises(ValueError):
        SimConfig(boredom_trigger=11)
    with pytest.raises(ValueError):
        SimConfig(w=float("nan"))
    assert SimConfig().with_gamma(0.6).gamma == 0.6


def test_click_probability_at_bias():
    user = SimUserState(basis(0, 0.8))
    assert simenv.click_probability(user, basis(0), 0, SimConfig()) == 0.5


def test_click_probability_examples():
    cfg = SimConfig(w=10.0)
    user = SimUserState(basis(0))
    assert simenv.click_probability(user, basis(0), 0, cfg) == pytest.approx(sigmoid(2.0), abs=1e-12)
    assert sigmoid(2.0) == pytest.approx(0.88079, abs=1e-5)
    assert simenv.click_probability(user, basis(0), 3, cfg) == pytest.approx(sigmoid(-1.0), abs=1e-12)
    assert sigmoid(-1.0) == pytest.approx(0.26894, abs=1e-5)


def test_vectorized_probabilities_match_scalar(catalog):
    user = SimUserState(catalog.embeddings[3], click_counts={3: 2, 7: 1})
    cfg = SimConfig(w=10.0)
    vec = simenv.click_probabilities(user, catalog.embeddings, cfg)
    for i in range(len(catalog)):
        assert vec[i] == pytest.approx(simenv.click_probability(user, catalog[i], user.n_clicks(i), cfg), rel=1e-12)


def test_sample_click_edges():
    rng = np.random.default_rng(0)
    assert not any(simenv.sample_click(0.0, rng) for _ in range(1000))
    assert all(simenv.sample_click(1.0, rng) for _ in range(1000))


def test_sample_click_rate():
    rng = np.random.default_rng(1)
    rate = np.mean([simenv.sample_click(0.3, rng) for _ in range(100_000)])
    assert abs(rate - 0.3) <= 0.01


def test_preference_evolution_examples():
    user = SimUserState(basis(0))
    simenv.apply_preference_evolution(user, basis(1), SimConfig(gamma=0.8))
    np.testing.assert_allclose(user.embedding, 0.8 * basis(0) + 0.2 * basis(1), atol=1e-15)

    e = np.random.default_rng(2).random(20)
    user = SimUserState(e)
    simenv.apply_preference_evolution(user, e, SimConfig())
    np.testing.assert_allclose(user.embedding, e, rtol=1e-15)


def test_preference_evolution_low_gamma():
    user = SimUserState(basis(0))
    simenv.apply_preference_evolution(user, basis(1), SimConfig(gamma=0.6))
    np.testing.assert_allclose(user.embedding, 0.6 * basis(0) + 0.4 * basis(1), atol=1e-15)


def window(cats):
    from collections import deque
    return deque((k, c) for k, c in enumerate(cats))


def test_category_boredom_two_categories():
    e = np.full(20, 1 / math.sqrt(20))
    user = SimUserState(e, window([2] * 5 + [4] * 5))
    assert simenv.apply_category_boredom(user, SimConfig())
    expected = e.copy()
    expected[4:6] *= 0.8
    expected[8:10] *= 0.8
    expected /= np.linalg.norm(expected)
    np.testing.assert_allclose(user.embedding, expected, atol=1e-15)


def test_category_boredom_decay_arithmetic():
    e = np.zeros(20)
    e[0] = 0.6  # block 0 = (0.6, 0)
    e[2] = 0.8  # remaining mass, norm 0.8
    user = SimUserState(e, window([0] * 5))
    assert simenv.apply_category_boredom(user, SimConfig())
    norm = math.sqrt(0.48 ** 2 + 0.8 ** 2)
    assert norm == pytest.approx(0.93295, abs=1e-5)
    assert user.embedding[0] == pytest.approx(0.48 / norm, abs=1e-12)
    assert user.embedding[0] == pytest.approx(0.5145, abs=1e-4)
    assert user.embedding[1] == 0.0
    assert np.linalg.norm(user.embedding) == pytest.approx(1.0, abs=1e-12)


def test_category_boredom_not_triggered():
    e = np.random.default_rng(3).random(20)
    user = SimUserState(e, window([0, 0, 0, 0, 1, 1, 1, 1, 2, 3]))
    assert not simenv.apply_category_boredom(user, SimConfig())
    assert user.embedding.tobytes() == e.tobytes()


def test_category_boredom_zero_norm():
    user = SimUserState(basis(0), window([0] * 5))
    with pytest.raises(simenv.InvalidStateError):
        simenv.apply_category_boredom(user, SimConfig(boredom_decay=0.0))


def test_step_forced_no_click(catalog):
    cfg = SimConfig(w=1000.0, b=10.0)  # probability underflows to exactly 0
    user = SimUserState(catalog.embeddings[0], window([1, 2]), {4: 1})
    before = simenv.snapshot_bytes(simenv.snapshot([user]))
    fb = simenv.step(user, 0, catalog, cfg, np.random.default_rng(0))
    assert fb.click_probability == 0.0 and not fb.clicked
    assert simenv.snapshot_bytes(simenv.snapshot([user])) == before


def test_step_forced_click_on_own_embedding(catalog):
    cfg = SimConfig(w=1000.0, b=-10.0)  # probability rounds to exactly 1
    item = 5
    user = SimUserState(catalog.embeddings[item])
    fb = simenv.step(user, item, catalog, cfg, np.random.default_rng(0))
    assert fb.clicked and user.n_clicks(item) == 1
    np.testing.assert_allclose(user.embedding, catalog.embeddings[item], rtol=1e-15)
    assert list(user.recent_clicks) == [(item, int(catalog.categories[item]))]


def test_step_boredom_through_window(catalog):
    cfg = SimConfig(w=1000.0, b=-10.0)
    item = 5
    user = SimUserState(catalog.embeddings[item])
    for _ in range(5):
        simenv.step(user, item, catalog, cfg, np.random.default_rng(0))
    c = catalog.categories[item]
    # fifth click fills the quota: block c is damped relative to the item
    assert np.linalg.norm(user.embedding[2 * c:2 * c + 2]) < np.linalg.norm(catalog.embeddings[item][2 * c:2 * c + 2])
    assert np.linalg.norm(user.embedding) == pytest.approx(1.0, abs=1e-9)


def test_repeated_clicks_lower_probability(catalog):
    cfg = SimConfig(w=1000.0, b=-10.0)
    user = SimUserState(catalog.embeddings[2])
    probe = SimConfig(w=10.0)
    probs = []
    e_u = user.embedding.copy()
    for k in range(6):
        probs.append(simenv.click_probability(SimUserState(e_u), catalog[9], k, probe))
    assert all(a > b for a, b in zip(probs, probs[1:]))
    for _ in range(4):
        simenv.step(user, 9, catalog, cfg, np.random.default_rng(0))
    assert user.n_clicks(9) == 4


def test_unknown_item(catalog):
    with pytest.raises(KeyError):
        simenv.step(SimUserState(basis(0)), 999, catalog, SimConfig(), np.random.default_rng(0))


def test_snapshot_idempotent(catalog):
    users = [SimUserState(e) for e in catalog.embeddings[:5]]
    rng = np.random.default_rng(0)
    for _ in range(40):
        for u in users:
            simenv.step(u, int(rng.integers(len(catalog))), catalog, SimConfig(w=5.0), rng)
    snap = simenv.snapshot(users)
    again = simenv.snapshot(simenv.restore(snap))
    assert simenv.snapshot_bytes(snap) == simenv.snapshot_bytes(again)


def test_snapshot_isolation_and_replay(catalog):
    users = [SimUserState(e) for e in catalog.embeddings[:5]]
    snap = simenv.snapshot(users)
    cfg = SimConfig(w=5.0)

    def run(seed):
        pop = simenv.restore(snap)
        rng = np.random.default_rng(seed)
        out = [simenv.step(u, k, catalog, cfg, rng) for k in range(10) for u in pop]
        return [(f.clicked, f.click_probability, f.user_embedding_after.tobytes()) for f in out]

    a = run(1)
    run(2)  # must not leak into the snapshot
    assert run(1) == a


# --- properties ------------------------------------------------------------

unit = st.floats(0.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(-1, 1), st.integers(0, 50), st.floats(0.1, 50))
def test_probability_monotone_in_boredom(x, n, w):
    cfg = SimConfig(w=w)
    user = SimUserState(basis(0, x))
    p0 = simenv.click_probability(user, basis(0), n, cfg)
    p1 = simenv.click_probability(user, basis(0), n + 1, cfg)
    assert 0.0 <= p1 <= p0 <= 1.0
    if 0.0 < p0 < 1.0 and w * cfg.item_boredom_coeff > 1e-6:
        assert p1 < p0 or p0 < 1e-300


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=20, max_size=20), st.lists(unit, min_size=20, max_size=20),
       st.floats(0.05, 0.95))
def test_evolution_on_segment(eu, ei, gamma):
    eu, ei = np.array(eu), np.array(ei)
    user = SimUserState(eu)
    simenv.apply_preference_evolution(user, ei, SimConfig(gamma=gamma))
    new = user.embedding
    np.testing.assert_allclose(new, eu + (1 - gamma) * (ei - eu), atol=1e-12)
    assert np.linalg.norm(new) <= max(np.linalg.norm(eu), np.linalg.norm(ei)) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 29), min_size=1, max_size=40), st.integers(0, 2**31))
def test_window_and_norm_invariants(items, seed):
    catalog = Catalog(sample_population(30, spawn_stream(0, 0)))
    cfg = SimConfig(w=1000.0, b=-10.0)  # every step clicks
    user = SimUserState(catalog.embeddings[seed % 30])
    rng = np.random.default_rng(seed)
    for i in items:
        before = len(user.recent_clicks)
        simenv.step(user, i, catalog, cfg, rng)
        assert len(user.recent_clicks) <= cfg.boredom_window
        assert len(user.recent_clicks) >= min(before, cfg.boredom_window)
        assert all(n >= 0 for n in user.click_counts.values())
    assert sum(user.click_counts.values()) == len(items)
