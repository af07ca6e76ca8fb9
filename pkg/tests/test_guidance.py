import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from ipglab import guidance, recsys
from ipglab.embedspace import sample_population, spawn_stream
from ipglab.guidance import Policy, PolicyKind, SelectionContext
from ipglab.recsys import RecommenderModel
from ipglab.simenv import Catalog, SimConfig, SimUserState


def make(seed, n_items=15, decay=0.8):
    rng = np.random.default_rng(seed)
    model = RecommenderModel(rng.normal(size=(n_items, 20)) / 3, float(rng.uniform(0.5, 3)),
                             float(rng.normal()), decay)
    catalog = Catalog(sample_population(n_items, spawn_stream(seed, 0)))
    return model, catalog, rng


def ctx_for(model, prefixes, target, rngs=None):
    reps = np.stack([recsys.encode(p, model) for p in prefixes])
    return SelectionContext(model=model, reps=reps, prefixes=prefixes, target_id=target, rngs=rngs)


def test_policy_names_and_parse():
    assert Policy.parse("heuristic:2.0").name == "heuristic:2"
    assert Policy.parse("heuristic", alpha=0.5).alpha == 0.5
    assert Policy.parse("IPG").kind is PolicyKind.IPG
    with pytest.raises(ValueError):
        Policy.parse("sasrec")
    with pytest.raises(ValueError):
        Policy(PolicyKind.HEURISTIC, alpha=-1.0)


def test_guiding_score_examples():
    model = RecommenderModel(np.eye(20)[:4].copy())
    # item equal to target, rep orthogonal to both: full gain
    assert guidance.guiding_score(np.zeros(20), 1, 1, model) == 1.0
    # item equal to current rep: no gain
    rep = model.item_table[2]
    assert guidance.guiding_score(rep, 2, 1, model) == 0.0
    assert guidance.guiding_score(rep, 0, 2, model) == -1.0


def test_guiding_score_matches_update_oracle():
    model, _, rng = make(1)
    for _ in range(200):
        p = list(rng.integers(0, 15, size=rng.integers(1, 20)))
        i, j = rng.integers(0, 15, size=2)
        rep = recsys.encode(p, model)
        e_j = model.item_table[j]
        moved = recsys.update_user_rep(rep, i, model)
        oracle = (np.dot(moved, e_j) - np.dot(rep, e_j)) / (1 - model.encoder_decay)
        assert guidance.guiding_score(rep, i, j, model) == pytest.approx(oracle, abs=1e-9)


def test_exact_score_is_scaled_simplified_score():
    for seed in range(5):
        decay = 0.5 + 0.1 * seed
        model, _, rng = make(seed, decay=decay)
        for _ in range(200):
            p = list(rng.integers(0, 15, size=rng.integers(1, 25)))
            i, j = (int(x) for x in rng.integers(0, 15, size=2))
            exact = guidance.guiding_score_exact(p, i, j, model)
            simple = guidance.guiding_score(recsys.encode(p, model), i, j, model)
            assert abs(exact - (1 - decay) * simple) <= 1e-9


def test_exact_score_empty_prefix():
    # first click initializes the encoder: the factor is 1, not (1 - decay)
    model, _, _ = make(2)
    assert guidance.guiding_score_exact([], 3, 5, model) == pytest.approx(
        guidance.guiding_score(np.zeros(20), 3, 5, model), abs=1e-15)


def test_ipg_score_examples():
    scores = [guidance.ipg_score(p, g) for p, g in ((0.9, -0.2), (0.5, 0.6), (0.1, 0.9))]
    np.testing.assert_allclose(scores, [-0.18, 0.30, 0.09], atol=1e-15)
    assert int(np.argmax(scores)) == 1
    assert guidance.ipg_score(0.7, 0.0) == 0.0


def test_score_items_fields():
    model, _, rng = make(3)
    rep = recsys.encode([1, 4, 2], model)
    for s in guidance.score_items(rep, 7, model):
        assert s.interaction_prob == pytest.approx(recsys.predict_click(rep, s.item_id, model), rel=1e-15)
        assert s.ipg_score == pytest.approx(s.interaction_prob * s.guide_score, rel=1e-15)


def test_ipg_matches_brute_force():
    model, catalog, rng = make(4)
    prefixes = [list(rng.integers(0, 15, size=rng.integers(0, 12))) for _ in range(100)]
    for target in range(15):
        picks = guidance.select_batch(Policy(PolicyKind.IPG), ctx_for(model, prefixes, target), catalog)
        for p, pick in zip(prefixes, picks):
            scored = guidance.score_items(recsys.encode(p, model), target, model)
            best = max(scored, key=lambda s: (s.ipg_score, -s.item_id))
            assert pick == best.item_id


def test_ipg_and_exact_agree():
    model, catalog, rng = make(5)
    prefixes = [list(rng.integers(0, 15, size=rng.integers(0, 30))) for _ in range(300)]
    for target in (0, 6, 14):
        ctx = ctx_for(model, prefixes, target)
        a = guidance.select_batch(Policy(PolicyKind.IPG), ctx, catalog)
        b = guidance.select_batch(Policy(PolicyKind.IPG_EXACT), ctx, catalog)
        assert np.array_equal(a, b)


def test_heuristic_zero_alpha_is_greedy():
    model, catalog, rng = make(6)
    prefixes = [list(rng.integers(0, 15, size=rng.integers(0, 10))) for _ in range(100)]
    ctx = ctx_for(model, prefixes, 3)
    np.testing.assert_array_equal(guidance.select_batch(Policy(PolicyKind.HEURISTIC, 0.0), ctx, catalog),
                                  guidance.select_batch(Policy(PolicyKind.GREEDY), ctx, catalog))


def test_heuristic_matches_formula():
    model, catalog, rng = make(7)
    prefixes = [list(rng.integers(0, 15, size=rng.integers(0, 10))) for _ in range(50)]
    ctx = ctx_for(model, prefixes, 9)
    picks = guidance.select_batch(Policy(PolicyKind.HEURISTIC, 2.0), ctx, catalog)
    e_j = model.item_table[9]
    for rep, pick in zip(ctx.reps, picks):
        scores = [float(rep @ e) + 2.0 * float(e_j @ e) for e in model.item_table]
        assert pick == int(np.argmax(scores))


def test_greedy_ignores_target():
    model, catalog, rng = make(8)
    prefixes = [list(rng.integers(0, 15, size=rng.integers(0, 10))) for _ in range(50)]
    runs = [guidance.select_batch(Policy(PolicyKind.GREEDY), ctx_for(model, prefixes, t), catalog)
            for t in range(15)]
    assert all(np.array_equal(runs[0], r) for r in runs)


def test_oracle_picks_true_argmax():
    _, catalog, rng = make(9)
    cfg = SimConfig()
    users = [SimUserState(e, click_counts={int(rng.integers(15)): 2}) for e in
             sample_population(20, rng)]
    picks = guidance.select_batch(Policy(PolicyKind.ORACLE), SelectionContext(users=users, sim_cfg=cfg), catalog)
    for u, pick in zip(users, picks):
        from ipglab.simenv import click_probability
        probs = [click_probability(u, catalog[i], u.n_clicks(i), cfg) for i in range(len(catalog))]
        assert pick == int(np.argmax(probs))


def test_random_is_uniform():
    catalog = Catalog(sample_population(100, spawn_stream(0, 0)))
    rng = np.random.default_rng(10)
    ctx = SelectionContext(rngs=[rng])
    draws = [guidance.select(Policy(PolicyKind.RANDOM), ctx, catalog) for _ in range(100_000)]
    counts = np.bincount(draws, minlength=100)
    assert counts.sum() == 100_000 and len(counts) == 100
    assert chisquare(counts).pvalue > 0.01


def test_selected_ids_are_in_catalog():
    model, catalog, rng = make(11)
    prefixes = [list(rng.integers(0, 15, size=rng.integers(0, 10))) for _ in range(30)]
    rngs = [np.random.default_rng(k) for k in range(30)]
    for kind in ("random", "greedy", "heuristic", "ipg", "ipg_exact"):
        picks = guidance.select_batch(Policy.parse(kind), ctx_for(model, prefixes, 2, rngs), catalog)
        assert picks.shape == (30,)
        assert np.all((picks >= 0) & (picks < 15))


def test_empty_catalog_and_missing_context():
    model, catalog, _ = make(12)
    empty = Catalog(np.empty((0, 20)))
    with pytest.raises(ValueError):
        guidance.select_batch(Policy(PolicyKind.GREEDY), ctx_for(model, [[1]], 0), empty)
    with pytest.raises(ValueError):
        guidance.select_batch(Policy(PolicyKind.IPG), SelectionContext(model=model, reps=np.zeros((1, 20))), catalog)
    with pytest.raises(KeyError):
        guidance.select_batch(Policy(PolicyKind.IPG), ctx_for(model, [[1]], 99), catalog)


def test_ties_go_to_lowest_id():
    table = np.zeros((6, 20))
    table[2, 0] = table[4, 0] = 1.0
    model = RecommenderModel(table)
    catalog = Catalog(sample_population(6, spawn_stream(0, 0)))
    ctx = SelectionContext(model=model, reps=np.eye(20)[:1], target_id=0)
    assert guidance.select(Policy(PolicyKind.GREEDY), ctx, catalog) == 2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 50.0))
def test_argmax_invariant_to_positive_scaling(seed, c):
    # IPG ranks by p * g: scaling every g by c > 0 leaves the pick unchanged
    model, _, rng = make(seed % 50)
    rep = recsys.encode(list(rng.integers(0, 15, size=5)), model)
    p = recsys.predict_all(rep, model)[0]
    g = model.item_table @ model.item_table[3] - rep @ model.item_table[3]
    assert np.argmax(p * g) == np.argmax(p * (c * g))
