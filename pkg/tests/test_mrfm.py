import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mdtguard.errors import FitError, InvalidInputError, StateError
from mdtguard.learn_core import make_rng
from mdtguard.mrfm import (LofModel, MrfmParams, RegionalRule, lof_score, lof_scores, lof_training_scores,
                           mrfm_classify, mrfm_fit, mrfm_sweep, parse_rate_range, regional_count_rule,
                           regional_counts)
from mdtguard.scenario import Label, ScenarioConfig

REAL, MAL = int(Label.REAL_OUTAGE), int(Label.MALICIOUS)


def brute_lof(reference, query, k, query_in_reference=None):
    """Direct transcription of the LOF definitions, one point at a time."""
    ref = [tuple(map(float, p)) for p in reference]

    def dist(a, b):
        return math.sqrt(sum((u - v) ** 2 for u, v in zip(a, b)))

    def neighbours(p, skip):
        ds = [(dist(p, o), j) for j, o in enumerate(ref) if j != skip]
        ds.sort()
        return ds[:k]

    def k_distance(j):
        return neighbours(ref[j], j)[-1][0]

    def lrd(p, skip):
        nb = neighbours(p, skip)
        reach = [max(d, k_distance(j)) for d, j in nb]
        return 1.0 / max(sum(reach) / k, 1e-12)

    q = tuple(map(float, query))
    skip = -1 if query_in_reference is None else query_in_reference
    nb = neighbours(q, skip)
    mine = lrd(q, skip)
    return sum(lrd(ref[j], j) for _, j in nb) / k / mine


def random_rows(n, centre=(500.0, 500.0), spread=30.0, seed=0):
    rng = make_rng(seed, "mrfm-test")
    pos = np.asarray(centre) + rng.normal(0.0, spread, size=(n, 2))
    meas = rng.normal(-100.0, 5.0, size=(n, 14))
    return np.hstack([pos, meas])


# ---------------------------------------------------------------- LOF


@pytest.mark.parametrize("n,k,dim,seed", [(12, 3, 2, 0), (60, 5, 3, 1), (200, 15, 4, 2), (40, 1, 2, 3)])
def test_lof_matches_brute_force(n, k, dim, seed):
    rng = make_rng(seed, "lof-oracle")
    ref = rng.normal(size=(n, dim))
    ref[: n // 4] *= 0.1  # a dense core plus a sparse halo
    queries = np.vstack([rng.normal(size=(6, dim)) * 2.0, ref[:2] + 1e-3])
    fast = lof_scores(ref, queries, k)
    for q, s in zip(queries, fast):
        assert abs(s - brute_lof(ref, q, k)) <= 1e-9 * max(1.0, abs(s))
    train = lof_training_scores(ref, k)
    for j in range(0, n, max(1, n // 10)):
        assert abs(train[j] - brute_lof(ref, ref[j], k, query_in_reference=j)) <= 1e-9 * max(1.0, train[j])


@given(st.integers(0, 10_000), st.floats(0, 2 * math.pi), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3),
       st.booleans())
def test_lof_rigid_motion_invariance(seed, angle, tx, ty, reflect):
    rng = make_rng(seed, "lof-rigid")
    ref = rng.normal(size=(40, 2)) * 10.0
    queries = rng.normal(size=(8, 2)) * 15.0
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    if reflect:
        rot = rot @ np.diag([1.0, -1.0])
    move = lambda p: p @ rot.T + np.array([tx, ty])  # noqa: E731
    a = lof_scores(ref, queries, 5)
    b = lof_scores(move(ref), move(queries), 5)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_lof_examples():
    g = np.arange(10.0)
    lattice = np.array([(x, y) for x in g for y in g])
    assert 0.9 <= lof_score(lattice, (4.0, 4.0), 5) <= 1.1
    diameter = math.hypot(9.0, 9.0)
    assert lof_score(lattice, (100 * diameter, 100 * diameter), 5) > 10.0
    same = np.ones((20, 3))
    assert lof_score(same, np.ones(3), 5) == 1.0
    assert np.all(lof_training_scores(same, 5) == 1.0)


def test_lof_errors():
    ref = np.zeros((5, 2))
    with pytest.raises(InvalidInputError):
        lof_scores(ref, ref, 5)
    with pytest.raises(InvalidInputError):
        lof_scores(ref, ref, 0)
    with pytest.raises(InvalidInputError):
        lof_scores(ref, [[np.nan, 0.0]], 2)
    assert lof_scores(ref + np.arange(5)[:, None], np.zeros((0, 2)), 2).shape == (0,)


# ---------------------------------------------------------------- frontier


def test_fit_contamination_quantile():
    model = mrfm_fit(random_rows(200), MrfmParams(15, 0.15, 2))
    assert abs(model.outside_fraction * 200 - 30) <= 1
    assert model.reference.shape == (200, 4)


def test_fit_geography_only():
    rows = random_rows(100)
    model = mrfm_fit(rows, MrfmParams(pca_k=0))
    assert model.reference.shape == (100, 2)
    q = random_rows(10, seed=5)
    shuffled = q.copy()
    shuffled[:, 2:] = -130.0
    assert np.array_equal(model.scores(q), model.scores(shuffled))


def test_fit_deterministic_and_roundtrip():
    rows = random_rows(120)
    a, b = mrfm_fit(rows), mrfm_fit(rows)
    assert a.decision_threshold == b.decision_threshold
    c = LofModel.from_dict(a.to_dict())
    q = random_rows(15, seed=9)
    assert np.array_equal(a.scores(q), c.scores(q))
    assert c.decision_threshold == a.decision_threshold


def test_fit_errors():
    with pytest.raises(FitError):
        mrfm_fit(random_rows(15), MrfmParams(n_neighbors=15))
    with pytest.raises(InvalidInputError):
        mrfm_fit(random_rows(50)[:, :10])
    for bad in (dict(contamination=0.0), dict(contamination=0.5), dict(n_neighbors=0), dict(pca_k=15)):
        with pytest.raises(InvalidInputError):
            MrfmParams(**bad)


def test_classify_cluster_and_stray():
    rows = random_rows(150, centre=(200.0, 200.0), spread=25.0)
    model = mrfm_fit(rows)
    inside = rows[:1].copy()
    inside[0, :2] = (200.0, 200.0)
    inside[0, 2:] = rows[:, 2:].mean(axis=0)
    stray = inside.copy()
    stray[0, :2] = (900.0, 900.0)
    assert mrfm_classify(model, inside).tolist() == [REAL]
    assert mrfm_classify(model, stray).tolist() == [MAL]
    assert mrfm_classify(model, np.zeros((0, 16))).shape == (0,)
    with pytest.raises(StateError):
        mrfm_classify(None, inside)


@given(st.lists(st.integers(0, 39), min_size=1, max_size=40))
def test_classify_frontier_independence(picks):
    model = _frontier_model()
    queries = _frontier_queries()
    batch = mrfm_classify(model, queries[picks])
    alone = np.array([mrfm_classify(model, queries[i:i + 1])[0] for i in picks])
    assert np.array_equal(batch, alone)


_CACHE = {}


def _frontier_model():
    if "m" not in _CACHE:
        _CACHE["m"] = mrfm_fit(random_rows(80, seed=3))
    return _CACHE["m"]


def _frontier_queries():
    rng = make_rng(4, "queries")
    q = random_rows(40, seed=4)
    q[:, :2] = rng.uniform(0, 1000, size=(40, 2))
    return q


# ---------------------------------------------------------------- regional rule


def test_regional_rule_examples():
    rng = make_rng(0, "eta")
    cluster = np.array([300.0, 300.0]) + rng.uniform(-30, 30, size=(12, 2))
    assert regional_count_rule(cluster).tolist() == [REAL] * 12
    isolated = np.array([[100.0, 100.0], [500.0, 500.0], [900.0, 100.0]])
    assert regional_count_rule(isolated).tolist() == [MAL] * 3
    assert regional_count_rule([[10.0, 10.0]]).tolist() == [MAL]
    assert regional_count_rule(np.zeros((0, 2))).shape == (0,)


def test_regional_counts_distinct_ues():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [500.0, 0.0]])
    assert regional_counts(pos).tolist() == [2, 2, 2, 0]
    assert regional_counts(pos, ue_ids=[7, 7, 8, 9]).tolist() == [1, 1, 1, 0]
    with pytest.raises(InvalidInputError):
        RegionalRule(eta=0)
    with pytest.raises(InvalidInputError):
        RegionalRule(region_radius_m=0.0)


@given(st.lists(st.tuples(st.floats(0, 400), st.floats(0, 400)), min_size=1, max_size=40),
       st.tuples(st.floats(0, 400), st.floats(0, 400)), st.integers(1, 6))
def test_regional_rule_monotone(points, extra, eta):
    rule = RegionalRule(eta=eta, region_radius_m=100.0)
    before = regional_count_rule(points, rule)
    after = regional_count_rule(points + [extra], rule)[:-1]
    assert not np.any((before == REAL) & (after == MAL))


# ---------------------------------------------------------------- sweep


def test_parse_rate_range():
    rates = parse_rate_range("0.05:0.90:0.05")
    assert len(rates) == 18 and rates[0] == 0.05 and rates[-1] == 0.9
    assert parse_rate_range("0.2:0.2:0.1") == [0.2]
    for bad in ("0.1:0.5", "a:b:c", "0.5:0.1:0.1", "0.1:0.5:0"):
        with pytest.raises(InvalidInputError):
            parse_rate_range(bad)


def test_sweep_examples():
    base = ScenarioConfig(n_reports=2500, outage_cells=(0, 1), rng_seed=0)
    rows = mrfm_sweep(base, [0.05])
    assert len(rows) == 1
    r = rows[0]
    assert r.fake_rate == 0.05
    assert 0.0 <= r.real_error_rate <= 1.0 and 0.0 <= r.fake_error_rate <= 1.0
    many = mrfm_sweep(base, [0.05, 0.3, 0.6, 0.9])
    reals = [row.real_error_rate for row in many]
    assert max(reals) - min(reals) <= 0.1
    with pytest.raises(InvalidInputError):
        mrfm_sweep(base, [0.0])
