import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gfsl.eval import (
    AggregateReport,
    Aggregator,
    EpisodeScores,
    RunningStat,
    UndefinedAUC,
    aggregate,
    auc_roc,
    harmonic_mean,
    score_episode,
    write_episode_csv,
)

from oracles import pair_count_auc


def test_auc_perfect_and_inverted():
    assert auc_roc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc_roc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auc_roc([0.5, 0.5], [1, 0]) == 0.5


def test_auc_degenerate():
    with pytest.raises(UndefinedAUC):
        auc_roc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedAUC):
        auc_roc([0.1, 0.2], [0, 0])
    with pytest.raises(ValueError):
        auc_roc([0.1, 0.2, 0.3], [0, 1])


def test_auc_random_with_ties_matches_pair_count(rng):
    for _ in range(500):
        n = int(rng.integers(2, 21))
        s = rng.integers(0, 5, size=n) / 4.0
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            continue
        assert abs(auc_roc(s, y) - pair_count_auc(s.tolist(), y.tolist())) <= 1e-12


# scores on a coarse grid so each map stays strictly increasing in doubles
@given(st.lists(st.tuples(st.integers(-40, 40), st.booleans()), min_size=2, max_size=40))
@settings(max_examples=200, deadline=None)
def test_auc_monotone_invariance(pairs):
    s = np.array([p[0] / 8 for p in pairs])
    y = np.array([p[1] for p in pairs])
    assume(y.any() and not y.all())
    base = auc_roc(s, y)
    for f in (lambda v: 3 * v + 1, np.exp, lambda v: v ** 3, np.arctan):
        assert auc_roc(f(s), y) == pytest.approx(base, abs=1e-12)


def test_harmonic_mean_cases():
    assert harmonic_mean(0.8, 0.8) == pytest.approx(0.8)
    assert harmonic_mean(0.8, 0.6) == pytest.approx(0.685714285714, abs=1e-12)
    assert harmonic_mean(0.0, 0.0) == 0.0


@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_harmonic_mean_bounds(a, b):
    h = harmonic_mean(a, b)
    lo, hi = min(a, b), max(a, b)
    assert h <= lo * 2 / (1 + lo / hi) * (1 + 1e-12)
    assert h <= (a + b) / 2 * (1 + 1e-12)
    assert h >= lo * (1 - 1e-12)


def test_score_episode_flattening_oracle(rng):
    for _ in range(50):
        n, c = int(rng.integers(4, 12)), 3
        y = rng.integers(0, 2, size=(n, c))
        y[0] = 0
        y[1] = 1
        p = rng.random((n, c))
        seen = np.array([True, True, False])
        s = score_episode(p, y_tst=y, seen=seen)
        flat_s = [(p[i, j], y[i, j]) for i in range(n) for j in range(c) if seen[j]]
        flat_u = [(p[i, j], y[i, j]) for i in range(n) for j in range(c) if not seen[j]]
        want_s = pair_count_auc(*zip(*flat_s))
        want_u = pair_count_auc(*zip(*flat_u))
        assert s.seen_auc == pytest.approx(want_s, abs=1e-12)
        assert s.unseen_auc == pytest.approx(want_u, abs=1e-12)
        assert s.hm == pytest.approx(2 * want_s * want_u / (want_s + want_u), abs=1e-12)


def test_one_sided_episodes():
    y = np.array([[1, 0], [0, 1], [0, 0]])
    p = np.array([[0.9, 0.1], [0.2, 0.8], [0.1, 0.1]])
    only_unseen = score_episode(p, y_tst=y, seen=[False, False])
    assert only_unseen.seen_auc is None and only_unseen.hm == only_unseen.unseen_auc
    only_seen = score_episode(p, y_tst=y, seen=[True, True])
    assert only_seen.unseen_auc is None and only_seen.hm == only_seen.seen_auc
    with pytest.raises(ValueError):
        score_episode(p[:, :1], y_tst=y, seen=[True, True])


def test_score_real_episode(small_world):
    from gfsl.episodes import EpisodeSpec

    _, _, _, sampler = small_world
    ep = sampler.generate(EpisodeSpec.from_way(3, 1, 3, 3), 2)
    s = score_episode(ep.y_tst.astype(float), ep)
    assert s.seen_auc == 1.0 and s.unseen_auc == 1.0 and s.hm == 1.0


def test_aggregate_closed_forms():
    rep = aggregate([EpisodeScores(0.5, 0.5, 0.5)] * 7)
    assert rep["hm"].mean == 0.5 and rep["hm"].ci95 == 0.0 and rep["hm"].n == 7
    rep = aggregate([EpisodeScores(None, 0.8, 0.8), EpisodeScores(None, 0.6, 0.6)])
    assert rep["hm"].mean == pytest.approx(0.7)
    assert rep["hm"].ci95 == pytest.approx(1.96 * math.sqrt(0.02) / math.sqrt(2), rel=1e-12)
    assert "seen" not in rep.metrics
    with pytest.raises(ValueError):
        aggregate([])


def test_running_stat_two_pass_oracle(rng):
    xs = rng.beta(5, 2, size=1000)
    s = RunningStat()
    for x in xs:
        s.add(float(x))
    mean = sum(xs) / len(xs)
    var = sum((x - mean) ** 2 for x in xs) / (len(xs) - 1)
    assert abs(s.mean - mean) < 1e-10
    assert abs(s.std ** 2 - var) < 1e-10


@given(st.lists(st.floats(0, 1), min_size=2, max_size=60), st.integers(0, 59), st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_aggregation_order_and_merge_invariance(xs, cut, r):
    scores = [EpisodeScores(x, 1 - x, harmonic_mean(x, 1 - x)) for x in xs]
    base = aggregate(scores).to_dict()
    shuffled = scores[:]
    r.shuffle(shuffled)
    cut = cut % len(xs)
    a, b = Aggregator(), Aggregator()
    for s in shuffled[:cut]:
        a.add(s)
    for s in shuffled[cut:]:
        b.add(s)
    for other in (aggregate(shuffled).to_dict(), a.merge(b).report().to_dict(), b.merge(a).report().to_dict()):
        for m in base:
            assert other[m]["n"] == base[m]["n"]
            assert other[m]["mean"] == pytest.approx(base[m]["mean"], abs=1e-12)
            assert other[m]["ci95"] == pytest.approx(base[m]["ci95"], abs=1e-9)


def test_hm_is_mean_of_episode_hms():
    scores = [EpisodeScores(0.99, 0.51, harmonic_mean(0.99, 0.51)), EpisodeScores(0.51, 0.99, harmonic_mean(0.51, 0.99))]
    rep = aggregate(scores)
    assert rep["hm"].mean == pytest.approx(harmonic_mean(0.99, 0.51))
    assert rep["hm"].mean < harmonic_mean(rep["seen"].mean, rep["unseen"].mean) - 0.05


def test_report_formats(tmp_path):
    rep = aggregate([EpisodeScores(0.8, 0.6, harmonic_mean(0.8, 0.6)), EpisodeScores(0.9, 0.7, harmonic_mean(0.9, 0.7))])
    doc = json.loads(rep.to_json())
    assert set(doc) == {"seen", "unseen", "hm"}
    assert set(doc["hm"]) == {"mean", "ci95", "n"}
    text = rep.to_text("t")
    assert "85.00±9.80" in text and "Seen" in text and "HM" in text
    assert isinstance(rep, AggregateReport)
    write_episode_csv(tmp_path / "s.csv", [EpisodeScores(None, 0.5, 0.5)])
    assert (tmp_path / "s.csv").read_text().splitlines() == ["episode,seen,unseen,hm", "0,,0.5,0.5"]
