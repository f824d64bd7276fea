import math

import numpy as np
import pytest

from divsel.embeddings import cosine_kernel, dispersion_stats
from divsel.objective import ObjectiveConfig, objective_value
from divsel.oracle import check_submodularity, make_instance
from divsel.selector import (
    lambda_bound_probe,
    naive_greedy,
    rank_stage2,
    random_similar,
    retrieve_stage1,
    select_demonstrations,
    stage2_scores,
)
from divsel.synthetic import generate_synthetic

from conftest import kernel_of, make_set


def test_single_candidate():
    K = kernel_of([[0.3, 0.4]])
    res = retrieve_stage1(K, [0], ObjectiveConfig(k1=3, k=1))
    assert res.selected == [0]
    assert res.steps[0]["gain"] == pytest.approx(objective_value(K, [0], [0], ObjectiveConfig())["f"])
    assert naive_greedy(K, [0], ObjectiveConfig(k1=3, k=1)) == [0]


def test_orthogonal_ties_go_to_lowest_index():
    K = kernel_of(np.eye(3))
    res = retrieve_stage1(K, range(3), ObjectiveConfig(lam=0.1, k1=2, k=1))
    assert res.selected == [0, 1]
    assert [s["diversity_delta"] for s in res.steps] == pytest.approx([0.0, 0.0], abs=1e-12)


def test_empty_universe_rejected():
    with pytest.raises(ValueError):
        retrieve_stage1(kernel_of(np.eye(2)), [], ObjectiveConfig(k1=1, k=1))


def _duplicated(seed, n, d):
    base = np.abs(np.random.default_rng(seed).standard_normal((n, d)))
    return kernel_of(np.vstack([base, base[::-1]]))


def test_lazy_equals_naive_with_exact_ties():
    for seed in range(40):
        K = _duplicated(seed, 4, 5)
        for lam in (0.0, 0.1, 1.0):
            cfg = ObjectiveConfig(lam=lam, k1=6, k=1)
            assert retrieve_stage1(K, range(8), cfg).selected == naive_greedy(K, range(8), cfg)


def test_lazy_saves_evaluations():
    K = make_instance(0, 200, 8, "orthant_clustered", clusters=4, noise=0.2)
    cfg = ObjectiveConfig(lam=0.0, k1=20, k=1)
    lazy = retrieve_stage1(K, range(200), cfg)
    naive = naive_greedy(K, range(200), cfg, full=True)
    assert lazy.selected == naive.selected
    assert len(lazy.selected) == 20
    assert lazy.evaluations < naive.evaluations / 3


def test_divergence_only_without_normalized_submodularity():
    # With negative cosines the steps out of the empty set can violate
    # diminishing returns; only then may lazy and naive greedy disagree.
    diverged = 0
    for seed in range(150):
        K = make_instance(seed, 7, 3, "gaussian")
        cfg = ObjectiveConfig(lam=0.1, k1=4, k=1)
        if retrieve_stage1(K, range(7), cfg).selected != naive_greedy(K, range(7), cfg):
            diverged += 1
            rep = check_submodularity(K, range(7), cfg, "combined", include_empty=True, max_size=4)
            assert not rep.passed, seed
    assert diverged > 0


def test_early_stop_and_override():
    K = cosine_kernel(generate_synthetic(40, 8, 4, 0.05, seed=1))
    strict = retrieve_stage1(K, range(40), ObjectiveConfig(lam=1.0, k1=30, k=1))
    assert len(strict.selected) < 30
    assert strict.warnings and strict.warnings[0].startswith("early stop")
    loose = retrieve_stage1(K, range(40), ObjectiveConfig(lam=1.0, k1=30, k=1, allow_negative_gain=True))
    assert len(loose.selected) == 30
    assert loose.selected[:len(strict.selected)] == strict.selected
    assert sum(w.startswith("negative gain") for w in loose.warnings) == 1


def test_objective_trace_is_running_f():
    K = make_instance(3, 10, 6, "orthant")
    cfg = ObjectiveConfig(lam=0.1, k1=4, k=1)
    res = retrieve_stage1(K, range(10), cfg)
    for i, f in enumerate(res.objective_trace):
        assert f == pytest.approx(objective_value(K, range(10), res.selected[:i + 1], cfg)["f"])


def test_stage2_full_budget_sorts_everything():
    K = make_instance(0, 8, 5, "orthant")
    cfg = ObjectiveConfig(lam=0.1, k1=5, k=5)
    S, Q = [0, 1, 2, 3, 4], [6, 7]
    scores = stage2_scores(K, S, Q, range(8), cfg)
    assert sorted(x for x, _ in scores) == S
    assert [g for _, g in scores] == sorted((g for _, g in scores), reverse=True)
    assert rank_stage2(K, S, Q, range(8), cfg) == [x for x, _ in scores]


def test_stage2_duplicate_of_query_ranks_last():
    # candidate 2 duplicates the query direction; 0 and 1 are symmetric about it
    X = [[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 2.0]]
    K = kernel_of(X)
    cfg = ObjectiveConfig(lam=0.1, k1=3, k=3)
    scores = stage2_scores(K, [0, 1, 2], [3], range(4), cfg)
    assert [x for x, _ in scores] == [0, 1, 2]
    assert scores[0][1] == scores[1][1]
    assert scores[2][1] == pytest.approx(0.1 * math.log(cfg.residual_floor), abs=1e-9)


def test_stage2_errors():
    K = kernel_of(np.eye(3))
    cfg = ObjectiveConfig(k1=2, k=1)
    with pytest.raises(ValueError):
        rank_stage2(K, [], [2], range(3), cfg)
    with pytest.raises(ValueError):
        rank_stage2(K, [0], [], range(3), cfg)
    with pytest.raises(ValueError):
        rank_stage2(K, [0, 2], [2], range(3), cfg)


def test_random_similar_is_seeded():
    K = make_instance(5, 30, 6, "gaussian")
    cfg = ObjectiveConfig(k1=10, k=3)
    a = random_similar(K, range(25), [25, 26], cfg, seed=9)
    assert a == random_similar(K, range(25), [25, 26], cfg, seed=9)
    assert a != random_similar(K, range(25), [25, 26], cfg, seed=10)
    S, top = a
    means = {x: K.entries[x, [25, 26]].mean() for x in S}
    assert top == sorted(S, key=lambda x: (-means[x], x))[:3]


def test_probe_lambda_zero_has_no_violations():
    K = make_instance(1, 12, 4, "gaussian")
    res = lambda_bound_probe(K, range(12), ObjectiveConfig(lam=0.0, k1=5, k=1), trials=300)
    assert res["violations"] == []


def test_probe_orthogonal_is_infinite():
    K = kernel_of(np.eye(6))
    res = lambda_bound_probe(K, range(6), ObjectiveConfig(lam=0.1, k1=5, k=1), trials=50)
    assert math.isinf(res["max_valid_lambda_estimate"]) and res["skipped"] == 50


def test_probe_above_estimate_finds_violation():
    K = cosine_kernel(generate_synthetic(30, 6, 3, 0.1, seed=4))
    cfg = ObjectiveConfig(lam=0.1, k1=10, k=1)
    est = lambda_bound_probe(K, range(30), cfg, trials=400, seed=1)["max_valid_lambda_estimate"]
    assert 0 < est < math.inf
    again = lambda_bound_probe(K, range(30), ObjectiveConfig(lam=2 * est, k1=10, k=1), trials=400, seed=1)
    assert again["violations"]
    with pytest.raises(ValueError):
        lambda_bound_probe(K, range(30), cfg, trials=0)


def test_dispersion_small_clusters():
    wins = 0
    for seed in range(50):
        K = cosine_kernel(generate_synthetic(20, 16, 5, 0.05, seed))
        picks = [retrieve_stage1(K, range(20), ObjectiveConfig(lam=lam, k1=10, k=1)).selected
                 for lam in (0.0, 0.1)]
        plain, diverse = (dispersion_stats(K, S)["mean_pairwise_sim"] for S in picks)
        wins += diverse < plain
    assert wins >= 45


def test_select_demonstrations_report():
    corpus = make_set(np.abs(np.random.default_rng(0).standard_normal((12, 5))))
    queries = make_set(np.abs(np.random.default_rng(1).standard_normal((2, 5))), prefix="q")
    K = cosine_kernel(corpus, queries)
    cfg = ObjectiveConfig(lam=0.1, k1=4, k=2)
    rep = select_demonstrations(K, 12, cfg)
    assert len(rep.stage1) == 4 and len(rep.stage2) == 2
    assert set(rep.stage2_indices) <= set(rep.stage1_indices)
    assert rep.stage2_indices == rank_stage2(K, rep.stage1_indices, [12, 13], range(14), cfg)
    doc = rep.to_dict()
    assert set(doc) == {"stage1", "stage2", "objective_trace", "config", "warnings"}
    per = select_demonstrations(K, 12, cfg, per_query=True)
    assert [q["query"] for q in per.per_query] == [12, 13]
    assert per.stage1 == rep.stage1


def test_select_exhausted_and_empty_queries():
    K = kernel_of(np.eye(3))
    rep = select_demonstrations(K, 3, ObjectiveConfig(lam=0.0, k1=5, k=1))
    assert len(rep.stage1) == 3 and rep.stage2 == []
    assert any("exhausted" in w for w in rep.warnings)
    assert any("empty query" in w for w in rep.warnings)
    with pytest.raises(ValueError):
        select_demonstrations(K, 3, ObjectiveConfig(k1=1, k=1), method="nope")


def test_rank_scores_treats_rounding_ties_as_ties():
    from divsel.selector import rank_scores
    scored = [(3, 1.4681569780802082), (2, 1.468156978080208), (1, 1.0), (0, 1.0 - 1e-9)]
    assert [x for x, _ in rank_scores(scored)] == [2, 3, 1, 0]
