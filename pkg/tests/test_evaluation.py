import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leitnerq.evaluation import (ConstantModel, EvalReport, FixedModel, auc, deck_bin, evaluate_models,
                                 make_fold_plan, split_rows)
from leitnerq.logs import Interaction, InteractionHistory, build_histories
from leitnerq.models import FeatureTable, efc_model
from leitnerq.synth import generate_logs


def brute_auc(s, y):
    pos = [a for a, b in zip(s, y) if b]
    neg = [a for a, b in zip(s, y) if not b]
    tot = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return tot / (len(pos) * len(neg))


def test_auc_unit_cases():
    assert auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 0.75
    y = [True, False, True, True, False]
    assert auc(np.array(y, dtype=float), y) == 1.0
    assert auc([0.3] * 5, y) == 0.5


def test_auc_single_class():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [True, True])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40)
       .filter(lambda r: 0 < sum(b for _, b in r) < len(r)))
def test_auc_matches_pair_counting_and_is_rank_invariant(rows):
    s = [float(a) for a, _ in rows]
    y = [b for _, b in rows]
    a = auc(s, y)
    assert a == pytest.approx(brute_auc(s, y), abs=1e-12)
    assert 0.0 <= a <= 1.0
    assert auc(np.exp(np.array(s)) * 3 + 1, y) == pytest.approx(a, abs=1e-12)


def test_deck_bins():
    assert [deck_bin(q) for q in (1, 5, 6, 40)] == ["1", "5", "6+", "6+"]


def _histories(n, length=4):
    return [InteractionHistory(f"u{p}", "i", tuple(
        Interaction(float(t), t % 2 == 0, None if t == 0 else 1.0, t + 1, 1) for t in range(length)))
        for p in range(n)]


def test_fold_plan_counts_and_determinism():
    hs = _histories(100)
    plan = make_fold_plan(hs, 10, 0.2, 0.1, seed=4)
    assert len(plan.test_pairs) == 20
    non_test = set(range(100)) - set(plan.test_pairs)
    assert len(non_test) == 80
    covered = [p for f in plan.folds for p in f]
    assert set(covered) <= non_test
    assert sorted(covered) == sorted(non_test)  # every non-test pair truncated exactly once
    for f in plan.folds:
        assert len(f) == 8
        assert all(1 <= t <= 3 for t in f.values())
    assert make_fold_plan(hs, 10, 0.2, 0.1, seed=4) == plan
    assert make_fold_plan(hs, 10, 0.2, 0.1, seed=5) != plan


def test_fold_plan_errors():
    with pytest.raises(ValueError):
        make_fold_plan(_histories(5), fold_count=10)
    with pytest.raises(ValueError):
        make_fold_plan(_histories(20, length=1))


def test_split_rows_has_no_leakage():
    hs = _histories(50, length=6)
    table = FeatureTable.from_histories(hs)
    plan = make_fold_plan(hs, 5, 0.2, 0.2, seed=0)
    non_test = np.setdiff1d(np.arange(50), plan.test_pairs)
    for cuts in list(plan.folds) + [plan.test_cut]:
        train, score = split_rows(table, non_test, cuts)
        assert not (train & score).any()
        assert score.sum() == len(cuts)
        for p, t in cuts.items():
            rows = table.pair == p
            assert (table.pos[rows & train] < t).all()
            assert table.pos[rows & score].tolist() == [t]
    # test pairs never train in any fold
    for cuts in plan.folds:
        train, _ = split_rows(table, non_test, cuts)
        assert not np.isin(table.pair[train], plan.test_pairs).any()


def _synthetic(n_users=60, n_items=20, reviews=6, theta=0.1, seed=0):
    return build_histories(generate_logs(n_users, n_items, reviews, theta, seed=seed))


def test_constant_model_is_half_everywhere():
    hs = _synthetic()
    plan = make_fold_plan(hs, 5, seed=1)
    rep = evaluate_models(hs, [ConstantModel(0.3)], plan)
    for f in rep.val_auc["constant"]:
        assert f == 0.5
    for b in rep.val_binned["constant"]:
        assert all(v == 0.5 for v in b.values() if v is not None)


def test_true_model_ranks_first():
    hs = _synthetic(theta=0.1, seed=3)
    plan = make_fold_plan(hs, 5, seed=2)
    oracle = FixedModel(efc_model(8, 0.1), "oracle")
    rep = evaluate_models(hs, [oracle, "efc_global_q_nodelay", "irt0_item", ConstantModel()], plan)
    means = {m: rep.mean_val_auc(m) for m in rep.models}
    assert max(means, key=means.get) == "oracle"


def test_report_outputs():
    hs = _synthetic(n_users=30)
    plan = make_fold_plan(hs, 3, seed=0)
    rep = evaluate_models(hs, [8, "irt1"], plan, l2_grid=(0.1, 1.0))
    assert rep.models == ["efc_global_q", "irt1"]
    csv_text = rep.to_csv()
    assert csv_text.splitlines()[0] == "model,fold,bin,auc"
    assert any(line.startswith("irt1,test,all,") for line in csv_text.splitlines())
    assert rep.chosen_l2["irt1"] in (0.1, 1.0) and rep.chosen_l2["efc_global_q"] is None
    vals = [v for v in rep.val_auc["efc_global_q"] if v is not None]
    assert rep.stderr_val_auc("efc_global_q") == pytest.approx(np.std(vals, ddof=1) / np.sqrt(len(vals)))
    for _, _, _, a in rep.rows():
        assert 0.0 <= a <= 1.0
    assert rep.to_json() == evaluate_models(hs, [8, "irt1"], plan, l2_grid=(0.1, 1.0)).to_json()


def test_plan_must_match_histories():
    hs = _synthetic(n_users=20)
    plan = make_fold_plan(hs[:100], 3)
    with pytest.raises(ValueError):
        evaluate_models(hs, [8], plan)


def test_empty_report_stats_are_nan():
    rep = EvalReport(["m"], 1, val_auc={"m": [None]})
    assert np.isnan(rep.mean_val_auc("m")) and np.isnan(rep.stderr_val_auc("m"))
