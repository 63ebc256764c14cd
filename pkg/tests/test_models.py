import math

import numpy as np
import pytest

from leitnerq.logs import Interaction, InteractionHistory
from leitnerq.models import (MODEL_SPECS, THETA_MAX, THETA_MIN, FeatureTable, FeatureVector, MemoryModel,
                             UnknownModelError, efc_loglik, efc_model, fit_efc_global, fit_efc_per_item,
                             fit_irt, fit_logreg, fit_model, get_spec, log_likelihood, logistic_objective,
                             predict_recall, resolve_models)
from leitnerq.synth import generate_logs
from leitnerq.logs import build_histories


def fv(d, q, n=1, user="u", item="i"):
    return FeatureVector(d, n, q, user, item)


def table_from(d, q, y, item=None, n=None):
    m = len(y)
    vecs = [FeatureVector(float(d[j]), int(n[j]) if n is not None else 1, int(q[j]), "u",
                          "i" if item is None else str(item[j])) for j in range(m)]
    return FeatureTable.from_vectors(vecs, y)


def test_fourteen_specs_cover_the_efc_grid():
    assert [s.row for s in MODEL_SPECS] == list(range(1, 15))
    combos = {(s.difficulty, s.strength, s.delay) for s in MODEL_SPECS if s.kind == "efc"}
    assert len(combos) == 10
    assert get_spec(8).name == "efc_global_q" and get_spec("irt1").row == 3


def test_unknown_model_lists_all_identifiers():
    with pytest.raises(UnknownModelError) as e:
        get_spec("nope")
    for s in MODEL_SPECS:
        assert s.name in str(e.value)


def test_duplicates_are_dropped_with_warning():
    with pytest.warns(UserWarning):
        specs = resolve_models([8, "efc_global_q", 3])
    assert [s.row for s in specs] == [8, 3]


def test_predict_examples():
    m = efc_model(8, 0.0077)
    assert predict_recall(m, fv(0.0, 3)) == 1.0
    assert predict_recall(efc_model(8, 1.0), fv(1.0, 1)) == pytest.approx(math.exp(-1), abs=1e-12)
    assert predict_recall(m, fv(90.0, 2)) == pytest.approx(math.exp(-0.3465), abs=1e-12)
    assert predict_recall(m, fv(90.0, 2)) == pytest.approx(0.70716, abs=5e-6)


def test_predict_mode_semantics():
    f = FeatureVector(10.0, 4, 2, "u", "i")
    th = 0.1
    expect = {
        "efc_global_n": math.exp(-th * 10 / 4),
        "efc_global_const": math.exp(-th * 10),
        "efc_global_n_nodelay": math.exp(-th / 4),
        "efc_global_q": math.exp(-th * 10 / 2),
        "efc_global_q_nodelay": math.exp(-th / 2),
    }
    for name, p in expect.items():
        assert predict_recall(efc_model(name, th), f) == pytest.approx(p, rel=1e-12)
    per_item = efc_model("efc_item_q", {"i": 0.2, "j": 0.4})
    assert predict_recall(per_item, f) == pytest.approx(math.exp(-0.2 * 5))
    # unseen item falls back to the mean difficulty
    assert predict_recall(per_item, FeatureVector(10.0, 4, 2, "u", "zz")) == pytest.approx(math.exp(-0.3 * 5))


def test_predict_monotonicity():
    ds = np.linspace(0.5, 50, 20)
    for name in ("efc_global_n", "efc_global_q", "efc_global_const"):
        ps = [predict_recall(efc_model(name, 0.05), FeatureVector(d, 3, 2, "u", "i")) for d in ds]
        assert all(a > b for a, b in zip(ps, ps[1:]))
        assert all(0 < p <= 1 for p in ps)
    ths = [0.001, 0.01, 0.1, 1.0]
    ps = [predict_recall(efc_model(8, t), fv(5.0, 2)) for t in ths]
    assert all(a > b for a, b in zip(ps, ps[1:]))
    qs = [predict_recall(efc_model(8, 0.1), fv(5.0, q)) for q in range(1, 8)]
    assert all(a <= b for a, b in zip(qs, qs[1:]))
    assert predict_recall(efc_model(8, THETA_MIN), fv(5.0, 1)) == pytest.approx(1.0, abs=1e-5)


def test_delay_model_needs_delay():
    with pytest.raises(ValueError):
        predict_recall(efc_model(8, 0.1), fv(None, 1))


# --- fitting ---------------------------------------------------------------

def _sample_efc(theta, m, rng, item=None):
    d = rng.exponential(30.0, m)
    q = rng.integers(1, 7, m)
    y = rng.random(m) < np.exp(-theta * d / q)
    return d, q, y


def test_fit_efc_global_recovers_theta():
    rng = np.random.default_rng(11)
    d, q, y = _sample_efc(0.01, 100_000, rng)
    theta, info = fit_efc_global(table_from(d, q, y), "leitner_q", "with_delay")
    assert abs(theta / 0.01 - 1) < 0.05
    assert info["boundary"] is None


def test_fit_efc_boundaries():
    t1 = table_from([1.0], [1], [True])
    t0 = table_from([1.0], [1], [False])
    assert fit_efc_global(t1, "leitner_q", "with_delay") == (THETA_MIN, {"boundary": "theta_min", "iterations": 0})
    assert fit_efc_global(t0, "leitner_q", "with_delay")[0] == THETA_MAX


def test_fit_efc_per_item():
    rng = np.random.default_rng(5)
    parts = []
    for name, th in (("A", 0.005), ("B", 0.05)):
        d, q, y = _sample_efc(th, 10_000, rng)
        parts.append((d, q, y, [name] * len(y)))
    d, q, y, it = (np.concatenate(c) for c in zip(*parts))
    fitted, fb, _ = fit_efc_per_item(table_from(d, q, y, item=it), "leitner_q", "with_delay")
    assert abs(fitted["A"] / 0.005 - 1) < 0.10
    assert abs(fitted["B"] / 0.05 - 1) < 0.10
    assert fb == pytest.approx((fitted["A"] + fitted["B"]) / 2)


def test_fit_efc_per_item_symmetry_and_boundary():
    d = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    q = [1, 1, 2, 1, 1, 2, 1, 1]
    y = [True, False, True, True, False, True, True, True]
    it = ["a", "a", "a", "b", "b", "b", "c", "c"]
    fitted, _, _ = fit_efc_per_item(table_from(d, q, y, item=it), "leitner_q", "with_delay")
    assert fitted["a"] == fitted["b"]
    assert fitted["c"] == THETA_MIN


def test_efc_likelihood_is_maximal_at_fit():
    rng = np.random.default_rng(2)
    d, q, y = _sample_efc(0.02, 5000, rng)
    x = d / q
    theta, _ = fit_efc_global(table_from(d, q, y), "leitner_q", "with_delay")
    best = efc_loglik(theta, x, y)[0]
    for f in rng.uniform(0.5, 1.5, 100):
        assert efc_loglik(theta * f, x, y)[0] <= best + 1e-9


def _central_diff(f, w, h):
    g = np.zeros_like(w)
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def test_efc_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.exponential(5.0, 200)
    y = rng.random(200) < 0.6
    for theta in np.exp(rng.uniform(np.log(1e-3), np.log(2.0), 20)):
        _, g = efc_loglik(theta, x, y)
        h = 1e-5 * theta
        fd = (efc_loglik(theta + h, x, y)[0] - efc_loglik(theta - h, x, y)[0]) / (2 * h)
        assert abs(g - fd) <= 1e-5 * max(abs(fd), 1.0)


@pytest.mark.parametrize("kind", ["dense", "irt"])
def test_logistic_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(4)
    m = 300
    y = rng.random(m) < 0.5
    if kind == "dense":
        X = np.hstack([np.ones((m, 1)), rng.normal(size=(m, 5))])
        k = X.shape[1]
        penal = np.r_[0.0, np.ones(k - 1)]
    else:
        u = rng.integers(0, 6, m)
        i = rng.integers(0, 4, m)
        X = (u, 6 + i)
        k = 10
        penal = np.ones(k)
    for _ in range(20):
        w = rng.normal(size=k)
        _, g = logistic_objective(w, X, y, 0.3, penal)
        fd = _central_diff(lambda v: logistic_objective(v, X, y, 0.3, penal)[0], w, 1e-6)
        assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1.0) < 1e-5


def _irt_table(users, items, y):
    vecs = [FeatureVector(None, 1, 1, str(u), str(i)) for u, i in zip(users, items)]
    return FeatureTable.from_vectors(vecs, y)


def test_irt0_user_closed_form():
    t = _irt_table(["a"] * 4, ["x"] * 4, [True, False, True, False])
    assert fit_irt(t, "irt0_user").params["user"]["a"] == pytest.approx(0.0, abs=1e-6)
    t = _irt_table(["a"] * 4, ["x"] * 4, [True, True, True, False])
    assert fit_irt(t, "irt0_user").params["user"]["a"] == pytest.approx(math.log(3), abs=1e-5)


def test_irt0_item_sign():
    t = _irt_table(["a"] * 4, ["x"] * 4, [True, True, True, False])
    m = fit_irt(t, "irt0_item")
    assert m.params["item"]["x"] == pytest.approx(-math.log(3), abs=1e-5)
    assert m.predict(t)[0] == pytest.approx(0.75, abs=1e-6)


def test_irt1_needs_penalty():
    t = _irt_table(["a", "b"], ["x", "y"], [True, False])
    with pytest.raises(ValueError, match="unidentifiable without penalty"):
        fit_irt(t, "irt1", l2=0.0)


def test_irt1_recovers_differences():
    rng = np.random.default_rng(7)
    th = rng.normal(0, 1, 50)
    be = rng.normal(0, 1, 40)
    u = rng.integers(0, 50, 10_000)
    i = rng.integers(0, 40, 10_000)
    y = rng.random(10_000) < 1 / (1 + np.exp(-(th[u] - be[i])))
    m = fit_irt(_irt_table(u, i, y), "irt1", l2=0.01)
    est = np.array([m.params["user"][str(a)] - m.params["item"][str(b)] for a, b in zip(u, i)])
    assert np.corrcoef(est, th[u] - be[i])[0, 1] > 0.95


def test_irt_unseen_falls_back():
    t = _irt_table(["a", "a", "b", "b"], ["x", "y", "x", "y"], [True, True, False, True])
    m = fit_irt(t, "irt1", l2=1.0)
    p = m.predict(_irt_table(["zz"], ["qq"], [True]))[0]
    fb = m.fallbacks["user"] - m.fallbacks["item"]
    assert p == pytest.approx(1 / (1 + math.exp(-fb)))


def test_map_fits_beat_random_perturbations():
    rng = np.random.default_rng(8)
    u = rng.integers(0, 8, 400)
    i = rng.integers(0, 6, 400)
    y = rng.random(400) < 0.6
    t = _irt_table(u, i, y)
    l2 = 0.5
    m = fit_irt(t, "irt1", l2=l2)
    users = sorted(m.params["user"])
    items = sorted(m.params["item"])
    w = np.array([m.params["user"][a] for a in users] + [m.params["item"][b] for b in items])
    X = (np.searchsorted(users, u.astype(str)), len(users) + np.searchsorted(items, i.astype(str)))
    best = logistic_objective(w, X, y, l2, np.ones(len(w)))[0]
    for _ in range(100):
        assert logistic_objective(w + rng.normal(0, 0.05, len(w)), X, y, l2, np.ones(len(w)))[0] >= best - 1e-9


def _hist_table(H, y):
    m = len(y)
    vecs = [FeatureVector(1.0, 2, 1, "u", "i", tuple(H[j])) for j in range(m)]
    return FeatureTable.from_vectors(vecs, y)


def test_logreg_separable_stays_finite():
    H = np.zeros((40, 16))
    H[:, 0] = np.r_[np.zeros(20), np.ones(20)]
    H[:, 1] = np.arange(40)
    y = np.r_[np.zeros(20, bool), np.ones(20, bool)]
    m = fit_logreg(_hist_table(H, y), l2=1.0)
    assert all(np.isfinite(m.params["coef"])) and max(abs(c) for c in m.params["coef"]) < 10


def test_logreg_constant_features():
    H = np.ones((30, 16))
    y = np.r_[np.ones(20, bool), np.zeros(10, bool)]
    m = fit_logreg(_hist_table(H, y), l2=1.0)
    assert m.params["coef"] == [0.0] * 16
    assert len(m.fit_metadata["warnings"]) == 16
    assert m.predict(_hist_table(H, y))[0] == pytest.approx(2 / 3, abs=1e-6)


def test_logreg_sign_pattern():
    rng = np.random.default_rng(9)
    H = rng.normal(size=(10_000, 16))
    beta = np.zeros(16)
    beta[[0, 3, 9]] = [1.0, -1.5, 0.8]
    y = rng.random(10_000) < 1 / (1 + np.exp(-(H @ beta)))
    m = fit_logreg(_hist_table(H, y), l2=1e-3)
    coef = np.array(m.params["coef"])
    assert np.sign(coef[[0, 3, 9]]).tolist() == [1.0, -1.0, 1.0]
    assert np.max(np.abs(np.delete(coef, [0, 3, 9]))) < 0.1


def test_feature_table_history_stats():
    h = InteractionHistory("u", "i", (
        Interaction(0.0, True, None, 1, 1),
        Interaction(1.0, False, 1.0, 2, 2),
        Interaction(4.0, True, 3.0, 3, 1),
    ))
    t = FeatureTable.from_histories([h])
    assert np.isnan(t.hist[0]).all()
    # interval stats of [1] with outcomes [1]
    assert t.hist[1].tolist() == [1, 1, 1, 1, 0, 1, 1, 1] + [1, 1, 1, 1, 0, 1, 1, 1]
    # intervals [1, 3], outcomes [1, 0]
    assert t.hist[2].tolist() == [2, 2, 1, 3, 2, 2, 1, 3] + [0.5, 0.5, 0, 1, 1, 2, 1, 0]


def test_model_json_round_trip():
    ls = generate_logs(20, 10, 5, 0.1, seed=1)
    t = FeatureTable.from_histories(build_histories(ls))
    for ident in (1, 3, 4, 8, 13):
        m = fit_model(ident, t, l2=1.0, time_unit="days")
        back = MemoryModel.from_dict(m.to_dict())
        np.testing.assert_allclose(back.predict(t), m.predict(t))
        assert m.name == get_spec(ident).name
    assert log_likelihood(fit_model(8, t), t.subset(t.has_delay)) < 0
