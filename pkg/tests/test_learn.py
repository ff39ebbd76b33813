import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit, logit

from conftest import random_law
from medshift.errors import ConfigError, EstimationError
from medshift.law import build_sim_dgp, sample, true_nuisances
from medshift.learn import (Column, InterceptOnly, LearnerChoice, LearnerConfig, LogisticMainTerms,
                            SaturatedStratum, clamp_binary, clamp_categorical, fit_logistic_irls,
                            fit_nuisances, full_sample_plan, make_folds)

SAT0 = LearnerChoice("saturated", 0.0)


def _config(path="exact", alpha=0.0, clamp=(1e-9, 1 - 1e-9)):
    c = LearnerChoice("saturated", alpha)
    return LearnerConfig(learners={k: c for k in "mgebdrh"}, secondary=c, clamp=clamp, path=path)


# IRLS ------------------------------------------------------------------------


def test_irls_intercept_is_logit_of_mean():
    y = np.array([1.0, 0, 0, 0] * 25)
    res = fit_logistic_irls(None, y)
    assert res.coef[0] == pytest.approx(logit(0.25), abs=1e-10)


@given(p=st.floats(0.02, 0.98), n=st.integers(5, 200))
def test_irls_intercept_property(p, n):
    y = np.full(n, p)
    assert abs(fit_logistic_irls(None, y).coef[0] - logit(p)) <= 1e-10


def test_irls_empty_model_returns_offset():
    res = fit_logistic_irls(None, np.array([0.0, 1.0, 1.0]), offset=np.array([0.3, -1.0, 2.0]),
                            intercept=False)
    assert res.coef.shape == (0,) and res.iterations == 0


def test_irls_saturated_recovers_cell_means():
    x = np.repeat([0.0, 1.0], 10)
    y = np.r_[np.r_[np.ones(2), np.zeros(8)], np.r_[np.ones(8), np.zeros(2)]]
    res = fit_logistic_irls(x, y)
    p = expit(res.coef[0] + res.coef[1] * np.array([0.0, 1.0]))
    assert np.allclose(p, [0.2, 0.8], atol=1e-8)


def test_irls_weights_and_offset():
    rng = np.random.default_rng(0)
    x = rng.normal(size=400)
    off = 0.3 * rng.normal(size=400)
    y = (rng.random(400) < expit(0.5 - x + off)).astype(float)
    w = rng.random(400) + 0.5
    res = fit_logistic_irls(x, y, weights=w, offset=off)
    p = expit(res.coef[0] + res.coef[1] * x + off)
    X = np.column_stack([np.ones(400), x])
    assert np.max(np.abs(X.T @ (w * (y - p)))) / w.sum() <= 1e-10


def test_irls_separation_warns_and_ridges():
    x = np.arange(10.0)
    y = (x > 4.5).astype(float)
    with pytest.warns(RuntimeWarning, match="separated"):
        res = fit_logistic_irls(x, y)
    assert res.ridge > 0 and np.all(np.isfinite(res.coef))


def test_irls_loglik_monotone():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 3))
    y = (rng.random(300) < expit(x @ [1.0, -0.5, 0.25])).astype(float)
    path = fit_logistic_irls(x, y).loglik_path
    assert len(path) >= 2
    assert all(b >= a - 1e-12 * abs(a) for a, b in zip(path, path[1:]))


def test_irls_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        fit_logistic_irls(None, np.array([0.5, 1.5]))
    with pytest.raises(ConfigError):
        fit_logistic_irls(None, np.array([0.5, 0.5]), weights=np.array([1.0, -1.0]))


# folds -----------------------------------------------------------------------


def test_folds_balanced():
    plan = make_folds(10, 5, 0)
    assert np.bincount(plan.assignment).tolist() == [2] * 5
    assert sorted(np.bincount(make_folds(7, 3, 0).assignment).tolist()) == [2, 2, 3]


def test_folds_deterministic_and_partition():
    a, b = make_folds(103, 5, 42), make_folds(103, 5, 42)
    assert np.array_equal(a.assignment, b.assignment)
    assert not np.array_equal(a.assignment, make_folds(103, 5, 43).assignment)
    for j in range(5):
        assert np.intersect1d(a.validation(j), a.training(j)).size == 0
        assert a.validation(j).size + a.training(j).size == 103


def test_folds_errors():
    with pytest.raises(ConfigError):
        make_folds(3, 5, 0)
    with pytest.raises(ConfigError):
        make_folds(10, 1, 0)


# learners --------------------------------------------------------------------


def _cols(*codes_levels):
    return [Column(c, lv) for c, lv in codes_levels]


def test_saturated_smoothing_formula():
    x = np.array([0, 0, 0, 1, 1])
    y = np.array([1.0, 0.0, 1.0, 0.0, 0.0])
    f = SaturatedStratum("binary", alpha=0.5).fit(_cols((x, [0, 1])), y)
    p = f.predict(_cols((np.array([0, 1]), [0, 1])))
    assert np.allclose(p, [(2 + 0.5) / (3 + 1), 0.5 / (2 + 1)])


def test_saturated_categorical_and_empty_stratum():
    x = np.array([0, 0, 1])
    y = np.array([0, 2, 1])
    f = SaturatedStratum("categorical", 3, alpha=1.0).fit(_cols((x, [0, 1, 2])), y)
    p = f.predict(_cols((np.array([0, 2]), [0, 1, 2])))
    assert np.allclose(p, [[2 / 5, 1 / 5, 2 / 5], [1 / 3] * 3])
    f0 = SaturatedStratum("binary", alpha=0.0).fit(_cols((x, [0, 1, 2])), y.clip(0, 1).astype(float))
    with pytest.raises(EstimationError, match="empty stratum"):
        f0.predict(_cols((np.array([2]), [0, 1, 2])))


def test_intercept_only_is_training_mean():
    y = np.array([0.0, 1.0, 1.0, 1.0])
    f = InterceptOnly().fit(_cols((np.zeros(4, int), [0])), y)
    assert np.all(f.predict(_cols((np.zeros(3, int), [0]))) == 0.75)


@pytest.mark.filterwarnings("ignore:logistic fit looks separated")
def test_main_terms_categorical_is_pmf():
    rng = np.random.default_rng(2)
    x = rng.integers(0, 3, 500)
    y = np.minimum(rng.integers(0, 3, 500), x)
    f = LogisticMainTerms("categorical", 3).fit(_cols((x, [0, 1, 2])), y)
    p = f.predict(_cols((np.arange(3), [0, 1, 2])))
    assert np.allclose(p.sum(axis=1), 1.0) and np.all(p >= 0)


def test_learner_config_json_and_misspecify():
    cfg = LearnerConfig(learners={"g": "main_terms"})
    back = LearnerConfig.from_json(cfg.to_json())
    assert back.to_json() == cfg.to_json()
    mis = cfg.misspecify("e")
    assert mis.learners["e"].kind == "intercept_only" and mis.learners["g"].kind == "main_terms"
    with pytest.raises(ConfigError):
        cfg.misspecify("u")
    with pytest.raises(ConfigError):
        LearnerConfig(learners={"zz": "saturated"})
    with pytest.raises(ConfigError):
        LearnerConfig(clamp=(0.6, 0.9))


# clamping --------------------------------------------------------------------


def test_clamp_binary_counts():
    diag = {}
    out = clamp_binary(np.array([0.0, 0.5, 1.0]), (0.01, 0.99), diag, "m")
    assert out.tolist() == [0.01, 0.5, 0.99] and diag["clamped_m"] == 2


@given(seed=st.integers(0, 10**6), k=st.integers(2, 5))
def test_clamp_categorical_is_bounded_pmf(seed, k):
    p = np.random.default_rng(seed).dirichlet(np.full(k, 0.2), size=20)
    lo, hi = 0.01, 0.95
    out = clamp_categorical(p, (lo, hi), {}, "g")
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)
    # rows already inside the bounds are untouched
    ok = np.all((p >= lo) & (p <= hi), axis=1)
    assert np.array_equal(out[ok], p[ok] / p[ok].sum(axis=1, keepdims=True))


def test_clamp_categorical_infeasible():
    with pytest.raises(ConfigError):
        clamp_categorical(np.full((1, 4), 0.25), (0.3, 0.9), {}, "g")


# fold fits and secondaries ---------------------------------------------------


@pytest.fixture(scope="module")
def random_data():
    law = random_law(np.random.default_rng(3), a_levels=(0, 1), z_levels=(0, 1, 2))
    return law, sample(law, 5000, 1)


def test_coherent_fits_are_consistent(random_data):
    _, data = random_data
    t = fit_nuisances(data, full_sample_plan(data.n), _config()).tables
    # Bayes-coherent r, h, e, d all come from one joint fit
    assert np.allclose(t.h.sum(axis=1), 1.0) and np.allclose(t.e.sum(axis=2), 1.0)
    assert np.allclose(np.einsum("iza,ia->iz", t.r, t.g), t.h, atol=1e-12)
    assert np.allclose(t.e * t.h[:, :, None], t.r * t.g[:, None, :], atol=1e-12)


@pytest.mark.parametrize("plan", ["full", "crossfit"])
def test_regression_path_matches_exact_sums(random_data, plan):
    _, data = random_data
    folds = full_sample_plan(data.n) if plan == "full" else make_folds(data.n, 5, 0)
    ex = fit_nuisances(data, folds, _config("exact")).tables
    rg = fit_nuisances(data, folds, _config("regression")).tables
    for name in ("v", "s", "ubar", "q"):
        assert np.max(np.abs(getattr(ex, name) - getattr(rg, name))) <= 1e-10, name


def test_constant_outcome_collapses_secondaries(random_data):
    _, data = random_data
    d2 = data.subset(np.arange(data.n))
    d2.y = np.full(data.n, 0.4)
    cfg = _config(alpha=0.5, clamp=(1e-3, 1 - 1e-3))
    cfg.learners["m"] = LearnerChoice("intercept_only")
    t = fit_nuisances(d2, make_folds(d2.n, 3, 0), cfg).tables
    for name in ("u", "ubar", "v", "s"):
        assert np.allclose(getattr(t, name), 0.4, atol=1e-12)
    assert np.allclose(t.q1, 0.0, atol=1e-12) and np.allclose(t.q2, 0.0, atol=1e-12)


def test_cross_fit_uses_only_training_rows(random_data):
    _, data = random_data
    folds = make_folds(data.n, 5, 7)
    base = fit_nuisances(data, folds, _config(alpha=0.5)).tables
    # flip the outcome of one validation row of fold 0: its own predictions must not move
    i = folds.validation(0)[0]
    d2 = data.subset(np.arange(data.n))
    d2.y = data.y.copy()
    d2.y[i] = 1.0 - d2.y[i]
    moved = fit_nuisances(d2, folds, _config(alpha=0.5)).tables
    fold0 = folds.validation(0)
    assert np.array_equal(base.m[fold0], moved.m[fold0])
    assert not np.array_equal(base.m[folds.validation(1)], moved.m[folds.validation(1)])


def test_clamp_applies_to_fits(random_data):
    _, data = random_data
    t = fit_nuisances(data, make_folds(data.n, 5, 0), _config(alpha=0.0, clamp=(0.05, 0.95))).tables
    for name in ("m", "b", "d"):
        x = getattr(t, name)
        assert x.min() >= 0.05 - 1e-15 and x.max() <= 0.95 + 1e-15


def test_crossfit_g_close_to_truth():
    law = build_sim_dgp()
    data = sample(law, 20000, 11)
    t = fit_nuisances(data, make_folds(data.n, 5, 0)).tables
    truth = true_nuisances(law)
    g_true = truth.g[data.w_key]
    # per-stratum standard error of a binomial proportion
    counts = np.bincount(data.w_key, minlength=law.space.n_w)[data.w_key]
    se = np.sqrt(g_true[:, 1] * g_true[:, 0] / counts)
    assert np.all(np.abs(t.g[:, 1] - g_true[:, 1]) <= 3 * se * np.sqrt(5 / 4) + 1e-3)
