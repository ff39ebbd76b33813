import math

import numpy as np
import pytest

from medshift.data import Dataset
from medshift.errors import ConfigError
from medshift.estimate import AnalysisConfig, estimate_effects, onestep, tmle, wald_ci
from medshift.intervene import IDENTITY, InterventionSpec
from medshift.law import build_sim_dgp, oracle_effects, sample, true_nuisances
from medshift.learn import fit_nuisances, make_folds

ODDS2 = InterventionSpec("odds_tilt", 2.0)


@pytest.fixture(scope="module")
def fitted():
    law = build_sim_dgp()
    data = sample(law, 2000, 5)
    cf = fit_nuisances(data, make_folds(data.n, 5, 5))
    return law, data, cf


def test_wald_ci_values():
    lo, hi = wald_ci(0.0, 1.0, 0.05)
    assert hi == pytest.approx(1.959963984540054, abs=1e-12) and lo == -hi
    assert wald_ci(0.3, 0.0) == (0.3, 0.3)
    assert wald_ci(0.0, 1.0, 0.32)[1] == pytest.approx(0.994457883209753, abs=1e-12)
    with pytest.raises(ConfigError):
        wald_ci(0.0, -1.0)
    with pytest.raises(ConfigError):
        wald_ci(0.0, 1.0, 1.0)


@pytest.mark.parametrize("spec", [ODDS2, InterventionSpec("odds_tilt", 0.5), InterventionSpec("exp_tilt", 1.0)],
                         ids=lambda s: f"{s.kind}{s.delta}")
def test_onestep_decomposition(fitted, spec):
    _, data, cf = fitted
    est = onestep(data, cf.tables, spec)
    c = est.eif
    total = float(np.mean(c.d1_null.d - c.d1_delta.d))
    assert abs(est.psi_d + est.psi_i - total) <= 1e-12


def test_identity_gives_opposite_effects(fitted):
    _, data, cf = fitted
    est = onestep(data, cf.tables, IDENTITY)
    assert est.psi_d == pytest.approx(-est.psi_i, abs=1e-15)


def test_onestep_near_oracle(fitted):
    law, data, cf = fitted
    est = onestep(data, cf.tables, ODDS2)
    pd, pi = oracle_effects(law, ODDS2)
    assert abs(est.psi_d - pd) <= 4 * est.se_d
    assert abs(est.psi_i - pi) <= 4 * est.se_i


def test_onestep_at_true_nuisances_is_unbiased_for_large_n():
    law = build_sim_dgp()
    data = sample(law, 200000, 9)
    eta = true_nuisances(law).take(data.w_key)
    est = onestep(data, eta, ODDS2)
    pd, pi = oracle_effects(law, ODDS2)
    assert abs(est.psi_d - pd) <= 4 * est.se_d and abs(est.psi_i - pi) <= 4 * est.se_i


def test_stabilized_onestep_close_to_raw():
    data = sample(build_sim_dgp(), 5000, 12)
    cf = fit_nuisances(data, make_folds(data.n, 5, 12))
    a = onestep(data, cf.tables, ODDS2)
    b = onestep(data, cf.tables, ODDS2, stabilize_weights=True)
    assert b.diagnostics["stabilized"] and not a.diagnostics["stabilized"]
    assert abs(a.psi_d - b.psi_d) < 5 * a.se_d and abs(a.psi_i - b.psi_i) < 5 * a.se_i


def test_tmle_scope_errors(fitted, sim_law4):
    _, data, cf = fitted
    with pytest.raises(ConfigError, match="shift"):
        tmle(data, cf.tables, InterventionSpec("shift", 1))
    d4 = sample(sim_law4, 400, 0)
    cf4 = fit_nuisances(d4, make_folds(d4.n, 2, 0))
    with pytest.raises(ConfigError, match="binary"):
        tmle(d4, cf4.tables, InterventionSpec("exp_tilt", 1.0))


def test_tmle_solves_score_equations(fitted):
    _, data, cf = fitted
    est = tmle(data, cf.tables, ODDS2)
    diag = est.diagnostics
    assert diag["converged"]
    assert diag["score_gap_d"] <= diag["tol_d"] and diag["score_gap_i"] <= diag["tol_i"]
    n = data.n
    sd = float(np.std(est.eif.direct, ddof=1))
    assert abs(float(np.mean(est.eif.direct)) - est.psi_d) <= sd / (math.sqrt(n) * math.log(n))


def test_tmle_tight_tolerance(fitted):
    _, data, cf = fitted
    est = tmle(data, cf.tables, ODDS2, tol=1e-8)
    assert est.diagnostics["converged"]
    assert est.diagnostics["score_gap_d"] <= 1e-8 and est.diagnostics["score_gap_i"] <= 1e-8


def test_tmle_agrees_with_onestep(fitted):
    _, data, cf = fitted
    a = onestep(data, cf.tables, ODDS2)
    b = tmle(data, cf.tables, ODDS2)
    assert abs(a.psi_d - b.psi_d) <= 3 * max(a.se_d, b.se_d)
    assert abs(a.psi_i - b.psi_i) <= 3 * max(a.se_i, b.se_i)
    # plug-in effects are differences of means of probabilities
    assert -1 <= b.psi_d <= 1 and -1 <= b.psi_i <= 1


def test_estimate_effects_deterministic():
    data = sample(build_sim_dgp(), 600, 3)
    cfg = AnalysisConfig(folds=3)
    a = estimate_effects(data, [ODDS2], cfg, seed=1)
    b = estimate_effects(data, [ODDS2], cfg, seed=1)
    assert [e.to_json() for e in a] == [e.to_json() for e in b]
    assert [e.estimator for e in a] == ["onestep", "tmle"]


def test_outcome_scale_is_restored():
    base = sample(build_sim_dgp(), 800, 4)
    rng = np.random.default_rng(0)
    y01 = np.clip(base.y * 0.8 + 0.1 * rng.random(base.n), 0, 1)
    y01[0], y01[1] = 0.0, 1.0
    d01 = Dataset(w=base.w, a=base.a, l=base.l, z=base.z, y=y01)
    dsc = Dataset.from_columns(w=base.w, a=base.a, l=base.l, z=base.z, y=10.0 * y01 - 3.0)
    assert dsc.y_scale == pytest.approx(10.0)
    cfg = AnalysisConfig(folds=3, estimator="onestep")
    e01 = estimate_effects(d01, [ODDS2], cfg, seed=2)[0]
    esc = estimate_effects(dsc, [ODDS2], cfg, seed=2)[0]
    assert esc.psi_d == pytest.approx(10.0 * e01.psi_d, rel=1e-10, abs=1e-14)
    assert esc.se_i == pytest.approx(10.0 * e01.se_i, rel=1e-10)


def test_analysis_config_validation():
    with pytest.raises(ConfigError):
        AnalysisConfig(estimator="bayes")
    with pytest.raises(ConfigError):
        AnalysisConfig(folds=1)


def test_effect_json_and_eif_csv(fitted):
    _, data, cf = fitted
    est = onestep(data, cf.tables, ODDS2)
    js = est.to_json()
    assert js["intervention"] == {"kind": "odds_tilt", "delta": 2.0} and js["n"] == data.n
    lines = est.eif_csv().splitlines()
    assert lines[0] == "row,d1_null,d1_delta,d2_delta" and len(lines) == data.n + 1
