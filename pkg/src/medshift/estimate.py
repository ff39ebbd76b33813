"""Cross-fitted one-step and targeted minimum loss estimators of the direct and
indirect effects, with Wald inference."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from .data import Dataset
from .eif import EifColumns, Observed, eif_columns, stabilize
from .errors import ConfigError, EstimationError, IRLSConvergenceError
from .intervene import IDENTITY, InterventionSpec, post_density
from .learn import CrossFit, FoldPlan, LearnerConfig, fit_logistic_irls, fit_nuisances, make_folds
from .nuisance import NuisanceTables, exact_q, exact_s, exact_u, exact_ubar, exact_v, l_prob

# tilted probabilities are kept this far from 0 and 1 so logits stay finite
TILT_EPS = 1e-9


def wald_ci(point: float, se: float, alpha: float = 0.05) -> tuple:
    if se < 0:
        raise ConfigError("standard error must be nonnegative")
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    half = float(norm.ppf(1.0 - alpha / 2.0)) * se
    return (point - half, point + half)


@dataclass
class EffectEstimate:
    estimator: str
    spec: InterventionSpec
    psi_d: float
    psi_i: float
    se_d: float
    se_i: float
    ci_d: tuple
    ci_i: tuple
    n: int
    alpha: float = 0.05
    eif: EifColumns | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def psi_total(self) -> float:
        return self.psi_d + self.psi_i

    def to_json(self) -> dict:
        return {
            "estimator": self.estimator, "intervention": self.spec.to_json(), "n": self.n,
            "alpha": self.alpha, "psi_d": self.psi_d, "psi_i": self.psi_i,
            "se_d": self.se_d, "se_i": self.se_i, "ci_d": list(self.ci_d), "ci_i": list(self.ci_i),
            "diagnostics": self.diagnostics,
        }

    def eif_csv(self) -> str:
        if self.eif is None:
            raise EstimationError("no influence function values stored")
        buf = io.StringIO()
        buf.write("row,d1_null,d1_delta,d2_delta\n")
        c = self.eif
        for i, (a, b, d) in enumerate(zip(c.d1_null.d, c.d1_delta.d, c.d2_delta.d)):
            buf.write(f"{i},{a!r},{b!r},{d!r}\n")
        return buf.getvalue()


def _summarize(name, spec, direct, indirect, alpha, scale, cols, diag, psi=None):
    n = len(direct)
    pd = float(np.mean(direct)) if psi is None else psi[0]
    pi = float(np.mean(indirect)) if psi is None else psi[1]
    sd = float(np.std(direct, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    si = float(np.std(indirect, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    pd, pi, sd, si = pd * scale, pi * scale, sd * scale, si * scale
    return EffectEstimate(name, spec, pd, pi, sd, si, wald_ci(pd, sd, alpha), wald_ci(pi, si, alpha),
                          n, alpha, cols, diag)


def onestep(data: Dataset, eta: NuisanceTables, spec: InterventionSpec, stabilize_weights: bool = False,
            alpha: float = 0.05, branch: str | None = None) -> EffectEstimate:
    """psi_D = Pn(D1_0 - D2_delta), psi_I = Pn(D2_delta - D1_delta) from fold-matched columns."""
    obs = data.observed()
    cols = eif_columns(eta, spec, obs, branch)
    if stabilize_weights:
        cols = stabilize(cols)
    diag = {k: int(v) for k, v in sorted(eta.diagnostics.items())}
    diag["stabilized"] = bool(stabilize_weights)
    return _summarize("onestep", spec, cols.direct, cols.indirect, alpha, data.y_scale, cols, diag)


# TMLE ------------------------------------------------------------------------


def _clip(p):
    return np.clip(p, TILT_EPS, 1.0 - TILT_EPS)


def _tilt(name, y, X, offset):
    try:
        return fit_logistic_irls(X, y, offset=offset, intercept=False).coef
    except IRLSConvergenceError as exc:
        exc.submodel = name
        raise EstimationError(f"tilting fit for {name} failed: {exc}") from exc


def _plugins(eta: NuisanceTables, gd: np.ndarray, obs: Observed) -> tuple:
    i = np.arange(eta.n)
    u_z = eta.u[i, obs.z, :]                          # u(Z_i, a, W_i)
    psi_d = np.mean((eta.ubar * eta.g).sum(axis=1) - (u_z * gd).sum(axis=1))
    psi_i = np.mean(((u_z - eta.ubar) * gd).sum(axis=1))
    return float(psi_d), float(psi_i)


def _check_tmle_scope(data: Dataset, spec: InterventionSpec):
    if data.n_a != 2 or not np.array_equal(data.a_levels, [0.0, 1.0]):
        raise ConfigError("the TMLE needs a binary treatment coded 0/1; use the one-step estimator")
    if spec.kind == "shift":
        raise ConfigError("the TMLE is not available for shift interventions; use the one-step estimator")


def _odds(spec: InterventionSpec) -> float:
    if spec.kind == "odds_tilt":
        return spec.delta
    if spec.kind == "exp_tilt":
        return math.exp(spec.delta)
    return 1.0


def tmle(data: Dataset, eta: NuisanceTables, spec: InterventionSpec, max_iter: int = 100,
         alpha: float = 0.05, tol: float | None = None) -> EffectEstimate:
    """Iterated logistic tilting of (m, b, g, ubar) until the efficient score
    equations hold to ``tol`` (default sigma_hat / (sqrt(n) log n))."""
    _check_tmle_scope(data, spec)
    obs = data.observed()
    n = data.n
    i = np.arange(n)
    z, l, a, y = obs.z, obs.l, obs.a, obs.y
    odds = _odds(spec)
    cur = eta
    history = []
    converged = False
    it = 0
    for it in range(max_iter + 1):
        gd = post_density(spec, cur.g, cur.a_values)
        cols = eif_columns(cur, spec, obs, branch="odds")
        psi_d, psi_i = _plugins(cur, gd, obs)
        gap_d = float(np.mean(cols.direct)) - psi_d
        gap_i = float(np.mean(cols.indirect)) - psi_i
        log_n = math.log(n) if n > 1 else 1.0
        tol_d = tol if tol is not None else float(np.std(cols.direct, ddof=1)) / (math.sqrt(n) * log_n)
        tol_i = tol if tol is not None else float(np.std(cols.indirect, ddof=1)) / (math.sqrt(n) * log_n)
        history.append(max(abs(gap_d), abs(gap_i)))
        if abs(gap_d) <= tol_d and abs(gap_i) <= tol_i:
            converged = True
            break
        if it == max_iter:
            break
        cur = _tmle_step(cur, spec, odds, z, l, a, y, i)
    gd = post_density(spec, cur.g, cur.a_values)
    cols = eif_columns(cur, spec, obs, branch="odds")
    psi_d, psi_i = _plugins(cur, gd, obs)
    diag = {k: int(v) for k, v in sorted(eta.diagnostics.items())}
    diag.update(converged=converged, iterations=int(it), score_gap_d=abs(float(np.mean(cols.direct)) - psi_d),
                score_gap_i=abs(float(np.mean(cols.indirect)) - psi_i), tol_d=tol_d, tol_i=tol_i)
    return _summarize("tmle", spec, cols.direct, cols.indirect, alpha, data.y_scale, cols, diag,
                      psi=(psi_d, psi_i))


def _tmle_step(cur: NuisanceTables, spec, odds, z, l, a, y, i) -> NuisanceTables:
    g1 = cur.g[:, 1]
    gd = post_density(spec, cur.g, cur.a_values)
    bd = lambda ll: l_prob(cur.b[:, None, :], ll) / l_prob(cur.d, ll)     # (n, z, a)
    # auxiliary covariates on the full (z, l, a) grid of each row
    H_D = np.stack([bd(0), bd(1)], axis=2) * (1.0 - gd[:, None, None, :] / cur.e[:, :, None, :])
    H_I = np.stack([bd(0), bd(1)], axis=2) * (gd[:, None, None, :] / cur.e[:, :, None, :]
                                              - gd[:, None, None, :] / cur.g[:, None, None, :])
    ratio = gd / cur.g
    dv = cur.v[:, 1, :] - cur.v[:, 0, :]
    ds = cur.s[:, 1, :] - cur.s[:, 0, :]
    K_D = dv - ratio * ds
    K_I = ratio * (ds - dv)
    N2 = (odds * g1 + cur.g[:, 0]) ** 2
    M_D = cur.q1 - odds * cur.q2 / N2
    M_I = odds * (cur.q2 - cur.q1) / N2

    lm = logit(_clip(cur.m))
    beta = _tilt("m", y, np.column_stack([H_D[i, z, l, a], H_I[i, z, l, a]]), lm[i, z, l, a])
    m_new = _clip(expit(lm + beta[0] * H_D + beta[1] * H_I))

    lb = logit(_clip(cur.b))
    alpha_ = _tilt("b", l.astype(float), np.column_stack([K_D[i, a], K_I[i, a]]), lb[i, a])
    b_new = _clip(expit(lb + alpha_[0] * K_D + alpha_[1] * K_I))

    lg = logit(_clip(g1))
    gamma = _tilt("g", a.astype(float), np.column_stack([M_D, M_I]), lg)
    g1_new = _clip(expit(lg + gamma[0] * M_D + gamma[1] * M_I))
    g_new = np.column_stack([1.0 - g1_new, g1_new])

    u = exact_u(m_new, b_new)
    ubar0 = _clip(exact_ubar(u, cur.r))
    gd_new = post_density(spec, g_new, cur.a_values)
    J = gd_new[i, a] / g_new[i, a]
    lu = logit(ubar0)
    kappa = _tilt("ubar", np.clip(u[i, z, a], 0.0, 1.0), np.column_stack([np.ones_like(J), J]), lu[i, a])
    ubar_new = expit(lu + kappa[0] + kappa[1] * (gd_new / g_new))
    return NuisanceTables(
        a_values=cur.a_values, m=m_new, g=g_new, b=b_new, d=cur.d, e=cur.e, r=cur.r, h=cur.h,
        ubar=ubar_new, v=exact_v(m_new, cur.r), s=exact_s(m_new, cur.h), q=exact_q(u, cur.h),
        diagnostics=dict(cur.diagnostics),
    )


# end-to-end ------------------------------------------------------------------


ESTIMATORS = ("onestep", "tmle", "both")


@dataclass
class AnalysisConfig:
    learners: LearnerConfig = field(default_factory=LearnerConfig)
    folds: int = 5
    estimator: str = "both"
    stabilize: bool = False
    alpha: float = 0.05
    max_iter: int = 100

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}")
        if self.folds < 2:
            raise ConfigError("at least two folds are needed for cross-fitting")


def estimate_effects(data: Dataset, specs, config: AnalysisConfig | None = None, seed=0,
                     crossfit: CrossFit | None = None) -> list:
    """Cross-fit once, then run the requested estimators for every intervention."""
    config = config or AnalysisConfig()
    if crossfit is None:
        folds = make_folds(data.n, config.folds, seed)
        crossfit = fit_nuisances(data, folds, config.learners)
    out = []
    for spec in specs:
        spec.check_levels(data.n_a)
        if config.estimator in ("onestep", "both"):
            out.append(onestep(data, crossfit.tables, spec, config.stabilize, config.alpha))
        if config.estimator in ("tmle", "both"):
            out.append(tmle(data, crossfit.tables, spec, config.max_iter, config.alpha))
    return out


__all__ = ["wald_ci", "EffectEstimate", "onestep", "tmle", "AnalysisConfig", "estimate_effects"]
