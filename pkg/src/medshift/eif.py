"""Per-observation efficient influence function values.

D^j = S^j + S^{j,A}, with the S^j body written through the ratio forms
H^1 = (g_delta/g)(b/d) and H^2 = (g_delta/e)(b/d) so that no density of Z
given (L, A, W) is needed. All integrals over treatment levels are finite sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EstimationError
from .intervene import IDENTITY, InterventionSpec, post_density, shift_targets
from .nuisance import NuisanceTables, l_prob

BRANCHES = ("mtp", "tilt", "odds")


@dataclass
class Observed:
    """Observed level indices (z, l, a) and the outcome of each row."""

    z: np.ndarray
    l: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.intp)
        self.l = np.asarray(self.l, dtype=np.intp)
        self.a = np.asarray(self.a, dtype=np.intp)
        self.y = np.asarray(self.y, dtype=float)


@dataclass
class EifTerms:
    """One D^j column split into the pieces weight stabilization rescales."""

    j: int
    resid: np.ndarray     # H^j (y - m)
    h_ratio: np.ndarray   # H^j
    center: np.ndarray    # (g_delta/g) x centered L/Z terms
    plug: np.ndarray      # integral over a of ubar g_delta (j=1) or u(z,.) g_delta (j=2)
    score_a: np.ndarray   # treatment-model score S^{j,A}
    ratio: np.ndarray     # g_delta/g at the observed treatment

    @property
    def d(self) -> np.ndarray:
        return self.resid + self.center + self.plug + self.score_a

    @property
    def s_body(self) -> np.ndarray:
        return self.resid + self.center + self.plug


def default_branch(spec: InterventionSpec) -> str:
    if spec.kind == "shift":
        return "mtp"
    if spec.kind == "odds_tilt":
        return "odds"
    return "tilt"


def _rows(n):
    return np.arange(n)


def h_ratio(j: int, eta: NuisanceTables, gd: np.ndarray, obs: Observed) -> np.ndarray:
    i = _rows(eta.n)
    bd = l_prob(eta.b[i, obs.a], obs.l) / l_prob(eta.d[i, obs.z, obs.a], obs.l)
    if j == 1:
        return gd[i, obs.a] / eta.g[i, obs.a] * bd
    return gd[i, obs.a] / eta.e[i, obs.z, obs.a] * bd


def score_a(j: int, eta: NuisanceTables, spec: InterventionSpec, gd: np.ndarray,
            obs: Observed, branch: str | None = None) -> np.ndarray:
    """Efficient score of the treatment model for the chosen intervention."""
    branch = branch or default_branch(spec)
    if branch not in BRANCHES:
        raise ConfigError(f"unknown score branch {branch!r}")
    i = _rows(eta.n)
    f = eta.ubar if j == 1 else eta.q
    if branch == "mtp":
        if spec.kind not in ("shift", "identity"):
            raise ConfigError("the modified-treatment-policy score needs a shift intervention")
        if spec.kind == "identity":
            targets = np.broadcast_to(np.arange(eta.n_a), eta.g.shape)
        else:
            targets = shift_targets(spec, eta.g)
        f_shift = np.take_along_axis(f, targets, axis=1)
        return f_shift[i, obs.a] - (f_shift * eta.g).sum(axis=1)
    if branch == "tilt":
        if spec.kind == "shift" and not spec.is_identity:
            raise ConfigError("the tilt score does not apply to a shift intervention")
        ratio = gd[i, obs.a] / eta.g[i, obs.a]
        return ratio * (f[i, obs.a] - (f * gd).sum(axis=1))
    # closed form for binary A coded {0, 1}, odds multiplier delta'
    if eta.n_a != 2 or not np.array_equal(eta.a_values, [0.0, 1.0]):
        raise ConfigError("the closed-form odds score requires a binary treatment coded 0/1")
    if spec.kind == "odds_tilt":
        odds = spec.delta
    elif spec.kind == "exp_tilt":
        odds = float(np.exp(spec.delta))
    elif spec.is_identity:
        odds = 1.0
    else:
        raise ConfigError("the closed-form odds score needs a tilt intervention")
    qj = eta.q1 if j == 1 else eta.q2
    g0, g1 = eta.g[:, 0], eta.g[:, 1]
    return odds * qj * (obs.a - g1) / (odds * g1 + g0) ** 2


def eif_terms(j: int, eta: NuisanceTables, spec: InterventionSpec, obs: Observed,
              branch: str | None = None) -> EifTerms:
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    gd = post_density(spec, eta.g, eta.a_values)
    i = _rows(eta.n)
    H = h_ratio(j, eta, gd, obs)
    resid = H * (obs.y - eta.m[i, obs.z, obs.l, obs.a])
    ratio = gd[i, obs.a] / eta.g[i, obs.a]
    if j == 1:
        centered = (eta.v[i, obs.l, obs.a] - eta.vbar[i, obs.a]
                    + eta.u[i, obs.z, obs.a] - eta.ubar[i, obs.a])
        plug = (eta.ubar * gd).sum(axis=1)
    else:
        centered = eta.s[i, obs.l, obs.a] - eta.sbar[i, obs.a]
        plug = (eta.u[i, obs.z, :] * gd).sum(axis=1)
    sa = score_a(j, eta, spec, gd, obs, branch)
    out = EifTerms(j=j, resid=resid, h_ratio=H, center=ratio * centered,
                   plug=plug, score_a=sa, ratio=ratio)
    if not np.all(np.isfinite(out.d)):
        raise EstimationError("non-finite influence function values; check nuisance clamping")
    return out


def eif_d(j: int, eta: NuisanceTables, spec: InterventionSpec, obs: Observed,
          branch: str | None = None) -> np.ndarray:
    return eif_terms(j, eta, spec, obs, branch).d


@dataclass
class EifColumns:
    """The three columns the effect estimators combine."""

    d1_null: EifTerms
    d1_delta: EifTerms
    d2_delta: EifTerms

    @property
    def direct(self) -> np.ndarray:
        return self.d1_null.d - self.d2_delta.d

    @property
    def indirect(self) -> np.ndarray:
        return self.d2_delta.d - self.d1_delta.d

    @property
    def total(self) -> np.ndarray:
        return self.d1_null.d - self.d1_delta.d


def eif_columns(eta: NuisanceTables, spec: InterventionSpec, obs: Observed,
                branch: str | None = None) -> EifColumns:
    null_branch = "mtp" if spec.kind == "shift" else "tilt"
    return EifColumns(
        d1_null=eif_terms(1, eta, IDENTITY, obs, null_branch),
        d1_delta=eif_terms(1, eta, spec, obs, branch),
        d2_delta=eif_terms(2, eta, spec, obs, branch),
    )


def stabilize_terms(t: EifTerms) -> EifTerms:
    """Divide the residual piece by mean(H^j) and the centered and treatment
    score pieces by mean(g_delta/g)."""
    mh = float(np.mean(t.h_ratio))
    mr = float(np.mean(t.ratio))
    if not (mh > 0 and mr > 0):
        raise EstimationError("weight stabilization needs positive empirical mean weights")
    return EifTerms(j=t.j, resid=t.resid / mh, h_ratio=t.h_ratio / mh, center=t.center / mr,
                    plug=t.plug, score_a=t.score_a / mr, ratio=t.ratio / mr)


def stabilize(cols: EifColumns) -> EifColumns:
    return EifColumns(*(stabilize_terms(t) for t in (cols.d1_null, cols.d1_delta, cols.d2_delta)))
