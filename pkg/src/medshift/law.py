"""Exact discrete joint laws over (W, A, L, Z, Y) and enumeration oracles."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .eif import Observed, eif_columns, eif_terms
from .errors import ConfigError, PositivityError
from .intervene import IDENTITY, SUPPORT_THRESHOLD, InterventionSpec, post_density
from .nuisance import NuisanceTables

MAX_STATES = 10**6
NORM_TOL = 1e-12


@dataclass(frozen=True)
class StateSpace:
    w_levels: tuple
    a_levels: tuple
    z_levels: tuple = (0.0, 1.0)
    w_names: tuple = ()

    def __post_init__(self):
        wl = tuple(tuple(float(x) for x in lv) for lv in self.w_levels)
        object.__setattr__(self, "w_levels", wl)
        object.__setattr__(self, "a_levels", tuple(float(x) for x in self.a_levels))
        object.__setattr__(self, "z_levels", tuple(float(x) for x in self.z_levels))
        if not self.w_names:
            object.__setattr__(self, "w_names", tuple(f"W{k + 1}" for k in range(len(wl))))
        for name, lv in [*zip(self.w_names, wl), ("A", self.a_levels), ("Z", self.z_levels)]:
            if len(lv) == 0:
                raise ConfigError(f"level set of {name} is empty")
            if list(lv) != sorted(set(lv)):
                raise ConfigError(f"levels of {name} must be distinct and ascending")
        if self.n_states > MAX_STATES:
            raise ConfigError(f"state space has {self.n_states} states; limit is {MAX_STATES}")

    @property
    def w_shape(self) -> tuple:
        return tuple(len(lv) for lv in self.w_levels)

    @property
    def n_w(self) -> int:
        return int(np.prod(self.w_shape)) if self.w_levels else 1

    @property
    def shape(self) -> tuple:
        """(nW, nA, nL, nZ, nY) with W strata flattened in lexicographic order."""
        return (self.n_w, len(self.a_levels), 2, len(self.z_levels), 2)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.shape))

    def w_values(self) -> np.ndarray:
        """Covariate values of every W stratum, shape (nW, p)."""
        if not self.w_levels:
            return np.zeros((1, 0))
        return np.array(list(itertools.product(*self.w_levels)), dtype=float)

    def to_json(self) -> dict:
        return {"w_names": list(self.w_names), "w_levels": [list(lv) for lv in self.w_levels],
                "a_levels": list(self.a_levels), "l_levels": [0, 1],
                "z_levels": list(self.z_levels), "y_levels": [0, 1]}

    @classmethod
    def from_json(cls, obj: dict) -> "StateSpace":
        for key, want in (("l_levels", [0, 1]), ("y_levels", [0, 1])):
            if key in obj and [float(x) for x in obj[key]] != want:
                raise ConfigError(f"{key} must be [0, 1]")
        return cls(w_levels=tuple(obj["w_levels"]), a_levels=tuple(obj["a_levels"]),
                   z_levels=tuple(obj.get("z_levels", (0, 1))), w_names=tuple(obj.get("w_names", ())))


@dataclass(frozen=True)
class DiscreteLaw:
    """Joint pmf over the state space, stored as an array of shape ``space.shape``."""

    space: StateSpace
    pmf: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.pmf, dtype=float).reshape(self.space.shape)
        if np.any(~np.isfinite(p)) or np.any(p < 0):
            raise ConfigError("probabilities must be finite and nonnegative")
        total = p.sum()
        if abs(total - 1.0) > NORM_TOL:
            raise ConfigError(f"probabilities sum to {total!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "pmf", p)

    # conditionals --------------------------------------------------------

    def marginal_w(self) -> np.ndarray:
        return self.pmf.sum(axis=(1, 2, 3, 4))

    def states(self) -> np.ndarray:
        """Index tuples (w, a, l, z, y) of every state in lexicographic order."""
        return np.array(list(np.ndindex(*self.space.shape)), dtype=np.intp)

    # io ------------------------------------------------------------------

    def to_json(self) -> dict:
        rows = []
        for st in self.states():
            rows.append({"state": [int(s) for s in st], "p": float(self.pmf[tuple(st)])})
        return {"space": self.space.to_json(), "pmf": rows}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteLaw":
        space = StateSpace.from_json(obj["space"])
        p = np.zeros(space.shape)
        for row in obj["pmf"]:
            st = tuple(int(s) for s in row["state"])
            if len(st) != 5:
                raise ConfigError(f"state {st} must have five indices (w, a, l, z, y)")
            try:
                p[st] = float(row["p"])
            except IndexError:
                raise ConfigError(f"state {st} is outside the state space") from None
        return cls(space, p)

    @classmethod
    def load(cls, path) -> "DiscreteLaw":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# simulation mechanism ----------------------------------------------------------


def expit_printed(x):
    """1 / (1 + exp(x)), the orientation used by the simulation design."""
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(x))


def expit_conventional(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class DgpSpec:
    """Coefficients of the seven Bernoulli mechanisms.

    W1 ~ p_w1, W2 ~ p_w2, W3 ~ w3_base + w3_slope (W1 + W2);
    A ~ expit(a_const + a_num / S) with S = W1 + W2 + W3;
    L ~ expit(l_slope S + l_a A + l_const);
    Z ~ expit(z_w (W1 + W2) + z_a A + z_l L);
    Y ~ expit(y_const - y_scale (y_base + y_l L + y_a A + y_z Z) / (y_den + S)).
    """

    p_w1: float = 0.6
    p_w2: float = 0.3
    w3_base: float = 0.2
    w3_slope: float = 1.0 / 3.0
    a_const: float = 2.0
    a_num: float = 5.0
    l_slope: float = 1.0 / 3.0
    l_a: float = -1.0
    l_const: float = -math.log(2.0) + 0.2
    z_w: float = math.log(3.0)
    z_a: float = 1.0
    z_l: float = -1.0
    y_const: float = 1.0
    y_scale: float = 3.0
    y_base: float = 3.0
    y_l: float = -1.0
    y_a: float = -3.0
    y_z: float = 1.0
    y_den: float = 2.0
    clamp: tuple = (0.001, 0.999)
    orientation: str = "printed"
    a_levels: int = 2
    # only used when a_levels > 2: A ~ Binomial(a_levels - 1, expit_conv(a_multi_const + a_multi_slope S))
    a_multi_const: float = -0.5
    a_multi_slope: float = 0.4

    def __post_init__(self):
        lo, hi = (float(c) for c in self.clamp)
        if not (0.0 < lo < 0.5 < hi < 1.0):
            raise ConfigError(f"clamp must satisfy 0 < lo < 0.5 < hi < 1, got {self.clamp}")
        object.__setattr__(self, "clamp", (lo, hi))
        if self.orientation not in ("printed", "conventional"):
            raise ConfigError("orientation must be 'printed' or 'conventional'")
        if int(self.a_levels) < 2:
            raise ConfigError("a_levels must be at least 2")

    def expit(self, x):
        return expit_printed(x) if self.orientation == "printed" else expit_conventional(x)

    def _c(self, p):
        return float(np.clip(p, *self.clamp))

    def prob_w3(self, w1, w2):
        return self._c(self.w3_base + self.w3_slope * (w1 + w2))

    def prob_a(self, w) -> np.ndarray:
        """P(A = a | w) for a in 0..a_levels-1."""
        s = float(sum(w))
        k = int(self.a_levels) - 1
        if k == 1:
            x = math.inf if s == 0 else self.a_const + self.a_num / s
            p1 = self._c(self.expit(x))
            return np.array([1.0 - p1, p1])
        pi = self._c(expit_conventional(self.a_multi_const + self.a_multi_slope * s))
        return np.array([math.comb(k, a) * pi**a * (1 - pi) ** (k - a) for a in range(k + 1)])

    def prob_l(self, a, w):
        s = float(sum(w))
        return self._c(self.expit(self.l_slope * s + self.l_a * a + self.l_const))

    def prob_z(self, l, a, w):
        return self._c(self.expit(self.z_w * (w[0] + w[1]) + self.z_a * a + self.z_l * l))

    def prob_y(self, z, l, a, w):
        s = float(sum(w))
        inner = self.y_base + self.y_l * l + self.y_a * a + self.y_z * z
        return self._c(self.expit(self.y_const - self.y_scale * inner / (self.y_den + s)))


def _bern(p, x):
    return p if x == 1 else 1.0 - p


def build_sim_dgp(clamp=(0.001, 0.999), orientation: str = "printed",
                  dgp: DgpSpec | None = None, a_levels: int = 2) -> DiscreteLaw:
    """Exact joint law of the simulation mechanism.

    With ``a_levels > 2`` the treatment is binomial on 0..a_levels-1 and the
    other mechanisms are unchanged (used to exercise discrete shifts).
    """
    if dgp is None:
        dgp = DgpSpec(clamp=tuple(clamp), orientation=orientation, a_levels=a_levels)
    lo, hi = dgp.clamp
    space = StateSpace(w_levels=((0, 1),) * 3, a_levels=tuple(range(dgp.a_levels)), z_levels=(0, 1))
    p = np.zeros(space.shape)
    pw1 = float(np.clip(dgp.p_w1, lo, hi))
    pw2 = float(np.clip(dgp.p_w2, lo, hi))
    for wi, w in enumerate(space.w_values()):
        w1, w2, w3 = (int(x) for x in w)
        pw = _bern(pw1, w1) * _bern(pw2, w2) * _bern(dgp.prob_w3(w1, w2), w3)
        pa = dgp.prob_a(w)
        for a in range(dgp.a_levels):
            for l in (0, 1):
                pl = _bern(dgp.prob_l(a, w), l)
                for z in (0, 1):
                    pz = _bern(dgp.prob_z(l, a, w), z)
                    py1 = dgp.prob_y(z, l, a, w)
                    base = pw * pa[a] * pl * pz
                    p[wi, a, l, z, 1] = base * py1
                    p[wi, a, l, z, 0] = base * (1.0 - py1)
    return DiscreteLaw(space, p / p.sum())


# sampling -------------------------------------------------------------------


def sample(law: DiscreteLaw, n: int, seed) -> Dataset:
    """n i.i.d. rows by inverse CDF over the lexicographic state order."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(law.pmf.ravel())
    u = rng.random(n) * cdf[-1]
    flat = np.searchsorted(cdf, u, side="right")
    flat = np.minimum(flat, cdf.size - 1)
    wi, ai, li, zi, yi = np.unravel_index(flat, law.space.shape)
    sp = law.space
    wv = sp.w_values()[wi]
    return Dataset(
        w=wv.reshape(n, -1), a=np.asarray(sp.a_levels)[ai], l=li.astype(float),
        z=np.asarray(sp.z_levels)[zi], y=yi.astype(float), w_names=list(sp.w_names),
        w_levels=[np.asarray(lv) for lv in sp.w_levels], a_levels=np.asarray(sp.a_levels),
        z_levels=np.asarray(sp.z_levels),
    )


# identification --------------------------------------------------------------


def _safe_div(num, den, default):
    out = np.full(np.broadcast(num, den).shape, float(default))
    ok = den > 0
    np.divide(num, np.broadcast_to(den, out.shape), out=out, where=np.broadcast_to(ok, out.shape))
    return out, int((~ok).sum())


def _w_labels(law: DiscreteLaw):
    wv = law.space.w_values()
    names = law.space.w_names

    def label(idx):
        w, a = int(idx[0]), int(idx[1])
        cov = ", ".join(f"{nm}={v:g}" for nm, v in zip(names, wv[w]))
        return f"a={law.space.a_levels[a]:g}, w=({cov})"
    return label


def _check_support(law: DiscreteLaw, gd: np.ndarray, g: np.ndarray, pw: np.ndarray) -> None:
    bad = (gd > SUPPORT_THRESHOLD) & (g <= SUPPORT_THRESHOLD) & (pw[:, None] > 0)
    if bad.any():
        raise PositivityError(f"g_delta > 0 where g = 0 at {_w_labels(law)(np.argwhere(bad)[0])}")


def oracle_theta(law: DiscreteLaw, spec: InterventionSpec, j: int) -> float:
    """Identified functional by direct summation over the state space.

    j = 1 averages the mediator over p(z | a, w), j = 2 over p(z | w).
    """
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    P = law.pmf
    pw = P.sum(axis=(1, 2, 3, 4))
    pwa = P.sum(axis=(2, 3, 4))
    pwal = P.sum(axis=(3, 4))
    pwalz = P.sum(axis=4)
    pwaz = P.sum(axis=(2, 4))
    pwz = P.sum(axis=(1, 2, 4))
    g, _ = _safe_div(pwa, pw[:, None], 1.0 / P.shape[1])
    pl, _ = _safe_div(pwal, pwa[:, :, None], 0.5)
    my, _ = _safe_div(P[..., 1], pwalz, 0.5)
    if j == 1:
        pz, _ = _safe_div(pwaz, pwa[:, :, None], 1.0 / P.shape[3])  # (w, a, z)
    else:
        pz_w, _ = _safe_div(pwz, pw[:, None], 1.0 / P.shape[3])
        pz = np.broadcast_to(pz_w[:, None, :], pwaz.shape)
    gd = post_density(spec, g, np.asarray(law.space.a_levels))
    _check_support(law, gd, g, pw)
    total = 0.0
    for w in range(P.shape[0]):
        if pw[w] == 0:
            continue
        for a in range(P.shape[1]):
            if gd[w, a] == 0:
                continue
            inner = 0.0
            for l in range(2):
                for z in range(P.shape[3]):
                    inner += my[w, a, l, z] * pl[w, a, l] * pz[w, a, z]
            total += pw[w] * gd[w, a] * inner
    return float(total)


def oracle_effects(law: DiscreteLaw, spec: InterventionSpec) -> tuple:
    """(psi_D, psi_I) = (theta_1,0 - theta_2,delta, theta_2,delta - theta_1,delta)."""
    t10 = oracle_theta(law, IDENTITY, 1)
    t2 = oracle_theta(law, spec, 2)
    t1 = oracle_theta(law, spec, 1)
    return t10 - t2, t2 - t1


def true_nuisances(law: DiscreteLaw) -> NuisanceTables:
    """Exact nuisance tables with one row per W stratum.

    Conditionals on zero-mass events take the uniform value and are counted
    in ``diagnostics['degenerate']``.
    """
    P = law.pmf
    nA, nZ = P.shape[1], P.shape[3]
    pw = P.sum(axis=(1, 2, 3, 4))
    pwa = P.sum(axis=(2, 3, 4))
    pwal = P.sum(axis=(3, 4))
    pwalz = P.sum(axis=4)                  # (w, a, l, z)
    pwaz = pwalz.sum(axis=2)               # (w, a, z)
    pwz = pwaz.sum(axis=1)                 # (w, z)
    deg = 0
    g, k = _safe_div(pwa, pw[:, None], 1.0 / nA); deg += k
    b, k = _safe_div(pwal[:, :, 1], pwa, 0.5); deg += k
    m_walz, k = _safe_div(P[..., 1], pwalz, 0.5); deg += k
    d_waz, k = _safe_div(pwalz[:, :, 1, :], pwaz, 0.5); deg += k
    e_wza, k = _safe_div(pwaz.transpose(0, 2, 1), pwz[:, :, None], 1.0 / nA); deg += k
    r_waz, k = _safe_div(pwaz, pwa[:, :, None], 1.0 / nZ); deg += k
    h, k = _safe_div(pwz, pw[:, None], 1.0 / nZ); deg += k
    return NuisanceTables(
        a_values=np.asarray(law.space.a_levels),
        m=m_walz.transpose(0, 3, 2, 1),    # (w, z, l, a)
        g=g, b=b,
        d=d_waz.transpose(0, 2, 1),
        e=e_wza,
        r=r_waz.transpose(0, 2, 1),
        h=h,
        diagnostics={"degenerate": deg},
    )


# expectations under the law ------------------------------------------------


def _support_rows(law: DiscreteLaw):
    st = law.states()
    p = law.pmf.ravel()
    keep = p > 0
    return st[keep], p[keep]


def state_observed(law: DiscreteLaw):
    """(W-stratum index per support state, Observed, weights)."""
    st, p = _support_rows(law)
    obs = Observed(z=st[:, 3], l=st[:, 2], a=st[:, 1], y=st[:, 4].astype(float))
    return st[:, 0], obs, p


def oracle_eif_mean(law: DiscreteLaw, spec: InterventionSpec, j: int,
                    eta1: NuisanceTables | None = None, branch: str | None = None) -> float:
    """Exact expectation under the law of D^j built from ``eta1`` (one row per W stratum)."""
    eta1 = true_nuisances(law) if eta1 is None else eta1
    w_idx, obs, p = state_observed(law)
    g_true = true_nuisances(law).g
    pw = law.marginal_w()
    _check_support(law, post_density(spec, g_true, eta1.a_values), g_true, pw)
    d = eif_terms(j, eta1.take(w_idx), spec, obs, branch).d
    return float(np.dot(p, d))


def oracle_efficiency_bounds(law: DiscreteLaw, spec: InterventionSpec) -> tuple:
    """Exact variances of the direct and indirect influence functions at the truth."""
    eta = true_nuisances(law)
    w_idx, obs, p = state_observed(law)
    _check_support(law, post_density(spec, eta.g, eta.a_values), eta.g, law.marginal_w())
    cols = eif_columns(eta.take(w_idx), spec, obs)

    def var(x):
        mu = np.dot(p, x)
        return float(np.dot(p, (x - mu) ** 2))

    return var(cols.direct), var(cols.indirect)


# multiple robustness ---------------------------------------------------------

# nuisances each configuration requires to be correct; everything else may be wrong
ROBUSTNESS_NUISANCES = ("m", "g", "b", "ubar", "v", "d", "e", "s", "q")
ROBUSTNESS_CONDITIONS = {
    1: frozenset({"m", "g", "b"}),
    2: frozenset({"m", "g", "v", "s"}),
    3: frozenset({"g", "b", "d", "e"}),
    4: frozenset({"g", "ubar", "v", "d", "e"}),
    5: frozenset({"m", "b", "ubar", "q"}),
    6: frozenset({"m", "ubar", "v", "s", "q"}),
}
MTP_CONDITIONS = (1, 2, 3, 4, 5, 6)
TILT_CONDITIONS = (1, 2, 3, 4)


def intercept_only(law: DiscreteLaw, eta: NuisanceTables, name: str) -> np.ndarray:
    """Replace a nuisance by the constant its intercept-only fit converges to.

    Probability nuisances collapse to the corresponding marginal probability;
    the pseudo-outcome nuisances collapse to their mean under the law.
    """
    P = law.pmf
    nW = P.shape[0]
    w_idx, obs, p = state_observed(law)
    i = w_idx
    if name == "m":
        val = P[..., 1].sum()
        return np.full_like(eta.m, val)
    if name in ("g", "e"):
        pa = P.sum(axis=(0, 2, 3, 4))
        shape = eta.g.shape if name == "g" else eta.e.shape
        return np.broadcast_to(pa, shape).copy()
    if name in ("b", "d"):
        val = P[:, :, 1].sum()
        return np.full_like(getattr(eta, name), val)
    if name == "r" or name == "h":
        pz = P.sum(axis=(0, 1, 2, 4))
        return np.broadcast_to(pz[None, :, None] if name == "r" else pz[None, :],
                               getattr(eta, name).shape).copy()
    if name == "ubar":
        val = np.dot(p, eta.ubar[i, obs.a])
        return np.full((nW, eta.n_a), val)
    if name == "q":
        val = np.dot(p, eta.q[i, obs.a])
        return np.full((nW, eta.n_a), val)
    if name in ("v", "s"):
        tab = getattr(eta, name)
        val = np.dot(p, tab[i, obs.l, obs.a])
        return np.full(tab.shape, val)
    raise ConfigError(f"no intercept-only projection for {name!r}")


def perturbed_nuisances(law: DiscreteLaw, keep: Sequence[str], eta: NuisanceTables | None = None,
                        wrong: dict | None = None) -> NuisanceTables:
    """True nuisances with every robustness nuisance outside ``keep`` replaced.

    Replacements come from ``wrong`` when given, else from intercept-only
    projections. u, vbar and sbar stay derived from (m, b) and (v, s, b).
    """
    eta = true_nuisances(law) if eta is None else eta
    wrong = wrong or {}
    changes = {}
    for name in ROBUSTNESS_NUISANCES:
        if name in keep:
            continue
        changes[name] = wrong[name] if name in wrong else intercept_only(law, eta, name)
    return eta.replace(**changes)


def robustness_gap(law: DiscreteLaw, spec: InterventionSpec, j: int, condition: int,
                   branch: str | None = None, wrong: dict | None = None) -> float:
    """P D^j at the perturbed nuisances minus the true functional."""
    eta1 = perturbed_nuisances(law, ROBUSTNESS_CONDITIONS[condition], wrong=wrong)
    return oracle_eif_mean(law, spec, j, eta1, branch) - oracle_theta(law, spec, j)


def misprojection_gap(law: DiscreteLaw, spec: InterventionSpec, j: int, name: str,
                      branch: str | None = None) -> float:
    """P D^j with only ``name`` replaced by its intercept-only projection, minus theta_j."""
    eta = true_nuisances(law)
    eta1 = eta.replace(**{name: intercept_only(law, eta, name)})
    return oracle_eif_mean(law, spec, j, eta1, branch) - oracle_theta(law, spec, j)


__all__ = [
    "misprojection_gap", "StateSpace", "DiscreteLaw", "DgpSpec", "build_sim_dgp", "sample", "oracle_theta",
    "oracle_effects", "true_nuisances", "oracle_eif_mean", "oracle_efficiency_bounds",
    "ROBUSTNESS_CONDITIONS", "MTP_CONDITIONS", "TILT_CONDITIONS", "intercept_only",
    "perturbed_nuisances", "robustness_gap", "expit_printed", "expit_conventional",
]
