"""Nuisance learners, cross-fitting and secondary nuisance derivation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import kernels
from .data import Dataset
from .errors import ConfigError, EstimationError, IRLSConvergenceError
from .nuisance import NuisanceTables, concat_rows, l_prob

log = logging.getLogger(__name__)

DEFAULT_CLAMP = (1e-3, 1.0 - 1e-3)
SEPARATION_BOUND = 30.0
RIDGE = 1e-6


# IRLS ------------------------------------------------------------------------


@dataclass
class IRLSResult:
    coef: np.ndarray
    iterations: int
    score_norm: float
    loglik_path: list = field(default_factory=list)
    ridge: float = 0.0


def _irls(X, y, w, offset, tol, max_iter, ridge):
    k = X.shape[1]
    beta = np.zeros(k)
    total_w = float(w.sum())
    if k == 0:
        return IRLSResult(beta, 0, 0.0)
    ll, grad, hess = kernels.irls_pass(X, y, w, offset, beta)
    ll -= 0.5 * ridge * beta @ beta
    grad = grad - ridge * beta
    path = [ll]
    for it in range(1, max_iter + 1):
        score = float(np.max(np.abs(grad))) / total_w
        info = hess + ridge * np.eye(k)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        if score <= tol:
            # one more full Newton step: the coefficient error is quadratic in the score
            return _polish(X, y, w, offset, beta, step, ll, ridge, it - 1, score, path, total_w)
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            ll_c, g_c, h_c = kernels.irls_pass(X, y, w, offset, cand)
            ll_c -= 0.5 * ridge * cand @ cand
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            raise IRLSConvergenceError("step halving failed to increase the likelihood",
                                       coef=beta, score_norm=score)
        beta, ll, grad, hess = cand, ll_c, g_c - ridge * cand, h_c
        path.append(ll)
    score = float(np.max(np.abs(grad))) / total_w
    if score <= tol:
        return IRLSResult(beta, max_iter, score, path, ridge)
    raise IRLSConvergenceError(f"IRLS did not converge in {max_iter} iterations (score {score:.3g})",
                               coef=beta, score_norm=score)


def _polish(X, y, w, offset, beta, step, ll, ridge, iterations, score, path, total_w):
    cand = beta + step
    ll_c, g_c, _ = kernels.irls_pass(X, y, w, offset, cand)
    ll_c -= 0.5 * ridge * cand @ cand
    if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
        score_c = float(np.max(np.abs(g_c - ridge * cand))) / total_w
        if score_c <= score:
            return IRLSResult(cand, iterations, score_c, path + [ll_c], ridge)
    return IRLSResult(beta, iterations, score, path, ridge)


def fit_logistic_irls(X, y, weights=None, offset=None, intercept: bool = True,
                      tol: float = 1e-10, max_iter: int = 100) -> IRLSResult:
    """Weighted logistic (quasi-)likelihood fit with a fixed offset.

    ``y`` may be any value in [0, 1]. Convergence is declared when the largest
    component of the score, divided by the total weight, is at most ``tol``.
    If the fitted linear predictor (offset excluded) exceeds 30 in absolute
    value on some row the data are treated as separated: a warning is issued
    and the fit is redone with a ridge penalty.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    if intercept:
        X = np.column_stack([np.ones(n), X])
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if tol <= 0:
        raise ConfigError("tol must be positive")
    if np.any(w < 0) or np.any((y < 0) | (y > 1)):
        raise ConfigError("IRLS needs nonnegative weights and responses in [0, 1]")
    def separated(coef):
        return coef is not None and np.max(np.abs(X @ coef), initial=0.0) > SEPARATION_BOUND

    try:
        res = _irls(X, y, w, off, tol, max_iter, 0.0)
    except IRLSConvergenceError as exc:
        if not separated(exc.coef):
            raise
        res = None
    if res is None or separated(res.coef):
        warnings.warn("logistic fit looks separated; refitting with a ridge penalty", RuntimeWarning)
        res = _irls(X, y, w, off, tol, max_iter, RIDGE)
    return res


# learners --------------------------------------------------------------------


class Column:
    """A discrete feature: integer codes into an ascending level array."""

    __slots__ = ("codes", "levels")

    def __init__(self, codes, levels):
        self.codes = np.asarray(codes, dtype=np.intp)
        self.levels = np.asarray(levels, dtype=float)

    @property
    def values(self):
        return self.levels[self.codes]


def _stack_codes(cols: Sequence[Column]) -> np.ndarray:
    if not cols:
        return np.zeros(0, dtype=np.intp)
    radix = [len(c.levels) for c in cols]
    return np.ravel_multi_index([c.codes for c in cols], radix)


class Learner:
    kind = "base"
    target = "binary"

    def __init__(self, target="binary", n_classes=2):
        if target not in ("binary", "categorical", "continuous"):
            raise ConfigError(f"unknown target type {target!r}")
        self.target = target
        self.n_classes = n_classes

    def fit(self, cols: Sequence[Column], y: np.ndarray) -> "Learner":
        raise NotImplementedError

    def predict(self, cols: Sequence[Column]) -> np.ndarray:
        raise NotImplementedError


class InterceptOnly(Learner):
    kind = "intercept_only"

    def fit(self, cols, y):
        y = np.asarray(y)
        if self.target == "categorical":
            self.p_ = np.bincount(y.astype(np.intp), minlength=self.n_classes) / len(y)
        else:
            self.p_ = float(np.mean(y))
        return self

    def predict(self, cols):
        n = len(cols[0].codes) if cols else 1
        if self.target == "categorical":
            return np.broadcast_to(self.p_, (n, self.n_classes)).copy()
        return np.full(n, self.p_)


class LogisticMainTerms(Learner):
    """Main-terms logistic regression on the numeric feature values.

    Categorical targets use continuation-ratio logits; unbounded continuous
    targets use least squares on the same design.
    """

    kind = "main_terms"

    @staticmethod
    def _design(cols):
        cols = [c for c in cols if len(c.levels) > 1]
        return np.column_stack([c.values for c in cols]) if cols else None

    def fit(self, cols, y):
        X = self._design(cols)
        y = np.asarray(y, dtype=float)
        n = len(y)
        Xd = np.ones((n, 1)) if X is None else np.column_stack([np.ones(n), X])
        if self.target == "continuous":
            self.coef_ = np.linalg.lstsq(Xd, y, rcond=None)[0]
        elif self.target == "binary":
            self.coef_ = fit_logistic_irls(X, y).coef
        else:
            self.coefs_ = []
            for k in range(self.n_classes - 1):
                at_risk = y >= k
                if not at_risk.any():
                    self.coefs_.append(None)
                    continue
                yk = (y[at_risk] == k).astype(float)
                Xk = None if X is None else X[at_risk]
                self.coefs_.append(fit_logistic_irls(Xk, yk).coef)
        return self

    def predict(self, cols):
        X = self._design(cols)
        n = len(cols[0].codes) if cols else 1
        Xd = np.ones((n, 1)) if X is None else np.column_stack([np.ones(n), X])
        if self.target == "continuous":
            return Xd @ self.coef_
        if self.target == "binary":
            return expit(Xd @ self.coef_)
        out = np.zeros((n, self.n_classes))
        surv = np.ones(n)
        for k, coef in enumerate(self.coefs_):
            hk = np.zeros(n) if coef is None else expit(Xd @ coef)
            out[:, k] = surv * hk
            surv = surv * (1.0 - hk)
        out[:, -1] = surv
        return out


class SaturatedStratum(Learner):
    """Cell means over every combination of feature levels with add-alpha smoothing.

    Binary and [0, 1] targets: (sum y + alpha) / (n + 2 alpha). Categorical:
    (count + alpha) / (n + K alpha). Continuous pseudo-outcomes: the cell mean
    shrunk toward the pooled mean with weight alpha. With alpha = 0 an empty
    cell cannot be predicted.
    """

    kind = "saturated"

    def __init__(self, target="binary", n_classes=2, alpha=0.5):
        super().__init__(target, n_classes)
        if alpha < 0:
            raise ConfigError("smoothing alpha must be nonnegative")
        self.alpha = float(alpha)

    def fit(self, cols, y):
        key = _stack_codes(cols) if cols else np.zeros(len(y), dtype=np.intp)
        y = np.asarray(y, dtype=float)
        self.keys_, inv = np.unique(key, return_inverse=True)
        nk = len(self.keys_)
        self.pooled_ = float(np.mean(y))
        if self.target == "categorical":
            counts = np.zeros((nk, self.n_classes))
            np.add.at(counts, (inv, y.astype(np.intp)), 1.0)
            self.counts_ = counts
            self.n_ = counts.sum(axis=1)
        else:
            self.n_, self.sum_ = kernels.stratum_sums(inv.astype(np.intp), y, np.ones(len(y)), nk)
        return self

    def _lookup(self, cols, n):
        key = _stack_codes(cols) if cols else np.zeros(n, dtype=np.intp)
        pos = np.searchsorted(self.keys_, key)
        pos = np.minimum(pos, len(self.keys_) - 1)
        found = self.keys_[pos] == key
        return pos, found

    def predict(self, cols):
        n = len(cols[0].codes) if cols else 1
        pos, found = self._lookup(cols, n)
        a = self.alpha
        if a == 0 and not found.all():
            raise EstimationError(
                "saturated learner met an empty stratum with alpha = 0; set a positive smoothing alpha"
            )
        if self.target == "categorical":
            cnt = np.where(found[:, None], self.counts_[pos], 0.0)
            tot = np.where(found, self.n_[pos], 0.0)
            return (cnt + a) / (tot + self.n_classes * a)[:, None]
        s = np.where(found, self.sum_[pos], 0.0)
        m = np.where(found, self.n_[pos], 0.0)
        if self.target == "binary":
            return (s + a) / (m + 2.0 * a)
        return (s + a * self.pooled_) / (m + a)


LEARNERS = {"intercept_only": InterceptOnly, "main_terms": LogisticMainTerms,
            "saturated": SaturatedStratum}


@dataclass(frozen=True)
class LearnerChoice:
    kind: str = "saturated"
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in LEARNERS:
            raise ConfigError(f"unknown learner {self.kind!r}; expected one of {sorted(LEARNERS)}")
        if self.alpha < 0:
            raise ConfigError("smoothing alpha must be nonnegative")

    def make(self, target="binary", n_classes=2) -> Learner:
        if self.kind == "saturated":
            return SaturatedStratum(target, n_classes, self.alpha)
        return LEARNERS[self.kind](target, n_classes)


NUISANCE_NAMES = ("m", "g", "e", "b", "d", "r", "h")


@dataclass
class LearnerConfig:
    """Learner per primary nuisance, the secondary learner and fitting options."""

    learners: dict = field(default_factory=dict)
    secondary: LearnerChoice = field(default_factory=LearnerChoice)
    clamp: tuple = DEFAULT_CLAMP
    coherent: bool = True
    path: str = "exact"

    def __post_init__(self):
        full = {}
        for name in NUISANCE_NAMES:
            c = self.learners.get(name, LearnerChoice())
            full[name] = c if isinstance(c, LearnerChoice) else LearnerChoice(c)
        extra = set(self.learners) - set(NUISANCE_NAMES)
        if extra:
            raise ConfigError(f"unknown nuisance names {sorted(extra)}")
        self.learners = full
        if not isinstance(self.secondary, LearnerChoice):
            self.secondary = LearnerChoice(self.secondary)
        lo, hi = (float(c) for c in self.clamp)
        if not (0.0 < lo < 0.5 < hi < 1.0):
            raise ConfigError(f"clamp must satisfy 0 < lo < 0.5 < hi < 1, got {self.clamp}")
        self.clamp = (lo, hi)
        if self.path not in ("exact", "regression"):
            raise ConfigError("path must be 'exact' or 'regression'")

    @classmethod
    def from_json(cls, obj: dict) -> "LearnerConfig":
        obj = dict(obj)
        alpha = float(obj.pop("alpha", 0.5))
        kw = {}
        for key in ("clamp", "coherent", "path"):
            if key in obj:
                kw[key] = tuple(obj.pop(key)) if key == "clamp" else obj.pop(key)
        sec = obj.pop("secondary", "saturated")
        extra = set(obj) - set(NUISANCE_NAMES)
        if extra:
            raise ConfigError(f"unknown learner config keys {sorted(extra)}")
        # the smoothing alpha applies to every nuisance, listed or not
        learners = {k: LearnerChoice(obj.get(k, "saturated"), alpha) for k in NUISANCE_NAMES}
        return cls(learners=learners, secondary=LearnerChoice(sec, alpha), **kw)

    def to_json(self) -> dict:
        out = {k: v.kind for k, v in self.learners.items()}
        out.update(secondary=self.secondary.kind, alpha=self.secondary.alpha,
                   clamp=list(self.clamp), coherent=self.coherent, path=self.path)
        return out

    def misspecify(self, name: str) -> "LearnerConfig":
        """Copy with one primary nuisance fit by an intercept-only model."""
        if name not in NUISANCE_NAMES:
            raise ConfigError(f"cannot misspecify {name!r}")
        learners = dict(self.learners)
        learners[name] = LearnerChoice("intercept_only", learners[name].alpha)
        return LearnerConfig(learners=learners, secondary=self.secondary, clamp=self.clamp,
                             coherent=self.coherent, path=self.path)


# folds -----------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    assignment: np.ndarray
    n_folds: int

    def validation(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def training(self, j: int) -> np.ndarray:
        if self.n_folds == 1:
            return np.arange(len(self.assignment))
        return np.flatnonzero(self.assignment != j)


def make_folds(n: int, J: int, seed) -> FoldPlan:
    """Uniformly random balanced partition of range(n) into J folds."""
    if J < 2:
        raise ConfigError("cross-fitting needs at least two folds")
    if J > n:
        raise ConfigError(f"cannot split {n} rows into {J} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assign = np.empty(n, dtype=np.intp)
    for j, part in enumerate(np.array_split(perm, J)):
        assign[part] = j
    return FoldPlan(assign, J)


def full_sample_plan(n: int) -> FoldPlan:
    """Single 'fold' that trains and evaluates on every row (no cross-fitting)."""
    return FoldPlan(np.zeros(n, dtype=np.intp), 1)


# clamping --------------------------------------------------------------------


def clamp_binary(p, clamp, counter: dict, name: str):
    lo, hi = clamp
    out = np.clip(p, lo, hi)
    counter[f"clamped_{name}"] = counter.get(f"clamped_{name}", 0) + int(np.sum(out != p))
    return out


def clamp_categorical(p, clamp, counter: dict, name: str, axis=-1):
    """Map each pmf to clip(t p, lo, hi) with the scalar t >= 0 making it sum to 1.

    Entries strictly inside the bounds keep their relative sizes; a pmf already
    within [lo, hi] is returned unchanged.
    """
    lo, hi = clamp
    p = np.moveaxis(np.asarray(p, dtype=float), axis, -1)
    K = p.shape[-1]
    if K * lo > 1 or K * hi < 1:
        raise ConfigError(f"clamp {clamp} infeasible for {K} levels")
    q = p / p.sum(axis=-1, keepdims=True)
    inside = np.all((q >= lo) & (q <= hi), axis=-1, keepdims=True)
    # the clipped total is nondecreasing in t: bisect on log t, then solve exactly on the free set
    t_lo = np.zeros(q.shape[:-1] + (1,))
    t_hi = np.full_like(t_lo, 1.0)
    while True:
        short = np.clip(q * t_hi, lo, hi).sum(axis=-1, keepdims=True) < 1.0
        if not short.any():
            break
        t_hi = np.where(short, 2.0 * t_hi, t_hi)
    for _ in range(100):
        mid = 0.5 * (t_lo + t_hi)
        below = np.clip(q * mid, lo, hi).sum(axis=-1, keepdims=True) < 1.0
        t_lo = np.where(below, mid, t_lo)
        t_hi = np.where(below, t_hi, mid)
    t = 0.5 * (t_lo + t_hi)
    x = q * t
    at_lo, at_hi = x <= lo, x >= hi
    free = ~(at_lo | at_hi)
    fixed_mass = (lo * at_lo + hi * at_hi).sum(axis=-1, keepdims=True)
    free_tot = np.where(free, q, 0.0).sum(axis=-1, keepdims=True)
    scale = np.divide(1.0 - fixed_mass, free_tot, out=np.zeros_like(free_tot), where=free_tot > 0)
    out = np.where(at_lo, lo, np.where(at_hi, hi, q * scale))
    out = np.where(inside, q, out)
    changed = int(np.sum(np.any(np.abs(out - p) > 1e-15, axis=-1)))
    counter[f"clamped_{name}"] = counter.get(f"clamped_{name}", 0) + changed
    return np.moveaxis(out, -1, axis)


# fold fits -------------------------------------------------------------------


class _Cells:
    """Unique W strata of a row set with grid-broadcast feature columns."""

    def __init__(self, data: Dataset, rows: np.ndarray):
        keys = data.w_key[rows]
        self.keys, first, self.inverse = np.unique(keys, return_index=True, return_inverse=True)
        self.w_codes = data.w_idx[rows][first]           # (k, p)
        self.k = len(self.keys)
        self.data = data

    def cols(self, shape, **axes):
        """Columns for W plus any of z/l/a broadcast over a grid of ``shape`` with
        the stratum on axis 0; ``axes`` maps name -> axis position."""
        d = self.data
        full = (self.k,) + tuple(shape)
        out = []
        if self.w_codes.shape[1] == 0:
            out.append(Column(np.zeros(int(np.prod(full)), dtype=np.intp), [0.0]))
        for c in range(self.w_codes.shape[1]):
            codes = np.broadcast_to(self.w_codes[:, c].reshape((-1,) + (1,) * len(shape)), full)
            out.append(Column(codes.ravel(), d.w_levels[c]))
        levels = {"z": d.z_levels, "l": np.array([0.0, 1.0]), "a": d.a_levels}
        for name in ("z", "l", "a"):
            if name in axes:
                ax = axes[name]
                sh = [1] * len(full)
                sh[ax] = full[ax]
                codes = np.broadcast_to(np.arange(full[ax]).reshape(sh), full)
                out.append(Column(codes.ravel(), levels[name]))
        return out, full


def _row_cols(data: Dataset, rows, use=("z", "l", "a")):
    cols = [Column(data.w_idx[rows, c], data.w_levels[c]) for c in range(data.w_idx.shape[1])]
    if not cols:
        cols.append(Column(np.zeros(len(rows), dtype=np.intp), [0.0]))
    src = {"z": (data.z_idx, data.z_levels), "l": (data.l_idx, np.array([0.0, 1.0])),
           "a": (data.a_idx, data.a_levels)}
    for name in ("z", "l", "a"):
        if name in use:
            codes, lv = src[name]
            cols.append(Column(codes[rows], lv))
    return cols


@dataclass
class FoldFit:
    """Primary nuisance fits trained on one fold's training rows."""

    data: Dataset
    train: np.ndarray
    config: LearnerConfig
    fits: dict = field(default_factory=dict)
    derived: set = field(default_factory=set)

    @classmethod
    def fit(cls, data: Dataset, train: np.ndarray, config: LearnerConfig) -> "FoldFit":
        ff = cls(data, np.asarray(train), config)
        L = config.learners
        nA, nZ = data.n_a, data.n_z
        t = ff.train
        ff.fits["m"] = L["m"].make("binary").fit(_row_cols(data, t, "zla"), data.y[t])
        ff.fits["g"] = _make_cat(L["g"], nA).fit(_row_cols(data, t, ""), data.a_idx[t])
        ff.fits["b"] = L["b"].make("binary").fit(_row_cols(data, t, "a"), data.l[t])
        sat = {k: L[k].kind == "saturated" for k in L}
        coh = config.coherent
        # Bayes-coherent derivations replace a saturated fit only when every input is saturated too
        if coh and sat["b"] and sat["r"]:
            ff.fits["rL"] = _make_cat(L["r"], nZ).fit(_row_cols(data, t, "la"), data.z_idx[t])
            ff.derived.add("r")
        else:
            ff.fits["r"] = _make_cat(L["r"], nZ).fit(_row_cols(data, t, "a"), data.z_idx[t])
        if coh and sat["h"] and sat["g"] and "r" in ff.derived:
            ff.derived.add("h")
        else:
            ff.fits["h"] = _make_cat(L["h"], nZ).fit(_row_cols(data, t, ""), data.z_idx[t])
        if coh and sat["e"] and sat["g"] and "r" in ff.derived and "h" in ff.derived:
            ff.derived.add("e")
        else:
            ff.fits["e"] = _make_cat(L["e"], nA).fit(_row_cols(data, t, "z"), data.a_idx[t])
        if coh and sat["d"] and "r" in ff.derived:
            ff.derived.add("d")
        else:
            ff.fits["d"] = L["d"].make("binary").fit(_row_cols(data, t, "za"), data.l[t])
        return ff

    def tables(self, rows) -> NuisanceTables:
        """Primary nuisance tables for ``rows`` (secondaries by exact sums)."""
        rows = np.asarray(rows)
        cells = _Cells(self.data, rows)
        nA, nZ = self.data.n_a, self.data.n_z
        clamp = self.config.clamp
        diag: dict = {}
        F = self.fits

        cols, full = cells.cols((nZ, 2, nA), z=1, l=2, a=3)
        m = clamp_binary(F["m"].predict(cols).reshape(full), clamp, diag, "m")
        cols, full = cells.cols(())
        g = clamp_categorical(F["g"].predict(cols).reshape(cells.k, nA), clamp, diag, "g")
        cols, full = cells.cols((nA,), a=1)
        b = clamp_binary(F["b"].predict(cols).reshape(full), clamp, diag, "b")
        if "r" in self.derived:
            cols, full = cells.cols((2, nA), l=1, a=2)
            rL = clamp_categorical(F["rL"].predict(cols).reshape(cells.k, 2, nA, nZ), clamp, diag, "rL")
            rL = rL.transpose(0, 3, 1, 2)                          # (k, z, l, a)
            joint = rL * np.stack([1.0 - b, b], axis=1)[:, None]   # p(z, l | a, w)
            r = joint.sum(axis=2)
        else:
            cols, full = cells.cols((nA,), a=1)
            r = F["r"].predict(cols).reshape(cells.k, nA, nZ).transpose(0, 2, 1)
        r = clamp_categorical(r, clamp, diag, "r", axis=1)
        if "h" in self.derived:
            h = np.einsum("kza,ka->kz", r, g)
        else:
            cols, full = cells.cols(())
            h = F["h"].predict(cols).reshape(cells.k, nZ)
        h = clamp_categorical(h, clamp, diag, "h")
        if "e" in self.derived:
            e = r * g[:, None, :] / h[:, :, None]
        else:
            cols, full = cells.cols((nZ,), z=1)
            e = F["e"].predict(cols).reshape(cells.k, nZ, nA)
        e = clamp_categorical(e, clamp, diag, "e")
        if "d" in self.derived:
            d = joint[:, :, 1, :] / r
        else:
            cols, full = cells.cols((nZ, nA), z=1, a=2)
            d = F["d"].predict(cols).reshape(full)
        d = clamp_binary(d, clamp, diag, "d")
        inv = cells.inverse
        return NuisanceTables(a_values=self.data.a_levels, m=m[inv], g=g[inv], b=b[inv],
                              d=d[inv], e=e[inv], r=r[inv], h=h[inv], diagnostics=diag)


def _make_cat(choice: LearnerChoice, K: int) -> Learner:
    return choice.make("categorical", K)


# secondary nuisances ---------------------------------------------------------


def regression_secondary(ff: FoldFit, rows, tables: NuisanceTables) -> dict:
    """Regressions of pseudo-outcomes on the training rows of ``ff``,
    evaluated on the strata of ``rows``."""
    data, t = ff.data, ff.train
    tt = ff.tables(t)
    i = np.arange(len(t))
    zi, li, ai = data.z_idx[t], data.l_idx[t], data.a_idx[t]
    bd = l_prob(tt.b[i, ai], li) / l_prob(tt.d[i, zi, ai], li)
    ge = tt.g[i, ai] / tt.e[i, zi, ai]
    m_obs = tt.m[i, zi, li, ai]
    pseudo = {
        "v": (m_obs * bd, "la"),
        "s": (m_obs * bd * ge, "la"),
        "ubar": (tt.u[i, zi, ai], "a"),
        "q": (ge * tt.u[i, zi, ai], "a"),
    }
    cells = _Cells(data, np.asarray(rows))
    nA = data.n_a
    out = {}
    for name, (y, use) in pseudo.items():
        lr = ff.config.secondary.make("continuous").fit(_row_cols(data, t, use), y)
        if use == "la":
            cols, full = cells.cols((2, nA), l=1, a=2)
        else:
            cols, full = cells.cols((nA,), a=1)
        out[name] = lr.predict(cols).reshape(full)[cells.inverse]
    return out


def derive_secondary(ff: FoldFit, rows, tables: NuisanceTables, path: str = "exact") -> NuisanceTables:
    if path == "exact":
        return tables.replace(**tables.exact_secondary())
    if path == "regression":
        return tables.replace(**regression_secondary(ff, rows, tables))
    raise ConfigError(f"unknown derivation path {path!r}")


@dataclass
class CrossFit:
    """Cross-fitted nuisance tables in original row order plus the fold fits."""

    tables: NuisanceTables
    folds: FoldPlan
    fold_fits: list


def fit_nuisances(data: Dataset, folds: FoldPlan, config: LearnerConfig | None = None) -> CrossFit:
    """Fit every primary nuisance on each fold's training rows, evaluate it on the
    held-out rows and derive the secondary nuisances."""
    config = config or LearnerConfig()
    parts, order, fits = [], [], []
    for j in range(folds.n_folds):
        val = folds.validation(j)
        if len(val) == 0:
            continue
        ff = FoldFit.fit(data, folds.training(j), config)
        tab = ff.tables(val)
        parts.append(derive_secondary(ff, val, tab, config.path))
        order.append(val)
        fits.append(ff)
    order = np.concatenate(order)
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return CrossFit(concat_rows(parts, inv), folds, fits)


def nuisance_table_json(data: Dataset, tables: NuisanceTables) -> dict:
    """Stratum-level predictions (first row seen per W stratum) for diagnostics."""
    keys, first = np.unique(data.w_key, return_index=True)
    out = []
    for k, i in zip(keys, first):
        out.append({
            "w": [float(x) for x in data.w[i]],
            "g": tables.g[i].round(12).tolist(),
            "b": tables.b[i].round(12).tolist(),
            "ubar": tables.ubar[i].round(12).tolist(),
            "q": tables.q[i].round(12).tolist(),
        })
    return {"strata": out, "diagnostics": {k: int(v) for k, v in sorted(tables.diagnostics.items())}}


__all__ = [
    "fit_logistic_irls", "IRLSResult", "InterceptOnly", "LogisticMainTerms", "SaturatedStratum",
    "LearnerChoice", "LearnerConfig", "FoldPlan", "make_folds", "full_sample_plan", "FoldFit",
    "derive_secondary", "fit_nuisances", "CrossFit", "clamp_binary", "clamp_categorical", "Column",
]
