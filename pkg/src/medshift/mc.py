"""Monte Carlo replication harness with oracle truth and jackknife standard errors."""

from __future__ import annotations

import io
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, MedshiftError
from .estimate import onestep, tmle
from .intervene import InterventionSpec
from .law import DiscreteLaw, build_sim_dgp, oracle_effects, oracle_efficiency_bounds, sample
from .learn import LearnerConfig, fit_nuisances, make_folds

log = logging.getLogger(__name__)

ARMS = ("none", "e", "m", "d", "g", "b")
EFFECTS = ("direct", "indirect")
METRICS = ("bias", "abs_bias", "sqrt_n_abs_bias", "sd", "sqrt_n_sd_over_sigma", "mse", "n_mse_over_bound",
           "coverage")


@dataclass
class SimConfig:
    law: DiscreteLaw | None = None
    specs: tuple = (InterventionSpec("odds_tilt", 2.0),)
    sizes: tuple = (200, 800, 3200)
    reps: int = 300
    estimators: tuple = ("onestep", "tmle")
    arms: tuple = ARMS
    folds: int = 5
    seed: int = 20240601
    learners: LearnerConfig = field(default_factory=LearnerConfig)
    stabilize: bool = False
    alpha: float = 0.05
    max_iter: int = 100

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("replication count must be at least 1")
        bad = [a for a in self.arms if a not in ARMS]
        if bad:
            raise ConfigError(f"unknown arm(s) {bad}; valid arms are {list(ARMS)}")
        bad = [e for e in self.estimators if e not in ("onestep", "tmle")]
        if bad:
            raise ConfigError(f"unknown estimator(s) {bad}")
        if not self.sizes or min(self.sizes) < self.folds:
            raise ConfigError("every sample size must be at least the fold count")
        if self.law is None:
            self.law = build_sim_dgp()
        self.specs = tuple(self.specs)

    @classmethod
    def desk(cls, **kw) -> "SimConfig":
        """The desk-scale profile: n in {200, 800, 3200}, 300 replications, odds tilt 2."""
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "SimConfig":
        kw.setdefault("sizes", (200, 800, 1800, 3200, 5000, 7200, 9800, 12800, 16200))
        kw.setdefault("reps", 500)
        return cls(**kw)


def replication_seed(master: int, n: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(n), int(rep)])


def run_one(cfg: SimConfig, n: int, rep: int) -> list:
    """All arms, interventions and estimators on one simulated dataset."""
    ss = replication_seed(cfg.seed, n, rep)
    s_data, s_fold = ss.spawn(2)
    data = sample(cfg.law, n, np.random.default_rng(s_data))
    folds = make_folds(n, cfg.folds, np.random.default_rng(s_fold))
    rows = []
    for arm in cfg.arms:
        lc = cfg.learners if arm == "none" else cfg.learners.misspecify(arm)
        base = {"n": n, "rep": rep, "arm": arm}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                cf = fit_nuisances(data, folds, lc)
        except MedshiftError as exc:
            for k, spec in enumerate(cfg.specs):
                for est in cfg.estimators:
                    rows.append({**base, "spec": k, "estimator": est, "ok": False, "error": str(exc)})
            continue
        for k, spec in enumerate(cfg.specs):
            for est in cfg.estimators:
                rec = {**base, "spec": k, "estimator": est}
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        if est == "onestep":
                            r = onestep(data, cf.tables, spec, cfg.stabilize, cfg.alpha)
                        else:
                            r = tmle(data, cf.tables, spec, cfg.max_iter, cfg.alpha)
                except MedshiftError as exc:
                    rows.append({**rec, "ok": False, "error": str(exc)})
                    continue
                rows.append({**rec, "ok": True, "psi_d": r.psi_d, "psi_i": r.psi_i,
                             "se_d": r.se_d, "se_i": r.se_i,
                             "converged": bool(r.diagnostics.get("converged", True))})
    return rows


def _task(args):
    cfg, n, rep = args
    return run_one(cfg, n, rep)


def worker_count(requested: int | None = None) -> int:
    env = os.environ.get("MEDSHIFT_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"MEDSHIFT_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, requested or cap))


def run_raw(cfg: SimConfig, workers: int | None = None) -> list:
    """Per-replication records sorted by (n, rep, arm, spec, estimator)."""
    tasks = [(cfg, n, rep) for n in cfg.sizes for rep in range(cfg.reps)]
    workers = worker_count(workers)
    if workers == 1:
        results = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    rows = [r for chunk in results for r in chunk]
    arm_pos = {a: k for k, a in enumerate(ARMS)}
    rows.sort(key=lambda r: (r["n"], r["rep"], arm_pos[r["arm"]], r["spec"], r["estimator"]))
    return rows


# summaries ---------------------------------------------------------------------


def _jackknife(values: np.ndarray, stat) -> float:
    R = len(values)
    if R < 2:
        return float("nan")
    loo = np.array([stat(np.delete(values, k, axis=0)) for k in range(R)])
    return float(math.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))


def cell_metrics(est: np.ndarray, se: np.ndarray, truth: float, bound: float, n: int,
                 alpha: float = 0.05) -> dict:
    """Metrics and jackknife Monte Carlo standard errors for one cell.

    mse is bias^2 + sd^2 with the replication sd (ddof = 1).
    """
    est = np.asarray(est, dtype=float)
    se = np.asarray(se, dtype=float)
    if len(est) < 2:
        raise ConfigError("a cell needs at least two successful replications")
    zq = float(norm.ppf(1 - alpha / 2))
    cover = (np.abs(est - truth) <= zq * se).astype(float)
    pair = np.column_stack([est, cover])

    def bias(x):
        return float(np.mean(x[:, 0]) - truth)

    def sd(x):
        # a leave-one-out sample of a two-replication cell has no spread estimate
        return float(np.std(x[:, 0], ddof=1)) if len(x) > 1 else float("nan")

    def mse(x):
        return bias(x) ** 2 + sd(x) ** 2

    stats = {
        "bias": bias,
        "abs_bias": lambda x: abs(bias(x)),
        "sqrt_n_abs_bias": lambda x: math.sqrt(n) * abs(bias(x)),
        "sd": sd,
        "sqrt_n_sd_over_sigma": lambda x: math.sqrt(n) * sd(x) / math.sqrt(bound) if bound > 0 else float("nan"),
        "mse": mse,
        "n_mse_over_bound": lambda x: n * mse(x) / bound if bound > 0 else float("nan"),
        "coverage": lambda x: float(np.mean(x[:, 1])),
    }
    out = {}
    for name, f in stats.items():
        out[name] = (f(pair), _jackknife(pair, f))
    return out


@dataclass
class MetricsReport:
    rows: list
    truth: list
    failures: dict
    config: dict

    def lookup(self, estimator, arm, n, effect, metric, spec=0):
        for r in self.rows:
            if (r["estimator"], r["arm"], r["n"], r["effect"], r["metric"], r["spec"]) == \
                    (estimator, arm, n, effect, metric, spec):
                return r["value"], r["mc_se"]
        raise KeyError((estimator, arm, n, effect, metric, spec))

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        buf.write("estimator,arm,n,intervention,delta,effect,metric,value,mc_se,reps_ok,reps_failed\n")
        for r in self.rows:
            buf.write(f"{r['estimator']},{r['arm']},{r['n']},{r['kind']},{r['delta']!r},{r['effect']},"
                      f"{r['metric']},{r['value']!r},{r['mc_se']!r},{r['reps_ok']},{r['reps_failed']}\n")
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"config": self.config, "truth": self.truth,
                "failures": {f"{k[0]}|{k[1]}|{k[2]}|{k[3]}": v for k, v in sorted(self.failures.items())},
                "rows": self.rows}


def summarize(raw: list, cfg: SimConfig) -> MetricsReport:
    truth = []
    for spec in cfg.specs:
        psi = oracle_effects(cfg.law, spec)
        bounds = oracle_efficiency_bounds(cfg.law, spec)
        truth.append({"intervention": spec.to_json(), "psi_d": psi[0], "psi_i": psi[1],
                      "bound_d": bounds[0], "bound_i": bounds[1]})
    rows, failures = [], {}
    for est in cfg.estimators:
        for arm in cfg.arms:
            for n in cfg.sizes:
                for k, spec in enumerate(cfg.specs):
                    cell = [r for r in raw if (r["estimator"], r["arm"], r["n"], r["spec"]) == (est, arm, n, k)]
                    ok = [r for r in cell if r["ok"]]
                    failed = len(cell) - len(ok)
                    failures[(est, arm, n, k)] = failed
                    if len(ok) < 2:
                        raise ConfigError(f"cell estimator={est} arm={arm} n={n} spec={k} "
                                          f"has {len(ok)} successful replications")
                    for effect, key, tkey, bkey in (("direct", "d", "psi_d", "bound_d"),
                                                    ("indirect", "i", "psi_i", "bound_i")):
                        est_v = np.array([r[f"psi_{key}"] for r in ok])
                        se_v = np.array([r[f"se_{key}"] for r in ok])
                        met = cell_metrics(est_v, se_v, truth[k][tkey], truth[k][bkey], n, cfg.alpha)
                        for metric in METRICS:
                            v, s = met[metric]
                            rows.append({"estimator": est, "arm": arm, "n": n, "spec": k,
                                         "kind": spec.kind, "delta": spec.delta, "effect": effect,
                                         "metric": metric, "value": v, "mc_se": s,
                                         "reps_ok": len(ok), "reps_failed": failed})
    conf = {"sizes": list(cfg.sizes), "reps": cfg.reps, "arms": list(cfg.arms), "folds": cfg.folds,
            "seed": cfg.seed, "estimators": list(cfg.estimators),
            "interventions": [s.to_json() for s in cfg.specs], "learners": cfg.learners.to_json()}
    return MetricsReport(rows, truth, failures, conf)


def run_replications(cfg: SimConfig, workers: int | None = None) -> MetricsReport:
    return summarize(run_raw(cfg, workers), cfg)


__all__ = ["SimConfig", "ARMS", "run_one", "run_raw", "summarize", "run_replications",
           "cell_metrics", "MetricsReport", "replication_seed", "worker_count"]
