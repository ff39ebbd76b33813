"""Command-line entry points: simulate, estimate and oracle.

Every output file starts with a provenance line (version, config hash, seed)
and contains no timestamps, so repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_roles, read_csv
from .errors import ConfigError, MedshiftError
from .estimate import AnalysisConfig, estimate_effects
from .intervene import KINDS, InterventionSpec
from .law import (MTP_CONDITIONS, ROBUSTNESS_CONDITIONS, TILT_CONDITIONS, DiscreteLaw, build_sim_dgp,
                  oracle_efficiency_bounds, oracle_theta, robustness_gap, sample)
from .learn import LearnerConfig
from .mc import ARMS, SimConfig, run_replications

log = logging.getLogger("medshift")

ROBUSTNESS_TOL = 1e-8


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; route them to exit code 1."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# parsing helpers ---------------------------------------------------------------


def parse_grid(text: str) -> list:
    """'start:stop:step' (stop inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid {text!r} must look like start:stop:step")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"grid {text!r} has a non-numeric bound") from None
        if step <= 0 or stop < start:
            raise ConfigError(f"grid {text!r} needs step > 0 and stop >= start")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [round(start + k * step, 12) for k in range(count)]
    else:
        try:
            values = [float(p) for p in text.split(",") if p.strip()]
        except ValueError:
            raise ConfigError(f"grid {text!r} is not a list of numbers") from None
    if not values:
        raise ConfigError("the delta grid is empty")
    return values


def _specs(kind: str, deltas) -> list:
    if kind not in KINDS:
        raise ConfigError(f"unknown intervention {kind!r}; expected one of {list(KINDS)}")
    return [InterventionSpec(kind, float(d)) for d in deltas]


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError("the config file must hold a JSON object")
    return obj


def _merge(args, file_cfg: dict, defaults: dict) -> dict:
    """Command-line flags beat the config file, which beats the defaults."""
    out = dict(defaults)
    for k, v in file_cfg.items():
        key = k.replace("-", "_")
        if key not in defaults:
            raise ConfigError(f"unknown config key {k!r}")
        out[key] = v
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _grid(cfg: dict) -> list:
    if cfg.get("delta_grid") is not None:
        g = cfg["delta_grid"]
        return parse_grid(g) if isinstance(g, str) else [float(x) for x in g]
    if cfg.get("delta") is not None:
        return [float(cfg["delta"])]
    raise ConfigError("give --delta or --delta-grid")


# keys that name where results go rather than what is computed
OUTPUT_KEYS = ("out_dir", "workers")


def _public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in OUTPUT_KEYS}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(_public(cfg), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def provenance(command: str, cfg: dict) -> str:
    return f"medshift {__version__} {command} config_sha256={config_hash(cfg)} seed={cfg.get('seed')}"


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text, encoding="utf-8")
    return path


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _learners(cfg: dict) -> LearnerConfig:
    spec = cfg.get("learners") or {}
    return LearnerConfig.from_json(spec)


def _law(cfg: dict) -> DiscreteLaw:
    if cfg.get("law"):
        return DiscreteLaw.load(cfg["law"])
    clamp = cfg.get("clamp") or (0.001, 0.999)
    if isinstance(clamp, str):
        clamp = [float(x) for x in clamp.split(",")]
    if len(clamp) != 2:
        raise ConfigError("clamp needs two numbers lo,hi")
    return build_sim_dgp(tuple(float(c) for c in clamp), cfg.get("orientation") or "printed",
                         a_levels=int(cfg.get("a_levels") or 2))


# commands ----------------------------------------------------------------------


ESTIMATE_DEFAULTS = {
    "input": None, "roles": None, "intervention": "odds_tilt", "delta": None, "delta_grid": None,
    "estimator": "both", "folds": 5, "seed": 0, "stabilize": False, "alpha": 0.05, "max_iter": 100,
    "learners": None, "out_dir": "medshift_out",
}


def cmd_estimate(args) -> int:
    cfg = _merge(args, _load_config(args.config), ESTIMATE_DEFAULTS)
    if cfg["input"] is None:
        raise ConfigError("estimate needs --input")
    roles = cfg["roles"]
    roles = load_roles(roles) if isinstance(roles, str) else roles
    data = read_csv(cfg["input"], roles)
    specs = _specs(cfg["intervention"], _grid(cfg))
    if cfg["estimator"] in ("tmle", "both") and cfg["intervention"] == "shift":
        raise ConfigError("the TMLE does not support shift interventions; use --estimator onestep")
    acfg = AnalysisConfig(learners=_learners(cfg), folds=int(cfg["folds"]), estimator=cfg["estimator"],
                          stabilize=bool(cfg["stabilize"]), alpha=float(cfg["alpha"]),
                          max_iter=int(cfg["max_iter"]))
    results = estimate_effects(data, specs, acfg, seed=int(cfg["seed"]))
    head = provenance("estimate", cfg)
    buf = io.StringIO()
    buf.write(f"# {head}\n")
    buf.write("estimator,intervention,delta,psi_d,se_d,ci_d_lo,ci_d_hi,psi_i,se_i,ci_i_lo,ci_i_hi,n\n")
    for r in results:
        buf.write(f"{r.estimator},{r.spec.kind},{r.spec.delta!r},{r.psi_d!r},{r.se_d!r},{r.ci_d[0]!r},"
                  f"{r.ci_d[1]!r},{r.psi_i!r},{r.se_i!r},{r.ci_i[0]!r},{r.ci_i[1]!r},{r.n}\n")
        if not r.diagnostics.get("converged", True):
            print(f"warning: TMLE did not converge at {r.spec.kind} delta={r.spec.delta}", file=sys.stderr)
    out = Path(cfg["out_dir"])
    _write(out, "estimates.csv", buf.getvalue())
    _write(out, "estimates.json", _dump_json({"provenance": head, "config": _public(cfg),
                                              "results": [r.to_json() for r in results]}))
    return 0


SIMULATE_DEFAULTS = {
    "n": None, "seed": 1, "metrics": False, "profile": "desk", "sizes": None, "reps": None,
    "arms": None, "estimators": None, "intervention": "odds_tilt", "delta": None, "delta_grid": None,
    "folds": 5, "workers": None, "learners": None, "clamp": None, "orientation": None, "a_levels": None,
    "law": None, "out_dir": "medshift_out",
}


def _csv_list(v, cast=str):
    if v is None:
        return None
    items = v.split(",") if isinstance(v, str) else v
    return tuple(cast(x) for x in items if str(x).strip())


def cmd_simulate(args) -> int:
    cfg = _merge(args, _load_config(args.config), SIMULATE_DEFAULTS)
    law = _law(cfg)
    out = Path(cfg["out_dir"])
    head = provenance("simulate", cfg)
    wrote = False
    if cfg["n"] is not None:
        data = sample(law, int(cfg["n"]), int(cfg["seed"]))
        _write(out, "data.csv", data.to_csv(header_comment=head))
        wrote = True
    if cfg["metrics"]:
        kw = {"law": law, "seed": int(cfg["seed"]), "folds": int(cfg["folds"]), "learners": _learners(cfg)}
        if cfg["sizes"] is not None:
            kw["sizes"] = _csv_list(cfg["sizes"], int)
        if cfg["reps"] is not None:
            kw["reps"] = int(cfg["reps"])
        if cfg["arms"] is not None:
            kw["arms"] = _csv_list(cfg["arms"])
        if cfg["estimators"] is not None:
            kw["estimators"] = _csv_list(cfg["estimators"])
        if cfg["delta"] is not None or cfg["delta_grid"] is not None:
            kw["specs"] = tuple(_specs(cfg["intervention"], _grid(cfg)))
        if cfg["profile"] not in ("desk", "full"):
            raise ConfigError("profile must be 'desk' or 'full'")
        sim = SimConfig.desk(**kw) if cfg["profile"] == "desk" else SimConfig.full(**kw)
        workers = int(cfg["workers"]) if cfg["workers"] is not None else None
        report = run_replications(sim, workers)
        _write(out, "metrics.csv", report.to_csv(head))
        _write(out, "metrics.json", _dump_json({"provenance": head, **report.to_json()}))
        wrote = True
    if not wrote:
        raise ConfigError("simulate needs --n (dataset) and/or --metrics (Monte Carlo report)")
    return 0


ORACLE_DEFAULTS = {
    "intervention": "odds_tilt", "delta": None, "delta_grid": None, "robustness": None, "clamp": None,
    "orientation": None, "a_levels": None, "law": None, "seed": None, "out_dir": "medshift_out",
}


def _oracle_point(law: DiscreteLaw, spec: InterventionSpec) -> dict:
    t10 = oracle_theta(law, InterventionSpec("identity", 0.0), 1)
    t1 = oracle_theta(law, spec, 1)
    t2 = oracle_theta(law, spec, 2)
    sd, si = oracle_efficiency_bounds(law, spec)
    return {"intervention": spec.to_json(), "theta1_null": t10, "theta1_delta": t1, "theta2_delta": t2,
            "psi_d": t10 - t2, "psi_i": t2 - t1, "bound_d": sd, "bound_i": si}


def robustness_report(law: DiscreteLaw, specs, rows=None) -> list:
    """One record per (configuration, intervention, j) with the identity gap."""
    out = []
    for spec in specs:
        valid = MTP_CONDITIONS if spec.kind == "shift" else TILT_CONDITIONS
        branch = "mtp" if spec.kind == "shift" else "tilt"
        for row in (rows or valid):
            if row not in ROBUSTNESS_CONDITIONS:
                raise ConfigError(f"robustness row must be one of {sorted(ROBUSTNESS_CONDITIONS)}")
            if row not in valid:
                raise ConfigError(f"configuration {row} is not available for {spec.kind} interventions")
            for j in (1, 2):
                gap = robustness_gap(law, spec, j, row, branch)
                out.append({"row": row, "intervention": spec.to_json(), "j": j, "gap": gap,
                            "pass": abs(gap) <= ROBUSTNESS_TOL})
    return out


def cmd_oracle(args) -> int:
    cfg = _merge(args, _load_config(args.config), ORACLE_DEFAULTS)
    law = _law(cfg)
    specs = _specs(cfg["intervention"], _grid(cfg))
    for s in specs:
        s.check_levels(len(law.space.a_levels))
    head = provenance("oracle", cfg)
    out = Path(cfg["out_dir"])
    body = {"provenance": head, "config": _public(cfg), "points": [_oracle_point(law, s) for s in specs]}
    if cfg["robustness"] is not None:
        rows = None if cfg["robustness"] == "all" else [int(x) for x in str(cfg["robustness"]).split(",")]
        rep = robustness_report(law, specs, rows)
        body["robustness"] = rep
        for r in rep:
            print(f"row {r['row']} {r['intervention']['kind']} delta={r['intervention']['delta']} "
                  f"j={r['j']} gap={r['gap']:.3e} {'PASS' if r['pass'] else 'FAIL'}")
    _write(out, "oracle.json", _dump_json(body))
    return 0


# entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="medshift", description="Direct and indirect effects of stochastic interventions.")
    p.add_argument("--version", action="version", version=f"medshift {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file of options; flags override it")
        sp.add_argument("--intervention", choices=KINDS)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--delta-grid", dest="delta_grid", help="start:stop:step or a comma list")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", dest="out_dir")

    def law_opts(sp):
        sp.add_argument("--law", help="JSON file of a discrete law (default: simulation law)")
        sp.add_argument("--clamp", help="lo,hi clamp of the simulation probabilities")
        sp.add_argument("--orientation", choices=("printed", "conventional"))
        sp.add_argument("--a-levels", dest="a_levels", type=int)

    e = sub.add_parser("estimate", help="estimate effects on a CSV file")
    common(e)
    e.add_argument("--input")
    e.add_argument("--roles", help="JSON (file or text) mapping W, A, L, Z, Y to columns")
    e.add_argument("--estimator", choices=("onestep", "tmle", "both"))
    e.add_argument("--folds", type=int)
    e.add_argument("--stabilize", action="store_const", const=True)
    e.add_argument("--alpha", type=float)
    e.add_argument("--max-iter", dest="max_iter", type=int)
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="draw a dataset and/or run the Monte Carlo study")
    common(s)
    law_opts(s)
    s.add_argument("--n", type=int)
    s.add_argument("--metrics", action="store_const", const=True)
    s.add_argument("--profile", choices=("desk", "full"))
    s.add_argument("--sizes", help="comma list of sample sizes")
    s.add_argument("--reps", type=int)
    s.add_argument("--arms", help=f"comma list from {','.join(ARMS)}")
    s.add_argument("--estimators", help="comma list from onestep,tmle")
    s.add_argument("--folds", type=int)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="true effects and efficiency bounds of a discrete law")
    common(o)
    law_opts(o)
    o.add_argument("--robustness", help="configuration rows to check (comma list or 'all')")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return args.func(args)
    except MedshiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc, OSError) else 2


if __name__ == "__main__":
    sys.exit(main())
