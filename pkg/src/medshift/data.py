"""Observed data container and CSV input/output."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .eif import Observed


def _level_index(values: np.ndarray, levels: np.ndarray, name: str) -> np.ndarray:
    idx = np.searchsorted(levels, values)
    idx = np.clip(idx, 0, len(levels) - 1)
    if not np.array_equal(levels[idx], values):
        bad = values[levels[idx] != values][0]
        raise ConfigError(f"column {name!r} has value {bad!r} outside its level set")
    return idx.astype(np.intp)


@dataclass
class Dataset:
    """n rows of discrete covariates W, treatment A, binary L, mediator Z and outcome Y.

    Y is stored on [0, 1]; ``y_min``/``y_max`` record the affine scaling so
    effects can be reported in outcome units.
    """

    w: np.ndarray
    a: np.ndarray
    l: np.ndarray
    z: np.ndarray
    y: np.ndarray
    w_names: Sequence[str] = ()
    w_levels: Optional[list] = None
    a_levels: Optional[np.ndarray] = None
    z_levels: Optional[np.ndarray] = None
    y_min: float = 0.0
    y_max: float = 1.0
    names: dict = field(default_factory=lambda: {"A": "A", "L": "L", "Z": "Z", "Y": "Y"})

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        if self.w.shape[0] != len(self.a) and self.w.shape[1] == len(self.a):
            self.w = self.w.T
        self.a = np.asarray(self.a, dtype=float)
        self.l = np.asarray(self.l, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        n = len(self.a)
        for name, col in (("L", self.l), ("Z", self.z), ("Y", self.y)):
            if len(col) != n:
                raise ConfigError(f"column {name} has {len(col)} rows, expected {n}")
        if n == 0:
            raise ConfigError("dataset has no rows")
        if not self.w_names:
            self.w_names = [f"W{k + 1}" for k in range(self.w.shape[1])]
        if self.w_levels is None:
            self.w_levels = [np.unique(self.w[:, k]) for k in range(self.w.shape[1])]
        self.w_levels = [np.asarray(lv, dtype=float) for lv in self.w_levels]
        self.a_levels = np.unique(self.a) if self.a_levels is None else np.asarray(self.a_levels, float)
        self.z_levels = np.unique(self.z) if self.z_levels is None else np.asarray(self.z_levels, float)
        if not np.isin(self.l, (0.0, 1.0)).all():
            raise ConfigError("L must be binary coded 0/1")
        if np.any(~np.isfinite(self.y)) or self.y.min() < 0 or self.y.max() > 1:
            raise ConfigError("Y must lie in [0, 1]; use Dataset.from_columns to rescale")
        self.w_idx = np.column_stack(
            [_level_index(self.w[:, k], self.w_levels[k], self.w_names[k]) for k in range(self.w.shape[1])]
        ) if self.w.shape[1] else np.zeros((n, 0), dtype=np.intp)
        self.a_idx = _level_index(self.a, self.a_levels, "A")
        self.z_idx = _level_index(self.z, self.z_levels, "Z")
        self.l_idx = self.l.astype(np.intp)
        radix = [len(lv) for lv in self.w_levels]
        self.w_key = (np.ravel_multi_index(self.w_idx.T, radix) if radix
                      else np.zeros(n, dtype=np.intp))
        self.n_w = int(np.prod(radix)) if radix else 1

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def n_a(self) -> int:
        return len(self.a_levels)

    @property
    def n_z(self) -> int:
        return len(self.z_levels)

    @property
    def y_scale(self) -> float:
        return self.y_max - self.y_min

    def observed(self) -> Observed:
        return Observed(z=self.z_idx, l=self.l_idx, a=self.a_idx, y=self.y)

    def subset(self, rows) -> "Dataset":
        return Dataset(
            w=self.w[rows], a=self.a[rows], l=self.l[rows], z=self.z[rows], y=self.y[rows],
            w_names=list(self.w_names), w_levels=self.w_levels, a_levels=self.a_levels,
            z_levels=self.z_levels, y_min=self.y_min, y_max=self.y_max, names=dict(self.names),
        )

    @classmethod
    def from_columns(cls, w, a, l, z, y, w_names=(), names=None, **kw) -> "Dataset":
        """Build from raw columns, rescaling Y to [0, 1] when it is not already there."""
        y = np.asarray(y, dtype=float)
        if np.any(~np.isfinite(y)):
            raise ConfigError("Y has non-finite values")
        lo, hi = float(y.min()), float(y.max())
        if lo >= 0.0 and hi <= 1.0:
            lo, hi = 0.0, 1.0
        elif hi == lo:
            raise ConfigError("Y is constant outside [0, 1]; cannot rescale")
        y01 = (y - lo) / (hi - lo)
        return cls(w=w, a=a, l=l, z=z, y=y01, w_names=w_names, y_min=lo, y_max=hi,
                   names=names or {"A": "A", "L": "L", "Z": "Z", "Y": "Y"}, **kw)

    # CSV ---------------------------------------------------------------

    def to_csv(self, path=None, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        cols = list(self.w_names) + [self.names["A"], self.names["L"], self.names["Z"], self.names["Y"]]
        buf.write(",".join(cols) + "\n")
        y = self.y * self.y_scale + self.y_min
        for i in range(self.n):
            vals = [*self.w[i], self.a[i], self.l[i], self.z[i], y[i]]
            buf.write(",".join(_fmt(v) for v in vals) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


DEFAULT_ROLES = {"W": None, "A": "A", "L": "L", "Z": "Z", "Y": "Y"}


def read_csv(path, roles: dict | None = None) -> Dataset:
    """Read a comma-separated file with a header row; lines starting with '#' are skipped.

    ``roles`` maps W (list of columns), A, L, Z and Y to column names. When W is
    omitted every column not assigned another role is a covariate.
    """
    text = Path(path).read_text(encoding="utf-8")
    numbered = [(k, ln) for k, ln in enumerate(text.splitlines(), start=1)
                if ln.strip() and not ln.startswith("#")]
    if not numbered:
        raise ConfigError(f"{path}: no header row")
    line_no = [k for k, _ in numbered]
    reader = csv.reader(ln for _, ln in numbered)
    header = [h.strip() for h in next(reader)]
    rows = list(reader)
    roles = {**DEFAULT_ROLES, **(roles or {})}
    single = {k: roles[k] for k in ("A", "L", "Z", "Y")}
    for role, col in single.items():
        if col not in header:
            raise ConfigError(f"role {role} refers to missing column {col!r}")
    w_cols = roles["W"]
    if w_cols is None:
        w_cols = [h for h in header if h not in single.values()]
    if isinstance(w_cols, str):
        w_cols = [w_cols]
    for col in w_cols:
        if col not in header:
            raise ConfigError(f"role W refers to missing column {col!r}")
    used = list(w_cols) + list(single.values())
    if len(set(used)) != len(used):
        raise ConfigError(f"column roles overlap: {used}")
    data = np.empty((len(rows), len(header)))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ConfigError(f"{path}: line {line_no[r + 1]} has {len(row)} fields, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                data[r, c] = float(cell)
            except ValueError:
                raise ConfigError(f"{path}: line {line_no[r + 1]}, column {header[c]!r}: "
                                  f"cannot parse {cell!r}") from None
    col = {h: data[:, k] for k, h in enumerate(header)}
    w = np.column_stack([col[c] for c in w_cols]) if w_cols else np.zeros((len(rows), 0))
    return Dataset.from_columns(
        w=w, a=col[single["A"]], l=col[single["L"]], z=col[single["Z"]], y=col[single["Y"]],
        w_names=list(w_cols), names=dict(single),
    )


def load_roles(arg: str | None) -> dict | None:
    if arg is None:
        return None
    p = Path(arg)
    text = p.read_text(encoding="utf-8") if p.exists() else arg
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"roles is neither a JSON file nor JSON text: {exc}") from None
