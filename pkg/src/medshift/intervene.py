"""Stochastic interventions on the treatment and their post-intervention densities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PositivityError

KINDS = ("identity", "odds_tilt", "exp_tilt", "shift")

# levels of g(.|w) below this are treated as outside the support
SUPPORT_THRESHOLD = 1e-12


@dataclass(frozen=True)
class InterventionSpec:
    """A user-chosen intervention on A.

    ``delta`` is the odds multiplier for ``odds_tilt``, the tilt exponent for
    ``exp_tilt`` and a whole number of support steps for ``shift``.
    """

    kind: str = "identity"
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown intervention kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "odds_tilt" and not self.delta > 0:
            raise ConfigError(f"odds_tilt requires delta > 0, got {self.delta}")
        if self.kind == "shift":
            if self.delta < 0 or float(self.delta) != int(self.delta):
                raise ConfigError(f"shift requires a nonnegative whole number of steps, got {self.delta}")
        if self.kind == "exp_tilt" and not math.isfinite(self.delta):
            raise ConfigError("exp_tilt requires a finite delta")

    @property
    def is_identity(self) -> bool:
        return (
            self.kind == "identity"
            or (self.kind == "odds_tilt" and self.delta == 1.0)
            or (self.kind in ("exp_tilt", "shift") and self.delta == 0.0)
        )

    def check_levels(self, n_levels: int) -> None:
        if self.kind == "shift" and self.delta >= n_levels:
            raise ConfigError(
                f"shift of {int(self.delta)} steps needs more than {n_levels} treatment levels"
            )
        if self.kind == "odds_tilt" and n_levels != 2:
            raise ConfigError("odds_tilt is defined for binary treatments only")

    def to_json(self) -> dict:
        return {"kind": self.kind, "delta": self.delta}

    @classmethod
    def from_json(cls, obj: dict) -> "InterventionSpec":
        return cls(kind=obj["kind"], delta=float(obj.get("delta", 0.0)))


IDENTITY = InterventionSpec("identity", 0.0)


def lower_support_index(g: np.ndarray) -> np.ndarray:
    """Index of the lowest treatment level with g(.|w) > 0, per leading row."""
    supported = g > SUPPORT_THRESHOLD
    if not supported.any(axis=-1).all():
        raise PositivityError("g(.|w) has no supported treatment level")
    return supported.argmax(axis=-1)


def mtp_map(delta: int, a_index, lower_index):
    """Shift a treatment level index down by ``delta`` steps unless within
    ``delta`` steps of the lower support bound."""
    a_index = np.asarray(a_index)
    return np.where(a_index > lower_index + delta, a_index - delta, a_index)


def shift_targets(spec: InterventionSpec, g: np.ndarray) -> np.ndarray:
    """Mapped level index d(a, w) for every level, shape ``g.shape``."""
    n_levels = g.shape[-1]
    lower = lower_support_index(g)[..., None]
    levels = np.arange(n_levels)
    return mtp_map(int(spec.delta), levels, lower)


def post_density(spec: InterventionSpec, g: np.ndarray, a_values: np.ndarray) -> np.ndarray:
    """Post-intervention density g_delta(a|w) for every row of ``g``.

    ``g`` has treatment levels on its last axis; leading axes are arbitrary.
    """
    g = np.asarray(g, dtype=float)
    a_values = np.asarray(a_values, dtype=float)
    spec.check_levels(g.shape[-1])
    if spec.kind == "identity" or spec.is_identity:
        return g.copy()
    if spec.kind == "odds_tilt":
        # g0 rather than 1 - g1 keeps the normalizer exact when g1 is near 1
        g0, g1 = g[..., 0], g[..., 1]
        num = spec.delta * g1
        den = num + g0
        if np.any(den <= 0):
            raise PositivityError("odds tilt normalizer is zero")
        out = np.empty_like(g)
        out[..., 1] = num / den
        out[..., 0] = g0 / den
        return out
    if spec.kind == "exp_tilt":
        # shifting the exponent by max(a) leaves the ratio unchanged and avoids overflow
        w = np.exp(spec.delta * (a_values - a_values.max() if spec.delta > 0 else a_values - a_values.min()))
        num = g * w
        den = num.sum(axis=-1, keepdims=True)
        if np.any(den <= 0):
            raise PositivityError("exponential tilt normalizer is zero")
        return num / den
    # shift: pushforward of g under the level map
    targets = shift_targets(spec, g)
    out = np.zeros_like(g)
    flat_g = g.reshape(-1, g.shape[-1])
    flat_t = targets.reshape(-1, g.shape[-1])
    flat_out = out.reshape(-1, g.shape[-1])
    rows = np.repeat(np.arange(flat_g.shape[0]), g.shape[-1])
    np.add.at(flat_out, (rows, flat_t.ravel()), flat_g.ravel())
    return flat_out.reshape(g.shape)


def check_common_support(gd: np.ndarray, g: np.ndarray, labels=None) -> None:
    """Raise if g_delta puts mass where g has none."""
    bad = (gd > SUPPORT_THRESHOLD) & (g <= SUPPORT_THRESHOLD)
    if bad.any():
        idx = np.argwhere(bad)[0]
        where = labels(idx) if labels is not None else f"index {tuple(int(i) for i in idx)}"
        raise PositivityError(f"g_delta > 0 where g = 0 at {where}")
