"""Per-row nuisance tables.

Every nuisance conditions on W, so for each row we store the full conditional
table at ``W = W_i`` over the remaining arguments. Rows are observations
(estimation) or states of a discrete law (oracles). Axis conventions:

    m  (n, nZ, 2, nA)   E[Y | z, l, a, w]
    g  (n, nA)          P(A = a | w)
    b  (n, nA)          P(L = 1 | a, w)
    d  (n, nZ, nA)      P(L = 1 | z, a, w)
    e  (n, nZ, nA)      P(A = a | z, w)
    r  (n, nZ, nA)      P(Z = z | a, w)
    h  (n, nZ)          P(Z = z | w)

The secondary nuisances ``ubar``, ``v``, ``s`` and ``q`` default to their
exact finite sums but may be supplied independently (regression fits,
misspecified arms, TMLE updates). ``u``, ``vbar``, ``sbar``, ``q1`` and ``q2``
are always derived.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

PRIMARY = ("m", "g", "b", "d", "e", "r", "h")
SECONDARY = ("ubar", "v", "s", "q")


def l_prob(p1: np.ndarray, l) -> np.ndarray:
    """P(L = l) from P(L = 1)."""
    return np.where(np.asarray(l) == 1, p1, 1.0 - p1)


def exact_u(m, b):
    # u(z,a,w) = sum_l m(z,l,a,w) b(l|a,w)
    return m[:, :, 1, :] * b[:, None, :] + m[:, :, 0, :] * (1.0 - b[:, None, :])


def exact_ubar(u, r):
    return np.einsum("iza,iza->ia", u, r)


def exact_v(m, r):
    # v(l,a,w) = sum_z m(z,l,a,w) r(z|a,w)
    return np.einsum("izla,iza->ila", m, r)


def exact_s(m, h):
    return np.einsum("izla,iz->ila", m, h)


def exact_q(u, h):
    return np.einsum("iza,iz->ia", u, h)


def l_average(x, b):
    """sum_l x(l,a,w) b(l|a,w) for x of shape (n, 2, nA)."""
    return x[:, 1, :] * b + x[:, 0, :] * (1.0 - b)


@dataclass
class NuisanceTables:
    a_values: np.ndarray
    m: np.ndarray
    g: np.ndarray
    b: np.ndarray
    d: np.ndarray
    e: np.ndarray
    r: np.ndarray
    h: np.ndarray
    ubar: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.a_values = np.asarray(self.a_values, dtype=float)
        u = exact_u(self.m, self.b)
        if self.ubar is None:
            self.ubar = exact_ubar(u, self.r)
        if self.v is None:
            self.v = exact_v(self.m, self.r)
        if self.s is None:
            self.s = exact_s(self.m, self.h)
        if self.q is None:
            self.q = exact_q(u, self.h)
        self._u = u

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def n_z(self) -> int:
        return self.h.shape[1]

    @property
    def n_a(self) -> int:
        return self.g.shape[1]

    @property
    def u(self) -> np.ndarray:
        return self._u

    @property
    def vbar(self) -> np.ndarray:
        return l_average(self.v, self.b)

    @property
    def sbar(self) -> np.ndarray:
        return l_average(self.s, self.b)

    @property
    def q1(self) -> np.ndarray:
        return self.ubar[:, 1] - self.ubar[:, 0]

    @property
    def q2(self) -> np.ndarray:
        return self.q[:, 1] - self.q[:, 0]

    def take(self, idx) -> "NuisanceTables":
        """Rows ``idx`` (e.g. map law states to their W stratum)."""
        kw = {f.name: getattr(self, f.name)[idx] for f in fields(self)
              if f.name in PRIMARY + SECONDARY}
        return NuisanceTables(a_values=self.a_values, diagnostics=dict(self.diagnostics), **kw)

    def replace(self, refresh=(), **changes) -> "NuisanceTables":
        """Copy with fields swapped.

        Secondary fields named in ``refresh`` are recomputed by exact sums from
        the (possibly changed) primary fields; the others are carried over.
        """
        kw = {name: getattr(self, name) for name in PRIMARY + SECONDARY}
        for name in refresh:
            kw[name] = None
        kw.update(changes)
        return NuisanceTables(a_values=self.a_values, diagnostics=dict(self.diagnostics), **kw)

    def exact_secondary(self) -> dict:
        """Exact-sum versions of the secondary nuisances from the primaries."""
        u = self._u
        return {
            "ubar": exact_ubar(u, self.r),
            "v": exact_v(self.m, self.r),
            "s": exact_s(self.m, self.h),
            "q": exact_q(u, self.h),
        }


def concat_rows(parts, order) -> NuisanceTables:
    """Stack per-fold tables and reorder rows to ``order`` (inverse permutation)."""
    kw = {}
    for name in PRIMARY + SECONDARY:
        kw[name] = np.concatenate([getattr(p, name) for p in parts])[order]
    diag = {}
    for p in parts:
        for k, v in p.diagnostics.items():
            diag[k] = diag.get(k, 0) + v
    return NuisanceTables(a_values=parts[0].a_values, diagnostics=diag, **kw)


__all__ = ["NuisanceTables", "PRIMARY", "SECONDARY", "l_prob", "concat_rows"]
