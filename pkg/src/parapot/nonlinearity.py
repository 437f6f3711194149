"""Exponential nonlinearity ``g(u) = E_l(a |u|^q)`` and the truncations ``T_k``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# largest s with exp(s) finite in double precision
_EXP_MAX = math.log(np.finfo(float).max)


def E_ell(s, ell):
    """``exp(s) - sum_{j < ell} s^j / j!`` for ``s >= 0``.

    Below ``s = ell / 2`` the tail series ``sum_{j >= ell} s^j / j!`` is summed
    directly (no cancellation); above, the head is subtracted from ``exp``.
    Values beyond the double range are returned as ``inf``.
    """
    ell = int(ell)
    if ell < 0:
        raise ValueError("ell must be >= 0")
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ValueError("E_ell is evaluated on s >= 0 only")
    out = np.empty_like(s_arr)
    small = s_arr < 0.5 * ell
    if np.any(small):
        out[small] = _tail(s_arr[small], ell)
    big = ~small
    if np.any(big):
        out[big] = _direct(s_arr[big], ell)
    return out if out.ndim else float(out)


def _tail(s, ell):
    term = np.ones_like(s)
    for j in range(1, ell + 1):
        term = term * s / j
    total = term.copy()
    j = ell
    # s < ell/2 so successive ratios s/(j+1) < 1/2; converges geometrically
    while True:
        j += 1
        term = term * s / j
        total += term
        if np.all(term <= np.finfo(float).eps * total):
            break
    return total


def _direct(s, ell):
    with np.errstate(over="ignore"):
        e = np.where(s > _EXP_MAX, np.inf, np.exp(np.minimum(s, _EXP_MAX)))
    head = np.zeros_like(s)
    term = np.ones_like(s)
    for j in range(ell):
        head += term
        term = term * s / (j + 1)
    return np.where(np.isinf(e), np.inf, e - head)


@dataclass(frozen=True)
class ExpNonlinearity:
    """Parameters ``(a, q, ell)`` with ``a > 0``, ``q >= 1``, integer ``ell >= 1``."""

    a: float = 1.0
    q: float = 1.0
    ell: int = 1

    def __post_init__(self):
        if not (self.a > 0):
            raise ValueError("a must be > 0")
        if not (self.q >= 1):
            raise ValueError("q must be >= 1")
        if int(self.ell) != self.ell or self.ell < 1:
            raise ValueError("ell must be an integer >= 1")
        object.__setattr__(self, "ell", int(self.ell))

    @classmethod
    def for_source(cls, a, q, ell):
        nl = cls(a, q, ell)
        if not (nl.ell * nl.q > 1):
            raise ValueError("source problems need ell * q > 1")
        return nl

    @property
    def lq(self):
        return self.ell * self.q

    def __call__(self, u):
        return g_ell(u, self)

    def signed(self, u):
        """``sign(u) g(u)``, the absorption term."""
        return np.sign(u) * g_ell(u, self)

    def derivative(self, u):
        """``d/du g(u)`` for ``u >= 0`` branch, extended evenly in ``|u|``."""
        au = np.abs(np.asarray(u, float))
        s = self.a * au ** self.q
        with np.errstate(invalid="ignore", over="ignore"):
            inner = self.a * self.q * au ** (self.q - 1.0)
            d = E_ell(s, self.ell - 1) * inner
        return np.where(au == 0, 0.0 if self.q > 1 or self.ell > 1 else self.a, d)

    def to_dict(self):
        return {"a": self.a, "q": self.q, "ell": self.ell}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d.get("a", 1.0)), float(d.get("q", 1.0)), int(d.get("ell", 1)))


def g_ell(u, nl: ExpNonlinearity):
    """``E_ell(a |u|^q)``; even in ``u``."""
    with np.errstate(over="ignore"):
        s = nl.a * np.abs(np.asarray(u, float)) ** nl.q
    return E_ell(s, nl.ell)


def truncate(s, k):
    """``T_k(s) = min(k, max(-k, s))``."""
    if not (k > 0):
        raise ValueError("truncation level must be > 0")
    return np.clip(s, -k, k)


def truncate_primitive(s, k):
    """``int_0^s T_k``: ``s^2/2`` on ``|s| <= k``, ``k|s| - k^2/2`` beyond."""
    if not (k > 0):
        raise ValueError("truncation level must be > 0")
    a = np.abs(np.asarray(s, float))
    out = np.where(a <= k, 0.5 * a * a, k * a - 0.5 * k * k)
    return out if out.ndim else float(out)
