"""Known transformation families for the linear transformation model.

A family is given by a decreasing survival transform ``Lambda`` with
``Lambda(0) = 1``.  All likelihood computations use ``G = -log(Lambda)``
and its first three derivatives, which are available in closed form for the
three supported kinds:

* ``cox``            G(u) = u
* ``odds-rate:<c>``  G(u) = log(1 + c u) / c,           c > 0
* ``bent:<c>``       G(u) = log(1 + 2 c u + u^2),       1/2 < c < 1
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CAP = 1e12

KINDS = ("cox", "odds-rate", "bent")


class DomainError(ValueError):
    """Argument outside the domain of a transform."""


@dataclass(frozen=True)
class TransformFamily:
    """A closed-form transformation family.

    Parameters
    ----------
    kind : {'cox', 'odds-rate', 'bent'}
    c : float
        Shape parameter.  Ignored for ``cox``; must be positive for
        ``odds-rate`` and lie in (1/2, 1) for ``bent``.
    cap : float
        Largest argument accepted by the evaluators.
    """

    kind: str = "cox"
    c: float = 0.0
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.kind == "odds-rate" and not self.c > 0:
            raise ValueError("odds-rate family requires c > 0")
        if self.kind == "bent" and not 0.5 < self.c < 1.0:
            raise ValueError("bent family requires 1/2 < c < 1")
        if self.kind == "cox":
            object.__setattr__(self, "c", 0.0)

    @property
    def is_cox(self) -> bool:
        return self.kind == "cox"

    def __str__(self) -> str:
        return self.spec

    @property
    def spec(self) -> str:
        if self.kind == "cox":
            return "cox"
        return f"{self.kind}:{self.c:g}"

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise DomainError("transform argument must be finite")
        if np.any(u < 0):
            raise DomainError("transform argument must be nonnegative")
        if np.any(u > self.cap):
            raise DomainError(f"transform argument exceeds cap {self.cap:g}")
        return u

    def g_derivs(self, u):
        """Return ``(G, dG, ddG, dddG)`` evaluated at ``u`` (scalar or array)."""
        u = self._check(u)
        if self.kind == "cox":
            one = np.ones_like(u)
            zero = np.zeros_like(u)
            return u.copy(), one, zero, zero.copy()
        c = self.c
        if self.kind == "odds-rate":
            s = 1.0 + c * u
            return np.log1p(c * u) / c, 1.0 / s, -c / s**2, 2.0 * c * c / s**3
        s = 1.0 + 2.0 * c * u + u * u
        dg = (2.0 * c + 2.0 * u) / s
        ddg = 2.0 / s - dg * dg
        dddg = -2.0 * dg / s - 2.0 * dg * ddg
        return np.log(s), dg, ddg, dddg

    def G(self, u):
        return self.g_derivs(u)[0]

    def lambda_eval(self, u):
        """Survival transform ``Lambda(u) = exp(-G(u))``."""
        u = self._check(u)
        if self.kind == "cox":
            return np.exp(-u)
        if self.kind == "odds-rate":
            return np.exp(-np.log1p(self.c * u) / self.c)
        return 1.0 / (1.0 + 2.0 * self.c * u + u * u)

    def lambda_inv(self, p):
        """Inverse of ``Lambda`` on (0, 1]."""
        p = np.asarray(p, dtype=float)
        if not np.all(np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
            raise DomainError("lambda_inv requires 0 < p <= 1")
        if self.kind == "cox":
            return -np.log(p)
        c = self.c
        if self.kind == "odds-rate":
            return np.expm1(-c * np.log(p)) / c
        return -c + np.sqrt(c * c - 1.0 + 1.0 / p)


COX = TransformFamily("cox")
PROPORTIONAL_ODDS = TransformFamily("odds-rate", 1.0)


def parse_family(spec: str) -> TransformFamily:
    """Parse ``"cox"``, ``"odds-rate:<c>"`` or ``"bent:<c>"``."""
    text = spec.strip().lower()
    if text == "cox":
        return COX
    if text in ("po", "proportional-odds"):
        return PROPORTIONAL_ODDS
    kind, sep, value = text.partition(":")
    if not sep or kind not in ("odds-rate", "bent"):
        raise ValueError(f"bad family spec {spec!r}; expected cox, odds-rate:<c> or bent:<c>")
    try:
        c = float(value)
    except ValueError:
        raise ValueError(f"bad family parameter in {spec!r}") from None
    return TransformFamily(kind, c)
