"""Closed-form brackets for coordinate and projected-radius marginals of Uniform(S^{d-1}).

A single coordinate Z of a uniform point on the sphere has density
``c_d (1 - z^2)^alpha`` on [-1, 1] with ``alpha = (d - 3)/2``. The squared
norm of an m-dimensional coordinate projection is Beta(m/2, (d - m)/2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, special


class Bracket(NamedTuple):
    lower: float
    upper: float

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= x <= self.upper + slack


class BoundaryTail(NamedTuple):
    lower: float
    upper: float
    beta_params: tuple[float, float]
    exact: float


def _check_d(d: int) -> None:
    if int(d) != d or d < 2:
        raise ValueError(f"d must be an integer >= 2, got {d}")


def log_c_d(d: int) -> float:
    _check_d(d)
    return special.gammaln(d / 2) - 0.5 * math.log(math.pi) - special.gammaln((d - 1) / 2)


def c_d(d: int) -> float:
    """Normalizing constant of the coordinate marginal."""
    return math.exp(log_c_d(d))


def _ordered(a: float, b: float) -> Bracket:
    # for d = 2 the factor 2**alpha is below one and the two ends swap
    return Bracket(min(a, b), max(a, b))


@dataclass(frozen=True)
class SphereMarginals:
    d: int
    m: int | None = None

    def __post_init__(self):
        _check_d(self.d)
        if self.m is not None and not (1 <= self.m < self.d):
            raise ValueError(f"need 1 <= m < d, got m={self.m}, d={self.d}")

    @property
    def alpha(self) -> float:
        return (self.d - 3) / 2

    @property
    def c_d(self) -> float:
        return c_d(self.d)

    def density(self, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        inside = np.abs(z) < 1
        out[inside] = self.c_d * (1 - z[inside] ** 2) ** self.alpha
        return out

    def density_mass(self) -> float:
        """Numerical integral of the density over [-1, 1] (algebraic-weight quadrature)."""
        a = self.alpha
        val, _ = integrate.quad(lambda z: 1.0, -1.0, 1.0, weight="alg", wvar=(a, a),
                                epsabs=1e-13, epsrel=1e-13)
        return self.c_d * val

    # product bracket for P(Z > t) * E[relu(Z - t)]
    def _log_pair(self) -> tuple[float, float]:
        a = self.alpha
        base = 2 * log_c_d(self.d) - 2 * math.log(a + 1) - math.log(a + 2)
        return base, base + 2 * a * math.log(2.0)

    @property
    def c_L(self) -> float:
        lo, hi = self._log_pair()
        return math.exp(min(lo, hi))

    @property
    def c_U(self) -> float:
        lo, hi = self._log_pair()
        return math.exp(max(lo, hi))

    # projected-radius constants
    def _log_beta_pair(self) -> tuple[float, float]:
        if self.m is None:
            raise ValueError("projected-radius constants need m")
        a, b = self.m / 2, (self.d - self.m) / 2
        base = -math.log(b) - special.betaln(a, b)
        e = abs(a - 1) * math.log(2.0)
        return base - e, base + e + b * math.log(2.0)

    @property
    def c_L_dm(self) -> float:
        return math.exp(self._log_beta_pair()[0])

    @property
    def c_U_dm(self) -> float:
        return math.exp(self._log_beta_pair()[1])


def _check_t(t: float) -> float:
    t = float(t)
    if not (0.0 <= t < 1.0):
        raise ValueError(f"t must lie in [0, 1), got {t}")
    return t


def sphere_tail(d: int, t: float) -> Bracket:
    """Bracket for P(Z > t)."""
    t = _check_t(t)
    a = (d - 3) / 2
    lc = log_c_d(d) - math.log(a + 1) + (a + 1) * math.log1p(-t)
    return _ordered(math.exp(lc), math.exp(lc + a * math.log(2.0)))


def sphere_relu_margin(d: int, t: float) -> Bracket:
    """Bracket for E[relu(Z - t)]."""
    t = _check_t(t)
    a = (d - 3) / 2
    lc = log_c_d(d) - math.log(a + 1) - math.log(a + 2) + (a + 2) * math.log1p(-t)
    return _ordered(math.exp(lc), math.exp(lc + a * math.log(2.0)))


def sphere_tail_margin_product(d: int, t: float) -> Bracket:
    """Bracket for P(Z > t) * E[relu(Z - t)] ~ (1 - t)^d."""
    t = _check_t(t)
    sm = SphereMarginals(d)
    s = (2 * sm.alpha + 3) * math.log1p(-t)
    return Bracket(sm.c_L * math.exp(s), sm.c_U * math.exp(s))


def sphere_tail_exact(d: int, t: float) -> float:
    """P(Z > t) by quadrature of the density."""
    t = _check_t(t)
    a = (d - 3) / 2
    # substitute z = 1 - y to keep the endpoint singularity for d = 2 at an algebraic weight
    val, _ = integrate.quad(lambda y: (2 - y) ** a, 0.0, 1.0 - t, weight="alg", wvar=(a, 0.0),
                            epsabs=1e-14, epsrel=1e-12)
    return c_d(d) * val


def sphere_relu_margin_exact(d: int, t: float) -> float:
    t = _check_t(t)
    a = (d - 3) / 2
    val, _ = integrate.quad(lambda y: (1 - t - y) * (2 - y) ** a, 0.0, 1.0 - t, weight="alg",
                            wvar=(a, 0.0), epsabs=1e-14, epsrel=1e-12)
    return c_d(d) * val


def boundary_tail(d: int, m: int, t: float) -> BoundaryTail:
    """Bracket for P(||Z|| > 1 - t) where Z is an m-coordinate projection.

    ``exact`` is the Beta(m/2, (d-m)/2) survival function at (1 - t)^2.
    """
    _check_d(d)
    if not (1 <= m < d):
        raise ValueError(f"need 1 <= m < d, got m={m}, d={d}")
    t = float(t)
    if not (0.0 < t <= 0.25):
        raise ValueError(f"t must lie in (0, 1/4], got {t}")
    sm = SphereMarginals(d, m)
    a, b = m / 2, (d - m) / 2
    tb = b * math.log(t)
    lo, hi = sm._log_beta_pair()
    exact = float(special.betaincc(a, b, (1.0 - t) ** 2))
    return BoundaryTail(math.exp(lo + tb), math.exp(hi + tb), (a, b), exact)
