"""Separable convex penalties ``g`` with their proximal and conjugate maps.

Every penalty exposes

* ``value(y)``            -- ``g(y)``
* ``prox(y, tau)``        -- ``argmin_x tau*g(x) + 0.5*||x - y||^2``
* ``conj_value(v, tol)``  -- ``g*(v)``
* ``conj_prox(u, tau)``   -- ``Prox_{tau g*}(u)``, through the Moreau identity

plus ``domain_radius`` and ``conj_strong_convexity`` describing ``g*``.
"""

from __future__ import annotations

import numpy as np

__all__ = ["ProxFn", "Zero", "L1", "Huber", "SqL2", "DEFAULT_DOMAIN_TOL"]

DEFAULT_DOMAIN_TOL = 1e-9


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"prox scale must be positive, got {tau}")


class ProxFn:
    kind = "abstract"
    #: bound on ``||v||_inf`` over ``dom g*`` (``inf`` when unbounded)
    domain_radius = np.inf
    #: strong convexity modulus of ``g*`` on its domain
    conj_strong_convexity = 0.0

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = int(dimension)

    def _vec(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dimension,):
            raise ValueError(
                f"{self.kind}: expected vector of length {self.dimension}, got shape {y.shape}"
            )
        return y

    def value(self, y) -> float:
        raise NotImplementedError

    def prox(self, y, tau: float) -> np.ndarray:
        _check_tau(tau)
        return self._prox(self._vec(y), float(tau))

    def conj_prox(self, u, tau: float) -> np.ndarray:
        _check_tau(tau)
        u = self._vec(u)
        return u - tau * self._prox(u / tau, 1.0 / tau)

    def conj_value(self, v, tol: float = DEFAULT_DOMAIN_TOL) -> float:
        raise NotImplementedError

    def _in_domain(self, v, tol):
        return np.max(np.abs(v), initial=0.0) <= self.domain_radius + tol

    def __repr__(self):
        return f"{type(self).__name__}(dimension={self.dimension})"


class Zero(ProxFn):
    kind = "Zero"
    domain_radius = 0.0

    def value(self, y):
        self._vec(y)
        return 0.0

    def _prox(self, y, tau):
        return y.copy()

    def conj_prox(self, u, tau):
        # g* is the indicator of {0}; Moreau would give u - tau*(u/tau),
        # which is zero only up to rounding
        _check_tau(tau)
        return np.zeros_like(self._vec(u))

    def conj_value(self, v, tol=DEFAULT_DOMAIN_TOL):
        v = self._vec(v)
        return 0.0 if self._in_domain(v, tol) else np.inf


class L1(ProxFn):
    """``g(y) = weight * ||y||_1``."""

    kind = "L1"

    def __init__(self, dimension, weight):
        super().__init__(dimension)
        if not weight > 0:
            raise ValueError("L1 weight must be positive")
        self.weight = float(weight)
        self.domain_radius = self.weight

    def value(self, y):
        return self.weight * float(np.abs(self._vec(y)).sum())

    def _prox(self, y, tau):
        return np.sign(y) * np.maximum(np.abs(y) - tau * self.weight, 0.0)

    def conj_value(self, v, tol=DEFAULT_DOMAIN_TOL):
        v = self._vec(v)
        return 0.0 if self._in_domain(v, tol) else np.inf


class Huber(ProxFn):
    """``g(y) = weight * sum_j h(y_j)`` with the Huber function of width ``alpha``.

    ``h(t) = t^2 / (2 alpha)`` for ``|t| <= alpha`` and ``|t| - alpha/2`` otherwise.
    """

    kind = "Huber"

    def __init__(self, dimension, weight, alpha):
        super().__init__(dimension)
        if not weight > 0 or not alpha > 0:
            raise ValueError("Huber weight and alpha must be positive")
        self.weight = float(weight)
        self.alpha = float(alpha)
        self.domain_radius = self.weight
        self.conj_strong_convexity = self.alpha / self.weight

    def value(self, y):
        a = np.abs(self._vec(y))
        h = np.where(a <= self.alpha, a * a / (2 * self.alpha), a - self.alpha / 2)
        return self.weight * float(h.sum())

    def _prox(self, y, tau):
        tn = tau * self.weight
        inner = np.abs(y) <= self.alpha + tn
        return np.where(inner, y * (self.alpha / (self.alpha + tn)), y - tn * np.sign(y))

    def conj_value(self, v, tol=DEFAULT_DOMAIN_TOL):
        v = self._vec(v)
        if not self._in_domain(v, tol):
            return np.inf
        return self.alpha / (2 * self.weight) * float(v @ v)


class SqL2(ProxFn):
    """``g(y) = weight * ||y||_2^2``."""

    kind = "SqL2"

    def __init__(self, dimension, weight):
        super().__init__(dimension)
        if not weight > 0:
            raise ValueError("SqL2 weight must be positive")
        self.weight = float(weight)
        self.conj_strong_convexity = 1.0 / (2 * self.weight)

    def value(self, y):
        y = self._vec(y)
        return self.weight * float(y @ y)

    def _prox(self, y, tau):
        return y / (1.0 + 2.0 * tau * self.weight)

    def conj_value(self, v, tol=DEFAULT_DOMAIN_TOL):
        v = self._vec(v)
        return float(v @ v) / (4 * self.weight)
