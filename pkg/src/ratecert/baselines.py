"""Closed-form rate bounds and analytic certificates.

Every formula is evaluated after rescaling to L = 1 (m -> m/L, eta -> eta L);
the bounds are invariant under that rescaling.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["BoundKind", "analytic_rate", "AdmmOptimum", "admm_optimal_point",
           "iteration_complexity"]


class BoundKind(str, enum.Enum):
    NESTEROV_GD = "nesterov-gd"          # sqrt(1 - 2 eta m L / (L + m))
    POLYAK_GD = "polyak-gd"              # max |1 - eta a| over a in {m, L}
    GD_SDP_CLOSED_FORM = "gd-sdp"        # 1x1 dissipation LMI, multiplier eliminated
    ESTIMATE_SEQUENCE = "estimate-sequence"
    ADMM_DENG_UPPER = "admm-deng"
    ADMM_QUADRATIC_LOWER = "admm-lower"


def _parse(kind: BoundKind | str) -> BoundKind:
    if isinstance(kind, BoundKind):
        return kind
    try:
        return BoundKind(str(kind).lower())
    except ValueError:
        names = ", ".join(k.value for k in BoundKind)
        raise ValueError(f"unknown bound {kind!r}; expected one of {names}") from None


def _gd_sdp(eta: float, m: float) -> float:
    # With L = 1, the scalar LMI
    #   [[1 - rho^2 - lam m, (1+m) lam/2 - eta], [., eta^2 - lam]] <= 0
    # is feasible iff rho^2 >= 1 - eta^2 m - 2 a s + |a| (1 - m) with
    # s = (1+m)/2, a = eta (1 - eta s), after minimizing over lam.
    s = 0.5 * (1.0 + m)
    a = eta * (1.0 - eta * s)
    rho_sq = 1.0 - eta * eta * m - 2.0 * a * s + abs(a) * (1.0 - m)
    return math.sqrt(max(rho_sq, 0.0))


def analytic_rate(kind: BoundKind | str, m: float, L: float, eta: float | None = None) -> float:
    """Closed-form rate bound ``kind`` for slopes in [m, L] and stepsize ``eta``."""
    kind = _parse(kind)
    if not (math.isfinite(m) and math.isfinite(L)):
        raise ValueError("m and L must be finite")
    if m < 0:
        raise ValueError("m must be nonnegative")
    if not m < L:
        raise ValueError(f"need m < L, got m={m}, L={L}")
    q = m / L
    if kind is BoundKind.ESTIMATE_SEQUENCE:
        return math.sqrt(1.0 - math.sqrt(q))
    if eta is None:
        raise ValueError(f"{kind.value} needs a stepsize")
    if not (math.isfinite(eta) and eta >= 0):
        raise ValueError("eta must be finite and nonnegative")
    h = eta * L

    if kind is BoundKind.POLYAK_GD:
        return max(abs(1.0 - h * q), abs(1.0 - h))
    if kind is BoundKind.NESTEROV_GD:
        if h > 2.0 / (1.0 + q) * (1 + 1e-12):
            raise ValueError("Nesterov's gradient analysis needs 0 <= eta <= 2/(L+m)")
        return math.sqrt(max(1.0 - 2.0 * h * q / (1.0 + q), 0.0))
    if kind is BoundKind.GD_SDP_CLOSED_FORM:
        return _gd_sdp(h, q)
    if kind is BoundKind.ADMM_DENG_UPPER:
        if not eta > 0:
            raise ValueError("ADMM bounds need eta > 0")
        # eta^2 L m = h^2 q and eta m = h q
        return math.sqrt((h * h * q + 1.0) / (h * h * q + 2.0 * h * q + 1.0))
    if kind is BoundKind.ADMM_QUADRATIC_LOWER:
        if not eta > 0:
            raise ValueError("ADMM bounds need eta > 0")
        return max(1.0 / (1.0 + h * q), h / (1.0 + h))
    raise AssertionError(kind)


@dataclass(frozen=True)
class AdmmOptimum:
    eta: float
    rho: float
    lambda1: float
    lambda2: float
    P: np.ndarray


def admm_optimal_point(m: float, L: float) -> AdmmOptimum:
    """Rate-optimal stepsize for ADMM and the analytic certificate at that point."""
    if not (math.isfinite(m) and math.isfinite(L)):
        raise ValueError("m and L must be finite")
    if not 0 < m < L:
        raise ValueError(f"need 0 < m < L, got m={m}, L={L}")
    sm, sL = math.sqrt(m), math.sqrt(L)
    eta = 1.0 / (sm * sL)
    rho = sL / (sL + sm)
    scale = sm * (sL + sm) * (L - m) / 2.0
    off = math.sqrt(m / L)
    P = scale * np.array([[1.0, off], [off, 1.0]])
    return AdmmOptimum(eta, rho, 1.0, (L - m) ** 2 / L, P)


def iteration_complexity(rho: float) -> float:
    """-1/log(rho): iterations per e-fold reduction; infinite when rho >= 1."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    if rho >= 1.0:
        return math.inf
    return -1.0 / math.log(rho)
