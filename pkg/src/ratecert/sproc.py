"""S-procedure for 2x2 quadratic forms.

For symmetric S (hypothesis) and Q (conclusion), the implication

    x' S x <= 0  =>  x' Q x <= 0

holds whenever some lambda > 0 makes ``S - lambda Q`` positive
semidefinite: then lambda x'Qx <= x'Sx <= 0.  A zero multiplier proves
nothing.  In two dimensions the converse also holds as long as the
hypothesis set has an interior point (some x with x' S x < 0) and the
conclusion is not trivially true (Q negative semidefinite, which this form
cannot express); when S is PSD the hypothesis is degenerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import sdpcore
from .model import OracleClass, OracleKind

__all__ = ["NoMultiplier", "find_multiplier", "Decomposition", "sector_identities",
           "sector_form", "find_violation", "hypothesis_degenerate", "sector_value"]

SYM_TOL = 1e-12


@dataclass(frozen=True)
class NoMultiplier:
    """No lambda >= 0 exists.

    ``witness`` is a unit vector found by sampling on which the implication
    fails, if one was found.  ``degenerate`` flags a hypothesis form with no
    strictly feasible point, where the S-procedure need not be lossless.
    """

    witness: np.ndarray | None
    degenerate: bool
    message: str = ""


def _check_sym(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains NaN or Inf")
    if abs(M[0, 1] - M[1, 0]) > SYM_TOL * max(1.0, np.max(np.abs(M))):
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def _circle(n: int = 20000) -> np.ndarray:
    th = np.linspace(0.0, np.pi, n, endpoint=False)
    return np.column_stack([np.cos(th), np.sin(th)])


def _forms(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk,ik->i", X, M, X)


def find_violation(hyp: np.ndarray, concl: np.ndarray, tol: float = 1e-12):
    """Unit vector x with x'hyp x <= 0 < x'concl x, found on a dense circle grid."""
    X = _circle()
    h, c = _forms(hyp, X), _forms(concl, X)
    bad = (h <= tol) & (c > tol)
    if not np.any(bad):
        return None
    idx = np.flatnonzero(bad)
    return X[idx[np.argmax(c[idx])]]


def hypothesis_degenerate(S) -> bool:
    """True when no x has x'Sx < 0, so only trivial x satisfy the hypothesis strictly."""
    S = _check_sym(S, "S")
    return bool(np.linalg.eigvalsh(S)[0] >= -SYM_TOL * max(1.0, np.max(np.abs(S))))


def find_multiplier(S, Q) -> float | NoMultiplier:
    """Return lambda > 0 with ``S - lambda Q`` PSD, or :class:`NoMultiplier`.

    The solver's point is polished by maximizing the smallest eigenvalue of
    ``S - lambda Q`` over lambda, which recovers a unique multiplier to near
    machine precision.
    """
    S, Q = _check_sym(S, "S"), _check_sym(Q, "Q")
    prob = sdpcore.FeasibilityProblem(
        1, [sdpcore.PsdBlock(S, -Q[None, :, :], "multiplier")], nonneg=[0])
    res = sdpcore.solve_feasibility(prob)
    if not res.ok:
        return NoMultiplier(find_violation(S, Q), hypothesis_degenerate(S),
                            f"{res.status.value}: {res.message}")
    solver_lam = float(res.x[0])

    def min_eig(t: float) -> float:
        return float(np.linalg.eigvalsh(S - t * Q)[0])

    def slope(t: float) -> float:
        # derivative of the (concave) smallest eigenvalue in t
        v = np.linalg.eigh(S - t * Q)[1][:, 0]
        return float(-v @ Q @ v)

    polished = _maximize_concave(slope, solver_lam)
    floor = -sdpcore.PSD_TOL
    # lambda Q must matter next to S for the certificate to say anything
    tiny = 1e-9 * max(np.max(np.abs(S)), 1e-300) / max(np.max(np.abs(Q)), 1e-300)
    for lam in (polished, solver_lam):
        if lam is not None and lam > tiny and min_eig(lam) >= min(min_eig(solver_lam), floor):
            return float(lam)
    return NoMultiplier(find_violation(S, Q), True,
                        "only lambda = 0 keeps S - lambda Q PSD; that certifies nothing")


def _maximize_concave(slope, start: float) -> float | None:
    """Root of a nonincreasing ``slope`` on [0, inf), or 0 if slope(0) <= 0."""
    if slope(0.0) <= 0.0:
        return 0.0
    hi = max(2.0 * start, 1.0)
    for _ in range(60):
        if slope(hi) < 0.0:
            break
        hi *= 2.0
    else:
        return None
    return float(brentq(slope, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def sector_form(m: float, L: float) -> np.ndarray:
    """Matrix of the sector form on (y, u); nonpositive on the sector [m, L]."""
    return OracleClass(OracleKind.SECTOR, m, L).matrix()


@dataclass(frozen=True)
class Decomposition:
    """``S = coef * conclusion + weight * (residual . (y, u))^2``.

    Since the square is nonnegative and ``S <= 0`` on the sector, the
    conclusion form is nonpositive there whenever ``coef > 0``.
    """

    name: str
    coef: float
    conclusion: np.ndarray
    weight: float
    residual: np.ndarray

    def matrix(self) -> np.ndarray:
        return self.coef * self.conclusion + self.weight * np.outer(self.residual, self.residual)

    def evaluate(self, y, u):
        """Right-hand side at scalar or array-valued (y, u)."""
        y, u = np.asarray(y, dtype=float), np.asarray(u, dtype=float)
        C = self.conclusion
        concl = C[0, 0] * y * y + 2 * C[0, 1] * y * u + C[1, 1] * u * u
        res = self.residual[0] * y + self.residual[1] * u
        return self.coef * concl + self.weight * res * res


def sector_identities(m: float, L: float) -> tuple[Decomposition, ...]:
    """Four ways of writing the sector form as a conclusion plus a square.

    Conclusions, each nonpositive on the sector [m, L]:
      m^2 y^2 - u^2,   u^2 - L^2 y^2,   m y^2 - u y,   u y - L y^2.
    """
    if not (math.isfinite(m) and math.isfinite(L)):
        raise ValueError("m and L must be finite")
    if not m > 0:
        raise ValueError("the decompositions need m > 0")
    if not m < L:
        raise ValueError(f"need m < L, got m={m}, L={L}")
    d, s = L - m, L + m
    return (
        Decomposition("lower-norm", d / (2 * m), np.array([[m * m, 0.0], [0.0, -1.0]]),
                      s / (2 * m), np.array([m, -1.0])),
        Decomposition("upper-norm", d / (2 * L), np.array([[-L * L, 0.0], [0.0, 1.0]]),
                      s / (2 * L), np.array([-L, 1.0])),
        Decomposition("lower-inner", d, np.array([[m, -0.5], [-0.5, 0.0]]),
                      1.0, np.array([m, -1.0])),
        Decomposition("upper-inner", d, np.array([[-L, 0.5], [0.5, 0.0]]),
                      1.0, np.array([-L, 1.0])),
    )


def sector_value(m: float, L: float, y, u):
    """Sector form evaluated directly: (u - m y)(u - L y)."""
    y, u = np.asarray(y, dtype=float), np.asarray(u, dtype=float)
    return (u - m * y) * (u - L * y)
