"""Small dense semidefinite feasibility problems.

A :class:`FeasibilityProblem` asks for a vector ``x`` such that a list of
affine symmetric-matrix maps

    F_j(x) = F_j0 + sum_i x_i F_ji

are all positive semidefinite, subject to linear equalities ``A x = b``,
nonnegativity of selected coordinates and a box ``|x_i| <= bound``.

The problem is solved as the slack-maximization program

    maximize t  subject to  F_j(x) >= t I,  t <= margin

with cvxopt's primal-dual interior-point solver.  Equalities are eliminated
up front by a nullspace parametrization, so they hold to rounding error at
every returned point.  Whatever the solver reports, a point is only handed
back as a :class:`Solution` after an independent eigenvalue check.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from cvxopt import matrix, solvers
from scipy.linalg import null_space

log = logging.getLogger(__name__)

PSD_TOL = 1e-9
EQ_TOL = 1e-9
NONNEG_TOL = 1e-12
MAX_BLOCK = 32
MAX_DIM = 128

# tight first, then cvxopt-default-like tolerances if the tight run stalls
_ATTEMPTS = (
    {"show_progress": False, "abstol": 1e-10, "reltol": 1e-10, "feastol": 1e-10, "maxiters": 100},
    {"show_progress": False, "abstol": 1e-8, "reltol": 1e-8, "feastol": 1e-8, "maxiters": 100},
)


class Status(str, enum.Enum):
    SOLUTION = "solution"
    INFEASIBLE = "infeasible"
    FAILURE = "failure"


@dataclass(frozen=True)
class PsdBlock:
    """Affine map ``x -> const + sum_i x_i coeffs[i]`` required to be PSD."""

    const: np.ndarray
    coeffs: np.ndarray  # shape (dim, k, k)
    name: str = ""

    def at(self, x: np.ndarray) -> np.ndarray:
        M = self.const + np.tensordot(x, self.coeffs, axes=1)
        return 0.5 * (M + M.T)

    @property
    def size(self) -> int:
        return self.const.shape[0]


@dataclass(frozen=True)
class FeasibilityProblem:
    dim: int
    blocks: Sequence[PsdBlock]
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    nonneg: Sequence[int] = ()
    bound: float = 1e6

    def __post_init__(self):
        if self.dim < 1 or self.dim > MAX_DIM:
            raise ValueError(f"decision dimension {self.dim} outside [1, {MAX_DIM}]")
        for blk in self.blocks:
            k = blk.size
            if k > MAX_BLOCK:
                raise ValueError(f"block {blk.name!r} of size {k} exceeds {MAX_BLOCK}")
            if blk.const.shape != (k, k) or blk.coeffs.shape != (self.dim, k, k):
                raise ValueError(f"block {blk.name!r} has inconsistent shapes")
            if not (np.all(np.isfinite(blk.const)) and np.all(np.isfinite(blk.coeffs))):
                raise ValueError(f"block {blk.name!r} contains NaN or Inf")
        if (self.eq_matrix is None) != (self.eq_rhs is None):
            raise ValueError("eq_matrix and eq_rhs must be given together")
        if self.eq_matrix is not None:
            if self.eq_matrix.ndim != 2 or self.eq_matrix.shape[1] != self.dim:
                raise ValueError("eq_matrix must have dim columns")
            if self.eq_rhs.shape != (self.eq_matrix.shape[0],):
                raise ValueError("eq_rhs length does not match eq_matrix")
            if not (np.all(np.isfinite(self.eq_matrix)) and np.all(np.isfinite(self.eq_rhs))):
                raise ValueError("equality data contains NaN or Inf")
        for i in self.nonneg:
            if not 0 <= i < self.dim:
                raise ValueError(f"nonnegativity index {i} out of range")

    def slacks(self, x: np.ndarray) -> dict[str, float]:
        """Minimum eigenvalue of every block at ``x`` (independent of the solver)."""
        return {
            blk.name or f"block{j}": float(np.linalg.eigvalsh(blk.at(x))[0])
            for j, blk in enumerate(self.blocks)
        }

    def check(self, x: np.ndarray) -> bool:
        if not np.all(np.isfinite(x)):
            return False
        if any(s < -PSD_TOL for s in self.slacks(x).values()):
            return False
        if self.eq_matrix is not None:
            if np.max(np.abs(self.eq_matrix @ x - self.eq_rhs), initial=0.0) > EQ_TOL:
                return False
        if self.nonneg and np.min(x[list(self.nonneg)]) < -NONNEG_TOL:
            return False
        return True


@dataclass
class Result:
    status: Status
    x: np.ndarray | None = None
    slacks: dict[str, float] = field(default_factory=dict)
    objective: float | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.SOLUTION

    @property
    def margin(self) -> float:
        return min(self.slacks.values()) if self.slacks else float("nan")


def _affine_param(prob: FeasibilityProblem):
    """Return (x0, N) with {x : A x = b} = {x0 + N z}, or None if inconsistent."""
    if prob.eq_matrix is None or prob.eq_matrix.shape[0] == 0:
        return np.zeros(prob.dim), np.eye(prob.dim)
    A, b = prob.eq_matrix, prob.eq_rhs
    x0, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.max(np.abs(A @ x0 - b)) > EQ_TOL * max(1.0, np.max(np.abs(b))):
        return None
    return x0, null_space(A)


def solve_feasibility(prob: FeasibilityProblem, margin: float = 1.0,
                      objective: np.ndarray | None = None) -> Result:
    """Search for a point of ``prob`` with the largest common slack up to ``margin``.

    With ``objective`` given, instead minimize ``objective @ x`` over the
    feasible set (slack fixed at zero).

    Returns a :class:`Result` whose status is ``SOLUTION`` only if the point
    passes :meth:`FeasibilityProblem.check`; ``INFEASIBLE`` when the solver's
    dual bound proves the best slack is negative; ``FAILURE`` otherwise.
    """
    if not margin > 0:
        raise ValueError("margin must be positive")
    param = _affine_param(prob)
    if param is None:
        return Result(Status.INFEASIBLE, message="inconsistent equality constraints")
    x0, N = param
    if N.shape[1] and prob.blocks:
        # directions invisible to every block only make the solve degenerate
        K = np.vstack([np.tensordot(N.T, b.coeffs, axes=1).reshape(N.shape[1], -1).T
                       for b in prob.blocks])
        _, sv, Vt = np.linalg.svd(K, full_matrices=False)
        keep = sv > 1e-12 * max(sv[0], 1e-300)
        N = N @ Vt[keep].T
    nz = N.shape[1]
    if nz == 0:
        # the equalities (and block invisibility) leave nothing to choose
        x = x0.copy()
        if prob.check(x):
            return Result(Status.SOLUTION, x, prob.slacks(x), objective=None)
        return Result(Status.INFEASIBLE, x, prob.slacks(x),
                      message="the only admissible point violates the constraints")

    # Rows of (G, h) for the linear part, v = (z, t).
    Gl, hl = [], []
    e_t = np.zeros(nz + 1)
    e_t[-1] = 1.0
    Gl.append(e_t)
    hl.append(margin)
    for i in prob.nonneg:
        Gl.append(np.append(-N[i], 0.0))
        hl.append(x0[i])
    for i in range(prob.dim):
        if nz and np.any(N[i]):
            Gl.append(np.append(N[i], 0.0))
            hl.append(prob.bound - x0[i])
            Gl.append(np.append(-N[i], 0.0))
            hl.append(prob.bound + x0[i])

    Gs, hs = [], []
    for blk in prob.blocks:
        k = blk.size
        red = np.tensordot(N.T, blk.coeffs, axes=1)
        cols = [-F.reshape(-1, order="F") for F in red]
        cols.append(np.eye(k).reshape(-1, order="F") if objective is None else np.zeros(k * k))
        Gs.append(matrix(np.column_stack(cols)))
        hs.append(matrix(blk.at(x0)))

    c = np.zeros(nz + 1)
    if objective is None:
        c[-1] = -1.0
    else:
        objective = np.asarray(objective, dtype=float)
        if objective.shape != (prob.dim,) or not np.all(np.isfinite(objective)):
            raise ValueError("objective must be a finite vector of length dim")
        c[:-1] = N.T @ objective
        # t only appears in t <= margin; pin it so the program stays bounded
        Gl.append(-e_t)
        hl.append(0.0)
    args = (matrix(c),)
    kwargs = dict(Gl=matrix(np.array(Gl)), hl=matrix(np.array(hl)), Gs=Gs, hs=hs)
    result = Result(Status.FAILURE, message="solver did not run")
    for opts in _ATTEMPTS:
        result = _attempt(prob, x0, N, args, kwargs, opts, objective)
        if result.status is not Status.FAILURE:
            break
    return result


def _attempt(prob, x0, N, args, kwargs, opts, objective=None) -> Result:
    try:
        sol = solvers.sdp(*args, **kwargs, options=dict(opts))
    except (ArithmeticError, ValueError) as exc:
        log.debug("cvxopt raised %s", exc)
        return Result(Status.FAILURE, message=f"solver error: {exc}")
    if sol["x"] is None:
        return Result(Status.FAILURE, message=f"solver status {sol['status']}")
    v = np.array(sol["x"]).ravel()
    x = x0 + N @ v[:-1]
    t = float(v[-1]) if objective is None else float(objective @ x)
    if prob.nonneg:
        # roundoff on an exactly-zero multiplier
        idx = list(prob.nonneg)
        x[idx] = np.where((x[idx] < 0) & (x[idx] > -1e-10), 0.0, x[idx])
    slacks = prob.slacks(x)
    if prob.check(x):
        return Result(Status.SOLUTION, x, slacks, objective=t)
    if objective is not None:
        if sol["status"] == "primal infeasible":
            return Result(Status.INFEASIBLE, x, slacks, message="primal infeasible")
        return Result(Status.FAILURE, x, slacks, objective=t,
                      message=f"solver status {sol['status']}")
    dual = sol["dual objective"]
    if sol["status"] == "optimal" and dual is not None and -dual < -1e-8:
        return Result(Status.INFEASIBLE, x, slacks, objective=t,
                      message=f"best slack bounded by {-dual:.3e}")
    return Result(Status.FAILURE, x, slacks, objective=t,
                  message=f"solver status {sol['status']}, slack {t:.3e}")
