"""Quadratic supply rates over a window of iterates.

A window of length r covers iterates k, ..., k+r.  Every signal in the window
is a linear function of the lifted basis

    z = (xi[k], u[k], u[k+1], ..., u[k+r])

so each supply rate is a symmetric matrix Q on z, plus coefficients on the
function-value gaps f[k+i] - f* that bound it from above:

    z' Q z <= sum_i fcoef[i] (f[k+i] - f*).

For sector and slope-restricted classes fcoef is zero.  The optimal point
("star") sits at the origin in deviation coordinates, so its rows are zero.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .model import AlgorithmModel, OracleClass, OracleKind, validate_model

STAR = "star"
Point = Union[int, str]


@dataclass(frozen=True)
class LiftedBasis:
    """Rows of xi[k+i], y[k+i] and u[k+i] expressed over the lifted basis.

    ``X[i]`` is (n, dim) for i = 0..r+1; ``Y[i]`` and ``U[i]`` are (p, dim)
    for i = 0..r.
    """

    n: int
    p: int
    r: int
    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray

    @property
    def dim(self) -> int:
        return self.n + (self.r + 1) * self.p

    def _check(self, point: Point) -> None:
        if point == STAR:
            return
        if not isinstance(point, (int, np.integer)) or not 0 <= point <= self.r:
            raise IndexError(f"point {point!r} outside window 0..{self.r}")

    def y(self, point: Point, j: int) -> np.ndarray:
        self._check(point)
        return np.zeros(self.dim) if point == STAR else self.Y[point, j]

    def u(self, point: Point, j: int) -> np.ndarray:
        self._check(point)
        return np.zeros(self.dim) if point == STAR else self.U[point, j]

    def states(self, first: int, last: int) -> np.ndarray:
        """Stacked rows of (xi[k+first], ..., xi[k+last])."""
        return np.vstack([self.X[i] for i in range(first, last + 1)])


def lift(model: AlgorithmModel, r: int) -> LiftedBasis:
    """Unroll ``model`` over a window of ``r + 1`` iterates."""
    if r < 0:
        raise ValueError("window r must be nonnegative")
    errors = [d.message for d in validate_model(model) if d.level == "error"]
    if errors:
        raise ValueError("invalid model: " + "; ".join(errors))
    n, p = model.n, model.p
    dim = n + (r + 1) * p
    X = np.zeros((r + 2, n, dim))
    Y = np.zeros((r + 1, p, dim))
    U = np.zeros((r + 1, p, dim))
    X[0][:, :n] = np.eye(n)
    for i in range(r + 1):
        U[i][:, n + i * p: n + (i + 1) * p] = np.eye(p)
        Y[i] = model.C @ X[i] + model.D @ U[i]
        X[i + 1] = model.A @ X[i] + model.B @ U[i]
    return LiftedBasis(n, p, r, X, Y, U)


@dataclass(frozen=True)
class SupplyRate:
    Q: np.ndarray
    fcoef: np.ndarray
    oracle: int
    pair: tuple[Point, Point]
    kind: OracleKind

    def value(self, z: np.ndarray) -> float:
        return float(z @ self.Q @ z)

    @property
    def label(self) -> str:
        a, b = ("*" if p == STAR else f"k+{p}" if p else "k" for p in self.pair)
        return f"{self.kind.value}[{self.oracle}]({a},{b})"


def _sym_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    M = np.outer(a, b)
    return 0.5 * (M + M.T)


def supply_rate(cls: OracleClass, basis: LiftedBasis, oracle: int,
                a: Point, b: Point) -> SupplyRate:
    """Supply rate of ``cls`` for oracle ``oracle`` coupling points ``a`` and ``b``.

    Sector rates are single-point: ``b`` must be the optimum.  The smooth
    strongly convex rate is oriented: it is bounded by f_b - f_a.
    """
    if not 0 <= oracle < basis.p:
        raise IndexError(f"oracle index {oracle} out of range")
    if a == b:
        raise ValueError("a supply rate needs two distinct points")
    basis._check(a)
    basis._check(b)
    if cls.kind is OracleKind.SECTOR and b != STAR:
        raise ValueError("sector rates are taken about the optimum (b must be star)")
    if cls.kind is OracleKind.SMOOTH and not cls.finite:
        raise ValueError("smooth strongly convex rate needs finite L")

    dy = basis.y(b, oracle) - basis.y(a, oracle)
    du = basis.u(b, oracle) - basis.u(a, oracle)
    W = np.vstack([dy, du])
    Q = W.T @ cls.matrix() @ W
    fcoef = np.zeros(basis.r + 1)
    if cls.kind is OracleKind.SMOOTH:
        Q = Q / (2.0 * (cls.L - cls.m))
        Q = Q + 0.5 * _sym_outer(basis.u(a, oracle) + basis.u(b, oracle), dy)
        if b != STAR:
            fcoef[b] += 1.0
        if a != STAR:
            fcoef[a] -= 1.0
    Q = 0.5 * (Q + Q.T)
    return SupplyRate(Q, fcoef, oracle, (a, b), cls.kind)


def rate_pairs(kind: OracleKind, r: int) -> list[tuple[Point, Point]]:
    """Point pairs used for one oracle: iterates ascending, star last."""
    points: list[Point] = [*range(r + 1), STAR]
    if kind is OracleKind.SECTOR:
        return [(i, STAR) for i in range(r + 1)]
    if kind is OracleKind.SLOPE:
        return list(itertools.combinations(points, 2))
    return list(itertools.permutations(points, 2))


def enumerate_supply_rates(classes: Sequence[OracleClass], basis: LiftedBasis) -> list[SupplyRate]:
    if len(classes) != basis.p:
        raise ValueError(f"{len(classes)} classes for {basis.p} oracles")
    return [
        supply_rate(cls, basis, j, a, b)
        for j, cls in enumerate(classes)
        for a, b in rate_pairs(cls.kind, basis.r)
    ]
