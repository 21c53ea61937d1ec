"""Concrete trajectories on two-dimensional test functions.

The simulator runs the algorithms' actual update equations with exact
gradients; it never touches the feedback model, so it is an independent
check on the certifier.  Two test functions with curvature in [m, L]:

    F1(x) = m/2 |x|^2 + (L - m) log(exp(-x1) + exp(x1/3 + x2) + exp(x1/3 - x2))
    F2(x) = L/2 x1^2 + m/2 x2^2
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .certify import Certificate, LyapunovKind
from .model import AlgorithmModel, AlgorithmSpec, Family, default_beta, parse_family

__all__ = [
    "TestFunction", "Trajectory", "LyapunovTrace", "DivergenceError", "LyapunovViolation",
    "evaluate", "run_trajectory", "lyapunov_trace", "write_trace_csv",
    "run_concrete", "run_model_linear", "run_admm_grad_quadratic",
]

DIVERGENCE_NORM = 1e12
RATIO_SLACK = 1e-9
# rows of the affine maps inside the log-sum-exp of F1
_F1_ROWS = np.array([[-1.0, 0.0], [1.0 / 3.0, 1.0], [1.0 / 3.0, -1.0]])


class DivergenceError(RuntimeError):
    def __init__(self, step: int, norm: float):
        super().__init__(f"iterate norm {norm:.3e} exceeded {DIVERGENCE_NORM:.0e} at step {step}")
        self.step = step


class LyapunovViolation(AssertionError):
    pass


def _lse(a: np.ndarray) -> float:
    top = np.max(a)
    return float(top + math.log(np.sum(np.exp(a - top))))


def _softmax(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - np.max(a))
    return e / e.sum()


def _expm1_minus_x(e: np.ndarray) -> np.ndarray:
    """exp(e) - 1 - e without cancellation for small e."""
    e = np.asarray(e, dtype=float)
    small = np.abs(e) < 1e-2
    out = np.expm1(e) - e
    es = e[small]
    out[small] = es * es * (0.5 + es * (1 / 6 + es * (1 / 24 + es * (1 / 120 + es / 720))))
    return out


@dataclass(frozen=True)
class TestFunction:
    """F1 or F2 on R^2 with curvature bounds (m, L)."""

    __test__ = False  # not a pytest class

    id: str
    m: float
    L: float

    def __post_init__(self):
        object.__setattr__(self, "id", self.id.lower())
        if self.id not in ("f1", "f2"):
            raise ValueError(f"unknown test function {self.id!r}; expected f1 or f2")
        if not (math.isfinite(self.m) and math.isfinite(self.L)) or not 0 <= self.m < self.L:
            raise ValueError("need finite 0 <= m < L")

    d = 2

    def value_grad(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != (2,) or not np.all(np.isfinite(x)):
            raise ValueError("x must be a finite point of R^2")
        m, L = self.m, self.L
        if self.id == "f2":
            return 0.5 * (L * x[0] ** 2 + m * x[1] ** 2), np.array([L * x[0], m * x[1]])
        a = _F1_ROWS @ x
        val = 0.5 * m * float(x @ x) + (L - m) * _lse(a)
        return val, m * x + (L - m) * (_F1_ROWS.T @ _softmax(a))

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.id == "f2":
            return np.diag([self.L, self.m])
        p = _softmax(_F1_ROWS @ x)
        W = np.diag(p) - np.outer(p, p)
        return self.m * np.eye(2) + (self.L - self.m) * (_F1_ROWS.T @ W @ _F1_ROWS)

    @cached_property
    def minimizer(self) -> np.ndarray:
        if self.id == "f2":
            return np.zeros(2)
        # F1 is strictly convex even with m = 0 (the log-sum-exp rows span the plane
        # without the all-ones direction), so gradient descent converges
        x = np.zeros(2)
        for _ in range(1_000_000):
            _, g = self.value_grad(x)
            if np.linalg.norm(g) <= 1e-12:
                break
            x = x - g / self.L
        else:
            raise RuntimeError("minimizer pre-solve did not converge")
        # a few Newton steps take the residual to rounding level
        for _ in range(3):
            _, g = self.value_grad(x)
            x = x - np.linalg.solve(self.hessian(x), g)
        return x

    @cached_property
    def fstar(self) -> float:
        return self.value_grad(self.minimizer)[0]

    def gap(self, x) -> float:
        """f(x) - f*, computed without cancellation near the minimizer."""
        x = np.asarray(x, dtype=float)
        if self.id == "f2":
            return self.value_grad(x)[0]
        xs = self.minimizer
        dx = x - xs
        a0 = _F1_ROWS @ xs
        w = _softmax(a0)
        delta = _F1_ROWS @ dx
        t = float(w @ delta)
        # log(sum w e^delta) - w.delta = log1p(sum w (e^{delta-t} - 1 - (delta-t)))
        bregman = math.log1p(float(w @ _expm1_minus_x(delta - t)))
        grad_star = self.value_grad(xs)[1]
        return (0.5 * self.m * float(dx @ dx) + (self.L - self.m) * bregman
                + float(grad_star @ dx))


def evaluate(fn: TestFunction, x) -> tuple[float, np.ndarray]:
    return fn.value_grad(x)


@dataclass
class Trajectory:
    """Iterates of one run.

    ``states[k]`` is the algorithm state in the feedback model's coordinates
    (shape (n, d)) and ``queries[k]`` the point where the gradient is taken
    at step k; both run to k = N.
    """

    fn: TestFunction
    spec: AlgorithmSpec
    xs: np.ndarray
    states: np.ndarray
    queries: np.ndarray
    state_star: np.ndarray
    dist_sq: np.ndarray = field(init=False)
    gaps: np.ndarray = field(init=False)
    grad_norms: np.ndarray = field(init=False)

    def __post_init__(self):
        self.dist_sq = np.sum((self.xs - self.fn.minimizer) ** 2, axis=1)
        self.gaps = np.array([self.fn.gap(x) for x in self.xs])
        self.grad_norms = np.array([np.linalg.norm(self.fn.value_grad(x)[1]) for x in self.xs])

    @property
    def steps(self) -> int:
        return len(self.xs) - 1


def run_trajectory(fn: TestFunction, spec: AlgorithmSpec, x0, N: int,
                   x_prev=None) -> Trajectory:
    """Run gradient descent or Nesterov's method on ``fn`` for ``N`` steps."""
    if N < 1:
        raise ValueError("need at least one step")
    fam = parse_family(spec.family)
    if not (spec.eta and spec.eta > 0):
        raise ValueError("eta must be positive")
    x0 = np.asarray(x0, dtype=float)
    if fam is Family.GD:
        beta = 0.0
    elif fam is Family.NESTEROV:
        beta = spec.beta if spec.beta is not None else default_beta(fn.m, fn.L)
    else:
        raise ValueError(f"simulation supports gd and nesterov, not {fam.value}")
    x, xp = x0.copy(), (x0.copy() if x_prev is None else np.asarray(x_prev, dtype=float))
    xs, states, queries = [x], [], []
    for k in range(N + 1):
        y = x + beta * (x - xp)
        states.append(np.vstack([x, xp]) if fam is Family.NESTEROV else x[None, :])
        queries.append(y)
        if k == N:
            break
        _, g = fn.value_grad(y)
        x, xp = y - spec.eta * g, x
        nrm = float(np.linalg.norm(x))
        if not math.isfinite(nrm) or nrm > DIVERGENCE_NORM:
            raise DivergenceError(k + 1, nrm)
        xs.append(x)
    star = np.tile(fn.minimizer, (states[0].shape[0], 1))
    return Trajectory(fn, spec, np.array(xs), np.array(states), np.array(queries), star)


@dataclass
class LyapunovTrace:
    values: np.ndarray
    ratios: np.ndarray
    rho_sq: float
    checked: int

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios[: self.checked])) if self.checked else float("nan")

    @property
    def monotone(self) -> bool:
        return bool(np.all(self.ratios[: self.checked] <= self.rho_sq + RATIO_SLACK))


def lyapunov_trace(traj: Trajectory, cert: Certificate, strict: bool = True,
                   floor: float = 1e-13) -> LyapunovTrace:
    """Evaluate the certificate's Lyapunov function along ``traj``.

    Lyap(k) = sum_c (S_k[:, c])' P (S_k[:, c]) + gap term, where S_k stacks the
    states of window k in deviation coordinates (one column per coordinate,
    the per-coordinate P acting identically on each) and the gap term is
    f(query_k) - f* for certificates with a function-value part.

    Ratios are only checked while Lyap(k+1) stays above ``floor`` times
    Lyap(0); below that, rounding in f - f* dominates.  With ``strict`` a
    ratio above rho^2 + 1e-9 raises :class:`LyapunovViolation`.
    """
    r = cert.window
    count = traj.steps + 1 - r
    if count < 2:
        raise ValueError(f"window {r} needs a trajectory of at least {r + 1} steps")
    n = traj.states.shape[1]
    if cert.P.shape[0] != n * (r + 1):
        raise ValueError("certificate storage size does not match the trajectory's states")
    dev = traj.states - traj.state_star
    gap_term = cert.kind is LyapunovKind.QUADRATIC_PLUS_GAP
    vals = np.empty(count)
    for k in range(count):
        S = dev[k: k + r + 1].reshape(n * (r + 1), -1)
        vals[k] = float(np.trace(S.T @ cert.P @ S))
        if gap_term:
            vals[k] += traj.fn.gap(traj.queries[k])
    ratios = vals[1:] / vals[:-1]
    above = vals[1:] > floor * vals[0]
    checked = int(np.argmin(above)) if not np.all(above) else len(ratios)
    trace = LyapunovTrace(vals, ratios, cert.rho ** 2, checked)
    if strict and not trace.monotone:
        k = int(np.argmax(ratios[:checked] > trace.rho_sq + RATIO_SLACK))
        raise LyapunovViolation(
            f"Lyapunov ratio {ratios[k]:.12g} at step {k} exceeds rho^2 = {trace.rho_sq:.12g}")
    return trace


def write_trace_csv(path_or_file, traj: Trajectory, trace: LyapunovTrace | None = None) -> None:
    """Write columns k, dist_sq, gap, lyapunov, ratio (blank where undefined)."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "dist_sq", "gap", "lyapunov", "ratio"])
        for k in range(traj.steps + 1):
            lyap = ratio = ""
            if trace is not None and k < len(trace.values):
                lyap = repr(float(trace.values[k]))
                if k >= 1:
                    ratio = repr(float(trace.ratios[k - 1]))
            w.writerow([k, repr(float(traj.dist_sq[k])), repr(float(traj.gaps[k])), lyap, ratio])
    finally:
        if own:
            fh.close()


# -- update equations on arbitrary oracles ---------------------------------

Oracle = Callable[[np.ndarray], np.ndarray]


def run_concrete(spec: AlgorithmSpec, oracles: Sequence[Oracle], state0: np.ndarray,
                 steps: int) -> np.ndarray:
    """Iterate the concrete update equations; returns states of shape (steps+1, n, d).

    Oracles per family: gd and nesterov take the gradient; pgd the gradient
    and the projection; admm-prox the two proximal operators prox_{eta f}
    and prox_{eta g}.  States: gd and pgd x; nesterov (x[k], x[k-1]);
    admm-prox (z, w).
    """
    fam = parse_family(spec.family)
    eta = spec.eta
    s = np.array(state0, dtype=float)
    out = [s.copy()]
    for _ in range(steps):
        if fam is Family.GD:
            (x,) = s
            s = np.array([x - eta * oracles[0](x)])
        elif fam is Family.NESTEROV:
            x, xp = s
            y = x + spec.beta * (x - xp)
            s = np.array([y - eta * oracles[0](y), x])
        elif fam is Family.PGD:
            (x,) = s
            s = np.array([oracles[1](x - eta * oracles[0](x))])
        elif fam is Family.ADMM_PROX:
            z, w = s
            x_new = oracles[0](z - w)
            z_new = oracles[1](x_new + w)
            s = np.array([z_new, w + x_new - z_new])
        else:
            raise ValueError(f"no explicit update for {fam.value}")
        out.append(s.copy())
    return np.array(out)


def run_admm_grad_quadratic(eta: float, a_f: np.ndarray, a_g: np.ndarray, state0: np.ndarray,
                            steps: int) -> np.ndarray:
    """ADMM through its gradient/subgradient optimality conditions on
    f = sum a_f x^2 / 2, g = sum a_g z^2 / 2 (diagonal, so the implicit
    conditions are solved coordinate-wise)."""
    a_f, a_g = np.asarray(a_f, dtype=float), np.asarray(a_g, dtype=float)
    s = np.array(state0, dtype=float)
    out = [s.copy()]
    for _ in range(steps):
        z, w = s
        # 0 = a_f x + (x - z + w)/eta
        x_new = (z - w) / (1.0 + eta * a_f)
        # 0 = a_g z + (z - x - w)/eta
        z_new = (x_new + w) / (1.0 + eta * a_g)
        s = np.array([z_new, w + x_new - z_new])
        out.append(s.copy())
    return np.array(out)


def run_model_linear(model: AlgorithmModel, slopes: Sequence[float], state0: np.ndarray,
                     steps: int) -> np.ndarray:
    """Iterate ``model`` with scalar linear oracles u_j = slopes[j] * y_j.

    Implicit loops (D != 0) are closed by solving (I - diag(a) D) u = diag(a) C xi.
    Returns states of shape (steps+1, n).
    """
    a = np.diag(np.asarray(slopes, dtype=float))
    if a.shape != (model.p, model.p):
        raise ValueError("need one slope per oracle")
    M = np.eye(model.p) - a @ model.D
    xi = np.array(state0, dtype=float)
    out = [xi.copy()]
    for _ in range(steps):
        u = np.linalg.solve(M, a @ model.C @ xi)
        xi, _ = model.step(xi, u)
        out.append(np.array(xi, dtype=float))
    return np.array(out)
