"""Dissipation-inequality programs, bisection on the rate, certificates.

For a candidate rate rho the storage function is a quadratic form
V = s' P s on the stacked states s = (xi[k], ..., xi[k+r]).  The program asks
for P and multipliers lambda >= 0 with

    V(next window) - rho^2 V(window) - sum_i lambda_i S_i  <=  0

as a quadratic form on the lifted basis.  With sector or slope-restricted
oracles every S_i is nonpositive, so V itself contracts; P is normalized to
P >= I.  When some oracle is the gradient of a smooth strongly convex function
the rates carry function-value gaps and the Lyapunov function is
V + (f[k] - f*); the gap coefficients are matched by linear equalities and a
second inequality  -V - sum_i mu_i S_i <= 0  keeps the Lyapunov function
nonnegative.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import sdpcore
from .model import AlgorithmModel, OracleClass, OracleKind
from .supply import STAR, LiftedBasis, SupplyRate, enumerate_supply_rates, lift

log = logging.getLogger(__name__)

__all__ = [
    "LyapunovKind", "DissipationProgram", "Certificate", "Probe", "CertificationResult",
    "SublinearCertificate", "VerificationReport", "CertificationError",
    "lift", "assemble_program", "certify_rate", "certify_sublinear", "verify_certificate",
]

DEFAULT_TOL = 1e-4
DEFAULT_RHO_MAX = 1.5
MAX_PROBES = 40
SLACK_TOL = 1e-9


class CertificationError(RuntimeError):
    """The solver broke down; carries the probe history up to the failure."""

    def __init__(self, message: str, probes: Sequence["Probe"] = ()):
        super().__init__(message)
        self.probes = list(probes)


class LyapunovKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    QUADRATIC_PLUS_GAP = "quadratic+gap"


def _sym_basis(k: int) -> list[tuple[int, int, np.ndarray]]:
    out = []
    for a in range(k):
        for b in range(a, k):
            E = np.zeros((k, k))
            E[a, b] = E[b, a] = 1.0
            out.append((a, b, E))
    return out


def _unpack_sym(vals: np.ndarray, k: int) -> np.ndarray:
    P = np.zeros((k, k))
    for v, (a, b, _) in zip(vals, _sym_basis(k)):
        P[a, b] = P[b, a] = v
    return P


def _has_gap(classes: Sequence[OracleClass]) -> bool:
    return any(c.kind is OracleKind.SMOOTH for c in classes)


@dataclass
class DissipationProgram:
    """Feasibility program for one candidate rate (``rho_sq`` = rho**2).

    Decision vector layout: the upper triangle of P, then one lambda per
    supply rate, then (gap case only) one mu per supply rate.
    """

    rho_sq: float
    basis: LiftedBasis
    rates: list[SupplyRate]
    kind: LyapunovKind
    blocks: list[sdpcore.PsdBlock]
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    nonneg: list[int]
    normalization: str
    n_p: int
    n_mu: int

    @property
    def storage_size(self) -> int:
        return self.basis.n * (self.basis.r + 1)

    @property
    def dim(self) -> int:
        return self.n_p + len(self.rates) + self.n_mu

    def problem(self) -> sdpcore.FeasibilityProblem:
        return sdpcore.FeasibilityProblem(
            self.dim, self.blocks, self.eq_matrix, self.eq_rhs, self.nonneg)

    def unpack(self, x: np.ndarray):
        k = self.storage_size
        P = _unpack_sym(x[: self.n_p], k)
        lam = np.array(x[self.n_p: self.n_p + len(self.rates)])
        mu = np.array(x[self.n_p + len(self.rates):])
        return P, lam, mu


def _build_program(model: AlgorithmModel, r: int, rho_sq: float, target: np.ndarray,
                   positivity: bool, normalization: str,
                   mu_target: np.ndarray | None = None) -> DissipationProgram:
    basis = lift(model, r)
    rates = enumerate_supply_rates(model.oracle_classes, basis)
    gap = _has_gap(model.oracle_classes)
    k = basis.n * (r + 1)
    Xc = basis.states(0, r)
    Xn = basis.states(1, r + 1)
    sym = _sym_basis(k)
    n_p, n_l = len(sym), len(rates)
    n_mu = n_l if positivity else 0
    dim = n_p + n_l + n_mu
    N = basis.dim

    # dissipation: -(Xn'PXn - rho^2 Xc'PXc - sum lambda Q) >= 0
    coeffs = np.zeros((dim, N, N))
    for i, (_, _, E) in enumerate(sym):
        coeffs[i] = -(Xn.T @ E @ Xn - rho_sq * Xc.T @ E @ Xc)
    for i, rate in enumerate(rates):
        coeffs[n_p + i] = rate.Q
    blocks = [sdpcore.PsdBlock(np.zeros((N, N)), coeffs, "dissipation")]

    if positivity:
        # Xc'PXc + sum mu Q >= 0
        coeffs = np.zeros((dim, N, N))
        for i, (_, _, E) in enumerate(sym):
            coeffs[i] = Xc.T @ E @ Xc
        for i, rate in enumerate(rates):
            coeffs[n_p + n_l + i] = rate.Q
        blocks.append(sdpcore.PsdBlock(np.zeros((N, N)), coeffs, "positivity"))

    if normalization in ("trace", "psd"):
        coeffs = np.zeros((dim, k, k))
        for i, (_, _, E) in enumerate(sym):
            coeffs[i] = E
        blocks.append(sdpcore.PsdBlock(np.zeros((k, k)), coeffs, "storage"))

    rows, rhs = [], []
    if normalization == "trace":
        row = np.zeros(dim)
        for i, (a, b, _) in enumerate(sym):
            if a == b:
                row[i] = 1.0
        rows.append(row)
        rhs.append(float(k))
    if gap:
        if mu_target is None:
            mu_target = np.zeros(r + 1)
            mu_target[0] = 1.0
        for j, cls in enumerate(model.oracle_classes):
            if cls.kind is not OracleKind.SMOOTH:
                continue
            for g in range(r + 1):
                row = np.zeros(dim)
                for i, rate in enumerate(rates):
                    if rate.oracle == j:
                        row[n_p + i] = rate.fcoef[g]
                rows.append(row)
                rhs.append(target[g])
                if positivity:
                    row = np.zeros(dim)
                    for i, rate in enumerate(rates):
                        if rate.oracle == j:
                            row[n_p + n_l + i] = rate.fcoef[g]
                    rows.append(row)
                    rhs.append(mu_target[g])
    eq_matrix = np.array(rows).reshape(len(rows), dim)
    eq_rhs = np.array(rhs, dtype=float)

    kind = LyapunovKind.QUADRATIC_PLUS_GAP if gap else LyapunovKind.QUADRATIC
    nonneg = list(range(n_p, dim))
    return DissipationProgram(rho_sq, basis, rates, kind, blocks, eq_matrix, eq_rhs,
                              nonneg, normalization, n_p, n_mu)


def assemble_program(model: AlgorithmModel, r: int, rho: float) -> DissipationProgram:
    """Geometric-rate program for ``model`` with window ``r`` at rate ``rho``."""
    if not rho >= 0:
        raise ValueError("rho must be nonnegative")
    if not model.oracle_classes:
        raise ValueError("model has no oracle classes attached")
    for c in model.oracle_classes:
        if c.problems():
            raise ValueError("; ".join(c.problems()))
    gap = _has_gap(model.oracle_classes)
    if gap and r < 1:
        raise ValueError("the function-gap Lyapunov function needs a window r >= 1")
    target = np.zeros(r + 1)
    if gap:
        target[0], target[1] = rho * rho, -1.0
    return _build_program(model, r, rho * rho, target, positivity=gap,
                          normalization="none" if gap else "trace")


@dataclass
class Certificate:
    rho: float
    P: np.ndarray
    lambdas: np.ndarray
    mus: np.ndarray
    margins: dict[str, float]
    window: int
    kind: LyapunovKind
    rate_labels: list[str]
    classes: tuple[OracleClass, ...]

    def to_json(self) -> dict:
        return {
            "rho": self.rho,
            "window": self.window,
            "lyapunov_kind": self.kind.value,
            "P": self.P.tolist(),
            "lambdas": dict(zip(self.rate_labels, self.lambdas.tolist())),
            "mus": dict(zip(self.rate_labels, self.mus.tolist())) if self.mus.size else {},
            "margins": self.margins,
            "oracles": [c.to_json() for c in self.classes],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Certificate":
        labels = list(d["lambdas"].keys())
        mus = d.get("mus") or {}
        return cls(
            rho=float(d["rho"]),
            P=np.array(d["P"], dtype=float),
            lambdas=np.array([d["lambdas"][k] for k in labels], dtype=float),
            mus=np.array([mus[k] for k in labels], dtype=float) if mus else np.zeros(0),
            margins={k: float(v) for k, v in (d.get("margins") or {}).items()},
            window=int(d["window"]),
            kind=LyapunovKind(d["lyapunov_kind"]),
            rate_labels=labels,
            classes=tuple(OracleClass.from_json(c) for c in d["oracles"]),
        )


@dataclass(frozen=True)
class Probe:
    rho: float
    status: str
    margin: float
    message: str = ""


@dataclass
class CertificationResult:
    rho: float | None
    certificate: Certificate | None
    probes: list[Probe] = field(default_factory=list)
    window: int = 0
    reason: str = ""

    @property
    def found(self) -> bool:
        return self.certificate is not None

    def to_json(self) -> dict:
        return {
            "rho": self.rho,
            "certificate": self.certificate.to_json() if self.certificate else None,
            "probes": [p.__dict__ for p in self.probes],
            "window": self.window,
            "reason": self.reason,
        }


def _scale_factor(classes: Sequence[OracleClass]) -> float:
    finite = [c.L for c in classes if c.finite]
    return max(finite) if finite else 1.0


def _unscale_multiplier(cls: OracleClass, s: float) -> float:
    # Q(original) = Q(rescaled) * factor, see rescaled()
    if cls.kind is OracleKind.SMOOTH or not cls.finite:
        return 1.0  # s * (1/s)
    return 1.0 / s  # s * (1/s^2)


def _solve_at(model: AlgorithmModel, r: int, rho: float, rescale: bool):
    """Solve one probe; returns (status, certificate or None, margin, message)."""
    s = _scale_factor(model.oracle_classes) if rescale else 1.0
    work = model.rescaled(s) if s != 1.0 else model
    prog = assemble_program(work, r, rho)
    res = sdpcore.solve_feasibility(prog.problem())
    if not res.ok:
        return res.status.value, None, res.margin, res.message
    P, lam, mu = prog.unpack(res.x)
    factors = np.array([_unscale_multiplier(model.oracle_classes[q.oracle], s) for q in prog.rates])
    P, lam, mu = s * P, lam * factors, mu * factors if mu.size else mu
    if prog.kind is LyapunovKind.QUADRATIC:
        # homogeneous in (P, lambda): normalize to P >= I
        scale = 1.0 / np.linalg.eigvalsh(P)[0]
        P, lam = P * scale, lam * scale
    cert = Certificate(rho, P, lam, mu, {}, r, prog.kind,
                       [q.label for q in prog.rates], model.oracle_classes)
    report = verify_certificate(model, cert, samples=0)
    cert.margins = report.slacks
    if not report.ok:
        return "failure", None, res.margin, "rejected by independent check: " + report.summary()
    return "solution", cert, res.margin, ""


def _check_monotone(probes: Sequence[Probe]) -> None:
    feas = [p.rho for p in probes if p.status == "solution"]
    infeas = [p.rho for p in probes if p.status == "infeasible"]
    if feas and infeas and min(feas) < max(infeas):
        raise CertificationError(
            f"feasibility not monotone in rho: feasible at {min(feas):.6g} "
            f"but infeasible at {max(infeas):.6g}", probes)


def certify_rate(model: AlgorithmModel, r: int = 0, tol: float = DEFAULT_TOL,
                 rho_max: float = DEFAULT_RHO_MAX, max_probes: int = MAX_PROBES,
                 rescale: bool = True) -> CertificationResult:
    """Smallest certifiable rate on [0, rho_max], found by bisection to ``tol``.

    Probes where the solver neither finds a verified point nor proves
    infeasibility count as infeasible; they are kept in the probe record with
    status ``"failure"``.
    """
    if not tol > 0 or not rho_max > 0:
        raise ValueError("tol and rho_max must be positive")
    probes: list[Probe] = []

    def probe(rho):
        try:
            status, cert, margin, msg = _solve_at(model, r, rho, rescale)
        except (np.linalg.LinAlgError, ArithmeticError) as exc:
            raise CertificationError(f"solver broke down at rho={rho}: {exc}", probes) from exc
        if status == "failure":
            log.info("probe rho=%.6g: solver failure (%s)", rho, msg)
        probes.append(Probe(rho, status, margin, msg))
        return cert

    best = probe(rho_max)
    if best is None:
        return CertificationResult(None, None, probes, r,
                                   reason=f"no certificate at rho_max={rho_max}")
    lo, hi = 0.0, rho_max
    while hi - lo > tol and len(probes) < max_probes:
        mid = 0.5 * (lo + hi)
        cert = probe(mid)
        if cert is not None:
            hi, best = mid, cert
        else:
            lo = mid
    if rho_max - hi > tol:
        # bisection alone never probes above a feasible rate; one extra probe
        # between the answer and rho_max gives the monotonicity check teeth
        probe(0.5 * (hi + rho_max))
    _check_monotone(probes)
    return CertificationResult(hi, best, probes, r)


@dataclass
class SublinearCertificate:
    P: np.ndarray
    lambdas: np.ndarray
    margins: dict[str, float]
    window: int
    rate_labels: list[str]

    def bound(self, initial_window: np.ndarray, k: int) -> float:
        """V(initial window) / (k + 1).

        Summing the dissipation inequality bounds min_{i<=k} f(y[i]) - f*; this
        is the gap at step k itself when gaps are nonincreasing, as for
        gradient descent.  ``initial_window`` holds the stacked initial states
        in deviation coordinates, shape (n(r+1), d).
        """
        S = np.atleast_2d(np.asarray(initial_window, dtype=float))
        if S.shape[0] != self.P.shape[0]:
            S = S.T
        return float(np.trace(S.T @ self.P @ S)) / (k + 1)

    def to_json(self) -> dict:
        return {
            "P": self.P.tolist(),
            "lambdas": dict(zip(self.rate_labels, self.lambdas.tolist())),
            "margins": self.margins,
            "window": self.window,
        }


def certify_sublinear(model: AlgorithmModel, r: int = 0) -> SublinearCertificate | None:
    """Search for V >= 0 with V(next) - V <= -(f[k] - f*), giving an O(1/k) gap bound.

    Returns ``None`` when no certificate exists (or the solver cannot find one).
    """
    smooth_ids = [j for j, c in enumerate(model.oracle_classes) if c.kind is OracleKind.SMOOTH]
    if len(smooth_ids) != 1:
        raise ValueError("sublinear certification needs exactly one smooth convex oracle")
    cls = model.oracle_classes[smooth_ids[0]]
    if cls.m > 0:
        raise ValueError("oracle is strongly convex (m > 0); certify a geometric rate instead")
    if cls.problems():
        raise ValueError("; ".join(cls.problems()))
    target = np.zeros(r + 1)
    target[0] = -1.0
    # V >= 0 along trajectories: Xc'P Xc + sum mu Q >= 0 with no gap terms left over
    prog = _build_program(model, r, 1.0, target, positivity=True, normalization="none",
                          mu_target=np.zeros(r + 1))
    res = sdpcore.solve_feasibility(prog.problem())
    if not res.ok:
        log.info("no sublinear certificate: %s %s", res.status.value, res.message)
        return None
    # any feasible P works; the smallest trace gives the tightest bound
    trace = np.array([1.0 if a == b else 0.0 for a, b, _ in _sym_basis(prog.storage_size)])
    tight = sdpcore.solve_feasibility(prog.problem(), objective=np.pad(trace, (0, prog.dim - prog.n_p)))
    if tight.ok:
        res = tight
    P, lam, _ = prog.unpack(res.x)
    return SublinearCertificate(P, lam, res.slacks, r, [q.label for q in prog.rates])


# -- verification ---------------------------------------------------------


@dataclass
class VerificationReport:
    slacks: dict[str, float]
    normalization_slack: float
    min_multiplier: float
    equality_residual: float
    sampled_violation: float
    tol: float = SLACK_TOL

    @property
    def ok(self) -> bool:
        return (
            all(v >= -self.tol for v in self.slacks.values())
            and self.normalization_slack >= -self.tol
            and self.min_multiplier >= -1e-12
            and self.equality_residual <= self.tol
            and self.sampled_violation <= max(self.tol, 1e-8)
        )

    def summary(self) -> str:
        parts = [f"{k}={v:.3e}" for k, v in self.slacks.items()]
        parts += [f"normalization={self.normalization_slack:.3e}",
                  f"min_multiplier={self.min_multiplier:.3e}",
                  f"eq_residual={self.equality_residual:.3e}",
                  f"sampled={self.sampled_violation:.3e}"]
        return ", ".join(parts)


def _scalar_supply(cls: OracleClass, ya, yb, ua, ub) -> float:
    """Supply rate evaluated on concrete scalar signals (no lifted algebra)."""
    dy, du = yb - ya, ub - ua
    if not cls.finite:
        return -dy * du
    s = 0.5 * (cls.L + cls.m)
    quad = cls.m * cls.L * dy * dy - 2 * s * dy * du + du * du
    if cls.kind is OracleKind.SMOOTH:
        return quad / (2 * (cls.L - cls.m)) + 0.5 * (ua + ub) * dy
    return quad


def _simulate_window(model: AlgorithmModel, xi0: np.ndarray, us: np.ndarray):
    xis, ys = [xi0], []
    for u in us:
        nxt, y = model.step(xis[-1], u)
        ys.append(y)
        xis.append(nxt)
    return np.array(xis), np.array(ys)


def _parse_label(label: str):
    inner = label[label.index("(") + 1: -1]
    oracle = int(label[label.index("[") + 1: label.index("]")])
    pts = []
    for tok in inner.split(","):
        pts.append(STAR if tok == "*" else 0 if tok == "k" else int(tok[2:]))
    return oracle, tuple(pts)


def verify_certificate(model: AlgorithmModel, cert: Certificate, samples: int = 1000,
                       rng: np.random.Generator | None = None) -> VerificationReport:
    """Re-check ``cert`` from scratch.

    The LMIs are rebuilt at the certificate point and their eigenvalues taken;
    in addition ``samples`` random initial states and oracle outputs are pushed
    through the model's update equations, and the scalar dissipation
    inequality is evaluated on those concrete signals.
    """
    r, rho_sq = cert.window, cert.rho ** 2
    basis = lift(model, r)
    rates = enumerate_supply_rates(model.oracle_classes, basis)
    if [q.label for q in rates] != list(cert.rate_labels):
        raise ValueError("certificate does not match the model's supply rates")
    Xc, Xn = basis.states(0, r), basis.states(1, r + 1)
    P, lam, mu = cert.P, cert.lambdas, cert.mus

    diss = Xn.T @ P @ Xn - rho_sq * Xc.T @ P @ Xc - sum(l * q.Q for l, q in zip(lam, rates))
    slacks = {"dissipation": float(np.linalg.eigvalsh(-0.5 * (diss + diss.T))[0])}
    eq_res = 0.0
    gap = cert.kind is LyapunovKind.QUADRATIC_PLUS_GAP
    if gap:
        pos = Xc.T @ P @ Xc + sum(m_ * q.Q for m_, q in zip(mu, rates))
        slacks["positivity"] = float(np.linalg.eigvalsh(0.5 * (pos + pos.T))[0])
        target_l = np.zeros(r + 1)
        target_l[0], target_l[1] = rho_sq, -1.0
        target_m = np.zeros(r + 1)
        target_m[0] = 1.0
        for j, cls in enumerate(model.oracle_classes):
            if cls.kind is not OracleKind.SMOOTH:
                continue
            fl = sum(l * q.fcoef for l, q in zip(lam, rates) if q.oracle == j)
            fm = sum(m_ * q.fcoef for m_, q in zip(mu, rates) if q.oracle == j)
            eq_res = max(eq_res, np.max(np.abs(fl - target_l)), np.max(np.abs(fm - target_m)))
        norm_slack = 0.0
    else:
        norm_slack = float(np.linalg.eigvalsh(P)[0] - 1.0)
    mins = [np.min(lam, initial=0.0)]
    if mu.size:
        mins.append(np.min(mu))
    min_mult = float(min(mins))

    worst = 0.0
    if samples:
        rng = rng or np.random.default_rng(0)
        parsed = [_parse_label(lbl) for lbl in cert.rate_labels]
        for _ in range(samples):
            xi0 = rng.standard_normal(model.n)
            us = rng.standard_normal((r + 1, model.p))
            xis, ys = _simulate_window(model, xi0, us)
            s_cur = xis[: r + 1].ravel()
            s_next = xis[1: r + 2].ravel()
            supply = 0.0
            for l, (j, (a, b)) in zip(lam, parsed):
                cls = model.oracle_classes[j]
                ya = 0.0 if a == STAR else ys[a, j]
                yb = 0.0 if b == STAR else ys[b, j]
                ua = 0.0 if a == STAR else us[a, j]
                ub = 0.0 if b == STAR else us[b, j]
                supply += l * _scalar_supply(cls, ya, yb, ua, ub)
            lhs = s_next @ P @ s_next - rho_sq * s_cur @ P @ s_cur - supply
            scale = 1.0 + xi0 @ xi0 + np.sum(us * us)
            worst = max(worst, lhs / (scale * max(1.0, np.max(np.abs(P)))))
    return VerificationReport(slacks, norm_slack, min_mult, float(eq_res), float(worst))

