"""Oracle classes and linear algorithm models in feedback form.

Every algorithm is described per scalar coordinate by

    xi[k+1] = A xi[k] + B u[k]
    y[k]    = C xi[k] + D u[k]
    u[k]    = phi(y[k])

with all signals measured as deviations from the fixed point.  The same
(A, B, C, D) apply to each of the d coordinates (the full system is the
Kronecker product with I_d), so nothing here depends on the problem dimension.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

INF = math.inf


class OracleKind(str, enum.Enum):
    SECTOR = "sector"
    SLOPE = "slope"
    SMOOTH = "smooth"  # gradient of an m-strongly convex, L-smooth function


_KIND_ALIASES = {
    "sector": OracleKind.SECTOR, "c": OracleKind.SECTOR, "sector-bounded": OracleKind.SECTOR,
    "slope": OracleKind.SLOPE, "m": OracleKind.SLOPE, "slope-restricted": OracleKind.SLOPE,
    "sloperestricted": OracleKind.SLOPE,
    "smooth": OracleKind.SMOOTH, "f": OracleKind.SMOOTH, "smoothstronglyconvex": OracleKind.SMOOTH,
    "smooth-strongly-convex": OracleKind.SMOOTH,
}


def parse_kind(text: str | OracleKind) -> OracleKind:
    if isinstance(text, OracleKind):
        return text
    try:
        return _KIND_ALIASES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown oracle kind {text!r}") from None


@dataclass(frozen=True)
class OracleClass:
    """A family of oracles with slopes between ``m`` and ``L`` (``L`` may be inf).

    The numeric bounds are checked on construction; the requirement that a
    smooth strongly convex class has finite ``L`` is reported by
    :meth:`problems` and enforced wherever a supply rate is built.
    """

    kind: OracleKind
    m: float
    L: float

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_kind(self.kind))
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "L", float(self.L))
        if math.isnan(self.m) or math.isnan(self.L):
            raise ValueError("oracle bounds must not be NaN")
        if not self.m >= 0:
            raise ValueError(f"lower slope bound must be nonnegative, got m={self.m}")
        if math.isinf(self.m):
            raise ValueError("lower slope bound must be finite")
        if not self.m < self.L:
            raise ValueError(f"need m < L, got m={self.m}, L={self.L}")

    @property
    def finite(self) -> bool:
        return math.isfinite(self.L)

    def matrix(self) -> np.ndarray:
        """Class matrix on (y, u); the L -> inf limit is normalized by 1/L."""
        if not self.finite:
            return np.array([[0.0, -0.5], [-0.5, 0.0]])
        s = 0.5 * (self.L + self.m)
        return np.array([[self.m * self.L, -s], [-s, 1.0]])

    def problems(self) -> list[str]:
        if self.kind is OracleKind.SMOOTH and not self.finite:
            return ["smooth strongly convex class requires finite L"]
        return []

    def scaled(self, s: float) -> "OracleClass":
        """Class of ``u / s`` when ``u`` is in this class."""
        return OracleClass(self.kind, self.m / s, self.L / s)

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "m": self.m, "L": self.L if self.finite else "inf"}

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "OracleClass":
        L = d["L"]
        if isinstance(L, str):
            if L.strip().lower() not in ("inf", "+inf", "infinity"):
                raise ValueError(f"bad L value {L!r}")
            L = INF
        return cls(parse_kind(d["kind"]), float(d["m"]), float(L))


def sector(m, L=INF):
    return OracleClass(OracleKind.SECTOR, m, L)


def slope(m, L=INF):
    return OracleClass(OracleKind.SLOPE, m, L)


def smooth(m, L):
    return OracleClass(OracleKind.SMOOTH, m, L)


class Family(str, enum.Enum):
    GD = "gd"
    PGD = "pgd"
    NESTEROV = "nesterov"
    ADMM_GRAD = "admm-grad"
    ADMM_PROX = "admm-prox"
    CUSTOM = "custom"


_FAMILY_ALIASES = {
    "gd": Family.GD, "gradientdescent": Family.GD, "gradient-descent": Family.GD,
    "pgd": Family.PGD, "projectedgradient": Family.PGD, "projected-gradient": Family.PGD,
    "nesterov": Family.NESTEROV,
    "admm-grad": Family.ADMM_GRAD, "admmgradientform": Family.ADMM_GRAD, "admm": Family.ADMM_GRAD,
    "admm-prox": Family.ADMM_PROX, "admmproxform": Family.ADMM_PROX,
    "custom": Family.CUSTOM,
}


def parse_family(text: str | Family) -> Family:
    if isinstance(text, Family):
        return text
    try:
        return _FAMILY_ALIASES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown algorithm family {text!r}") from None


@dataclass(frozen=True)
class AlgorithmSpec:
    family: Family
    eta: float = 0.0
    beta: float | None = None
    oracles: tuple[OracleClass, ...] = ()
    custom: Mapping[str, Any] | None = None  # A, B, C, D as nested lists

    def __post_init__(self):
        object.__setattr__(self, "family", parse_family(self.family))
        object.__setattr__(self, "oracles", tuple(self.oracles))

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "AlgorithmSpec":
        return cls(
            family=parse_family(d["family"]),
            eta=float(d.get("eta", 0.0)),
            beta=None if d.get("beta") is None else float(d["beta"]),
            oracles=tuple(OracleClass.from_json(o) for o in d.get("oracles", ())),
            custom=d.get("custom"),
        )

    def to_json(self) -> dict:
        out: dict[str, Any] = {"family": self.family.value, "eta": self.eta}
        if self.beta is not None:
            out["beta"] = self.beta
        out["oracles"] = [o.to_json() for o in self.oracles]
        if self.custom is not None:
            out["custom"] = {k: np.asarray(v, dtype=float).tolist() for k, v in self.custom.items()}
        return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AlgorithmModel:
    """Per-coordinate state-space model plus the oracle classes it is analyzed under.

    The constructor only coerces the matrices to 2-D float arrays; use
    :func:`validate_model` for a structural report.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    oracle_classes: tuple[OracleClass, ...] = ()
    family: Family = Family.CUSTOM
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "oracle_classes", tuple(self.oracle_classes))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    def with_oracles(self, classes: Sequence[OracleClass]) -> "AlgorithmModel":
        return replace(self, oracle_classes=tuple(classes))

    def rescaled(self, s: float) -> "AlgorithmModel":
        """Model in the oracle outputs ``u / s``; classes are scaled to match."""
        return replace(
            self, B=self.B * s, D=self.D * s,
            oracle_classes=tuple(c.scaled(s) for c in self.oracle_classes),
        )

    def step(self, xi: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (xi_next, y) for given state and oracle outputs."""
        return self.A @ xi + self.B @ u, self.C @ xi + self.D @ u

    def to_json(self) -> dict:
        return {
            "family": self.family.value,
            "params": dict(self.params),
            "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(), "D": self.D.tolist(),
            "oracles": [o.to_json() for o in self.oracle_classes],
        }


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    message: str


def validate_model(model: AlgorithmModel) -> list[Diagnostic]:
    """Structural report on ``model``: empty when the model is well formed."""
    out: list[Diagnostic] = []
    n, p = model.A.shape[0], model.B.shape[1]
    if model.A.shape != (n, n):
        out.append(Diagnostic("error", f"A must be square, got {model.A.shape}"))
    if model.B.shape[0] != n:
        out.append(Diagnostic("error", f"B has {model.B.shape[0]} rows, expected {n}"))
    if model.C.shape != (p, n):
        out.append(Diagnostic("error", f"C has shape {model.C.shape}, expected {(p, n)}"))
    if model.D.shape != (p, p):
        out.append(Diagnostic("error", f"D has shape {model.D.shape}, expected {(p, p)}"))
    for name in "ABCD":
        if not np.all(np.isfinite(getattr(model, name))):
            out.append(Diagnostic("error", f"{name} has non-finite entries"))
    if model.oracle_classes and len(model.oracle_classes) != p:
        out.append(Diagnostic(
            "error", f"{len(model.oracle_classes)} oracle classes for {p} oracles"))
    for j, cls in enumerate(model.oracle_classes):
        for msg in cls.problems():
            out.append(Diagnostic("error", f"oracle {j + 1}: {msg}"))
    if model.B.shape[0] == n and model.D.shape == (p, p):
        # u_j reaches the state directly through B or via D into another oracle
        live = {j for j in range(p) if np.any(model.B[:, j])}
        grew = True
        while grew:
            new = {j for j in range(p) if j not in live
                   and any(model.D[i, j] != 0 for i in live)}
            live |= new
            grew = bool(new)
        for j in range(p):
            if j not in live:
                out.append(Diagnostic("warning", f"oracle {j + 1} unused"))
    return out


def default_beta(m: float, L: float) -> float:
    sL, sm = math.sqrt(L), math.sqrt(m)
    return (sL - sm) / (sL + sm)


def build_algorithm(spec: AlgorithmSpec) -> AlgorithmModel:
    """Feedback form of ``spec`` in deviation coordinates."""
    fam = spec.family
    if fam is not Family.CUSTOM and not spec.eta > 0:
        raise ValueError(f"stepsize must be positive, got eta={spec.eta}")
    if fam is Family.NESTEROV and spec.beta is None:
        raise ValueError("Nesterov's method needs a momentum parameter beta")
    if fam is not Family.NESTEROV and spec.beta is not None:
        raise ValueError(f"beta is only meaningful for Nesterov, not {fam.value}")
    eta = spec.eta
    params: dict[str, float] = {"eta": eta}

    if fam is Family.GD:
        A, B, C, D = [[1.0]], [[-eta]], [[1.0]], [[0.0]]
    elif fam is Family.NESTEROV:
        b = spec.beta
        params["beta"] = b
        A = [[1 + b, -b], [1, 0]]
        B = [[-eta], [0]]
        C = [[1 + b, -b]]
        D = [[0.0]]
    elif fam is Family.PGD:
        # oracle 1: gradient at x, oracle 2: projection of the gradient step
        A, B = [[0.0]], [[0.0, 1.0]]
        C = [[1.0], [1.0]]
        D = [[0.0, 0.0], [-eta, 0.0]]
    elif fam is Family.ADMM_GRAD:
        # states (z, w); oracle 1: grad f at x+, oracle 2: subgradient of g at z+
        A = [[1.0, 0.0], [0.0, 0.0]]
        B = [[-eta, -eta], [0.0, eta]]
        C = [[1.0, -1.0], [1.0, 0.0]]
        D = [[-eta, 0.0], [-eta, -eta]]
    elif fam is Family.ADMM_PROX:
        # oracle 1: prox of eta f at z - w, oracle 2: prox of eta g at x+ + w
        A = [[0.0, 0.0], [0.0, 1.0]]
        B = [[0.0, 1.0], [1.0, -1.0]]
        C = [[1.0, -1.0], [0.0, 1.0]]
        D = [[0.0, 0.0], [1.0, 0.0]]
    elif fam is Family.CUSTOM:
        if spec.custom is None or any(k not in spec.custom for k in "ABCD"):
            raise ValueError("custom algorithms must supply A, B, C and D")
        A, B, C, D = (spec.custom[k] for k in "ABCD")
        params = {}
    else:  # pragma: no cover
        raise ValueError(f"unknown family {fam!r}")

    model = AlgorithmModel(A, B, C, D, spec.oracles, fam, params)
    errors = [d.message for d in validate_model(model) if d.level == "error"]
    if errors:
        raise ValueError("invalid algorithm model: " + "; ".join(errors))
    return model


def standard_oracles(family: Family | str, kind: OracleKind | str, m: float, L: float,
                     eta: float | None = None) -> tuple[OracleClass, ...]:
    """Oracle classes for ``family`` when the smooth part f has slopes in [m, L].

    The nonsmooth part g of ADMM and the constraint set of projected gradient
    are only assumed convex.  For the proximal form of ADMM the bounds are
    mapped through the prox: prox of eta*f has slopes in
    [1/(1+eta L), 1/(1+eta m)] and prox of eta*g in [0, 1].
    """
    family, kind = parse_family(family), parse_kind(kind)
    if family is Family.ADMM_PROX:
        if eta is None or not eta > 0:
            raise ValueError("the proximal form needs eta to map oracle bounds")
        lo = 1.0 / (1.0 + eta * L) if math.isfinite(L) else 0.0
        hi = 1.0 / (1.0 + eta * m)
        k = OracleKind.SECTOR if kind is OracleKind.SECTOR else OracleKind.SLOPE
        return (OracleClass(k, lo, hi), OracleClass(k, 0.0, 1.0))
    f_cls = OracleClass(kind, m, L)
    if family in (Family.GD, Family.NESTEROV):
        return (f_cls,)
    if family is Family.PGD:
        k = OracleKind.SECTOR if kind is OracleKind.SECTOR else OracleKind.SLOPE
        return (f_cls, OracleClass(k, 0.0, 1.0))
    if family is Family.ADMM_GRAD:
        k = OracleKind.SECTOR if kind is OracleKind.SECTOR else OracleKind.SLOPE
        return (f_cls, OracleClass(k, 0.0, INF))
    raise ValueError(f"no standard oracle wiring for {family.value}")
