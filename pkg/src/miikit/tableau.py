"""Runge-Kutta tableaus, mono-implicit extensions, and structural checks.

A Runge-Kutta method is stored as the classic Butcher triple ``(A, b, c)``.
A mono-implicit Runge-Kutta (MIRK) method is stored in its extended form
``(b, v, D)`` with ``D`` strictly lower triangular; the induced stage matrix
is ``A = D + v b^T``, which is what makes the method explicit once both
endpoints of a step are known.

The module also provides the property checks used throughout the toolkit:
order conditions up to ``p = 4`` (the eight rooted-tree conditions in
autonomous form, with abscissae taken as the row sums of ``A``),
symplecticity and time-symmetry residuals, and the one-parameter family of
symplectic MIRK schemes used to witness their order barrier.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

TOL = 1e-12


def _freeze(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Tableau:
    """Butcher tableau of an s-stage Runge-Kutta method."""

    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _freeze(self.A))
        object.__setattr__(self, "b", _freeze(self.b))
        object.__setattr__(self, "c", _freeze(self.c))
        s = self.b.size
        if self.A.shape != (s, s) or self.c.shape != (s,):
            raise ValueError(f"inconsistent tableau dimensions for {self.name!r}")

    @property
    def s(self) -> int:
        return self.b.size

    @property
    def is_explicit(self) -> bool:
        return bool(np.all(np.abs(np.triu(self.A)) <= TOL))

    @property
    def is_consistent(self) -> bool:
        """True when the abscissae match the stage row sums."""
        return bool(np.abs(self.A.sum(axis=1) - self.c).max() <= TOL)

    @classmethod
    def consistent(cls, name: str, A, b) -> "Tableau":
        A = np.asarray(A, dtype=float)
        return cls(name, A, np.asarray(b, dtype=float), A.sum(axis=1))


@dataclass(frozen=True)
class MirkTableau:
    """Extended tableau ``(b, v, D)`` of a mono-implicit RK method.

    ``D`` must be strictly lower triangular, so the stages can be evaluated
    in order as soon as the two endpoint states of a step are available.
    """

    name: str
    b: np.ndarray
    v: np.ndarray
    D: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", _freeze(self.b))
        object.__setattr__(self, "v", _freeze(self.v))
        object.__setattr__(self, "D", _freeze(self.D))
        object.__setattr__(self, "c", _freeze(self.c))
        s = self.b.size
        if self.v.shape != (s,) or self.D.shape != (s, s) or self.c.shape != (s,):
            raise ValueError(f"inconsistent MIRK dimensions for {self.name!r}")
        if np.abs(np.triu(self.D)).max(initial=0.0) > 0.0:
            raise ValueError(f"D must be strictly lower triangular for {self.name!r}")

    @property
    def s(self) -> int:
        return self.b.size

    def to_rk(self) -> Tableau:
        return mirk_to_rk(self)


AnyTableau = Union[Tableau, MirkTableau]


def mirk_to_rk(m: MirkTableau) -> Tableau:
    """Induced Runge-Kutta tableau with ``A = D + v b^T``."""
    A = m.D + np.outer(m.v, m.b)
    return Tableau(m.name, A, m.b, m.c)


def as_rk(t: AnyTableau) -> Tableau:
    return t.to_rk() if isinstance(t, MirkTableau) else t


def alpha(m: MirkTableau) -> float:
    """First-order noise-amplification coefficient ``b^T (1 - 2v)``.

    Explicit methods (``v = 0``, ``sum(b) = 1``) give 1; the averaging built
    into symmetric MIRK schemes such as MIRK4 drives it to 0.
    """
    return float(m.b @ (np.ones(m.s) - 2.0 * m.v))


# ---------------------------------------------------------------------------
# order conditions

#: the eight rooted-tree conditions through order four, in autonomous form
#: (abscissae taken as row sums of A).  Each entry: (order, label, value, target)
def _condition_values(A: np.ndarray, b: np.ndarray):
    c = A.sum(axis=1)
    Ac = A @ c
    return [
        (1, "sum_b", float(b.sum()), 1.0),
        (2, "b_c", float(b @ c), 0.5),
        (3, "b_c2", float(b @ c**2), 1.0 / 3.0),
        (3, "b_Ac", float(b @ Ac), 1.0 / 6.0),
        (4, "b_c3", float(b @ c**3), 0.25),
        (4, "b_cAc", float(b @ (c * Ac)), 0.125),
        (4, "b_Ac2", float(b @ (A @ c**2)), 1.0 / 12.0),
        (4, "b_AAc", float(b @ (A @ Ac)), 1.0 / 24.0),
    ]


@dataclass(frozen=True)
class OrderConditionReport:
    order: int
    values: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)


def check_order_conditions(t: AnyTableau, p_max: int = 4) -> OrderConditionReport:
    """Largest p <= p_max (p_max <= 4) with all condition residuals <= 1e-12."""
    if not 0 <= p_max <= 4:
        raise ValueError("order conditions are implemented only up to p = 4")
    rk = as_rk(t)
    conds = _condition_values(rk.A, rk.b)
    values = {label: val for _, label, val, _ in conds}
    residuals = {label: val - target for _, label, val, target in conds}
    order = 0
    for p in range(1, p_max + 1):
        ok = all(
            abs(res) <= TOL
            for (cp, label, _, _), res in zip(conds, residuals.values())
            if cp == p
        )
        if not ok:
            break
        order = p
    return OrderConditionReport(order, values, residuals)


# ---------------------------------------------------------------------------
# geometric property checks


@dataclass(frozen=True)
class SymplecticCheck:
    residual: np.ndarray
    max_abs: float

    @property
    def is_symplectic(self) -> bool:
        return self.max_abs <= TOL


def check_symplectic(t: AnyTableau) -> SymplecticCheck:
    """Residual matrix ``M_ij = b_i a_ij + b_j a_ji - b_i b_j``.

    The method is symplectic iff M vanishes.
    """
    rk = as_rk(t)
    bA = rk.b[:, None] * rk.A
    M = bA + bA.T - np.outer(rk.b, rk.b)
    return SymplecticCheck(_freeze(M), float(np.abs(M).max()))


@dataclass(frozen=True)
class SymmetryCheck:
    coupling_residual: float  # || P A + A P - 1 b^T ||_max
    weight_residual: float  # || b - P b ||_max

    @property
    def is_symmetric(self) -> bool:
        return self.coupling_residual <= TOL and self.weight_residual <= TOL


def check_symmetric(t: AnyTableau) -> SymmetryCheck:
    """Time-symmetry residuals ``(||PA + AP - 1 b^T||, ||b - Pb||)``.

    P is the anti-diagonal reflection.  The reflection test is sensitive to
    how the stages are enumerated while the symmetry property itself is not,
    so the stages are first sorted by ascending abscissa; e.g. MIRK4 stores
    its stages at abscissae (0, 1, 1/2) and only passes after reordering.
    """
    rk = as_rk(t)
    idx = np.argsort(rk.c, kind="stable")
    A = rk.A[np.ix_(idx, idx)]
    b = rk.b[idx]
    AP = A[:, ::-1]
    PA = A[::-1, :]
    coupling = np.abs(PA + AP - np.outer(np.ones(rk.s), b)).max()
    weight = np.abs(b - b[::-1]).max()
    return SymmetryCheck(float(coupling), float(weight))


def try_mirk_decompose(t: AnyTableau) -> Optional[MirkTableau]:
    """Search for an extended form ``A = D + v b^T`` with D strictly lower.

    Returns the decomposition (the structural certificate that the method is
    inverse explicit) or None when no stage ordering admits one.  For each
    candidate ordering, v_i is pinned by the entries ``a_ij = v_i b_j`` on
    and above the diagonal; the scheme is rejected when those are mutually
    inconsistent.
    """
    if isinstance(t, MirkTableau):
        return t
    s = t.s
    for perm in itertools.permutations(range(s)):
        idx = np.asarray(perm)
        A = t.A[np.ix_(idx, idx)]
        b = t.b[idx]
        v = np.zeros(s)
        ok = True
        for i in range(s):
            upper = [(j, A[i, j]) for j in range(i, s)]
            pinned = [(j, a) for j, a in upper if abs(b[j]) > TOL]
            if pinned:
                v[i] = pinned[0][1] / b[pinned[0][0]]
            if any(abs(a - v[i] * b[j]) > 1e-10 for j, a in upper):
                ok = False
                break
        if not ok:
            continue
        D = A - np.outer(v, b)
        D[np.triu_indices(s)] = 0.0
        if np.abs(A - (D + np.outer(v, b))).max() <= 1e-10:
            return MirkTableau(t.name, b, v, D, t.c[idx])
    return None


def symplectic_mirk_family(b, name: str = "symplectic-mirk") -> Tableau:
    """Reduced symplectic MIRK scheme for a weight vector with sum(b) = 1.

    All stages share the same argument, so every row of A equals b^T / 2.
    Any member is symplectic by construction and of order exactly two (the
    third-order sum ``sum_i b_i c_i^2`` evaluates to 1/4 instead of 1/3),
    which is the order barrier for symplectic MIRK methods.
    """
    b = np.asarray(b, dtype=float)
    if abs(b.sum() - 1.0) > TOL:
        raise ValueError("family weights must sum to 1")
    A = np.tile(b / 2.0, (b.size, 1))
    return Tableau(name, A, b, A.sum(axis=1))


# ---------------------------------------------------------------------------
# catalog


def builtin_tableaus() -> dict:
    """Catalog of the built-in methods, keyed by canonical lowercase name.

    MIRK-representable methods (all but the Gauss-Legendre pair) are stored
    in extended form.  Irrational coefficients are computed at runtime from
    sqrt(3), sqrt(15), sqrt(21) rather than transcribed decimals.
    """
    r3, r15, r21 = math.sqrt(3.0), math.sqrt(15.0), math.sqrt(21.0)

    cat: dict[str, AnyTableau] = {}

    cat["explicit_euler"] = MirkTableau(
        "explicit_euler", b=[1.0], v=[0.0], D=[[0.0]], c=[0.0]
    )
    cat["implicit_euler"] = MirkTableau(
        "implicit_euler", b=[1.0], v=[1.0], D=[[0.0]], c=[1.0]
    )
    cat["midpoint"] = MirkTableau("midpoint", b=[1.0], v=[0.5], D=[[0.0]], c=[0.5])

    # classic RK4, stored in extended form with v = 0 (explicit methods are
    # trivially inverse explicit)
    A_rk4 = np.array(
        [
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    cat["rk4"] = MirkTableau(
        "rk4",
        b=[1 / 6, 1 / 3, 1 / 3, 1 / 6],
        v=np.zeros(4),
        D=A_rk4,
        c=[0.0, 0.5, 0.5, 1.0],
    )

    # two-stage order-3 scheme with abscissae (1, 1/3)
    cat["mirk3"] = MirkTableau(
        "mirk3",
        b=[0.25, 0.75],
        v=[1.0, 5 / 9],
        D=[[0.0, 0.0], [-2 / 9, 0.0]],
        c=[1.0, 1 / 3],
    )

    # three-stage order-4 symmetric scheme; stages sit at both endpoints
    # plus the midpoint, so endpoint evaluations can be shared along a
    # trajectory
    cat["mirk4"] = MirkTableau(
        "mirk4",
        b=[1 / 6, 1 / 6, 2 / 3],
        v=[0.0, 1.0, 0.5],
        D=[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1 / 8, -1 / 8, 0.0]],
        c=[0.0, 1.0, 0.5],
    )

    cat["mirk5"] = MirkTableau(
        "mirk5",
        b=[23 / 162, 5 / 22, -2 / 189, 4000 / 6237],
        v=[0.0, 1.0, 0.0, 40257 / 80000],
        D=[
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
            [3 / 8, 9 / 8, 0.0, 0.0],
            [16929 / 160000, -5643 / 32000, 693 / 40000, 0.0],
        ],
        c=[0.0, 1.0, 1.5, 0.45],
    )

    # five-stage order-6 symmetric scheme on the 5-point Lobatto abscissae
    cat["mirk6"] = MirkTableau(
        "mirk6",
        b=[1 / 20, 1 / 20, 49 / 180, 49 / 180, 16 / 45],
        v=[0.0, 1.0, 0.5 - 9 * r21 / 98, 0.5 + 9 * r21 / 98, 0.5],
        D=[
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [1 / 14 + r21 / 98, -1 / 14 + r21 / 98, 0.0, 0.0, 0.0],
            [1 / 14 - r21 / 98, -1 / 14 - r21 / 98, 0.0, 0.0, 0.0],
            [-5 / 128, 5 / 128, 7 * r21 / 128, -7 * r21 / 128, 0.0],
        ],
        c=[0.0, 1.0, 0.5 - r21 / 14, 0.5 + r21 / 14, 0.5],
    )

    cat["gl4"] = Tableau(
        "gl4",
        A=[[0.25, 0.25 - r3 / 6], [0.25 + r3 / 6, 0.25]],
        b=[0.5, 0.5],
        c=[0.5 - r3 / 6, 0.5 + r3 / 6],
    )
    cat["gl6"] = Tableau(
        "gl6",
        A=[
            [5 / 36, 2 / 9 - r15 / 15, 5 / 36 - r15 / 30],
            [5 / 36 + r15 / 24, 2 / 9, 5 / 36 - r15 / 24],
            [5 / 36 + r15 / 30, 2 / 9 + r15 / 15, 5 / 36],
        ],
        b=[5 / 18, 4 / 9, 5 / 18],
        c=[0.5 - r15 / 10, 0.5, 0.5 + r15 / 10],
    )
    return cat


#: display labels matching the conventional figure names
LABELS = {
    "explicit_euler": "E. Euler",
    "implicit_euler": "I. Euler",
    "rk4": "RK4",
    "midpoint": "Midpoint",
    "mirk3": "MIRK3",
    "mirk4": "MIRK4",
    "mirk5": "MIRK5",
    "mirk6": "MIRK6",
    "gl4": "GL4",
    "gl6": "GL6",
}


def get_tableau(name: str) -> AnyTableau:
    cat = builtin_tableaus()
    key = name.strip().lower().replace("-", "_").replace(" ", "_")
    if key not in cat:
        raise KeyError(f"unknown tableau {name!r}; available: {sorted(cat)}")
    return cat[key]


def get_mirk(name: str) -> MirkTableau:
    t = get_tableau(name)
    if not isinstance(t, MirkTableau):
        raise ValueError(f"{name!r} has no mono-implicit form")
    return t


# ---------------------------------------------------------------------------
# aggregate property report


@dataclass(frozen=True)
class TableauPropertyReport:
    name: str
    order_verified: int
    symplectic_residual: float
    symmetric_residual: float
    alpha: Optional[float]
    inverse_explicit: bool
    explicit: bool
    empirical_order: Optional[float] = None

    @property
    def is_symplectic(self) -> bool:
        return self.symplectic_residual <= TOL

    @property
    def is_symmetric(self) -> bool:
        return self.symmetric_residual <= TOL

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "order_verified": self.order_verified,
            "symplectic_residual": self.symplectic_residual,
            "symmetric_residual": self.symmetric_residual,
            "symplectic": self.is_symplectic,
            "symmetric": self.is_symmetric,
            "alpha": self.alpha,
            "inverse_explicit": self.inverse_explicit,
            "explicit": self.explicit,
            "empirical_order": self.empirical_order,
        }


def check_properties(
    t: AnyTableau, p_max: int = 4, empirical_order: Optional[float] = None
) -> TableauPropertyReport:
    rk = as_rk(t)
    mirk = try_mirk_decompose(t)
    sym = check_symmetric(rk)
    return TableauPropertyReport(
        name=rk.name,
        order_verified=check_order_conditions(rk, p_max).order,
        symplectic_residual=check_symplectic(rk).max_abs,
        symmetric_residual=max(sym.coupling_residual, sym.weight_residual),
        alpha=alpha(mirk) if mirk is not None else None,
        inverse_explicit=mirk is not None,
        explicit=rk.is_explicit,
        empirical_order=empirical_order,
    )


# ---------------------------------------------------------------------------
# JSON interchange


def tableau_to_json(t: AnyTableau) -> str:
    if isinstance(t, MirkTableau):
        payload = {
            "s": t.s,
            "b": t.b.tolist(),
            "v": t.v.tolist(),
            "D": t.D.tolist(),
            "c": t.c.tolist(),
        }
    else:
        payload = {"s": t.s, "A": t.A.tolist(), "b": t.b.tolist(), "c": t.c.tolist()}
    return json.dumps(payload, indent=2)


def tableau_from_json(text: str, name: str = "custom") -> AnyTableau:
    data = json.loads(text)
    if "v" in data and "D" in data:
        t: AnyTableau = MirkTableau(name, data["b"], data["v"], data["D"], data["c"])
    elif "A" in data:
        t = Tableau(name, data["A"], data["b"], data["c"])
    else:
        raise ValueError("tableau JSON needs either (A, b, c) or (b, v, D, c)")
    if t.s != int(data["s"]):
        raise ValueError("stage count field does not match coefficient shapes")
    return t
