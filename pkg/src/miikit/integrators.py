"""Forward integration, inverse-explicit increments, and geometric one-step maps.

The module provides three layers:

- generic Runge-Kutta stepping (explicit cascade or Newton-solved implicit
  stages) for any tableau in :mod:`miikit.tableau`;
- the inverse-explicit machinery: MIRK increments evaluated from two known
  endpoint states, including a whole-trajectory pass that reuses endpoint
  stage evaluations;
- the structure-preserving specials: Stormer-Verlet for separable systems,
  the derivative-corrected implicit midpoint scheme of order four, and
  energy-exact discrete-gradient schemes of order two and four.

A Gauss-Legendre order-6 solver with a small internal step doubles as the
high-accuracy reference for data generation and error measurement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .systems import HamiltonianSystem
from .tableau import AnyTableau, MirkTableau, Tableau, as_rk, get_tableau

Field = Callable[[np.ndarray], np.ndarray]


class IntegrationError(RuntimeError):
    """Nonlinear stage solve failed; carries the final residual norm."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class IvpSolveSettings:
    kind: str = "newton"  # "newton" | "fixed_point"
    tol: float = 1e-12
    max_iter: int = 50

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("need tol > 0 and max_iter >= 1")
        if self.kind not in ("newton", "fixed_point"):
            raise ValueError(f"unknown solver kind {self.kind!r}")


DEFAULT_SETTINGS = IvpSolveSettings()


@dataclass(frozen=True)
class Trajectory:
    """Time-equidistant samples of one solution, rows are states."""

    t0: float
    h: float
    points: np.ndarray  # (N+1, dim)
    exact: bool = False

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise ValueError("a trajectory needs at least two sample rows")
        if not np.all(np.isfinite(pts)):
            raise ValueError("trajectory contains non-finite entries")

    @property
    def n_steps(self) -> int:
        return self.points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.points.shape[0])


class EvalCounter:
    """Wraps a vector field and counts how many states it was evaluated at."""

    def __init__(self, f: Field):
        self._f = f
        self.count = 0

    def __call__(self, y):
        y = np.asarray(y)
        self.count += 1 if y.ndim == 1 else int(np.prod(y.shape[:-1]))
        return self._f(y)


def _fd_jacobian(f: Field, y: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    n = y.size
    J = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = eps
        J[:, k] = (f(y + e) - f(y - e)) / (2 * eps)
    return J


# ---------------------------------------------------------------------------
# generic Runge-Kutta stepping


def _explicit_stages(A: np.ndarray, f: Field, y: np.ndarray, h: float) -> np.ndarray:
    s = A.shape[0]
    K = np.empty((s,) + y.shape)
    for i in range(s):
        arg = y
        for j in range(i):
            if A[i, j] != 0.0:
                arg = arg + h * A[i, j] * K[j]
        K[i] = f(arg)
    return K


def _newton_stages(A, f, y, h, settings, jac):
    s, n = A.shape[0], y.size
    if jac is None:
        jac = lambda z: _fd_jacobian(f, z)
    K = np.tile(f(y), (s, 1))
    residual = np.inf
    for _ in range(settings.max_iter):
        Y = y + h * (A @ K)
        G = K - np.array([f(Y[i]) for i in range(s)])
        residual = float(np.abs(G).max())
        if residual <= settings.tol:
            return K
        M = np.eye(s * n)
        for i in range(s):
            Ji = jac(Y[i])
            for j in range(s):
                if A[i, j] != 0.0:
                    M[i * n : (i + 1) * n, j * n : (j + 1) * n] -= h * A[i, j] * Ji
        try:
            K = K - np.linalg.solve(M, G.ravel()).reshape(s, n)
        except np.linalg.LinAlgError:
            break
    raise IntegrationError("Newton stage solve did not converge", residual)


def _fixed_point_stages(A, f, y, h, settings):
    s = A.shape[0]
    K = np.tile(f(y), (s, 1))
    residual = np.inf
    for _ in range(settings.max_iter):
        Y = y + h * (A @ K)
        K_new = np.array([f(Y[i]) for i in range(s)])
        residual = float(np.abs(K_new - K).max())
        K = K_new
        if residual <= settings.tol:
            return K
    raise IntegrationError("fixed-point stage solve did not converge", residual)


def rk_step(
    t: AnyTableau,
    f: Field,
    y: np.ndarray,
    h: float,
    settings: Optional[IvpSolveSettings] = None,
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> np.ndarray:
    """One Runge-Kutta step ``y + h sum_i b_i k_i``.

    Explicit tableaus are evaluated as a stage cascade; implicit ones are
    solved with Newton iteration on the stacked stage equations (falling
    back to fixed-point iteration when Newton breaks down).
    """
    if h == 0.0:
        raise ValueError("step size must be nonzero")
    rk = as_rk(t)
    y = np.asarray(y, dtype=float)
    if rk.is_explicit:
        K = _explicit_stages(rk.A, f, y, h)
    else:
        settings = settings or DEFAULT_SETTINGS
        if settings.kind == "fixed_point":
            K = _fixed_point_stages(rk.A, f, y, h, settings)
        else:
            try:
                K = _newton_stages(rk.A, f, y, h, settings, jac)
            except IntegrationError:
                K = _fixed_point_stages(rk.A, f, y, h, settings)
    return y + h * (rk.b @ K)


# ---------------------------------------------------------------------------
# inverse-explicit evaluation


def mirk_increment(
    m: MirkTableau, f: Field, y_n: np.ndarray, y_np1: np.ndarray, h: float
) -> np.ndarray:
    """Increment of one step evaluated from both endpoint states.

    Because D is strictly lower triangular the stages unwind explicitly:
    no nonlinear solve happens here.  Broadcasts over leading batch axes.
    """
    y_n = np.asarray(y_n, dtype=float)
    y_np1 = np.asarray(y_np1, dtype=float)
    K: list[np.ndarray] = []
    for i in range(m.s):
        arg = y_n + m.v[i] * (y_np1 - y_n)
        for j in range(i):
            if m.D[i, j] != 0.0:
                arg = arg + h * m.D[i, j] * K[j]
        K.append(f(arg))
    out = m.b[0] * K[0]
    for i in range(1, m.s):
        out = out + m.b[i] * K[i]
    return out


def inverse_explicit_step(
    m: MirkTableau, f: Field, y_n: np.ndarray, y_np1: np.ndarray, h: float
) -> np.ndarray:
    """Predicted next state ``y_n + h Psi(y_n, y_{n+1})``."""
    return np.asarray(y_n, dtype=float) + h * mirk_increment(m, f, y_n, y_np1, h)


def _endpoint_stage_kind(m: MirkTableau, i: int) -> Optional[str]:
    if np.any(m.D[i] != 0.0):
        return None
    if m.v[i] == 0.0:
        return "left"
    if m.v[i] == 1.0:
        return "right"
    return None


def mirk_pass(
    m: MirkTableau,
    f: Field,
    Y: np.ndarray,
    h: float,
    share_endpoint_stages: bool = True,
) -> np.ndarray:
    """All increments ``Psi_{n,n+1}`` of a trajectory in one sweep.

    Stages that sit exactly at a data point (zero D row and v_i in {0, 1})
    are evaluated once per trajectory point and shared between neighbouring
    intervals, which is what keeps e.g. a three-stage scheme with both
    endpoints among its stages at 2n - 1 field evaluations for n points.
    """
    Y = np.asarray(Y, dtype=float)
    Yn, Yp = Y[:-1], Y[1:]
    kinds = [_endpoint_stage_kind(m, i) for i in range(m.s)]
    left = right = None
    if share_endpoint_stages and any(kinds):
        need_left = any(k == "left" for k in kinds)
        need_right = any(k == "right" for k in kinds)
        if need_left and need_right:
            P = f(Y)
            left, right = P[:-1], P[1:]
        elif need_left:
            left = f(Yn)
        else:
            right = f(Yp)
    K: list[np.ndarray] = []
    for i in range(m.s):
        if share_endpoint_stages and kinds[i] == "left" and left is not None:
            K.append(left)
            continue
        if share_endpoint_stages and kinds[i] == "right" and right is not None:
            K.append(right)
            continue
        arg = Yn + m.v[i] * (Yp - Yn)
        for j in range(i):
            if m.D[i, j] != 0.0:
                arg = arg + h * m.D[i, j] * K[j]
        K.append(f(arg))
    out = m.b[0] * K[0]
    for i in range(1, m.s):
        out = out + m.b[i] * K[i]
    return out


# ---------------------------------------------------------------------------
# structure-preserving one-step maps


def stormer_verlet_step(sys: HamiltonianSystem, y: np.ndarray, h: float) -> np.ndarray:
    """Kick-drift-kick composition; order two, explicit for separable H."""
    if not sys.separable:
        raise ValueError("Stormer-Verlet requires a separable Hamiltonian")
    y = np.asarray(y, dtype=float)
    d = sys.d
    q, p = y[..., :d], y[..., d:]

    def grad_q(qv, pv):
        return sys.grad(np.concatenate([qv, pv], axis=-1))[..., :d]

    def grad_p(qv, pv):
        return sys.grad(np.concatenate([qv, pv], axis=-1))[..., d:]

    p_half = p - 0.5 * h * grad_q(q, p)
    q_new = q + h * grad_p(q, p_half)
    p_new = p_half - 0.5 * h * grad_q(q_new, p_half)
    return np.concatenate([q_new, p_new], axis=-1)


def _directional_second_derivative(
    sys: HamiltonianSystem, y: np.ndarray, w: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """``D^2 f(y)[w, w]`` via central differencing of the analytic Jacobian."""
    r = float(np.linalg.norm(w))
    if r == 0.0:
        return np.zeros_like(w)
    u = w / r
    Jp = sys.field_jac(y + eps * u)
    Jm = sys.field_jac(y - eps * u)
    return r * ((Jp - Jm) @ w) / (2 * eps)


def edrk4_step(
    sys: HamiltonianSystem,
    y: np.ndarray,
    h: float,
    settings: Optional[IvpSolveSettings] = None,
) -> np.ndarray:
    """Implicit midpoint corrected with derivative terms of f; order four.

    Solves  (y' - y)/h = f(m) + h^2/12 (-Df(m) Df(m) f(m) + 1/2 D^2f(m) f(m) f(m))
    with m the midpoint of y and y', by Newton iteration on y'.  On a linear
    field the corrected map reproduces the degree-4 Taylor polynomial of the
    exponential exactly, which pins the h^2/12 prefactor.
    """
    settings = settings or DEFAULT_SETTINGS
    y = np.asarray(y, dtype=float)
    yp = y + h * sys.field(y)
    residual = np.inf
    for _ in range(settings.max_iter):
        mid = 0.5 * (y + yp)
        fm = sys.field(mid)
        Df = sys.field_jac(mid)
        corr = -Df @ (Df @ fm) + 0.5 * _directional_second_derivative(sys, mid, fm)
        R = yp - y - h * (fm + (h * h / 12.0) * corr)
        residual = float(np.abs(R).max())
        if residual <= settings.tol:
            return yp
        M = np.eye(y.size) - 0.5 * h * Df
        yp = yp - np.linalg.solve(M, R)
    raise IntegrationError("derivative-corrected midpoint solve failed", residual)


def discrete_gradient(sys: HamiltonianSystem, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Midpoint discrete gradient: exact along the chord, second order.

    Satisfies ``g(u, v) . (v - u) = H(v) - H(u)`` identically and reduces to
    the plain gradient in the coincidence limit.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    dv = v - u
    r2 = float(dv @ dv)
    if np.sqrt(r2) <= 1e-14:
        return sys.grad(u)
    mid = 0.5 * (u + v)
    g = sys.grad(mid)
    return g + ((float(sys.hamiltonian(v) - sys.hamiltonian(u)) - float(g @ dv)) / r2) * dv


def _dg_second_arg_jacobian_fd(sys, u, v, eps: float = 1e-6) -> np.ndarray:
    """Finite-difference fallback for the Jacobian below; kept as cross-check."""
    n = v.size
    M = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = eps
        M[:, k] = (discrete_gradient(sys, u, v + e) - discrete_gradient(sys, u, v - e)) / (
            2 * eps
        )
    return M


def dg_antisymmetric_part(sys, u, v) -> np.ndarray:
    """Antisymmetrized second-argument Jacobian of the discrete gradient.

    For the midpoint discrete gradient ``g(m) + s dv`` the Jacobian with
    respect to v is ``Hess(m)/2 + s I + dv w^T``; the symmetric pieces drop
    out of the antisymmetrization, leaving the closed form below.  Exactness
    here (rather than differencing) is what lets the Newton solve for the
    order-4 step reach near machine-precision residuals.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    dv = v - u
    r2 = float(dv @ dv)
    if np.sqrt(r2) <= 1e-14:
        return np.zeros((u.size, u.size))
    mid = 0.5 * (u + v)
    g = sys.grad(mid)
    hess_dv = sys.hess(mid) @ dv
    s = (float(sys.hamiltonian(v) - sys.hamiltonian(u)) - float(g @ dv)) / r2
    w = (sys.grad(v) - g - 0.5 * hess_dv) / r2 - (2.0 * s / r2) * dv
    return 0.5 * (np.outer(w, dv) - np.outer(dv, w))


def dg_step(
    sys: HamiltonianSystem,
    y: np.ndarray,
    h: float,
    order: int = 4,
    S: Optional[np.ndarray] = None,
    settings: Optional[IvpSolveSettings] = None,
) -> np.ndarray:
    """Energy-exact discrete-gradient step for ``dy/dt = S grad H``.

    order=2 uses the plain skew matrix S; order=4 replaces it with a skew
    h-dependent correction that keeps the update symmetric.  Either way the
    skewness of the effective matrix makes H(y') = H(y) hold to solver
    accuracy regardless of how the correction terms are approximated.
    """
    if order not in (2, 4):
        raise ValueError("discrete-gradient step supports order 2 or 4 only")
    settings = settings or DEFAULT_SETTINGS
    y = np.asarray(y, dtype=float)
    S = sys.J if S is None else np.asarray(S, dtype=float)

    def effective_skew(yp):
        if order == 2:
            return S
        q_fwd = dg_antisymmetric_part(sys, y, (y + 2.0 * yp) / 3.0)
        q_bwd = dg_antisymmetric_part(sys, yp, (2.0 * y + yp) / 3.0)
        Hb = sys.hess(0.5 * (y + yp))
        return (
            S
            + 0.5 * h * (S @ (q_fwd - q_bwd) @ S)
            - (h * h / 12.0) * (S @ Hb @ S @ Hb @ S)
        )

    def residual_vec(yp):
        return yp - y - h * (effective_skew(yp) @ discrete_gradient(sys, y, yp))

    yp = y + h * sys.field(y)
    R = residual_vec(yp)
    residual = float(np.abs(R).max())
    jac = None
    stalled = 0
    for _ in range(settings.max_iter):
        if residual <= settings.tol:
            return yp
        if jac is None or stalled >= 2:
            jac = _fd_jacobian(residual_vec, yp, eps=1e-7)
            stalled = 0
        try:
            yp = yp - np.linalg.solve(jac, R)
        except np.linalg.LinAlgError:
            raise IntegrationError("discrete-gradient Newton matrix singular", residual)
        R = residual_vec(yp)
        new_residual = float(np.abs(R).max())
        stalled = stalled + 1 if new_residual > 0.5 * residual else 0
        residual = new_residual
    raise IntegrationError("discrete-gradient solve did not converge", residual)


# ---------------------------------------------------------------------------
# reference solver


def _gl6_tableau() -> Tableau:
    return as_rk(get_tableau("gl6"))


def _simplified_newton_step(A, b, f, jac, y, h, tol, max_iter) -> np.ndarray:
    """One implicit RK step with a per-step frozen Jacobian (chord Newton)."""
    s, n = A.shape[0], y.size
    J0 = jac(y)
    M = np.eye(s * n) - h * np.kron(A, J0)
    lu = scipy.linalg.lu_factor(M)
    K = np.tile(f(y), (s, 1))
    residual = np.inf
    for _ in range(max_iter):
        Y = y + h * (A @ K)
        G = K - np.array([f(Y[i]) for i in range(s)])
        residual = float(np.abs(G).max())
        if residual <= tol:
            return y + h * (b @ K)
        K = K - scipy.linalg.lu_solve(lu, G.ravel()).reshape(s, n)
    raise IntegrationError("reference stage solve did not converge", residual)


def reference_solve_field(
    f: Field,
    y0: np.ndarray,
    h_out: float,
    N: int,
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    t0: float = 0.0,
    h_int: float = 0.01,
    tol: float = 1e-13,
    max_iter: int = 60,
    exact: bool = True,
) -> Trajectory:
    """High-accuracy trajectory sampled every ``h_out`` time units.

    Each output step is subdivided into Gauss-Legendre order-6 substeps of
    at most ``h_int``; the symplectic order-6 scheme at that resolution
    keeps the error far below every effect measured by the toolkit.
    """
    if abs(h_out) < 1e-300:
        raise ValueError("output step underflow")
    gl6 = _gl6_tableau()
    if jac is None:
        jac = lambda z: _fd_jacobian(f, z)
    n_sub = max(1, int(np.ceil(abs(h_out) / h_int)))
    h_sub = h_out / n_sub
    y = np.asarray(y0, dtype=float)
    out = [y]
    for _ in range(N):
        for _ in range(n_sub):
            y = _simplified_newton_step(gl6.A, gl6.b, f, jac, y, h_sub, tol, max_iter)
        out.append(y)
    return Trajectory(t0, h_out, np.array(out), exact=exact)


def reference_solve(
    sys: HamiltonianSystem,
    y0: np.ndarray,
    h_out: float,
    N: int,
    t0: float = 0.0,
    h_int: float = 0.01,
    tol: float = 1e-13,
) -> Trajectory:
    return reference_solve_field(
        sys.field, y0, h_out, N, jac=sys.field_jac, t0=t0, h_int=h_int, tol=tol
    )


# ---------------------------------------------------------------------------
# steppers by name, trajectories, empirical order


def make_stepper(
    sys: HamiltonianSystem,
    method: str,
    settings: Optional[IvpSolveSettings] = None,
) -> Callable[[np.ndarray, float], np.ndarray]:
    """Bind a named one-step method to a system, returning ``step(y, h)``."""
    key = method.strip().lower().replace("-", "_")
    settings = settings or IvpSolveSettings(tol=1e-13, max_iter=100)
    if key == "stormer_verlet":
        return lambda y, h: stormer_verlet_step(sys, y, h)
    if key == "edrk4":
        return lambda y, h: edrk4_step(sys, y, h, settings)
    if key in ("dg2", "dg4"):
        order = int(key[-1])
        return lambda y, h: dg_step(sys, y, h, order=order, settings=settings)
    t = get_tableau(key)
    return lambda y, h: rk_step(t, sys.field, y, h, settings, jac=sys.field_jac)


INTEGRATOR_NAMES = (
    "explicit_euler",
    "implicit_euler",
    "rk4",
    "midpoint",
    "mirk3",
    "mirk4",
    "mirk5",
    "mirk6",
    "gl4",
    "gl6",
    "stormer_verlet",
    "edrk4",
    "dg2",
    "dg4",
)


def integrate(
    step: Callable[[np.ndarray, float], np.ndarray],
    y0: np.ndarray,
    h: float,
    N: int,
    t0: float = 0.0,
) -> Trajectory:
    y = np.asarray(y0, dtype=float)
    out = [y]
    for _ in range(N):
        y = step(y, h)
        out.append(y)
    return Trajectory(t0, h, np.array(out))


def energy_drift(sys: HamiltonianSystem, traj: Trajectory) -> np.ndarray:
    """``H(y_n) - H(y_0)`` along a trajectory."""
    H = sys.hamiltonian(traj.points)
    return H - H[0]


@dataclass(frozen=True)
class EmpiricalOrderFit:
    slope: float
    p_hat: float
    h_used: np.ndarray
    errors: np.ndarray


def empirical_order(
    step: Callable[[np.ndarray, float], np.ndarray],
    sys: HamiltonianSystem,
    y0: np.ndarray,
    h_list,
    floor: float = 1e-13,
) -> EmpiricalOrderFit:
    """Least-squares slope of one-step errors against the reference flow.

    The one-step error of a method of order p scales like h^(p+1), so the
    reported estimate is ``slope - 1``.  Errors at the double-precision
    round-off floor are excluded from the fit.  ``y0`` may hold several
    states (one per row); errors are then averaged per step size, which
    irons out sign changes of the leading error coefficient along a single
    trajectory.
    """
    h_list = np.asarray(sorted(h_list, reverse=True), dtype=float)
    if h_list.size < 4:
        raise ValueError("need at least four step sizes")
    states = np.atleast_2d(np.asarray(y0, dtype=float))
    errors = []
    for h in h_list:
        errs_h = []
        for y in states:
            ref = reference_solve(sys, y, h, 1, h_int=min(h, 0.005)).points[-1]
            errs_h.append(float(np.linalg.norm(step(y, h) - ref)))
        errors.append(float(np.mean(errs_h)))
    errors = np.asarray(errors)
    keep = errors > floor
    if keep.sum() < 3:
        raise ValueError("fewer than three one-step errors above the round-off floor")
    slope = float(np.polyfit(np.log(h_list[keep]), np.log(errors[keep]), 1)[0])
    return EmpiricalOrderFit(slope, slope - 1.0, h_list[keep], errors[keep])
