"""Noise propagation through inverse-explicit training targets.

For i.i.d. Gaussian perturbations of variance sigma^2 on every trajectory
point, the covariance of the residual one minimizes (one-step or MII form)
admits a first-order-in-h approximation built from the field Jacobians along
the exact trajectory.  This module implements those analytic spectral-radius
estimates together with the Monte-Carlo estimator that validates them.

Sign convention: expanding the variance of the MII target gives the diagonal
correction with a *negative* sign, Var ~ (sigma^2/N) [(1+N) I - h P_nn
+ (h/N) sum_{j != n} P_nj + (h^2/N) Q]; the Monte-Carlo estimator agrees
with this expansion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .integrators import Trajectory, mirk_increment
from .mii import build_uw
from .systems import HamiltonianSystem
from .tableau import MirkTableau, alpha


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("variance must be non-negative")


def spectral_radius_sym(A: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Spectral radius of a symmetric matrix by power iteration.

    For symmetric A this equals the 2-norm.  The Rayleigh quotient is used
    as the eigenvalue estimate and the iteration stops on the residual
    ``||A x - lambda x||``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    x = np.ones(n) + 1e-3 * np.arange(n)  # deterministic, unlikely to be orthogonal
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = A @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        lam = float(x @ y)
        x = y / norm
        if np.linalg.norm(A @ x - lam * x) <= tol:
            break
    return abs(lam)


def _weights(m: MirkTableau):
    ones = np.ones(m.s)
    return float(m.b @ m.v), float(m.b @ (ones - m.v))


def analytic_rho_os(m: MirkTableau, fprime: np.ndarray, h: float, sigma2: float) -> float:
    """sigma^2 || 2I + h b^T(1-2v) (f' + f'^T) + h^2 Q ||_2 with
    Q = ((b^T v)^2 + (b^T(1-v))^2) f' f'^T."""
    fprime = np.asarray(fprime, dtype=float)
    n = fprime.shape[0]
    bv, b1v = _weights(m)
    Q = (bv**2 + b1v**2) * (fprime @ fprime.T)
    M = 2.0 * np.eye(n) + h * alpha(m) * (fprime + fprime.T) + h * h * Q
    return sigma2 * spectral_radius_sym(M)


def analytic_rho_mii(
    m: MirkTableau,
    jacobians,
    n: int,
    h: float,
    sigma2: float,
    W: Optional[np.ndarray] = None,
) -> float:
    """Analytic spectral-radius estimate for row n of the MII target.

    ``jacobians`` holds f'(y_j) for every trajectory point.  The weight
    matrix is padded with zero columns on both sides, so each point sees the
    backward weight of its left interval and the forward weight of its right
    one.
    """
    jacobians = [np.asarray(Jf, dtype=float) for Jf in jacobians]
    N = len(jacobians) - 1
    if not 0 <= n <= N:
        raise IndexError(f"row {n} outside trajectory of {N} steps")
    if W is None:
        W = build_uw(N).W
    bv, b1v = _weights(m)

    def wt(row, col):
        return float(W[row, col]) if 0 <= col < N else 0.0

    dim = jacobians[0].shape[0]
    Pbar = [
        jacobians[j] * (wt(n, j) * b1v + wt(n, j - 1) * bv) for j in range(N + 1)
    ]
    M = (1.0 + N) * np.eye(dim)
    M -= h * (Pbar[n] + Pbar[n].T)
    for j in range(N + 1):
        if j != n:
            M += (h / N) * (Pbar[j] + Pbar[j].T)
        M += (h * h / N) * (Pbar[j] @ Pbar[j].T)
    return sigma2 / N * spectral_radius_sym(M)


# ---------------------------------------------------------------------------
# Monte-Carlo estimator


@dataclass(frozen=True)
class McRho:
    """Per-point spectral radii of the empirical target covariance."""

    indices: np.ndarray
    rho: np.ndarray

    @property
    def rho_bar(self) -> float:
        return float(self.rho.mean())


def _covariance_rho(samples: np.ndarray) -> float:
    X = samples - samples.mean(axis=0)
    C = X.T @ X / (X.shape[0] - 1)
    return spectral_radius_sym(C)


def monte_carlo_rho(
    sys: HamiltonianSystem,
    trajectory: Trajectory,
    m: MirkTableau,
    mode: str,
    sigma2: float,
    n_samples: int,
    seed: int = 0,
) -> McRho:
    """Empirical spectral radii of the optimization-target covariance.

    Draws ``n_samples`` perturbed copies of the exact trajectory, evaluates
    the one-step residual (mode "os", defined for points with a predecessor)
    or the MII residual (mode "mii", all points) with the true field, and
    returns the spectral radius of the per-point sample covariance.
    """
    if mode not in ("os", "mii"):
        raise ValueError("mode must be 'os' or 'mii'")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    Y = trajectory.points
    N = trajectory.n_steps
    h = trajectory.h
    rng = np.random.default_rng(seed)
    delta = rng.normal(scale=np.sqrt(sigma2), size=(n_samples,) + Y.shape)
    Yt = Y[None, :, :] + delta
    psi = mirk_increment(m, sys.field, Yt[:, :-1, :], Yt[:, 1:, :], h)
    if mode == "os":
        targets = Yt[:, 1:, :] - Yt[:, :-1, :] - h * psi  # (ns, N, dim)
        indices = np.arange(1, N + 1)
        rho = np.array([_covariance_rho(targets[:, k, :]) for k in range(N)])
    else:
        op = build_uw(N)
        Ybar = (
            np.einsum("ij,sjk->sik", op.U, Yt) + h * np.einsum("ij,sjk->sik", op.W, psi)
        ) / N
        targets = Yt - Ybar
        indices = np.arange(0, N + 1)
        rho = np.array([_covariance_rho(targets[:, k, :]) for k in range(N + 1)])
    return McRho(indices, rho)


def analytic_rho_bar(
    sys: HamiltonianSystem,
    trajectory: Trajectory,
    m: MirkTableau,
    mode: str,
    sigma2: float,
) -> float:
    """Trajectory average of the analytic estimates, on the same index set
    as the Monte-Carlo estimator (one-step residuals linearize the field at
    the left endpoint of their interval)."""
    Y = trajectory.points
    N = trajectory.n_steps
    h = trajectory.h
    if mode == "os":
        vals = [analytic_rho_os(m, sys.field_jac(Y[k]), h, sigma2) for k in range(N)]
        return float(np.mean(vals))
    if mode == "mii":
        jacs = [sys.field_jac(Y[k]) for k in range(N + 1)]
        W = build_uw(N).W
        vals = [analytic_rho_mii(m, jacs, k, h, sigma2, W=W) for k in range(N + 1)]
        return float(np.mean(vals))
    raise ValueError("mode must be 'os' or 'mii'")


@dataclass(frozen=True)
class SensitivityReport:
    """Per-point analytic and Monte-Carlo estimates for one trajectory."""

    h: float
    N: int
    rho_os_analytic: np.ndarray
    rho_mii_analytic: np.ndarray
    rho_os_mc: np.ndarray
    rho_mii_mc: np.ndarray

    @property
    def means(self) -> dict:
        return {
            "os_analytic": float(self.rho_os_analytic.mean()),
            "mii_analytic": float(self.rho_mii_analytic.mean()),
            "os_mc": float(self.rho_os_mc.mean()),
            "mii_mc": float(self.rho_mii_mc.mean()),
        }


def sensitivity_report(
    sys: HamiltonianSystem,
    trajectory: Trajectory,
    m: MirkTableau,
    sigma2: float,
    n_samples: int,
    seed: int = 0,
) -> SensitivityReport:
    Y = trajectory.points
    N = trajectory.n_steps
    h = trajectory.h
    jacs = [sys.field_jac(Y[k]) for k in range(N + 1)]
    W = build_uw(N).W
    return SensitivityReport(
        h=h,
        N=N,
        rho_os_analytic=np.array(
            [analytic_rho_os(m, jacs[k], h, sigma2) for k in range(N)]
        ),
        rho_mii_analytic=np.array(
            [analytic_rho_mii(m, jacs, k, h, sigma2, W=W) for k in range(N + 1)]
        ),
        rho_os_mc=monte_carlo_rho(sys, trajectory, m, "os", sigma2, n_samples, seed).rho,
        rho_mii_mc=monte_carlo_rho(sys, trajectory, m, "mii", sigma2, n_samples, seed).rho,
    )


def sample_mean_variance_demo(
    sigma2: float, N: int, draws: int = 10_000, seed: int = 0
) -> float:
    """Empirical variance of the mean of N i.i.d. N(0, sigma^2) draws."""
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=np.sqrt(sigma2), size=(draws, N)).mean(axis=1)
    return float(means.var())


# ---------------------------------------------------------------------------
# scan driver (the noise-sensitivity figure protocol)


def sensitivity_scan(
    sys: HamiltonianSystem,
    T: float,
    sigma2: float,
    n_samples: int,
    h_list,
    n_trajectories: int,
    seed: int,
    methods=(("mirk4", "os"), ("rk4", "os"), ("mirk4", "mii")),
    r_bounds=(0.3, 0.6),
) -> list[dict]:
    """Average rho over seeded random trajectories for each step size.

    Perturbation draws are shared across methods within each (h, trajectory)
    cell (same substream), so method comparisons are paired.  Returns one
    row per (h, method, mode) with the mean and standard deviation over
    trajectories of the Monte-Carlo trajectory-average, plus the analytic
    counterpart.
    """
    from .experiments import sample_initial_values
    from .integrators import reference_solve
    from .tableau import get_mirk

    rows = []
    y0s = sample_initial_values(
        n_trajectories, sys.dim, r_bounds[0], r_bounds[1], np.random.default_rng(seed)
    )
    for hi, h in enumerate(h_list):
        N = max(1, int(round(T / h)))
        trajs = [reference_solve(sys, y0, h, N) for y0 in y0s]
        for method, mode in methods:
            m = get_mirk(method)
            mc_bars, an_bars = [], []
            for k, traj in enumerate(trajs):
                sub_seed = np.random.SeedSequence((seed, hi, k)).generate_state(1)[0]
                mc_bars.append(
                    monte_carlo_rho(sys, traj, m, mode, sigma2, n_samples, sub_seed).rho_bar
                )
                an_bars.append(analytic_rho_bar(sys, traj, m, mode, sigma2))
            rows.append(
                {
                    "h": float(h),
                    "N": N,
                    "mode": mode,
                    "method": method,
                    "rho_mc_mean": float(np.mean(mc_bars)),
                    "rho_mc_std": float(np.std(mc_bars)),
                    "rho_analytic": float(np.mean(an_bars)),
                }
            )
    return rows
