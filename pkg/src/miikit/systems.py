"""Benchmark Hamiltonian systems with analytic gradients and Hessians.

States are stored as ``y = [q, p]`` with ``q, p`` in R^d, and the dynamics
are ``dy/dt = J grad H(y)`` with the canonical skew matrix
``J = [[0, I], [-I, 0]]``.  Energies and gradients are vectorized over a
leading batch axis; Hessians are evaluated one state at a time (they are
only needed inside Newton iterations and variance estimates).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


def canonical_skew(d: int) -> np.ndarray:
    J = np.zeros((2 * d, 2 * d))
    J[:d, d:] = np.eye(d)
    J[d:, :d] = -np.eye(d)
    return J


@dataclass(frozen=True)
class HamiltonianSystem:
    """A Hamiltonian ODE described by its energy function.

    ``hamiltonian`` and ``grad`` accept arrays of shape ``(..., 2d)``;
    ``hess`` maps a single state to the ``(2d, 2d)`` Hessian of H.
    """

    name: str
    d: int
    hamiltonian: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Optional[Callable[[np.ndarray], np.ndarray]]
    separable: bool
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 2 * self.d

    @property
    def J(self) -> np.ndarray:
        return canonical_skew(self.d)

    def field(self, y: np.ndarray) -> np.ndarray:
        """Vector field ``f(y) = J grad H(y)``, batched."""
        g = self.grad(np.asarray(y, dtype=float))
        d = self.d
        return np.concatenate([g[..., d:], -g[..., :d]], axis=-1)

    def field_jac(self, y: np.ndarray) -> np.ndarray:
        """Jacobian ``f'(y) = J hess H(y)`` at a single state."""
        if self.hess is None:
            raise ValueError(f"system {self.name!r} provides no Hessian")
        return self.J @ self.hess(np.asarray(y, dtype=float))


def _split(y: np.ndarray, d: int):
    return y[..., :d], y[..., d:]


# ---------------------------------------------------------------------------
# Fermi-Pasta-Ulam-Tsingou


def _fput_coupling(m: int) -> np.ndarray:
    """Rows of the linear forms entering the quartic coupling potential."""
    C = np.zeros((m + 1, 2 * m))
    C[0, 0], C[0, m] = 1.0, -1.0
    for i in range(1, m):  # interior springs (empty for m = 1)
        C[i, i], C[i, m + i] = 1.0, -1.0
        C[i, i - 1], C[i, m + i - 1] = -1.0, -1.0
    C[m, m - 1], C[m, 2 * m - 1] = 1.0, 1.0
    return C


def fput(m: int = 1, omega: float = 2.0) -> HamiltonianSystem:
    """Chain of 2m+1 alternating stiff/soft springs, fixed at both ends.

    In the transformed coordinates, q_1..q_m are scaled displacements of the
    stiff springs and q_{m+1}..q_{2m} their scaled expansions; omega is the
    stiff angular frequency.  The energy is

        H = 1/2 |p|^2 + omega^2/2 sum_i q_{m+i}^2 + 1/4 sum_r (C_r q)^4

    with the coupling rows C_r of the quartic inter-spring potential.
    """
    if m < 1:
        raise ValueError("fput needs at least one stiff spring (m >= 1)")
    d = 2 * m
    C = _fput_coupling(m)
    w2 = float(omega) ** 2
    stiff = np.zeros(d)
    stiff[m:] = w2

    def hamiltonian(y):
        q, p = _split(np.asarray(y, dtype=float), d)
        z = q @ C.T
        return (
            0.5 * np.sum(p**2, axis=-1)
            + 0.5 * np.sum(stiff * q**2, axis=-1)
            + 0.25 * np.sum(z**4, axis=-1)
        )

    def grad(y):
        y = np.asarray(y, dtype=float)
        q, p = _split(y, d)
        z = q @ C.T
        gq = stiff * q + z**3 @ C
        return np.concatenate([gq, p], axis=-1)

    def hess(y):
        q, _ = _split(np.asarray(y, dtype=float), d)
        z = C @ q
        H = np.zeros((2 * d, 2 * d))
        H[:d, :d] = np.diag(stiff) + 3.0 * (C.T * z**2) @ C
        H[d:, d:] = np.eye(d)
        return H

    return HamiltonianSystem(
        "fput", d, hamiltonian, grad, hess, separable=True, params={"m": m, "omega": float(omega)}
    )


# ---------------------------------------------------------------------------
# double pendulum


def double_pendulum() -> HamiltonianSystem:
    """Planar double pendulum in angle/angular-momentum coordinates.

    H = (p1^2/2 + p2^2 - p1 p2 cos(q1-q2)) / (1 + sin^2(q1-q2))
        - 2 cos q1 - cos q2

    Non-separable: the kinetic term couples angles and momenta.
    """

    def _parts(y):
        y = np.asarray(y, dtype=float)
        q1, q2, p1, p2 = np.moveaxis(y, -1, 0)
        u = q1 - q2
        s, co = np.sin(u), np.cos(u)
        den = 1.0 + s**2
        K = 0.5 * p1**2 + p2**2 - p1 * p2 * co
        return q1, q2, p1, p2, u, s, co, den, K

    def hamiltonian(y):
        q1, q2, _, _, _, _, _, den, K = _parts(y)
        return K / den - 2.0 * np.cos(q1) - np.cos(q2)

    def grad(y):
        q1, q2, p1, p2, u, s, co, den, K = _parts(y)
        # d/du of K/den
        G = (p1 * p2 * s * den - K * np.sin(2 * u)) / den**2
        return np.stack(
            [
                G + 2.0 * np.sin(q1),
                -G + np.sin(q2),
                (p1 - p2 * co) / den,
                (2.0 * p2 - p1 * co) / den,
            ],
            axis=-1,
        )

    def hess(y):
        q1, q2, p1, p2, u, s, co, den, K = _parts(y)
        s2, c2 = np.sin(2 * u), np.cos(2 * u)
        K_u, K_uu = p1 * p2 * s, p1 * p2 * co
        # second u-derivative of K/den
        G_u = K_uu / den - 2 * K_u * s2 / den**2 - 2 * K * c2 / den**2 + 2 * K * s2**2 / den**3
        G_p1 = p2 * s / den - (p1 - p2 * co) * s2 / den**2
        G_p2 = p1 * s / den - (2 * p2 - p1 * co) * s2 / den**2
        H = np.empty((4, 4))
        H[0, 0] = G_u + 2.0 * np.cos(q1)
        H[0, 1] = H[1, 0] = -G_u
        H[1, 1] = G_u + np.cos(q2)
        H[0, 2] = H[2, 0] = G_p1
        H[0, 3] = H[3, 0] = G_p2
        H[1, 2] = H[2, 1] = -G_p1
        H[1, 3] = H[3, 1] = -G_p2
        H[2, 2] = 1.0 / den
        H[2, 3] = H[3, 2] = -co / den
        H[3, 3] = 2.0 / den
        return H

    return HamiltonianSystem("double_pendulum", 2, hamiltonian, grad, hess, separable=False)


# ---------------------------------------------------------------------------
# Henon-Heiles


def henon_heiles() -> HamiltonianSystem:
    """Cubic two-degree-of-freedom model of stellar motion in a galactic potential."""

    def hamiltonian(y):
        y = np.asarray(y, dtype=float)
        q1, q2, p1, p2 = np.moveaxis(y, -1, 0)
        return 0.5 * (p1**2 + p2**2) + 0.5 * (q1**2 + q2**2) + q1**2 * q2 - q2**3 / 3.0

    def grad(y):
        y = np.asarray(y, dtype=float)
        q1, q2, p1, p2 = np.moveaxis(y, -1, 0)
        return np.stack(
            [q1 + 2.0 * q1 * q2, q2 + q1**2 - q2**2, p1, p2],
            axis=-1,
        )

    def hess(y):
        q1, q2 = float(y[0]), float(y[1])
        H = np.eye(4)
        H[0, 0] = 1.0 + 2.0 * q2
        H[0, 1] = H[1, 0] = 2.0 * q1
        H[1, 1] = 1.0 - 2.0 * q2
        return H

    return HamiltonianSystem("henon_heiles", 2, hamiltonian, grad, hess, separable=True)


_FACTORY = {
    "fput": fput,
    "double_pendulum": double_pendulum,
    "henon_heiles": henon_heiles,
}


def get_system(name: str, **params) -> HamiltonianSystem:
    key = name.strip().lower().replace("-", "_")
    if key not in _FACTORY:
        raise KeyError(f"unknown system {name!r}; available: {sorted(_FACTORY)}")
    return _FACTORY[key](**params)
