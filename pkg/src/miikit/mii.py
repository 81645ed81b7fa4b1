"""Mean inverse integrator: averaging one-step predictions over a trajectory.

Every trajectory point can be predicted from every other one by composing
inverse-explicit steps forward or backward in time, and the compositions
telescope into integer combinations of the per-interval increments.  For a
trajectory of N steps the averaged states assemble into one linear map

    Ybar = (U Ytilde + h W Psi) / N

where U is the all-ones matrix with a zero diagonal (average everyone else)
and W holds the signed step counts.  With 1-based indices,

    W[i, j] = j - 1 - N  if j >= i   (backward contributions)
              j          otherwise   (forward contributions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrators import Field, Trajectory, mirk_pass
from .tableau import MirkTableau


@dataclass(frozen=True)
class MiiOperator:
    """The pair of averaging matrices for a trajectory of N steps."""

    N: int
    U: np.ndarray  # (N+1, N+1)
    W: np.ndarray  # (N+1, N)

    def __post_init__(self):
        for attr in ("U", "W"):
            a = np.array(getattr(self, attr), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, attr, a)
        if self.U.shape != (self.N + 1, self.N + 1) or self.W.shape != (self.N + 1, self.N):
            raise ValueError("averaging matrices do not match the step count")


def build_uw(N: int) -> MiiOperator:
    """Averaging matrices for N steps, exactly as defined above.

    For N=3 the weight matrix reads
    [[-3, -2, -1], [1, -2, -1], [1, 2, -1], [1, 2, 3]].
    """
    if N < 1:
        raise ValueError("need at least one step")
    U = np.ones((N + 1, N + 1)) - np.eye(N + 1)
    # 0-based translation of the 1-based definition
    i = np.arange(N + 1)[:, None]
    j = np.arange(N)[None, :]
    W = np.where(j >= i, j - N, j + 1).astype(float)
    return MiiOperator(N, U, W)


def mii_apply(
    op: MiiOperator,
    data: Trajectory,
    m: MirkTableau,
    f: Field,
    share_endpoint_stages: bool = True,
) -> np.ndarray:
    """Averaged trajectory matrix ``Ybar = (U Y + h W Psi) / N``.

    The increments Psi are evaluated once per interval (endpoint stages
    shared along the trajectory) and reused by every row of the average.
    """
    if data.n_steps != op.N:
        raise ValueError(f"trajectory has {data.n_steps} steps, operator expects {op.N}")
    Y = data.points
    psi = mirk_pass(m, f, Y, data.h, share_endpoint_stages=share_endpoint_stages)
    return (op.U @ Y + data.h * (op.W @ psi)) / op.N
