"""Loss functions over trajectory data, optimization, and flow-error metrics.

Three loss families over noisy samples ``ytilde_0..ytilde_N``:

- one-step: squared residuals of the inverse-explicit update on consecutive
  pairs; for explicit tableaus the increment touches only the left point;
- MII: squared Frobenius mismatch between the data and its mean-inverse-
  integrated average;
- ISO rollout: explicit multi-step integration from trainable initial
  states, with an inner quasi-Newton solve for those states.

Training follows the two-phase schedule: a configurable number of one-step
pretraining epochs followed by the method-specific phase, each epoch being
one full-batch L-BFGS invocation (strong Wolfe line search).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.optimize
import torch

from .integrators import reference_solve, reference_solve_field
from .mii import build_uw
from .model import ScalarFieldModel, numpy_field
from .systems import HamiltonianSystem
from .tableau import MirkTableau, get_mirk

ISO_STEPPERS = ("rk4", "stormer_verlet")


@dataclass(frozen=True)
class TrainConfig:
    method: str  # "onestep:<tableau>" | "mii:<mirk>" | "iso:<stepper>"
    epochs: int = 4
    pretrain_epochs: int = 2
    hidden: Sequence[int] = (32, 32)
    variant: str = "dense"
    seed: int = 0
    optimizer: str = "lbfgs"  # "lbfgs" | "gd" (first-order fallback)
    lbfgs_max_iter: int = 50
    lbfgs_history: int = 120
    tolerance: float = 1e-9
    gd_step: float = 1e-3
    gd_iters: int = 2000
    iso_gtol: float = 1e-6
    iso_max_iter: int = 10
    # refresh the initial states once at the start of every ISO epoch
    iso_refresh_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.pretrain_epochs < 0 or self.pretrain_epochs > self.epochs:
            raise ValueError("pretrain epochs must lie within the epoch budget")
        kind, _, name = self.method.partition(":")
        if kind not in ("onestep", "mii", "iso") or not name:
            raise ValueError(f"malformed method {self.method!r}")
        if kind == "iso" and name not in ISO_STEPPERS:
            raise ValueError(f"iso stepper must be one of {ISO_STEPPERS}")

    @property
    def kind(self) -> str:
        return self.method.partition(":")[0]

    @property
    def integrator(self) -> str:
        return self.method.partition(":")[2]


def _data_tensor(data) -> tuple[torch.Tensor, float]:
    """Accepts anything with .Y and .h (or a (Y, h) pair)."""
    if hasattr(data, "Y") and hasattr(data, "h"):
        Y, h = data.Y, data.h
    else:
        Y, h = data
    if isinstance(Y, torch.Tensor):
        Y = Y.to(torch.float64)
    else:
        Y = torch.as_tensor(np.array(Y, dtype=np.float64))
    if Y.ndim == 2:
        Y = Y[None]
    return Y, float(h)


def _mirk_increments(m: MirkTableau, model, Yn: torch.Tensor, Yp: torch.Tensor, h: float):
    K: list[torch.Tensor] = []
    for i in range(m.s):
        arg = Yn + float(m.v[i]) * (Yp - Yn)
        for j in range(i):
            dij = float(m.D[i, j])
            if dij != 0.0:
                arg = arg + h * dij * K[j]
        K.append(model.vector_field(arg, create_graph=True))
    out = float(m.b[0]) * K[0]
    for i in range(1, m.s):
        out = out + float(m.b[i]) * K[i]
    return out


def one_step_loss(model, data, tableau) -> torch.Tensor:
    """Sum of squared residuals ``|| y_{n+1} - y_n - h Psi(y_n, y_{n+1}) ||^2``."""
    m = tableau if isinstance(tableau, MirkTableau) else get_mirk(tableau)
    Y, h = _data_tensor(data)
    Yn, Yp = Y[:, :-1, :], Y[:, 1:, :]
    psi = _mirk_increments(m, model, Yn, Yp, h)
    return ((Yp - Yn - h * psi) ** 2).sum()


def mii_loss(model, data, tableau) -> torch.Tensor:
    """Squared Frobenius mismatch ``|| Y - (U Y + h W Psi)/N ||^2``."""
    m = tableau if isinstance(tableau, MirkTableau) else get_mirk(tableau)
    Y, h = _data_tensor(data)
    N = Y.shape[1] - 1
    op = build_uw(N)
    U = torch.as_tensor(np.array(op.U))
    W = torch.as_tensor(np.array(op.W))
    psi = _mirk_increments(m, model, Y[:, :-1, :], Y[:, 1:, :], h)
    Ybar = (torch.einsum("ij,bjk->bik", U, Y) + h * torch.einsum("ij,bjk->bik", W, psi)) / N
    return ((Y - Ybar) ** 2).sum()


# ---------------------------------------------------------------------------
# explicit rollout steppers (torch, differentiable)


def _rk4_step_torch(model, y: torch.Tensor, h: float) -> torch.Tensor:
    f = lambda z: model.vector_field(z, create_graph=True)
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _stormer_verlet_step_torch(model, y: torch.Tensor, h: float) -> torch.Tensor:
    if getattr(model, "variant", "dense") != "separable":
        raise ValueError("Stormer-Verlet rollout requires separability")
    d = model.d
    q, p = y[..., :d], y[..., d:]

    def gq(qv, pv):
        return model.grad_blocks(torch.cat([qv, pv], dim=-1), create_graph=True)[0]

    def gp(qv, pv):
        return model.grad_blocks(torch.cat([qv, pv], dim=-1), create_graph=True)[1]

    p_half = p - 0.5 * h * gq(q, p)
    q_new = q + h * gp(q, p_half)
    p_new = p_half - 0.5 * h * gq(q_new, p_half)
    return torch.cat([q_new, p_new], dim=-1)


def rollout_stepper(name: str) -> Callable:
    key = name.strip().lower().replace("-", "_")
    if key == "rk4":
        return _rk4_step_torch
    if key == "stormer_verlet":
        return _stormer_verlet_step_torch
    raise KeyError(f"unknown rollout stepper {name!r}")


def iso_rollout_loss(model, data, stepper, y0_hat) -> torch.Tensor:
    """``sum_{n>=1} || y_n - Phi^n(y0_hat) ||^2`` with an explicit stepper."""
    step = rollout_stepper(stepper) if isinstance(stepper, str) else stepper
    Y, h = _data_tensor(data)
    y = y0_hat if isinstance(y0_hat, torch.Tensor) else torch.as_tensor(
        np.array(y0_hat, dtype=np.float64)
    )
    loss = torch.zeros((), dtype=torch.float64)
    for n in range(1, Y.shape[1]):
        y = step(model, y, h)
        loss = loss + ((Y[:, n, :] - y) ** 2).sum()
    return loss


def optimize_initial_states(
    model,
    data,
    stepper,
    y0_hat: np.ndarray,
    gtol: float = 1e-6,
    max_iter: int = 10,
) -> np.ndarray:
    """Quasi-Newton refinement of each trajectory's initial state.

    The model is held fixed; each trajectory is solved independently with a
    bounded iteration budget.  If the line search fails scipy returns its
    best iterate, which is kept.
    """
    Y, h = _data_tensor(data)
    step = rollout_stepper(stepper) if isinstance(stepper, str) else stepper
    out = np.array(y0_hat, dtype=np.float64, copy=True)
    for j in range(Y.shape[0]):
        Yj = Y[j : j + 1]

        def fun(x):
            y0 = torch.as_tensor(x).reshape(1, -1).requires_grad_(True)
            loss = iso_rollout_loss(model, (Yj, h), step, y0)
            (g,) = torch.autograd.grad(loss, y0)
            return float(loss.detach()), g.reshape(-1).numpy()

        res = scipy.optimize.minimize(
            fun,
            out[j],
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "gtol": gtol},
        )
        out[j] = res.x
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: ScalarFieldModel
    history: list = field(default_factory=list)  # dicts: epoch, phase, loss, seconds
    y0_hat: Optional[np.ndarray] = None

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"]


def _run_lbfgs_epoch(model, loss_fn, config: TrainConfig) -> float:
    params = [p for p in model.parameters()]
    opt = torch.optim.LBFGS(
        params,
        max_iter=config.lbfgs_max_iter,
        history_size=config.lbfgs_history,
        line_search_fn="strong_wolfe",
        tolerance_grad=config.tolerance,
        tolerance_change=config.tolerance,
    )

    def closure():
        opt.zero_grad()
        loss = loss_fn()
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite loss {float(loss.detach())!r} during training")
        loss.backward()
        return loss

    final = opt.step(closure)
    return float(final.detach())


def _run_gd_epoch(model, loss_fn, config: TrainConfig) -> float:
    params = list(model.parameters())
    loss_value = np.inf
    for _ in range(config.gd_iters):
        loss = loss_fn()
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite loss {float(loss.detach())!r} during training")
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        with torch.no_grad():
            for p, g in zip(params, grads):
                if g is not None:
                    p -= config.gd_step * g
        loss_value = float(loss.detach())
    return loss_value


def _pretrain_loss(model, data, config: TrainConfig):
    """One-step pretraining uses the method's own integrator."""
    name = config.integrator
    if config.kind == "iso" and name == "stormer_verlet":
        # explicit one-step residuals of the stepper itself
        Y, h = _data_tensor(data)

        def loss_fn():
            pred = _stormer_verlet_step_torch(model, Y[:, :-1, :], h)
            return ((Y[:, 1:, :] - pred) ** 2).sum()

        return loss_fn
    return lambda: one_step_loss(model, data, name)


def train(config: TrainConfig, data, model: Optional[ScalarFieldModel] = None) -> TrainResult:
    """Two-phase full-batch training; deterministic for a fixed config and data.

    Epochs 0..pretrain-1 minimize the one-step loss of the configured
    integrator; the remaining epochs minimize the configured objective, with
    ISO re-optimizing its initial states at the start of each of its epochs.
    """
    Y, h = _data_tensor(data)
    if model is None:
        model = ScalarFieldModel(Y.shape[-1], config.hidden, config.variant, config.seed)
    result = TrainResult(model=model)
    y0_hat = Y[:, 0, :].numpy().copy()

    run_epoch = _run_lbfgs_epoch if config.optimizer == "lbfgs" else _run_gd_epoch
    pre_loss = _pretrain_loss(model, (Y, h), config)

    for epoch in range(config.epochs):
        start = time.perf_counter()
        phase = "pretrain" if epoch < config.pretrain_epochs else config.kind
        if phase == "pretrain" or config.kind == "onestep":
            loss_value = run_epoch(model, pre_loss if phase == "pretrain" else lambda: one_step_loss(model, (Y, h), config.integrator), config)
        elif config.kind == "mii":
            loss_value = run_epoch(model, lambda: mii_loss(model, (Y, h), config.integrator), config)
        else:  # iso
            if config.iso_refresh_each_epoch or epoch == config.pretrain_epochs:
                y0_hat = optimize_initial_states(
                    model, (Y, h), config.integrator, y0_hat,
                    gtol=config.iso_gtol, max_iter=config.iso_max_iter,
                )
            y0_t = torch.as_tensor(y0_hat)
            loss_value = run_epoch(
                model, lambda: iso_rollout_loss(model, (Y, h), config.integrator, y0_t), config
            )
        result.history.append(
            {
                "epoch": epoch,
                "phase": phase,
                "loss": loss_value,
                "seconds": time.perf_counter() - start,
            }
        )
    result.y0_hat = y0_hat
    return result


# ---------------------------------------------------------------------------
# flow error


@dataclass(frozen=True)
class FlowErrorReport:
    e: float
    M: int
    per_point: np.ndarray

    def __post_init__(self):
        pp = np.asarray(self.per_point, dtype=float)
        object.__setattr__(self, "per_point", pp)
        if pp.size != self.M or np.any(pp < 0):
            raise ValueError("per-point errors must be M non-negative values")
        if abs(self.e - pp.mean()) > 1e-12 * max(1.0, abs(self.e)):
            raise ValueError("summary error must be the mean of the per-point errors")


def flow_error(model, sys: HamiltonianSystem, test_points: np.ndarray, h: float) -> FlowErrorReport:
    """Mean one-step prediction error of the learned field at exact points.

    Both the learned and the true field are advanced with the reference
    solver from the same exact state; the learned trajectory is therefore
    compared against the true flow, not against another one-step method.
    """
    test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
    f, jac = numpy_field(model)
    errs = []
    for y in test_points:
        truth = reference_solve(sys, y, h, 1).points[-1]
        learned = reference_solve_field(f, y, h, 1, jac=jac).points[-1]
        errs.append(float(np.linalg.norm(learned - truth)))
    errs = np.asarray(errs)
    return FlowErrorReport(float(errs.mean()), errs.size, errs)
