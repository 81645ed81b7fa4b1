"""Differentiable scalar-field (Hamiltonian) models.

A small tanh network maps a state ``y = [q, p]`` to the scalar energy
``H_theta(y)``; the learned vector field is ``f_theta = J grad_y H_theta``,
with the input gradient taken by automatic differentiation so that losses
built on f_theta can in turn be differentiated with respect to the
parameters (double backprop).

Two variants: "dense" (one network on the full state) and "separable"
(independent towers on q and p, summed), the latter admitting explicit
symplectic stepping.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64


def _mlp(widths: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        layers.append(nn.Linear(w_in, w_out, dtype=DTYPE))
        layers.append(nn.Tanh())
    return nn.Sequential(*layers[:-1])  # no activation on the scalar output


def _glorot_init(module: nn.Module, generator: torch.Generator) -> None:
    for layer in module.modules():
        if isinstance(layer, nn.Linear):
            fan_in, fan_out = layer.in_features, layer.out_features
            a = float(np.sqrt(6.0 / (fan_in + fan_out)))
            with torch.no_grad():
                layer.weight.uniform_(-a, a, generator=generator)
                layer.bias.zero_()


class ScalarFieldModel(nn.Module):
    """Parametric energy H_theta with input- and parameter-gradients."""

    def __init__(
        self,
        dim: int,
        hidden: Sequence[int] = (32, 32),
        variant: str = "dense",
        seed: int = 0,
    ):
        super().__init__()
        if dim % 2 != 0:
            raise ValueError("state dimension must be even")
        if variant not in ("dense", "separable"):
            raise ValueError(f"unknown variant {variant!r}")
        self.dim = dim
        self.d = dim // 2
        self.hidden = tuple(int(w) for w in hidden)
        self.variant = variant
        self.seed = int(seed)
        gen = torch.Generator().manual_seed(self.seed)
        if variant == "dense":
            self.net = _mlp([dim, *self.hidden, 1])
            _glorot_init(self.net, gen)
        else:
            self.net_q = _mlp([self.d, *self.hidden, 1])
            self.net_p = _mlp([self.d, *self.hidden, 1])
            _glorot_init(self.net_q, gen)
            _glorot_init(self.net_p, gen)
        J = torch.zeros(dim, dim, dtype=DTYPE)
        J[: self.d, self.d :] = torch.eye(self.d, dtype=DTYPE)
        J[self.d :, : self.d] = -torch.eye(self.d, dtype=DTYPE)
        self.register_buffer("J", J)

    # -- evaluation ---------------------------------------------------------

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if self.variant == "dense":
            return self.net(y).squeeze(-1)
        q, p = torch.split(y, self.d, dim=-1)
        return self.net_q(q).squeeze(-1) + self.net_p(p).squeeze(-1)

    def input_gradient(self, y: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
        """grad_y H_theta(y); exact via reverse mode."""
        if not y.requires_grad:
            y = y.detach().requires_grad_(True)
        H = self.forward(y)
        (g,) = torch.autograd.grad(H.sum(), y, create_graph=create_graph)
        return g

    def vector_field(self, y: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
        """f_theta(y) = J grad_y H_theta(y)."""
        g = self.input_gradient(y, create_graph=create_graph)
        gq, gp = torch.split(g, self.d, dim=-1)
        return torch.cat([gp, -gq], dim=-1)

    def grad_blocks(self, y: torch.Tensor, create_graph: bool = False):
        """(dH/dq, dH/dp); for the separable variant each tower sees only
        its own block, which is what explicit symplectic stepping needs."""
        g = self.input_gradient(y, create_graph=create_graph)
        return torch.split(g, self.d, dim=-1)

    # -- parameter access ---------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def get_flat_params(self) -> np.ndarray:
        with torch.no_grad():
            return torch.cat([p.reshape(-1) for p in self.parameters()]).numpy().copy()

    def set_flat_params(self, theta: np.ndarray) -> None:
        theta = np.array(theta, dtype=np.float64)  # copy: sources may be read-only
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        offset = 0
        with torch.no_grad():
            for p in self.parameters():
                k = p.numel()
                p.copy_(torch.from_numpy(theta[offset : offset + k]).reshape(p.shape))
                offset += k

    def config(self) -> dict:
        return {
            "dim": self.dim,
            "hidden": list(self.hidden),
            "variant": self.variant,
            "seed": self.seed,
        }


def parameter_gradient(model: ScalarFieldModel, loss_fn: Callable) -> np.ndarray:
    """Flat gradient of ``loss_fn(model)`` with respect to the parameters.

    The closure may differentiate through input gradients of the model; the
    graph for that inner derivative is retained so the outer derivative sees
    it (second-order path).
    """
    loss = loss_fn(model)
    grads = torch.autograd.grad(loss, list(model.parameters()), allow_unused=True)
    flat = [
        (g if g is not None else torch.zeros_like(p)).reshape(-1)
        for g, p in zip(grads, model.parameters())
    ]
    return torch.cat(flat).detach().numpy()


def numpy_field(model: ScalarFieldModel):
    """(f, jac) callables over numpy arrays for the integrator stack."""

    def f(y: np.ndarray) -> np.ndarray:
        yt = torch.as_tensor(np.asarray(y, dtype=np.float64))
        return model.vector_field(yt).detach().numpy()

    def jac(y: np.ndarray) -> np.ndarray:
        yt = torch.as_tensor(np.asarray(y, dtype=np.float64)).requires_grad_(True)
        g = model.input_gradient(yt, create_graph=True)
        rows = [
            torch.autograd.grad(g[k], yt, retain_graph=True)[0] for k in range(model.dim)
        ]
        hess = torch.stack(rows).detach().numpy()
        return model.J.numpy() @ hess  # f' = J hess H

    return f, jac


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line + little-endian float64 parameter blob


def save_checkpoint(model: ScalarFieldModel, path) -> None:
    header = dict(model.config())
    header["n_params"] = model.n_params
    blob = model.get_flat_params().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path) -> ScalarFieldModel:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    model = ScalarFieldModel(
        header["dim"], header["hidden"], header["variant"], header["seed"]
    )
    theta = np.frombuffer(raw[nl + 1 :], dtype="<f8")
    if theta.size != header["n_params"]:
        raise ValueError("checkpoint blob size does not match header")
    model.set_flat_params(theta)
    return model
