import numpy as np
import pytest
import torch
from torch import nn

from miikit.model import (
    ScalarFieldModel,
    load_checkpoint,
    numpy_field,
    parameter_gradient,
    save_checkpoint,
)

Y0 = torch.tensor([0.1, 0.2, -0.3, 0.4], dtype=torch.float64)


def fd_param_gradient(model, loss_fn, eps=1e-6):
    theta = model.get_flat_params()
    g = np.zeros_like(theta)
    for k in range(theta.size):
        for sign in (+1, -1):
            t = theta.copy()
            t[k] += sign * eps
            model.set_flat_params(t)
            g[k] += sign * float(loss_fn(model))
    model.set_flat_params(theta)
    return g / (2 * eps)


def test_zero_parameters_output_is_final_bias():
    m = ScalarFieldModel(4, (8, 8), "dense", seed=0)
    theta = np.zeros(m.n_params)
    theta[-1] = 0.7  # final bias is the last flat entry
    m.set_flat_params(theta)
    assert float(m(Y0).detach()) == pytest.approx(0.7)
    assert float(m(3 * Y0).detach()) == pytest.approx(0.7)


def test_separable_energy_splits():
    m = ScalarFieldModel(4, (16,), "separable", seed=1)
    q = torch.tensor([0.3, -0.2], dtype=torch.float64)
    p1 = torch.tensor([0.1, 0.5], dtype=torch.float64)
    p2 = torch.tensor([-0.4, 0.2], dtype=torch.float64)
    for q_other in (q, q + 1.0):
        diff = float((m(torch.cat([q_other, p1])) - m(torch.cat([q_other, p2]))).detach())
        assert diff == pytest.approx(
            float((m(torch.cat([q, p1])) - m(torch.cat([q, p2]))).detach()), abs=1e-14
        )


def test_seeded_initialization_is_reproducible():
    a = ScalarFieldModel(4, (32, 32), "dense", seed=2024)
    b = ScalarFieldModel(4, (32, 32), "dense", seed=2024)
    np.testing.assert_array_equal(a.get_flat_params(), b.get_flat_params())
    # golden value frozen at first build
    assert float(a(Y0).detach()) == pytest.approx(0.13614204645774164, abs=1e-15)
    c = ScalarFieldModel(4, (16,), "separable", seed=7)
    assert float(c(Y0).detach()) == pytest.approx(0.14373847019457353, abs=1e-15)


def test_different_seeds_differ():
    a = ScalarFieldModel(4, (8,), "dense", seed=0)
    b = ScalarFieldModel(4, (8,), "dense", seed=1)
    assert not np.array_equal(a.get_flat_params(), b.get_flat_params())


@pytest.mark.parametrize("variant", ["dense", "separable"])
def test_input_gradient_matches_finite_differences(variant):
    rng = np.random.default_rng(5)
    for seed in range(4):
        m = ScalarFieldModel(4, (8, 8), variant, seed=seed)
        for _ in range(25):
            y = rng.normal(size=4)
            yt = torch.as_tensor(y)
            g = m.input_gradient(yt).detach().numpy()
            g_fd = np.zeros(4)
            with torch.no_grad():
                for k in range(4):
                    e = np.zeros(4)
                    e[k] = 1e-5
                    g_fd[k] = float(m(torch.as_tensor(y + e)) - m(torch.as_tensor(y - e))) / 2e-5
            assert np.linalg.norm(g - g_fd) / max(1e-9, np.linalg.norm(g_fd)) <= 1e-6


def test_zero_final_layer_gives_zero_gradient():
    m = ScalarFieldModel(4, (8,), "dense", seed=3)
    with torch.no_grad():
        m.net[-1].weight.zero_()
    g = m.input_gradient(Y0)
    np.testing.assert_allclose(g.detach().numpy(), 0.0, atol=1e-16)


def test_vector_field_orthogonal_to_gradient():
    m = ScalarFieldModel(4, (16, 16), "dense", seed=9)
    rng = np.random.default_rng(2)
    y = torch.as_tensor(rng.normal(size=(50, 4)))
    f = m.vector_field(y)
    g = m.input_gradient(y)
    assert float((f * g).sum(dim=-1).abs().max()) <= 1e-12


def test_parameter_gradient_matches_fd_on_tiny_model():
    m = ScalarFieldModel(2, (), "dense", seed=4)  # linear: exactly 3 parameters
    assert m.n_params == 3
    y = torch.tensor([[0.4, -0.2], [0.1, 0.3]], dtype=torch.float64)

    def loss_fn(model):
        g = model.input_gradient(y, create_graph=True)
        return (g**2).sum() + (model(y) ** 2).sum()

    g = parameter_gradient(m, loss_fn)
    g_fd = fd_param_gradient(m, lambda mm: loss_fn(mm).detach(), eps=1e-6)
    assert np.linalg.norm(g - g_fd) / np.linalg.norm(g_fd) <= 1e-5


def test_parameter_gradient_through_second_order_path():
    m = ScalarFieldModel(4, (6,), "dense", seed=11)
    y = torch.as_tensor(np.random.default_rng(0).normal(size=(3, 4)))

    def loss_fn(model):
        f = model.vector_field(y, create_graph=True)
        return (f**2).sum()

    g = parameter_gradient(m, loss_fn)
    g_fd = fd_param_gradient(m, lambda mm: loss_fn(mm).detach(), eps=1e-6)
    assert np.linalg.norm(g - g_fd) / np.linalg.norm(g_fd) <= 1e-5


def test_unused_parameter_block_gets_zero_gradient():
    m = ScalarFieldModel(4, (8,), "separable", seed=5)
    q = torch.tensor([[0.3, -0.2]], dtype=torch.float64)

    def loss_fn(model):
        return (model.net_q(q) ** 2).sum()

    g = parameter_gradient(m, loss_fn)
    n_q = sum(p.numel() for p in m.net_q.parameters())
    assert np.abs(g[n_q:]).max() == 0.0
    assert np.abs(g[:n_q]).max() > 0.0


def test_gradient_scales_linearly_with_loss():
    m = ScalarFieldModel(4, (8,), "dense", seed=6)
    y = torch.as_tensor(np.random.default_rng(1).normal(size=(5, 4)))
    loss = lambda mm: (mm.vector_field(y, create_graph=True) ** 2).sum()
    double = lambda mm: 2.0 * loss(mm)
    np.testing.assert_allclose(
        parameter_gradient(m, double), 2.0 * parameter_gradient(m, loss), rtol=1e-12
    )


def test_second_order_path_closed_form_quadratic():
    # H_theta(y) = theta * (a . y)^2  =>  d/dtheta [u . grad_y H] = 2 (a.y)(a.u)
    a = torch.tensor([0.3, -0.7, 0.2, 0.5], dtype=torch.float64)
    u = torch.tensor([1.0, 2.0, -1.0, 0.5], dtype=torch.float64)
    y = torch.tensor([0.4, 0.1, -0.3, 0.2], dtype=torch.float64)

    class Quadratic(nn.Module):
        def __init__(self):
            super().__init__()
            self.theta = nn.Parameter(torch.tensor(0.8, dtype=torch.float64))

        def forward(self, z):
            return self.theta * (z @ a) ** 2

        def input_gradient(self, z, create_graph=False):
            z = z.detach().requires_grad_(True)
            (g,) = torch.autograd.grad(self.forward(z).sum(), z, create_graph=create_graph)
            return g

    q = Quadratic()
    g = parameter_gradient(q, lambda mm: (mm.input_gradient(y, create_graph=True) * u).sum())
    expected = 2.0 * float(y @ a) * float(u @ a)
    assert g[0] == pytest.approx(expected, rel=1e-12)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    m = ScalarFieldModel(4, (16, 8), "separable", seed=12)
    path = tmp_path / "model.ckpt"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.config() == m.config()
    np.testing.assert_array_equal(back.get_flat_params(), m.get_flat_params())
    assert float(back(Y0).detach()) == float(m(Y0).detach())


def test_checkpoint_rejects_truncated_blob(tmp_path):
    m = ScalarFieldModel(4, (8,), "dense", seed=1)
    path = tmp_path / "model.ckpt"
    save_checkpoint(m, path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_numpy_field_matches_torch():
    m = ScalarFieldModel(4, (8, 8), "dense", seed=8)
    f, jac = numpy_field(m)
    y = np.random.default_rng(3).normal(size=4)
    np.testing.assert_allclose(
        f(y), m.vector_field(torch.as_tensor(y)).detach().numpy(), atol=1e-15
    )
    J = jac(y)
    for k in range(4):
        e = np.zeros(4)
        e[k] = 1e-6
        np.testing.assert_allclose(J[:, k], (f(y + e) - f(y - e)) / 2e-6, atol=1e-7)


def test_constructor_validation():
    with pytest.raises(ValueError):
        ScalarFieldModel(3, (8,), "dense")
    with pytest.raises(ValueError):
        ScalarFieldModel(4, (8,), "convex")
    m = ScalarFieldModel(4, (8,), "dense")
    with pytest.raises(ValueError):
        m.set_flat_params(np.zeros(5))
