import numpy as np
import pytest

from miikit.integrators import (
    Trajectory,
    mirk_increment,
    reference_solve,
    rk_step,
)
from miikit.mii import build_uw, mii_apply
from miikit.systems import henon_heiles
from miikit.tableau import get_mirk, get_tableau

HH = henon_heiles()
MIRK4 = get_mirk("mirk4")
MIDPOINT = get_mirk("midpoint")


def test_build_uw_three_steps_matches_display():
    op = build_uw(3)
    np.testing.assert_array_equal(op.U, np.ones((4, 4)) - np.eye(4))
    np.testing.assert_array_equal(
        op.W, [[-3, -2, -1], [1, -2, -1], [1, 2, -1], [1, 2, 3]]
    )


def test_build_uw_single_step():
    op = build_uw(1)
    np.testing.assert_array_equal(op.U, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(op.W, [[-1], [1]])


@pytest.mark.parametrize("N", [2, 5, 9])
def test_build_uw_column_structure(N):
    W = build_uw(N).W
    for j in range(N):
        np.testing.assert_array_equal(W[j + 1 :, j], (j + 1) * np.ones(N - j))
        np.testing.assert_array_equal(W[: j + 1, j], (j - N) * np.ones(j + 1))


def test_build_uw_rejects_bad_step_count():
    with pytest.raises(ValueError):
        build_uw(0)


def test_mii_zero_field_averages_the_others():
    rng = np.random.default_rng(4)
    Y = rng.normal(size=(4, 4))
    traj = Trajectory(0.0, 0.1, Y)
    zero = lambda y: np.zeros_like(y)
    avg = mii_apply(build_uw(3), traj, MIRK4, zero)
    for n in range(4):
        others = np.delete(Y, n, axis=0).mean(axis=0)
        np.testing.assert_allclose(avg[n], others, atol=1e-14)


def test_mii_row_matches_hand_expansion():
    # row 2 for N=3: (y0 + y1 + y3 + h (Psi01 + 2 Psi12 - Psi23)) / 3
    rng = np.random.default_rng(12)
    Y = rng.normal(size=(4, 4)) * 0.4
    h = 0.2
    traj = Trajectory(0.0, h, Y)
    avg = mii_apply(build_uw(3), traj, MIRK4, HH.field)
    psi = [mirk_increment(MIRK4, HH.field, Y[i], Y[i + 1], h) for i in range(3)]
    expected = (Y[0] + Y[1] + Y[3] + h * (psi[0] + 2 * psi[1] - psi[2])) / 3
    np.testing.assert_allclose(avg[2], expected, atol=1e-12)


def test_mii_dimension_mismatch():
    traj = Trajectory(0.0, 0.1, np.zeros((4, 4)))
    with pytest.raises(ValueError):
        mii_apply(build_uw(5), traj, MIRK4, HH.field)


def test_mii_converges_at_method_order():
    # averaged states track the exact trajectory at O(h^4) for a 4th-order method
    y0 = np.array([0.2, -0.15, 0.25, 0.1])
    N = 8
    errs, hs = [], [0.2, 0.1, 0.05, 0.025]
    for h in hs:
        traj = reference_solve(HH, y0, h, N)
        avg = mii_apply(build_uw(N), traj, MIRK4, HH.field)
        errs.append(np.abs(avg - traj.points).max())
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 3.6


def test_mii_linear_in_data_for_linear_field():
    A = np.array([[0.0, 0.3], [-0.3, 0.0]])
    f = lambda y: y @ A.T
    rng = np.random.default_rng(3)
    Y1, Y2 = rng.normal(size=(2, 5, 2))
    op = build_uw(4)
    h = 0.1

    def apply(Y):
        return mii_apply(op, Trajectory(0.0, h, Y), MIDPOINT, f)

    lhs = apply(2.0 * Y1 - 0.5 * Y2)
    rhs = 2.0 * apply(Y1) - 0.5 * apply(Y2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_sample_mean_law_for_zero_field():
    # with f = 0 each averaged row is a mean of N i.i.d. points:
    # Var = sigma^2 / N within 10%
    rng = np.random.default_rng(99)
    N, sigma2, draws = 4, 0.3, 10_000
    op = build_uw(N)
    zero = lambda y: np.zeros_like(y)
    base = np.zeros((N + 1, 2))
    samples = np.empty(draws)
    for k in range(draws):
        Y = base + rng.normal(scale=np.sqrt(sigma2), size=base.shape)
        avg = mii_apply(op, Trajectory(0.0, 0.1, Y), MIDPOINT, zero)
        samples[k] = avg[2, 0]
    assert abs(samples.var() - sigma2 / N) <= 0.1 * sigma2 / N


def test_two_step_composition_consistency():
    # composing two implicit midpoint IVP steps vs summing the two increments
    # evaluated on exact data: difference shrinks like h^3
    y0 = np.array([0.2, -0.15, 0.25, 0.1])
    t = get_tableau("midpoint")
    hs = [0.4, 0.3, 0.2, 0.1]
    diffs = []
    for h in hs:
        ref = reference_solve(HH, y0, h, 2)
        composed = rk_step(t, HH.field, rk_step(t, HH.field, y0, h, jac=HH.field_jac), h, jac=HH.field_jac)
        y = ref.points
        approx = y[0] + h * (
            mirk_increment(MIDPOINT, HH.field, y[0], y[1], h)
            + mirk_increment(MIDPOINT, HH.field, y[1], y[2], h)
        )
        diffs.append(np.linalg.norm(composed - approx))
    slope = np.polyfit(np.log(hs), np.log(diffs), 1)[0]
    assert slope >= 2.6
