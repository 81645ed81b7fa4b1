import numpy as np
import pytest

from miikit.tableau import (
    MirkTableau,
    Tableau,
    alpha,
    builtin_tableaus,
    check_order_conditions,
    check_properties,
    check_symmetric,
    check_symplectic,
    get_mirk,
    get_tableau,
    mirk_to_rk,
    symplectic_mirk_family,
    tableau_from_json,
    tableau_to_json,
    try_mirk_decompose,
)

CATALOG = builtin_tableaus()

# (symbolic order capped at 4, symmetric, symplectic, inverse explicit, explicit)
EXPECTED_PROPERTIES = {
    "explicit_euler": (1, False, False, True, True),
    "implicit_euler": (1, False, False, True, False),
    "rk4": (4, False, False, True, True),
    "midpoint": (2, True, True, True, False),
    "mirk3": (3, False, False, True, False),
    "mirk4": (4, True, False, True, False),
    "mirk5": (4, False, False, True, False),
    "mirk6": (4, True, False, True, False),
    "gl4": (4, True, True, False, False),
    "gl6": (4, True, True, False, False),
}


def brute_force_symplectic_residual(A, b):
    s = len(b)
    M = np.zeros((s, s))
    for i in range(s):
        for j in range(s):
            M[i, j] = b[i] * A[i, j] + b[j] * A[j, i] - b[i] * b[j]
    return M


def test_catalog_contains_all_methods():
    assert set(CATALOG) == set(EXPECTED_PROPERTIES)


def test_mirk4_coefficients():
    m = get_mirk("mirk4")
    assert m.s == 3
    np.testing.assert_allclose(m.c, [0.0, 1.0, 0.5])
    np.testing.assert_allclose(m.v, [0.0, 1.0, 0.5])
    np.testing.assert_allclose(m.D[2], [1 / 8, -1 / 8, 0.0])
    np.testing.assert_allclose(m.b, [1 / 6, 1 / 6, 2 / 3])


def test_midpoint_tableau():
    t = mirk_to_rk(get_mirk("midpoint"))
    np.testing.assert_allclose(t.A, [[0.5]])
    np.testing.assert_allclose(t.b, [1.0])
    np.testing.assert_allclose(t.c, [0.5])


def test_gl4_coefficients():
    t = get_tableau("gl4")
    np.testing.assert_allclose(t.b, [0.5, 0.5])
    assert t.A[0, 0] == pytest.approx(0.25)


def test_mirk_to_rk_zero_weights():
    m = MirkTableau("z", b=[0.0, 0.0], v=[0.3, 0.7], D=[[0, 0], [0.5, 0]], c=[0, 0.5])
    np.testing.assert_allclose(mirk_to_rk(m).A, m.D)


def test_mirk_to_rk_mirk4_third_row():
    A = mirk_to_rk(get_mirk("mirk4")).A
    # hand product of D + v b^T
    np.testing.assert_allclose(A[2], [1 / 8 + 1 / 12, -1 / 8 + 1 / 12, 1 / 3])


def test_mirk_to_rk_is_consistent_for_catalog():
    for name, t in CATALOG.items():
        rk = mirk_to_rk(t) if isinstance(t, MirkTableau) else t
        assert rk.is_consistent, name


def test_strictly_lower_triangular_enforced():
    with pytest.raises(ValueError):
        MirkTableau("bad", b=[1.0], v=[0.5], D=[[0.25]], c=[0.5])


def test_order_conditions_examples():
    assert check_order_conditions(get_tableau("rk4")).order == 4
    assert check_order_conditions(get_tableau("explicit_euler")).order == 1
    assert check_order_conditions(get_tableau("mirk4")).order == 4


def test_order_conditions_p_max_cap():
    assert check_order_conditions(get_tableau("rk4"), p_max=2).order == 2
    with pytest.raises(ValueError):
        check_order_conditions(get_tableau("rk4"), p_max=5)


def test_symplectic_examples():
    assert check_symplectic(get_tableau("midpoint")).max_abs == 0.0
    assert check_symplectic(get_tableau("rk4")).max_abs > 0.1
    assert check_symplectic(get_tableau("gl6")).max_abs <= 1e-15


def test_symplectic_residual_matches_brute_force():
    for name in ("rk4", "mirk4", "gl6"):
        rk = mirk_to_rk(CATALOG[name]) if isinstance(CATALOG[name], MirkTableau) else CATALOG[name]
        expected = brute_force_symplectic_residual(rk.A, rk.b)
        np.testing.assert_allclose(check_symplectic(rk).residual, expected, atol=1e-15)


def test_symmetric_examples():
    res = check_symmetric(get_tableau("midpoint"))
    assert res.coupling_residual == 0.0 and res.weight_residual == 0.0
    res = check_symmetric(get_tableau("mirk4"))
    assert res.coupling_residual <= 1e-15 and res.weight_residual <= 1e-15
    assert not check_symmetric(get_tableau("mirk3")).is_symmetric


def test_alpha_examples():
    assert alpha(get_mirk("rk4")) == pytest.approx(1.0)  # explicit: v = 0
    assert alpha(get_mirk("mirk4")) == pytest.approx(0.0, abs=1e-15)
    assert alpha(get_mirk("midpoint")) == pytest.approx(0.0, abs=1e-15)


def test_alpha_linearity_for_embedded_explicit():
    rng = np.random.default_rng(42)
    for _ in range(5):
        b = rng.normal(size=4)
        m = MirkTableau("emb", b=b, v=np.zeros(4), D=np.zeros((4, 4)), c=np.zeros(4))
        assert alpha(m) == pytest.approx(b.sum())


def test_symplectic_family_midpoint():
    t = symplectic_mirk_family([1.0])
    np.testing.assert_allclose(t.A, [[0.5]])
    np.testing.assert_allclose(t.b, [1.0])


def test_symplectic_family_two_stage():
    t = symplectic_mirk_family([0.5, 0.5])
    rep = check_order_conditions(t)
    assert rep.order == 2
    assert rep.values["b_c2"] == pytest.approx(0.25, abs=1e-12)


def test_symplectic_family_random_weights():
    rng = np.random.default_rng(123)
    for _ in range(20):
        b = rng.normal(size=rng.integers(1, 6))
        b = b / b.sum()
        t = symplectic_mirk_family(b)
        assert check_symplectic(t).max_abs <= 1e-12
        assert check_order_conditions(t).order == 2


def test_symplectic_family_rejects_bad_weights():
    with pytest.raises(ValueError):
        symplectic_mirk_family([0.5, 0.6])


@pytest.mark.parametrize("name", sorted(EXPECTED_PROPERTIES))
def test_table_of_properties_reproduced(name):
    order, symm, sympl, inv_explicit, explicit = EXPECTED_PROPERTIES[name]
    rep = check_properties(CATALOG[name])
    assert rep.order_verified == order
    assert rep.is_symmetric == symm
    assert rep.is_symplectic == sympl
    assert rep.inverse_explicit == inv_explicit
    assert rep.explicit == explicit


def test_gl_methods_have_no_mirk_form():
    assert try_mirk_decompose(get_tableau("gl4")) is None
    assert try_mirk_decompose(get_tableau("gl6")) is None


def test_mirk_decompose_recovers_structure():
    rk = mirk_to_rk(get_mirk("mirk4"))
    m = try_mirk_decompose(rk)
    assert m is not None
    np.testing.assert_allclose(mirk_to_rk(m).A[np.argsort(m.c), :][:, np.argsort(m.c)],
                               rk.A[np.argsort(rk.c), :][:, np.argsort(rk.c)], atol=1e-12)


def test_mirk_to_rk_deterministic_and_shape_preserving():
    m = get_mirk("mirk6")
    t1, t2 = mirk_to_rk(m), mirk_to_rk(m)
    assert t1.A.shape == (m.s, m.s)
    np.testing.assert_array_equal(t1.A, t2.A)


def test_json_round_trip():
    for name in ("mirk4", "gl6"):
        t = CATALOG[name]
        back = tableau_from_json(tableau_to_json(t), name=name)
        assert type(back) is type(t)
        rk_a, rk_b = (mirk_to_rk(t) if isinstance(t, MirkTableau) else t), (
            mirk_to_rk(back) if isinstance(back, MirkTableau) else back
        )
        np.testing.assert_allclose(rk_a.A, rk_b.A, atol=1e-15)


def test_tableau_dimension_validation():
    with pytest.raises(ValueError):
        Tableau("bad", A=np.zeros((2, 2)), b=[1.0], c=[0.0])
