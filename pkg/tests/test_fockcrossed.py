import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpfock.fockcrossed import (
    BUILTINS,
    CORRESPONDENCE,
    TRANSLATION,
    CcElement,
    CrossedTruncation,
    DynSystem,
    FactorizationError,
    c_word,
    c_word_coefficient,
    cA,
    correspondence_residuals,
    covariance_defect,
    diag_cycle,
    fock_crossed_report,
    gamma0,
    gamma0_contractivity,
    gamma0_monomial,
    gamma0_product_check,
    level_unit,
    levels_below,
    matrix_swap,
    phiA_inf,
    system_from_json,
    system_to_json,
    thetaA,
    translation_residuals,
    twisted_mul,
    uZ,
    v_word_coefficient,
    vA,
    word_norms,
)
from lpfock.fockcuntz import restricted_norm
from lpfock.modules import diagonal_algebra, full_matrix_algebra, nilpotent_algebra

E11 = np.diag([1.0, 0.0]).astype(complex)
E22 = np.diag([0.0, 1.0]).astype(complex)
P_VALUES = [1.5, 2.0, 3.0]
SYSTEMS = st.sampled_from(sorted(BUILTINS))


def system(name, p):
    return BUILTINS[name](p)


def identity_op(tr):
    return phiA_inf(np.eye(tr.m), tr)


# -- dynamical systems --------------------------------------------------------------------------
def test_builtins_are_isometric_permutations():
    for name in BUILTINS:
        s = system(name, 2.5)
        assert s.name == name
        assert s.isometry_method.startswith("exact")
        assert s.hom_residual <= 1e-12


def test_phi_powers_compose():
    s = diag_cycle(3, 1.5)
    a = np.diag([1.0, 2.0, 3.0])
    assert np.array_equal(s.apply(a, 1), np.diag([3.0, 1.0, 2.0]))
    assert np.array_equal(s.apply(s.apply(a, 2), -2), a)
    assert np.array_equal(s.apply(a, 3), a)


def test_rejects_non_homomorphism():
    A = full_matrix_algebra(2, 2.0)
    # transposition is an anti-automorphism
    T = np.zeros((4, 4))
    for i, j in [(0, 0), (1, 2), (2, 1), (3, 3)]:
        T[i, j] = 1
    with pytest.raises(ValueError):
        DynSystem(A, T)


def test_rejects_non_isometric_conjugation():
    with pytest.raises(ValueError):
        DynSystem.from_conjugator(full_matrix_algebra(2, 3.0), np.diag([2.0, 1.0]))


def test_rejects_singular_phi():
    with pytest.raises(ValueError):
        DynSystem(diagonal_algebra(2, 2.0), np.zeros((2, 2)))


def test_conjugator_by_unitary_in_two_norm():
    th = 0.3
    U = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    s = DynSystem.from_conjugator(full_matrix_algebra(2, 2.0), U)
    a = np.arange(4.0).reshape(2, 2)
    assert np.abs(s.apply(a, 1) - U @ a @ U.T).max() <= 1e-12


# -- creation, annihilation and their relations -------------------------------------------------------
def test_phi_inf_examples():
    tr = CrossedTruncation(matrix_swap(2.0), 4)
    assert identity_op(tr).window_residual(tr.block_op({(n, n): np.eye(2) for n in range(5)}, 0, 4)) == 0.0
    M = phiA_inf(E11, tr).dense()
    for n in range(5):
        blk = M[2 * n:2 * n + 2, 2 * n:2 * n + 2]
        assert np.array_equal(blk, E11 if n % 2 == 0 else E22)
    assert not np.any(cA(np.zeros((2, 2)), tr).dense())


@pytest.mark.parametrize("name", sorted(BUILTINS))
@pytest.mark.parametrize("p", P_VALUES)
def test_phi_inf_is_isometric(name, p):
    s = system(name, p)
    tr = CrossedTruncation(s, 3)
    a = s.random_element(np.random.default_rng(1))
    b, n = restricted_norm(phiA_inf(a, tr)), s.norm(a)
    assert max(b.lower, n.lower) <= min(b.upper, n.upper)


@given(SYSTEMS, st.sampled_from(P_VALUES), st.integers(1, 8), st.integers(0, 10**6))
def test_correspondence_relations(name, p, N, seed):
    s = system(name, p)
    rng = np.random.default_rng(seed)
    res = correspondence_residuals(s.random_element(rng), s.random_element(rng), CrossedTruncation(s, N))
    assert set(res) == set(CORRESPONDENCE)
    for key, (r, tol) in res.items():
        assert r <= tol, key


def test_theta_of_identity():
    tr = CrossedTruncation(diag_cycle(3, 2.0), 3)
    assert thetaA(np.eye(3), tr).window_residual(identity_op(tr) - levels_below(1, tr)) == 0.0


# -- translations ------------------------------------------------------------------------------------
def test_translation_examples():
    tr = CrossedTruncation(matrix_swap(1.5), 5)
    one = identity_op(tr)
    assert uZ(0, tr).window_residual(one) == 0.0
    for n in range(1, 5):
        assert (uZ(-n, tr) @ uZ(n, tr)).window_residual(one - levels_below(n, tr)) == 0.0


@pytest.mark.parametrize("name", sorted(BUILTINS))
@pytest.mark.parametrize("N", [1, 4, 8])
def test_translation_identities(name, N):
    s = system(name, 2.0)
    out = translation_residuals(CrossedTruncation(s, N), s.random_element(np.random.default_rng(N)))
    assert set(out) == set(TRANSLATION)
    for key, v in out.items():
        assert v["residual"] <= v["tolerance"], key
    assert out[TRANSLATION[3]]["instances"] > 0


def _mixed_lhs_and_target(n, m, tr):
    return uZ(n, tr) @ uZ(m, tr), uZ(n + m, tr)


def test_mixed_translation_corrections_are_sharp():
    tr = CrossedTruncation(diag_cycle(3, 2.0), 6)
    # n < 0 <= m with n + m >= 0
    n, m = -2, 3
    lhs, target = _mixed_lhs_and_target(n, m, tr)
    exact = tr.zero()
    for j in range(-n):
        exact = exact + level_unit(j, j + n + m, tr)
    assert lhs.window_residual(target - exact) == 0.0
    longer = exact + level_unit(-n, -n + n + m, tr)
    assert lhs.window_residual(target - longer) == 1.0
    # n < 0 <= m with n + m < 0
    n, m = -3, 2
    lhs, target = _mixed_lhs_and_target(n, m, tr)
    exact = tr.zero()
    for j in range(m):
        exact = exact + level_unit(j - n - m, j, tr)
    assert lhs.window_residual(target - exact) == 0.0
    longer = exact + level_unit(m - n - m, m, tr)
    assert lhs.window_residual(target - longer) == 1.0


# -- covariance certificates ----------------------------------------------------------------------------
def test_covariance_examples():
    tr = CrossedTruncation(matrix_swap(3.0), 5)
    c = covariance_defect(1, np.eye(2), tr)
    assert c.window_residual(levels_below(1, tr)) == 0.0
    a = np.array([[1.0, 2.0], [3.0, 5.0]])
    c2 = covariance_defect(2, a, tr)
    assert np.linalg.matrix_rank(c2.dense()) == 4
    expected = tr.block_op({(0, 0): tr.system.apply(a, -2), (1, 1): tr.system.apply(a, -1)}, 0, 5)
    assert c2.window_residual(expected) == 0.0
    assert not np.any(covariance_defect(3, np.zeros((2, 2)), tr).dense())
    with pytest.raises(ValueError):
        covariance_defect(0, a, tr)


# -- word norms ----------------------------------------------------------------------------------------
def test_word_coefficients():
    s = matrix_swap(2.0)
    a1, a2 = np.array([[1, 2], [0, 1.0]]), np.array([[0, 1], [1, 3.0]])
    assert np.array_equal(c_word_coefficient([a1, a2], s), s.apply(a1, 1) @ a2)
    assert np.array_equal(v_word_coefficient([a1, a2], s), a1 @ s.apply(a2, 1))


def test_word_norm_examples():
    s = matrix_swap(2.5)
    tr = CrossedTruncation(s, 4)
    a = np.array([[1.0, 2.0], [0.5, -1.0]])
    (single,) = word_norms([a], [], tr)
    assert single.passed
    zero = word_norms([E11, E11], [], tr)[0]
    assert zero.passed and zero.truncated.upper == 0.0 and zero.closed_form.upper == 0.0
    for w in word_norms([np.eye(2)] * 2, [np.eye(2)] * 2, tr):
        assert w.passed and w.truncated.lower <= 1.0 <= w.truncated.upper


def test_word_norm_rejects_long_words():
    tr = CrossedTruncation(diag_cycle(3, 2.0), 2)
    with pytest.raises(ValueError):
        word_norms([np.eye(3)] * 3, [], tr)


def test_c_word_collapses_to_coefficient():
    s = diag_cycle(3, 1.5)
    tr = CrossedTruncation(s, 5)
    rng = np.random.default_rng(2)
    a_list = [s.random_element(rng) for _ in range(3)]
    W = c_word(a_list, tr)
    C = c_word_coefficient(a_list, s)
    # lowest block: level 0 to level 3
    assert np.abs(W.dense()[9:12, 0:3] - C).max() <= 1e-12


# -- twisted convolution and gamma0 ---------------------------------------------------------------------
def test_twisted_mul_examples():
    s = matrix_swap(2.0)
    a, b = np.array([[1, 2], [3, 4.0]]), np.array([[0, 1], [5, 2.0]])
    pb = s.apply(b, 1)
    assert twisted_mul(CcElement({0: a}), CcElement({0: b}), s) == CcElement({0: a @ b})
    assert twisted_mul(CcElement({1: a}), CcElement({1: b}), s) == CcElement({2: a @ pb})
    assert twisted_mul(CcElement({-1: a}), CcElement({1: b}), s) == CcElement({0: a @ s.apply(b, -1)})


def test_cc_element_algebra():
    f = CcElement({0: np.eye(2), 1: np.zeros((2, 2))})
    assert f.support == (0,)
    g = f + (-1) * f
    assert g.support == ()
    assert (2 * f).allclose(f + f)


@given(SYSTEMS, st.integers(0, 10**6))
def test_twisted_mul_is_associative(name, seed):
    s = system(name, 2.0)
    rng = np.random.default_rng(seed)
    f, g, h = (CcElement.random(s, rng) for _ in range(3))
    left = twisted_mul(twisted_mul(f, g, s), h, s)
    right = twisted_mul(f, twisted_mul(g, h, s), s)
    assert left.allclose(right, atol=1e-10)


def test_gamma0_unit():
    tr = CrossedTruncation(diag_cycle(3, 2.0), 4)
    assert gamma0(CcElement({0: np.eye(3)}), tr).window_residual(identity_op(tr)) == 0.0


def test_gamma0_generators():
    s = matrix_swap(1.5)
    tr = CrossedTruncation(s, 4)
    a = np.array([[1.0, -1.0], [2.0, 0.5]])
    assert gamma0_monomial(a, 1, tr).window_residual(vA(a, tr)) == 0.0
    assert gamma0_monomial(a, -1, tr).window_residual(cA(s.apply(a, 1), tr)) == 0.0


def test_gamma0_positive_square():
    s = matrix_swap(2.0)
    tr = CrossedTruncation(s, 5)
    rng = np.random.default_rng(4)
    a, b = s.random_element(rng), s.random_element(rng)
    f, g = CcElement({1: a}), CcElement({1: b})
    lhs = gamma0(f, tr) @ gamma0(g, tr)
    rhs = gamma0(twisted_mul(f, g, s), tr)
    assert lhs.window_residual(rhs) <= lhs.window_tolerance(rhs)


@pytest.mark.parametrize("n", [-3, -2, 2, 3])
def test_gamma0_independent_of_factorization(n):
    s = matrix_swap(3.0)
    tr = CrossedTruncation(s, 6)
    rng = np.random.default_rng(abs(n) + (n > 0))
    a = s.random_element(rng)
    sign = -1 if n < 0 else 1
    factors = [None] + [s.random_element(rng) for _ in range(abs(n) - 1)]
    tail = np.eye(2, dtype=complex)
    for i, f in enumerate(factors[1:], start=1):
        tail = tail @ s.apply(f, sign * i)
    factors[0] = a @ np.linalg.inv(tail)
    default = gamma0_monomial(a, n, tr)
    custom = gamma0_monomial(a, n, tr, factors)
    assert default.window_residual(custom) <= 1e-10 * (1 + np.abs(default.dense()).max())
    with pytest.raises(FactorizationError):
        gamma0_monomial(a, n, tr, [np.eye(2)] * abs(n))


@given(SYSTEMS, st.sampled_from(P_VALUES), st.integers(0, 10**6))
def test_gamma0_multiplicative_up_to_defect(name, p, seed):
    s = system(name, p)
    tr = CrossedTruncation(s, 6)
    rng = np.random.default_rng(seed)
    chk = gamma0_product_check(CcElement.random(s, rng), CcElement.random(s, rng), tr)
    assert chk.passed, chk


def test_gamma0_defect_is_finite_rank_and_needed():
    s = diag_cycle(3, 2.0)
    tr = CrossedTruncation(s, 6)
    f, g = CcElement({-1: np.eye(3)}), CcElement({1: np.eye(3)})
    chk = gamma0_product_check(f, g, tr)
    assert chk.passed
    assert chk.raw_residual == 1.0
    assert chk.defect_rank == 3


@given(SYSTEMS, st.sampled_from(P_VALUES), st.integers(0, 10**6))
def test_gamma0_contractive(name, p, seed):
    s = system(name, p)
    rng = np.random.default_rng(seed)
    out = gamma0_contractivity(CcElement.random(s, rng), CrossedTruncation(s, 4), restarts=4)
    assert out["pass"] and out["lower"] <= out["l1_bound"] + 1e-9


def test_non_unital_algebra_needs_factorizer():
    s = DynSystem.from_permutation(nilpotent_algebra(2.0), [0, 1])
    tr = CrossedTruncation(s, 3)
    E12 = np.array([[0, 1.0], [0, 0]])
    assert gamma0_monomial(E12, 0, tr).window_residual(phiA_inf(E12, tr)) == 0.0
    with pytest.raises(FactorizationError):
        gamma0_monomial(E12, -1, tr)


# -- serialization and reports ----------------------------------------------------------------------------
@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_system_json_round_trip(name):
    s = system(name, 1.5)
    alg, phi = system_to_json(s)
    back = system_from_json(json.loads(json.dumps(alg)), json.loads(json.dumps(phi)), 1.5)
    a = s.random_element(np.random.default_rng(0))
    assert np.array_equal(back.apply(a, 1), s.apply(a, 1))
    assert back.name == name


def test_packaged_system_files():
    data = resources.files("lpfock") / "data"
    alg = json.loads((data / "m2_algebra.json").read_text())
    phi = json.loads((data / "m2_swap.json").read_text())
    s = system_from_json(alg, phi, 2.0)
    assert np.array_equal(s.apply(E11, 1), E22)


def test_report_passes():
    rep = fock_crossed_report(diag_cycle(3, 2.0), 3, seed=0, samples=1)
    assert rep["pass"]
    assert set(rep["relations"]) == set(CORRESPONDENCE)
    with pytest.raises(ValueError):
        fock_crossed_report(diag_cycle(3, 2.0), 2)


@pytest.mark.parametrize("seed", range(4))
def test_report_at_minimum_depth(seed):
    rep = fock_crossed_report(matrix_swap(1.5), 3, seed=seed, samples=3)
    assert rep["pass"]
    assert all(max(map(abs, f + g)) <= 1 for f, g in (c["support"] for c in rep["gamma0"]))
