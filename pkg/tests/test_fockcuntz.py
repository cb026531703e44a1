import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpfock.fockcuntz import (
    REL1,
    REL2,
    REL3,
    CertificateError,
    FockIndex,
    annihilation,
    creation,
    fock_cuntz_report,
    identity,
    leavitt_check,
    leavitt_residuals,
    level_projector,
    phi_inf,
    restricted_norm,
    standard_generators,
    support_partition,
    support_sets,
    theta_iota,
    theta_lift,
    word_eval,
)
from lpfock.lpcore import norm_bracket, vec_pnorm
from lpfock.measure import SPATIAL, check_spatial_algebraic, is_multiplication_idempotent
from tests.strategies import cgauss

P_VALUES = st.sampled_from([1.0, 1.5, 2.0, 3.0])


# -- indexing --------------------------------------------------------------------------
@given(st.integers(1, 4), st.integers(0, 5))
def test_flat_index_round_trip(d, N):
    idx = FockIndex(d, N)
    assert idx.dim == sum(d ** n for n in range(N + 1))
    for k in range(idx.dim):
        n, s = idx.level_slot(k)
        assert idx.flat(n, s) == k
        assert idx.levels[k] == n


def test_flat_index_rejects_out_of_range():
    idx = FockIndex(2, 2)
    with pytest.raises(IndexError):
        idx.flat(3, 1)
    with pytest.raises(IndexError):
        idx.flat(1, 3)


# -- creation and annihilation -------------------------------------------------------------
def test_creation_example():
    idx = FockIndex(2, 2)
    M = creation([1, 0], idx).dense()
    expected = np.zeros((7, 7))
    for src, dst in [((0, 1), (1, 1)), ((1, 1), (2, 1)), ((1, 2), (2, 2))]:
        expected[idx.flat(*dst), idx.flat(*src)] = 1
    assert np.array_equal(M, expected)


def test_creation_of_zero():
    assert not np.any(creation([0, 0, 0], FockIndex(3, 2)).dense())


def test_creation_rejects_bad_length():
    with pytest.raises(ValueError):
        creation([1, 0, 0], FockIndex(2, 2))
    with pytest.raises(ValueError):
        creation([1, 0], FockIndex(2, 0))


def test_annihilation_examples():
    idx = FockIndex(2, 3)
    one = identity(idx)
    c1 = creation([1, 0], idx)
    v1, v2 = annihilation([1, 0], idx), annihilation([0, 1], idx)
    assert (v1 @ c1).window_residual(one) == 0.0
    assert (v1 @ c1).window == idx.N - 1
    assert (v2 @ c1).window_residual(0 * one) == 0.0
    b = norm_bracket(annihilation([1, 1], idx, 2.0).op)
    assert b.lower <= np.sqrt(2) <= b.upper and b.width <= 1e-11


def test_phi_inf_examples():
    idx = FockIndex(3, 2)
    assert identity(idx).window_residual(phi_inf(1, idx)) == 0.0
    b = norm_bracket(phi_inf(1j, idx, 2.5).op)
    assert b.lower <= 1.0 <= b.upper


@given(st.integers(0, 10**6), P_VALUES, st.integers(2, 3))
def test_annihilation_after_creation_is_pairing(seed, p, d):
    rng = np.random.default_rng(seed)
    idx = FockIndex(d, 3)
    x, y = cgauss(rng, d), cgauss(rng, d)
    lhs = annihilation(y, idx, p) @ creation(x, idx, p)
    rhs = phi_inf(np.dot(y, x), idx, p)
    assert lhs.window_residual(rhs) <= lhs.window_tolerance(rhs)


# -- Theta ---------------------------------------------------------------------------------
def test_theta_of_identity_kills_vacuum():
    idx = FockIndex(3, 2)
    lifted = theta_lift(np.eye(3), idx)
    assert lifted.window_residual(identity(idx) - theta_iota(idx)) == 0.0
    assert not np.any(theta_lift(np.zeros((3, 3)), idx).dense())


@given(st.integers(0, 10**6), P_VALUES, st.integers(2, 3))
def test_theta_is_multiplicative(seed, p, d):
    rng = np.random.default_rng(seed)
    idx = FockIndex(d, 3)
    k1, k2 = cgauss(rng, d, d), cgauss(rng, d, d)
    lhs = theta_lift(k1, idx, p) @ theta_lift(k2, idx, p)
    rhs = theta_lift(k1 @ k2, idx, p)
    assert lhs.window_residual(rhs) <= lhs.window_tolerance(rhs)


@given(st.integers(0, 10**6), P_VALUES, st.integers(2, 3))
def test_theta_of_rank_one_is_creation_annihilation(seed, p, d):
    rng = np.random.default_rng(seed)
    idx = FockIndex(d, 3)
    x, y = cgauss(rng, d), cgauss(rng, d)
    lhs = creation(x, idx, p) @ annihilation(y, idx, p)
    rhs = theta_lift(np.outer(x, y), idx, p)
    assert lhs.window_residual(rhs) <= lhs.window_tolerance(rhs)


# -- Leavitt relations -----------------------------------------------------------------------
@pytest.mark.parametrize("d,N", [(2, 3), (3, 2), (4, 4)])
def test_leavitt_relations_exact(d, N):
    rep = leavitt_check(FockIndex(d, N), 2.5)
    assert rep.passed
    assert rep.residuals == {REL1: 0.0, REL2: 0.0, REL3: 0.0}
    assert rep.defect_rank == 1


def test_leavitt_perturbation_is_detected():
    idx = FockIndex(2, 3)
    cs, vs = standard_generators(idx)
    cs[0] = cs[0] + 1e-3 * identity(idx)
    res, _ = leavitt_residuals(cs, vs, idx)
    assert res[REL1] == pytest.approx(1e-3, rel=1e-9)


# -- support partitions ------------------------------------------------------------------------
def test_support_examples():
    idx = FockIndex(2, 2)
    assert support_partition(1, idx) == {1: frozenset({1}), 2: frozenset({1, 2})}
    assert support_partition(2, idx) == {1: frozenset({2}), 2: frozenset({3, 4})}
    with pytest.raises(ValueError):
        support_sets(3, idx)


@pytest.mark.parametrize("d,N", [(2, 4), (3, 3), (4, 2)])
def test_supports_partition_positive_levels(d, N):
    idx = FockIndex(d, N)
    sets = [support_partition(j, idx) for j in range(1, d + 1)]
    for n in range(1, N + 1):
        level = [s[n] for s in sets]
        assert sum(len(s) for s in level) == d ** n
        assert frozenset().union(*level) == frozenset(range(1, d ** n + 1))


def test_support_certificate_raises_on_mismatch(monkeypatch):
    import lpfock.fockcuntz as fc

    monkeypatch.setattr(fc, "support_sets", lambda j, idx: {1: frozenset({1})})
    with pytest.raises(CertificateError):
        fc.support_partition(1, FockIndex(2, 2))


# -- spatial structure -----------------------------------------------------------------------------
@pytest.mark.parametrize("p", [1.5, 3.0])
def test_generators_are_spatial(p):
    idx = FockIndex(2, 3)
    for j in (1, 2):
        e = np.eye(2)[j - 1]
        s, t = creation(e, idx, p).op, annihilation(e, idx, p).op
        c = check_spatial_algebraic(s, t)
        assert c.verdict == SPATIAL
        _, e_w, f_w = c.witness
        below_top = {lab for lab in idx.labels if lab[0] < idx.N}
        assert is_multiplication_idempotent(e_w) == frozenset(below_top)
        wanted = {(n, s_) for n, slots in support_sets(j, idx).items() for s_ in slots}
        assert is_multiplication_idempotent(f_w) == frozenset(wanted)


def test_perturbed_generators_are_not_spatial():
    idx = FockIndex(2, 3)
    s = (creation([1, 0], idx, 1.5) + 1e-3 * creation([0, 1], idx, 1.5)).op
    t = annihilation([1, 0], idx, 1.5).op
    assert not check_spatial_algebraic(s, t).passed


# -- norms ------------------------------------------------------------------------------------------
@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 2.5, 3.0])
def test_creation_annihilation_norms(p):
    rng = np.random.default_rng(int(10 * p))
    idx = FockIndex(3, 3)
    for _ in range(3):
        x, y = cgauss(rng, 3), cgauss(rng, 3)
        bc = norm_bracket(creation(x, idx, p).op)
        bv = norm_bracket(annihilation(y, idx, p).op)
        assert bc.lower <= vec_pnorm(x, p) * (1 + 1e-12) and vec_pnorm(x, p) <= bc.upper * (1 + 1e-12)
        q = idx.space(p).q
        assert bv.lower <= vec_pnorm(y, q) * (1 + 1e-12) and vec_pnorm(y, q) <= bv.upper * (1 + 1e-12)
        assert bc.width <= 1e-3 and bv.width <= 1e-3


def test_restricted_norm_of_projection():
    idx = FockIndex(2, 2)
    b = restricted_norm(level_projector([1], idx, 3.0))
    assert b.lower <= 1.0 <= b.upper


# -- words -----------------------------------------------------------------------------------------
def test_word_examples():
    idx = FockIndex(2, 3)
    one = identity(idx)
    assert word_eval(["v1", "c1"], idx).window_residual(one) == 0.0
    assert word_eval([("c", 1), ("v", 1), ("c", 1)], idx).window_residual(creation([1, 0], idx)) == 0.0
    assert word_eval([], idx).window_residual(one) == 0.0


def test_word_rejects_empty_window_and_bad_letters():
    idx = FockIndex(2, 2)
    with pytest.raises(ValueError):
        word_eval(["c1", "c1", "c1"], idx)
    with pytest.raises(ValueError):
        word_eval(["x1"], idx)
    with pytest.raises(ValueError):
        word_eval(["c3"], idx)


# -- report -------------------------------------------------------------------------------------------
def test_report_passes():
    rep = fock_cuntz_report(3, 3, 1.5, seed=1, samples=2)
    assert rep["pass"]
    assert set(rep["partitions"]) == {"1", "2", "3"}
    assert len(rep["norms"]) == 4
