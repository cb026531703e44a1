import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from lpfock.lpcore import (
    INF,
    AscentError,
    LinOp,
    LpSpace,
    LpVector,
    MeasureSpace,
    NormBracket,
    PExponent,
    holder_conjugate,
    kron,
    linop_from_json,
    linop_to_json,
    matrix_from_json,
    matrix_to_json,
    measure_from_json,
    measure_to_json,
    norm_bracket,
    opnorm_bracket,
    opnorm_certified,
    opnorm_lower,
    power_ascent,
    vec_pnorm,
)
from lpfock.lpcore.norms import _start_vectors
from tests.strategies import cgauss, complex_matrices, exponents, vectors


# -- oracles ---------------------------------------------------------------
def sphere_grid_norm(M, p, steps=721):
    """Brute-force lower estimate of a 2-column norm on a grid of the unit sphere.

    Real matrices: x = (cos t, sin t).  Complex matrices: x = (1, z) and (z, 1)
    with z on a polar grid of the closed unit disc.
    """
    M = np.asarray(M)
    if not np.any(np.iscomplex(M)):
        t = np.linspace(0, np.pi, steps)
        X = np.stack([np.cos(t), np.sin(t)])
    else:
        r = np.linspace(0, 1, 121)
        a = np.linspace(0, 2 * np.pi, 241)
        z = (r[:, None] * np.exp(1j * a[None, :])).ravel()
        ones = np.ones_like(z)
        X = np.concatenate([np.stack([ones, z]), np.stack([z, ones])], axis=1)
    num = np.sum(np.abs(M @ X) ** p, axis=0) ** (1 / p)
    den = np.sum(np.abs(X) ** p, axis=0) ** (1 / p)
    return float((num / den).max())


# -- exponents -------------------------------------------------------------
def test_holder_conjugate_examples():
    assert holder_conjugate(2) == 2
    assert holder_conjugate(1) == INF and math.isinf(holder_conjugate(1))
    assert holder_conjugate(4) == pytest.approx(4 / 3, abs=0)
    with pytest.raises(ValueError):
        holder_conjugate(0.5)


@given(st.floats(1.0, 50.0))
def test_holder_identity(p):
    q = PExponent(p).q
    assert 1 / p + (0.0 if math.isinf(q) else 1 / q) == pytest.approx(1.0, abs=1e-12)
    assert (p == 1.0) == math.isinf(q)


# -- vectors ---------------------------------------------------------------
def test_vec_pnorm_examples():
    for p in (1, 1.5, 2, 3, INF):
        assert vec_pnorm(np.array([1.0, 0, 0]), p) == 1.0
    assert vec_pnorm(np.array([1.0, 1.0]), 2) == pytest.approx(math.sqrt(2), abs=1e-15)
    two = MeasureSpace(("a", "b"), [2.0, 2.0])
    assert vec_pnorm(LpVector(two, [1, 1]), 1) == 4.0
    assert vec_pnorm(LpVector(two, [1, -3]), INF) == 3.0


@given(vectors(4), vectors(3), exponents)
def test_tensor_vector_norm_multiplicative(x, y, p):
    lhs = vec_pnorm(np.kron(x, y), p)
    assert lhs == pytest.approx(vec_pnorm(x, p) * vec_pnorm(y, p), rel=1e-12)


def test_measure_space_validation():
    with pytest.raises(ValueError):
        MeasureSpace((1, 1), [1, 1])
    with pytest.raises(ValueError):
        MeasureSpace((1, 2), [1, 0])
    s = MeasureSpace.counting(3)
    assert s.labels == (1, 2, 3) and s.is_counting


def test_linop_shape_and_composition_checks():
    A = LinOp.from_array(np.ones((2, 3)))
    with pytest.raises(ValueError):
        LinOp(A.source, A.target, np.ones((3, 3)))
    with pytest.raises(ValueError):
        A @ A
    B = LinOp.from_array(np.ones((3, 2)))
    assert (A @ B).shape == (2, 2)
    other_p = LinOp.from_array(np.ones((3, 2)), 3.0)
    with pytest.raises(ValueError):
        A @ other_p


# -- lower bounds ----------------------------------------------------------
def test_opnorm_lower_examples():
    for p in (1.0, 1.5, 2.0, 3.0):
        assert opnorm_lower(LinOp.identity(LpSpace.counting(3, p))) == 1.0
    assert opnorm_lower(LinOp.from_array(np.diag([3.0, 1.0]), 1.5)) == pytest.approx(3.0, abs=1e-12)
    # oracle: largest singular value
    ones = np.ones((2, 2))
    assert opnorm_lower(LinOp.from_array(ones, 2.0)) == pytest.approx(np.linalg.norm(ones, 2), rel=1e-12)


def test_diag_lower_matches_sphere_grid():
    M = np.diag([3.0, 1.0])
    assert sphere_grid_norm(M, 1.5) == pytest.approx(3.0, abs=1e-12)


@given(complex_matrices(4), exponents, st.integers(0, 1000))
def test_ascent_objective_never_decreases(M, p, seed):
    starts = _start_vectors(M.shape[1], 4, seed)
    _, _, hist = power_ascent(M, p, starts, trace=True)
    for prev, new in zip(hist, hist[1:]):
        # history rows cover only the columns still active, so compare the maxima
        assert new.max() >= prev[: new.size].min() * (1 - 1e-10) or new.size < prev.size


@given(complex_matrices(4), exponents, st.integers(0, 1000))
def test_ascent_per_column_monotone(M, p, seed):
    starts = _start_vectors(M.shape[1], 3, seed)
    f0 = np.sum(np.abs(M @ (starts / np.sum(np.abs(starts) ** p, axis=0) ** (1 / p))) ** p, axis=0) ** (1 / p)
    f, _, _ = power_ascent(M, p, starts)
    assert np.all(f >= f0 * (1 - 1e-10))


@given(complex_matrices(3), exponents, st.integers(0, 50))
def test_lower_monotone_in_restarts(M, p, seed):
    T = LinOp.from_array(M, p)
    assert opnorm_lower(T, restarts=8, seed=seed) >= opnorm_lower(T, restarts=2, seed=seed)


def test_lower_is_deterministic(rng):
    T = LinOp.from_array(cgauss(rng, 4, 4), 2.5)
    assert opnorm_lower(T, seed=3) == opnorm_lower(T, seed=3)


def test_ascent_error_is_raised_on_decrease(monkeypatch):
    import lpfock.lpcore.norms as nm

    monkeypatch.setattr(nm, "_duality", lambda V, p: np.tile([[0j], [1.0]], V.shape[1]))
    with pytest.raises(AscentError):
        nm.power_ascent(np.array([[2.0, 0.0], [0.0, 1.0]]), 3.0, np.array([[1.0], [0.0]]))


# -- brackets ----------------------------------------------------------------
def test_bracket_invariants():
    with pytest.raises(ValueError):
        NormBracket(2.0, 1.0)
    with pytest.raises(ValueError):
        NormBracket(-1.0, 1.0)
    with pytest.raises(ValueError):
        NormBracket(0.0, math.inf)


def test_bracket_identity():
    for res in (1, 8, 64):
        b = opnorm_bracket(LinOp.identity(LpSpace.counting(3, 2.5)), res)
        assert b.lower <= 1.0 <= b.upper
        assert b.lower == pytest.approx(1.0, abs=1e-13)


def test_p1_bracket_contains_column_sum(rng):
    M = cgauss(rng, 3, 3)
    T = LinOp.from_array(M, 1.0)
    exact = np.abs(M).sum(axis=0).max()
    b = opnorm_bracket(T, 64)
    assert b.lower <= exact <= b.upper
    c = opnorm_certified(T, cap=6)
    assert c.method == "exact:p=1"
    assert c.lower <= exact <= c.upper and c.width <= 1e-10 * exact


def test_bracket_random_3x3_resolution_64():
    rng = np.random.default_rng(7)
    for _ in range(3):
        b = opnorm_bracket(LinOp.from_array(rng.standard_normal((3, 3)), 2.5), 64)
        assert b.width < 0.05


def test_bracket_shrinks_with_resolution():
    M = np.random.default_rng(11).standard_normal((3, 3))
    T = LinOp.from_array(M, 2.5)
    widths = [opnorm_bracket(T, r, max_boxes=10**7).width for r in (2, 8, 64)]
    assert widths[0] >= widths[1] >= widths[2]


def test_bracket_cap():
    with pytest.raises(ValueError):
        opnorm_bracket(LinOp.from_array(np.eye(7)), 8)


@given(complex_matrices(2, min_side=2, real=True), st.sampled_from([1.5, 2.5, 3.0]))
def test_bracket_against_sphere_grid_real(M, p):
    b = opnorm_bracket(LinOp.from_array(M, p), 256)
    brute = sphere_grid_norm(M, p)
    assert brute <= b.upper
    assert b.lower <= brute + 1e-4 * max(1.0, brute)


def test_bracket_against_sphere_grid_complex(rng):
    for p in (1.5, 3.0):
        M = cgauss(rng, 2, 2)
        b = opnorm_certified(LinOp.from_array(M, p))
        brute = sphere_grid_norm(M, p)
        assert brute <= b.upper
        assert b.lower <= brute + 1e-3 * brute


@given(complex_matrices(5), st.sampled_from([1.0, 2.0]))
def test_closed_forms_inside_brackets(M, p):
    b = norm_bracket(LinOp.from_array(M, p))
    exact = np.abs(M).sum(axis=0).max() if p == 1.0 else np.linalg.norm(M, 2)
    assert b.lower <= exact <= b.upper


@given(vectors(5), exponents)
def test_diagonal_closed_form_inside_bracket(d, p):
    b = norm_bracket(LinOp.from_array(np.diag(d), p))
    assert b.lower <= np.abs(d).max() <= b.upper


@given(complex_matrices(5), exponents, st.integers(0, 100))
def test_lower_never_exceeds_upper(M, p, seed):
    T = LinOp.from_array(M, p)
    b = norm_bracket(T)
    assert b.lower <= b.upper
    assert opnorm_lower(T, restarts=4, seed=seed) <= b.upper


def test_weighted_norm_uses_weights():
    src = LpSpace(MeasureSpace((1, 2), [4.0, 1.0]), PExponent(2.0))
    T = LinOp(src, src, np.diag([1.0, 1.0]))
    b = norm_bracket(T)
    assert b.lower <= 1.0 <= b.upper
    # weighted shift: e_1 -> e_2 scales norms by (1/4)^(1/p)
    S = LinOp(src, src, np.array([[0, 0], [1, 0]]))
    assert norm_bracket(S).contains(0.25 ** 0.5, 1e-12)


def test_sparse_block_diagonal_matches_dense(rng):
    blocks = [cgauss(rng, 2, 2) for _ in range(3)]
    M = sp.block_diag(blocks, format="csr")
    T = LinOp.from_array(M, 3.0)
    b = norm_bracket(T)
    parts = [norm_bracket(LinOp.from_array(B, 3.0)) for B in blocks]
    assert b.lower == max(x.lower for x in parts) and b.upper == max(x.upper for x in parts)


# -- duality ---------------------------------------------------------------
@given(st.integers(1, 4), st.sampled_from([1.0, 1.5, 3.0]), st.integers(0, 10**6))
def test_dual_norm_is_functional_norm(n, p, seed):
    eta = cgauss(np.random.default_rng(seed), n)
    # The functional xi -> <eta, xi> is a 1 x n operator from l^p_n to C.
    b = norm_bracket(LinOp(LpSpace.counting(n, p), LpSpace.counting(1, p), eta[None, :]))
    assert b.contains(vec_pnorm(eta, PExponent(p).q), 1e-12)


# -- tensor products ---------------------------------------------------------
def test_kron_examples():
    I2 = LinOp.identity(LpSpace.counting(2, 3.0))
    assert np.array_equal(kron(I2, I2).dense(), np.eye(4))
    shift = LinOp.from_array(np.array([[0, 0], [1, 0]]), 3.0)
    expected = np.array([[0, 0, 0, 0], [0, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0]])
    assert np.array_equal(kron(shift, I2).dense(), expected)
    u, v = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    R = LinOp.from_array(np.outer(u, v), 3.0)
    assert np.linalg.matrix_rank(kron(R, R).dense()) == 1
    with pytest.raises(ValueError):
        kron(I2, LinOp.identity(LpSpace.counting(2, 2.0)))


def test_kron_labels_are_pairs():
    S = LinOp.identity(LpSpace.counting(2, 2.0))
    T = LinOp.identity(LpSpace(MeasureSpace(("a", "b", "c"), [1, 2, 3]), PExponent(2.0)))
    K = kron(S, T)
    assert K.source.measure.labels[:3] == ((1, "a"), (1, "b"), (1, "c"))
    assert np.array_equal(K.source.measure.weights, [1, 2, 3, 1, 2, 3])


@given(complex_matrices(2), complex_matrices(2), st.sampled_from([1.0, 2.0]))
def test_kron_norm_multiplicative_closed_forms(A, B, p):
    K = kron(LinOp.from_array(A, p), LinOp.from_array(B, p))
    b = norm_bracket(K)
    na = norm_bracket(LinOp.from_array(A, p))
    nb = norm_bracket(LinOp.from_array(B, p))
    assert b.lower <= na.upper * nb.upper * (1 + 1e-12)
    assert na.lower * nb.lower <= b.upper * (1 + 1e-12)


def test_kron_norm_multiplicative_general_p(rng):
    for p in (1.5, 3.0):
        A, B = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
        K = kron(LinOp.from_array(A, p), LinOp.from_array(B, p))
        na = opnorm_bracket(LinOp.from_array(A, p), 512)
        nb = opnorm_bracket(LinOp.from_array(B, p), 512)
        lo = opnorm_lower(K)
        # Product of maximisers is feasible, so the product lower bound is attained.
        assert lo >= na.lower * nb.lower * (1 - 1e-9)
        assert lo <= na.upper * nb.upper * (1 + 1e-9)


# -- serialization ---------------------------------------------------------
@given(complex_matrices(4))
def test_matrix_json_round_trip(M):
    text = json.dumps(matrix_to_json(M))
    assert np.array_equal(matrix_from_json(json.loads(text)), M)


def test_linop_json_round_trip():
    meas = MeasureSpace((1, (2, "x"), "y"), [0.5, 1.0, 3.0])
    sp_ = LpSpace(meas, PExponent(1.5))
    T = LinOp(sp_, sp_, np.arange(9).reshape(3, 3) * (1 + 0.1j))
    back = linop_from_json(json.loads(json.dumps(linop_to_json(T))))
    assert back.source == T.source and np.array_equal(back.dense(), T.dense())
    assert measure_from_json(measure_to_json(meas)) == meas
    with pytest.raises(ValueError):
        matrix_from_json({"rows": 2, "cols": 2, "entries": [[0, 0]]})
