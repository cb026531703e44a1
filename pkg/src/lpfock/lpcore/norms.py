"""Estimation and certification of p -> p operator norms.

Lower bounds come from a multistart duality-map power ascent.  Certified
upper bounds come either from exact formulas for special structure, from
interpolation inequalities, or (for small source dimension) from a
branch-and-bound search over the unit sphere.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .spaces import INF, LinOp, holder_conjugate

EPS = np.finfo(float).eps
# Relative outward rounding applied to every certified bound.
ROUNDING = 1e-12

DEFAULT_CAP = 6


@dataclass(frozen=True)
class NormBracket:
    lower: float
    upper: float
    method: str = ""

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("bracket ends must be finite")
        if lo < 0 or lo > hi:
            raise ValueError(f"invalid bracket [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def mid(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= x <= self.upper + slack

    def as_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "method": self.method}


def _exact(value: float, method: str) -> NormBracket:
    value = max(float(value), 0.0)
    return NormBracket(value * (1 - ROUNDING), value * (1 + ROUNDING), method)


def counting_matrix(T: LinOp):
    """Matrix of T after rescaling both spaces to counting measure.

    ``diag(target_weights**(1/p)) @ M @ diag(source_weights**(-1/p))`` has the
    same p -> p norm as T.
    """
    p = T.source.p
    if T.target.p != p:
        raise ValueError("source and target must carry the same exponent")
    M = T.matrix
    ws, wt = T.source.measure.weights, T.target.measure.weights
    if np.all(ws == 1.0) and np.all(wt == 1.0):
        return M
    left = wt ** (1.0 / p)
    right = ws ** (-1.0 / p)
    if sp.issparse(M):
        return sp.csr_matrix(sp.diags(left) @ M @ sp.diags(right))
    return left[:, None] * M * right[None, :]


# --------------------------------------------------------------------------
# column-wise helpers
def _colnorms(V: np.ndarray, p: float) -> np.ndarray:
    A = np.abs(V)
    if math.isinf(p):
        return A.max(axis=0)
    scale = A.max(axis=0)
    safe = np.where(scale > 0, scale, 1.0)
    return scale * np.sum((A / safe) ** p, axis=0) ** (1.0 / p)


def _phase(V: np.ndarray) -> np.ndarray:
    A = np.abs(V)
    out = np.zeros_like(V, dtype=complex)
    nz = A > 0
    # componentwise: |re|, |im| <= |v| so subnormal moduli cannot overflow
    out[nz] = V[nz].real / A[nz] + 1j * (V[nz].imag / A[nz])
    return out


def _duality(V: np.ndarray, p: float) -> np.ndarray:
    """Unnormalised duality map, column by column.

    Each column v goes to a vector u with <u, v> = ||u||_q ||v||_p.  For
    p = inf the result is supported on one coordinate of maximal modulus.
    """
    A = np.abs(V)
    scale = A.max(axis=0)
    safe = np.where(scale > 0, scale, 1.0)
    if math.isinf(p):
        out = np.zeros_like(V, dtype=complex)
        k = np.argmax(A, axis=0)
        cols = np.arange(V.shape[1])
        out[k, cols] = _phase(V[k, cols])
        return out
    return (A / safe) ** (p - 1.0) * _phase(V)


def _apply(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """M @ X computed one column at a time.

    A stacked matrix-vector product gives every column the same rounding
    whatever the batch size, so adding starts never perturbs existing ones.
    """
    if X.shape[1] == 0:
        return np.zeros((M.shape[0], 0), dtype=complex)
    return np.matmul(M, np.ascontiguousarray(X.T)[:, :, None])[:, :, 0].T


class AscentError(RuntimeError):
    """The ascent objective decreased, which indicates a defect in the iteration."""


def power_ascent(M: np.ndarray, p: float, starts: np.ndarray, max_iter: int = 500,
                 rtol: float = 1e-12, trace: bool = False):
    """Run the duality-map power iteration from every column of ``starts``.

    Returns ``(values, vectors, history)``; ``history`` is a list of objective
    arrays (one entry per iteration, only the still-active columns) when
    ``trace`` is set.
    """
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=complex)
    q = holder_conjugate(p)
    X = np.array(starts, dtype=complex)
    norms = _colnorms(X, p)
    keep = norms > 0
    X = X[:, keep] / norms[keep]
    MH = M.conj().T
    f = _colnorms(_apply(M, X), p)
    history = [f.copy()] if trace else None
    active = np.arange(X.shape[1])
    for _ in range(max_iter):
        if active.size == 0:
            break
        Xa = X[:, active]
        Z = _apply(MH, _duality(_apply(M, Xa), p))
        Xn = _duality(Z, q)
        nn = _colnorms(Xn, p)
        moved = nn > 0
        Xn[:, moved] /= nn[moved]
        Xn[:, ~moved] = Xa[:, ~moved]
        fn = _colnorms(_apply(M, Xn), p)
        fa = f[active]
        if np.any(fn < fa * (1 - 1e-10) - 1e-300):
            raise AscentError("power ascent objective decreased")
        X[:, active] = Xn
        f[active] = np.maximum(fn, fa)
        if trace:
            history.append(fn.copy())
        done = np.abs(fn - fa) <= rtol * np.maximum(fa, 1e-300)
        active = active[~done]
    return f, X, history


def _start_vectors(n: int, restarts: int, seed: int) -> np.ndarray:
    """Coordinate vectors followed by seeded random sphere samples.

    Samples are drawn as one (restarts, n, 2) block so that increasing
    ``restarts`` only appends new starts.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((restarts, n, 2))
    rand = (g[..., 0] + 1j * g[..., 1]).T
    return np.concatenate([np.eye(n, dtype=complex), rand], axis=1)


def _lower_counting(M, p: float, restarts: int, seed: int) -> float:
    m, n = M.shape
    if n == 0 or m == 0:
        return 0.0
    f, _, _ = power_ascent(M, p, _start_vectors(n, restarts, seed))
    # Ascent ratios carry rounding from normalisation; deflate them.  Columns
    # M e_j are direct evaluations and serve as the floor.
    ascent = float(f.max()) * (1 - 8 * (n + 1) * EPS) if f.size else 0.0
    dense = M.toarray() if sp.issparse(M) else np.asarray(M)
    return max(ascent, float(_colnorms(dense, p).max()))


def opnorm_lower(T: LinOp, restarts: int = 16, seed: int = 0) -> float:
    """Lower bound on the p -> p norm from multistart power ascent."""
    return _lower_counting(counting_matrix(T), T.source.p, restarts, seed)


# --------------------------------------------------------------------------
# branch and bound over the unit sphere
def _pnorm_rows(V: np.ndarray, p: float) -> np.ndarray:
    return _colnorms(V.T, p)


def _branch_and_bound(M: np.ndarray, p: float, complex_search: bool, half_min: float,
                      lo: float, target: float, max_boxes: int) -> tuple[float, float]:
    """Certified (lower, upper) for ||M||_{p->p} with counting measure.

    Every nonzero vector is a multiple of one whose largest-modulus
    coordinate (the pivot) equals 1 and whose other coordinates have
    modulus <= 1.  For each pivot the free coordinates range over a box
    (real and imaginary parts separately when ``complex_search``).  On a
    box with centre c and radius r per coordinate

        ||M x|| <= || |M c| + |M| r ||,   ||x|| >= || max(|c| - r, 0) ||,

    which bounds the ratio from above.  Boxes are bisected until their
    bound is within ``target`` of the best ratio seen or their half-width
    reaches ``half_min``.
    """
    m, n = M.shape
    A = np.abs(M)
    free = np.array([[i for i in range(n) if i != k] for k in range(n)], dtype=int).reshape(n, n - 1)
    step = 2 if complex_search else 1
    D = (n - 1) * step

    def evaluate(piv, c, h):
        B = piv.size
        rows = np.arange(B)[:, None]
        xi = np.zeros((B, n), dtype=complex)
        xi[np.arange(B), piv] = 1.0
        r = np.zeros((B, n))
        if n > 1:
            if complex_search:
                vals = c[:, 0::2] + 1j * c[:, 1::2]
                rad = np.hypot(h[:, 0::2], h[:, 1::2])
            else:
                vals = c.astype(complex)
                rad = h
            cols = free[piv]
            xi[rows, cols] = vals
            r[rows, cols] = rad
            outside = np.any(np.abs(vals) - rad > 1.0, axis=1)
        else:
            outside = np.zeros(B, dtype=bool)
        Y = xi @ M.T
        value = _pnorm_rows(Y, p) / _pnorm_rows(xi, p)
        ub = _pnorm_rows(np.abs(Y) + r @ A.T, p) / _pnorm_rows(np.maximum(np.abs(xi) - r, 0.0), p)
        ub = np.where(outside, -np.inf, ub)
        return value, ub

    piv = np.arange(n)
    c = np.zeros((n, D))
    h = np.ones((n, D))
    value, ub = evaluate(piv, c, h)
    lo = max(lo, float(value.max()))
    settled = 0.0
    used = n
    while piv.size:
        small = h.max(axis=1) <= half_min if D else np.ones(piv.size, dtype=bool)
        done = (ub <= lo + target) | small
        if np.any(done):
            settled = max(settled, float(ub[done].max()))
        go = ~done
        piv, c, h, ub = piv[go], c[go], h[go], ub[go]
        if not piv.size:
            break
        if used + 2 * piv.size > max_boxes:
            settled = max(settled, float(ub.max()))
            break
        axis = np.argmax(h, axis=1)
        rows = np.arange(piv.size)
        h2 = h.copy()
        h2[rows, axis] *= 0.5
        c_lo, c_hi = c.copy(), c.copy()
        c_lo[rows, axis] -= h2[rows, axis]
        c_hi[rows, axis] += h2[rows, axis]
        piv = np.concatenate([piv, piv])
        c = np.concatenate([c_lo, c_hi])
        h = np.concatenate([h2, h2])
        value, ub = evaluate(piv, c, h)
        used += piv.size
        lo = max(lo, float(value.max()))
    return lo, max(settled, lo)


def opnorm_bracket(T: LinOp, grid_resolution: int = 64, *, cap: int = DEFAULT_CAP,
                   tol: float = 0.0, restarts: int = 16, seed: int = 0,
                   max_boxes: int = 400_000) -> NormBracket:
    """Certified bracket for the p -> p norm of an operator with small source.

    Cells are refined down to side length ``1 / grid_resolution`` (or until
    their bound is within ``tol`` of the lower bound).  Real matrices are
    searched over real vectors, which gives the same norm.
    """
    n = T.source.dim
    if n > cap:
        raise ValueError(f"source dimension {n} exceeds the cap {cap}")
    if grid_resolution < 1:
        raise ValueError("grid_resolution must be positive")
    M = counting_matrix(T)
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=complex)
    p = T.source.p
    if n == 0 or M.shape[0] == 0 or not np.any(M):
        return NormBracket(0.0, 0.0, "zero")
    lo0 = _lower_counting(M, p, restarts, seed)
    real = not np.any(M.imag)
    lo, hi = _branch_and_bound(M.real if real else M, p, not real, 0.5 / grid_resolution,
                               lo0, tol, max_boxes)
    # Rounding in the ratio evaluations is of order n * eps.
    lo *= 1 - 8 * (n + 1) * EPS
    return NormBracket(lo, max(hi * (1 + ROUNDING), lo), "branch-and-bound")


# --------------------------------------------------------------------------
# closed forms and structure
def max_column_norm(M, p: float) -> float:
    A = abs(M) if sp.issparse(M) else np.abs(M)
    if sp.issparse(A):
        return float(np.max(np.asarray(A.power(p).sum(axis=0)).ravel() ** (1.0 / p), initial=0.0))
    return float(_colnorms(A, p).max(initial=0.0))


def max_row_norm(M, q: float) -> float:
    if sp.issparse(M):
        M = M.toarray()
    return float(_colnorms(np.asarray(M).T, q).max(initial=0.0))


def _nnz_per_axis(M):
    if sp.issparse(M):
        C = sp.csr_matrix(M)
        C.eliminate_zeros()
        rows = np.diff(C.indptr)
        cols = np.bincount(C.indices, minlength=C.shape[1])
        return rows, cols
    nz = np.asarray(M) != 0
    return nz.sum(axis=1), nz.sum(axis=0)


def _interpolation_bound(M, p: float) -> float:
    """min over the Riesz-Thorin bounds through p = 1, 2 and infinity."""
    A = abs(M) if sp.issparse(M) else np.abs(M)
    n1 = float(np.asarray(A.sum(axis=0)).max(initial=0.0))
    ninf = float(np.asarray(A.sum(axis=1)).max(initial=0.0))
    best = n1 ** (1 / p) * ninf ** (1 - 1 / p)
    dense = M.toarray() if sp.issparse(M) else np.asarray(M)
    if min(dense.shape) and max(dense.shape) <= 2000:
        n2 = float(np.linalg.norm(dense, 2))
        if p <= 2:
            theta = 2 / p - 1
            best = min(best, n1 ** theta * n2 ** (1 - theta))
        else:
            theta = 1 - 2 / p
            best = min(best, n2 ** (1 - theta) * ninf ** theta)
    return best


def _structured(M, p: float) -> NormBracket | None:
    """Exact norm when M is a weighted partial permutation in one direction."""
    rows, cols = _nnz_per_axis(M)
    if cols.size == 0 or rows.size == 0 or (rows.max(initial=0) == 0):
        return NormBracket(0.0, 0.0, "zero")
    if cols.max() <= 1:
        return _exact(max_row_norm(M, holder_conjugate(p)), "exact:max-row")
    if rows.max() <= 1:
        return _exact(max_column_norm(M, p), "exact:max-column")
    if p == 1.0:
        return _exact(max_column_norm(M, 1.0), "exact:p=1")
    return None


def _rank_one(M: np.ndarray, p: float) -> NormBracket | None:
    if min(M.shape) < 2:
        return None
    U, s, Vh = np.linalg.svd(M)
    if s[0] == 0 or s[1] > 1e-13 * s[0]:
        return None
    u = U[:, 0] * s[0]
    w = Vh[0]
    main = float(_colnorms(u[:, None], p)[0] * _colnorms(w[:, None], holder_conjugate(p))[0])
    rest = M - np.outer(u, w)
    slack = _interpolation_bound(rest, p) if np.any(rest) else 0.0
    return NormBracket(max(main - slack, 0.0) * (1 - ROUNDING), (main + slack) * (1 + ROUNDING),
                       "rank-one")


def _canonical(M: np.ndarray) -> np.ndarray:
    """Representative of M under independent row and column permutations.

    Such permutations preserve every p -> p norm, so blocks that differ only
    by them share one computation.  Only applied to blocks of side <= 3.
    """
    m, n = M.shape
    if max(m, n) > 3:
        return M
    best, best_key = M, None
    for rp in itertools.permutations(range(m)):
        for cp in itertools.permutations(range(n)):
            cand = M[np.ix_(rp, cp)]
            key = cand.tobytes()
            if best_key is None or key < best_key:
                best, best_key = cand, key
    return best


@functools.lru_cache(maxsize=4096)
def _cached_component(key: bytes, shape: tuple, p: float, cap: int, grid_resolution: int,
                      restarts: int, seed: int, atol: float | None) -> NormBracket:
    M = np.frombuffer(key, dtype=complex).reshape(shape)
    return _component_bracket(M, p, cap, grid_resolution, restarts, seed, atol)


def _component_bracket(M: np.ndarray, p: float, cap: int, grid_resolution: int,
                       restarts: int, seed: int, atol: float | None = None) -> NormBracket:
    found = _structured(M, p)
    if found is not None:
        return found
    if p == 2.0:
        return _exact(np.linalg.norm(M, 2), "exact:p=2")
    r1 = _rank_one(M, p)
    if r1 is not None and r1.width <= 1e-9 * max(r1.upper, 1.0):
        return r1
    if M.shape[1] <= cap:
        T = LinOp.from_array(M, p)
        target, budget = 5e-5 * np.abs(M).max(), 400_000
        if atol is not None:
            # Cell slack is roughly (norm scale) x (cell half-width); refine until it is below atol.
            scale = _interpolation_bound(M, p)
            target = min(target, 0.25 * atol)
            grid_resolution = max(grid_resolution, int(math.ceil(8.0 * scale / atol)))
            budget = 2_000_000
        return opnorm_bracket(T, grid_resolution, cap=cap, tol=target,
                              restarts=restarts, seed=seed, max_boxes=budget)
    lo = _lower_counting(M, p, restarts, seed) * (1 - 8 * (M.shape[1] + 1) * EPS)
    hi = _interpolation_bound(M, p) * (1 + ROUNDING)
    return NormBracket(min(lo, hi), hi, "interpolation")


def opnorm_certified(T: LinOp, *, cap: int = DEFAULT_CAP, grid_resolution: int = 1 << 15,
                     restarts: int = 16, seed: int = 0, atol: float | None = None) -> NormBracket:
    """Certified bracket for operators of any size.

    The matrix is split into independent blocks (connected components of
    its nonzero pattern); the norm is the maximum of the block norms.  Each
    block is handled by an exact formula where one applies, by branch and
    bound when its source is small, and otherwise by ascent plus an
    interpolation upper bound.  ``atol`` asks branch and bound for an
    absolute width instead of one relative to the largest entry.
    """
    p = T.source.p
    M = counting_matrix(T)
    whole = _structured(M, p)
    if whole is not None:
        return whole
    S = sp.csr_matrix(M)
    S.eliminate_zeros()
    m, n = S.shape
    pattern = sp.bmat([[None, S != 0], [(S != 0).T, None]], format="csr")
    count, labels = connected_components(pattern, directed=False)
    row_lab, col_lab = labels[:m], labels[m:]
    blocks = {}
    for lab in np.unique(col_lab[np.diff(S.tocsc().indptr) > 0]):
        rows = np.flatnonzero(row_lab == lab)
        cols = np.flatnonzero(col_lab == lab)
        sub = _canonical(np.ascontiguousarray(S[rows][:, cols].toarray(), dtype=complex))
        blocks.setdefault((sub.tobytes(), sub.shape), sub)
    if not blocks:
        return NormBracket(0.0, 0.0, "zero")
    results = [_cached_component(key, shape, p, cap, grid_resolution, restarts, seed, atol)
               for key, shape in blocks]
    lo = max(r.lower for r in results)
    hi = max(r.upper for r in results)
    methods = sorted({r.method for r in results})
    return NormBracket(lo, hi, "blocks:" + "+".join(methods))


def norm_bracket(T: LinOp, **kw) -> NormBracket:
    """Bracket by whichever certified route fits the operator."""
    return opnorm_certified(T, **kw)


def quick_norm(M, p: float, restarts: int = 4, seed: int = 0) -> float:
    """Fast uncertified norm estimate of a small counting-measure matrix.

    Exact where an exact formula applies, an ascent lower bound otherwise.
    Meant for inner loops of optimisers; certify final answers separately.
    """
    M = np.asarray(M.toarray() if sp.issparse(M) else M)
    if M.size == 0 or not np.any(M):
        return 0.0
    found = _structured(M, p)
    if found is not None:
        return found.mid
    if p == 2.0:
        return float(np.linalg.norm(M, 2))
    r1 = _rank_one(M, p)
    if r1 is not None:
        return r1.mid
    return _lower_counting(M, p, restarts, seed)
