"""Concrete L^p modules (X, Y) over finite-dimensional operator algebras.

Subspaces are held as explicit bases of operators; membership is a
least-squares distance to the span.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .lpcore import (
    LinOp,
    LpSpace,
    MeasureSpace,
    NormBracket,
    PExponent,
    as_exponent,
    counting_matrix,
    holder_conjugate,
    kron,
    linop_from_json,
    linop_to_json,
    norm_bracket,
    quick_norm,
)

SPAN_TOL = 1e-8


class Span:
    """Linear span of equally shaped matrices with least-squares membership."""

    def __init__(self, mats: Sequence[np.ndarray]):
        mats = [np.asarray(m.dense() if isinstance(m, LinOp) else m, dtype=complex) for m in mats]
        if not mats:
            raise ValueError("a span needs at least one element")
        self.shape = mats[0].shape
        if any(m.shape != self.shape for m in mats):
            raise ValueError("span elements must share a shape")
        self.B = np.stack([m.ravel() for m in mats], axis=1)
        s = np.linalg.svd(self.B, compute_uv=False)
        self.rank = int(np.sum(s > 1e-12 * s[0])) if s[0] > 0 else 0
        self.cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
        Q, _ = np.linalg.qr(self.B)
        self.Q = Q[:, : self.B.shape[1]]

    @property
    def independent(self) -> bool:
        return self.rank == self.B.shape[1]

    def coords(self, m) -> tuple[np.ndarray, float]:
        v = np.asarray(m.dense() if isinstance(m, LinOp) else m, dtype=complex).ravel()
        c, *_ = np.linalg.lstsq(self.B, v, rcond=None)
        return c, float(np.linalg.norm(v - self.B @ c))

    def distance(self, m) -> float:
        v = np.asarray(m.dense() if isinstance(m, LinOp) else m, dtype=complex).ravel()
        return float(np.linalg.norm(v - self.Q @ (self.Q.conj().T @ v)))

    def threshold(self, m, tol: float) -> float:
        """Membership threshold, scaled by conditioning and by the size of ``m``."""
        v = m.dense() if isinstance(m, LinOp) else np.asarray(m)
        return tol * max(1.0, min(self.cond, 1e6)) * max(1.0, float(np.linalg.norm(v)))


@dataclass(frozen=True, eq=False)
class MatrixAlgebra:
    basis: tuple
    tol: float = SPAN_TOL

    def __post_init__(self):
        basis = tuple(self.basis)
        if not basis:
            raise ValueError("empty basis")
        amb = basis[0].source
        for b in basis:
            if b.source != amb or b.target != amb:
                raise ValueError("algebra elements must be endomorphisms of one space")
        span = Span(basis)
        if not span.independent:
            raise ValueError("algebra basis is linearly dependent")
        worst = 0.0
        for a in basis:
            for b in basis:
                prod = a @ b
                d = span.distance(prod)
                if d > span.threshold(prod, self.tol):
                    raise ValueError("span of the basis is not closed under multiplication")
                worst = max(worst, d)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "span", span)
        object.__setattr__(self, "closure_residual", worst)

    @property
    def ambient(self) -> LpSpace:
        return self.basis[0].source

    @property
    def dim(self) -> int:
        return len(self.basis)

    def element(self, coeffs) -> LinOp:
        m = np.tensordot(np.asarray(coeffs, dtype=complex), np.stack([b.dense() for b in self.basis]), 1)
        return LinOp(self.ambient, self.ambient, m)

    def coords(self, a) -> tuple[np.ndarray, float]:
        return self.span.coords(a)

    def contains(self, a, tol: float | None = None) -> bool:
        return self.span.distance(a) <= self.span.threshold(a, self.tol if tol is None else tol)

    def identity(self) -> LinOp | None:
        one = LinOp.identity(self.ambient)
        return one if self.contains(one) else None

    def random_element(self, rng: np.random.Generator) -> LinOp:
        r = self.dim
        return self.element(rng.standard_normal(r) + 1j * rng.standard_normal(r))


def _basis_ops(mats, p) -> tuple:
    return tuple(LinOp.from_array(m, p) for m in mats)


def scalars(p: PExponent | float) -> MatrixAlgebra:
    return MatrixAlgebra((LinOp.from_array(np.ones((1, 1)), p),))


def matrix_units(k: int) -> list[np.ndarray]:
    out = []
    for i in range(k):
        for j in range(k):
            E = np.zeros((k, k))
            E[i, j] = 1.0
            out.append(E)
    return out


def full_matrix_algebra(k: int, p: PExponent | float) -> MatrixAlgebra:
    return MatrixAlgebra(_basis_ops(matrix_units(k), p))


def diagonal_algebra(k: int, p: PExponent | float) -> MatrixAlgebra:
    return MatrixAlgebra(_basis_ops([np.diag(np.eye(k)[i]) for i in range(k)], p))


def span_algebra(mats, p: PExponent | float) -> MatrixAlgebra:
    return MatrixAlgebra(_basis_ops(mats, p))


def nilpotent_algebra(p: PExponent | float) -> MatrixAlgebra:
    """span{E_12} inside 2 x 2 matrices: a non-unital algebra with zero products."""
    return span_algebra([np.array([[0.0, 1.0], [0.0, 0.0]])], p)


# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ModuleTriple:
    """Operator spaces X: L^p(mu0) -> L^p(mu1) and Y: L^p(mu1) -> L^p(mu0) over A."""

    algebra: MatrixAlgebra
    X_basis: tuple
    Y_basis: tuple
    name: str = ""

    def __post_init__(self):
        X, Y = tuple(self.X_basis), tuple(self.Y_basis)
        if not X or not Y:
            raise ValueError("X and Y need nonempty bases")
        mu0 = self.algebra.ambient
        mu1 = X[0].target
        for x in X:
            if x.source != mu0 or x.target != mu1:
                raise ValueError("every x must map the algebra's space to a common target")
        for y in Y:
            if y.source != mu1 or y.target != mu0:
                raise ValueError("every y must map back onto the algebra's space")
        xs, ys = Span(X), Span(Y)
        if not xs.independent or not ys.independent:
            raise ValueError("module bases must be linearly independent")
        object.__setattr__(self, "X_basis", X)
        object.__setattr__(self, "Y_basis", Y)
        object.__setattr__(self, "X_span", xs)
        object.__setattr__(self, "Y_span", ys)

    @property
    def space0(self) -> LpSpace:
        return self.algebra.ambient

    @property
    def space1(self) -> LpSpace:
        return self.X_basis[0].target

    @property
    def exponent(self) -> PExponent:
        return self.space0.exponent

    def x_element(self, coeffs) -> LinOp:
        return _combine(self.X_basis, coeffs)

    def y_element(self, coeffs) -> LinOp:
        return _combine(self.Y_basis, coeffs)


def _combine(basis, coeffs) -> LinOp:
    m = np.tensordot(np.asarray(coeffs, dtype=complex), np.stack([b.dense() for b in basis]), 1)
    return basis[0].with_matrix(m)


@dataclass(frozen=True)
class AxiomReport:
    residuals: dict
    per_pair: tuple
    passed: bool

    def rows(self, module_id: str = ""):
        for cond, val in self.residuals.items():
            yield {"module": module_id, "condition": cond, "residual": val,
                   "lower": "", "upper": "", "pass": val <= SPAN_TOL or self.passed}


def check_module_axioms(m: ModuleTriple, tol: float = SPAN_TOL) -> AxiomReport:
    """Distances of xa, yx and ay from X, A and Y for every basis pair."""
    A = m.algebra
    worst = {"xa in X": 0.0, "yx in A": 0.0, "ay in Y": 0.0}
    pairs = []
    ok = True
    checks = (
        ("xa in X", m.X_basis, A.basis, lambda x, a: x @ a, m.X_span),
        ("yx in A", m.Y_basis, m.X_basis, lambda y, x: y @ x, A.span),
        ("ay in Y", A.basis, m.Y_basis, lambda a, y: a @ y, m.Y_span),
    )
    for cond, left, right, mult, span in checks:
        for i, u in enumerate(left):
            for j, v in enumerate(right):
                prod = mult(u, v)
                d = span.distance(prod)
                pairs.append((cond, i, j, d))
                worst[cond] = max(worst[cond], d)
                if d > span.threshold(prod, tol):
                    ok = False
    return AxiomReport(worst, tuple(pairs), ok)


def pairing(y: LinOp, x: LinOp, m: ModuleTriple) -> tuple[np.ndarray, float]:
    """Coordinates of the A-valued pairing yx in the algebra basis, with residual."""
    return m.algebra.coords(y @ x)


def theta(x: LinOp, y: LinOp) -> LinOp:
    """The rank-one module operator z -> x(yz), i.e. the product xy."""
    return x @ y


@dataclass(frozen=True)
class Membership:
    ok: bool
    residuals: dict
    violations: tuple = ()

    def __bool__(self):
        return self.ok


def in_LA(t: LinOp, m: ModuleTriple, tol: float = SPAN_TOL) -> Membership:
    """Whether t maps X into X (t x) and Y into Y (y t)."""
    res = {"tx in X": 0.0, "yt in Y": 0.0}
    bad = []
    for i, x in enumerate(m.X_basis):
        prod = t @ x
        d = m.X_span.distance(prod)
        res["tx in X"] = max(res["tx in X"], d)
        if d > m.X_span.threshold(prod, tol):
            bad.append(f"tx[{i}] not in X")
    for i, y in enumerate(m.Y_basis):
        prod = y @ t
        d = m.Y_span.distance(prod)
        res["yt in Y"] = max(res["yt in Y"], d)
        if d > m.Y_span.threshold(prod, tol):
            bad.append(f"y[{i}]t not in Y")
    return Membership(not bad, res, tuple(bad))


def compact_span(m: ModuleTriple) -> Span | None:
    """Span of the rank-one operators between basis elements (None when all vanish)."""
    mats = [theta(x, y).dense() for x in m.X_basis for y in m.Y_basis]
    B = np.stack([a.ravel() for a in mats], axis=1)
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    keep = s > 1e-12 * s[0] if s.size and s[0] > 0 else np.zeros(0, dtype=bool)
    if not keep.any():
        return None
    shape = mats[0].shape
    return Span([U[:, k].reshape(shape) for k in np.flatnonzero(keep)])


def in_KA(t: LinOp, m: ModuleTriple, tol: float = SPAN_TOL) -> Membership:
    span = compact_span(m)
    if span is None:
        d = float(np.linalg.norm(t.dense()))
        ok = d <= tol
    else:
        d = span.distance(t)
        ok = d <= span.threshold(t, tol)
    return Membership(ok, {"t in K_A": d}, () if ok else ("t not in span of rank-one operators",))


# --------------------------------------------------------------------------
def direct_sum(parts: Sequence[ModuleTriple]) -> ModuleTriple:
    """Block-column X and block-row Y on the p-direct sum of the target spaces."""
    parts = list(parts)
    if not parts:
        raise ValueError("need at least one summand")
    A = parts[0].algebra
    for m in parts[1:]:
        same = m.algebra is A or (
            m.algebra.dim == A.dim
            and all(np.array_equal(a.dense(), b.dense()) for a, b in zip(m.algebra.basis, A.basis))
        )
        if not same or m.space0 != parts[0].space0:
            raise ValueError("summands must share the algebra and its space")
    e = A.ambient.exponent
    big = LpSpace(MeasureSpace.disjoint_union([m.space1.measure for m in parts]), e)
    offsets = np.cumsum([0] + [m.space1.dim for m in parts])
    n0 = A.ambient.dim
    X, Y = [], []
    for k, m in enumerate(parts):
        lo, hi = offsets[k], offsets[k + 1]
        for x in m.X_basis:
            M = np.zeros((big.dim, n0), dtype=complex)
            M[lo:hi] = x.dense()
            X.append(LinOp(A.ambient, big, M))
        for y in m.Y_basis:
            M = np.zeros((n0, big.dim), dtype=complex)
            M[:, lo:hi] = y.dense()
            Y.append(LinOp(big, A.ambient, M))
    return ModuleTriple(A, tuple(X), tuple(Y), "+".join(m.name for m in parts))


def external_tensor(m1: ModuleTriple, m2: ModuleTriple, tol: float = SPAN_TOL) -> ModuleTriple:
    """Kronecker products of the bases, over the tensor product of the algebras."""
    if m1.exponent != m2.exponent:
        raise ValueError("modules must share the exponent")
    A = MatrixAlgebra(tuple(kron(a, b) for a in m1.algebra.basis for b in m2.algebra.basis))
    X = tuple(kron(x, v) for x in m1.X_basis for v in m2.X_basis)
    Y = tuple(kron(y, w) for y in m1.Y_basis for w in m2.Y_basis)
    out = ModuleTriple(A, X, Y, f"({m1.name})x({m2.name})")
    report = check_module_axioms(out, tol)
    if not report.passed:
        raise ValueError(f"tensor product fails the module axioms: {report.residuals}")
    return out


# --------------------------------------------------------------------------
# standard examples
def lp_lq_module(d: int, p: PExponent | float) -> ModuleTriple:
    """Column vectors (X) and row vectors (Y) of length d over the scalars."""
    e = as_exponent(p)
    one = LpSpace.counting(1, e)
    Ld = LpSpace.counting(d, e)
    I = np.eye(d)
    X = tuple(LinOp(one, Ld, I[:, [j]]) for j in range(d))
    Y = tuple(LinOp(Ld, one, I[[j], :]) for j in range(d))
    return ModuleTriple(scalars(e), X, Y, f"lp_lq[{d}]")


def lq_lp_module(d: int, p: PExponent | float) -> ModuleTriple:
    """Row vectors (X) and column vectors (Y) of length d over d x d matrices."""
    e = as_exponent(p)
    one = LpSpace.counting(1, e)
    A = full_matrix_algebra(d, e)
    Ld = A.ambient
    I = np.eye(d)
    X = tuple(LinOp(Ld, one, I[[j], :]) for j in range(d))
    Y = tuple(LinOp(one, Ld, I[:, [j]]) for j in range(d))
    return ModuleTriple(A, X, Y, f"lq_lp[{d}]")


def algebra_module(A: MatrixAlgebra, name: str = "A") -> ModuleTriple:
    return ModuleTriple(A, A.basis, A.basis, f"({name},{name})")


def standard_module(d: int, A: MatrixAlgebra) -> ModuleTriple:
    """Truncated standard module: l^p_d tensor (A, A)."""
    return external_tensor(lp_lq_module(d, A.ambient.exponent), algebra_module(A))


# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def as_dict(self):
        return {"lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class CStarDefect:
    """Bracketed gaps ||x|| - sup ||yx|| (over unit y) and the mirror quantity for y."""

    defect_X: Interval
    defect_Y: Interval
    rows: tuple = field(default=(), repr=False)
    sampled_X: Interval | None = None
    sampled_Y: Interval | None = None

    def csv_rows(self, module_id: str = ""):
        for side, iv in (("X", self.defect_X), ("Y", self.defect_Y),
                         ("X-sampled", self.sampled_X), ("Y-sampled", self.sampled_Y)):
            if iv is not None:
                yield {"module": module_id, "condition": f"cstar-defect-{side}",
                       "defect": 0.5 * (iv.lower + iv.upper), "lower": iv.lower, "upper": iv.upper}


def _duality_candidate(z: np.ndarray, p: float) -> np.ndarray:
    """Entrywise |z|^(p-1) conj(phase z), transposed: the norming functional shape."""
    a = np.abs(z)
    ph = np.zeros_like(z, dtype=complex)
    nz = a > 0
    ph[nz] = np.conj(z[nz] / a[nz])
    if np.isinf(p):
        peak = np.zeros_like(a)
        peak.flat[np.argmax(a)] = 1.0
        return (peak * ph).T
    return (a ** (p - 1) * ph).T


def _sup_ratio(target: LinOp, others: Sequence[LinOp], span: Span, left: bool, p: float,
               budget: int, rng: np.random.Generator):
    """Bracket sup over nonzero w in span(others) of ||w target|| / ||w|| (or target w).

    ``left`` selects w @ target; otherwise target @ w.  Returns
    ``(lower, upper_or_None, best_coeffs)``; the upper bound is only produced
    in the cases where it can be certified cheaply (a one-element span or a
    product that vanishes identically).
    """
    W = [counting_matrix(w) for w in others]
    base = np.stack([np.asarray(w.toarray() if hasattr(w, "toarray") else w) for w in W])
    tgt = counting_matrix(target)
    tgt = np.asarray(tgt.toarray() if hasattr(tgt, "toarray") else tgt)
    prods = np.stack([b @ tgt if left else tgt @ b for b in base])
    r = len(others)

    def build(c):
        return np.tensordot(c, base, 1), np.tensordot(c, prods, 1)

    def certified(c):
        w = others[0].with_matrix(np.tensordot(c, np.stack([o.dense() for o in others]), 1))
        wt = w @ target if left else target @ w
        nw = norm_bracket(w)
        if nw.upper == 0:
            return 0.0, None
        nwt = norm_bracket(wt)
        hi = nwt.upper / nw.lower if nw.lower > 0 else None
        return nwt.lower / nw.upper, hi

    if not np.any(prods):
        return 0.0, 0.0, np.eye(r)[0]
    if r == 1:
        lo, hi = certified(np.ones(1, dtype=complex))
        return lo, hi, np.ones(1, dtype=complex)

    def ratio(c):
        w, wt = build(c)
        nw = quick_norm(w, p)
        return quick_norm(wt, p) / nw if nw > 0 else 0.0

    cands = [np.eye(r, dtype=complex)[k] for k in range(r)]
    # shape-matched duality candidate and the identity, when they lie in the span
    one = np.eye(base.shape[1]) if base.shape[1] == base.shape[2] else None
    dual = _duality_candidate(tgt, p if left else holder_conjugate(p)) if tgt.shape[::-1] == base.shape[1:] else None
    for extra in (one, dual):
        if extra is not None:
            c, res = span.coords(extra)
            if res <= 1e-8 * max(1.0, np.linalg.norm(extra)):
                cands.append(c.astype(complex))
    g = rng.standard_normal((budget, r, 2))
    cands.extend(g[..., 0] + 1j * g[..., 1])
    scores = np.array([ratio(c) for c in cands])
    order = np.argsort(-scores, kind="stable")[:3]
    best_c, best = cands[order[0]], scores[order[0]]
    # the supremum never exceeds the norm of the fixed element
    if best >= quick_norm(tgt, p) * (1 - 1e-12):
        order = order[:0]

    def objective(v):
        return -ratio(v[:r] + 1j * v[r:])

    for k in order:
        c0 = cands[k]
        res = minimize(objective, np.concatenate([c0.real, c0.imag]), method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": 400 * 2 * r,
                                "maxfev": 600 * 2 * r})
        if -res.fun > best:
            best, best_c = -res.fun, res.x[:r] + 1j * res.x[r:]
    lo, _ = certified(best_c)
    return lo, None, best_c


def cstar_defect(m: ModuleTriple, sample_budget: int = 64, seed: int = 0,
                 extra_samples: int = 0) -> CStarDefect:
    """Bracket the C*-like defects of a module.

    For x in X the defect is ||x|| - sup_{||y||=1} ||yx||; for y in Y it is
    ||y|| - sup_{||x||=1} ||yx||.  The maximum is over basis elements, plus
    ``extra_samples`` random elements of each side reported separately.
    """
    rng = np.random.default_rng(seed)
    p = m.exponent.p
    rows = []

    def one_side(elements, others, span, left, side):
        worst_lo, worst_hi = -np.inf, -np.inf
        for idx, el in enumerate(elements):
            ne = norm_bracket(el)
            slo, shi, _ = _sup_ratio(el, others, span, left, p, sample_budget, rng)
            shi = ne.upper if shi is None else min(shi, ne.upper)
            lo, hi = ne.lower - shi, ne.upper - slo
            rows.append({"side": side, "index": idx, "norm": ne.as_dict(), "sup_lower": slo,
                         "sup_upper": shi, "defect_lower": lo, "defect_upper": hi})
            worst_lo, worst_hi = max(worst_lo, lo), max(worst_hi, hi)
        return Interval(worst_lo, worst_hi)

    dx = one_side(m.X_basis, m.Y_basis, m.Y_span, True, "X")
    dy = one_side(m.Y_basis, m.X_basis, m.X_span, False, "Y")
    sx = sy = None
    if extra_samples:
        xs = [m.x_element(rng.standard_normal(len(m.X_basis)) + 1j * rng.standard_normal(len(m.X_basis)))
              for _ in range(extra_samples)]
        ys = [m.y_element(rng.standard_normal(len(m.Y_basis)) + 1j * rng.standard_normal(len(m.Y_basis)))
              for _ in range(extra_samples)]
        sx = one_side(xs, m.Y_basis, m.Y_span, True, "X-sampled")
        sy = one_side(ys, m.X_basis, m.X_span, False, "Y-sampled")
    return CStarDefect(dx, dy, tuple(rows), sx, sy)


# --------------------------------------------------------------------------
def module_to_json(m: ModuleTriple) -> dict:
    return {
        "name": m.name,
        "algebra": [linop_to_json(a) for a in m.algebra.basis],
        "X": [linop_to_json(x) for x in m.X_basis],
        "Y": [linop_to_json(y) for y in m.Y_basis],
    }


def module_from_json(obj: dict) -> ModuleTriple:
    A = MatrixAlgebra(tuple(linop_from_json(a) for a in obj["algebra"]))
    return ModuleTriple(A, tuple(linop_from_json(x) for x in obj["X"]),
                        tuple(linop_from_json(y) for y in obj["Y"]), obj.get("name", ""))
