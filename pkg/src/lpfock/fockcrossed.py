"""Truncated Fock machinery for an algebra A with an isometric automorphism phi.

The Hilbert-style Fock module of (A, A) is realised on l^p(Z_{>=0}) (x) L^p(mu),
cut off at level N.  Flat index ``n * m + i`` holds level n and fiber point i,
where ``m = dim L^p(mu)``.  Operators are dense :class:`LeveledOp` objects with
the same window bookkeeping as the Cuntz-Toeplitz truncation.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from numbers import Number
from typing import Callable, Mapping, Sequence

import numpy as np

from .fockcuntz import CertificateError, LeveledOp, restricted_norm
from .lpcore import (
    LinOp,
    LpSpace,
    MeasureSpace,
    NormBracket,
    PExponent,
    as_exponent,
    exact_tolerance,
    matrix_from_json,
    matrix_to_json,
    measure_from_json,
    measure_to_json,
    norm_bracket,
    opnorm_lower,
)
from .modules import MatrixAlgebra, diagonal_algebra, full_matrix_algebra

HOM_TOL = 1e-8


class FactorizationError(ValueError):
    """No explicit factorization is available for a coefficient."""


def _mat(a) -> np.ndarray:
    if isinstance(a, LinOp):
        return a.dense()
    return np.asarray(a, dtype=complex)


# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DynSystem:
    """A finite-dimensional operator algebra with an isometric automorphism.

    ``phi`` is the matrix of the automorphism on basis coordinates.  When the
    automorphism is conjugation by a permutation (``perm[i]`` is the image of
    point i) or by an invertible matrix, powers are applied through that
    implementation instead of through coordinates.  ``factorizer(a)`` must
    return an idempotent e of A with ``a e = a``; it is only needed when A has
    no identity.
    """

    algebra: MatrixAlgebra
    phi: np.ndarray = field(repr=False)
    perm: tuple | None = None
    conjugator: np.ndarray | None = field(default=None, repr=False)
    factorizer: Callable | None = field(default=None, repr=False)
    name: str = ""

    def __post_init__(self):
        A = self.algebra
        r = A.dim
        Phi = np.asarray(self.phi, dtype=complex)
        if Phi.shape != (r, r):
            raise ValueError(f"phi must be {r} x {r} on the basis coordinates")
        try:
            Phi_inv = np.linalg.inv(Phi)
        except np.linalg.LinAlgError as exc:
            raise ValueError("phi is not invertible") from exc
        inv_res = float(np.abs(Phi @ Phi_inv - np.eye(r)).max())
        if inv_res > exact_tolerance(Phi, Phi_inv):
            raise ValueError(f"phi composed with its inverse misses the identity by {inv_res:.3g}")
        object.__setattr__(self, "phi", Phi)
        object.__setattr__(self, "phi_inv", Phi_inv)
        if self.perm is not None:
            perm = tuple(int(i) for i in self.perm)
            if sorted(perm) != list(range(A.ambient.dim)):
                raise ValueError("perm must be a permutation of the fiber points")
            object.__setattr__(self, "perm", perm)
        if self.conjugator is not None:
            U = np.asarray(self.conjugator, dtype=complex)
            object.__setattr__(self, "conjugator", U)
            object.__setattr__(self, "_conj_inv", np.linalg.inv(U))
        self._check_implementation()
        object.__setattr__(self, "hom_residual", self._check_homomorphism())
        object.__setattr__(self, "isometry_method", self._check_isometry())

    # -- construction ------------------------------------------------------
    @classmethod
    def from_permutation(cls, algebra: MatrixAlgebra, perm: Sequence[int], name: str = "",
                         factorizer: Callable | None = None) -> DynSystem:
        """Automorphism a -> P a P^T with P e_i = e_perm[i]."""
        perm = tuple(int(i) for i in perm)
        Phi = _coordinate_matrix(algebra, lambda a: _permute(a, perm, 1))
        return cls(algebra, Phi, perm=perm, factorizer=factorizer, name=name)

    @classmethod
    def from_conjugator(cls, algebra: MatrixAlgebra, U, name: str = "",
                        factorizer: Callable | None = None) -> DynSystem:
        U = np.asarray(U, dtype=complex)
        Ui = np.linalg.inv(U)
        Phi = _coordinate_matrix(algebra, lambda a: U @ a @ Ui)
        return cls(algebra, Phi, conjugator=U, factorizer=factorizer, name=name)

    # -- checks ------------------------------------------------------------
    def _via_coords(self, a: np.ndarray, n: int) -> np.ndarray:
        c, _ = self.algebra.coords(a)
        step = self.phi if n >= 0 else self.phi_inv
        c = np.linalg.matrix_power(step, abs(n)) @ c
        return self.algebra.element(c).dense()

    def _check_implementation(self):
        if self.perm is None and self.conjugator is None:
            return
        for b in self.algebra.basis:
            B = b.dense()
            direct, coords = self.apply(B, 1), self._via_coords(B, 1)
            scale = 1.0 + float(np.abs(B).max())
            if np.abs(direct - coords).max() > HOM_TOL * scale:
                raise ValueError("the implementing map disagrees with phi or leaves the algebra")

    def _check_homomorphism(self) -> float:
        worst = 0.0
        basis = [b.dense() for b in self.algebra.basis]
        for x in basis:
            for y in basis:
                lhs = self._via_coords(x @ y, 1)
                rhs = self._via_coords(x, 1) @ self._via_coords(y, 1)
                err = float(np.abs(lhs - rhs).max())
                if err > HOM_TOL * (1.0 + float(np.abs(x @ y).max())):
                    raise ValueError(f"phi is not multiplicative (residual {err:.3g})")
                worst = max(worst, err)
        return worst

    def _check_isometry(self) -> str:
        w = self.algebra.ambient.measure.weights
        if self.perm is not None and np.array_equal(w[list(self.perm)], w):
            return "exact:measure-preserving-permutation"
        rng = np.random.default_rng(0)
        samples = [b.dense() for b in self.algebra.basis]
        samples += [self.algebra.random_element(rng).dense() for _ in range(3)]
        for a in samples:
            ba, bp = self.norm(a), self.norm(self.apply(a, 1))
            if max(ba.lower, bp.lower) > min(ba.upper, bp.upper) + 1e-9:
                raise ValueError("phi is not isometric on the sampled elements")
        return "bracket"

    # -- use ---------------------------------------------------------------
    @property
    def p(self) -> float:
        return self.algebra.ambient.p

    @property
    def fiber_dim(self) -> int:
        return self.algebra.ambient.dim

    def apply(self, a, n: int = 1) -> np.ndarray:
        """phi^n(a) for any integer n."""
        a = _mat(a)
        if n == 0:
            return a.copy()
        if self.perm is not None:
            return _permute(a, self.perm, n)
        if self.conjugator is not None:
            U = self.conjugator if n > 0 else self._conj_inv
            Un = np.linalg.matrix_power(U, abs(n))
            Uin = np.linalg.matrix_power(self._conj_inv if n > 0 else self.conjugator, abs(n))
            return Un @ a @ Uin
        return self._via_coords(a, n)

    def norm(self, a, **kw) -> NormBracket:
        amb = self.algebra.ambient
        return norm_bracket(LinOp(amb, amb, _mat(a)), **kw)

    @functools.cached_property
    def unit(self) -> np.ndarray | None:
        one = self.algebra.identity()
        return None if one is None else one.dense()

    def right_unit(self, a) -> np.ndarray:
        """An idempotent e in A with a e = a."""
        if self.unit is not None:
            return self.unit
        if self.factorizer is None:
            raise FactorizationError("A has no identity and no factorizer was supplied")
        a = _mat(a)
        e = _mat(self.factorizer(a))
        scale = 1.0 + float(np.abs(a).max())
        if (not self.algebra.contains(LinOp(self.algebra.ambient, self.algebra.ambient, e))
                or np.abs(e @ e - e).max() > HOM_TOL * scale
                or np.abs(a @ e - a).max() > HOM_TOL * scale):
            raise FactorizationError("the factorizer returned an unusable idempotent")
        return e

    def random_element(self, rng: np.random.Generator) -> np.ndarray:
        return self.algebra.random_element(rng).dense()


def _permute(a: np.ndarray, perm: tuple, n: int) -> np.ndarray:
    sigma = np.arange(len(perm))
    step = np.asarray(perm)
    if n < 0:
        step = np.argsort(step)
    for _ in range(abs(n)):
        sigma = step[sigma]
    out = np.zeros_like(a)
    out[np.ix_(sigma, sigma)] = a
    return out


def _coordinate_matrix(algebra: MatrixAlgebra, f) -> np.ndarray:
    cols = []
    for b in algebra.basis:
        img = f(b.dense())
        if not algebra.contains(LinOp(algebra.ambient, algebra.ambient, img)):
            raise ValueError("the map does not preserve the algebra")
        cols.append(algebra.coords(img)[0])
    return np.stack(cols, axis=1)


def diag_cycle(k: int = 3, p: PExponent | float = 2.0) -> DynSystem:
    """Diagonal k x k matrices with the cyclic shift of the k points."""
    return DynSystem.from_permutation(diagonal_algebra(k, p), [(i + 1) % k for i in range(k)],
                                      name=f"diag_{k}")


def matrix_swap(p: PExponent | float = 2.0) -> DynSystem:
    """M_2 with conjugation by the coordinate swap."""
    return DynSystem.from_permutation(full_matrix_algebra(2, p), [1, 0], name="M_2")


BUILTINS = {"diag_3": lambda p: diag_cycle(3, p), "M_2": matrix_swap}


# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class CrossedTruncation:
    system: DynSystem
    N: int

    def __post_init__(self):
        if self.N < 0:
            raise ValueError("N must be >= 0")

    @property
    def m(self) -> int:
        return self.system.fiber_dim

    @property
    def dim(self) -> int:
        return (self.N + 1) * self.m

    @functools.cached_property
    def space(self) -> LpSpace:
        levels = MeasureSpace.counting(range(self.N + 1))
        amb = self.system.algebra.ambient
        return LpSpace(levels.product(amb.measure), amb.exponent)

    @functools.cached_property
    def levels(self) -> np.ndarray:
        lv = np.repeat(np.arange(self.N + 1), self.m)
        lv.setflags(write=False)
        return lv

    def flat(self, level: int, i: int) -> int:
        if not 0 <= level <= self.N or not 0 <= i < self.m:
            raise IndexError((level, i))
        return level * self.m + i

    def level_fiber(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.dim:
            raise IndexError(k)
        return divmod(k, self.m)

    def block_op(self, blocks: Mapping, shift: int, window: int) -> LeveledOp:
        """Assemble {(target level, source level): m x m block} into a LeveledOp."""
        M = np.zeros((self.dim, self.dim), dtype=complex)
        m = self.m
        for (r, c), B in blocks.items():
            if 0 <= r <= self.N and 0 <= c <= self.N:
                M[r * m:(r + 1) * m, c * m:(c + 1) * m] = B
        return LeveledOp(LinOp(self.space, self.space, M), shift, window, self.levels)

    def zero(self) -> LeveledOp:
        return self.block_op({}, 0, self.N)


def phiA_inf(a, tr: CrossedTruncation) -> LeveledOp:
    """Block diagonal with phi^n(a) at level n."""
    s = tr.system
    return tr.block_op({(n, n): s.apply(a, n) for n in range(tr.N + 1)}, 0, tr.N)


def cA(a, tr: CrossedTruncation) -> LeveledOp:
    """Level n to n+1 with block phi^n(a); the top level is dropped."""
    s = tr.system
    return tr.block_op({(n + 1, n): s.apply(a, n) for n in range(tr.N)}, 1, tr.N - 1)


def vA(a, tr: CrossedTruncation) -> LeveledOp:
    """Level n to n-1 with block phi^(n-1)(a); level 0 is killed."""
    s = tr.system
    return tr.block_op({(n - 1, n): s.apply(a, n - 1) for n in range(1, tr.N + 1)}, -1, tr.N)


def thetaA(a, tr: CrossedTruncation) -> LeveledOp:
    s = tr.system
    return tr.block_op({(n, n): s.apply(a, n - 1) for n in range(1, tr.N + 1)}, 0, tr.N)


def uZ(n: int, tr: CrossedTruncation) -> LeveledOp:
    """Level translation by -n tensored with the identity of the fiber."""
    one = np.eye(tr.m)
    if n >= 0:
        return tr.block_op({(k - n, k): one for k in range(n, tr.N + 1)}, -n, tr.N)
    r = -n
    return tr.block_op({(k + r, k): one for k in range(tr.N + 1 - r)}, r, tr.N - r)


def level_unit(j: int, k: int, tr: CrossedTruncation, a=None) -> LeveledOp:
    """theta_{delta_j, delta_k} tensor a (identity by default): level k to level j."""
    B = np.eye(tr.m) if a is None else _mat(a)
    window = tr.N if j <= tr.N else k - 1
    return tr.block_op({(j, k): B}, j - k, window)


def levels_below(k: int, tr: CrossedTruncation) -> LeveledOp:
    one = np.eye(tr.m)
    return tr.block_op({(n, n): one for n in range(min(k, tr.N + 1))}, 0, tr.N)


def _rank(op: LeveledOp) -> int:
    return int(np.linalg.matrix_rank(op.dense())) if np.abs(op.dense()).max(initial=0) else 0


def covariance_defect(n: int, a, tr: CrossedTruncation) -> LeveledOp:
    """The finite-rank correction sum_{k<n} theta_{delta_k,delta_k} (x) phi^(k-n)(a).

    Raises CertificateError unless uZ(-n) phi_inf(a) uZ(n) plus the correction
    equals phi_inf(phi^-n(a)) on the window and the rank is at most n dim(mu).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    s = tr.system
    corr = tr.block_op({(k, k): s.apply(a, k - n) for k in range(min(n, tr.N + 1))}, 0, tr.N)
    lhs = uZ(-n, tr) @ phiA_inf(a, tr) @ uZ(n, tr) + corr
    rhs = phiA_inf(s.apply(a, -n), tr)
    res = lhs.window_residual(rhs)
    if res > lhs.window_tolerance(rhs):
        raise CertificateError(f"covariance identity fails at n={n} (residual {res:.3g})")
    if _rank(corr) > n * tr.m:
        raise CertificateError("covariance correction has too large a rank")
    return corr


# --------------------------------------------------------------------------
def _check(lhs: LeveledOp, rhs: LeveledOp) -> tuple[float, float]:
    return lhs.window_residual(rhs), lhs.window_tolerance(rhs)


CORRESPONDENCE = (
    "c(ab) = c(a) phi_inf(b)",
    "c(phi(a) b) = phi_inf(a) c(b)",
    "v(ab) = phi_inf(a) v(b)",
    "v(a phi(b)) = v(a) phi_inf(b)",
    "v(a) c(b) = phi_inf(ab)",
    "c(a) v(b) = Theta(ab)",
    "Theta(a) Theta(b) = Theta(ab)",
)


def correspondence_residuals(a, b, tr: CrossedTruncation) -> dict:
    """Residual and tolerance of each creation/annihilation identity for one pair."""
    s = tr.system
    a, b = _mat(a), _mat(b)
    pa, pb = s.apply(a, 1), s.apply(b, 1)
    pairs = (
        (cA(a @ b, tr), cA(a, tr) @ phiA_inf(b, tr)),
        (cA(pa @ b, tr), phiA_inf(a, tr) @ cA(b, tr)),
        (vA(a @ b, tr), phiA_inf(a, tr) @ vA(b, tr)),
        (vA(a @ pb, tr), vA(a, tr) @ phiA_inf(b, tr)),
        (vA(a, tr) @ cA(b, tr), phiA_inf(a @ b, tr)),
        (cA(a, tr) @ vA(b, tr), thetaA(a @ b, tr)),
        (thetaA(a, tr) @ thetaA(b, tr), thetaA(a @ b, tr)),
    )
    return {name: _check(l, r) for name, (l, r) in zip(CORRESPONDENCE, pairs)}


TRANSLATION = ("conjugation n>=0", "conjugation n>=1 with correction", "additive",
               "additive n<0<=m, n+m>=0", "additive n<0<=m, n+m<0")


def translation_residuals(tr: CrossedTruncation, a) -> dict:
    """Worst residual of each translation identity over all admissible n, m.

    The negative-then-positive products carry their explicit finite-rank
    corrections: sum_{j=0}^{-n-1} theta_{j, j+n+m} when n+m >= 0 and
    sum_{j=0}^{m-1} theta_{j-n-m, j} when n+m < 0 (fiber identity in both).
    """
    s, N = tr.system, tr.N
    a = _mat(a)
    out = {k: [0.0, 0.0, 0] for k in TRANSLATION}

    def record(key, lhs, rhs):
        r, t = _check(lhs, rhs)
        slot = out[key]
        slot[0], slot[1], slot[2] = max(slot[0], r), max(slot[1], t), slot[2] + 1

    pa = phiA_inf(a, tr)
    for n in range(0, N + 1):
        record(TRANSLATION[0], uZ(n, tr) @ pa @ uZ(-n, tr), phiA_inf(s.apply(a, n), tr))
    for n in range(1, N + 1):
        corr = tr.block_op({(k, k): s.apply(a, k - n) for k in range(n)}, 0, N)
        record(TRANSLATION[1], uZ(-n, tr) @ pa @ uZ(n, tr), phiA_inf(s.apply(a, -n), tr) - corr)
    for n in range(-N, N + 1):
        for m in range(-N, N + 1):
            if abs(n + m) > N:
                continue
            lhs = uZ(n, tr) @ uZ(m, tr)
            target = uZ(n + m, tr)
            if n >= 0 or m <= 0:
                record(TRANSLATION[2], lhs, target)
            elif n + m >= 0:
                corr = tr.zero()
                for j in range(-n):
                    corr = corr + level_unit(j, j + n + m, tr)
                record(TRANSLATION[3], lhs, target - corr)
            else:
                if -n - 1 > N:
                    continue
                corr = tr.zero()
                for j in range(m):
                    corr = corr + level_unit(j - n - m, j, tr)
                record(TRANSLATION[4], lhs, target - corr)
    return {k: {"residual": v[0], "tolerance": v[1], "instances": v[2]} for k, v in out.items()}


# --------------------------------------------------------------------------
def c_word(a_list: Sequence, tr: CrossedTruncation) -> LeveledOp:
    out = None
    for a in a_list:
        op = cA(a, tr)
        out = op if out is None else out @ op
    return out


def v_word(b_list: Sequence, tr: CrossedTruncation) -> LeveledOp:
    out = None
    for b in b_list:
        op = vA(b, tr)
        out = op if out is None else out @ op
    return out


def c_word_coefficient(a_list: Sequence, sys: DynSystem) -> np.ndarray:
    """phi^(n-1)(a_1) ... phi(a_(n-1)) a_n."""
    n = len(a_list)
    out = np.eye(sys.fiber_dim, dtype=complex)
    for i, a in enumerate(a_list):
        out = out @ sys.apply(a, n - 1 - i)
    return out


def v_word_coefficient(b_list: Sequence, sys: DynSystem) -> np.ndarray:
    """b_1 phi(b_2) ... phi^(m-1)(b_m)."""
    out = np.eye(sys.fiber_dim, dtype=complex)
    for i, b in enumerate(b_list):
        out = out @ sys.apply(b, i)
    return out


@dataclass
class WordNorm:
    word: str
    truncated: NormBracket
    closed_form: NormBracket
    tol: float

    @property
    def passed(self) -> bool:
        t, c = self.truncated, self.closed_form
        overlap = max(t.lower, c.lower) <= min(t.upper, c.upper)
        return bool(overlap and t.width <= self.tol and c.width <= self.tol)

    def as_dict(self) -> dict:
        return {"word": self.word, "truncated": self.truncated.as_dict(),
                "closed_form": self.closed_form.as_dict(), "pass": self.passed}


def word_norms(a_list: Sequence, b_list: Sequence, tr: CrossedTruncation,
               tol: float = 1e-3) -> list[WordNorm]:
    """Compare truncated word norms with the norms of their collapsed coefficients.

    Evaluates the creation word in ``a_list``, the annihilation word in
    ``b_list`` and, when both are nonempty, the creation word followed by the
    annihilation word, whose coefficient is the product of the two.
    """
    s = tr.system
    n, m = len(a_list), len(b_list)
    if max(n, m) > tr.N:
        raise ValueError("words longer than the truncation have an empty window")
    kw = {"atol": 0.5 * tol}
    out = []
    if n:
        C = c_word_coefficient(a_list, s)
        out.append(WordNorm(f"c^{n}", restricted_norm(c_word(a_list, tr), **kw), s.norm(C, **kw), tol))
    if m:
        V = v_word_coefficient(b_list, s)
        out.append(WordNorm(f"v^{m}", restricted_norm(v_word(b_list, tr), **kw), s.norm(V, **kw), tol))
    if n and m:
        W = c_word(a_list, tr) @ v_word(b_list, tr)
        out.append(WordNorm(f"c^{n} v^{m}", restricted_norm(W, **kw), s.norm(C @ V, **kw), tol))
    return out


# --------------------------------------------------------------------------
class CcElement:
    """A finitely supported map n -> a_n in A, read as sum_n a_n u_n."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Mapping[int, object] | None = None):
        clean = {}
        for n, a in (coeffs or {}).items():
            A = _mat(a)
            if np.any(A != 0):
                clean[int(n)] = A
        self.coeffs = dict(sorted(clean.items()))

    @classmethod
    def monomial(cls, a, n: int) -> CcElement:
        return cls({n: a})

    @classmethod
    def random(cls, sys: DynSystem, rng: np.random.Generator, lo: int = -2, hi: int = 2,
               terms: int | None = None) -> CcElement:
        span = np.arange(lo, hi + 1)
        k = int(rng.integers(1, span.size + 1)) if terms is None else terms
        chosen = rng.choice(span, size=k, replace=False)
        return cls({int(n): sys.random_element(rng) for n in sorted(chosen)})

    @property
    def support(self) -> tuple:
        return tuple(self.coeffs)

    def __add__(self, other: CcElement) -> CcElement:
        out = dict(self.coeffs)
        for n, a in other.coeffs.items():
            out[n] = out[n] + a if n in out else a
        return CcElement(out)

    def __mul__(self, z) -> CcElement:
        if not isinstance(z, Number):
            return NotImplemented
        return CcElement({n: complex(z) * a for n, a in self.coeffs.items()})

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, CcElement):
            return NotImplemented
        return (self.support == other.support
                and all(np.array_equal(a, other.coeffs[n]) for n, a in self.coeffs.items()))

    def allclose(self, other: CcElement, atol: float = 1e-12) -> bool:
        keys = set(self.coeffs) | set(other.coeffs)
        for n in keys:
            a = self.coeffs.get(n, 0.0)
            b = other.coeffs.get(n, 0.0)
            if np.abs(np.asarray(a) - np.asarray(b)).max() > atol:
                return False
        return True

    def __repr__(self):
        return f"CcElement(support={self.support})"


def twisted_mul(f: CcElement, g: CcElement, sys: DynSystem) -> CcElement:
    """Bilinear extension of (a u_j)(b u_k) = a phi^j(b) u_(j+k)."""
    out: dict = {}
    for j, a in f.coeffs.items():
        for k, b in g.coeffs.items():
            term = a @ sys.apply(b, j)
            out[j + k] = out[j + k] + term if j + k in out else term
    return CcElement(out)


def _check_factors(a, factors, sys: DynSystem, sign: int):
    n = len(factors)
    prod = np.eye(sys.fiber_dim, dtype=complex)
    for i, f in enumerate(factors):
        prod = prod @ sys.apply(f, sign * i)
    if np.abs(prod - a).max() > HOM_TOL * (1.0 + float(np.abs(a).max())):
        raise FactorizationError(f"factors do not multiply back to the coefficient of u_{-sign * n}")


def gamma0_monomial(a, n: int, tr: CrossedTruncation, factors: Sequence | None = None) -> LeveledOp:
    """Image of a u_n.

    For n < 0 the coefficient is written a = a_1 phi^-1(a_2) ... and mapped to
    c(phi(a_1)) ... c(phi(a_|n|)); for n > 0 it is written a = b_1 phi(b_2) ...
    and mapped to v(b_1) ... v(b_n).  Without explicit factors the first
    factor is a and the rest are shifted copies of a right unit of a.
    """
    s = tr.system
    a = _mat(a)
    if n == 0:
        return phiA_inf(a, tr)
    k, sign = abs(n), (-1 if n < 0 else 1)
    if factors is None:
        e = s.right_unit(a)
        factors = [a] + [s.apply(e, -sign * i) for i in range(1, k)]
    factors = [_mat(f) for f in factors]
    if len(factors) != k:
        raise FactorizationError(f"u_{n} needs {k} factors, got {len(factors)}")
    _check_factors(a, factors, s, sign)
    if n < 0:
        return c_word([s.apply(f, 1) for f in factors], tr)
    return v_word(factors, tr)


def gamma0(f: CcElement, tr: CrossedTruncation,
           factorizations: Mapping[int, Sequence] | None = None) -> LeveledOp:
    """Sum of the images of the monomials of f."""
    out = tr.zero()
    for n, a in f.coeffs.items():
        facs = None if factorizations is None else factorizations.get(n)
        out = out + gamma0_monomial(a, n, tr, facs)
    return out


def gamma0_defect(f: CcElement, g: CcElement, tr: CrossedTruncation) -> LeveledOp:
    """Finite-rank difference gamma0(f) gamma0(g) - gamma0(fg).

    Only products a_i u_i b_k u_k with i < 0 < k contribute; each one loses
    the levels below k, giving -gamma0((a_i u_i)(b_k u_k)) P_{<k}.
    """
    s = tr.system
    out = tr.zero()
    for i, a in f.coeffs.items():
        for k, b in g.coeffs.items():
            if i < 0 < k:
                prod = twisted_mul(CcElement({i: a}), CcElement({k: b}), s)
                if prod.coeffs:
                    out = out - gamma0(prod, tr) @ levels_below(k, tr)
    return out


@dataclass
class Gamma0Check:
    raw_residual: float
    residual: float
    tolerance: float
    defect_rank: int
    window: int

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance

    def as_dict(self) -> dict:
        return {"raw_residual": self.raw_residual, "residual": self.residual,
                "tolerance": self.tolerance, "defect_rank": self.defect_rank,
                "window": self.window, "pass": self.passed}


def gamma0_product_check(f: CcElement, g: CcElement, tr: CrossedTruncation) -> Gamma0Check:
    """Compare gamma0(f) gamma0(g) with gamma0(fg) plus its finite-rank defect."""
    lhs = gamma0(f, tr) @ gamma0(g, tr)
    rhs = gamma0(twisted_mul(f, g, tr.system), tr)
    D = gamma0_defect(f, g, tr)
    raw = lhs.window_residual(rhs)
    res = lhs.window_residual(rhs + D)
    return Gamma0Check(raw, res, lhs.window_tolerance(rhs), _rank(D), min(lhs.window, rhs.window))


def gamma0_contractivity(f: CcElement, tr: CrossedTruncation, restarts: int = 8,
                         seed: int = 0) -> dict:
    """Lower bound for the norm of gamma0(f) against sum_j ||a_j||."""
    op = gamma0(f, tr)
    cols = op.window_columns()
    src = op.op.source
    sub = MeasureSpace([src.measure.labels[i] for i in cols], src.measure.weights[cols])
    lower = opnorm_lower(LinOp(LpSpace(sub, src.exponent), op.op.target, op.on_window()),
                         restarts=restarts, seed=seed)
    bound = sum(tr.system.norm(a).upper for a in f.coeffs.values())
    return {"lower": float(lower), "l1_bound": float(bound),
            "pass": bool(lower <= bound + 1e-9)}


# --------------------------------------------------------------------------
def algebra_to_json(A: MatrixAlgebra) -> dict:
    return {"measure": measure_to_json(A.ambient.measure),
            "basis": [matrix_to_json(b.dense()) for b in A.basis]}


def algebra_from_json(obj: dict, p: PExponent | float) -> MatrixAlgebra:
    mats = [matrix_from_json(b) for b in obj["basis"]]
    if "measure" in obj:
        meas = measure_from_json(obj["measure"])
    else:
        meas = MeasureSpace.counting(mats[0].shape[0])
    space = LpSpace(meas, as_exponent(p))
    return MatrixAlgebra(tuple(LinOp(space, space, M) for M in mats))


def system_to_json(sys: DynSystem) -> tuple[dict, dict]:
    """(algebra file, automorphism file)."""
    phi = {"name": sys.name, "phi": matrix_to_json(sys.phi)}
    if sys.perm is not None:
        phi["permutation"] = list(sys.perm)
    if sys.conjugator is not None:
        phi["conjugator"] = matrix_to_json(sys.conjugator)
    return algebra_to_json(sys.algebra), phi


def system_from_json(algebra_obj: dict, phi_obj: dict, p: PExponent | float) -> DynSystem:
    A = algebra_from_json(algebra_obj, p)
    name = phi_obj.get("name", "")
    if "permutation" in phi_obj:
        return DynSystem.from_permutation(A, phi_obj["permutation"], name=name)
    if "conjugator" in phi_obj:
        return DynSystem.from_conjugator(A, matrix_from_json(phi_obj["conjugator"]), name=name)
    if "phi" in phi_obj:
        return DynSystem(A, matrix_from_json(phi_obj["phi"]), name=name)
    raise ValueError("automorphism file needs one of: permutation, conjugator, phi")


# --------------------------------------------------------------------------
def fock_crossed_report(sys: DynSystem, N: int, seed: int = 0, samples: int = 2,
                        word_tol: float = 1e-3) -> dict:
    """Relations, translation identities, certificates, word norms and gamma0 checks."""
    if N < 3:
        raise ValueError("the report needs N >= 3")
    tr = CrossedTruncation(sys, N)
    rng = np.random.default_rng(seed)

    corr: dict = {}
    for _ in range(samples):
        a, b = sys.random_element(rng), sys.random_element(rng)
        for name, (r, t) in correspondence_residuals(a, b, tr).items():
            old = corr.get(name, {"residual": 0.0, "tolerance": 0.0})
            corr[name] = {"residual": max(old["residual"], r), "tolerance": max(old["tolerance"], t)}
    for v in corr.values():
        v["pass"] = v["residual"] <= v["tolerance"]

    trans = translation_residuals(tr, sys.random_element(rng))
    for v in trans.values():
        v["pass"] = v["residual"] <= v["tolerance"]

    cov = []
    for n in range(1, 4):
        a = sys.random_element(rng)
        try:
            c = covariance_defect(n, a, tr)
            cov.append({"n": n, "rank": _rank(c), "rank_bound": n * tr.m, "pass": True})
        except CertificateError as exc:
            cov.append({"n": n, "error": str(exc), "pass": False})

    words = []
    for length in range(1, 4):
        a_list = [sys.random_element(rng) for _ in range(length)]
        b_list = [sys.random_element(rng) for _ in range(length)] if length < 3 else []
        words.extend(w.as_dict() for w in word_norms(a_list, b_list, tr, word_tol))

    # products of elements supported in [-r, r] need 2r levels of headroom
    r = min(2, N // 2)
    gam = []
    for _ in range(samples):
        f, g = CcElement.random(sys, rng, -r, r), CcElement.random(sys, rng, -r, r)
        chk = gamma0_product_check(f, g, tr).as_dict()
        chk["support"] = [list(f.support), list(g.support)]
        chk["contractivity"] = gamma0_contractivity(f, tr, seed=seed)
        chk["pass"] = chk["pass"] and chk["contractivity"]["pass"]
        gam.append(chk)

    passed = (all(v["pass"] for v in corr.values()) and all(v["pass"] for v in trans.values())
              and all(c["pass"] for c in cov) and all(w["pass"] for w in words)
              and all(g["pass"] for g in gam))
    return {"algebra": sys.name, "N": N, "p": sys.p,
            "isometry": sys.isometry_method,
            "relations": corr, "translation": trans, "covariance": cov,
            "words": words, "gamma0": gam, "pass": bool(passed)}
