"""Exponents, finite measure spaces, vectors and operators between L^p spaces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from numbers import Number
from typing import Any, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

INF = math.inf


def holder_conjugate(p: float) -> float:
    """Return q with 1/p + 1/q = 1, using ``math.inf`` for p = 1."""
    p = float(p)
    if not p >= 1.0 or math.isinf(p):
        raise ValueError(f"exponent must be a finite real >= 1, got {p!r}")
    if p == 1.0:
        return INF
    return p / (p - 1.0)


@dataclass(frozen=True)
class PExponent:
    """A Hölder pair (p, q)."""

    p: float

    def __post_init__(self):
        p = float(self.p)
        holder_conjugate(p)  # validates
        object.__setattr__(self, "p", p)

    @property
    def q(self) -> float:
        return holder_conjugate(self.p)

    def __float__(self) -> float:
        return self.p


def as_exponent(p: PExponent | float) -> PExponent:
    return p if isinstance(p, PExponent) else PExponent(p)


def _exponent_value(p: PExponent | float) -> float:
    """Accept a PExponent or a bare number (``math.inf`` allowed)."""
    if isinstance(p, PExponent):
        return p.p
    p = float(p)
    if math.isinf(p):
        return INF
    if p < 1.0:
        raise ValueError(f"exponent must be >= 1, got {p!r}")
    return p


@dataclass(frozen=True, eq=False)
class MeasureSpace:
    """A finite set of labels with strictly positive point masses."""

    labels: tuple
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(labels) != w.size:
            raise ValueError("labels and weights differ in length")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be distinct")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and strictly positive")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    @classmethod
    def counting(cls, labels: int | Iterable) -> MeasureSpace:
        labels = tuple(range(1, labels + 1)) if isinstance(labels, int) else tuple(labels)
        return cls(labels, np.ones(len(labels)))

    @property
    def dim(self) -> int:
        return len(self.labels)

    @property
    def is_counting(self) -> bool:
        return bool(np.all(self.weights == 1.0))

    def index(self, label) -> int:
        return self._index[label]

    def __contains__(self, label) -> bool:
        return label in self._index

    def product(self, other: MeasureSpace) -> MeasureSpace:
        """Product measure; labels are pairs, ordered with ``self`` as the slow index."""
        labels = [(a, b) for a in self.labels for b in other.labels]
        return MeasureSpace(labels, np.outer(self.weights, other.weights).ravel())

    @staticmethod
    def disjoint_union(spaces: Sequence[MeasureSpace]) -> MeasureSpace:
        labels = [(k, lab) for k, s in enumerate(spaces) for lab in s.labels]
        return MeasureSpace(labels, np.concatenate([s.weights for s in spaces]))

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, MeasureSpace):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.labels, self.weights.tobytes()))


@dataclass(frozen=True)
class LpSpace:
    measure: MeasureSpace
    exponent: PExponent

    @classmethod
    def counting(cls, n: int | Iterable, p: PExponent | float) -> LpSpace:
        return cls(MeasureSpace.counting(n), as_exponent(p))

    @property
    def dim(self) -> int:
        return self.measure.dim

    @property
    def p(self) -> float:
        return self.exponent.p

    @property
    def q(self) -> float:
        return self.exponent.q

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, LpSpace):
            return NotImplemented
        return self.exponent == other.exponent and self.measure == other.measure

    def __hash__(self):
        return hash((self.measure, self.exponent))


@dataclass(frozen=True, eq=False)
class LpVector:
    measure: MeasureSpace
    entries: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.entries, dtype=complex).reshape(-1)
        if v.size != self.measure.dim:
            raise ValueError("vector length does not match the measure space")
        object.__setattr__(self, "entries", v)


def vec_pnorm(v: LpVector | np.ndarray, p: PExponent | float, weights=None) -> float:
    """Weighted p-norm; p may be ``math.inf`` (maximum modulus over the support)."""
    if isinstance(v, LpVector):
        weights = v.measure.weights
        v = v.entries
    p = _exponent_value(p)
    a = np.abs(np.asarray(v)).reshape(-1)
    if a.size == 0:
        return 0.0
    if math.isinf(p):
        return float(a.max())
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float)
    scale = a.max()
    if scale == 0.0:
        return 0.0
    return float(scale * np.sum(w * (a / scale) ** p) ** (1.0 / p))


def _as_matrix(m):
    if sp.issparse(m):
        return sp.csr_matrix(m, dtype=complex)
    return np.asarray(m, dtype=complex)


@dataclass(frozen=True, eq=False)
class LinOp:
    """A complex matrix from ``source`` to ``target`` (rows index the target).

    The matrix is either a dense array or a scipy CSR matrix.
    """

    source: LpSpace
    target: LpSpace
    matrix: Any

    def __post_init__(self):
        m = _as_matrix(self.matrix)
        if m.ndim != 2 or m.shape != (self.target.dim, self.source.dim):
            raise ValueError(
                f"matrix shape {m.shape} does not match target x source "
                f"({self.target.dim}, {self.source.dim})"
            )
        if isinstance(m, np.ndarray):
            m = m.copy()
            m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    # construction helpers
    @classmethod
    def identity(cls, space: LpSpace, sparse: bool = False) -> LinOp:
        m = sp.identity(space.dim, dtype=complex, format="csr") if sparse else np.eye(space.dim)
        return cls(space, space, m)

    @classmethod
    def zeros(cls, source: LpSpace, target: LpSpace, sparse: bool = False) -> LinOp:
        shape = (target.dim, source.dim)
        return cls(source, target, sp.csr_matrix(shape, dtype=complex) if sparse else np.zeros(shape))

    @classmethod
    def from_array(cls, m, p: PExponent | float = 2.0) -> LinOp:
        """Operator between counting-measure spaces labelled 1..n."""
        m = _as_matrix(m)
        return cls(LpSpace.counting(m.shape[1], p), LpSpace.counting(m.shape[0], p), m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def exponent(self) -> PExponent:
        return self.source.exponent

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def with_matrix(self, m) -> LinOp:
        return LinOp(self.source, self.target, m)

    def max_abs(self) -> float:
        if self.is_sparse:
            return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0
        return float(np.abs(self.matrix).max()) if self.matrix.size else 0.0

    # algebra
    def __matmul__(self, other):
        if isinstance(other, LinOp):
            if other.target != self.source:
                raise ValueError("composition requires matching inner spaces")
            return LinOp(other.source, self.target, self.matrix @ other.matrix)
        if isinstance(other, LpVector):
            if other.measure != self.source.measure:
                raise ValueError("vector lives on a different measure space")
            return LpVector(self.target.measure, np.asarray(self.matrix @ other.entries).reshape(-1))
        return NotImplemented

    def _check_same(self, other: LinOp):
        if other.source != self.source or other.target != self.target:
            raise ValueError("operators act between different spaces")

    def __add__(self, other):
        if not isinstance(other, LinOp):
            return NotImplemented
        self._check_same(other)
        return self.with_matrix(self.matrix + other.matrix)

    def __sub__(self, other):
        if not isinstance(other, LinOp):
            return NotImplemented
        self._check_same(other)
        return self.with_matrix(self.matrix - other.matrix)

    def __neg__(self):
        return self.with_matrix(-self.matrix)

    def __mul__(self, z):
        if not isinstance(z, Number):
            return NotImplemented
        return self.with_matrix(self.matrix * complex(z))

    __rmul__ = __mul__


def residual(a: LinOp | np.ndarray, b: LinOp | np.ndarray) -> float:
    """Largest entrywise modulus of ``a - b``."""
    ma = a.matrix if isinstance(a, LinOp) else a
    mb = b.matrix if isinstance(b, LinOp) else b
    d = ma - mb
    if sp.issparse(d):
        d = sp.csr_matrix(d)
        return float(abs(d).max()) if d.nnz else 0.0
    d = np.asarray(d)
    return float(np.abs(d).max()) if d.size else 0.0


def exact_tolerance(*ops: LinOp | np.ndarray) -> float:
    """Threshold for identities that hold exactly: 1e-12 * (1 + largest entry)."""
    biggest = 0.0
    for op in ops:
        m = op.matrix if isinstance(op, LinOp) else op
        if sp.issparse(m):
            biggest = max(biggest, float(abs(m).max()) if m.nnz else 0.0)
        elif np.size(m):
            biggest = max(biggest, float(np.abs(m).max()))
    return 1e-12 * (1.0 + biggest)


def kron(S: LinOp, T: LinOp) -> LinOp:
    """Tensor product of operators on the product measure spaces."""
    if S.exponent != T.exponent or S.target.exponent != T.target.exponent:
        raise ValueError("tensor factors must share the exponent")
    src = LpSpace(S.source.measure.product(T.source.measure), S.exponent)
    tgt = LpSpace(S.target.measure.product(T.target.measure), S.target.exponent)
    if S.is_sparse or T.is_sparse:
        m = sp.kron(S.matrix, T.matrix, format="csr")
    else:
        m = np.kron(S.matrix, T.matrix)
    return LinOp(src, tgt, m)
