"""Level-truncated Fock space over (l^p_d, l^q_d) and its Cuntz-Toeplitz operators.

The truncated index set is the disjoint union of {1..d^n} for n = 0..N,
flattened level-major and slot-minor.  Level n starts at flat offset
1 + d + ... + d^(n-1).  Slots are 1-based and flat indices 0-based.

Every operator carries a *window*: the largest input level on which the
truncated matrix agrees with the untruncated operator.  Identities are only
compared on columns inside the window.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from numbers import Number
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .lpcore import (
    LinOp,
    LpSpace,
    MeasureSpace,
    NormBracket,
    PExponent,
    as_exponent,
    exact_tolerance,
    norm_bracket,
    vec_pnorm,
)


class CertificateError(AssertionError):
    """A claimed exact identity failed on the valid window."""


# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class LeveledOp:
    """A truncated operator with its level shift and valid window.

    ``shift`` is the largest amount by which the operator raises levels
    (negative for lowering operators); ``window`` is the largest input level
    on which it is faithful.  ``levels`` gives the level of each flat index.
    """

    op: LinOp
    shift: int
    window: int
    levels: np.ndarray = field(repr=False)

    @property
    def matrix(self):
        return self.op.matrix

    def _compatible(self, other: LeveledOp):
        if other.op.source != self.op.source or other.op.target != self.op.target:
            raise ValueError("operators live on different truncations")

    def __matmul__(self, other: LeveledOp) -> LeveledOp:
        if not isinstance(other, LeveledOp):
            return NotImplemented
        return LeveledOp(self.op @ other.op, self.shift + other.shift,
                         min(other.window, self.window - other.shift), self.levels)

    def __add__(self, other: LeveledOp) -> LeveledOp:
        if not isinstance(other, LeveledOp):
            return NotImplemented
        self._compatible(other)
        return LeveledOp(self.op + other.op, max(self.shift, other.shift),
                         min(self.window, other.window), self.levels)

    def __sub__(self, other: LeveledOp) -> LeveledOp:
        return self + (-1.0) * other

    def __neg__(self) -> LeveledOp:
        return (-1.0) * self

    def __mul__(self, z) -> LeveledOp:
        if not isinstance(z, Number):
            return NotImplemented
        return LeveledOp(complex(z) * self.op, self.shift, self.window, self.levels)

    __rmul__ = __mul__

    def window_columns(self, window: int | None = None) -> np.ndarray:
        w = self.window if window is None else window
        return np.flatnonzero(self.levels <= w)

    def on_window(self, window: int | None = None):
        """Matrix restricted to the columns inside the window."""
        cols = self.window_columns(window)
        M = self.op.matrix
        return M[:, cols] if sp.issparse(M) else np.asarray(M)[:, cols]

    def dense(self) -> np.ndarray:
        return self.op.dense()

    def window_residual(self, other: LeveledOp) -> float:
        """Largest entry of self - other on the common window."""
        self._compatible(other)
        w = min(self.window, other.window)
        if w < 0:
            raise ValueError("the common window is empty")
        D = self.on_window(w) - other.on_window(w)
        if sp.issparse(D):
            D = sp.csr_matrix(D)
            return float(abs(D).max()) if D.nnz else 0.0
        return float(np.abs(D).max()) if D.size else 0.0

    def window_tolerance(self, other: LeveledOp) -> float:
        return exact_tolerance(self.op, other.op)


def restricted_norm(A: LeveledOp, **kw) -> NormBracket:
    """Norm bracket of the operator restricted to vectors supported in its window."""
    cols = A.window_columns()
    src = A.op.source
    M = A.on_window()
    sub = MeasureSpace([src.measure.labels[i] for i in cols], src.measure.weights[cols])
    return norm_bracket(LinOp(LpSpace(sub, src.exponent), A.op.target, M), **kw)


# --------------------------------------------------------------------------
@dataclass(frozen=True)
class FockIndex:
    d: int
    N: int

    def __post_init__(self):
        if self.d < 1 or self.N < 0:
            raise ValueError("need d >= 1 and N >= 0")

    @functools.cached_property
    def offsets(self) -> tuple:
        out, acc = [], 0
        for n in range(self.N + 1):
            out.append(acc)
            acc += self.d ** n
        return tuple(out)

    @property
    def dim(self) -> int:
        return self.offsets[-1] + self.d ** self.N

    def level_size(self, n: int) -> int:
        return self.d ** n

    def flat(self, level: int, slot: int) -> int:
        if not 0 <= level <= self.N or not 1 <= slot <= self.d ** level:
            raise IndexError(f"(level {level}, slot {slot}) outside the truncation")
        return self.offsets[level] + slot - 1

    def level_slot(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.dim:
            raise IndexError(k)
        n = int(np.searchsorted(self.offsets, k, side="right")) - 1
        return n, k - self.offsets[n] + 1

    @functools.cached_property
    def levels(self) -> np.ndarray:
        lv = np.repeat(np.arange(self.N + 1), [self.d ** n for n in range(self.N + 1)])
        lv.setflags(write=False)
        return lv

    @functools.cached_property
    def labels(self) -> tuple:
        return tuple((n, s) for n in range(self.N + 1) for s in range(1, self.d ** n + 1))

    def space(self, p: PExponent | float = 2.0) -> LpSpace:
        return _fock_space(self.d, self.N, as_exponent(p).p)


@functools.lru_cache(maxsize=64)
def _fock_space(d: int, N: int, p: float) -> LpSpace:
    idx = FockIndex(d, N)
    return LpSpace(MeasureSpace.counting(idx.labels), PExponent(p))


def _leveled(idx: FockIndex, p, rows, cols, vals, shift: int, window: int) -> LeveledOp:
    space = idx.space(p)
    M = sp.csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(idx.dim, idx.dim))
    M.eliminate_zeros()
    return LeveledOp(LinOp(space, space, M), shift, window, idx.levels)


def _vector(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=complex).reshape(-1)
    if x.size != d:
        raise ValueError(f"expected a vector of length {d}, got {x.size}")
    return x


def creation(x, idx: FockIndex, p: PExponent | float = 2.0) -> LeveledOp:
    """c(x): level-n slot w goes to sum_j x_j e_(n+1, (j-1) d^n + w); level N is dropped."""
    if idx.N < 1:
        raise ValueError("creation needs N >= 1")
    x = _vector(x, idx.d)
    d, rows, cols, vals = idx.d, [], [], []
    for n in range(idx.N):
        size = d ** n
        w = np.arange(size)
        for j in range(d):
            rows.append(idx.offsets[n + 1] + j * size + w)
            cols.append(idx.offsets[n] + w)
            vals.append(np.full(size, x[j]))
    return _leveled(idx, p, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                    1, idx.N - 1)


def annihilation(y, idx: FockIndex, p: PExponent | float = 2.0) -> LeveledOp:
    """v(y): level-n slot (j-1) d^(n-1) + w goes to y_j e_(n-1, w); level 0 goes to 0."""
    if idx.N < 1:
        raise ValueError("annihilation needs N >= 1")
    y = _vector(y, idx.d)
    d, rows, cols, vals = idx.d, [], [], []
    for n in range(1, idx.N + 1):
        size = d ** (n - 1)
        s = np.arange(d ** n)
        rows.append(idx.offsets[n - 1] + s % size)
        cols.append(idx.offsets[n] + s)
        vals.append(y[s // size])
    return _leveled(idx, p, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                    -1, idx.N)


def phi_inf(z: complex, idx: FockIndex, p: PExponent | float = 2.0) -> LeveledOp:
    k = np.arange(idx.dim)
    return _leveled(idx, p, k, k, np.full(idx.dim, complex(z)), 0, idx.N)


def identity(idx: FockIndex, p: PExponent | float = 2.0) -> LeveledOp:
    return phi_inf(1.0, idx, p)


def theta_lift(k, idx: FockIndex, p: PExponent | float = 2.0) -> LeveledOp:
    """Theta(k): k on the first tensor factor at every level >= 1, zero on level 0."""
    K = np.asarray(k.dense() if isinstance(k, LinOp) else k, dtype=complex)
    if K.shape != (idx.d, idx.d):
        raise ValueError("k must be a d x d matrix")
    blocks = [sp.csr_matrix((1, 1), dtype=complex)]
    for n in range(1, idx.N + 1):
        blocks.append(sp.kron(sp.csr_matrix(K), sp.identity(idx.d ** (n - 1)), format="csr"))
    M = sp.block_diag(blocks, format="coo")
    return _leveled(idx, p, M.row, M.col, M.data, 0, idx.N)


def level_projector(levels: Iterable[int], idx: FockIndex, p: PExponent | float = 2.0) -> LeveledOp:
    mask = np.isin(idx.levels, list(levels))
    k = np.flatnonzero(mask)
    return _leveled(idx, p, k, k, np.ones(k.size), 0, idx.N)


def theta_iota(idx: FockIndex, p: PExponent | float = 2.0) -> LeveledOp:
    """Rank-one projection onto the vacuum (level 0)."""
    return level_projector([0], idx, p)


# --------------------------------------------------------------------------
@dataclass
class LeavittReport:
    d: int
    N: int
    residuals: dict
    tolerance: float
    defect_rank: int
    windows: dict

    @property
    def passed(self) -> bool:
        return all(r <= self.tolerance for r in self.residuals.values())

    def as_dict(self) -> dict:
        return {"d": self.d, "N": self.N, "residuals": self.residuals,
                "tolerance": self.tolerance, "defect": {"name": "theta_iota_iota",
                                                        "rank": self.defect_rank},
                "windows": self.windows, "pass": self.passed}


REL1 = "v_j c_j = id"
REL2 = "v_k c_j = 0 (j != k)"
REL3 = "sum_j c_j v_j = id - theta_iota"


def leavitt_residuals(cs: Sequence[LeveledOp], vs: Sequence[LeveledOp], idx: FockIndex,
                      p: PExponent | float = 2.0) -> tuple[dict, dict]:
    """Largest window residual of each Leavitt relation for given generators."""
    one = identity(idx, p)
    r1 = r2 = 0.0
    w = {}
    for j, c in enumerate(cs):
        for k, v in enumerate(vs):
            prod = v @ c
            if prod.window < 0:
                raise ValueError("empty window")
            if j == k:
                r1 = max(r1, prod.window_residual(one))
                w[REL1] = prod.window
            else:
                r2 = max(r2, prod.window_residual(0.0 * one))
                w[REL2] = prod.window
    total = cs[0] @ vs[0]
    for c, v in zip(cs[1:], vs[1:]):
        total = total + c @ v
    r3 = total.window_residual(one - theta_iota(idx, p))
    w[REL3] = total.window
    res = {REL1: r1, REL3: r3}
    if len(cs) > 1:
        res[REL2] = r2
    return res, w


def standard_generators(idx: FockIndex, p: PExponent | float = 2.0):
    I = np.eye(idx.d)
    return ([creation(I[j], idx, p) for j in range(idx.d)],
            [annihilation(I[j], idx, p) for j in range(idx.d)])


def leavitt_check(idx: FockIndex, p: PExponent | float = 2.0) -> LeavittReport:
    """Verify the three Leavitt relations on the valid window.

    The third relation holds up to the rank-one vacuum projection, which is
    reported as the explicit finite-rank defect.
    """
    cs, vs = standard_generators(idx, p)
    res, windows = leavitt_residuals(cs, vs, idx, p)
    defect = theta_iota(idx, p)
    rank = int(np.linalg.matrix_rank(defect.dense())) if idx.dim <= 400 else int(defect.op.matrix.nnz)
    return LeavittReport(idx.d, idx.N, res, exact_tolerance(cs[0].op), rank, windows)


# --------------------------------------------------------------------------
def support_sets(j: int, idx: FockIndex) -> dict:
    """Slots (j-1) d^(n-1) + 1 .. j d^(n-1) at each level n = 1..N."""
    if not 1 <= j <= idx.d:
        raise ValueError("slot out of range")
    return {n: frozenset(range((j - 1) * idx.d ** (n - 1) + 1, j * idx.d ** (n - 1) + 1))
            for n in range(1, idx.N + 1)}


def flat_support(sets: dict, idx: FockIndex) -> list:
    return sorted(idx.flat(n, s) for n, slots in sets.items() for s in slots)


def support_partition(j: int, idx: FockIndex, p: PExponent | float = 2.0) -> dict:
    """Support of the range projection c(delta_j) v(delta_j), by level.

    Raises CertificateError unless c(delta_j) v(delta_j) is exactly the 0/1
    diagonal with this support on the window.
    """
    sets = support_sets(j, idx)
    e = np.zeros(idx.d)
    e[j - 1] = 1.0
    proj = creation(e, idx, p) @ annihilation(e, idx, p)
    diag = np.zeros(idx.dim)
    diag[flat_support(sets, idx)] = 1.0
    expected = _leveled(idx, p, np.arange(idx.dim), np.arange(idx.dim), diag, 0, idx.N)
    if proj.window_residual(expected) != 0.0:
        raise CertificateError(f"c(delta_{j}) v(delta_{j}) is not the expected diagonal projection")
    return sets


# --------------------------------------------------------------------------
def _parse_token(tok, d: int) -> tuple[str, int]:
    if isinstance(tok, str):
        kind, j = tok[0], int(tok[1:])
    else:
        kind, j = tok[0], int(tok[1])
    if kind not in ("c", "v") or not 1 <= j <= d:
        raise ValueError(f"bad word letter {tok!r}")
    return kind, j


def word_eval(word: Sequence, idx: FockIndex, p: PExponent | float = 2.0) -> LeveledOp:
    """Product of c(delta_j) / v(delta_j) letters, written left to right.

    Letters are strings like ``"c1"``, ``"v2"`` or pairs ``("c", 1)``.
    """
    I = np.eye(idx.d)
    out = identity(idx, p)
    for tok in word:
        kind, j = _parse_token(tok, idx.d)
        op = creation(I[j - 1], idx, p) if kind == "c" else annihilation(I[j - 1], idx, p)
        out = out @ op
        if out.window < 0:
            raise ValueError(f"the word {list(word)!r} has an empty window at N = {idx.N}")
    return out


# --------------------------------------------------------------------------
def fock_cuntz_report(d: int, N: int, p: float, seed: int = 0, samples: int = 3) -> dict:
    """Relations, support partitions and norm brackets for one truncation."""
    idx = FockIndex(d, N)
    e = PExponent(p)
    leav = leavitt_check(idx, e)
    partitions = {}
    for j in range(1, d + 1):
        try:
            sets = support_partition(j, idx, e)
            partitions[str(j)] = {"levels": {str(n): sorted(s) for n, s in sets.items()}, "pass": True}
        except CertificateError:
            partitions[str(j)] = {"levels": {}, "pass": False}
    rng = np.random.default_rng(seed)
    norms = []
    for _ in range(samples):
        x = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        y = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        bc = norm_bracket(creation(x, idx, e).op)
        bv = norm_bracket(annihilation(y, idx, e).op)
        norms.append({"operator": "c(x)", "closed_form": vec_pnorm(x, e.p), **bc.as_dict()})
        norms.append({"operator": "v(y)", "closed_form": vec_pnorm(y, e.q), **bv.as_dict()})
    for rec in norms:
        rec["pass"] = bool(rec["lower"] <= rec["closed_form"] <= rec["upper"])
    return {
        "d": d, "N": N, "p": e.p,
        "relations": leav.as_dict(),
        "partitions": partitions,
        "norms": norms,
        "pass": bool(leav.passed and all(v["pass"] for v in partitions.values())
                     and all(r["pass"] for r in norms)),
    }
