"""Set transformations of finite measure spaces and spatial partial isometries.

All spaces are finite with strictly positive weights, so "almost everywhere"
statements reduce to statements about every point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .lpcore import (
    LinOp,
    LpSpace,
    MeasureSpace,
    NormBracket,
    PExponent,
    as_exponent,
    measure_from_json,
    measure_to_json,
    norm_bracket,
    residual,
)
from .lpcore.serialize import label_from_json, label_to_json

NORM_REJECT = 1.0 + 1e-8


@dataclass(frozen=True, eq=False)
class SetTransformation:
    """An injection from a subset of ``source`` labels into ``target`` labels."""

    source: MeasureSpace
    target: MeasureSpace
    mapping: Mapping

    def __post_init__(self):
        mapping = dict(self.mapping)
        for a, b in mapping.items():
            if a not in self.source:
                raise ValueError(f"{a!r} is not a source label")
            if b not in self.target:
                raise ValueError(f"{b!r} is not a target label")
        if len(set(mapping.values())) != len(mapping):
            raise ValueError("set transformation must be injective")
        # keep source order for determinism
        ordered = {a: mapping[a] for a in self.source.labels if a in mapping}
        object.__setattr__(self, "mapping", ordered)

    @property
    def domain(self) -> tuple:
        return tuple(self.mapping)

    @property
    def image(self) -> tuple:
        return tuple(self.mapping.values())

    def inverse(self) -> SetTransformation:
        return SetTransformation(self.target, self.source, {b: a for a, b in self.mapping.items()})


def pushforward_density(S: SetTransformation) -> dict:
    """h(w) = mu(S^-1 w) / nu(w) for each w in the image of S."""
    mu, nu = S.source, S.target
    return {b: mu.weights[mu.index(a)] / nu.weights[nu.index(b)] for a, b in S.mapping.items()}


@dataclass(frozen=True, eq=False)
class SpatialSystem:
    """Domain E, range set F, injection S: E -> F and a unimodular weight g on F."""

    transform: SetTransformation
    F: tuple
    g: Mapping

    def __post_init__(self):
        F = tuple(self.F)
        tgt = self.transform.target
        for b in F:
            if b not in tgt:
                raise ValueError(f"{b!r} is not a target label")
        if not set(self.transform.image) <= set(F):
            raise ValueError("the image of S must lie in F")
        g = {b: complex(self.g[b]) for b in F}
        if any(abs(abs(z) - 1.0) > 1e-12 for z in g.values()):
            raise ValueError("g must be unimodular")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "g", g)

    @property
    def E(self) -> tuple:
        return self.transform.domain

    @property
    def is_spatial(self) -> bool:
        """True when S maps E onto F (otherwise the system is only semispatial)."""
        return set(self.transform.image) == set(self.F)


def spatial_from_system(sys: SpatialSystem, p: PExponent | float) -> LinOp:
    """The operator xi -> h^(1/p) * (xi o S^-1) * g on F, and 0 off F."""
    e = as_exponent(p)
    S = sys.transform
    h = pushforward_density(S)
    M = np.zeros((S.target.dim, S.source.dim), dtype=complex)
    for a, b in S.mapping.items():
        M[S.target.index(b), S.source.index(a)] = h[b] ** (1.0 / e.p) * sys.g[b]
    return LinOp(LpSpace(S.source, e), LpSpace(S.target, e), M)


def reverse_system(sys: SpatialSystem) -> SpatialSystem:
    if not sys.is_spatial:
        raise ValueError("only spatial systems (S onto F) have a reverse")
    S = sys.transform
    g_back = {a: 1.0 / sys.g[b] for a, b in S.mapping.items()}
    return SpatialSystem(S.inverse(), S.domain, g_back)


def reverse(sys: SpatialSystem, p: PExponent | float) -> LinOp:
    return spatial_from_system(reverse_system(sys), p)


def is_multiplication_idempotent(e: LinOp, tol: float = 1e-10) -> frozenset | None:
    """Support of ``e`` when it is a 0/1 diagonal (within ``tol``), else None."""
    if e.source.measure != e.target.measure:
        return None
    M = e.matrix
    if sp.issparse(M):
        C = sp.coo_matrix(M)
        off = C.row != C.col
        if off.any() and np.abs(C.data[off]).max() > tol:
            return None
        diag = M.diagonal()
    else:
        diag = np.diagonal(M)
        off = M - np.diag(diag)
        if off.size and np.abs(off).max() > tol:
            return None
    ones = np.abs(diag - 1.0) <= tol
    zeros = np.abs(diag) <= tol
    if not np.all(ones | zeros):
        return None
    labels = e.source.measure.labels
    return frozenset(labels[i] for i in np.flatnonzero(ones))


def multiplication(space: LpSpace, subset) -> LinOp:
    """m(chi_subset) as a sparse diagonal operator."""
    subset = set(subset)
    diag = np.array([1.0 if lab in subset else 0.0 for lab in space.measure.labels])
    return LinOp(space, space, sp.diags(diag, format="csr", dtype=complex))


SPATIAL = "spatial-partial-isometry"
IDEMPOTENT = "multiplication-idempotent"
NEITHER = "neither"


class WitnessError(ValueError):
    """A classification witness failed to satisfy the relations it certifies."""


@dataclass(frozen=True, eq=False)
class SpatialClassification:
    verdict: str
    witness: object = None
    failures: tuple = ()
    residuals: dict = field(default_factory=dict)
    norms: dict = field(default_factory=dict)
    s: LinOp | None = field(default=None, repr=False)
    tol: float = 1e-10

    def __post_init__(self):
        if self.verdict not in (SPATIAL, IDEMPOTENT, NEITHER):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == SPATIAL and self.s is not None:
            t, e, f = self.witness
            s = self.s
            checks = (residual(s @ t, f), residual(t @ s, e), residual(f @ s @ e, s),
                      residual(e @ t @ f, t))
            if (max(checks) > self.tol or is_multiplication_idempotent(e, self.tol) is None
                    or is_multiplication_idempotent(f, self.tol) is None):
                raise WitnessError("witness does not satisfy the spatial relations")
        if self.verdict == IDEMPOTENT and self.s is not None:
            if is_multiplication_idempotent(self.s, self.tol) != self.witness:
                raise WitnessError("witness is not the support of the idempotent")

    @property
    def passed(self) -> bool:
        return self.verdict == SPATIAL


def check_spatial_algebraic(s: LinOp, t: LinOp, tol: float = 1e-10,
                            norm_kw: dict | None = None) -> SpatialClassification:
    """Test the algebraic characterisation of spatial partial isometries.

    With f = st and e = ts the conditions are: e and f are multiplication
    idempotents, fse = s, etf = t, and ||s||, ||t|| <= 1.  A norm condition
    fails only when the certified lower bound exceeds 1 + 1e-8.
    """
    norm_kw = norm_kw or {}
    f = s @ t
    e = t @ s
    failures = []
    res = {}
    if is_multiplication_idempotent(f, tol) is None:
        failures.append("st-not-multiplication-idempotent")
    if is_multiplication_idempotent(e, tol) is None:
        failures.append("ts-not-multiplication-idempotent")
    res["fse-s"] = residual(f @ s @ e, s)
    res["etf-t"] = residual(e @ t @ f, t)
    if res["fse-s"] > tol:
        failures.append("fse!=s")
    if res["etf-t"] > tol:
        failures.append("etf!=t")
    norms: dict[str, NormBracket] = {"s": norm_bracket(s, **norm_kw), "t": norm_bracket(t, **norm_kw)}
    if norms["s"].lower > NORM_REJECT:
        failures.append("norm(s)>1")
    if norms["t"].lower > NORM_REJECT:
        failures.append("norm(t)>1")
    if not failures:
        return SpatialClassification(SPATIAL, (t, e, f), (), res, norms, s, tol)
    support = (is_multiplication_idempotent(s, tol)
               if s.source.measure == s.target.measure else None)
    if support is not None:
        return SpatialClassification(IDEMPOTENT, support, tuple(failures), res, norms, s, tol)
    return SpatialClassification(NEITHER, None, tuple(failures), res, norms, s, tol)


# --------------------------------------------------------------------------
def system_to_json(sys: SpatialSystem) -> dict:
    S = sys.transform
    return {
        "E": [label_to_json(a) for a in S.domain],
        "F": [label_to_json(b) for b in sys.F],
        "map": [[label_to_json(a), label_to_json(b)] for a, b in S.mapping.items()],
        "g": [[sys.g[b].real, sys.g[b].imag] for b in sys.F],
        "source": measure_to_json(S.source),
        "target": measure_to_json(S.target),
    }


def system_from_json(obj: dict) -> SpatialSystem:
    E = [label_from_json(a) for a in obj["E"]]
    F = [label_from_json(b) for b in obj["F"]]
    source = measure_from_json(obj["source"]) if "source" in obj else MeasureSpace.counting(E)
    target = measure_from_json(obj["target"]) if "target" in obj else MeasureSpace.counting(F)
    mapping = {label_from_json(a): label_from_json(b) for a, b in obj["map"]}
    if set(mapping) != set(E):
        raise ValueError("map domain differs from E")
    g = {b: complex(re, im) for b, (re, im) in zip(F, obj["g"])}
    return SpatialSystem(SetTransformation(source, target, mapping), F, g)


def random_spatial_system(rng: np.random.Generator, n_source: int = 4, n_target: int = 5,
                          spatial: bool = True) -> SpatialSystem:
    """Random weights, a random injection on a random domain, random phases."""
    k = int(rng.integers(1, min(n_source, n_target) + 1))
    source = MeasureSpace(range(1, n_source + 1), rng.uniform(0.2, 3.0, n_source))
    target = MeasureSpace(range(1, n_target + 1), rng.uniform(0.2, 3.0, n_target))
    dom = sorted(rng.choice(n_source, size=k, replace=False) + 1)
    img = rng.choice(n_target, size=k, replace=False) + 1
    mapping = {int(a): int(b) for a, b in zip(dom, img)}
    F = set(mapping.values())
    if not spatial:
        extra = [b for b in target.labels if b not in F]
        if extra:
            F.add(int(rng.choice(extra)))
    F = tuple(sorted(F))
    g = {b: np.exp(2j * np.pi * rng.uniform()) for b in F}
    return SpatialSystem(SetTransformation(source, target, mapping), F, g)
