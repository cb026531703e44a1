"""JSON encodings for matrices, measure spaces and operators.

Floats are written with ``repr`` semantics (shortest round-trip form), which
the standard ``json`` module already uses.
"""

from __future__ import annotations

import numpy as np

from .spaces import LinOp, LpSpace, MeasureSpace, PExponent


def label_to_json(label):
    return list(label) if isinstance(label, tuple) else label


def label_from_json(label):
    if isinstance(label, list):
        return tuple(label_from_json(x) for x in label)
    return label


def matrix_to_json(m) -> dict:
    m = m.dense() if isinstance(m, LinOp) else np.asarray(m.toarray() if hasattr(m, "toarray") else m)
    m = np.asarray(m, dtype=complex)
    rows, cols = m.shape
    return {
        "rows": int(rows),
        "cols": int(cols),
        "entries": [[float(z.real), float(z.imag)] for z in m.ravel()],
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    rows, cols = int(obj["rows"]), int(obj["cols"])
    entries = obj["entries"]
    if len(entries) != rows * cols:
        raise ValueError("entry count does not match rows * cols")
    flat = np.array([complex(re, im) for re, im in entries], dtype=complex)
    return flat.reshape(rows, cols)


def measure_to_json(space: MeasureSpace) -> dict:
    return {"labels": [label_to_json(x) for x in space.labels],
            "weights": [float(w) for w in space.weights]}


def measure_from_json(obj: dict) -> MeasureSpace:
    return MeasureSpace(tuple(label_from_json(x) for x in obj["labels"]), obj["weights"])


def linop_to_json(T: LinOp) -> dict:
    return {
        "p": T.source.p,
        "source": measure_to_json(T.source.measure),
        "target": measure_to_json(T.target.measure),
        "matrix": matrix_to_json(T),
    }


def linop_from_json(obj: dict) -> LinOp:
    e = PExponent(obj["p"])
    return LinOp(LpSpace(measure_from_json(obj["source"]), e),
                 LpSpace(measure_from_json(obj["target"]), e),
                 matrix_from_json(obj["matrix"]))
