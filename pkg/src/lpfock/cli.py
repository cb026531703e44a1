"""Batch experiment runner.

``lpfock run --config sweep.yaml`` expands the parameter grid, evaluates every
grid point (optionally in a process pool), and writes a JSON-lines record per
point plus a CSV summary and one PNG per metric.  The exit status is 0 when
every record passes, 1 when some record fails and 2 for configuration or I/O
errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

SCHEMA_VERSION = 1
OUT_ENV = "LPFOCK_OUT_DIR"


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# --------------------------------------------------------------------------
# experiment kinds: required grid keys, optional grid keys with defaults,
# and tolerance defaults.
KINDS = {
    "opnorm": ({"n", "p"}, {"trials": 1, "complex": True, "cap": 6}, {"width": None}),
    "module-check": ({"module", "d", "p"}, {}, {"span": 1e-8}),
    "cstar-defect": ({"module", "d", "p"}, {"budget": 64},
                     {"defect": 1e-3, "nilpotent": 1e-6}),
    "fock-cuntz": ({"d", "N", "p"}, {"samples": 3}, {}),
    "fock-crossed": ({"algebra", "N", "p"}, {"samples": 2}, {"word": 1e-3}),
    "spatial-check": ({"p"}, {"n_source": 4, "n_target": 5, "count": 20},
                      {"perturbation": 1e-3}),
}

MODULES = ("lp-lq", "lq-lp", "matrix-algebra", "diagonal-algebra", "nilpotent", "standard")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    grid: dict
    seed: int
    tolerances: dict = field(default_factory=dict)
    out: str | None = None
    name: str = ""

    @classmethod
    def from_mapping(cls, obj) -> ExperimentConfig:
        if not isinstance(obj, dict):
            raise ConfigError("<root>", "expected a mapping")
        unknown = set(obj) - {"experiment", "grid", "seed", "tolerances", "output", "name"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        kind = obj.get("experiment")
        if kind not in KINDS:
            raise ConfigError("experiment", f"must be one of {sorted(KINDS)}")
        required, optional, tol_defaults = KINDS[kind]

        seed = obj.get("seed")
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError("seed", "an explicit integer seed is required")

        grid = obj.get("grid")
        if not isinstance(grid, dict) or not grid:
            raise ConfigError("grid", "must be a nonempty mapping")
        for key in required:
            if key not in grid:
                raise ConfigError(f"grid.{key}", "missing")
        clean = {}
        for key, vals in grid.items():
            if key not in required and key not in optional:
                raise ConfigError(f"grid.{key}", f"not a parameter of {kind}")
            vals = list(vals) if isinstance(vals, (list, tuple)) else [vals]
            if not vals:
                raise ConfigError(f"grid.{key}", "empty value list")
            clean[key] = tuple(vals)
        for v in clean.get("p", ()):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v >= 1 or math.isinf(v):
                raise ConfigError("grid.p", f"p values must be finite and >= 1, got {v!r}")
        for key in ("n", "d", "N", "n_source", "n_target", "count", "trials", "budget", "samples"):
            for v in clean.get(key, ()):
                if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                    raise ConfigError(f"grid.{key}", f"expected a nonnegative integer, got {v!r}")
        minimum = {"fock-cuntz": {"N": 1, "d": 1}, "fock-crossed": {"N": 3}, "opnorm": {"n": 1},
                   "module-check": {"d": 1}, "cstar-defect": {"d": 1}}.get(kind, {})
        for key, lo in minimum.items():
            for v in clean.get(key, ()):
                if v < lo:
                    raise ConfigError(f"grid.{key}", f"must be >= {lo}, got {v}")
        for v in clean.get("module", ()):
            if v not in MODULES:
                raise ConfigError("grid.module", f"unknown module {v!r}")
        if "algebra" in clean:
            from .fockcrossed import BUILTINS
            for v in clean["algebra"]:
                if v not in BUILTINS:
                    raise ConfigError("grid.algebra", f"unknown algebra {v!r}")

        tols = obj.get("tolerances") or {}
        if not isinstance(tols, dict):
            raise ConfigError("tolerances", "must be a mapping")
        for key, v in tols.items():
            if key not in tol_defaults:
                raise ConfigError(f"tolerances.{key}", f"not a tolerance of {kind}")
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0):
                raise ConfigError(f"tolerances.{key}", "must be a nonnegative number")
        merged = {**tol_defaults, **tols}

        out = obj.get("output")
        if isinstance(out, dict):
            out = out.get("dir")
        if out is not None and not isinstance(out, str):
            raise ConfigError("output", "must be a directory path")
        name = obj.get("name") or kind
        if not isinstance(name, str):
            raise ConfigError("name", "must be a string")
        return cls(kind, clean, seed, merged, out, name)

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from exc
        try:
            obj = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("<yaml>", str(exc)) from exc
        return cls.from_mapping(obj)

    def points(self) -> list[dict]:
        """Cartesian product of the grid, defaults filled in, in file order."""
        _, optional, _ = KINDS[self.experiment]
        keys = list(self.grid)
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            params = dict(zip(keys, combo))
            for k, v in optional.items():
                params.setdefault(k, v)
            out.append(params)
        return out


# --------------------------------------------------------------------------
def _row(metric, value, lower=None, upper=None, passed=True) -> dict:
    return {"metric": metric, "value": float(value),
            "lower": None if lower is None else float(lower),
            "upper": None if upper is None else float(upper), "pass": bool(passed)}


def _closed_form(M: np.ndarray, p: float) -> float | None:
    if p == 1.0:
        return float(np.abs(M).sum(axis=0).max())
    if p == 2.0:
        return float(np.linalg.norm(M, 2))
    return None


def run_opnorm(params, seed, tols):
    from .lpcore import LinOp, norm_bracket

    rng = np.random.default_rng(seed)
    n, p = params["n"], float(params["p"])
    rows, items = [], []
    for k in range(params["trials"]):
        M = rng.standard_normal((n, n))
        if params["complex"]:
            M = M + 1j * rng.standard_normal((n, n))
        b = norm_bracket(LinOp.from_array(M, p), cap=params["cap"])
        exact = _closed_form(M, p)
        ok = b.lower <= b.upper
        if exact is not None:
            ok = ok and b.lower <= exact <= b.upper
        if tols["width"] is not None:
            ok = ok and b.width <= tols["width"]
        items.append({"trial": k, **b.as_dict(), "closed_form": exact, "pass": ok})
        rows.append(_row("opnorm", exact if exact is not None else b.mid, b.lower, b.upper, ok))
    return {"brackets": items}, rows


def _module(name: str, d: int, p: float):
    from . import modules as md

    if name == "lp-lq":
        return md.lp_lq_module(d, p)
    if name == "lq-lp":
        return md.lq_lp_module(d, p)
    if name == "matrix-algebra":
        return md.algebra_module(md.full_matrix_algebra(d, p), f"M_{d}")
    if name == "diagonal-algebra":
        return md.algebra_module(md.diagonal_algebra(d, p), f"D_{d}")
    if name == "nilpotent":
        return md.algebra_module(md.nilpotent_algebra(p), "span E12")
    return md.standard_module(d, md.full_matrix_algebra(2, p))


def run_module_check(params, seed, tols):
    from .modules import check_module_axioms

    m = _module(params["module"], params["d"], float(params["p"]))
    rep = check_module_axioms(m, tols["span"])
    rows = [_row(cond, val, passed=rep.passed) for cond, val in rep.residuals.items()]
    return {"module": m.name, "residuals": rep.residuals, "pass": rep.passed}, rows


def run_cstar_defect(params, seed, tols):
    from .modules import cstar_defect

    name = params["module"]
    m = _module(name, params["d"], float(params["p"]))
    res = cstar_defect(m, sample_budget=params["budget"], seed=seed)
    rows = []
    for side, iv in (("defect_X", res.defect_X), ("defect_Y", res.defect_Y)):
        ok = iv.lower <= iv.upper
        if name == "nilpotent" and side == "defect_X":
            ok = ok and abs(iv.lower - 1.0) <= tols["nilpotent"] and abs(iv.upper - 1.0) <= tols["nilpotent"]
        elif name not in ("nilpotent", "standard"):
            ok = ok and iv.upper <= tols["defect"]
        rows.append(_row(side, 0.5 * (iv.lower + iv.upper), iv.lower, iv.upper, ok))
    result = {"module": m.name, "defect_X": res.defect_X.as_dict(), "defect_Y": res.defect_Y.as_dict()}
    return result, rows


def run_fock_cuntz(params, seed, tols):
    from .fockcuntz import fock_cuntz_report

    rep = fock_cuntz_report(params["d"], params["N"], float(params["p"]), seed, params["samples"])
    rel = rep["relations"]
    rows = [_row(name, r, passed=r <= rel["tolerance"]) for name, r in rel["residuals"].items()]
    rows += [_row(f"support partition j={j}", float(v["pass"]), passed=v["pass"])
             for j, v in rep["partitions"].items()]
    rows += [_row(f"norm {r['operator']}", r["closed_form"], r["lower"], r["upper"], r["pass"])
             for r in rep["norms"]]
    return rep, rows


def run_fock_crossed(params, seed, tols):
    from .fockcrossed import BUILTINS, fock_crossed_report

    system = BUILTINS[params["algebra"]](float(params["p"]))
    rep = fock_crossed_report(system, params["N"], seed, params["samples"], tols["word"])
    return rep, crossed_rows(rep)


def crossed_rows(rep: dict) -> list[dict]:
    rows = [_row(name, v["residual"], passed=v["pass"]) for name, v in rep["relations"].items()]
    rows += [_row(name, v["residual"], passed=v["pass"]) for name, v in rep["translation"].items()]
    rows += [_row(f"covariance rank n={c['n']}", c.get("rank", -1), passed=c["pass"])
             for c in rep["covariance"]]
    for w in rep["words"]:
        t, c = w["truncated"], w["closed_form"]
        rows.append(_row(f"word {w['word']}", 0.5 * (c["lower"] + c["upper"]),
                         t["lower"], t["upper"], w["pass"]))
    for g in rep["gamma0"]:
        rows.append(_row("gamma0 product residual", g["residual"], passed=g["residual"] <= g["tolerance"]))
        con = g["contractivity"]
        rows.append(_row("gamma0 norm lower vs l1 bound", con["lower"], con["lower"], con["l1_bound"],
                         con["pass"]))
    return rows


def run_spatial_check(params, seed, tols):
    from .lpcore import LinOp
    from .measure import check_spatial_algebraic, random_spatial_system, reverse, spatial_from_system

    rng = np.random.default_rng(seed)
    p = float(params["p"])
    forward = rejected = 0
    count = params["count"]
    for _ in range(count):
        sys_ = random_spatial_system(rng, params["n_source"], params["n_target"])
        s, t = spatial_from_system(sys_, p), reverse(sys_, p)
        if check_spatial_algebraic(s, t).passed:
            forward += 1
        bump = np.zeros(s.shape)
        bump[rng.integers(s.shape[0]), rng.integers(s.shape[1])] = tols["perturbation"]
        if not check_spatial_algebraic(s.with_matrix(s.dense() + bump), t).passed:
            rejected += 1
    rows = [_row("spatial pairs accepted", forward, passed=forward == count),
            _row("perturbed pairs rejected", rejected, passed=rejected == count)]
    return {"count": count, "accepted": forward, "rejected": rejected}, rows


RUNNERS: dict[str, Callable] = {
    "opnorm": run_opnorm,
    "module-check": run_module_check,
    "cstar-defect": run_cstar_defect,
    "fock-cuntz": run_fock_cuntz,
    "fock-crossed": run_fock_crossed,
    "spatial-check": run_spatial_check,
}


def point_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _evaluate(task) -> dict:
    kind, index, params, seed, tols = task
    s = point_seed(seed, index)
    result, rows = RUNNERS[kind](params, s, tols)
    passed = all(r["pass"] for r in rows) and bool(result.get("pass", True))
    return {"schema_version": SCHEMA_VERSION, "experiment": kind, "index": index,
            "params": params, "seed": s, "result": result, "metrics": rows, "pass": passed}


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, (set, frozenset, tuple)):
        return sorted(x) if isinstance(x, (set, frozenset)) else list(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"cannot serialize {type(x).__name__}")


def evaluate_grid(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    tasks = [(cfg.experiment, i, params, cfg.seed, cfg.tolerances)
             for i, params in enumerate(cfg.points())]
    if jobs <= 1 or len(tasks) <= 1:
        return [_evaluate(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_evaluate, tasks))


def csv_text(cfg: ExperimentConfig, records: list[dict]) -> str:
    keys = list(dict.fromkeys(k for r in records for k in r["params"]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", *keys, "metric", "value", "lower", "upper", "pass"])
    for rec in records:
        for row in rec["metrics"]:
            w.writerow([cfg.experiment, *(rec["params"].get(k, "") for k in keys), row["metric"],
                        repr(row["value"]), "" if row["lower"] is None else repr(row["lower"]),
                        "" if row["upper"] is None else repr(row["upper"]),
                        "true" if row["pass"] else "false"])
    return buf.getvalue()


def resolve_out(cfg: ExperimentConfig, flag: str | None) -> Path:
    return Path(flag or os.environ.get(OUT_ENV) or cfg.out or "out")


def run(cfg: ExperimentConfig, out: Path, jobs: int = 1, plots: bool = True) -> int:
    records = evaluate_grid(cfg, jobs)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{cfg.name}.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, default=_jsonable) + "\n")
    (out / f"{cfg.name}.csv").write_text(csv_text(cfg, records))
    if plots:
        from .plotting import render

        rows = [{**row, "params": rec["params"]} for rec in records for row in rec["metrics"]]
        render(cfg.name, rows, out / "figures")
    failed = [r for r in records if not r["pass"]]
    print(f"{cfg.name}: {len(records) - len(failed)}/{len(records)} grid points pass -> {out}")
    return 0 if not failed else 1


# --------------------------------------------------------------------------
def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = ExperimentConfig(cfg.experiment, cfg.grid, args.seed, cfg.tolerances, cfg.out, cfg.name)
    return run(cfg, resolve_out(cfg, args.out), args.jobs, not args.no_plots)


def _emit(report: dict, out: str | None, stem: str) -> int:
    text = json.dumps(report, default=_jsonable, indent=2)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / f"{stem}.json").write_text(text + "\n")
    else:
        print(text)
    return 0 if report["pass"] else 1


def _cmd_fock_cuntz(args) -> int:
    from .fockcuntz import fock_cuntz_report

    if args.p < 1:
        raise ConfigError("--p", "must be >= 1")
    rep = fock_cuntz_report(args.d, args.levels, args.p, args.seed)
    return _emit(rep, args.out, f"fock-cuntz-d{args.d}-N{args.levels}")


def _load_json(path: str, flag: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(flag, str(exc)) from exc


def _cmd_fock_crossed(args) -> int:
    from .fockcrossed import BUILTINS, fock_crossed_report, system_from_json

    if args.p < 1:
        raise ConfigError("--p", "must be >= 1")
    if args.algebra in BUILTINS and args.phi is None:
        system = BUILTINS[args.algebra](args.p)
    else:
        if args.phi is None:
            raise ConfigError("--phi", "required unless --algebra names a built-in system")
        try:
            system = system_from_json(_load_json(args.algebra, "--algebra"),
                                      _load_json(args.phi, "--phi"), args.p)
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("--algebra/--phi", str(exc)) from exc
    rep = fock_crossed_report(system, args.levels, args.seed)
    return _emit(rep, args.out, f"fock-crossed-{system.name or 'system'}-N{args.levels}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpfock", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configured parameter sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV}, config, ./out)")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed", type=int, help="override the configured seed")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("fock-cuntz", help="Leavitt relations and norms on one truncation")
    c.add_argument("--d", type=int, required=True)
    c.add_argument("--levels", type=int, required=True)
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=_cmd_fock_cuntz)

    x = sub.add_parser("fock-crossed", help="crossed-product truncation report")
    x.add_argument("--algebra", required=True, help="algebra JSON file or a built-in name (diag_3, M_2)")
    x.add_argument("--phi", help="automorphism JSON file")
    x.add_argument("--levels", type=int, required=True)
    x.add_argument("--p", type=float, required=True)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out")
    x.set_defaults(func=_cmd_fock_crossed)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
