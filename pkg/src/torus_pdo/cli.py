"""Batch front-end: ``torus-pdo <command> --config cfg.json --out dir``.

Every command reads a JSON config, writes CSV artifacts, a JSON report
and a run manifest (input hashes, versions, wall time, seed, threads).
Exit status: 0 success, 2 usage or config error, 3 numerical
precondition failure, 1 internal error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

COMMANDS = [
    "quantize-apply",
    "extract",
    "extend-roundtrip",
    "periodize",
    "compose-order",
    "adjoint-check",
    "parametrix",
    "fso-apply",
    "fso-compose",
    "l2-bounds",
    "evolve",
    "wavefront",
    "taylor-suite",
]

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

_INT = {"type": "integer"}
_POS = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_STR = {"type": "string", "minLength": 1}

BASE = {
    "command": {"enum": COMMANDS},
    "n": {"type": "integer", "minimum": 1, "maximum": 3},
    "K": _POS,
    "margin": {"type": "integer", "minimum": 0},
    "N": _POS,
    "seed": {"type": "integer", "minimum": 0},
    "out": _STR,
}

SPECIFIC = {
    "quantize-apply": {"symbol": _STR, "f": _STR, "out_K": _POS},
    "extract": {"symbol": _STR},
    "extend-roundtrip": {"symbols": {"type": "array", "items": _STR, "minItems": 1}, "H": _POS},
    "periodize": {"widths": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1}},
    "compose-order": {"Ms": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 4}, "minItems": 1},
                      "shells": {"type": "array", "items": _POS, "minItems": 4}},
    "adjoint-check": {"pairs": _POS},
    "parametrix": {
        "symbol": _STR,
        "order": _NUM,
        "terms": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["order", "symbol"], "additionalProperties": False,
            "properties": {"order": _NUM, "symbol": _STR}}},
        "M": {"type": "integer", "minimum": 1, "maximum": 4},
        "N0": {"type": "number", "minimum": 0},
    },
    "fso-apply": {"phase": _STR, "amplitude": _STR, "f": _STR, "out_K": _POS},
    "fso-compose": {"t": _NUM},
    "l2-bounds": {"symbol": _STR, "count": _POS, "max_iter": _POS},
    "evolve": {
        "a1": _STR,
        "a0": _STR,
        "f": _STR,
        "times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "M": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 4}},
        "a0_K": _POS,
    },
    "wavefront": {
        "u": _STR,
        "symbol": _STR,
        "s_star": _NUM,
        "half_angle_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 90},
        "cells": _POS,
        "power": _POS,
        "count": _POS,
    },
    "taylor-suite": {"instances": _POS, "M_max": {"type": "integer", "minimum": 1, "maximum": 4}},
}

# keys that name input files when they end in one of these suffixes
FILE_SUFFIXES = (".csv",)
FILE_KEYS = ("f", "u", "symbol", "amplitude")


class UsageError(Exception):
    pass


def schema_for(command: str) -> dict:
    return {
        "type": "object",
        "required": ["command"],
        "additionalProperties": False,
        "properties": {**BASE, **SPECIFIC.get(command, {})},
    }


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def load_config(path: Path, command: str | None) -> dict:
    import jsonschema

    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path} at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    if command is not None:
        if "command" in cfg and cfg["command"] != command:
            raise UsageError(f"config key /command is {cfg['command']!r} but {command!r} was requested")
        cfg.setdefault("command", command)
    if cfg.get("command") not in COMMANDS:
        raise UsageError(f"config key /command: expected one of {', '.join(COMMANDS)}")
    validator = jsonschema.Draft202012Validator(schema_for(cfg["command"]))
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = _pointer(list(e.absolute_path))
        if e.validator == "additionalProperties":
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            where = _pointer(list(e.absolute_path) + extra[:1])
            raise UsageError(f"config key {where}: unknown key for {cfg['command']}")
        raise UsageError(f"config key {where}: {e.message}")
    return cfg


def referenced_files(cfg: dict, base: Path) -> dict:
    """Map config keys naming files to resolved paths; missing files are usage errors."""
    out = {}
    for key in FILE_KEYS:
        v = cfg.get(key)
        if isinstance(v, str) and v.endswith(FILE_SUFFIXES):
            p = (base / v).resolve() if not os.path.isabs(v) else Path(v)
            if not p.is_file():
                raise UsageError(f"config key /{key}: file {v} does not exist")
            out[key] = p
    return out


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def set_threads(k: int | None) -> int | None:
    if k is None:
        env = os.environ.get("TORUS_PDO_THREADS")
        if env:
            try:
                k = int(env)
            except ValueError as exc:
                raise UsageError(f"TORUS_PDO_THREADS must be an integer, got {env!r}") from exc
    if k is not None:
        if k < 1:
            raise UsageError("thread count must be positive")
        for var in THREAD_VARS:
            os.environ[var] = str(k)
    return k


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return f"{v.real!r}{v.imag:+}j"
    return v


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


class Run:
    """Per-invocation context: config, output directory, artifacts."""

    def __init__(self, cfg: dict, out: Path, files: dict, seed: int):
        self.cfg = cfg
        self.out = out
        self.files = files
        self.seed = seed
        self.artifacts = []
        self.report = {"command": cfg["command"]}

    def get(self, key, default=None):
        return self.cfg.get(key, default)

    def box(self, K_default=32, n_default=1, margin_default=0):
        from .lattice import FrequencyBox

        return FrequencyBox(self.get("n", n_default), self.get("K", K_default), self.get("margin", margin_default))

    def expr(self, key, text=None):
        from .errors import ExpressionError
        from .expr import parse_expression

        try:
            return parse_expression(self.cfg[key] if text is None else text, self.get("n", 1))
        except ExpressionError as exc:
            raise UsageError(f"config key /{key}: {exc}") from exc

    def grid_function(self, key, box, N=None):
        from .harmonic import read_grid_function

        if key in self.files:
            u = read_grid_function(self.files[key], N)
            if u.n != box.n:
                raise UsageError(f"config key /{key}: file dimension {u.n} differs from n = {box.n}")
            return u
        return self.expr(key).grid_function(box, N)

    def symbol(self, key, box, N=None, **kw):
        from .symbols import read_symbol_table

        if key in self.files:
            return read_symbol_table(self.files[key])
        return self.expr(key).symbol(box, N, **kw)

    def csv(self, name, header, rows):
        p = self.out / name
        _write_rows(p, header, rows)
        self.artifacts.append(name)

    def grid_csv(self, name, u):
        from .harmonic import write_grid_function

        write_grid_function(u, self.out / name)
        self.artifacts.append(name)

    def outcome(self, o, prefix=""):
        name = f"{prefix}{o.name.replace(' ', '_').replace('-', '_')}.csv"
        if o.rows:
            self.csv(name, o.header, o.rows)
        self.report.setdefault("suites", []).append(o.to_dict())
        for c in o.checks:
            print(c.line())


# ---------------------------------------------------------------- commands


def cmd_quantize_apply(run: Run):
    from .experiments import quantization_exactness
    from .quantize import apply_pdo

    if "symbol" not in run.cfg:
        run.outcome(quantization_exactness(run.get("K", 32), run.seed))
        return
    if "f" not in run.cfg:
        raise UsageError("config key /f: required when /symbol is given")
    box = run.box()
    u = run.grid_function("f", box, run.get("N"))
    a = run.symbol("symbol", box if box.L >= u.box.L else u.box, run.get("N"))
    out_box = type(box)(box.n, run.get("out_K", box.L))
    Au = apply_pdo(a, u, out_box)
    run.grid_csv("result.csv", Au)
    run.report.update({"norm_in": u.norm(), "norm_out": Au.norm(), "truncated_mass": Au.truncated_mass})


def cmd_extract(run: Run):
    import numpy as np

    from .quantize import extract_symbol, pdo_operator
    from .symbols import write_symbol_table

    if "symbol" not in run.cfg:
        raise UsageError("config key /symbol: required")
    box = run.box()
    a = run.symbol("symbol", box, run.get("N"))
    band = a.x_band()
    core = type(box)(box.n, box.K)
    s = extract_symbol(pdo_operator(a, core, core.grown(band)), core, a.N)
    write_symbol_table(s, run.out / "symbol.csv")
    run.artifacts += ["symbol.csv", "symbol.json"]
    run.report.update({"x_band": band, "max_abs_error": float(np.max(np.abs(s.values - a.on_box(core))))})


def cmd_extend_roundtrip(run: Run):
    from .experiments import DEFAULT_EXTEND, extend_roundtrip, kernel_check

    run.outcome(kernel_check(run.get("H", 12), seed=run.seed))
    run.outcome(extend_roundtrip(run.get("symbols", DEFAULT_EXTEND), run.get("K", 32), run.get("n", 1), run.get("N")))


def cmd_periodize(run: Run):
    from .experiments import periodization_check

    run.outcome(periodization_check(tuple(run.get("widths", (0.3, 0.5, 1.0, 1.5, 2.0))), run.get("K", 16)))


def cmd_compose_order(run: Run):
    from .experiments import compose_order

    run.outcome(compose_order(run.get("K", 64), tuple(run.get("Ms", (1, 2, 3))), tuple(run.get("shells", (8, 16, 32, 64)))))


def cmd_adjoint_check(run: Run):
    from .experiments import adjoint_check

    run.outcome(adjoint_check(run.get("pairs", 20), run.seed, run.get("K", 16)))


def cmd_parametrix(run: Run):
    from .experiments import parametrix_experiment
    from .lattice import FrequencyBox

    K = run.get("K", 64)
    M = run.get("M", 4)
    n = run.get("n", 1)
    if n != 1:
        raise UsageError("config key /n: the parametrix experiment runs in one dimension")
    box = FrequencyBox(1, K + 3, M + 4)
    N = run.get("N", 32)
    terms = None
    if "terms" in run.cfg:
        terms = [(t["order"], run.expr(f"terms/{i}/symbol", t["symbol"]).symbol(box, N, m=t["order"]))
                 for i, t in enumerate(run.cfg["terms"])]
    elif "symbol" in run.cfg:
        order = run.get("order", 2)
        terms = [(order, run.expr("symbol").symbol(box, N, m=order))]
    o = parametrix_experiment(K, M, run.get("N0", 2.0), run.seed, terms)
    run.outcome(o)
    run.report["slope"] = o.metrics["slope"]
    with open(run.out / "residual_order.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shell", "max_abs", "fitted_slope"])
        for s, v in o.rows:
            w.writerow([_fmt(s), _fmt(v), _fmt(o.metrics["slope"])])
    run.artifacts.append("residual_order.csv")


def cmd_fso_apply(run: Run):
    from .fso import FourierSeriesOp, apply_fso, check_phase

    for key in ("phase", "amplitude", "f"):
        if key not in run.cfg:
            raise UsageError(f"config key /{key}: required")
    box = run.box()
    u = run.grid_function("f", box, run.get("N"))
    sym_box = box if box.L >= u.box.L else u.box
    N = run.get("N") or sym_box.default_grid_size()
    phase = run.expr("phase").phase(sym_box, N)
    a = run.symbol("amplitude", sym_box, N)
    T = FourierSeriesOp(phase, a)
    out_box = type(box)(box.n, run.get("out_K", box.L))
    Tu = apply_fso(T, u, out_box)
    run.grid_csv("result.csv", Tu)
    run.report.update({"phase_check": check_phase(T.phase), "norm_in": u.norm(), "norm_out": Tu.norm(),
                       "truncated_mass": Tu.truncated_mass})


def cmd_fso_compose(run: Run):
    from .experiments import fso_experiments

    run.outcome(fso_experiments(run.get("K", 64), run.seed, run.get("t", 0.3)))


def cmd_l2_bounds(run: Run):
    from .errors import IterationLimitError
    from .experiments import l2_experiments
    from .fso import operator_norm, schur_l2_bound
    from .quantize import pdo_operator

    if "symbol" not in run.cfg:
        run.outcome(l2_experiments(run.get("count", 10), run.seed, run.get("K", 16)))
        return
    box = run.box(16)
    a = run.symbol("symbol", box, run.get("N"))
    s = schur_l2_bound(a)
    converged = True
    try:
        nrm = operator_norm(pdo_operator(a, box, box.grown(a.x_band())), max_iter=run.get("max_iter", 500), seed=run.seed)
    except IterationLimitError as exc:
        nrm, converged = exc.last, False
    run.report.update({"schur_bound": s, "operator_norm": nrm, "converged": converged})
    run.csv("l2_bounds.csv", ["schur_bound", "operator_norm", "converged"], [[s, nrm, converged]])


def cmd_evolve(run: Run):
    from .evolve import CauchyProblem, solve_fso, solve_reference
    from .experiments import evolve_experiments
    from .lattice import FrequencyBox

    if "a1" not in run.cfg and "f" not in run.cfg:
        run.outcome(evolve_experiments(run.get("K", 32), run.seed))
        return
    for key in ("a1", "f"):
        if key not in run.cfg:
            raise UsageError(f"config key /{key}: required")
    box = run.box()
    f = run.grid_function("f", box, run.get("N"))
    a1 = run.expr("a1").multiplier(None)
    a0 = None
    if "a0" in run.cfg:
        # the parametrix extends a0 by the kernel window (12) beyond the datum box
        reach = run.get("a0_K", max(box.L, f.box.L) + 12)
        a0 = run.expr("a0").symbol(FrequencyBox(box.n, reach), run.get("N"))
    P = CauchyProblem(f, a1, a0, run.get("times", [0.0, 1.0]), box)
    ref = solve_reference(P)
    rows = []
    for i, (t, u) in enumerate(zip(ref.times, ref.states)):
        run.grid_csv(f"reference_t{i}.csv", u)
        rows.append(["reference", "", t, u.norm(), ""])
    for M in run.get("M", []):
        sol = solve_fso(P, M)
        for i, (t, u) in enumerate(zip(sol.times, sol.states)):
            run.grid_csv(f"fso_M{M}_t{i}.csv", u)
            rows.append(["fso", M, t, u.norm(), (u - ref.states[i]).norm()])
    run.csv("evolve.csv", ["method", "M", "t", "norm", "error_vs_reference"], rows)
    run.report.update({"times": ref.times, "diagnostics": P.diagnostics + [d for d in ref.diagnostics]})


def cmd_wavefront(run: Run):
    from .experiments import wavefront_experiments
    from .microlocal import default_cones, default_localizers, operator_wf_containment, wavefront_detect

    n = run.get("n", 2)
    if "u" not in run.cfg:
        run.outcome(wavefront_experiments(run.get("K", 32), run.seed, run.get("count", 10)))
        return
    box = run.box(32, 2)
    u = run.grid_function("u", box, run.get("N"))
    cones = default_cones(n, run.get("half_angle_deg", 20.0))
    cells = default_localizers(n, run.get("cells", 4), run.get("power", 4))
    s_star = run.get("s_star", -4.0)
    if "symbol" in run.cfg:
        a = run.symbol("symbol", u.box, run.get("N", 16))
        res = operator_wf_containment(a, u, cones, cells, s_star)
        (run.out / "wavefront_u.json").write_text(res["u"].to_json())
        (run.out / "wavefront_Au.json").write_text(res["Au"].to_json())
        run.artifacts += ["wavefront_u.json", "wavefront_Au.json"]
        run.report.update({"new_flags": res["new_flags"], "contained": res["contained"]})
        return
    rep = wavefront_detect(u, cells, cones, s_star)
    (run.out / "wavefront.json").write_text(rep.to_json())
    run.artifacts.append("wavefront.json")
    run.report["flagged"] = len(rep.flagged())


def cmd_taylor_suite(run: Run):
    from .experiments import taylor_suite

    run.outcome(taylor_suite(run.get("instances", 100), run.seed, run.get("M_max", 4)))


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torus-pdo", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=COMMANDS, help="command (or /command in the config)")
    p.add_argument("--config", type=Path, help="JSON scenario config")
    p.add_argument("--out", type=Path, help="output directory (default: /out in the config, else ./out)")
    p.add_argument("--seed", type=int, help="seed for random inputs (default: /seed in the config, else 0)")
    p.add_argument("--threads", type=int, help="thread count for numeric libraries (fallback: TORUS_PDO_THREADS)")
    return p


def _versions() -> dict:
    import numpy

    from . import __version__

    out = {"torus_pdo": __version__, "python": platform.python_version(), "numpy": numpy.__version__}
    try:
        out["jsonschema"] = metadata.version("jsonschema")
    except metadata.PackageNotFoundError:
        pass
    return out


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    t0 = time.time()
    try:
        threads = set_threads(args.threads)
        if args.config is not None:
            cfg = load_config(args.config, args.command)
            base = args.config.resolve().parent
        elif args.command is not None:
            cfg = load_config_from_dict({"command": args.command})
            base = Path.cwd()
        else:
            raise UsageError("give a command or --config")
        files = referenced_files(cfg, base)
        if args.seed is not None and args.seed < 0:
            raise UsageError("--seed must be non-negative")
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out = args.out or Path(cfg.get("out", "out"))
        out.mkdir(parents=True, exist_ok=True)
    except UsageError as exc:
        print(f"torus-pdo: usage error: {exc}", file=sys.stderr)
        return 2
    return _dispatch(cfg, files, seed, threads, out, args.config, t0)


def load_config_from_dict(cfg: dict) -> dict:
    import jsonschema

    try:
        jsonschema.validate(cfg, schema_for(cfg["command"]))
    except jsonschema.ValidationError as exc:
        raise UsageError(f"config key {_pointer(list(exc.absolute_path))}: {exc.message}") from exc
    return cfg


def _dispatch(cfg, files, seed, threads, out, config_path, t0) -> int:
    from .errors import ExpressionError, TorusPDOError

    run = Run(cfg, out, files, seed)
    status = 0
    try:
        HANDLERS[cfg["command"]](run)
    except (UsageError, ExpressionError) as exc:
        print(f"torus-pdo: usage error: {exc}", file=sys.stderr)
        run.report["error"] = str(exc)
        status = 2
    except (TorusPDOError, ArithmeticError) as exc:
        print(f"torus-pdo: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        run.report["error"] = f"{type(exc).__name__}: {exc}"
        status = 3
    except Exception as exc:  # noqa: BLE001
        print(f"torus-pdo: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        run.report["error"] = f"{type(exc).__name__}: {exc}"
        status = 1
    (out / "report.json").write_text(json.dumps(_jsonable(run.report), indent=2))
    inputs = {key: {"path": str(p), "sha256": sha256(p)} for key, p in files.items()}
    if config_path is not None:
        inputs["config"] = {"path": str(config_path), "sha256": sha256(config_path)}
    manifest = {
        "command": cfg["command"],
        "config": cfg,
        "inputs": inputs,
        "versions": _versions(),
        "seed": seed,
        "threads": threads,
        "wall_time_s": time.time() - t0,
        "artifacts": run.artifacts + ["report.json"],
        "exit_status": status,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2))
    return status


def main(argv=None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
