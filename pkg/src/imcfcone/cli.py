"""Command line: ``imcfcone {run,sweep,convergence,validate-warp} --config FILE``.

Exit codes: 0 success, 1 monitor violation (or failed warp validation),
2 flow stopped early (singularity, domain exit, step failure),
3 configuration error.
"""
import argparse
import copy
import difflib
import json
import logging
import math
import os
import re
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import capgeom, diagnostics, flowcore, graphsurf, oracle, warpfn
from .errors import ConfigurationError, DomainError, ImcfError

log = logging.getLogger("imcfcone")

EXIT_OK, EXIT_MONITOR, EXIT_STOPPED, EXIT_CONFIG = 0, 1, 2, 3
SHAPES = ("cosine-even", "bump", "azimuthal")
DEFAULT_LEVELS = (128, 256, 512)
ORDER_MIN = 1.9
RADIAL_TOL = 1e-6

# accepted keys; nested dicts are sub-objects
SCHEMA = {
    "warp": {"name": str, "a": float, "alpha": float, "c_bound": float, "base_point": float,
             "r": list, "lambda": list},
    "n": int, "theta0": float, "mode": str, "n_theta": int, "n_psi": int,
    "r0": float,
    "initial": {"shape": str, "amplitude": float},
    "t_end": float, "dt_initial": float, "cfl_safety": float, "snapshot_stride": float,
    "max_steps": int, "scheme": str,
    "output": {"directory": str, "emit_fields": bool, "emit_plots": bool},
    "convergence": {"levels": list},
}
REQUIRED = ("warp", "n", "theta0", "r0", "t_end")


@dataclass
class ExperimentConfig:
    warp: dict
    n: int
    theta0: float
    r0: float
    t_end: float
    mode: str = capgeom.AXISYM
    n_theta: int = 256
    n_psi: int = 1
    shape: str = "cosine-even"
    amplitude: float = 0.0
    dt_initial: float = 1e-2
    cfl_safety: float = 0.8
    snapshot_stride: float = 0.1
    max_steps: int = 50_000_000
    scheme: str = "rk4"
    directory: Optional[str] = None
    emit_fields: bool = False
    emit_plots: bool = False
    levels: List[int] = field(default_factory=lambda: list(DEFAULT_LEVELS))

    def flow(self):
        return flowcore.FlowConfig(t_end=self.t_end, dt_initial=self.dt_initial,
                                   cfl_safety=self.cfl_safety,
                                   snapshot_stride=self.snapshot_stride,
                                   max_steps=self.max_steps, scheme=self.scheme)

    def with_changes(self, **kw):
        new = copy.deepcopy(self)
        for k, v in kw.items():
            setattr(new, k, v)
        return new


# -- config parsing ------------------------------------------------------------

def _all_paths(schema, prefix=""):
    for key, sub in schema.items():
        path = f"{prefix}{key}"
        yield key, path
        if isinstance(sub, dict):
            yield from _all_paths(sub, path + ".")


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(msg, path, text=None, key=None):
    line = _line_of(text, key or path.split(".")[-1])
    where = f" (line {line})" if line else ""
    raise ConfigurationError(f"{path}: {msg}{where}")


def _check_keys(obj, schema, prefix, text):
    for key, value in obj.items():
        path = prefix + key
        if key not in schema:
            names = {p: k for k, p in _all_paths(SCHEMA)}
            leaf = difflib.get_close_matches(key, [k for k, _ in _all_paths(SCHEMA)], n=3, cutoff=0.6)
            hints = sorted({p for p, k in names.items() if k in leaf})
            hint = f"; did you mean {', '.join(repr(h) for h in hints)}?" if hints else ""
            _fail(f"unknown key{hint}", path, text, key)
        kind = schema[key]
        if isinstance(kind, dict):
            if key == "warp" and isinstance(value, str):
                continue
            if not isinstance(value, dict):
                _fail("expected an object", path, text, key)
            _check_keys(value, kind, path + ".", text)
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                _fail("expected a finite number", path, text, key)
        elif kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                _fail("expected an integer", path, text, key)
        elif not isinstance(value, kind):
            _fail(f"expected {kind.__name__}", path, text, key)


def config_from_dict(obj, text=None):
    if not isinstance(obj, dict):
        raise ConfigurationError("config must be a JSON object")
    _check_keys(obj, SCHEMA, "", text)
    for key in REQUIRED:
        if key not in obj:
            raise ConfigurationError(f"{key}: required key missing")
    warp = obj["warp"]
    warp = {"name": warp} if isinstance(warp, str) else dict(warp)
    if "name" not in warp:
        _fail("required key missing", "warp.name", text, "warp")
    init = obj.get("initial", {})
    out = obj.get("output", {})
    mode = obj.get("mode", capgeom.AXISYM)
    cfg = ExperimentConfig(
        warp=warp, n=obj["n"], theta0=float(obj["theta0"]), r0=float(obj["r0"]),
        t_end=float(obj["t_end"]), mode=mode, n_theta=obj.get("n_theta", 256),
        n_psi=obj.get("n_psi", 1 if mode == capgeom.AXISYM else 64),
        shape=init.get("shape", "cosine-even"), amplitude=float(init.get("amplitude", 0.0)),
        dt_initial=float(obj.get("dt_initial", 1e-2)), cfl_safety=float(obj.get("cfl_safety", 0.8)),
        snapshot_stride=float(obj.get("snapshot_stride", 0.1)),
        max_steps=obj.get("max_steps", 50_000_000), scheme=obj.get("scheme", "rk4"),
        directory=out.get("directory"), emit_fields=out.get("emit_fields", False),
        emit_plots=out.get("emit_plots", False),
        levels=list(obj.get("convergence", {}).get("levels", DEFAULT_LEVELS)),
    )
    _check_ranges(cfg, text)
    return cfg


def _check_ranges(cfg, text):
    if cfg.warp["name"] not in (*warpfn.CATALOG, "tabulated"):
        _fail(f"unknown warp {cfg.warp['name']!r}; choose from "
              f"{sorted((*warpfn.CATALOG, 'tabulated'))}", "warp.name", text, "name")
    if cfg.n < 2:
        _fail("must be >= 2", "n", text)
    if not 0 < cfg.theta0 <= math.pi / 2 + 1e-12:
        _fail("must lie in (0, pi/2]", "theta0", text)
    if cfg.mode not in (capgeom.AXISYM, capgeom.FULL2D):
        _fail("must be 'axisym' or 'full2d'", "mode", text)
    if cfg.shape not in SHAPES:
        _fail(f"must be one of {list(SHAPES)}", "initial.shape", text, "shape")
    if cfg.shape == "azimuthal" and cfg.mode != capgeom.FULL2D:
        _fail("the azimuthal shape needs mode 'full2d'", "initial.shape", text, "shape")
    if not cfg.r0 > 0:
        _fail("must be positive", "r0", text)
    if not abs(cfg.amplitude) < 0.5 * cfg.r0:
        _fail(f"|amplitude| must be < 0.5 * r0 = {0.5 * cfg.r0:g}", "initial.amplitude", text,
              "amplitude")
    if not cfg.t_end > 0:
        _fail("must be positive", "t_end", text)
    if not cfg.dt_initial > 0:
        _fail("must be positive", "dt_initial", text)
    if not 0 < cfg.cfl_safety <= 1:
        _fail("must lie in (0, 1]", "cfl_safety", text)
    if not cfg.snapshot_stride > 0:
        _fail("must be positive", "snapshot_stride", text)
    if cfg.max_steps < 1:
        _fail("must be >= 1", "max_steps", text)
    if cfg.scheme not in flowcore.SCHEMES:
        _fail(f"must be one of {sorted(flowcore.SCHEMES)}", "scheme", text)
    if any(not isinstance(n, int) or isinstance(n, bool) or n < 4 for n in cfg.levels):
        _fail("levels must be integers >= 4", "convergence.levels", text, "levels")


def _load_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def parse_config(path):
    obj, text = _load_json(path)
    return config_from_dict(obj, text)


# -- building blocks -----------------------------------------------------------

def build_warp(spec):
    params = {k: v for k, v in spec.items() if k != "name"}
    name = spec["name"]
    try:
        if name == "tabulated":
            if "r" not in params or "lambda" not in params:
                raise ConfigurationError("warp: tabulated warps need 'r' and 'lambda' arrays")
            return warpfn.tabulated(params.pop("r"), params.pop("lambda"),
                                    params.get("alpha", 1.0), params.get("c_bound", 1.0),
                                    params.get("base_point"))
        if "r" in params or "lambda" in params:
            raise ConfigurationError(f"warp: 'r'/'lambda' only apply to tabulated warps")
        if name == "euclidean" and "a" in params:
            raise ConfigurationError("warp.a: the euclidean warp has no parameter a")
        return warpfn.from_name(name, **params)
    except DomainError as exc:
        raise ConfigurationError(f"warp: {exc}") from None


def shape_field(shape, theta, psi, theta0):
    if shape == "cosine-even":
        return np.cos(np.pi * theta / theta0)
    if shape == "bump":
        return np.cos(np.pi * theta / (2.0 * theta0)) ** 4
    # sin^2 cos(psi) times a cutoff whose theta-derivative vanishes at theta0
    return np.sin(theta) ** 2 * np.cos(psi) * 0.5 * (1.0 + np.cos(np.pi * theta / theta0))


def build_problem(cfg):
    """``(warp, mesh, initial GraphState)``; raises ConfigurationError."""
    warp = build_warp(cfg.warp)
    report = warpfn.validate(warp)
    if not report.passed:
        raise ConfigurationError("warp fails the structural hypotheses: "
                                 + "; ".join(f.name for f in report.failures()))
    if not warp.in_interval(cfg.r0) or cfg.r0 - abs(cfg.amplitude) <= warp.r_min:
        raise ConfigurationError("r0 +- amplitude must lie inside the warp interval")
    mesh = capgeom.build_mesh(cfg.n, cfg.theta0, cfg.mode, cfg.n_theta, cfg.n_psi)
    theta, psi = mesh.coords()
    u0 = cfg.r0 + cfg.amplitude * shape_field(cfg.shape, theta, psi, cfg.theta0)
    return warp, mesh, graphsurf.GraphState.from_u(mesh, warp, u0)


def simulate(cfg, backend=None):
    """Evolve and evaluate one experiment; returns ``(trajectory, report)``."""
    warp, mesh, state = build_problem(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        traj = flowcore.evolve(state, cfg.flow(), backend=backend)
    return traj, diagnostics.build_report(traj)


def exit_code(report):
    if report.status != flowcore.COMPLETED:
        return EXIT_STOPPED
    return EXIT_OK if report.monitors_passed else EXIT_MONITOR


# -- commands ------------------------------------------------------------------

PLOT_SCRIPT = """# gnuplot script for series.csv
set datafile separator ','
set key autotitle columnhead
set logscale y
set xlabel 't'
set terminal pngcairo size 900,600
set output 'decay.png'
plot 'series.csv' using 1:7 with lines, '' using 1:11 with lines, '' using 1:10 with lines
unset logscale y
set output 'area_ratio.png'
plot 'series.csv' using 1:9 with lines
set output 'speed.png'
plot 'series.csv' using 1:4 with lines, '' using 1:5 with lines, '' using 1:13 with lines
"""


def cmd_run(cfg, out_dir=None, backend=None):
    out = Path(out_dir or cfg.directory or "imcf-out")
    try:
        traj, report = simulate(cfg, backend)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        _write_error(out, exc)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    diagnostics.write_series_csv(report, out / "series.csv")
    extra = {"config": asdict(cfg), "kappa_warning": traj.kappa_warning,
             "steps": int(traj.dt_log.size), "halvings": traj.halvings}
    diagnostics.write_summary_json(report, out / "summary.json", extra)
    if cfg.emit_fields:
        for snap in traj.snapshots:
            diagnostics.write_fields_csv(snap, out / f"fields-{snap.t:.6f}.csv")
    if cfg.emit_plots:
        (out / "plot_series.gp").write_text(PLOT_SCRIPT)
    code = exit_code(report)
    log.info("run finished: status=%s monitors=%s exit=%d", report.status,
             report.monitors_passed, code)
    return code


def _write_error(out, exc):
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.json", "w") as fh:
            json.dump({"status": "configuration-error", "passed": False, "error": str(exc)},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError:
        pass


def _sweep_one(args):
    cfg, out_dir, backend = args
    return cmd_run(cfg, out_dir, backend)


def cmd_sweep(configs, out_dir=None, jobs=1, backend=None):
    configs = list(configs)
    out = Path(out_dir or "imcf-sweep")
    if not configs:
        log.error("sweep needs at least one configuration")
        return EXIT_CONFIG
    dirs = [str(out / f"run-{i:03d}") for i in range(len(configs))]
    tasks = [(c, d, backend) for c, d in zip(configs, dirs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_sweep_one, tasks))
    else:
        codes = [_sweep_one(t) for t in tasks]
    runs = []
    for d, code in zip(dirs, codes):
        try:
            summary = json.loads((Path(d) / "summary.json").read_text())
        except (OSError, json.JSONDecodeError):
            summary = {}
        runs.append({"directory": d, "exit_code": code, "status": summary.get("status"),
                     "passed": summary.get("passed")})
    first = next((c for c in codes if c != EXIT_OK), EXIT_OK)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.json", "w") as fh:
        json.dump({"exit_code": first, "runs": runs}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return first


def observed_order(h, q):
    """Order ``p`` with ``(q0 - q1)/(q1 - q2) = (h0^p - h1^p)/(h1^p - h2^p)``.

    The cap meshes are not nested (``h = theta0/(N - 1/2)``), so the ratio
    is solved exactly instead of taking ``log2``.
    """
    h0, h1, h2 = h
    d1, d2 = q[0] - q[1], q[1] - q[2]
    if d2 == 0 or d1 / d2 <= 1:
        return math.nan
    ratio = d1 / d2

    def f(p):
        return (h0 ** p - h1 ** p) / (h1 ** p - h2 ** p) - ratio

    try:
        return brentq(f, 0.05, 12.0)
    except ValueError:
        return math.nan


def convergence_study(cfg, levels=None, backend=None):
    """Radial oracle errors and perturbed self-convergence per level."""
    levels = list(cfg.levels if levels is None else levels)
    if len(levels) < 3:
        raise ConfigurationError("convergence needs at least 3 levels")
    if sorted(levels) != levels or len(set(levels)) != len(levels):
        raise ConfigurationError("convergence levels must be strictly increasing")
    amplitude = cfg.amplitude or 0.05
    rows = []
    for n_theta in levels:
        radial_cfg = cfg.with_changes(n_theta=n_theta, amplitude=0.0, snapshot_stride=cfg.t_end)
        traj, _ = simulate(radial_cfg, backend)
        if not traj.completed:
            raise ImcfError(f"radial run stopped: {traj.status}")
        err = oracle.compare(traj, oracle.radial_solution(traj.warp, cfg.r0, cfg.n))
        pert_cfg = cfg.with_changes(n_theta=n_theta, amplitude=amplitude,
                                    snapshot_stride=cfg.t_end)
        traj, _ = simulate(pert_cfg, backend)
        if not traj.completed:
            raise ImcfError(f"perturbed run stopped: {traj.status}")
        final = traj.snapshots[-1].state
        rows.append({"n_theta": n_theta, "h": final.mesh.h_theta, "radial_rel_error": err.max_rel,
                     "boundary_phi": final.offset})
    orders = [observed_order([r["h"] for r in rows[i:i + 3]],
                             [r["boundary_phi"] for r in rows[i:i + 3]])
              for i in range(len(rows) - 2)]
    return rows, orders


def cmd_convergence(cfg, levels=None, out_dir=None, backend=None):
    out = Path(out_dir or cfg.directory or "imcf-convergence")
    try:
        rows, orders = convergence_study(cfg, levels, backend)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        _write_error(out, exc)
        return EXIT_CONFIG
    except ImcfError as exc:
        log.error("%s", exc)
        return EXIT_STOPPED
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "convergence.csv", "w") as fh:
        fh.write("n_theta,h_theta,radial_rel_error,boundary_phi\n")
        for r in rows:
            fh.write(f"{r['n_theta']},{r['h']!r},{r['radial_rel_error']!r},{r['boundary_phi']!r}\n")
    radial_ok = all(r["radial_rel_error"] < RADIAL_TOL for r in rows)
    order_ok = all(o >= ORDER_MIN for o in orders)
    with open(out / "convergence.json", "w") as fh:
        json.dump({"levels": [r["n_theta"] for r in rows], "orders": orders,
                   "radial_ok": radial_ok, "order_ok": order_ok}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for r in rows:
        print(f"{r['n_theta']:6d}  h={r['h']:.6e}  radial_rel_err={r['radial_rel_error']:.3e}  "
              f"phi_b={r['boundary_phi']:.15f}")
    print("observed order: " + ", ".join(f"{o:.4f}" for o in orders))
    return EXIT_OK if radial_ok and order_ok else EXIT_MONITOR


def cmd_validate_warp(spec):
    try:
        warp = build_warp(spec)
    except ConfigurationError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    report = warpfn.validate(warp)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.passed else EXIT_MONITOR


def load_sweep(path):
    """A JSON list of configs, or ``{"base": {...}, "runs": [overrides, ...]}``."""
    obj, text = _load_json(path)
    if isinstance(obj, dict) and "runs" in obj:
        extra = set(obj) - {"base", "runs"}
        if extra:
            raise ConfigurationError(f"sweep: unknown keys {sorted(extra)}")
        base = obj.get("base", {})
        items = [_merge(base, o) for o in obj["runs"]]
    elif isinstance(obj, list):
        items = obj
    else:
        raise ConfigurationError("sweep config must be a list or an object with 'runs'")
    return [config_from_dict(o, text) for o in items]


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _setup_logging():
    level = os.environ.get("IMCF_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None):
    _setup_logging()
    parser = argparse.ArgumentParser(prog="imcfcone", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "convergence", "validate-warp"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--jobs", type=int, default=1)
        if name == "convergence":
            p.add_argument("--levels", type=int, nargs="+")
    args = parser.parse_args(argv)
    try:
        if args.command == "sweep":
            return cmd_sweep(load_sweep(args.config), args.out, max(1, args.jobs))
        if args.command == "validate-warp":
            obj, text = _load_json(args.config)
            spec = obj.get("warp", obj) if isinstance(obj, dict) else obj
            spec = {"name": spec} if isinstance(spec, str) else spec
            if not isinstance(spec, dict) or "name" not in spec:
                raise ConfigurationError("validate-warp needs a warp object with a name")
            _check_keys(spec, SCHEMA["warp"], "warp.", text)
            return cmd_validate_warp(spec)
        cfg = parse_config(args.config)
        if args.command == "run":
            return cmd_run(cfg, args.out)
        return cmd_convergence(cfg, args.levels, args.out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
