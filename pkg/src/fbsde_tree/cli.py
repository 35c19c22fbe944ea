"""Batch front-end: ``fbsde-tree run|suite|validate <config.json>``.

A config is a JSON document validated against ``schemas/config.schema.json``.
``run`` executes the requested mode and writes ``report.json`` plus CSV
exports into the output directory; ``suite`` runs the acceptance criteria;
``validate`` checks a config without solving anything.

Exit statuses: 0 success, 1 a verification or acceptance criterion failed,
2 invalid config or arguments, 3 a solver did not converge or failed
numerically.  Partial diagnostics are still written on status 1 and 3.
"""

import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .acceptance import CRITERIA, format_result, run_acceptance
from .bsde import BsdeProblem, solve_bsde, bsde_stability_report
from .coefficients import (DominationData, affine_coefficients, check_conditions,
                           make_monotone_family, node_blocks, reorient)
from .continuation import ContinuationOptions, PerturbationData, SolutionPair, residual, solve_fbsde
from .direct import solve_linear_direct
from .errors import ConfigError, ConvergenceError, FbsdeError, NumericError, UsageError
from .lq import (BackwardLqData, ForwardLqData, insurance_demo, insurance_liability_by_paths,
                 insurance_residual, oracle_blq, oracle_flq, random_blq, random_flq, solve_blq,
                 solve_flq)
from .report import (DIAGNOSTIC_HEADER, SCHEMA_ID, TRAJECTORY_HEADER, diagnostic_rows,
                     process_block, trajectory_rows, write_report, write_rows)
from .sde import SdeProblem, sde_stability_report, solve_sde
from .tree import TreeTopology

__all__ = ["main", "load_config", "run_config", "EXIT_OK", "EXIT_FAILED", "EXIT_INVALID",
           "EXIT_NOT_CONVERGED"]

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2, 3
DEFAULT_OUT = "fbsde_out"


def _schema():
    text = resources.files("fbsde_tree").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def _where(error):
    path = ".".join(str(p) for p in error.absolute_path)
    return path or "<root>"


def load_config(path):
    """Read and schema-validate a config file.

    Raises
    ------
    ConfigError
        With ``path`` naming the offending location.
    """
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", str(path)) from None
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(err.message, _where(err))
    return config


# -- config translation ----------------------------------------------------------

def _topology(cfg):
    block = cfg["topology"]
    try:
        if "two_point" in block:
            return TreeTopology.two_point(block["horizon"], block["two_point"])
        if "support" in block:
            return TreeTopology(block["horizon"], tuple(block["support"]),
                                tuple(block["probabilities"]))
        return TreeTopology(block["horizon"])
    except UsageError as exc:
        raise ConfigError(str(exc), "topology") from None


def _guard(path, fn, *args, **kwargs):
    # re-raise shape and value problems with the config location attached
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (UsageError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def _dims(cfg, default_n=1, default_m=1):
    d = cfg.get("dimensions", {})
    return d.get("n", default_n), d.get("m", default_m)


def _expand(topo, spec, key, shape, levels, path):
    arrays = _guard(f"{path}.{key}", node_blocks, topo, spec.get(key), shape, levels)
    for i, ov in enumerate(spec.get("overrides", [])):
        if ov["key"] != key:
            continue
        where = f"{path}.overrides.{i}"
        if ov["k"] not in levels:
            raise ConfigError(f"time {ov['k']} outside {levels[0]}..{levels[-1]}", where)
        arr = arrays[levels.index(ov["k"])]
        if ov["node"] >= len(arr):
            raise ConfigError(f"node {ov['node']} outside 0..{len(arr) - 1}", where)
        value = _guard(where, node_blocks, topo, ov["value"], shape, [0])[0][0]
        arr[ov["node"]] = value
    return arrays


def _check_override_keys(spec, allowed, path):
    for i, ov in enumerate(spec.get("overrides", [])):
        if ov["key"] not in allowed:
            raise ConfigError(f"override key {ov['key']!r} not valid here",
                              f"{path}.overrides.{i}.key")


def _options(cfg):
    block = {k: v for k, v in cfg.get("solver", {}).items() if k != "orientation"}
    return _guard("solver", ContinuationOptions, **block)


def _orientation(cfg):
    return cfg.get("solver", {}).get("orientation", "standard")


def _affine_system(cfg, topo, n):
    aff = cfg["coefficients"].get("affine", {})
    N = topo.horizon
    steps = list(range(N))
    kw = {}
    for name in ("initial", "terminal"):
        spec = aff.get(name, {})
        levels = [0] if name == "initial" else [N]
        mat = _expand(topo, spec, "matrix", (n, n), levels, f"coefficients.affine.{name}")[0]
        off = _expand(topo, spec, "offset", (n,), levels, f"coefficients.affine.{name}")[0]
        kw[name] = {"matrix": mat[0] if name == "initial" else mat,
                    "offset": off[0] if name == "initial" else off}
    for name in ("drift", "diffusion", "driver"):
        spec = aff.get(name, {})
        path = f"coefficients.affine.{name}"
        _check_override_keys(spec, ("x", "y", "z", "offset"), path)
        kw[name] = {key: _expand(topo, spec, key, (n, n), steps, path) for key in "xyz"}
        kw[name]["offset"] = _expand(topo, spec, "offset", (n,), steps, path)
    coeffs = _guard("coefficients.affine", affine_coefficients, topo, n, label="config", **kw)
    dom_cfg = cfg["coefficients"].get("domination")
    if dom_cfg is None:
        raise ConfigError("affine coefficients need a domination block", "coefficients")
    dom_kw = {k: dom_cfg.get(k) for k in ("M", "G", "A", "B", "C")}
    rows = dom_cfg.get("rows", n)
    for key in ("M", "G", "A", "B", "C"):
        if dom_kw[key] is not None and np.ndim(dom_kw[key]) == 0:
            dom_kw[key] = dom_kw[key] * np.eye(n)
    dom = _guard("coefficients.domination", DominationData.build, topo, n,
                 mu=dom_cfg.get("mu", 0.0), v=dom_cfg.get("v", 0.0), m=rows,
                 bound=dom_cfg.get("bound", 1.0), **dom_kw)
    return coeffs, dom


def _coupled(cfg, topo, seed):
    n, m = _dims(cfg, 2, 1)
    block = cfg.get("coefficients")
    if block is None:
        raise ConfigError("mode needs a coefficients block", "coefficients")
    if "family" in block:
        params = {k: v for k, v in block.items() if k != "family"}
        return _guard("coefficients", make_monotone_family, topo, n, m=m, seed=seed,
                      verify_samples=0, **params)
    return _affine_system(cfg, topo, n)


def _perturbation(cfg, topo, n, seed):
    block = cfg.get("perturbation")
    if block is None:
        return None
    return PerturbationData.random(topo, n, seed, block.get("scale", 1.0))


# -- modes -----------------------------------------------------------------------

class _Run:
    """Mutable state of one run: results, CSV tables and derived seeds."""

    def __init__(self, cfg, seed):
        self.cfg, self.seed = cfg, seed
        self.results, self.trajectories, self.diagnostics = {}, {}, None
        self.seeds = {}
        self.status = EXIT_OK


def _need(cfg, key):
    if key not in cfg:
        raise ConfigError(f"mode {cfg['mode']!r} needs a {key!r} block", "<root>")
    return cfg[key]


def _mode_sde(run, topo, build_only):
    cfg = _need(run.cfg, "sde")
    eta = np.atleast_1d(np.asarray(cfg["eta"], dtype=float))
    n = _dims(run.cfg, len(eta))[0]
    if eta.shape != (n,):
        raise ConfigError(f"eta must have length {n}", "sde.eta")
    steps = list(range(topo.horizon))
    blocks = {}
    for name in ("drift", "diffusion"):
        spec = cfg.get(name, {})
        _check_override_keys(spec, ("x", "offset"), f"sde.{name}")
        blocks[name] = (_expand(topo, spec, "x", (n, n), steps, f"sde.{name}"),
                        _expand(topo, spec, "offset", (n,), steps, f"sde.{name}"))

    def affine(name):
        mats, offs = blocks[name]
        return lambda k, x: np.einsum("vij,vj->vi", mats[k], x) + offs[k]

    problem = SdeProblem(topo, eta, affine("drift"), affine("diffusion"))
    if build_only:
        return
    x = solve_sde(problem)
    est = sde_stability_report(problem, problem)
    run.trajectories["x"] = process_block(x)
    run.results.update({"x": run.trajectories["x"], "zero_data_estimate": est.as_dict()})


def _mode_bsde(run, topo, build_only):
    cfg = _need(run.cfg, "bsde")
    N = topo.horizon
    term = np.asarray(cfg["terminal"], dtype=float)
    n = _dims(run.cfg, term.shape[-1] if term.ndim else 1)[0]
    xi = _guard("bsde.terminal", node_blocks, topo, cfg["terminal"], (n,), [N])[0]
    spec = cfg.get("driver", {})
    _check_override_keys(spec, ("y", "z", "offset"), "bsde.driver")
    steps = list(range(N))
    A = _expand(topo, spec, "y", (n, n), steps, "bsde.driver")
    B = _expand(topo, spec, "z", (n, n), steps, "bsde.driver")
    c = _expand(topo, spec, "offset", (n,), steps, "bsde.driver")
    problem = BsdeProblem(topo, xi, lambda k, yp, zp: (np.einsum("vij,vj->vi", A[k], yp)
                                                       + np.einsum("vij,vj->vi", B[k], zp)
                                                       + c[k]))
    if build_only:
        return
    y = solve_bsde(problem)
    est = bsde_stability_report(problem, problem)
    run.trajectories["y"] = process_block(y)
    run.results.update({"y": run.trajectories["y"], "zero_data_estimate": est.as_dict()})


def _mode_fbsde(run, topo, build_only):
    run.seeds.update({"coefficients": run.seed, "perturbation": run.seed + 1,
                      "condition_samples": run.seed})
    coeffs, dom = _coupled(run.cfg, topo, run.seed)
    p = _perturbation(run.cfg, topo, coeffs.dim, run.seed + 1)
    opts = _options(run.cfg)
    flipped = _orientation(run.cfg) == "flipped"
    if build_only:
        return
    samples = run.cfg.get("check", {}).get("samples", 2000)
    tol = run.cfg.get("check", {}).get("tolerance", 1e-12)
    if samples:
        rep = check_conditions(coeffs, dom, samples, seed=run.seed, tolerance=tol,
                               orientation="flipped" if flipped else "standard")
        run.results["conditions"] = rep.as_dict()
    target = reorient(coeffs) if flipped else coeffs
    if flipped and p is not None:
        raw = p._raw()
        # (x, -y) solves the reoriented system with the eta and phi offsets negated
        p = PerturbationData.build(topo, coeffs.dim, raw.xi, -raw.eta,
                                   [-f for f in raw.phi], raw.psi, raw.gamma)
    try:
        sol, diag = solve_fbsde(target, dom, p, 1.0, opts)
    except ConvergenceError as exc:
        if exc.diagnostics is not None:
            run.diagnostics = exc.diagnostics.as_dict()
            run.results["diagnostics"] = run.diagnostics
        raise
    run.diagnostics = diag.as_dict()
    res = residual(target, p, sol)
    try:
        ref = solve_linear_direct(target, p)
        oracle = {"affine": True, "relative_distance": sol.relative_distance(ref)}
    except UsageError:
        oracle = {"affine": False}
    if flipped:
        sol = SolutionPair(sol.x, sol.y.scale(-1.0))
    run.trajectories.update({"x": process_block(sol.x), "y": process_block(sol.y)})
    run.results.update({"x": run.trajectories["x"], "y": run.trajectories["y"],
                        "diagnostics": run.diagnostics, "residual": res.as_dict(),
                        "direct_oracle": oracle, "orientation": _orientation(run.cfg)})


def _mode_check(run, topo, build_only):
    run.seeds.update({"coefficients": run.seed, "condition_samples": run.seed})
    coeffs, dom = _coupled(run.cfg, topo, run.seed)
    if build_only:
        return
    block = run.cfg.get("check", {})
    rep = check_conditions(coeffs, dom, block.get("samples", 10_000) or 1, seed=run.seed,
                           tolerance=block.get("tolerance", 1e-12),
                           orientation=_orientation(run.cfg))
    run.results["conditions"] = rep.as_dict()
    run.results["violations"] = rep.total_violations
    if not rep.passed:
        run.status = EXIT_FAILED


def _lq_data(run, topo, key, cls, make_random):
    block = _need(run.cfg, key)
    if "random" in block:
        n, m = _dims(run.cfg, 2, 1)
        run.seeds["instance"] = run.seed
        return _guard(key, make_random, topo, n, m, run.seed, **block["random"])
    n, m = _dims(run.cfg, 1, 1)
    return _guard(key, cls.build, topo, n, m, **block)


def _control_gap(a, b):
    return float(max(np.max(np.abs(x - y)) for x, y in zip(a.fields, b.fields)))


def _lq_common(run, sol, data, oracle_gap_extra=0.0):
    rep = getattr(sol, "report", None)
    run.diagnostics = sol.diagnostics.as_dict()
    run.trajectories.update({"x": process_block(sol.x), "y": process_block(sol.y)})
    run.results.update({"x": run.trajectories["x"], "y": run.trajectories["y"],
                        "cost": sol.cost, "stationarity": sol.stationarity,
                        "continuation_vs_direct": sol.oracle_gap,
                        "diagnostics": run.diagnostics})
    return rep


def _mode_flq(run, topo, build_only):
    data = _lq_data(run, topo, "flq", ForwardLqData, random_flq)
    opts = _options(run.cfg)
    if build_only:
        return
    sol = solve_flq(data, opts)
    ora = oracle_flq(data)
    _lq_common(run, sol, data)
    run.trajectories["u"] = process_block(sol.u)
    run.results.update({
        "xi": sol.xi, "u": run.trajectories["u"],
        "oracle": {"xi": ora.xi, "cost": ora.cost, "gradient_norm": ora.gradient_norm,
                   "control_gap": max(_control_gap(sol.u, ora.control),
                                      float(np.max(np.abs(sol.xi - ora.xi)))),
                   "cost_gap": sol.cost - ora.cost}})


def _mode_blq(run, topo, build_only):
    data = _lq_data(run, topo, "blq", BackwardLqData, random_blq)
    opts = _options(run.cfg)
    if build_only:
        return
    sol = solve_blq(data, opts)
    ora = oracle_blq(data)
    _lq_common(run, sol, data)
    run.trajectories["v"] = process_block(sol.v)
    run.results.update({
        "v": run.trajectories["v"],
        "oracle": {"cost": ora.cost, "gradient_norm": ora.gradient_norm,
                   "control_gap": _control_gap(sol.v, ora.control),
                   "cost_gap": sol.cost - ora.cost}})


def _mode_insurance(run, topo, build_only):
    cfg = _need(run.cfg, "insurance")
    N = topo.horizon
    rates = {}
    for key in ("r", "rho", "sigma", "lam", "c"):
        val = np.asarray(cfg[key], dtype=float)
        if val.ndim == 0:
            val = np.full(N, float(val))
        if val.shape != (N,):
            raise ConfigError(f"needs a scalar or {N} values", f"insurance.{key}")
        rates[key] = val
    if np.any(rates["sigma"] <= 0):
        raise ConfigError("volatilities must be strictly positive", "insurance.sigma")
    u = _guard("insurance.u", node_blocks, topo, cfg.get("u", 0.0), (1,), list(range(N)))
    args = (topo, rates["r"], rates["rho"], rates["sigma"], rates["lam"], rates["c"],
            cfg["m0"], u)
    if build_only:
        return
    x, y = insurance_demo(*args)
    res = insurance_residual(*args, x, y)
    paths = insurance_liability_by_paths(*args)
    liability = [(k, y[k]) for k in range(N)]
    run.trajectories["wealth"] = process_block(x)
    run.trajectories["liability"] = process_block(liability, level_shift=1)
    run.trajectories["liability_terminal"] = process_block([(N, y[N])])
    run.results.update({
        "wealth": run.trajectories["wealth"], "liability": run.trajectories["liability"],
        "liability_terminal": run.trajectories["liability_terminal"], "residual": res,
        "y0_by_paths": paths,
        "y0_path_error": float(np.max(np.abs(y[0][:, 0] - paths)))})


def _mode_suite(run, topo, build_only, progress=None):
    criteria = run.cfg.get("suite", {}).get("criteria")
    if criteria is not None and not criteria:
        raise ConfigError("empty criterion selection", "suite.criteria")
    unknown = [c for c in criteria or [] if c not in CRITERIA]
    if unknown:
        raise ConfigError(f"unknown criteria {unknown}", "suite.criteria")
    run.seeds["base"] = run.seed
    if build_only:
        return
    results = run_acceptance(criteria, run.seed, progress)
    run.results["criteria"] = [r.as_dict() for r in results]
    failed = [r.number for r in results if not r.passed]
    run.results["failed"] = failed
    run.results["passed"] = not failed
    if failed:
        run.status = EXIT_FAILED


MODES = {"sde": _mode_sde, "bsde": _mode_bsde, "fbsde": _mode_fbsde, "check": _mode_check,
         "flq": _mode_flq, "blq": _mode_blq, "insurance": _mode_insurance, "suite": _mode_suite}


# -- driver ----------------------------------------------------------------------

def _error_block(exc, path=None):
    out = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        out["path"] = exc.path
    if isinstance(exc, NumericError):
        out["k"], out["node"] = exc.k, exc.node
    if path:
        out["config"] = str(path)
    return out


def run_config(cfg, seed=None, build_only=False, progress=None):
    """Execute a validated config.

    Returns
    -------
    (int, dict, _Run)
        Exit status, report document and the run state (for CSV export).
    """
    if seed is not None:
        cfg = {**cfg, "seed": int(seed)}
    run = _Run(cfg, int(cfg.get("seed", 0)))
    report = {"schema": SCHEMA_ID, "mode": cfg.get("mode"), "config": cfg, "error": None}
    try:
        topo = _topology(cfg) if "topology" in cfg else None
        if topo is not None:
            report["topology"] = {"horizon": topo.horizon, "support": list(topo.support),
                                  "probabilities": list(topo.probabilities)}
        handler = MODES[cfg["mode"]]
        if cfg["mode"] == "suite":
            handler(run, topo, build_only, progress)
        else:
            handler(run, topo, build_only)
        status = run.status
    except ConfigError as exc:
        status, report["error"] = EXIT_INVALID, _error_block(exc)
    except UsageError as exc:
        status, report["error"] = EXIT_INVALID, _error_block(exc)
    except FbsdeError as exc:
        status, report["error"] = EXIT_NOT_CONVERGED, _error_block(exc)
    report.update({"status": {EXIT_OK: "ok", EXIT_FAILED: "failed",
                              EXIT_INVALID: "invalid", EXIT_NOT_CONVERGED: "not_converged"}[status],
                   "exit_code": status, "seeds": {"config": run.seed, **run.seeds},
                   "results": run.results})
    return status, report, run


def _write_outputs(out, report, run, csv_enabled):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.json", report)
    if not csv_enabled:
        return
    if run.trajectories:
        write_rows(out / "trajectories.csv", TRAJECTORY_HEADER,
                   trajectory_rows(run.trajectories))
    if run.diagnostics:
        write_rows(out / "diagnostics.csv", DIAGNOSTIC_HEADER, diagnostic_rows(run.diagnostics))
    if "criteria" in run.results:
        write_rows(out / "criteria.csv", ("criterion", "name", "passed"),
                   ((c["number"], c["name"], c["passed"]) for c in run.results["criteria"]))


def _parser():
    parser = argparse.ArgumentParser(
        prog="fbsde-tree",
        description="Solve and verify stochastic difference equations on scenario trees.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in (("run", "execute the mode named in the config"),
                       ("suite", "run the acceptance criteria"),
                       ("validate", "check a config without solving")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("config", help="path to a JSON config")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="base seed override (0 .. 2**64-1)")
        p.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else (lambda *a: print(*a))
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must lie in 0 .. 2**64-1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.verb == "suite":
        cfg = {**cfg, "mode": "suite"}

    if args.verb == "validate":
        status, report, _ = run_config(cfg, args.seed, build_only=True)
        if status != EXIT_OK:
            print(f"error: {report['error']['message']}", file=sys.stderr)
        else:
            say(f"valid: {args.config} (mode {cfg['mode']})")
        return status

    progress = None if args.quiet else (lambda r, dt: print(format_result(r), flush=True))
    clock = time.perf_counter()
    status, report, run = run_config(cfg, args.seed, progress=progress)
    out = args.out or cfg.get("output", {}).get("dir", DEFAULT_OUT)
    _write_outputs(out, report, run, cfg.get("output", {}).get("csv", True))
    if report["error"] is not None:
        print(f"error: {report['error']['message']}", file=sys.stderr)
    elif status == EXIT_FAILED:
        failed = report["results"].get("failed")
        what = f"criteria {failed} failed" if failed else "verification failed"
        print(f"error: {what}", file=sys.stderr)
    if not args.quiet:
        print(f"wall time {time.perf_counter() - clock:.2f}s", file=sys.stderr)
    say(f"{report['status']}: report written to {Path(out) / 'report.json'}")
    return status


if __name__ == "__main__":
    sys.exit(main())
