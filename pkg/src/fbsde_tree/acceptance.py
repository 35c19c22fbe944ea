"""Seeded acceptance criteria for the whole solver stack.

Each criterion builds its own instances from an integer base seed, measures
the relevant quantities and compares them with fixed tolerances.  Criteria
are identified by number; :func:`run_acceptance` runs a selection and
returns one :class:`CriterionResult` per criterion.

Every accepted continuation solve made along the way is logged, and the
residual-contract and contraction criteria are evaluated over that log in
addition to their own instances.
"""

from dataclasses import dataclass, field
import math
import time

import numpy as np

from .bsde import BsdeProblem, bsde_stability_report, solve_bsde
from .coefficients import check_conditions, make_monotone_family, negate
from .continuation import (ContinuationOptions, PerturbationData, SolutionPair, apriori_report,
                           solve_fbsde)
from .direct import solve_linear_direct
from .errors import ConvergenceError, UsageError
from .lq import (ForwardLqData, cost_blq, cost_flq, insurance_demo,
                 insurance_liability_by_paths, insurance_residual, oracle_blq, oracle_flq,
                 random_blq, random_flq, solve_blq, solve_flq)
from .sde import SdeProblem, sde_stability_report
from .tree import TreeTopology, random_adapted

__all__ = ["CriterionResult", "CRITERIA", "run_acceptance", "format_result"]


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    metrics: dict
    seeds: list
    detail: str = ""

    def as_dict(self):
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "metrics": self.metrics, "seeds": list(self.seeds), "detail": self.detail}


@dataclass
class _SolveLog:
    """Accepted continuation solves: (tag, residual, bound, contraction factors)."""

    entries: list = field(default_factory=list)

    def solve(self, tag, coeffs, dom, perturbation=None, options=None, warm_start=None):
        opts = options or ContinuationOptions()
        sol, diag = solve_fbsde(coeffs, dom, perturbation, 1.0, opts, warm_start)
        self.record(tag, sol, diag, opts.tol)
        return sol, diag

    def record(self, tag, sol, diag, tol):
        bound = 10 * tol * (1 + math.sqrt(sol.norm_sq()))
        self.entries.append((tag, diag.residual, bound, list(diag.contraction)))


def _opts(tol):
    return ContinuationOptions(tol=tol)


# -- individual criteria ---------------------------------------------------------

def _oracle_equivalence(seed, log):
    topo = TreeTopology.two_point(5)
    worst_err = worst_res = 0.0
    seeds = []
    for i in range(20):
        s, case = seed + i, 1 + i % 2
        coeffs, dom = make_monotone_family(topo, 2, seed=s, case=case)
        sol, diag = log.solve(f"linear case {case} seed {s}", coeffs, dom, options=_opts(1e-13))
        ref = solve_linear_direct(coeffs)
        worst_err = max(worst_err, sol.relative_distance(ref))
        worst_res = max(worst_res, diag.residual)
        seeds.append(s)
    ok = worst_err <= 1e-8 and worst_res <= 1e-11
    return ok, {"max_relative_error": worst_err, "max_residual": worst_res}, seeds


def _uniqueness(seed, log):
    topo = TreeTopology.two_point(5)
    worst = 0.0
    seeds = []
    for i in range(6):
        s, case = seed + 100 + i, 1 + i % 2
        coeffs, dom = make_monotone_family(topo, 2, gain=0.1, seed=s, case=case)
        first, _ = log.solve(f"nonlinear case {case} seed {s}", coeffs, dom,
                             options=_opts(1e-12))
        start = SolutionPair(random_adapted(topo, 2, 0, 5, s).scale(10.0),
                             random_adapted(topo, 2, 0, 5, s + 1).scale(10.0))
        second, _ = log.solve(f"nonlinear case {case} seed {s} warm", coeffs, dom,
                              options=_opts(1e-12), warm_start=start)
        worst = max(worst, second.relative_distance(first))
        seeds.append(s)
    return worst <= 1e-8, {"max_disagreement": worst}, seeds


def _residual_contract(seed, log):
    # a few extra solves of the kinds not covered elsewhere, then the whole log
    topo = TreeTopology.two_point(4)
    seeds = []
    for i in range(4):
        s = seed + 200 + i
        coeffs, dom = make_monotone_family(topo, 2, gain=0.1 * (i % 2), seed=s, case=1 + i // 2)
        p = PerturbationData.random(topo, 2, s)
        log.solve(f"residual check seed {s}", coeffs, dom, p, _opts(1e-10))
        seeds.append(s)
    excess = [(tag, res / bound) for tag, res, bound, _ in log.entries]
    worst = max(r for _, r in excess)
    return worst <= 1.0, {"solves": len(excess), "max_residual_over_bound": worst}, seeds


def _monotonicity(seed, log):
    topo = TreeTopology.two_point(4)
    metrics, seeds, ok = {}, [], True
    for case in (1, 2):
        s = seed + 300 + case
        coeffs, dom = make_monotone_family(topo, 2, gain=0.1, seed=s, case=case,
                                           verify_samples=0)
        std = check_conditions(coeffs, dom, 10_000, seed=s, tolerance=1e-12)
        flip = check_conditions(negate(coeffs), dom, 10_000, seed=s, tolerance=1e-12,
                                orientation="flipped")
        metrics[f"case{case}_violations"] = std.total_violations
        metrics[f"case{case}_flipped_violations"] = flip.total_violations
        metrics[f"case{case}_samples"] = sum(std.samples.values())
        ok = ok and std.passed and flip.passed
        seeds.append(s)
    return ok, metrics, seeds


def _duality(seed, log):
    topo = TreeTopology.two_point(4)
    worst_tel = worst_exp = 0.0
    worst_slack = math.inf
    seeds = []
    for i in range(20):
        s, case = seed + 400 + i, 1 + i % 2
        coeffs, dom = make_monotone_family(topo, 2, gain=0.1 * (i // 2 % 2), seed=s, case=case)
        p = PerturbationData.random(topo, 2, s)
        pb = PerturbationData.random(topo, 2, s + 10_000)
        sol, _ = log.solve(f"duality seed {s}", coeffs, dom, p, _opts(1e-12))
        sol_bar, _ = log.solve(f"duality seed {s} bar", coeffs, dom, pb, _opts(1e-12))
        rec = apriori_report(coeffs, dom, sol, sol_bar, perturbation=p, perturbation_bar=pb)
        worst_tel = max(worst_tel, rec.telescoping_defect)
        worst_exp = max(worst_exp, rec.expanded_defect)
        worst_slack = min(worst_slack, rec.monotone_slack)
        seeds.append(s)
    ok = worst_tel <= 1e-12 and worst_slack >= -1e-10
    return ok, {"max_telescoping_defect": worst_tel, "max_expanded_defect": worst_exp,
                "min_monotone_slack": worst_slack}, seeds


def _affine_sde(topo, n, rng):
    mats = [rng.standard_normal((n, n)) / n for _ in range(2 * topo.horizon)]
    offs = [rng.standard_normal(n) for _ in range(2 * topo.horizon)]
    eta = rng.standard_normal(n)

    def build(shift_eta, shift_offs):
        return SdeProblem(topo, eta + shift_eta,
                          lambda k, x: x @ mats[k].T + offs[k] + shift_offs[k],
                          lambda k, x: x @ mats[topo.horizon + k].T + offs[topo.horizon + k]
                          + shift_offs[topo.horizon + k])
    return build


def _ratio_spread(ratios):
    ratios = np.asarray(ratios)
    return float(np.max(np.abs(ratios - ratios[0])) / abs(ratios[0]))


def _homogeneity(seed, log):
    s = seed + 500
    rng = np.random.default_rng(s)
    topo = TreeTopology.two_point(4)
    n, N = 2, topo.horizon
    scales = (1.0, 0.5, 0.25)
    metrics = {}

    build = _affine_sde(topo, n, rng)
    d_eta = rng.standard_normal(n)
    d_offs = [rng.standard_normal(n) for _ in range(2 * N)]
    base = build(0.0, [0.0] * (2 * N))
    sde = [sde_stability_report(base, build(a * d_eta, [a * o for o in d_offs]))
           for a in scales + (0.0,)]
    metrics["sde_ratio_spread"] = _ratio_spread([r.ratio for r in sde[:3]])
    metrics["sde_lhs_at_zero"] = sde[3].lhs

    A = [rng.standard_normal((n, n)) / n for _ in range(N)]
    B = [rng.standard_normal((n, n)) / n for _ in range(N)]
    c = [rng.standard_normal(n) for _ in range(N)]
    xi = rng.standard_normal((topo.n_nodes(N), n))
    d_xi = rng.standard_normal((topo.n_nodes(N), n))
    d_c = [rng.standard_normal((topo.n_nodes(k), n)) for k in range(N)]

    def bsde(a):
        return BsdeProblem(topo, xi + a * d_xi,
                           lambda k, yp, zp: yp @ A[k].T + zp @ B[k].T + c[k] + a * d_c[k])
    rec = [bsde_stability_report(bsde(0.0), bsde(a)) for a in scales + (0.0,)]
    metrics["bsde_ratio_spread"] = _ratio_spread([r.ratio for r in rec[:3]])
    metrics["bsde_lhs_at_zero"] = rec[3].lhs

    coeffs, dom = make_monotone_family(topo, n, seed=s)
    p = PerturbationData.random(topo, n, s)
    dp = PerturbationData.random(topo, n, s + 1)
    sol, _ = log.solve("homogeneity base", coeffs, dom, p, _opts(1e-13))
    ratios, zero_lhs = [], None
    for a in scales + (0.0,):
        pb = p + dp.scale(a)
        sol_bar, _ = log.solve(f"homogeneity scale {a:g}", coeffs, dom, pb, _opts(1e-13))
        rec = apriori_report(coeffs, dom, sol, sol_bar, perturbation=p, perturbation_bar=pb)
        if a:
            ratios.append(rec.ratio_j)
        else:
            zero_lhs = rec.lhs
    metrics["fbsde_ratio_spread"] = _ratio_spread(ratios)
    metrics["fbsde_lhs_at_zero"] = zero_lhs
    ok = (all(metrics[f"{w}_ratio_spread"] <= 1e-9 for w in ("sde", "bsde", "fbsde"))
          and all(metrics[f"{w}_lhs_at_zero"] == 0.0 for w in ("sde", "bsde", "fbsde")))
    return ok, metrics, [s]


def _flq_hand(seed, log):
    topo = TreeTopology.two_point(1)
    data = ForwardLqData.build(topo, 1, 1, A=1.0, B=1.0, b=1.0, M=1.0, G=1.0, R=1.0)
    sol = solve_flq(data)
    ora = oracle_flq(data)
    errs = {"xi_error": abs(sol.xi[0] + 1 / 3), "u0_error": abs(sol.u[0][0, 0] + 1 / 3),
            "cost_error": abs(sol.cost - 1 / 6), "oracle_xi_error": abs(ora.xi[0] + 1 / 3),
            "oracle_cost_error": abs(ora.cost - 1 / 6)}
    return all(v <= 1e-10 for v in errs.values()), errs, []


def _perturbed(rng, control, scale):
    return [f + scale * rng.standard_normal(f.shape) for f in control.fields]


def _lq_optimality(seed, log):
    topo = TreeTopology.two_point(4)
    m = {"flq_max_control_gap": 0.0, "flq_min_cost_gain": math.inf, "flq_max_stationarity": 0.0,
         "blq_max_control_gap": 0.0, "blq_min_cost_gain": math.inf, "blq_max_stationarity": 0.0}
    seeds = []
    opts = _opts(1e-12)
    for i in range(20):
        s = seed + 800 + i
        rng = np.random.default_rng(s)
        data = random_flq(topo, 2, 1, s)
        sol = solve_flq(data, opts)
        log.record(f"flq seed {s}", SolutionPair(sol.x, sol.y), sol.diagnostics, opts.tol)
        ora = oracle_flq(data)
        gap = max(np.max(np.abs(sol.xi - ora.xi)),
                  max(np.max(np.abs(a - b)) for a, b in zip(sol.u.fields, ora.control.fields)))
        m["flq_max_control_gap"] = max(m["flq_max_control_gap"], float(gap))
        m["flq_max_stationarity"] = max(m["flq_max_stationarity"], sol.stationarity)
        for _ in range(100):
            scale = 10 ** rng.uniform(-3, 0)
            gain = (cost_flq(data, sol.xi + scale * rng.standard_normal(2),
                             _perturbed(rng, sol.u, scale)) - sol.cost)
            m["flq_min_cost_gain"] = min(m["flq_min_cost_gain"], gain)

        data = random_blq(topo, 2, 1, s)
        sol = solve_blq(data, opts)
        log.record(f"blq seed {s}", SolutionPair(sol.x, sol.y), sol.diagnostics, opts.tol)
        ora = oracle_blq(data)
        gap = max(np.max(np.abs(a - b)) for a, b in zip(sol.v.fields, ora.control.fields))
        m["blq_max_control_gap"] = max(m["blq_max_control_gap"], float(gap))
        m["blq_max_stationarity"] = max(m["blq_max_stationarity"], sol.stationarity)
        for _ in range(100):
            scale = 10 ** rng.uniform(-3, 0)
            gain = cost_blq(data, _perturbed(rng, sol.v, scale)) - sol.cost
            m["blq_min_cost_gain"] = min(m["blq_min_cost_gain"], gain)
        seeds.append(s)
    ok = all(m[f"{w}_max_control_gap"] <= 1e-8 and m[f"{w}_min_cost_gain"] >= -1e-10
             and m[f"{w}_max_stationarity"] <= 1e-10 for w in ("flq", "blq"))
    return ok, m, seeds


def _martingale(seed, log):
    worst = 0.0
    seeds = []
    for i, topo in enumerate((TreeTopology.two_point(6), TreeTopology.two_point(5, a=2.0))):
        s = seed + 900 + i
        N = topo.horizon
        xi = np.random.default_rng(s).standard_normal((topo.n_nodes(N), 3))
        y = solve_bsde(BsdeProblem(topo, xi, lambda k, yp, zp: yp))
        probs = topo.node_probabilities(N)
        for k in range(N + 1):
            # average over the leaves below each level-k node with explicit weights
            block = topo.n_nodes(N - k)
            leaves = xi.reshape(topo.n_nodes(k), block, 3)
            weights = probs.reshape(topo.n_nodes(k), block)
            direct = np.einsum("vb,vbd->vd", weights, leaves) / weights.sum(axis=1)[:, None]
            worst = max(worst, float(np.max(np.abs(y[k] - direct))))
        seeds.append(s)
    return worst <= 1e-14, {"max_error": worst}, seeds


def _insurance(seed, log):
    s = seed + 1000
    rng = np.random.default_rng(s)
    topo = TreeTopology.two_point(6)
    N = topo.horizon
    r = rng.uniform(0.0, 0.05, N)
    rho = rng.uniform(0.0, 0.1, N)
    sigma = rng.uniform(0.1, 0.4, N)
    lam = rng.uniform(0.0, 0.05, N)
    c = rng.uniform(0.0, 0.3, N)
    u = [rng.uniform(-1, 1, topo.n_nodes(k)) for k in range(N)]
    x, y = insurance_demo(topo, r, rho, sigma, lam, c, 1.0, u)
    res = insurance_residual(topo, r, rho, sigma, lam, c, 1.0, u, x, y)
    paths = insurance_liability_by_paths(topo, r, rho, sigma, lam, c, 1.0, u)
    err = float(np.max(np.abs(y[0][:, 0] - paths)))
    return res <= 1e-12 and err <= 1e-12, {"residual": res, "y0_error": err}, [s]


def _contraction(seed, log):
    topo = TreeTopology.two_point(5)
    metrics = {}
    seeds = []
    failed_cleanly = wrong = False
    for i in range(5):
        s = seed + 1100 + i
        coeffs, dom = make_monotone_family(topo, 2, seed=s, coupling=1.0)
        forced = ContinuationOptions(tol=1e-12, delta_init=1.0, delta_min=1.0)
        seeds.append(s)
        try:
            sol, _ = solve_fbsde(coeffs, dom, None, 1.0, forced)
        except ConvergenceError as exc:
            failed_cleanly = bool(exc.diagnostics and exc.diagnostics.attempts)
            metrics["forced_attempts"] = len(exc.diagnostics.attempts)
            sol, diag = log.solve(f"ladder seed {s}", coeffs, dom, options=_opts(1e-12))
            metrics["ladder_error_vs_direct"] = sol.relative_distance(solve_linear_direct(coeffs))
            metrics["ladder_alpha_grid"] = list(diag.alpha_grid)
            break
        # a converged oversized step must still be right
        wrong = wrong or sol.relative_distance(solve_linear_direct(coeffs)) > 1e-8
    factors = [f for *_, cs in log.entries for f in cs]
    metrics["accepted_solves"] = len(log.entries)
    metrics["max_contraction"] = max(factors) if factors else 0.0
    ok = (failed_cleanly and not wrong and metrics["max_contraction"] < 1
          and metrics.get("ladder_error_vs_direct", 1.0) <= 1e-8)
    return ok, metrics, seeds


CRITERIA = {
    1: ("oracle equivalence on linear instances", _oracle_equivalence),
    2: ("uniqueness from two warm starts", _uniqueness),
    3: ("residual contract", _residual_contract),
    4: ("monotonicity sampling", _monotonicity),
    5: ("duality identity and monotone inequality", _duality),
    6: ("estimate homogeneity", _homogeneity),
    7: ("forward LQ hand instance", _flq_hand),
    8: ("LQ optimality against the QP oracle", _lq_optimality),
    9: ("backward martingale property", _martingale),
    10: ("insurance demo", _insurance),
    11: ("contraction measurement", _contraction),
}

# criteria that audit the solve log run after all others
_AUDITS = (3, 11)


def run_acceptance(selection=None, seed=0, progress=None):
    """Run the selected criteria (all by default) with base seed ``seed``.

    Returns
    -------
    list of CriterionResult
        In criterion order.
    """
    numbers = sorted(CRITERIA) if selection is None else sorted(set(selection))
    if not numbers:
        raise UsageError("empty criterion selection")
    unknown = [c for c in numbers if c not in CRITERIA]
    if unknown:
        raise UsageError(f"unknown criteria {unknown}")
    seed = int(seed)
    log = _SolveLog()
    order = [c for c in numbers if c not in _AUDITS] + [c for c in numbers if c in _AUDITS]
    results = {}
    for number in order:
        name, fn = CRITERIA[number]
        clock = time.perf_counter()
        try:
            ok, metrics, seeds = fn(seed, log)
            detail = ""
        except Exception as exc:  # a crashing criterion is a failed criterion
            ok, metrics, seeds, detail = False, {}, [], f"{type(exc).__name__}: {exc}"
        results[number] = CriterionResult(number, name, bool(ok), metrics, seeds, detail)
        if progress is not None:
            progress(results[number], time.perf_counter() - clock)
    return [results[c] for c in numbers]


def format_result(result):
    """One summary line for a criterion."""
    status = "PASS" if result.passed else "FAIL"
    parts = [f"{k}={_short(v)}" for k, v in sorted(result.metrics.items())]
    if result.detail:
        parts.append(result.detail)
    return f"criterion {result.number:2d} {status}  {result.name}: " + ", ".join(parts)


def _short(value):
    if isinstance(value, float):
        return f"{value:.3e}"
    if isinstance(value, list):
        return "[" + ", ".join(_short(v) for v in value) + "]"
    return str(value)
