"""Receding-horizon optimization of six-activity social-distancing policies.

Decision variables are per-period increments of the activity restriction
vector. Within a window of Tp predicted days the increments expand to a
staircase policy (decision j takes effect on day (j-1)*Ta + 1 and the last
one holds through day Tp). Candidate policies are scored on a common
adherence draw set, which makes the empirical objective a deterministic
function of the decisions, and minimized by projected Nelder-Mead direct
search from multiple deterministic starts.

Formulations: PMPC scores scenario expectations and enforces chance
constraints; DMPC replaces scenario distributions with their means; RMPC
replaces every expectation with the worst case over the draw set.

Hard constraints (policy bounds and per-period increase caps) are enforced
by projection and hold exactly on every returned plan; the hospitalization
and reproduction-number constraints enter the search as an exact penalty
and are reported, not raised.
"""

from __future__ import annotations

import datetime as dt
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .ensemble import (EnsembleResult, assemble_result, simulate_from_array,
                       simulate_ensemble)
from .mobility import AdherenceModel, sample_adherence
from .model import COMPARTMENTS, CompartmentState, EpiParamSchedule

DEFAULT_ALPHA_UPPER = (0.91, 0.59, 0.85, 0.87, 0.75, 1.0)
DEFAULT_DELTA_CAP = (0.25, 0.25, 0.25, 0.25, 0.25, 1.0)
DEFAULT_OMEGA_ACTIVITY = (0.2, 1.0, 0.5, 0.5, 1.0, 0.5)

FORMULATIONS = ("PMPC", "DMPC", "RMPC")
OBJECTIVES = ("quadratic", "linear_P", "linear_E")


@dataclass(frozen=True)
class MpcConfig:
    """Horizons, weights, bounds and probability levels of one controller."""

    Tp: int = 21
    Tc: int = 14
    Ta: int = 7
    omega_I: float = 10.0
    omega_R: float = 10.0
    omega_activity: tuple = DEFAULT_OMEGA_ACTIVITY  # diagonal of the activity-cost matrix
    alpha_upper: tuple = DEFAULT_ALPHA_UPPER
    delta_alpha_cap: tuple = DEFAULT_DELTA_CAP
    beds: float = 13000.0
    r_eff_cap: float = 1.0
    p_bed: float = 0.9
    p_rep: float = 0.9
    n_cases: int = 200
    formulation: str = "PMPC"
    objective: str = "quadratic"
    seed: int = 20200224
    penalty_coeff: float = 1e4
    max_evals: int = 2000
    simplex_tol: float = 1e-4
    n_starts: int = 8

    @property
    def Nd(self) -> int:
        return self.Tc // self.Ta

    def validate(self) -> list[str]:
        problems = []
        if self.Ta < 1 or self.Tc < 1 or self.Tp < 1:
            problems.append("horizons must be positive")
        if self.Tc % self.Ta != 0:
            problems.append(f"Ta={self.Ta} must divide Tc={self.Tc}")
        if self.Tc > self.Tp:
            problems.append(f"Tc={self.Tc} must not exceed Tp={self.Tp}")
        for name in ("alpha_upper", "delta_alpha_cap"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (6,):
                problems.append(f"{name} must have six entries")
            elif np.any(v < 0) or np.any(v > 1):
                problems.append(f"{name} entries must be in [0, 1]")
        if len(np.atleast_1d(self.omega_activity)) != 6:
            problems.append("omega_activity must have six entries")
        if self.formulation not in FORMULATIONS:
            problems.append(f"formulation must be one of {FORMULATIONS}")
        if self.objective not in OBJECTIVES:
            problems.append(f"objective must be one of {OBJECTIVES}")
        if self.formulation in ("DMPC", "RMPC") and self.objective != "quadratic":
            problems.append("linear objectives are defined for PMPC only")
        for name in ("p_bed", "p_rep"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                problems.append(f"{name} must be in [0, 1]")
        if self.n_cases < 1:
            problems.append("n_cases must be >= 1")
        return problems


@dataclass(frozen=True)
class ConstraintReport:
    """Per-day constraint standing of a plan on its evaluation ensemble."""

    feasible: bool
    p_bed_exceed: np.ndarray   # (Tp,) P[H(t) > Beds]
    p_rep_exceed: np.ndarray   # (Tp,) P[R_eff(t) > cap]
    mean_H: np.ndarray
    max_H: np.ndarray
    mean_Re: np.ndarray
    max_Re: np.ndarray
    bounds_ok: bool
    rate_ok: bool
    violation: float           # scalar the penalty multiplies; 0 iff feasible


@dataclass(frozen=True)
class PolicyPlan:
    """Solution of one window: increments, expanded policy and diagnostics."""

    deltas: np.ndarray            # (Nd, 6)
    base_alpha: np.ndarray        # (6,) policy in force before the window
    expanded: np.ndarray          # (Tp, 6) alpha for days 1..Tp
    objective_value: float
    penalty: float
    feasible: bool
    report: ConstraintReport
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class WindowRecord:
    date: dt.date
    day: int
    x0_mean: tuple
    plan: PolicyPlan


@dataclass(frozen=True)
class ClosedLoopResult:
    """Stitched outcome of a receding-horizon episode."""

    windows: tuple[WindowRecord, ...]
    realized: EnsembleResult
    any_infeasible: bool


def project_deltas(deltas: np.ndarray, base_alpha: np.ndarray,
                   cfg: MpcConfig) -> np.ndarray:
    """Map arbitrary increments onto the feasible region.

    Period by period: cap the increase at delta_alpha_cap (decreases are
    uncapped), then clip so the cumulative policy stays inside
    [0, alpha_upper]. The result always satisfies the hard constraints.
    """
    cap = np.asarray(cfg.delta_alpha_cap, dtype=float)
    upper = np.asarray(cfg.alpha_upper, dtype=float)
    out = np.empty((cfg.Nd, 6))
    cum = np.asarray(base_alpha, dtype=float).copy()
    for j in range(cfg.Nd):
        d = np.minimum(deltas[j], cap)
        d = np.clip(d, -cum, upper - cum)
        out[j] = d
        cum = cum + d
    return out


def expand_policy(deltas: np.ndarray, cfg: MpcConfig,
                  base_alpha: np.ndarray | None = None) -> np.ndarray:
    """Staircase expansion: day t carries every increment j with
    (j-1)*Ta + 1 <= t; the final level holds through Tp. Returns (Tp, 6)."""
    deltas = np.asarray(deltas, dtype=float).reshape(cfg.Nd, 6)
    base = np.zeros(6) if base_alpha is None else np.asarray(base_alpha, dtype=float)
    cum = base + np.cumsum(deltas, axis=0)   # level during period j
    out = np.empty((cfg.Tp, 6))
    for t in range(1, cfg.Tp + 1):
        j = min((t - 1) // cfg.Ta, cfg.Nd - 1)
        out[t - 1] = cum[j]
    return out


def _finite_scale(x: float) -> float:
    return x if np.isfinite(x) and x > 0 else 1.0


def evaluate_constraints(H: np.ndarray, Re: np.ndarray, deltas: np.ndarray,
                         expanded: np.ndarray, cfg: MpcConfig) -> ConstraintReport:
    """Constraint standing for H, Re of shape (n, Tp) on the draw ensemble.

    The scalar violation is zero exactly when the report is feasible; for
    PMPC it combines the probability excess with the constraint-level
    quantile excess so the direct search gets a graded signal instead of a
    counting staircase.
    """
    n = H.shape[0]
    p_bed_exceed = np.count_nonzero(H > cfg.beds, axis=0) / n
    p_rep_exceed = np.count_nonzero(Re > cfg.r_eff_cap, axis=0) / n
    mean_H, max_H = H.mean(axis=0), H.max(axis=0)
    mean_Re, max_Re = Re.mean(axis=0), Re.max(axis=0)

    upper = np.asarray(cfg.alpha_upper)
    bounds_ok = bool(np.all(expanded >= 0.0) and np.all(expanded <= upper))
    rate_ok = bool(np.all(deltas <= np.asarray(cfg.delta_alpha_cap)))

    tol = 1e-9
    bscale, rscale = _finite_scale(cfg.beds), _finite_scale(cfg.r_eff_cap)
    if cfg.formulation == "PMPC":
        allowed_bed, allowed_rep = 1.0 - cfg.p_bed, 1.0 - cfg.p_rep
        soft_ok = bool(np.all(p_bed_exceed <= allowed_bed + tol)
                       and np.all(p_rep_exceed <= allowed_rep + tol))
        viol = (np.maximum(0.0, p_bed_exceed - allowed_bed).sum()
                + np.maximum(0.0, p_rep_exceed - allowed_rep).sum())
        if np.isfinite(cfg.beds):
            qb = np.quantile(H, cfg.p_bed, axis=0, method="higher")
            viol += np.maximum(0.0, qb - cfg.beds).sum() / bscale
        if np.isfinite(cfg.r_eff_cap):
            qr = np.quantile(Re, cfg.p_rep, axis=0, method="higher")
            viol += np.maximum(0.0, qr - cfg.r_eff_cap).sum() / rscale
    elif cfg.formulation == "DMPC":
        soft_ok = bool(np.all(mean_H <= cfg.beds + tol * bscale)
                       and np.all(mean_Re <= cfg.r_eff_cap + tol * rscale))
        viol = (np.maximum(0.0, mean_H - cfg.beds).sum() / bscale
                + np.maximum(0.0, mean_Re - cfg.r_eff_cap).sum() / rscale)
    else:  # RMPC
        soft_ok = bool(np.all(max_H <= cfg.beds + tol * bscale)
                       and np.all(max_Re <= cfg.r_eff_cap + tol * rscale))
        viol = (np.maximum(0.0, max_H - cfg.beds).sum() / bscale
                + np.maximum(0.0, max_Re - cfg.r_eff_cap).sum() / rscale)
    if not np.isfinite(viol):
        viol = 0.0

    return ConstraintReport(
        feasible=soft_ok and bounds_ok and rate_ok,
        p_bed_exceed=p_bed_exceed, p_rep_exceed=p_rep_exceed,
        mean_H=mean_H, max_H=max_H, mean_Re=mean_Re, max_Re=max_Re,
        bounds_ok=bounds_ok, rate_ok=rate_ok, violation=float(viol))


def _h_ratio(H_c: np.ndarray, H_u: np.ndarray) -> np.ndarray:
    out = np.ones_like(H_c)
    np.divide(H_c, H_u, out=out, where=H_u > 0)
    return out


def objective_value(expanded: np.ndarray, H_c: np.ndarray, Re_c: np.ndarray,
                    H_u: np.ndarray, cfg: MpcConfig) -> float:
    """Window cost of an expanded policy given controlled/uncontrolled
    hospitalization (n, Tp) and controlled R_eff (n, Tp) on common draws."""
    omega = np.asarray(cfg.omega_activity, dtype=float)
    if cfg.formulation == "DMPC":
        mc, mu = H_c.mean(axis=0), H_u.mean(axis=0)
        ratio = np.ones_like(mc)
        np.divide(mc, mu, out=ratio, where=mu > 0)
        infection = cfg.omega_I * np.sum(ratio ** 2)
        reproduction = cfg.omega_R * np.sum(Re_c.mean(axis=0) ** 2)
        activity = np.sum((expanded ** 2) @ omega)
    elif cfg.formulation == "RMPC":
        ratio = _h_ratio(H_c, H_u)
        infection = cfg.omega_I * np.sum((ratio ** 2).max(axis=0))
        reproduction = cfg.omega_R * np.sum((Re_c ** 2).max(axis=0))
        activity = np.sum((expanded ** 2) @ omega)
    elif cfg.objective == "quadratic":
        ratio = _h_ratio(H_c, H_u)
        infection = cfg.omega_I * np.sum((ratio ** 2).mean(axis=0))
        reproduction = cfg.omega_R * np.sum((Re_c ** 2).mean(axis=0))
        activity = np.sum((expanded ** 2) @ omega)
    elif cfg.objective == "linear_P":
        ratio = _h_ratio(H_c, H_u)
        infection = cfg.omega_I * np.sum(ratio.mean(axis=0))
        reproduction = cfg.omega_R * np.sum(Re_c.mean(axis=0))
        activity = np.sum(expanded @ omega)
    else:  # linear_E
        mc, mu = H_c.mean(axis=0), H_u.mean(axis=0)
        ratio = np.ones_like(mc)
        np.divide(mc, mu, out=ratio, where=mu > 0)
        infection = cfg.omega_I * np.sum(ratio)
        reproduction = cfg.omega_R * np.sum(Re_c.mean(axis=0))
        activity = np.sum(expanded @ omega)
    return float(infection + reproduction + activity)


@dataclass
class _WindowProblem:
    """Everything one window solve needs; picklable for process pools."""

    x0: CompartmentState
    schedule: EpiParamSchedule
    weights: np.ndarray
    cfg: MpcConfig
    theta: np.ndarray          # (n, Tp)
    base_alpha: np.ndarray
    H_u: np.ndarray            # (n, Tp) zero-restriction companion
    penalty: float = 0.0

    def predict(self, expanded: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = np.concatenate([[0.0], expanded @ self.weights])
        states, r_eff = simulate_ensemble(self.x0, self.schedule, u,
                                          self.theta, self.cfg.Tp)
        return states[:, 1:, COMPARTMENTS.index("H")], r_eff[:, 1:]

    def score(self, x: np.ndarray) -> tuple[float, float, np.ndarray]:
        deltas = project_deltas(x.reshape(self.cfg.Nd, 6), self.base_alpha, self.cfg)
        expanded = expand_policy(deltas, self.cfg, self.base_alpha)
        H_c, Re_c = self.predict(expanded)
        j = objective_value(expanded, H_c, Re_c, self.H_u, self.cfg)
        report = evaluate_constraints(H_c, Re_c, deltas, expanded, self.cfg)
        return j, report.violation, deltas

    def penalized(self, x: np.ndarray) -> float:
        j, viol, _ = self.score(x)
        return j + self.penalty * viol


def prepare_window(x0: CompartmentState, schedule: EpiParamSchedule,
                   weights, cfg: MpcConfig, theta) -> _WindowProblem:
    """Resolve the companion run and penalty scale for one window."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        theta = np.repeat(theta[:, None], cfg.Tp, axis=1)
    theta = theta[:, :cfg.Tp]
    u0 = np.zeros(cfg.Tp + 1)
    states_u, _ = simulate_ensemble(x0, schedule, u0, theta, cfg.Tp)
    H_u = states_u[:, 1:, COMPARTMENTS.index("H")]
    prob = _WindowProblem(x0=x0, schedule=schedule,
                          weights=np.asarray(weights, dtype=float), cfg=cfg,
                          theta=theta, base_alpha=np.zeros(6), H_u=H_u)
    return prob


def _start_points(prob: _WindowProblem) -> list[np.ndarray]:
    cfg = prob.cfg
    cap = np.asarray(cfg.delta_alpha_cap, dtype=float)
    upper = np.asarray(cfg.alpha_upper, dtype=float)
    zeros = np.zeros((cfg.Nd, 6))
    full = np.tile(cap, (cfg.Nd, 1))
    first_only = zeros.copy()
    first_only[0] = cap
    ramp = np.tile((upper - prob.base_alpha) / cfg.Nd, (cfg.Nd, 1))
    center = full / 2.0
    starts = [zeros, full, first_only, ramp, center]
    rng = np.random.default_rng([cfg.seed, prob.x0.day])
    while len(starts) < cfg.n_starts:
        starts.append(rng.uniform(-cap, cap, size=(cfg.Nd, 6)))
    return [s.ravel() for s in starts[:cfg.n_starts]]


def _initial_simplex(x0: np.ndarray, prob: _WindowProblem) -> np.ndarray:
    cap = np.tile(np.asarray(prob.cfg.delta_alpha_cap, dtype=float),
                  prob.cfg.Nd)
    step = 0.25 * np.where(cap > 0, cap, 1.0)
    # step toward the interior so projection does not flatten the simplex
    step = np.where(x0 > cap / 2.0, -step, step)
    simplex = np.tile(x0, (x0.size + 1, 1))
    simplex[1:] += np.diag(step)
    return simplex


def _solve_one_start(args):
    prob, x_start, start_idx = args
    trace_rows = []
    evals = 0

    def fun(x):
        nonlocal evals
        evals += 1
        return prob.penalized(x)

    def cb(xk):
        j, viol, _ = prob.score(xk)
        trace_rows.append((start_idx, evals, j, viol))

    res = optimize.minimize(
        fun, x_start, method="Nelder-Mead",
        options={"maxfev": prob.cfg.max_evals,
                 "xatol": prob.cfg.simplex_tol,
                 "fatol": 1e-9,
                 "initial_simplex": _initial_simplex(x_start, prob)},
        callback=cb)
    j, viol, deltas = prob.score(res.x)
    return {"start": start_idx, "x": res.x, "deltas": deltas, "objective": j,
            "violation": viol, "penalized": j + prob.penalty * viol,
            "evals": evals, "converged": bool(res.success), "trace": trace_rows}


def _worker_count() -> int:
    raw = os.environ.get("EPICONTROL_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        return 1
    if k == 0:
        return os.cpu_count() or 1
    return max(1, k)


def solve_window(x0: CompartmentState, cfg: MpcConfig,
                 schedule: EpiParamSchedule, weights, theta,
                 base_alpha=None, trace: list | None = None) -> PolicyPlan:
    """Optimize one window's increments by multi-start projected Nelder-Mead.

    Deterministic given (cfg.seed, x0, draws): starts are fixed corners,
    the center and seeded uniforms, and results merge by start index. When
    every start ends infeasible the best-by-penalty plan is returned with
    feasible=False (a report, not an error).
    """
    prob = prepare_window(x0, schedule, weights, cfg, theta)
    if base_alpha is not None:
        prob.base_alpha = np.asarray(base_alpha, dtype=float)
    j0, _, _ = prob.score(np.zeros(cfg.Nd * 6))
    prob.penalty = cfg.penalty_coeff * max(1.0, abs(j0))

    starts = _start_points(prob)
    jobs = [(prob, s, i) for i, s in enumerate(starts)]
    workers = _worker_count()
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_solve_one_start, jobs))
    else:
        results = [_solve_one_start(job) for job in jobs]
    results.sort(key=lambda r: r["start"])
    if trace is not None:
        for r in results:
            trace.extend(r["trace"])

    best = min(results, key=lambda r: (r["penalized"], r["start"]))
    deltas = best["deltas"]
    expanded = expand_policy(deltas, cfg, prob.base_alpha)
    H_c, Re_c = prob.predict(expanded)
    report = evaluate_constraints(H_c, Re_c, deltas, expanded, cfg)
    diag = {
        "evals": [r["evals"] for r in results],
        "objectives": [r["objective"] for r in results],
        "violations": [r["violation"] for r in results],
        "chosen_start": best["start"],
        "converged": [r["converged"] for r in results],
        "status": "ok" if report.feasible else "no_feasible_point",
        "penalty_coeff": prob.penalty,
    }
    return PolicyPlan(deltas=deltas, base_alpha=prob.base_alpha.copy(),
                      expanded=expanded, objective_value=best["objective"],
                      penalty=best["violation"] * prob.penalty,
                      feasible=report.feasible, report=report, diagnostics=diag)


def receding_horizon(start: dt.date, end: dt.date, cfg: MpcConfig,
                     schedule: EpiParamSchedule, weights,
                     x0: CompartmentState,
                     adherence: AdherenceModel | None = None,
                     trace: list | None = None) -> ClosedLoopResult:
    """Closed loop: solve, enact the first decision for Ta days, advance the
    scenario ensemble, re-solve from the ensemble-mean state.

    The same adherence draw set serves every window and the realized
    ensemble (a scenario keeps one compliance character for the episode).
    """
    if x0.day != schedule.day_of(start):
        raise ValueError(f"x0 is at day {x0.day}, but start {start} is day "
                         f"{schedule.day_of(start)}")
    adherence = adherence or AdherenceModel()
    total = (end - start).days
    if total < 1:
        raise ValueError("episode must span at least one day")
    theta_all = sample_adherence(adherence, cfg.seed, cfg.n_cases,
                                 total + cfg.Tp, weights=np.asarray(weights))

    n = cfg.n_cases
    scen = np.tile([getattr(x0, c) for c in COMPARTMENTS], (n, 1)).astype(float)
    states_all = np.empty((n, total + 1, len(COMPARTMENTS)))
    reff_all = np.empty((n, total + 1))
    states_all[:, 0, :] = scen
    alpha_real = np.zeros((total + 1, 6))
    base_alpha = np.zeros(6)
    windows = []
    any_infeasible = False

    elapsed = 0
    while elapsed < total:
        day = x0.day + elapsed
        x0_mean = CompartmentState.from_values(scen.mean(axis=0), day)
        theta_win = theta_all[:, elapsed:elapsed + cfg.Tp]
        plan = solve_window(x0_mean, cfg, schedule, weights, theta_win,
                            base_alpha=base_alpha, trace=trace)
        windows.append(WindowRecord(date=schedule.date_of(day), day=day,
                                    x0_mean=x0_mean.as_tuple(), plan=plan))
        any_infeasible = any_infeasible or not plan.feasible

        steps = min(cfg.Ta, total - elapsed)
        enacted = plan.expanded[0]
        u_enact = float(enacted @ np.asarray(weights))
        u_seq = np.full(steps + 1, u_enact)
        theta_seq = theta_all[:, elapsed:elapsed + steps]
        chunk_states, chunk_reff = simulate_from_array(
            scen, day, schedule, u_seq, theta_seq, steps)
        states_all[:, elapsed + 1:elapsed + steps + 1, :] = chunk_states[:, 1:, :]
        reff_all[:, elapsed + 1:elapsed + steps + 1] = chunk_reff[:, 1:]
        alpha_real[elapsed + 1:elapsed + steps + 1, :] = enacted
        scen = chunk_states[:, -1, :]
        base_alpha = enacted.copy()
        elapsed += steps

    reff_all[:, 0] = reff_all[:, 1]
    u_real = alpha_real @ np.asarray(weights)
    realized = assemble_result(x0, schedule, states_all, reff_all,
                               theta_all[:, :total], alpha_real, u_real, None)
    return ClosedLoopResult(windows=tuple(windows), realized=realized,
                            any_infeasible=any_infeasible)
