"""Monte Carlo adherence ensembles over the compartment model.

A scenario is one adherence deviation series pushed through the simulator
under a fixed activity-restriction policy. The ensemble carries per-day
per-compartment statistics plus the effective-reproduction-number series
that the controller's objective and chance constraints consume.

Scenario simulations are independent; the engine vectorizes across them
with numpy and matches the scalar single-trajectory path bit for bit (the
update expressions are written identically in both places).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import DenominatorNonpositive, UncontrolledRunMissing
from .model import COMPARTMENTS, CompartmentState, EpiParamSchedule

_IDX = {c: i for i, c in enumerate(COMPARTMENTS)}
QUANTILES = (0.025, 0.5, 0.975)


@dataclass(frozen=True)
class EnsembleResult:
    """Trajectories and derived statistics of one scenario ensemble.

    states has shape (n_scenarios, days+1, 10) in COMPARTMENTS order;
    r_eff has shape (n_scenarios, days+1) where entry t pairs the
    previous-day state with the transmission rate in force at day t.
    alpha/u_series are indexed by day with row 0 display-only (no
    transition uses it).
    """

    start_day: int
    day_zero: dt.date
    states: np.ndarray
    theta: np.ndarray          # (n, days) adherence deviations
    alpha: np.ndarray          # (days+1, 6) restriction policy
    u_series: np.ndarray       # (days+1,)
    r_eff: np.ndarray          # (n, days+1)
    mean: np.ndarray           # (days+1, 10)
    std: np.ndarray
    quantiles: np.ndarray      # (3, days+1, 10) at 2.5/50/97.5%
    uncontrolled: "EnsembleResult | None" = None

    @property
    def n_scenarios(self) -> int:
        return self.states.shape[0]

    @property
    def days(self) -> int:
        return self.states.shape[1] - 1

    def compartment(self, name: str) -> np.ndarray:
        return self.states[:, :, _IDX[name]]

    def date_of(self, t: int) -> dt.date:
        return self.day_zero + dt.timedelta(days=self.start_day + t)

    def observable(self, name: str) -> np.ndarray:
        if name == "R_eff":
            return self.r_eff
        return self.compartment(name)


def _theta_matrix(theta, n: int, days: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        theta = np.repeat(theta[:, None], days, axis=1)
    if theta.shape != (n, days):
        raise ValueError(f"adherence draws have shape {theta.shape}, "
                         f"expected ({n}, {days})")
    return theta


def _step_arrays(cols: dict, p, beta: np.ndarray, day: int) -> dict:
    # mirrors model.step expression for expression; operates on (n,) arrays
    S, E, I_A, I_S = cols["S"], cols["E"], cols["I_A"], cols["I_S"]
    H, Q, R_A, R_H, R_Q, D = (cols["H"], cols["Q"], cols["R_A"],
                              cols["R_H"], cols["R_Q"], cols["D"])
    denom = p.N - D - Q - H
    bad = np.nonzero(denom <= 0.0)[0]
    if bad.size:
        raise DenominatorNonpositive(
            f"active population <= 0 entering day {day} (scenario {bad[0]})",
            day=day, scenario=int(bad[0]))
    inflow = beta * (I_A + I_S) * S / denom
    return {
        "S": S - inflow,
        "E": E + inflow - p.sigma * E,
        "I_A": I_A + (1.0 - p.epsilon) * p.sigma * E - p.delta_A * I_A,
        "I_S": I_S + p.epsilon * p.sigma * E - p.h * I_S,
        "H": (H + p.f1 * p.h * I_S - p.f2 * p.gamma * H
              - (1.0 - p.f2) * p.delta_H * H),
        "Q": Q + (1.0 - p.f1) * p.h * I_S - p.delta_Q * Q,
        "R_A": R_A + p.delta_A * I_A,
        "R_H": R_H + (1.0 - p.f2) * p.delta_H * H,
        "R_Q": R_Q + p.delta_Q * Q,
        "D": D + p.f2 * p.gamma * H,
    }


def _clamped_factor(u: float, theta_col: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - u + theta_col, 0.0, 1.0)


def simulate_ensemble(x0: CompartmentState, schedule: EpiParamSchedule,
                      u: np.ndarray, theta: np.ndarray, days: int) -> tuple:
    """Run n scenarios for `days` steps from a shared initial state.

    u[t] (t = 1..days) is the aggregate distancing level for the transition
    into day x0.day + t; theta has shape (n, days) with column t-1 applying
    to that same transition. Returns (states, r_eff) arrays.
    """
    n = theta.shape[0]
    states = np.empty((n, days + 1, len(COMPARTMENTS)))
    r_eff = np.empty((n, days + 1))
    cols = {c: np.full(n, getattr(x0, c), dtype=float) for c in COMPARTMENTS}
    for i, c in enumerate(COMPARTMENTS):
        states[:, 0, i] = cols[c]

    for t in range(1, days + 1):
        date = schedule.date_of(x0.day + t)
        p = schedule.params_at(date)
        theta_C = schedule.theta_C_at(date)
        beta = p.beta0 * (1.0 - theta_C) * _clamped_factor(u[t], theta[:, t - 1])
        r0_factor = (1.0 - p.epsilon) / p.delta_A + p.epsilon / p.h
        r_eff[:, t] = (beta * r0_factor * cols["S"]
                       / (p.N - cols["D"] - cols["Q"] - cols["H"]))
        cols = _step_arrays(cols, p, beta, day=x0.day + t)
        for i, c in enumerate(COMPARTMENTS):
            states[:, t, i] = cols[c]
    # day-0 entry is display-only; no transition uses it
    r_eff[:, 0] = r_eff[:, 1] if days >= 1 else np.nan
    return states, r_eff


def run_ensemble(x0: CompartmentState, schedule: EpiParamSchedule,
                 policy: np.ndarray, weights: np.ndarray, theta,
                 with_uncontrolled: bool = False) -> EnsembleResult:
    """Simulate one ensemble under a six-activity restriction policy.

    policy has shape (days+1, 6) in alpha space; row t is in force for the
    transition into day t (row 0 is display-only). Each scenario applies
    one column of adherence deviations; with_uncontrolled additionally runs
    the zero-restriction companion with the same draws (common random
    numbers), which the ratio statistics require.
    """
    policy = np.atleast_2d(np.asarray(policy, dtype=float))
    days = policy.shape[0] - 1
    n = np.asarray(theta).shape[0]
    theta_m = _theta_matrix(theta, n, days)
    u = policy @ np.asarray(weights)

    states, r_eff = simulate_ensemble(x0, schedule, u, theta_m, days)
    uncontrolled = None
    if with_uncontrolled:
        zero_policy = np.zeros_like(policy)
        u0_states, u0_reff = simulate_ensemble(
            x0, schedule, np.zeros(days + 1), theta_m, days)
        uncontrolled = _assemble(x0, schedule, u0_states, u0_reff, theta_m,
                                 zero_policy, np.zeros(days + 1), None)
    return _assemble(x0, schedule, states, r_eff, theta_m, policy, u, uncontrolled)


def _assemble(x0, schedule, states, r_eff, theta, policy, u, uncontrolled):
    return EnsembleResult(
        start_day=x0.day,
        day_zero=schedule.day_zero,
        states=states,
        theta=theta,
        alpha=policy,
        u_series=np.asarray(u, dtype=float),
        r_eff=r_eff,
        mean=states.mean(axis=0),
        std=states.std(axis=0),
        quantiles=np.quantile(states, QUANTILES, axis=0),
        uncontrolled=uncontrolled,
    )


def empirical_prob(ensemble: EnsembleResult, observable: str,
                   threshold: float, day: int) -> float:
    """Fraction of scenarios whose observable exceeds the threshold at `day`."""
    obs = ensemble.observable(observable)[:, day]
    return float(np.count_nonzero(obs > threshold)) / ensemble.n_scenarios


def trajectory_expectation(ensemble: EnsembleResult, observable: str,
                           day: int) -> float:
    """Scenario mean of an observable at `day`.

    "H_ratio" and "H_ratio_sq" divide each scenario's hospitalization by its
    own zero-restriction companion (0/0 counts as 1: nothing to improve).
    """
    if observable in ("H_ratio", "H_ratio_sq"):
        if ensemble.uncontrolled is None:
            raise UncontrolledRunMissing(
                "ratio statistics need with_uncontrolled=True")
        ratio = h_ratio(ensemble)[:, day]
        if observable == "H_ratio_sq":
            ratio = ratio * ratio
        return float(ratio.mean())
    return float(ensemble.observable(observable)[:, day].mean())


def h_ratio(ensemble: EnsembleResult) -> np.ndarray:
    """Per-scenario per-day H(controlled)/H(uncontrolled) with 0/0 -> 1."""
    if ensemble.uncontrolled is None:
        raise UncontrolledRunMissing("ratio statistics need with_uncontrolled=True")
    hc = ensemble.compartment("H")
    hu = ensemble.uncontrolled.compartment("H")
    out = np.ones_like(hc)
    np.divide(hc, hu, out=out, where=hu > 0)
    return out


def ensemble_rows(ensemble: EnsembleResult):
    """Rows for the scenario,day,date,<compartments>,R_eff,u trajectory dump."""
    for i in range(ensemble.n_scenarios):
        for t in range(ensemble.days + 1):
            yield (i, t, ensemble.date_of(t).isoformat(),
                   *ensemble.states[i, t, :].tolist(),
                   ensemble.r_eff[i, t], ensemble.u_series[t])
