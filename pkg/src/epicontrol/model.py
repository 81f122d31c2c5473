"""Discrete-time ten-compartment epidemic dynamics with scheduled parameters.

The population is split into susceptible (S), exposed (E), asymptomatic
infected (I_A), symptomatic infected (I_S), hospitalized (H), home-quarantined
(Q), three recovered pools (R_A from I_A, R_H from H, R_Q from Q) and dead (D).
One step advances the state by one day.  Epidemiological parameters are
piecewise constant in calendar time and resolved through an
:class:`EpiParamSchedule`; the transmission rate is modulated day by day by an
aggregate social-distancing level, a population-caution factor and an
adherence deviation (see :func:`effective_beta`).

All operations are pure functions over immutable inputs.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, replace

from .errors import DateOutOfSchedule, DenominatorNonpositive, InvalidPopulation

COMPARTMENTS = ("S", "E", "I_A", "I_S", "H", "Q", "R_A", "R_H", "R_Q", "D")

#: Cumulative compartments: non-decreasing along any trajectory.
CUMULATIVE = ("R_A", "R_H", "R_Q", "D")


@dataclass(frozen=True)
class CompartmentState:
    """Compartment populations at one day.

    Populations are real-valued (mean-field counts), day is the integer
    offset from the epidemic's day zero.
    """

    S: float
    E: float
    I_A: float
    I_S: float
    H: float
    Q: float
    R_A: float
    R_H: float
    R_Q: float
    D: float
    day: int = 0

    def total(self) -> float:
        return (self.S + self.E + self.I_A + self.I_S + self.H
                + self.Q + self.R_A + self.R_H + self.R_Q + self.D)

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in COMPARTMENTS)

    @classmethod
    def from_values(cls, values, day: int) -> "CompartmentState":
        return cls(*(float(v) for v in values), day=day)

    def active_population(self) -> float:
        """N - D - Q - H, the pool that mixes and can transmit."""
        return self.total() - self.D - self.Q - self.H


@dataclass(frozen=True)
class EpiParams:
    """Daily rates and branching fractions of the compartment model.

    Rates are 1/day; f1 is the hospitalized fraction of symptomatic cases,
    f2 the case-fatality ratio of the hospitalized, epsilon the symptomatic
    fraction of the exposed. N is the (constant) total population.
    """

    beta0: float
    sigma: float
    h: float
    delta_A: float
    delta_H: float
    delta_Q: float
    gamma: float
    f1: float
    f2: float
    epsilon: float
    N: float

    def validate(self) -> list[str]:
        problems = []
        for name in ("beta0",):
            v = getattr(self, name)
            if not v > 0:
                problems.append(f"{name} must be > 0, got {v}")
        for name in ("sigma", "h", "delta_A", "delta_H", "delta_Q", "gamma"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                problems.append(f"rate {name} must be in (0, 1], got {v}")
        for name in ("f1", "f2", "epsilon"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                problems.append(f"fraction {name} must be in [0, 1], got {v}")
        if not self.N > 0:
            problems.append(f"N must be > 0, got {self.N}")
        return problems


@dataclass(frozen=True)
class ControlInput:
    """Transmission modifiers in force for one day.

    u is the aggregate social-distancing level in [0, 1]; theta_A a signed
    adherence deviation of the population from the announced level; theta_C
    the caution factor in [0, 1).
    """

    u: float = 0.0
    theta_A: float = 0.0
    theta_C: float = 0.0


def effective_beta(params: EpiParams, ctl: ControlInput) -> float:
    """Transmission rate under distancing u, adherence deviation and caution.

    The mobility factor (1 - u + theta_A) is clamped to [0, 1]: sampled
    adherence noise can neither produce negative transmission nor push
    mobility above the unrestricted level.
    """
    factor = 1.0 - ctl.u + ctl.theta_A
    if factor < 0.0:
        factor = 0.0
    elif factor > 1.0:
        factor = 1.0
    return params.beta0 * (1.0 - ctl.theta_C) * factor


def initial_state(N: float) -> CompartmentState:
    """Day-zero state: one asymptomatic case in an otherwise susceptible population."""
    if N < 2:
        raise InvalidPopulation(f"need N >= 2 to seed one case, got {N}")
    return CompartmentState(S=float(N) - 1.0, E=0.0, I_A=1.0, I_S=0.0, H=0.0,
                            Q=0.0, R_A=0.0, R_H=0.0, R_Q=0.0, D=0.0, day=0)


def step(state: CompartmentState, params: EpiParams, beta: float) -> CompartmentState:
    """Advance the state by one day.

    The new-infection flux divides by the active mixing population
    N - D - Q - H evaluated at the previous day, which makes the update an
    explicit map. Population is conserved exactly by construction.
    """
    S, E, I_A, I_S, H, Q, R_A, R_H, R_Q, D = state.as_tuple()
    N = params.N
    denom = N - D - Q - H
    if denom <= 0.0:
        raise DenominatorNonpositive(
            f"active population N - D - Q - H = {denom} at day {state.day}",
            day=state.day)

    inflow = beta * (I_A + I_S) * S / denom
    S_n = S - inflow
    E_n = E + inflow - params.sigma * E
    I_A_n = I_A + (1.0 - params.epsilon) * params.sigma * E - params.delta_A * I_A
    I_S_n = I_S + params.epsilon * params.sigma * E - params.h * I_S
    H_n = (H + params.f1 * params.h * I_S - params.f2 * params.gamma * H
           - (1.0 - params.f2) * params.delta_H * H)
    Q_n = Q + (1.0 - params.f1) * params.h * I_S - params.delta_Q * Q
    R_A_n = R_A + params.delta_A * I_A
    R_H_n = R_H + (1.0 - params.f2) * params.delta_H * H
    R_Q_n = R_Q + params.delta_Q * Q
    D_n = D + params.f2 * params.gamma * H

    return CompartmentState(S_n, E_n, I_A_n, I_S_n, H_n, Q_n,
                            R_A_n, R_H_n, R_Q_n, D_n, day=state.day + 1)


@dataclass(frozen=True)
class EpiParamSchedule:
    """Piecewise-constant parameters and caution values over calendar time.

    entries are (start, end, EpiParams) with inclusive date ranges;
    theta_C_entries are (start, end, value). Ranges must be contiguous,
    non-overlapping and jointly cover the schedule span.
    """

    day_zero: dt.date
    entries: tuple[tuple[dt.date, dt.date, EpiParams], ...]
    theta_C_entries: tuple[tuple[dt.date, dt.date, float], ...]

    def validate(self) -> list[str]:
        problems = []
        for label, ranges in (("params", self.entries), ("theta_C", self.theta_C_entries)):
            if not ranges:
                problems.append(f"{label} schedule is empty")
                continue
            prev_end = None
            for start, end, _ in ranges:
                if end < start:
                    problems.append(f"{label} range {start}..{end} is inverted")
                if prev_end is not None and start != prev_end + dt.timedelta(days=1):
                    problems.append(
                        f"{label} ranges not contiguous at {prev_end} -> {start}")
                prev_end = end
        for start, end, p in self.entries:
            for msg in p.validate():
                problems.append(f"params for {start}..{end}: {msg}")
        for start, end, v in self.theta_C_entries:
            if not 0.0 <= v < 1.0:
                problems.append(f"theta_C for {start}..{end} must be in [0, 1), got {v}")
        return problems

    def span(self) -> tuple[dt.date, dt.date]:
        return self.entries[0][0], self.entries[-1][1]

    def date_of(self, day: int) -> dt.date:
        return self.day_zero + dt.timedelta(days=day)

    def day_of(self, date: dt.date) -> int:
        return (date - self.day_zero).days

    def params_at(self, date: dt.date) -> EpiParams:
        for start, end, p in self.entries:
            if start <= date <= end:
                return p
        raise DateOutOfSchedule(f"{date} outside schedule span {self.span()}")

    def theta_C_at(self, date: dt.date) -> float:
        for start, end, v in self.theta_C_entries:
            if start <= date <= end:
                return v
        raise DateOutOfSchedule(f"{date} outside theta_C schedule")

    def with_theta_C(self, ranges) -> "EpiParamSchedule":
        return replace(self, theta_C_entries=tuple(ranges))


def params_at(schedule: EpiParamSchedule, date: dt.date) -> EpiParams:
    return schedule.params_at(date)


def simulate(init: CompartmentState, schedule: EpiParamSchedule,
             control, days: int) -> list[CompartmentState]:
    """Run the model for `days` steps; returns the trajectory including init.

    control[k] is the ControlInput in force during the transition into day
    init.day + k + 1; parameters are resolved at that arrival date.
    Deterministic: identical inputs give bit-identical trajectories.
    """
    if len(control) < days:
        raise ValueError(f"control sequence has {len(control)} entries, need {days}")
    traj = [init]
    state = init
    for k in range(days):
        date = schedule.date_of(state.day + 1)
        p = schedule.params_at(date)
        beta = effective_beta(p, control[k])
        try:
            state = step(state, p, beta)
        except DenominatorNonpositive as e:
            raise DenominatorNonpositive(
                f"simulation aborted entering day {state.day + 1}: {e}",
                day=state.day + 1) from e
        traj.append(state)
    return traj
