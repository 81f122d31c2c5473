"""Disease-free-equilibrium linearization, Jury stability test, reproduction numbers.

Only the infected compartments E, I_A, I_S govern whether an outbreak can
take off, so the linearization is a 3x3 map and its characteristic
polynomial a monic cubic. The Jury criterion (discrete-time analogue of
Routh-Hurwitz) classifies the cubic from its coefficients; the basic
reproduction number has the closed form

    R0 = beta * ((1 - epsilon)/delta_A + epsilon/h)

which reduces to the plain SIR expression beta/delta_A when epsilon = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DenominatorNonpositive
from .model import CompartmentState, EpiParams

#: Margins closer to zero than this are treated as boundary cases.
BOUNDARY_TOL = 1e-12


def disease_free_jacobian(params: EpiParams, beta: float) -> np.ndarray:
    """3x3 Jacobian of (E, I_A, I_S) at the disease-free state (S ~ N)."""
    sigma, delta_A, h, eps = params.sigma, params.delta_A, params.h, params.epsilon
    return np.array([
        [1.0 - sigma, beta, beta],
        [(1.0 - eps) * sigma, 1.0 - delta_A, 0.0],
        [eps * sigma, 0.0, 1.0 - h],
    ])


@dataclass(frozen=True)
class CharPoly3:
    """Monic cubic F(z) = a3 z^3 + a2 z^2 + a1 z + a0."""

    a3: float
    a2: float
    a1: float
    a0: float

    def __call__(self, z: float) -> float:
        return ((self.a3 * z + self.a2) * z + self.a1) * z + self.a0


def char_poly(params: EpiParams, beta: float) -> CharPoly3:
    """Characteristic polynomial of the disease-free Jacobian, in closed form."""
    s, dA, h, e = params.sigma, params.delta_A, params.h, params.epsilon
    b = beta
    a2 = dA + h + s - 3.0
    a1 = dA * h - 2.0 * h - 2.0 * s - 2.0 * dA - b * s + dA * s + h * s + 3.0
    a0 = (dA + h + s - dA * h + b * s - dA * s - h * s
          - b * h * s + dA * h * s + b * e * h * s - b * dA * e * s - 1.0)
    return CharPoly3(a3=1.0, a2=a2, a1=a1, a0=a0)


@dataclass(frozen=True)
class JuryReport:
    """Outcome of the Jury test on a monic cubic.

    stable is the conjunction of the four conditions; margins within
    BOUNDARY_TOL of zero set the boundary flag and classify as unstable
    (conservative).
    """

    stable: bool
    F_at_1: float
    F_at_minus1_signed: float
    abs_a0_lt_a3: bool
    abs_b0_gt_abs_b2: bool
    b0: float
    b2: float
    boundary: bool


def jury_test(p: CharPoly3) -> JuryReport:
    """Jury stability test: all roots of F inside the unit circle?"""
    if p.a3 != 1.0:
        raise ValueError(f"jury_test expects a monic cubic, got a3 = {p.a3}")
    F1 = p(1.0)
    Fm1_signed = -p(-1.0)  # (-1)^3 F(-1)
    # second-row determinants of the Jury table
    b0 = p.a0 * p.a0 - p.a3 * p.a3
    b2 = p.a0 * p.a2 - p.a1 * p.a3
    margins = (F1, Fm1_signed, p.a3 - abs(p.a0), abs(b0) - abs(b2))
    boundary = any(abs(m) <= BOUNDARY_TOL for m in margins)
    stable = all(m > 0.0 for m in margins) and not boundary
    return JuryReport(
        stable=stable,
        F_at_1=F1,
        F_at_minus1_signed=Fm1_signed,
        abs_a0_lt_a3=abs(p.a0) < p.a3,
        abs_b0_gt_abs_b2=abs(b0) > abs(b2),
        b0=b0,
        b2=b2,
        boundary=boundary,
    )


def r0(params: EpiParams, beta: float) -> float:
    """Basic reproduction number.

    First term: secondary infections through the asymptomatic pathway;
    second term: through the symptomatic pathway (cut short by
    hospitalization/quarantine at rate h).
    """
    if params.delta_A <= 0 or params.h <= 0:
        raise ValueError("r0 requires delta_A > 0 and h > 0")
    return beta * ((1.0 - params.epsilon) / params.delta_A + params.epsilon / params.h)


def r_eff(state: CompartmentState, params: EpiParams, beta: float) -> float:
    """Effective reproduction number: R0 scaled by the susceptible share
    of the active mixing population, evaluated on the previous-day state
    (same convention as the dynamics)."""
    denom = params.N - state.D - state.Q - state.H
    if denom <= 0.0:
        raise DenominatorNonpositive(
            f"active population N - D - Q - H = {denom}", day=state.day)
    return r0(params, beta) * state.S / denom
