"""Rigid water-column dynamics of one valved pipe.

Under a fixed head differential and laminar friction, the volumetric
flow q (m3/s) of a valved pipe obeys the scalar momentum balance

    dq/dt = K - L*q - u*q**2

where K = g*A*(Hu - Hd)/Lp is the pressure drive (A = pi*D**2/4),
L = 64*nu/(2*D**2) the laminar damping rate, and u = k_v/(2*A*Lp) >= 0
the valve variable (k_v is the dimensionless valve head-loss
coefficient).  The general momentum balance with an explicit friction
factor is kept alongside so the laminar reduction can be cross-checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import IntegrationDivergenceError, ValidationError

GRAVITY_DEFAULT = 9.81


@dataclass(frozen=True)
class PipeSpec:
    """Geometry, fluid, and boundary heads of one valved pipe (SI units).

    Flow is assumed unidirectional, which requires upstream_head_Hu >=
    downstream_head_Hd.  friction_factor_f is only consulted by
    rhs_general when the laminar friction substitution is disabled.
    """

    length_L: float
    diameter_D: float
    upstream_head_Hu: float
    downstream_head_Hd: float
    kinematic_viscosity_nu: float = 1e-6
    gravity_g: float = GRAVITY_DEFAULT
    friction_factor_f: float | None = None

    def __post_init__(self):
        for name in ("length_L", "diameter_D", "kinematic_viscosity_nu", "gravity_g"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be a positive finite number, got {value!r}")
        if self.upstream_head_Hu < self.downstream_head_Hd:
            raise ValidationError(
                "upstream_head_Hu must be >= downstream_head_Hd for unidirectional flow, "
                f"got Hu={self.upstream_head_Hu!r} < Hd={self.downstream_head_Hd!r}"
            )
        if self.friction_factor_f is not None and not self.friction_factor_f > 0:
            raise ValidationError(
                f"friction_factor_f must be positive when given, got {self.friction_factor_f!r}"
            )

    @property
    def area(self) -> float:
        """Cross section A = pi*D**2/4."""
        return math.pi * self.diameter_D**2 / 4.0

    @property
    def head_differential(self) -> float:
        return self.upstream_head_Hu - self.downstream_head_Hd


@dataclass(frozen=True)
class PipeCoefficients:
    """Reduced model coefficients: drive K (m3/s2) and damping L (1/s)."""

    K_drive: float
    L_damp: float

    def __post_init__(self):
        if not (math.isfinite(self.K_drive) and self.K_drive >= 0):
            raise ValidationError(f"K_drive must be >= 0, got {self.K_drive!r}")
        if not (math.isfinite(self.L_damp) and self.L_damp > 0):
            raise ValidationError(f"L_damp must be > 0, got {self.L_damp!r}")


@dataclass(frozen=True)
class PipeState:
    """Instantaneous flow and valve variable of one pipe."""

    flow_q: float
    valve_u: float

    def __post_init__(self):
        if not math.isfinite(self.flow_q):
            raise ValidationError(f"flow_q must be finite, got {self.flow_q!r}")
        if not self.valve_u >= 0:
            raise ValidationError(f"valve_u must be >= 0, got {self.valve_u!r}")


def derive_coefficients(spec: PipeSpec) -> PipeCoefficients:
    """Reduce a pipe description to (K, L): K = g*A*(Hu-Hd)/Lp, L = 64*nu/(2*D**2)."""
    area = spec.area
    k_drive = spec.gravity_g * area * spec.head_differential / spec.length_L
    l_damp = 64.0 * spec.kinematic_viscosity_nu / (2.0 * spec.diameter_D**2)
    return PipeCoefficients(K_drive=k_drive, L_damp=l_damp)


def valve_u_from_kv(k_v: float, spec: PipeSpec) -> float:
    """Convert a dimensionless valve coefficient k_v to the valve variable u."""
    return k_v / (2.0 * spec.area * spec.length_L)


def rhs_general(q: float, spec: PipeSpec, k_v: float, laminar_substitution: bool = True) -> float:
    """General momentum balance dq/dt with explicit friction and valve loss.

    Friction uses f = 64/Re (Re = |q|*D/(nu*A)) when laminar_substitution
    is on; the q -> 0 limit of that term is 64*nu/(2*D**2)*q, so q = 0 is
    well defined.  With the substitution off, spec.friction_factor_f is
    used as a constant.
    """
    if k_v < 0:
        raise ValidationError(f"k_v must be >= 0, got {k_v!r}")
    area = spec.area
    drive = spec.gravity_g * area * spec.head_differential / spec.length_L
    if laminar_substitution:
        # f/(2*D*A) * q*|q| with f = 64*nu*A/(|q|*D) collapses to a term linear in q.
        friction = 64.0 * spec.kinematic_viscosity_nu / (2.0 * spec.diameter_D**2) * q
    else:
        if spec.friction_factor_f is None:
            raise ValidationError("friction_factor_f is required when laminar_substitution is off")
        friction = spec.friction_factor_f / (2.0 * spec.diameter_D * area) * q * abs(q)
    valve = k_v * q * abs(q) / (2.0 * area * spec.length_L)
    return drive - friction - valve


def rhs_laminar(q: float, coeffs: PipeCoefficients, u: float) -> float:
    """Reduced laminar momentum balance: K - L*q - u*q**2."""
    return coeffs.K_drive - coeffs.L_damp * q - u * q * q


def steady_state_flow(coeffs: PipeCoefficients, u: float) -> float:
    """Nonnegative equilibrium of the reduced model.

    Equal to (-L + sqrt(L**2 + 4*u*K))/(2*u) for u > 0 and K/L for u = 0;
    evaluated as 2*K/(L + sqrt(L**2 + 4*u*K)), which covers both cases
    without cancellation.
    """
    if u < 0:
        raise ValidationError(f"u must be >= 0, got {u!r}")
    k, l = coeffs.K_drive, coeffs.L_damp
    return 2.0 * k / (l + math.sqrt(l * l + 4.0 * u * k))


class StepResult(NamedTuple):
    flow: float
    clamped: bool


def rk4_flow_step(q: float, u: float, coeffs: PipeCoefficients, dt: float, t: float = 0.0) -> StepResult:
    """One classical RK4 step of rhs_laminar with u held constant.

    Negative results are clamped to zero (backflow contradicts the
    unidirectional-flow assumption) and reported via the clamped flag.
    """
    if not dt > 0:
        raise ValidationError(f"dt must be > 0, got {dt!r}")
    if dt * coeffs.L_damp >= 1.0:
        raise ValidationError(
            f"dt*L_damp must stay below 1 for a stable step, got {dt * coeffs.L_damp!r}"
        )
    k1 = rhs_laminar(q, coeffs, u)
    k2 = rhs_laminar(q + 0.5 * dt * k1, coeffs, u)
    k3 = rhs_laminar(q + 0.5 * dt * k2, coeffs, u)
    k4 = rhs_laminar(q + dt * k3, coeffs, u)
    q_new = q + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    if not math.isfinite(q_new):
        raise IntegrationDivergenceError(t=t, q=q_new)
    if q_new < 0.0:
        return StepResult(0.0, True)
    return StepResult(q_new, False)


def integrate_step(q: float, u: float, coeffs: PipeCoefficients, dt: float, t: float = 0.0) -> float:
    """Advance the flow by one RK4 step; see rk4_flow_step for clamping."""
    return rk4_flow_step(q, u, coeffs, dt, t).flow
