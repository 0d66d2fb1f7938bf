"""Flow-tracking control for one valved pipe.

With tracking error e = q - R the reduced pipe model gives the error
dynamics

    de/dt = f(t,e) + g(t,e)*v,
    f = K - L*(e+R) - dR/dt - (e+R)**2*u_bar,    g = -(e+R)**2,

where v = u - u_bar is the correction around an average valve opening
u_bar.  The universal damping feedback built from the quadratic storage
function V = e**2/2 (Lie derivatives LfV = e*f, LgV = e*g) is

    v = -(LfV + sqrt(LfV**2 + LgV**4))/LgV   when LgV != 0, else 0,

which enforces dV/dt = -sqrt(LfV**2 + LgV**4) pointwise.  A polynomial
surrogate (polynomial in e, trigonometric in t) can be fitted to that
law for node deployment; its grid fit error is always reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError, ValidationError
from .hydro import PipeCoefficients
from .reference import FourierReference, eval_reference, eval_reference_derivative

MODE_EXACT = "exact_sontag"
MODE_POLYNOMIAL = "polynomial"

# Fixed fitting grid: odd e-count keeps e = 0 on the grid.
FIT_E_POINTS = 41
FIT_T_POINTS = 128


@dataclass(frozen=True)
class ControllerConfig:
    """Valve-controller settings; mode selects the exact law or its surrogate."""

    u_bar: float
    u_min: float = 0.0
    u_max: float = math.inf
    sample_period_Ts: float = 1.0
    mode: str = MODE_EXACT
    poly_degree: int = 8
    epsilon_band: float = 1e-4
    delta_bound: float = 1e-2

    def __post_init__(self):
        if not (0.0 <= self.u_min <= self.u_bar <= self.u_max):
            raise ValidationError(
                f"need 0 <= u_min <= u_bar <= u_max, got "
                f"u_min={self.u_min!r}, u_bar={self.u_bar!r}, u_max={self.u_max!r}"
            )
        if not self.sample_period_Ts > 0:
            raise ValidationError(f"sample_period_Ts must be > 0, got {self.sample_period_Ts!r}")
        if self.mode not in (MODE_EXACT, MODE_POLYNOMIAL):
            raise ValidationError(f"mode must be {MODE_EXACT!r} or {MODE_POLYNOMIAL!r}, got {self.mode!r}")
        if self.poly_degree < 1:
            raise ValidationError(f"poly_degree must be >= 1, got {self.poly_degree!r}")
        if not self.epsilon_band > 0:
            raise ValidationError(f"epsilon_band must be > 0, got {self.epsilon_band!r}")
        if not self.delta_bound > self.epsilon_band:
            raise ValidationError(
                f"delta_bound must exceed epsilon_band, got "
                f"delta_bound={self.delta_bound!r}, epsilon_band={self.epsilon_band!r}"
            )


@dataclass(frozen=True)
class ErrorFrame:
    """One controller evaluation point: time, error, and reference values."""

    t: float
    e: float
    R: float
    R_dot: float

    def __post_init__(self):
        if not self.R > 0:
            raise ValidationError(f"R must be > 0, got {self.R!r}")


def frame_at(ref: FourierReference, t: float, q_measured: float) -> ErrorFrame:
    r = eval_reference(ref, t)
    return ErrorFrame(t=t, e=q_measured - r, R=r, R_dot=eval_reference_derivative(ref, t))


def error_drift_f(frame: ErrorFrame, coeffs: PipeCoefficients, u_bar: float) -> float:
    """Drift of the error dynamics at v = 0."""
    q = frame.e + frame.R
    return coeffs.K_drive - coeffs.L_damp * q - frame.R_dot - q * q * u_bar


def error_gain_g(frame: ErrorFrame) -> float:
    """Control-channel gain -(e+R)**2; zero flow kills control authority."""
    q = frame.e + frame.R
    return -(q * q)


def sontag_feedback(frame: ErrorFrame, coeffs: PipeCoefficients, cfg: ControllerConfig) -> float:
    """Universal damping feedback; returns the valve correction v.

    Evaluated as LgV**4/(s - LfV) when LfV < 0 (s = sqrt(LfV**2 + LgV**4))
    to avoid the cancellation in LfV + s.
    """
    lf = frame.e * error_drift_f(frame, coeffs, cfg.u_bar)
    lg = frame.e * error_gain_g(frame)
    if lg == 0.0:
        return 0.0
    s = math.hypot(lf, lg * lg)
    if lf >= 0.0:
        numerator = lf + s
    else:
        numerator = (lg * lg) ** 2 / (s - lf)
    return -numerator / lg


def apply_valve_command(v: float, cfg: ControllerConfig) -> tuple[float, bool]:
    """Clamp u_bar + v to the valve range; the flag reports saturation."""
    u = cfg.u_bar + v
    if u < cfg.u_min:
        return cfg.u_min, True
    if u > cfg.u_max:
        return cfg.u_max, True
    return u, False


def default_u_bar(coeffs: PipeCoefficients, ref: FourierReference) -> float:
    """Constant opening whose equilibrium flow equals the reference mean.

    Solves K - L*Rbar - Rbar**2*u = 0 for u, clamped at zero.
    """
    r_mean = ref.mean_level
    u = (coeffs.K_drive - coeffs.L_damp * r_mean) / (r_mean * r_mean)
    return max(u, 0.0)


class PolynomialLaw:
    """Fitted valve-correction surrogate.

    v_hat(e, t) = sum_{i,k} C[i, k] * (e/e_scale)**i * trig_k(omega*t)
    with trig_0 = 1, trig_{2j-1} = cos(j*omega*t), trig_{2j} = sin(j*omega*t).
    The scaled error keeps the monomial columns well conditioned.
    """

    def __init__(self, omega, degree, e_scale, coeffs, max_abs_error, rms_error):
        self.omega = float(omega)
        self.degree = int(degree)
        self.e_scale = float(e_scale)
        self.coeffs = np.array(coeffs, dtype=float)
        self.coeffs.flags.writeable = False
        expected = (self.degree + 1, 2 * self.degree + 1)
        if self.coeffs.shape != expected:
            raise ValidationError(f"coefficient table must have shape {expected}, got {self.coeffs.shape}")
        self.max_abs_error = float(max_abs_error)
        self.rms_error = float(rms_error)

    def __call__(self, e: float, t: float) -> float:
        trig = np.empty(2 * self.degree + 1)
        trig[0] = 1.0
        w = self.omega * t
        for j in range(1, self.degree + 1):
            trig[2 * j - 1] = math.cos(j * w)
            trig[2 * j] = math.sin(j * w)
        per_power = self.coeffs @ trig
        x = e / self.e_scale
        total = 0.0
        for c in per_power[::-1]:
            total = total * x + c
        return float(total)

    def __eq__(self, other):
        if not isinstance(other, PolynomialLaw):
            return NotImplemented
        return (
            self.omega == other.omega
            and self.degree == other.degree
            and self.e_scale == other.e_scale
            and self.max_abs_error == other.max_abs_error
            and self.rms_error == other.rms_error
            and np.array_equal(self.coeffs, other.coeffs)
        )

    def __repr__(self):
        return (
            f"PolynomialLaw(degree={self.degree}, max_abs_error={self.max_abs_error:.6e}, "
            f"rms_error={self.rms_error:.6e})"
        )

    def to_text(self) -> str:
        """key=value table; repr floats reload bit-exactly."""
        lines = [
            f"degree = {self.degree}",
            f"omega = {self.omega!r}",
            f"e_scale = {self.e_scale!r}",
            f"max_abs_error = {self.max_abs_error!r}",
            f"rms_error = {self.rms_error!r}",
        ]
        for i in range(self.degree + 1):
            for k in range(2 * self.degree + 1):
                lines.append(f"c_{i}_{k} = {self.coeffs[i, k]!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PolynomialLaw":
        values: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
        try:
            degree = int(values["degree"])
            table = np.empty((degree + 1, 2 * degree + 1))
            for i in range(degree + 1):
                for k in range(2 * degree + 1):
                    table[i, k] = float(values[f"c_{i}_{k}"])
            return cls(
                omega=float(values["omega"]),
                degree=degree,
                e_scale=float(values["e_scale"]),
                coeffs=table,
                max_abs_error=float(values["max_abs_error"]),
                rms_error=float(values["rms_error"]),
            )
        except KeyError as exc:
            raise ValidationError(f"coefficient table is missing key {exc}") from exc


def _trig_block(t_grid: np.ndarray, omega: float, degree: int) -> np.ndarray:
    block = np.empty((len(t_grid), 2 * degree + 1))
    block[:, 0] = 1.0
    for j in range(1, degree + 1):
        block[:, 2 * j - 1] = np.cos(j * omega * t_grid)
        block[:, 2 * j] = np.sin(j * omega * t_grid)
    return block


def fit_polynomial_controller(
    coeffs: PipeCoefficients, ref: FourierReference, cfg: ControllerConfig
) -> PolynomialLaw:
    """Least-squares surrogate of the exact law on a fixed tensor grid.

    Grid: FIT_E_POINTS errors over [-delta_bound, delta_bound] crossed
    with FIT_T_POINTS times over one period.  The grid is independent of
    the degree, so bases of increasing degree are nested and the
    least-squares grid residual never grows with degree.
    """
    degree = cfg.poly_degree
    delta = cfg.delta_bound
    e_grid = np.linspace(-delta, delta, FIT_E_POINTS)
    t_grid = np.arange(FIT_T_POINTS) * (ref.period / FIT_T_POINTS)

    r_vals = eval_reference(ref, t_grid)
    rdot_vals = eval_reference_derivative(ref, t_grid)
    target = np.empty((FIT_E_POINTS, FIT_T_POINTS))
    for it in range(FIT_T_POINTS):
        frame_r = float(r_vals[it])
        frame_rdot = float(rdot_vals[it])
        t = float(t_grid[it])
        for ie, e in enumerate(e_grid):
            frame = ErrorFrame(t=t, e=float(e), R=frame_r, R_dot=frame_rdot)
            target[ie, it] = sontag_feedback(frame, coeffs, cfg)

    powers = np.vander(e_grid / delta, degree + 1, increasing=True)  # (E, degree+1)
    trig = _trig_block(t_grid, ref.omega, degree)  # (T, 2*degree+1)
    design = np.einsum("ep,tk->etpk", powers, trig).reshape(
        FIT_E_POINTS * FIT_T_POINTS, (degree + 1) * (2 * degree + 1)
    )
    flat_target = target.reshape(-1)
    solution, _, rank, _ = np.linalg.lstsq(design, flat_target, rcond=None)
    if rank < design.shape[1]:
        raise FitError(f"surrogate fit rank {rank} < {design.shape[1]}")
    residual = design @ solution - flat_target
    return PolynomialLaw(
        omega=ref.omega,
        degree=degree,
        e_scale=delta,
        coeffs=solution.reshape(degree + 1, 2 * degree + 1),
        max_abs_error=float(np.abs(residual).max()),
        rms_error=float(np.sqrt(np.mean(residual**2))),
    )
