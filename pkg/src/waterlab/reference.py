"""Daily demand reference signal.

R(t) is a strictly positive periodic flow target represented by a mean
level plus three harmonic pairs:

    R(t) = b0 + sum_{i=1..3} b_i*cos(i*w*t) + a_i*sin(i*w*t)

The mean term is required: without it the trig polynomial averages to
zero over one period and cannot stay positive.  Positivity is enforced
numerically on a dense grid at construction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FitError, PositivityError, ValidationError

HARMONICS = 3
POSITIVITY_GRID_POINTS = 10_000
POSITIVITY_WARN_LEVEL = 1e-9

# Minimum sample count for fitting: one more than the 7 unknowns.
MIN_FIT_SAMPLES = HARMONICS * 2 + 2

# Daily-pattern peak locations, as fractions of the period (7.5 h and 19 h of a day).
MORNING_PEAK_FRACTION = 7.5 / 24.0
EVENING_PEAK_FRACTION = 19.0 / 24.0
PEAK_WIDTH_FRACTION = 1.5 / 24.0


@dataclass(frozen=True)
class FourierReference:
    """Positive periodic demand target; immutable once constructed."""

    omega: float
    mean_level: float
    cos_coeffs: tuple[float, float, float]
    sin_coeffs: tuple[float, float, float]

    def __post_init__(self):
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise ValidationError(f"omega must be > 0, got {self.omega!r}")
        if len(self.cos_coeffs) != HARMONICS or len(self.sin_coeffs) != HARMONICS:
            raise ValidationError("exactly three harmonic coefficient pairs are required")
        object.__setattr__(self, "cos_coeffs", tuple(float(c) for c in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(c) for c in self.sin_coeffs))
        object.__setattr__(self, "mean_level", float(self.mean_level))
        grid = np.linspace(0.0, self.period, POSITIVITY_GRID_POINTS)
        values = eval_reference(self, grid)
        min_value = float(values.min())
        if min_value <= 0.0:
            raise PositivityError(
                f"reference dips to {min_value!r} over one period; it must stay positive"
            )
        if min_value < POSITIVITY_WARN_LEVEL:
            warnings.warn(
                f"reference minimum {min_value!r} is barely positive", stacklevel=3
            )

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega


def eval_reference(ref: FourierReference, t):
    """R(t); accepts a scalar or an ndarray of times."""
    if isinstance(t, (int, float)):
        w = ref.omega * t
        b1, b2, b3 = ref.cos_coeffs
        a1, a2, a3 = ref.sin_coeffs
        cos, sin = math.cos, math.sin
        return (ref.mean_level
                + b1 * cos(w) + a1 * sin(w)
                + b2 * cos(2.0 * w) + a2 * sin(2.0 * w)
                + b3 * cos(3.0 * w) + a3 * sin(3.0 * w))
    t = np.asarray(t, dtype=float)
    angles = np.outer(t, ref.omega * np.arange(1, HARMONICS + 1))
    return (
        ref.mean_level
        + np.cos(angles) @ np.asarray(ref.cos_coeffs)
        + np.sin(angles) @ np.asarray(ref.sin_coeffs)
    )


def eval_reference_derivative(ref: FourierReference, t):
    """dR/dt; accepts a scalar or an ndarray of times."""
    if isinstance(t, (int, float)):
        w = ref.omega * t
        b1, b2, b3 = ref.cos_coeffs
        a1, a2, a3 = ref.sin_coeffs
        cos, sin = math.cos, math.sin
        omega = ref.omega
        return omega * (
            -b1 * sin(w) + a1 * cos(w)
            + 2.0 * (-b2 * sin(2.0 * w) + a2 * cos(2.0 * w))
            + 3.0 * (-b3 * sin(3.0 * w) + a3 * cos(3.0 * w))
        )
    t = np.asarray(t, dtype=float)
    i_omega = ref.omega * np.arange(1, HARMONICS + 1)
    angles = np.outer(t, i_omega)
    return (
        -np.sin(angles) @ (i_omega * np.asarray(ref.cos_coeffs))
        + np.cos(angles) @ (i_omega * np.asarray(ref.sin_coeffs))
    )


def _design_matrix(t: np.ndarray, omega: float) -> np.ndarray:
    angles = np.outer(t, omega * np.arange(1, HARMONICS + 1))
    return np.hstack([np.ones((len(t), 1)), np.cos(angles), np.sin(angles)])


def fit_reference(samples, omega: float) -> FourierReference:
    """Least-squares fit of the 7 coefficients at fixed omega.

    samples is a sequence of (t_seconds, demand_m3s) pairs covering at
    least one period.  Raises FitError when underdetermined or rank
    deficient, PositivityError when the fitted signal dips to zero.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise FitError(f"samples must be (t, demand) pairs, got shape {data.shape}")
    if len(data) < MIN_FIT_SAMPLES:
        raise FitError(
            f"need at least {MIN_FIT_SAMPLES} samples to fit 7 coefficients, got {len(data)}"
        )
    if not omega > 0:
        raise ValidationError(f"omega must be > 0, got {omega!r}")
    design = _design_matrix(data[:, 0], omega)
    coeffs, _, rank, _ = np.linalg.lstsq(design, data[:, 1], rcond=None)
    if rank < design.shape[1]:
        raise FitError(
            f"design matrix rank {rank} < {design.shape[1]}; samples do not span the basis"
        )
    return FourierReference(
        omega=omega,
        mean_level=float(coeffs[0]),
        cos_coeffs=tuple(float(c) for c in coeffs[1 : HARMONICS + 1]),
        sin_coeffs=tuple(float(c) for c in coeffs[HARMONICS + 1 :]),
    )


def generate_demand_pattern(
    period: float,
    base: float,
    morning_peak: float,
    evening_peak: float,
    noise_rms: float,
    seed: int,
    n_samples: int = 288,
) -> np.ndarray:
    """Synthetic daily demand: base level plus two Gaussian bumps and noise.

    Bumps are centered at 7.5 h and 19 h of the period.  Samples are
    clamped below at base/10, so the output is strictly positive.
    Returns an (n_samples, 2) array of (t, demand) rows.
    """
    if not base > 0:
        raise ValidationError(f"base must be > 0, got {base!r}")
    if morning_peak < 0 or evening_peak < 0:
        raise ValidationError("peak amplitudes must be >= 0")
    if noise_rms < 0:
        raise ValidationError(f"noise_rms must be >= 0, got {noise_rms!r}")
    t = np.arange(n_samples) * (period / n_samples)
    sigma = PEAK_WIDTH_FRACTION * period
    demand = base + morning_peak * np.exp(
        -0.5 * ((t - MORNING_PEAK_FRACTION * period) / sigma) ** 2
    ) + evening_peak * np.exp(-0.5 * ((t - EVENING_PEAK_FRACTION * period) / sigma) ** 2)
    if noise_rms > 0:
        rng = np.random.default_rng(seed)
        demand = demand + rng.normal(0.0, noise_rms, n_samples)
    demand = np.maximum(demand, base / 10.0)
    return np.column_stack([t, demand])


def load_demand_csv(path) -> np.ndarray:
    """Read (t_seconds, demand_m3s) rows from a two-column CSV with one header line."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2:
        raise ValidationError(f"demand CSV must have two columns, got {data.shape[1]}")
    return data


def save_demand_csv(path, samples) -> None:
    data = np.asarray(samples, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write("t_seconds,demand_m3s\n")
        for t, d in data:
            fh.write(f"{t!r},{d!r}\n")


def format_coefficients(ref: FourierReference) -> str:
    """key=value block; floats are repr'd so parsing recovers them bit-exactly."""
    lines = [f"omega = {ref.omega!r}", f"b0 = {ref.mean_level!r}"]
    for i, c in enumerate(ref.cos_coeffs, start=1):
        lines.append(f"b{i} = {c!r}")
    for i, c in enumerate(ref.sin_coeffs, start=1):
        lines.append(f"a{i} = {c!r}")
    return "\n".join(lines) + "\n"


def parse_coefficients(text: str) -> FourierReference:
    values: dict[str, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, raw = line.partition("=")
        values[key.strip()] = float(raw.strip())
    expected = {"omega", "b0", "b1", "b2", "b3", "a1", "a2", "a3"}
    missing = expected - values.keys()
    if missing:
        raise ValidationError(f"coefficient block is missing keys: {sorted(missing)}")
    return FourierReference(
        omega=values["omega"],
        mean_level=values["b0"],
        cos_coeffs=(values["b1"], values["b2"], values["b3"]),
        sin_coeffs=(values["a1"], values["a2"], values["a3"]),
    )
