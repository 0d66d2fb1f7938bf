"""Streaming anomaly detection by online recursive regression.

Each sensor stream gets a linear autoregressive forecaster of order w
(plus a bias term) kept up to date with exponentially weighted recursive
least squares.  The one-step forecast residual, standardized by running
residual moments, is the detection statistic: a sample is flagged when
it sits more than threshold_k standard deviations from the residual
mean.

Contamination policy (relied on by tests): flagged samples never update
the residual moments, and update the regression weights only while
score < 2*threshold_k; the detector is silent during warmup.
"""

from __future__ import annotations

import math
from collections import deque
from typing import NamedTuple

import numpy as np

from .errors import ValidationError

DEFAULT_WINDOW = 5
DEFAULT_FORGETTING = 0.995
DEFAULT_THRESHOLD_K = 4.0
# Initial covariance trades ridge bias (~1/delta) against the rounding
# injected when the first updates collapse the huge prior; 1e7 sits at
# the error valley for unit-scale streams.
DEFAULT_INIT_COVARIANCE = 1e7
WARMUP_FACTOR = 10


class Detection(NamedTuple):
    anomalous: bool
    score: float


class RlsEstimator:
    """Exponentially weighted RLS for y = w.phi with rank-one updates.

    With forgetting_factor = 1 and a large initial covariance this
    reproduces batch least squares on the samples seen so far.
    """

    def __init__(self, n_params: int, forgetting_factor: float = 1.0,
                 init_covariance: float = DEFAULT_INIT_COVARIANCE):
        if not 0.0 < forgetting_factor <= 1.0:
            raise ValidationError(
                f"forgetting_factor must be in (0, 1], got {forgetting_factor!r}"
            )
        if not init_covariance > 0:
            raise ValidationError(f"init_covariance must be > 0, got {init_covariance!r}")
        self.n_params = int(n_params)
        self.forgetting_factor = float(forgetting_factor)
        self.weights = np.zeros(self.n_params)
        self.inverse_covariance = init_covariance * np.eye(self.n_params)

    def update(self, phi: np.ndarray, actual: float) -> float:
        """One recursion step; returns the pre-update forecast residual."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.n_params,):
            raise ValidationError(f"regressor must have shape ({self.n_params},), got {phi.shape}")
        if not (np.all(np.isfinite(phi)) and math.isfinite(actual)):
            raise ValidationError("non-finite input sample rejected; state unchanged")
        lam = self.forgetting_factor
        p_phi = self.inverse_covariance @ phi
        gain = p_phi / (lam + phi @ p_phi)
        residual = float(actual - self.weights @ phi)
        self.weights = self.weights + gain * residual
        p = (self.inverse_covariance - np.outer(gain, p_phi)) / lam
        self.inverse_covariance = (p + p.T) / 2.0
        return residual


class AnomalyDetector:
    """AR(w)+bias forecaster with sigma-band flagging on its residuals."""

    def __init__(
        self,
        window: int = DEFAULT_WINDOW,
        forgetting_factor: float = DEFAULT_FORGETTING,
        threshold_k: float = DEFAULT_THRESHOLD_K,
        init_covariance: float = DEFAULT_INIT_COVARIANCE,
        warmup: int | None = None,
    ):
        if window < 1:
            raise ValidationError(f"window must be >= 1, got {window!r}")
        if not threshold_k > 0:
            raise ValidationError(f"threshold_k must be > 0, got {threshold_k!r}")
        self.window = int(window)
        self.threshold_k = float(threshold_k)
        self.estimator = RlsEstimator(window + 1, forgetting_factor, init_covariance)
        self.warmup_remaining = WARMUP_FACTOR * (window + 1) if warmup is None else int(warmup)
        self._buffer: deque[float] = deque(maxlen=window)
        # Exponentially weighted residual moments (Welford form).
        self._weight_sum = 0.0
        self.residual_mean = 0.0
        self._m2 = 0.0

    @property
    def forgetting_factor(self) -> float:
        return self.estimator.forgetting_factor

    @property
    def weights(self) -> np.ndarray:
        return self.estimator.weights

    @property
    def inverse_covariance(self) -> np.ndarray:
        return self.estimator.inverse_covariance

    @property
    def residual_var(self) -> float:
        if self._weight_sum == 0.0:
            return 0.0
        return max(self._m2 / self._weight_sum, 0.0)

    def _phi(self, window_vals) -> np.ndarray:
        phi = np.empty(len(window_vals) + 1)
        phi[:-1] = window_vals
        phi[-1] = 1.0
        return phi

    def update(self, window_vals, actual: float) -> float:
        """Unconditional RLS + moment update; returns the forecast residual."""
        residual = self.estimator.update(self._phi(window_vals), actual)
        self._update_moments(residual)
        return residual

    def _update_moments(self, residual: float) -> None:
        lam = self.forgetting_factor
        self._weight_sum = lam * self._weight_sum + 1.0
        delta = residual - self.residual_mean
        self.residual_mean += delta / self._weight_sum
        self._m2 = lam * self._m2 + delta * (residual - self.residual_mean)

    def detect(self, residual: float) -> Detection:
        """Classify a residual against the running moments; no state change."""
        if self.warmup_remaining > 0:
            return Detection(False, 0.0)
        deviation = abs(residual - self.residual_mean)
        sigma = math.sqrt(self.residual_var)
        if sigma == 0.0:
            score = 0.0 if deviation == 0.0 else math.inf
        else:
            score = deviation / sigma
        return Detection(score > self.threshold_k, score)

    def observe_window(self, window_vals, sample: float) -> Detection | None:
        """Score one sample against an explicit regression window.

        Applies the contamination policy, so anomalous samples do not
        poison the residual baseline.
        """
        if not math.isfinite(sample):
            raise ValidationError("non-finite input sample rejected; state unchanged")
        phi = self._phi(window_vals)
        residual = float(sample - self.estimator.weights @ phi)
        if self.warmup_remaining > 0:
            self.warmup_remaining -= 1
            self.estimator.update(phi, sample)
            self._update_moments(residual)
            return None
        detection = self.detect(residual)
        if not detection.anomalous or detection.score < 2.0 * self.threshold_k:
            self.estimator.update(phi, sample)
        if not detection.anomalous:
            self._update_moments(residual)
        return detection

    def observe(self, sample: float) -> Detection | None:
        """Feed one sample; returns a Detection once warmup is over."""
        if not math.isfinite(sample):
            raise ValidationError("non-finite input sample rejected; state unchanged")
        if len(self._buffer) < self.window:
            self._buffer.append(float(sample))
            return None
        detection = self.observe_window(list(self._buffer), sample)
        self._buffer.append(float(sample))
        return detection


class NeighborSample(NamedTuple):
    value: float
    age: float


def fuse_neighbor(window_vals, neighbor: NeighborSample | None,
                  staleness_bound: float) -> tuple[np.ndarray, bool]:
    """Build the fused regressor [window, neighbor, 1].

    Returns (regressor, used_neighbor).  A missing or stale neighbor
    sample drops the extra feature, falling back to the solo regressor.
    """
    window_vals = np.asarray(window_vals, dtype=float)
    if neighbor is not None and neighbor.age <= staleness_bound:
        return np.concatenate([window_vals, [neighbor.value, 1.0]]), True
    return np.concatenate([window_vals, [1.0]]), False


class FusedDetector:
    """Own-stream detector optionally extended with one neighbor feature.

    Runs a solo detector and a fused (w+2 parameter) detector side by
    side; each sample is scored by the fused path when a fresh neighbor
    sample is available and by the solo path otherwise.  fallback_count
    records how often staleness forced the solo path.
    """

    def __init__(self, window: int = DEFAULT_WINDOW, staleness_bound: float = 0.0, **kwargs):
        self.window = int(window)
        self.staleness_bound = float(staleness_bound)
        self.solo = AnomalyDetector(window=window, **kwargs)
        self.fused = AnomalyDetector(window=window + 1, **kwargs)
        self.fallback_count = 0
        self._buffer: deque[float] = deque(maxlen=window)

    def observe(self, sample: float, neighbor: NeighborSample | None) -> Detection | None:
        if not math.isfinite(sample):
            raise ValidationError("non-finite input sample rejected; state unchanged")
        if len(self._buffer) < self.window:
            self._buffer.append(float(sample))
            return None
        regressor, used_neighbor = fuse_neighbor(list(self._buffer), neighbor, self.staleness_bound)
        if used_neighbor:
            detection = self.fused.observe_window(regressor[:-1], sample)
        else:
            self.fallback_count += 1
            detection = self.solo.observe_window(regressor[:-1], sample)
        self._buffer.append(float(sample))
        return detection
