"""Event-driven co-simulation of the control loop over a lossy wireless network.

Sensor nodes sample pipe flow on a fixed period, controller nodes turn
delivered samples into valve corrections, actuator nodes hold the last
delivered command (zero-order hold).  All messages traverse one lossy
delayed channel.  The plant integrates exactly between events, so there
is no global tick; event order is made deterministic by keying the queue
on (time, node_id, sequence_number).

Channel randomness is split per message: the n-th message of the
(src, dst) stream draws from the generator stream keyed by
(channel.seed, src, dst, n), so adding a node or reordering unrelated
traffic never perturbs an existing stream.
"""

from __future__ import annotations

import heapq
import math
import zlib
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Optional

import numpy as np

from .anomaly import AnomalyDetector
from .controller import apply_valve_command, ErrorFrame, fit_polynomial_controller, sontag_feedback
from .errors import ValidationError
from .hydro import PipeCoefficients, derive_coefficients, rk4_flow_step
from .reference import eval_reference, eval_reference_derivative

if TYPE_CHECKING:
    from .scenario import ScenarioConfig

ROLE_SENSOR = "sensor"
ROLE_CONTROLLER = "controller"
ROLE_ACTUATOR = "actuator"
ROLE_DETECTOR = "detector"
ROLES = (ROLE_SENSOR, ROLE_CONTROLLER, ROLE_ACTUATOR, ROLE_DETECTOR)

#: deliver_time of a lost message.
DROPPED = None

# Queue id of the logging pseudo-node; '~' sorts after alphanumerics, so
# same-time control events settle before the row is written.
_LOG_NODE = "~log"

TRANSIENT_FRACTION = 0.2


@dataclass(frozen=True)
class NodeSpec:
    """One simulated wireless node.  sample_period/noise_rms apply to
    sensors; window/forgetting_factor/threshold_k to detectors."""

    node_id: str
    role: str
    attached_pipe: str
    sample_period: float = 1.0
    noise_rms: float = 0.0
    window: int = 5
    forgetting_factor: float = 0.995
    threshold_k: float = 4.0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"node {self.node_id!r}: unknown role {self.role!r}")
        if self.role == ROLE_SENSOR and not self.sample_period > 0:
            raise ValidationError(
                f"node {self.node_id!r}: sample_period must be > 0, got {self.sample_period!r}"
            )
        if self.noise_rms < 0:
            raise ValidationError(f"node {self.node_id!r}: noise_rms must be >= 0")


@dataclass(frozen=True)
class ChannelSpec:
    """Lossy delayed channel: drop with probability p, else latency ~ U[min, max]."""

    drop_probability: float = 0.0
    latency_min: float = 0.0
    latency_max: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValidationError(
                f"drop_probability must be in [0, 1], got {self.drop_probability!r}"
            )
        if not 0.0 <= self.latency_min <= self.latency_max:
            raise ValidationError(
                f"need 0 <= latency_min <= latency_max, got "
                f"{self.latency_min!r} and {self.latency_max!r}"
            )
        if self.seed < 0:
            raise ValidationError(f"channel seed must be >= 0, got {self.seed!r}")


@dataclass(frozen=True)
class FlowSample:
    q: float
    t: float


@dataclass(frozen=True)
class ValveCommand:
    u: float
    t: float


@dataclass(frozen=True)
class AnomalyFlagPayload:
    score: float
    t: float


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    send_time: float
    payload: object
    deliver_time: Optional[float] = DROPPED


# Channel draws are generated in fixed-size blocks per (src, dst) stream,
# so message n always lands on the same block position regardless of other
# traffic; the block cache only avoids regenerating them.
_DRAW_BLOCK = 1024


@lru_cache(maxsize=512)
def _stream_block(seed: int, src_key: int, dst_key: int,
                  latency_min: float, latency_max: float, block: int):
    rng = np.random.default_rng([seed, src_key, dst_key, block])
    drops = rng.random(_DRAW_BLOCK)
    latencies = rng.uniform(latency_min, latency_max, _DRAW_BLOCK)
    drops.flags.writeable = False
    latencies.flags.writeable = False
    return drops, latencies


def _node_key(node_id: str) -> int:
    return zlib.crc32(node_id.encode())


def schedule_send(msg: Message, channel: ChannelSpec, counter: int) -> tuple[Optional[float], int]:
    """Decide the fate of one message; returns (deliver_time or DROPPED, counter').

    counter is the message's sequence number within its (src, dst)
    stream; the outcome depends only on (channel.seed, src, dst, counter).
    """
    drops, latencies = _stream_block(
        channel.seed, _node_key(msg.src), _node_key(msg.dst),
        channel.latency_min, channel.latency_max, counter // _DRAW_BLOCK,
    )
    index = counter % _DRAW_BLOCK
    if drops[index] < channel.drop_probability:
        return DROPPED, counter + 1
    return msg.send_time + float(latencies[index]), counter + 1


@dataclass(frozen=True)
class LeakFault:
    """Extra linear loss -lam*q on a pipe from t_start on."""

    pipe_id: str
    extra_loss_coeff: float
    t_start: float

    def __post_init__(self):
        if self.extra_loss_coeff < 0:
            raise ValidationError(f"extra_loss_coeff must be >= 0, got {self.extra_loss_coeff!r}")
        if self.t_start < 0:
            raise ValidationError(f"t_start must be >= 0, got {self.t_start!r}")


@dataclass(frozen=True)
class SensorBiasFault:
    """Constant offset added to a sensor's samples from t_start on."""

    node_id: str
    offset: float
    t_start: float

    def __post_init__(self):
        if self.t_start < 0:
            raise ValidationError(f"t_start must be >= 0, got {self.t_start!r}")


@dataclass(frozen=True)
class SensorSpikeFault:
    """One-sample additive spikes, one per listed time (applied to the
    first sample at or after each time)."""

    node_id: str
    magnitude: float
    times: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(sorted(float(x) for x in self.times)))
        if any(x < 0 for x in self.times):
            raise ValidationError("spike times must be >= 0")


class TimeSeriesLog:
    """Run output: per-interval rows plus anomaly flags and counters."""

    COLUMNS = ("t", "pipe_id", "q", "R", "e", "u", "v", "saturated", "dropped_cumulative")

    def __init__(self, horizon: float):
        self.horizon = horizon
        self.rows: list[tuple] = []
        self.anomalies: list[tuple[float, str, float]] = []
        self.clamped_steps = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for t, pipe_id, q, r, e, u, v, sat, dropped in self.rows:
                fh.write(
                    f"{t:.17e},{pipe_id},{q:.17e},{r:.17e},{e:.17e},"
                    f"{u:.17e},{v:.17e},{int(sat)},{dropped}\n"
                )

    def write_anomalies_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,node_id,score\n")
            for t, node_id, score in self.anomalies:
                fh.write(f"{t:.17e},{node_id},{score:.17e}\n")

    def errors(self, pipe_id: str | None = None, t_min: float = 0.0) -> np.ndarray:
        return np.array(
            [row[4] for row in self.rows
             if row[0] >= t_min and (pipe_id is None or row[1] == pipe_id)]
        )

    def summary(self) -> dict:
        t_cut = TRANSIENT_FRACTION * self.horizon
        post = self.errors(t_min=t_cut)
        dropped_final: dict[str, int] = {}
        for row in self.rows:
            dropped_final[row[1]] = row[8]
        saturated = sum(1 for row in self.rows if row[7])
        return {
            "rms_tracking_error": float(np.sqrt(np.mean(post**2))) if len(post) else math.nan,
            "max_abs_error_post_transient": float(np.abs(post).max()) if len(post) else math.nan,
            "saturation_fraction": saturated / len(self.rows) if self.rows else math.nan,
            "dropped_total": sum(dropped_final.values()),
            "anomaly_flags": len(self.anomalies),
            "clamped_steps": self.clamped_steps,
        }

    def summary_text(self) -> str:
        parts = []
        for key, value in self.summary().items():
            parts.append(f"{key} = {value!r}")
        return "\n".join(parts) + "\n"


class _PipeRuntime:
    __slots__ = (
        "pipe_id", "coeffs", "q", "u", "last_v", "last_sat", "dropped",
        "leak_onsets", "ripple_rel", "ripple_period",
        "controller_id", "actuator_id", "law",
    )

    def __init__(self, pipe_id, coeffs, q0, u0, ripple_rel, ripple_period):
        self.pipe_id = pipe_id
        self.coeffs = coeffs
        self.q = q0
        self.u = u0
        self.last_v = 0.0
        self.last_sat = False
        self.dropped = 0
        self.leak_onsets: list[tuple[float, float]] = []  # (t_start, lam), sorted
        self.ripple_rel = ripple_rel
        self.ripple_period = ripple_period
        self.controller_id = None
        self.actuator_id = None
        self.law = None

    def effective_coeffs(self, t: float) -> PipeCoefficients:
        k = self.coeffs.K_drive
        if self.ripple_rel:
            k = k * (1.0 + self.ripple_rel * math.sin(2.0 * math.pi * t / self.ripple_period))
        l = self.coeffs.L_damp
        for t_start, lam in self.leak_onsets:
            if t >= t_start:
                l += lam
        if k == self.coeffs.K_drive and l == self.coeffs.L_damp:
            return self.coeffs
        return PipeCoefficients(K_drive=k, L_damp=l)


class ClosedLoopSim:
    """One deterministic closed-loop run of a scenario."""

    def __init__(self, scenario: "ScenarioConfig"):
        scenario.validate()
        self.scenario = scenario
        self.ref = scenario.reference
        self.cfg = scenario.controller
        self.channel = scenario.channel
        self.t = 0.0
        self._counters: dict[tuple[str, str], int] = {}  # per-stream message counters
        self._seq = 0  # global event sequence
        self._heap: list[tuple] = []
        self.log = TimeSeriesLog(scenario.horizon)
        self.processed: list[tuple[float, str, int]] = []  # (t, node, seq) audit trail

        self.pipes: dict[str, _PipeRuntime] = {}
        u0, _ = apply_valve_command(0.0, self.cfg)
        for setup in scenario.pipes:
            coeffs = derive_coefficients(setup.spec)
            rt = _PipeRuntime(setup.pipe_id, coeffs, setup.initial_flow, u0,
                              setup.drive_ripple_rel, setup.drive_ripple_period)
            if self.cfg.mode == "polynomial":
                rt.law = fit_polynomial_controller(coeffs, self.ref, self.cfg)
            self.pipes[setup.pipe_id] = rt

        self._sensor_rng: dict[str, np.random.Generator] = {}
        self._by_controller: dict[str, _PipeRuntime] = {}
        self._by_actuator: dict[str, _PipeRuntime] = {}
        self._detectors: dict[str, list[tuple[str, AnomalyDetector]]] = {
            p.pipe_id: [] for p in scenario.pipes
        }
        self._bias: dict[str, list[SensorBiasFault]] = {}
        self._spikes: dict[str, list[list]] = {}  # node -> [[fault, next_index], ...]
        for idx, node in enumerate(scenario.nodes):
            if node.role == ROLE_SENSOR and node.noise_rms > 0:
                self._sensor_rng[node.node_id] = np.random.default_rng(
                    [scenario.seed, 101, idx]
                )
            if node.role == ROLE_CONTROLLER:
                self.pipes[node.attached_pipe].controller_id = node.node_id
                self._by_controller[node.node_id] = self.pipes[node.attached_pipe]
            if node.role == ROLE_ACTUATOR:
                self.pipes[node.attached_pipe].actuator_id = node.node_id
                self._by_actuator[node.node_id] = self.pipes[node.attached_pipe]
            if node.role == ROLE_DETECTOR:
                detector = AnomalyDetector(
                    window=node.window,
                    forgetting_factor=node.forgetting_factor,
                    threshold_k=node.threshold_k,
                )
                self._detectors[node.attached_pipe].append((node.node_id, detector))
        for fault in scenario.faults:
            if isinstance(fault, LeakFault):
                self.pipes[fault.pipe_id].leak_onsets.append(
                    (fault.t_start, fault.extra_loss_coeff)
                )
            elif isinstance(fault, SensorBiasFault):
                self._bias.setdefault(fault.node_id, []).append(fault)
            elif isinstance(fault, SensorSpikeFault):
                self._spikes.setdefault(fault.node_id, []).append([fault, 0])
        for rt in self.pipes.values():
            rt.leak_onsets.sort()

    # -- event queue ---------------------------------------------------

    def _push(self, time: float, node_id: str, kind: str, data) -> None:
        heapq.heappush(self._heap, (time, node_id, self._seq, kind, data))
        self._seq += 1

    # -- plant ---------------------------------------------------------

    def _advance_to(self, t_new: float) -> None:
        if t_new <= self.t:
            return
        for rt in self.pipes.values():
            self._advance_pipe(rt, self.t, t_new)
        self.t = t_new

    def _advance_pipe(self, rt: _PipeRuntime, t0: float, t1: float) -> None:
        boundaries = [t for t, _ in rt.leak_onsets if t0 < t < t1]
        plant_dt = self.scenario.plant_dt
        for left, right in zip([t0] + boundaries, boundaries + [t1]):
            span = right - left
            if span <= 0.0:
                continue
            n_sub = max(1, math.ceil(span / plant_dt - 1e-9))
            h = span / n_sub
            for i in range(n_sub):
                t_sub = left + i * h
                coeffs = rt.effective_coeffs(t_sub)
                result = rk4_flow_step(rt.q, rt.u, coeffs, h, t=t_sub)
                rt.q = result.flow
                if result.clamped:
                    self.log.clamped_steps += 1

    # -- handlers --------------------------------------------------------

    def _send(self, rt: _PipeRuntime, src: str, dst: str, t: float, payload) -> None:
        stream = (src, dst)
        counter = self._counters.get(stream, 0)
        msg = Message(src=src, dst=dst, send_time=t, payload=payload)
        deliver, self._counters[stream] = schedule_send(msg, self.channel, counter)
        if deliver is DROPPED:
            rt.dropped += 1
        elif deliver <= self.scenario.horizon:
            self._push(deliver, dst, "deliver", Message(
                src=src, dst=dst, send_time=t, payload=payload, deliver_time=deliver))

    def _handle_sample(self, t: float, node: NodeSpec) -> None:
        rt = self.pipes[node.attached_pipe]
        value = rt.q
        for fault in self._bias.get(node.node_id, ()):
            if t >= fault.t_start:
                value += fault.offset
        for entry in self._spikes.get(node.node_id, ()):
            fault, next_index = entry
            if next_index < len(fault.times) and t >= fault.times[next_index]:
                value += fault.magnitude
                entry[1] += 1
        rng = self._sensor_rng.get(node.node_id)
        if rng is not None:
            value += rng.normal(0.0, node.noise_rms)
        for det_id, detector in self._detectors[node.attached_pipe]:
            detection = detector.observe(value)
            if detection is not None and detection.anomalous:
                self.log.anomalies.append((t, det_id, detection.score))
        self._send(rt, node.node_id, rt.controller_id, t, FlowSample(q=value, t=t))
        t_next = t + node.sample_period
        if t_next <= self.scenario.horizon:
            self._push(t_next, node.node_id, "sample", node)

    def _handle_deliver(self, t: float, msg: Message) -> None:
        payload = msg.payload
        if isinstance(payload, FlowSample):
            rt = self._by_controller[msg.dst]
            r = eval_reference(self.ref, t)
            frame = ErrorFrame(t=t, e=payload.q - r, R=r,
                               R_dot=eval_reference_derivative(self.ref, t))
            if rt.law is not None:
                v = rt.law(frame.e, t)
            else:
                v = sontag_feedback(frame, rt.coeffs, self.cfg)
            u_cmd, saturated = apply_valve_command(v, self.cfg)
            rt.last_v = v
            rt.last_sat = saturated
            self._send(rt, msg.dst, rt.actuator_id, t, ValveCommand(u=u_cmd, t=t))
        elif isinstance(payload, ValveCommand):
            self._by_actuator[msg.dst].u = payload.u

    def _handle_log(self, t: float) -> None:
        for setup in self.scenario.pipes:
            rt = self.pipes[setup.pipe_id]
            r = eval_reference(self.ref, t)
            self.log.rows.append(
                (t, rt.pipe_id, rt.q, r, rt.q - r, rt.u, rt.last_v, rt.last_sat, rt.dropped)
            )
        t_next = t + self.scenario.output_interval
        if t_next <= self.scenario.horizon:
            self._push(t_next, _LOG_NODE, "log", None)

    # -- main loop -------------------------------------------------------

    def run(self) -> TimeSeriesLog:
        self._push(0.0, _LOG_NODE, "log", None)
        for node in self.scenario.nodes:
            if node.role == ROLE_SENSOR:
                self._push(0.0, node.node_id, "sample", node)
        while self._heap:
            time, node_id, seq, kind, data = heapq.heappop(self._heap)
            self._advance_to(time)
            self.processed.append((time, node_id, seq))
            if kind == "sample":
                self._handle_sample(time, data)
            elif kind == "deliver":
                self._handle_deliver(time, data)
            else:
                self._handle_log(time)
        return self.log


def run_closed_loop(scenario: "ScenarioConfig") -> TimeSeriesLog:
    """Simulate one scenario end to end; deterministic for a fixed seed.

    Actuators start at the clamped average opening and hold each
    delivered command until the next one (zero-order hold).  Controllers
    use the latest delivered sample against the current reference value.
    """
    return ClosedLoopSim(scenario).run()
