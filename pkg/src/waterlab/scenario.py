"""Scenario configuration: parsing, validation, and serialization.

The file format is line oriented and diff friendly: sections are
``[pipe <id>]``, ``[reference]``, ``[controller]``, ``[node <id>]``,
``[channel]``, ``[fault <n>]``, ``[sim]``, each holding ``key = value``
pairs.  ``#`` starts a comment.  Parsing reports every problem it finds,
not just the first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .controller import ControllerConfig, default_u_bar, MODE_EXACT, MODE_POLYNOMIAL
from .errors import ScenarioError, ValidationError, WaterlabError
from .hydro import derive_coefficients, PipeSpec
from .reference import fit_reference, FourierReference, load_demand_csv
from .wcn import (
    ChannelSpec,
    LeakFault,
    NodeSpec,
    ROLE_ACTUATOR,
    ROLE_CONTROLLER,
    ROLE_DETECTOR,
    ROLE_SENSOR,
    SensorBiasFault,
    SensorSpikeFault,
)

_FAULT_TYPES = ("leak", "sensor_bias", "sensor_spike")


@dataclass(frozen=True)
class PipeSetup:
    """One pipe plus its initial condition and optional drive ripple."""

    pipe_id: str
    spec: PipeSpec
    initial_flow: float = 0.0
    drive_ripple_rel: float = 0.0
    drive_ripple_period: float = 3600.0

    def __post_init__(self):
        if not (math.isfinite(self.initial_flow) and self.initial_flow >= 0):
            raise ValidationError(
                f"pipe {self.pipe_id!r}: initial_flow must be >= 0, got {self.initial_flow!r}"
            )
        if not 0.0 <= self.drive_ripple_rel < 1.0:
            raise ValidationError(
                f"pipe {self.pipe_id!r}: drive_ripple_rel must be in [0, 1), "
                f"got {self.drive_ripple_rel!r}"
            )
        if not self.drive_ripple_period > 0:
            raise ValidationError(f"pipe {self.pipe_id!r}: drive_ripple_period must be > 0")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one closed-loop run needs; validated before any run."""

    pipes: tuple[PipeSetup, ...]
    reference: FourierReference
    controller: ControllerConfig
    nodes: tuple[NodeSpec, ...]
    channel: ChannelSpec
    horizon: float
    output_interval: float
    seed: int
    faults: tuple = ()
    plant_dt: float = 1.0

    def validate(self) -> None:
        errors = self._collect_errors()
        if errors:
            raise ScenarioError(errors)

    def _collect_errors(self) -> list[str]:
        errors: list[str] = []
        if not self.horizon > 0:
            errors.append(f"[sim] horizon must be > 0, got {self.horizon!r}")
        if not self.output_interval > 0:
            errors.append(f"[sim] output_interval must be > 0, got {self.output_interval!r}")
        if not self.plant_dt > 0:
            errors.append(f"[sim] plant_dt must be > 0, got {self.plant_dt!r}")
        if self.seed < 0:
            errors.append(f"[sim] seed must be >= 0, got {self.seed!r}")
        if not self.pipes:
            errors.append("at least one pipe is required")
        pipe_ids = [p.pipe_id for p in self.pipes]
        if len(set(pipe_ids)) != len(pipe_ids):
            errors.append(f"duplicate pipe ids: {pipe_ids}")
        node_ids = [n.node_id for n in self.nodes]
        if len(set(node_ids)) != len(node_ids):
            errors.append(f"duplicate node ids: {node_ids}")
        for node in self.nodes:
            if node.attached_pipe not in pipe_ids:
                errors.append(
                    f"node {node.node_id!r} references unknown pipe {node.attached_pipe!r}"
                )
        for pipe in self.pipes:
            roles = {
                role: [n for n in self.nodes if n.attached_pipe == pipe.pipe_id and n.role == role]
                for role in (ROLE_SENSOR, ROLE_CONTROLLER, ROLE_ACTUATOR)
            }
            if len(roles[ROLE_SENSOR]) < 1:
                errors.append(f"pipe {pipe.pipe_id!r} needs at least one sensor node")
            if len(roles[ROLE_CONTROLLER]) != 1:
                errors.append(
                    f"pipe {pipe.pipe_id!r} needs exactly one controller node, "
                    f"got {len(roles[ROLE_CONTROLLER])}"
                )
            if len(roles[ROLE_ACTUATOR]) != 1:
                errors.append(
                    f"pipe {pipe.pipe_id!r} needs exactly one actuator node, "
                    f"got {len(roles[ROLE_ACTUATOR])}"
                )
        sensor_ids = {n.node_id for n in self.nodes if n.role == ROLE_SENSOR}
        for i, fault in enumerate(self.faults, start=1):
            label = f"[fault {i}]"
            if isinstance(fault, LeakFault):
                if fault.pipe_id not in pipe_ids:
                    errors.append(f"{label} references unknown pipe {fault.pipe_id!r}")
                if fault.t_start > self.horizon:
                    errors.append(f"{label} t_start {fault.t_start!r} is beyond the horizon")
            elif isinstance(fault, (SensorBiasFault, SensorSpikeFault)):
                if fault.node_id not in sensor_ids:
                    errors.append(f"{label} references unknown sensor node {fault.node_id!r}")
                t_ref = fault.t_start if isinstance(fault, SensorBiasFault) else (
                    fault.times[0] if fault.times else 0.0
                )
                if t_ref > self.horizon:
                    errors.append(f"{label} starts beyond the horizon")
            else:
                errors.append(f"{label} has unknown fault type {type(fault).__name__}")
        # Integrator stability guard, including the worst-case leak loss.
        for pipe in self.pipes:
            try:
                coeffs = derive_coefficients(pipe.spec)
            except ValidationError as exc:
                errors.append(str(exc))
                continue
            total_leak = sum(
                f.extra_loss_coeff
                for f in self.faults
                if isinstance(f, LeakFault) and f.pipe_id == pipe.pipe_id
            )
            if self.plant_dt > 0 and self.plant_dt * (coeffs.L_damp + total_leak) >= 1.0:
                errors.append(
                    f"pipe {pipe.pipe_id!r}: plant_dt*L_damp must stay below 1 "
                    f"(got {self.plant_dt * (coeffs.L_damp + total_leak)!r}); reduce plant_dt"
                )
        return errors


def inject_fault(scenario: ScenarioConfig, fault) -> ScenarioConfig:
    """Return a copy of the scenario with one more fault, revalidated."""
    updated = replace(scenario, faults=scenario.faults + (fault,))
    updated.validate()
    return updated


# -- parsing ---------------------------------------------------------------


@dataclass
class _Section:
    kind: str
    name: str
    line: int
    entries: dict[str, str] = field(default_factory=dict)


def _split_sections(text: str, errors: list[str]) -> list[_Section]:
    sections: list[_Section] = []
    current: _Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {lineno}: malformed section header {raw.strip()!r}")
                current = None
                continue
            parts = line[1:-1].split()
            kind = parts[0] if parts else ""
            name = parts[1] if len(parts) > 1 else ""
            if kind not in ("pipe", "reference", "controller", "node", "channel", "fault", "sim"):
                errors.append(f"line {lineno}: unknown section kind {kind!r}")
                current = None
                continue
            if kind in ("pipe", "node", "fault") and not name:
                errors.append(f"line {lineno}: section [{kind}] needs a name")
                current = None
                continue
            current = _Section(kind=kind, name=name, line=lineno)
            sections.append(current)
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        if current is None:
            errors.append(f"line {lineno}: entry outside any section")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key in current.entries:
            errors.append(f"line {lineno}: duplicate key {key!r} in [{current.kind} {current.name}]")
        current.entries[key] = value.strip()
    return sections


class _EntryReader:
    """Typed access to one section's entries with error collection."""

    def __init__(self, section: _Section, errors: list[str]):
        self.section = section
        self.errors = errors
        self.used: set[str] = set()

    @property
    def label(self) -> str:
        name = f" {self.section.name}" if self.section.name else ""
        return f"[{self.section.kind}{name}]"

    def _raw(self, key, required, default):
        self.used.add(key)
        if key not in self.section.entries:
            if required:
                self.errors.append(f"{self.label} is missing key {key!r}")
            return default
        return self.section.entries[key]

    def get_float(self, key, required=False, default=None):
        raw = self._raw(key, required, None)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            self.errors.append(f"{self.label} key {key!r}: not a number: {raw!r}")
            return default

    def get_int(self, key, required=False, default=None):
        raw = self._raw(key, required, None)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            self.errors.append(f"{self.label} key {key!r}: not an integer: {raw!r}")
            return default

    def get_str(self, key, required=False, default=None):
        raw = self._raw(key, required, None)
        return default if raw is None else raw

    def get_float_list(self, key, required=False):
        raw = self._raw(key, required, None)
        if raw is None:
            return ()
        try:
            return tuple(float(part) for part in raw.split(",") if part.strip())
        except ValueError:
            self.errors.append(f"{self.label} key {key!r}: not a number list: {raw!r}")
            return ()

    def warn_unused(self):
        for key in self.section.entries:
            if key not in self.used:
                self.errors.append(f"{self.label} has unknown key {key!r}")


def _build_pipe(section: _Section, errors: list[str]) -> PipeSetup | None:
    r = _EntryReader(section, errors)
    length = r.get_float("length", required=True)
    diameter = r.get_float("diameter", required=True)
    hu = r.get_float("upstream_head", required=True)
    hd = r.get_float("downstream_head", required=True)
    nu = r.get_float("kinematic_viscosity", default=1e-6)
    gravity = r.get_float("gravity", default=9.81)
    friction = r.get_float("friction_factor")
    q0 = r.get_float("initial_flow", default=0.0)
    ripple = r.get_float("drive_ripple_rel", default=0.0)
    ripple_period = r.get_float("drive_ripple_period", default=3600.0)
    r.warn_unused()
    if None in (length, diameter, hu, hd):
        return None
    try:
        spec = PipeSpec(
            length_L=length, diameter_D=diameter,
            upstream_head_Hu=hu, downstream_head_Hd=hd,
            kinematic_viscosity_nu=nu, gravity_g=gravity, friction_factor_f=friction,
        )
        return PipeSetup(
            pipe_id=section.name, spec=spec, initial_flow=q0,
            drive_ripple_rel=ripple, drive_ripple_period=ripple_period,
        )
    except ValidationError as exc:
        errors.append(f"{r.label}: {exc}")
        return None


def _build_reference(section: _Section, errors: list[str], base_dir) -> FourierReference | None:
    r = _EntryReader(section, errors)
    omega = r.get_float("omega", required=True)
    csv_path = r.get_str("demand_csv")
    if csv_path is not None:
        r.warn_unused()
        if omega is None:
            return None
        try:
            path = csv_path if base_dir is None else str(base_dir / csv_path)
            return fit_reference(load_demand_csv(path), omega)
        except (OSError, WaterlabError, ValueError) as exc:
            errors.append(f"{r.label}: demand fit failed: {exc}")
            return None
    b0 = r.get_float("b0", required=True)
    harmonics = [r.get_float(k, required=True) for k in ("b1", "b2", "b3", "a1", "a2", "a3")]
    r.warn_unused()
    if omega is None or b0 is None or None in harmonics:
        return None
    try:
        return FourierReference(
            omega=omega, mean_level=b0,
            cos_coeffs=tuple(harmonics[:3]), sin_coeffs=tuple(harmonics[3:]),
        )
    except WaterlabError as exc:
        errors.append(f"{r.label}: {exc}")
        return None


def _build_controller(section, errors, reference, pipes) -> ControllerConfig | None:
    r = _EntryReader(section, errors)
    u_bar_raw = r.get_str("u_bar", default="auto")
    u_min = r.get_float("u_min", default=0.0)
    u_max = r.get_float("u_max", default=math.inf)
    ts = r.get_float("sample_period", default=1.0)
    mode = r.get_str("mode", default=MODE_EXACT)
    poly_degree = r.get_int("poly_degree", default=8)
    epsilon_band = r.get_float("epsilon_band", default=1e-4)
    delta_bound = r.get_float("delta_bound", default=1e-2)
    r.warn_unused()
    if u_bar_raw == "auto":
        if reference is None or not pipes:
            errors.append(f"{r.label}: u_bar=auto needs a valid reference and pipe")
            return None
        u_bar = default_u_bar(derive_coefficients(pipes[0].spec), reference)
    else:
        try:
            u_bar = float(u_bar_raw)
        except ValueError:
            errors.append(f"{r.label} key 'u_bar': not a number or 'auto': {u_bar_raw!r}")
            return None
    try:
        return ControllerConfig(
            u_bar=u_bar, u_min=u_min, u_max=u_max, sample_period_Ts=ts, mode=mode,
            poly_degree=poly_degree, epsilon_band=epsilon_band, delta_bound=delta_bound,
        )
    except ValidationError as exc:
        errors.append(f"{r.label}: {exc}")
        return None


def _build_node(section: _Section, errors: list[str]) -> NodeSpec | None:
    r = _EntryReader(section, errors)
    role = r.get_str("role", required=True)
    pipe = r.get_str("pipe", required=True)
    sample_period = r.get_float("sample_period", default=1.0)
    noise_rms = r.get_float("noise_rms", default=0.0)
    window = r.get_int("window", default=5)
    forgetting = r.get_float("forgetting_factor", default=0.995)
    threshold_k = r.get_float("threshold_k", default=4.0)
    r.warn_unused()
    if role is None or pipe is None:
        return None
    try:
        return NodeSpec(
            node_id=section.name, role=role, attached_pipe=pipe,
            sample_period=sample_period, noise_rms=noise_rms,
            window=window, forgetting_factor=forgetting, threshold_k=threshold_k,
        )
    except ValidationError as exc:
        errors.append(f"{r.label}: {exc}")
        return None


def _build_fault(section: _Section, errors: list[str]):
    r = _EntryReader(section, errors)
    kind = r.get_str("type", required=True)
    if kind not in _FAULT_TYPES:
        r.warn_unused()
        if kind is not None:
            errors.append(f"{r.label}: unknown fault type {kind!r} (expected one of {_FAULT_TYPES})")
        return None
    try:
        if kind == "leak":
            pipe = r.get_str("pipe", required=True)
            lam = r.get_float("extra_loss_coeff", required=True)
            t_start = r.get_float("t_start", required=True)
            r.warn_unused()
            if None in (pipe, lam, t_start):
                return None
            return LeakFault(pipe_id=pipe, extra_loss_coeff=lam, t_start=t_start)
        if kind == "sensor_bias":
            node = r.get_str("node", required=True)
            offset = r.get_float("offset", required=True)
            t_start = r.get_float("t_start", required=True)
            r.warn_unused()
            if None in (node, offset, t_start):
                return None
            return SensorBiasFault(node_id=node, offset=offset, t_start=t_start)
        node = r.get_str("node", required=True)
        magnitude = r.get_float("magnitude", required=True)
        times = r.get_float_list("times", required=True)
        r.warn_unused()
        if None in (node, magnitude) or not times:
            return None
        return SensorSpikeFault(node_id=node, magnitude=magnitude, times=times)
    except ValidationError as exc:
        errors.append(f"{r.label}: {exc}")
        return None


def parse_scenario_text(text: str, base_dir=None) -> ScenarioConfig:
    """Parse and fully validate scenario text; raises ScenarioError with
    every problem found."""
    errors: list[str] = []
    sections = _split_sections(text, errors)

    pipes: list[PipeSetup] = []
    nodes: list[NodeSpec] = []
    faults: list = []
    reference = None
    controller_section = None
    channel = ChannelSpec()
    sim_values: dict = {}

    for section in sections:
        if section.kind == "pipe":
            built = _build_pipe(section, errors)
            if built is not None:
                pipes.append(built)
        elif section.kind == "reference":
            reference = _build_reference(section, errors, base_dir)
        elif section.kind == "controller":
            controller_section = section
        elif section.kind == "node":
            built = _build_node(section, errors)
            if built is not None:
                nodes.append(built)
        elif section.kind == "fault":
            built = _build_fault(section, errors)
            if built is not None:
                faults.append(built)
        elif section.kind == "channel":
            r = _EntryReader(section, errors)
            try:
                channel = ChannelSpec(
                    drop_probability=r.get_float("drop_probability", default=0.0),
                    latency_min=r.get_float("latency_min", default=0.0),
                    latency_max=r.get_float("latency_max", default=0.0),
                    seed=r.get_int("seed", default=0),
                )
            except ValidationError as exc:
                errors.append(f"{r.label}: {exc}")
            r.warn_unused()
        elif section.kind == "sim":
            r = _EntryReader(section, errors)
            sim_values = {
                "horizon": r.get_float("horizon", required=True, default=0.0),
                "output_interval": r.get_float("output_interval", default=1.0),
                "seed": r.get_int("seed", default=0),
                "plant_dt": r.get_float("plant_dt", default=1.0),
            }
            r.warn_unused()

    if reference is None:
        errors.append("a [reference] section is required")
    if controller_section is None:
        errors.append("a [controller] section is required")
    if not sim_values:
        errors.append("a [sim] section is required")

    controller = None
    if controller_section is not None:
        controller = _build_controller(controller_section, errors, reference, pipes)

    if errors or reference is None or controller is None:
        raise ScenarioError(errors or ["scenario incomplete"])

    config = ScenarioConfig(
        pipes=tuple(pipes),
        reference=reference,
        controller=controller,
        nodes=tuple(nodes),
        channel=channel,
        horizon=sim_values["horizon"],
        output_interval=sim_values["output_interval"],
        seed=sim_values["seed"],
        faults=tuple(faults),
        plant_dt=sim_values["plant_dt"],
    )
    config.validate()
    return config


def parse_scenario(path) -> ScenarioConfig:
    """Parse a scenario file; see parse_scenario_text."""
    from pathlib import Path

    path = Path(path)
    with open(path) as fh:
        return parse_scenario_text(fh.read(), base_dir=path.parent)


def serialize_scenario(config: ScenarioConfig) -> str:
    """Canonical text form; reparsing yields an equal ScenarioConfig."""
    lines: list[str] = []
    for pipe in config.pipes:
        lines.append(f"[pipe {pipe.pipe_id}]")
        spec = pipe.spec
        lines.append(f"length = {spec.length_L!r}")
        lines.append(f"diameter = {spec.diameter_D!r}")
        lines.append(f"upstream_head = {spec.upstream_head_Hu!r}")
        lines.append(f"downstream_head = {spec.downstream_head_Hd!r}")
        lines.append(f"kinematic_viscosity = {spec.kinematic_viscosity_nu!r}")
        lines.append(f"gravity = {spec.gravity_g!r}")
        if spec.friction_factor_f is not None:
            lines.append(f"friction_factor = {spec.friction_factor_f!r}")
        lines.append(f"initial_flow = {pipe.initial_flow!r}")
        if pipe.drive_ripple_rel:
            lines.append(f"drive_ripple_rel = {pipe.drive_ripple_rel!r}")
            lines.append(f"drive_ripple_period = {pipe.drive_ripple_period!r}")
        lines.append("")
    ref = config.reference
    lines.append("[reference]")
    lines.append(f"omega = {ref.omega!r}")
    lines.append(f"b0 = {ref.mean_level!r}")
    for i, c in enumerate(ref.cos_coeffs, start=1):
        lines.append(f"b{i} = {c!r}")
    for i, c in enumerate(ref.sin_coeffs, start=1):
        lines.append(f"a{i} = {c!r}")
    lines.append("")
    cfg = config.controller
    lines.append("[controller]")
    lines.append(f"u_bar = {cfg.u_bar!r}")
    lines.append(f"u_min = {cfg.u_min!r}")
    lines.append(f"u_max = {cfg.u_max!r}" if math.isfinite(cfg.u_max) else "u_max = inf")
    lines.append(f"sample_period = {cfg.sample_period_Ts!r}")
    lines.append(f"mode = {cfg.mode}")
    lines.append(f"poly_degree = {cfg.poly_degree}")
    lines.append(f"epsilon_band = {cfg.epsilon_band!r}")
    lines.append(f"delta_bound = {cfg.delta_bound!r}")
    lines.append("")
    for node in config.nodes:
        lines.append(f"[node {node.node_id}]")
        lines.append(f"role = {node.role}")
        lines.append(f"pipe = {node.attached_pipe}")
        if node.role == ROLE_SENSOR:
            lines.append(f"sample_period = {node.sample_period!r}")
            lines.append(f"noise_rms = {node.noise_rms!r}")
        if node.role == ROLE_DETECTOR:
            lines.append(f"window = {node.window}")
            lines.append(f"forgetting_factor = {node.forgetting_factor!r}")
            lines.append(f"threshold_k = {node.threshold_k!r}")
        lines.append("")
    lines.append("[channel]")
    lines.append(f"drop_probability = {config.channel.drop_probability!r}")
    lines.append(f"latency_min = {config.channel.latency_min!r}")
    lines.append(f"latency_max = {config.channel.latency_max!r}")
    lines.append(f"seed = {config.channel.seed}")
    lines.append("")
    for i, fault in enumerate(config.faults, start=1):
        lines.append(f"[fault {i}]")
        if isinstance(fault, LeakFault):
            lines.append("type = leak")
            lines.append(f"pipe = {fault.pipe_id}")
            lines.append(f"extra_loss_coeff = {fault.extra_loss_coeff!r}")
            lines.append(f"t_start = {fault.t_start!r}")
        elif isinstance(fault, SensorBiasFault):
            lines.append("type = sensor_bias")
            lines.append(f"node = {fault.node_id}")
            lines.append(f"offset = {fault.offset!r}")
            lines.append(f"t_start = {fault.t_start!r}")
        else:
            lines.append("type = sensor_spike")
            lines.append(f"node = {fault.node_id}")
            lines.append(f"magnitude = {fault.magnitude!r}")
            lines.append("times = " + ",".join(repr(x) for x in fault.times))
        lines.append("")
    lines.append("[sim]")
    lines.append(f"horizon = {config.horizon!r}")
    lines.append(f"output_interval = {config.output_interval!r}")
    lines.append(f"seed = {config.seed}")
    lines.append(f"plant_dt = {config.plant_dt!r}")
    return "\n".join(lines) + "\n"
