"""Scenario files: JSON schema, validation, and conversion to runtime objects."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import netlink
from .controld import Thresholds
from .hydrosim import (EmitterClog, FaultKind, FilterClog, PlantConfig, PlantState,
                       SupplyLoss, SupplyRestore)
from .netlink import LinkModel
from .sense import CalibrationCurve, Quantity, TransducerSpec, ideal_curve

SENSOR_QUANTITY = {
    netlink.SENSOR_P1: Quantity.PRESSURE,
    netlink.SENSOR_P2: Quantity.PRESSURE,
    netlink.SENSOR_P3: Quantity.PRESSURE,
    netlink.SENSOR_FLOW: Quantity.FLOW,
    netlink.SENSOR_P_HEAD: Quantity.PRESSURE,
    netlink.SENSOR_P_END: Quantity.PRESSURE,
    netlink.SENSOR_SOIL: Quantity.SOIL_MOISTURE,
    netlink.SENSOR_AIR_TEMP: Quantity.AIR_TEMP,
    netlink.SENSOR_AIR_HUMIDITY: Quantity.AIR_HUMIDITY,
}


class ScenarioError(ValueError):
    """Scenario file is unreadable or fails validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlantSection(_Strict):
    supply_pressure_kpa: float = 180.0
    k_filter_clean: float = Field(2.0e-3, ge=0)
    k_lateral: float = Field(2.5e-3, ge=0)
    emitter_count: int = Field(10, ge=1)
    k_emitter: float = Field(0.4, ge=0)
    emitter_exponent: float = Field(0.5, ge=0)
    soil_capacity_l: float = Field(8.0, gt=0)
    infiltration_efficiency: float = Field(0.9, ge=0, le=1)
    et_rate: float = Field(1.0e-4, ge=0)
    air_temp_c: float = 22.0
    air_humidity_pct: float = 55.0


class InitialSection(_Strict):
    valve_open: bool = False
    shutoff_open: bool = True
    filter_clog: float = Field(0.0, ge=0, lt=1)
    emitter_clog: float = Field(0.0, ge=0, le=1)
    soil_moisture: float = Field(0.5, ge=0, le=1)


class LinkSection(_Strict):
    drop_probability: float = Field(0.0, ge=0, le=1)
    corruption_probability: float = Field(0.0, ge=0, le=1)
    latency_ticks: int = Field(0, ge=0)


class ThresholdSection(_Strict):
    moisture_open: float = 0.50
    moisture_close: float = 0.95
    filter_dp_max: float = 50.0
    lateral_dp_epsilon: float = 1.0
    p1_min: float = 100.0
    debounce_ticks: int = Field(3, ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if not 0.0 < self.moisture_open < self.moisture_close <= 1.0:
            raise ValueError("need 0 < moisture_open < moisture_close <= 1")
        if self.filter_dp_max <= 0 or self.lateral_dp_epsilon <= 0:
            raise ValueError("filter_dp_max and lateral_dp_epsilon must be > 0")
        return self


class SensorSection(_Strict):
    span_min: float
    span_max: float
    noise_sigma_counts: float = Field(0.5, ge=0)

    @model_validator(mode="after")
    def _span(self):
        if not self.span_max > self.span_min:
            raise ValueError("span_max must exceed span_min")
        return self


DEFAULT_SENSORS = {
    "pressure": SensorSection(span_min=0.0, span_max=25.0),  # mca
    "flow": SensorSection(span_min=0.0, span_max=120.0),  # L/h
    "soil_moisture": SensorSection(span_min=0.0, span_max=1.0),
    "air_temp": SensorSection(span_min=-10.0, span_max=50.0),
    "air_humidity": SensorSection(span_min=0.0, span_max=100.0),
}


class CurveSection(_Strict):
    intercept: float
    slope: float
    unit_label: str = "mca"

    @field_validator("slope")
    @classmethod
    def _nonzero(cls, v):
        if v == 0:
            raise ValueError("slope must be nonzero")
        return v


class FaultSection(_Strict):
    at_s: float = Field(ge=0)
    kind: Literal["filter_clog", "emitter_clog", "supply_loss", "supply_restore"]
    level: Optional[float] = None
    # Optional linear ramp from start_level to level over ramp_s seconds.
    ramp_s: Optional[float] = Field(None, gt=0)
    start_level: float = 0.0

    @model_validator(mode="after")
    def _level(self):
        if self.kind in ("filter_clog", "emitter_clog"):
            if self.level is None:
                raise ValueError(f"{self.kind} needs a level")
            upper_ok = self.level < 1 if self.kind == "filter_clog" else self.level <= 1
            if not (self.level >= 0 and upper_ok):
                raise ValueError(f"{self.kind} level {self.level} out of range")
        elif self.level is not None or self.ramp_s is not None:
            raise ValueError(f"{self.kind} takes no level or ramp")
        return self


class ScenarioFile(_Strict):
    name: str = "scenario"
    duration_s: float = Field(gt=0)
    tick_ms: int = Field(100, gt=0)
    seed: int = Field(ge=0, lt=2**64)
    plant: PlantSection = PlantSection()
    initial: InitialSection = InitialSection()
    link: LinkSection = LinkSection()
    thresholds: ThresholdSection = ThresholdSection()
    sample_period_ms: int = Field(2000, gt=0)
    staleness_timeout_ms: int = Field(5000, gt=0)
    controller_phase_ms: Optional[int] = Field(None, ge=0)
    sensors: dict[Literal["pressure", "flow", "soil_moisture", "air_temp", "air_humidity"],
                  SensorSection] = {}
    calibration: dict[str, CurveSection] = {}
    faults: list[FaultSection] = []

    @model_validator(mode="after")
    def _consistency(self):
        if self.sample_period_ms % self.tick_ms:
            raise ValueError("sample_period_ms must be a multiple of tick_ms")
        if self.controller_phase_ms is not None and self.controller_phase_ms % self.tick_ms:
            raise ValueError("controller_phase_ms must be a multiple of tick_ms")
        for i, f in enumerate(self.faults):
            end = f.at_s + (f.ramp_s or 0.0)
            if end > self.duration_s:
                raise ValueError(f"faults[{i}] ends at {end} s, beyond duration_s={self.duration_s}")
        for key in self.calibration:
            parse_sensor_key(key)
        return self


def parse_sensor_key(key: str) -> int:
    """Accept ``"0x05"``, ``"5"`` or a sensor name such as ``"p_head"``."""
    names = {v: k for k, v in netlink.SENSOR_NAMES.items()}
    if key in names:
        return names[key]
    try:
        sid = int(key, 0)
    except ValueError:
        raise ValueError(f"unknown sensor key {key!r}") from None
    if sid not in SENSOR_QUANTITY:
        raise ValueError(f"unknown sensor id {key!r}")
    return sid


@dataclass(frozen=True)
class ScheduledFault:
    tick: int
    fault: FaultKind
    announce: bool = True


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_s: float
    tick_ms: int
    seed: int
    plant: PlantConfig
    initial: PlantState
    link: LinkModel
    thresholds: Thresholds
    specs: dict
    curves: dict
    faults: tuple
    sample_period_ms: int = 2000
    staleness_timeout_ms: int = 5000
    controller_phase_ms: Optional[int] = None

    @property
    def dt(self) -> float:
        return self.tick_ms / 1000.0

    @property
    def n_ticks(self) -> int:
        return round(self.duration_s * 1000 / self.tick_ms)

    @property
    def period_ticks(self) -> int:
        return self.sample_period_ms // self.tick_ms

    @property
    def phase_ticks(self) -> int:
        # Default: evaluate on the tick fresh frames land.
        if self.controller_phase_ms is None:
            return self.link.latency_ticks % self.period_ticks
        return (self.controller_phase_ms // self.tick_ms) % self.period_ticks

    @property
    def staleness_timeout_ticks(self) -> int:
        return self.staleness_timeout_ms // self.tick_ms

    def with_seed(self, seed: int) -> "Scenario":
        from dataclasses import replace
        return replace(self, seed=seed)


def _make_fault(kind: str, level: Optional[float]) -> FaultKind:
    return {
        "filter_clog": lambda: FilterClog(level),
        "emitter_clog": lambda: EmitterClog(level),
        "supply_loss": SupplyLoss,
        "supply_restore": SupplyRestore,
    }[kind]()


def _expand_faults(faults: list[FaultSection], tick_ms: int) -> tuple:
    out = []
    for f in faults:
        t0 = round(f.at_s * 1000 / tick_ms)
        if f.ramp_s is None:
            out.append(ScheduledFault(t0, _make_fault(f.kind, f.level)))
            continue
        n = max(round(f.ramp_s * 1000 / tick_ms), 1)
        for i in range(n + 1):
            level = f.start_level + (f.level - f.start_level) * i / n
            out.append(ScheduledFault(t0 + i, _make_fault(f.kind, level), announce=i in (0, n)))
    # Stable sort keeps file order for same-tick faults.
    return tuple(sorted(out, key=lambda s: s.tick))


def build(raw: ScenarioFile) -> Scenario:
    sensors = {**DEFAULT_SENSORS, **raw.sensors}
    specs = {}
    for sid, quantity in SENSOR_QUANTITY.items():
        s = sensors[quantity.value]
        specs[sid] = TransducerSpec(sid, quantity, s.span_min, s.span_max, s.noise_sigma_counts)
    curves = {sid: ideal_curve(spec) for sid, spec in specs.items()}
    for key, c in raw.calibration.items():
        curves[parse_sensor_key(key)] = CalibrationCurve(c.intercept, c.slope, c.unit_label)
    return Scenario(
        name=raw.name,
        duration_s=raw.duration_s,
        tick_ms=raw.tick_ms,
        seed=raw.seed,
        plant=PlantConfig(**raw.plant.model_dump()),
        initial=PlantState(**raw.initial.model_dump()),
        link=LinkModel(**raw.link.model_dump()),
        thresholds=Thresholds(**raw.thresholds.model_dump()),
        specs=specs,
        curves=curves,
        faults=_expand_faults(raw.faults, raw.tick_ms),
        sample_period_ms=raw.sample_period_ms,
        staleness_timeout_ms=raw.staleness_timeout_ms,
        controller_phase_ms=raw.controller_phase_ms,
    )


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"field {loc}: {e['msg']}")
    return "\n".join(lines)


def parse_scenario(data: Union[dict, str]) -> Scenario:
    """Validate a scenario from a dict or JSON text."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return build(ScenarioFile.model_validate(data))
    except ValidationError as exc:
        raise ScenarioError(_format_errors(exc)) from None


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return parse_scenario(text)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
