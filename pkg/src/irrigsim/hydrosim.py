"""Ground-truth hydraulic and soil-water model of a single drip line.

Layout, upstream to downstream::

    shut-off valve -> regulator (p1) -> solenoid -> p2 -> filter -> p3
        -> lateral head (p_head) -> emitters -> lateral end (p_end)

Losses are quadratic in flow, emitters follow ``q = k * p**x`` and are
evaluated at the lateral mean pressure. Soil moisture is a fraction of
field capacity integrated explicitly once per tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from typing import Union

__all__ = [
    "ConfigurationError",
    "FaultInjectionError",
    "PlantConfig",
    "StationPressures",
    "PlantState",
    "FilterClog",
    "EmitterClog",
    "SupplyLoss",
    "SupplyRestore",
    "FaultKind",
    "solve_flow",
    "flow_residual",
    "settle",
    "step",
    "apply_fault",
    "soil_increment",
]


class ConfigurationError(ValueError):
    """Raised for plant parameters that cannot be simulated."""


class FaultInjectionError(ValueError):
    """Raised when a fault carries a level outside its valid range."""


@dataclass(frozen=True)
class PlantConfig:
    supply_pressure_kpa: float = 180.0
    k_filter_clean: float = 2.0e-3  # kPa / (L/h)^2
    k_lateral: float = 2.5e-3  # kPa / (L/h)^2
    emitter_count: int = 10
    k_emitter: float = 0.4  # L/h / kPa^x
    emitter_exponent: float = 0.5
    soil_capacity_l: float = 8.0
    infiltration_efficiency: float = 0.9
    et_rate: float = 1.0e-4  # moisture fraction per second
    # Telemetry-only ambient readings for the air sensors.
    air_temp_c: float = 22.0
    air_humidity_pct: float = 55.0

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ConfigurationError(f"{f.name} must be finite, got {value!r}")
        if self.emitter_count < 1 or int(self.emitter_count) != self.emitter_count:
            raise ConfigurationError("emitter_count must be a positive integer")
        for name in ("supply_pressure_kpa", "k_filter_clean", "k_lateral",
                     "k_emitter", "emitter_exponent", "et_rate"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.soil_capacity_l <= 0:
            raise ConfigurationError("soil_capacity_l must be > 0")
        if not 0.0 <= self.infiltration_efficiency <= 1.0:
            raise ConfigurationError("infiltration_efficiency must lie in [0, 1]")


@dataclass(frozen=True)
class StationPressures:
    """Gauge pressures (kPa) at the five measurement stations."""

    p1_regulator: float = 0.0
    p2_pre_filter: float = 0.0
    p3_post_filter: float = 0.0
    p_head: float = 0.0
    p_end: float = 0.0

    @property
    def filter_dp(self) -> float:
        return self.p2_pre_filter - self.p3_post_filter

    @property
    def lateral_dp(self) -> float:
        return self.p_head - self.p_end


@dataclass(frozen=True)
class PlantState:
    valve_open: bool = False
    shutoff_open: bool = True
    filter_clog: float = 0.0
    emitter_clog: float = 0.0
    soil_moisture: float = 0.5
    flow_lph: float = 0.0
    stations: StationPressures = field(default_factory=StationPressures)
    tick: int = 0


@dataclass(frozen=True)
class FilterClog:
    level: float


@dataclass(frozen=True)
class EmitterClog:
    level: float


@dataclass(frozen=True)
class SupplyLoss:
    pass


@dataclass(frozen=True)
class SupplyRestore:
    pass


FaultKind = Union[FilterClog, EmitterClog, SupplyLoss, SupplyRestore]


def _operating_pressure(q, supply, k_filter, k_lateral):
    # Emitters see the lateral mean pressure: half the lateral loss is charged.
    return supply - k_filter * q * q - 0.5 * k_lateral * q * q


def _emitter_flow(p_op, conductance, exponent):
    if p_op <= 0.0:
        return 0.0
    return conductance * p_op ** exponent


@lru_cache(maxsize=4096)
def _bisect_flow(supply, k_filter, k_lateral, conductance, exponent, xtol_rel):
    q_hi = _emitter_flow(supply, conductance, exponent)
    if q_hi == 0.0:
        return 0.0
    q_lo = 0.0
    # g(q) = q - emitter_flow(p_op(q)) is strictly increasing: g(0) <= 0 <= g(q_hi).
    while q_hi - q_lo > xtol_rel * q_hi:
        mid = 0.5 * (q_lo + q_hi)
        if mid == q_lo or mid == q_hi:
            break
        p_op = _operating_pressure(mid, supply, k_filter, k_lateral)
        if mid - _emitter_flow(p_op, conductance, exponent) < 0.0:
            q_lo = mid
        else:
            q_hi = mid
    return 0.5 * (q_lo + q_hi)


def _effective_filter_k(config: PlantConfig, filter_clog: float) -> float:
    return config.k_filter_clean / (1.0 - filter_clog) ** 2


def _check_state(state: PlantState) -> None:
    if not 0.0 <= state.filter_clog < 1.0:
        raise ConfigurationError(f"filter_clog must lie in [0, 1), got {state.filter_clog}")
    if not 0.0 <= state.emitter_clog <= 1.0:
        raise ConfigurationError(f"emitter_clog must lie in [0, 1], got {state.emitter_clog}")


def solve_flow(config: PlantConfig, state: PlantState,
               xtol_rel: float = 0.0) -> tuple[float, StationPressures]:
    """Solve the line for its steady flow (L/h) and station pressures (kPa).

    The flow is the root of ``q = N (1 - emitter_clog) k q_op**x`` where the
    operating pressure is the supply minus the filter loss and half the
    lateral loss. The residual is monotone in ``q`` so plain bisection on
    ``[0, q_max]`` brackets the unique root.
    """
    config.validate()
    _check_state(state)

    supply = float(config.supply_pressure_kpa)
    p1 = supply if state.shutoff_open else 0.0
    if not (state.shutoff_open and state.valve_open):
        return 0.0, StationPressures(p1_regulator=p1)

    k_filter = _effective_filter_k(config, state.filter_clog)
    conductance = config.emitter_count * (1.0 - state.emitter_clog) * config.k_emitter
    q = _bisect_flow(supply, k_filter, config.k_lateral, conductance,
                     config.emitter_exponent, xtol_rel)

    p3 = supply - k_filter * q * q
    lateral_loss = config.k_lateral * q * q
    stations = StationPressures(
        p1_regulator=p1,
        p2_pre_filter=supply,
        p3_post_filter=p3,
        p_head=p3,
        p_end=max(p3 - lateral_loss, 0.0),
    )
    return q, stations


def flow_residual(config: PlantConfig, state: PlantState, q: float) -> float:
    """Re-substitute ``q`` into the emitter equation; zero at the solution."""
    if not (state.shutoff_open and state.valve_open):
        return q
    k_filter = _effective_filter_k(config, state.filter_clog)
    conductance = config.emitter_count * (1.0 - state.emitter_clog) * config.k_emitter
    p_op = _operating_pressure(q, config.supply_pressure_kpa, k_filter, config.k_lateral)
    return q - _emitter_flow(p_op, conductance, config.emitter_exponent)


def settle(config: PlantConfig, state: PlantState) -> PlantState:
    """Recompute flow and pressures for the current valve and clog settings."""
    q, stations = solve_flow(config, state)
    return replace(state, flow_lph=q, stations=stations)


def soil_increment(config: PlantConfig, flow_lph: float, dt: float) -> float:
    """Unclamped change in soil moisture over ``dt`` seconds."""
    inflow = config.infiltration_efficiency * (flow_lph / 3600.0) / config.soil_capacity_l
    return dt * (inflow - config.et_rate)


def step(config: PlantConfig, state: PlantState, dt: float) -> PlantState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    settled = settle(config, state)
    theta = settled.soil_moisture + soil_increment(config, settled.flow_lph, dt)
    return replace(settled, soil_moisture=min(max(theta, 0.0), 1.0), tick=state.tick + 1)


def apply_fault(state: PlantState, fault: FaultKind) -> PlantState:
    """Return ``state`` with the field touched by ``fault`` changed.

    Flow and pressures are left as they were; call :func:`settle` to see
    the hydraulic effect.
    """
    if isinstance(fault, FilterClog):
        if not (math.isfinite(fault.level) and 0.0 <= fault.level < 1.0):
            raise FaultInjectionError(f"filter clog level must lie in [0, 1), got {fault.level}")
        return replace(state, filter_clog=float(fault.level))
    if isinstance(fault, EmitterClog):
        if not (math.isfinite(fault.level) and 0.0 <= fault.level <= 1.0):
            raise FaultInjectionError(f"emitter clog level must lie in [0, 1], got {fault.level}")
        return replace(state, emitter_clog=float(fault.level))
    if isinstance(fault, SupplyLoss):
        return replace(state, shutoff_open=False)
    if isinstance(fault, SupplyRestore):
        return replace(state, shutoff_open=True)
    raise FaultInjectionError(f"unknown fault {fault!r}")
