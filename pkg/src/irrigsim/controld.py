"""Master decision engine: valve hysteresis, fault detectors, alert latching."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from . import netlink
from .netlink import CommLoss, MasterInbox, Reading
from .sense import CalibrationCurve, apply_calibration, to_kpa


class EvaluationError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class ValveCommand(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


class AlertKind(enum.Enum):
    FILTER_SATURATED = "FilterSaturated"
    DRIPPERS_CLOGGED = "DrippersClogged"
    SUPPLY_FAILURE = "SupplyFailure"
    COMM_LOSS = "CommLoss"


class Channel(enum.Enum):
    DISPLAY = "display"
    BUZZER = "buzzer"
    LED = "led"


ALERT_CHANNELS = {
    AlertKind.FILTER_SATURATED: frozenset({Channel.DISPLAY, Channel.LED}),
    AlertKind.DRIPPERS_CLOGGED: frozenset({Channel.DISPLAY, Channel.BUZZER, Channel.LED}),
    AlertKind.SUPPLY_FAILURE: frozenset({Channel.DISPLAY, Channel.BUZZER, Channel.LED}),
    AlertKind.COMM_LOSS: frozenset({Channel.DISPLAY, Channel.BUZZER}),
}

ALERT_TEXT = {
    AlertKind.FILTER_SATURATED: "Filter saturated: replace filter",
    AlertKind.DRIPPERS_CLOGGED: "Drippers clogged: no lateral pressure drop",
    AlertKind.SUPPLY_FAILURE: "Supply failure: no water entering the system",
    AlertKind.COMM_LOSS: "Communication lost with node {node}",
}

DEBOUNCED = (AlertKind.FILTER_SATURATED, AlertKind.DRIPPERS_CLOGGED, AlertKind.SUPPLY_FAILURE)


@dataclass(frozen=True)
class Thresholds:
    moisture_open: float = 0.50
    moisture_close: float = 0.95
    filter_dp_max: float = 50.0  # kPa
    lateral_dp_epsilon: float = 1.0  # kPa
    p1_min: float = 100.0  # kPa
    debounce_ticks: int = 3

    def __post_init__(self):
        if not 0.0 < self.moisture_open < self.moisture_close <= 1.0:
            raise ValueError("thresholds need 0 < moisture_open < moisture_close <= 1")
        if not self.filter_dp_max > 0:
            raise ValueError("filter_dp_max must be > 0")
        if not self.lateral_dp_epsilon > 0:
            raise ValueError("lateral_dp_epsilon must be > 0")
        if self.debounce_ticks < 1:
            raise ValueError("debounce_ticks must be >= 1")


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    channels: frozenset
    text: str
    tick: int
    node_id: Optional[int] = None

    def __post_init__(self):
        if not self.channels:
            raise ValueError("an alert needs at least one channel")


def make_alert(kind: AlertKind, tick: int, node_id: Optional[int] = None) -> Alert:
    return Alert(kind, ALERT_CHANNELS[kind], ALERT_TEXT[kind].format(node=node_id), tick, node_id)


@dataclass
class ControllerState:
    valve_cmd: ValveCommand = ValveCommand.CLOSED
    counters: dict = field(default_factory=lambda: {k: 0 for k in DEBOUNCED})
    latched: dict = field(default_factory=dict)  # (kind, node_id) -> Alert
    last_eval_tick: Optional[int] = None
    opened_at: Optional[int] = None

    def is_latched(self, kind: AlertKind) -> bool:
        return any(k == kind for k, _ in self.latched)

    def active_kinds(self) -> list[AlertKind]:
        return sorted({k for k, _ in self.latched}, key=lambda k: k.value)

    def clear(self, kind: AlertKind, node_id: Optional[int] = None) -> None:
        self.latched.pop((kind, node_id), None)
        if kind in self.counters:
            self.counters[kind] = 0


def decide_valve(moisture: float, state: ControllerState, th: Thresholds) -> ValveCommand:
    if not math.isfinite(moisture):
        raise EvaluationError(f"soil moisture reading is not finite: {moisture!r}")
    if moisture < th.moisture_open:
        return ValveCommand.OPEN
    if moisture >= th.moisture_close:
        return ValveCommand.CLOSED
    return state.valve_cmd


def detect_filter_saturation(p2: float, p3: float, th: Thresholds) -> bool:
    return (p2 - p3) > th.filter_dp_max


def detect_dripper_clog(p_head: float, p_end: float, valve_cmd: ValveCommand,
                        supply_ok: bool, th: Thresholds) -> bool:
    # Zero lateral drop only means clogging while water is meant to flow.
    return (valve_cmd is ValveCommand.OPEN and supply_ok
            and abs(p_head - p_end) <= th.lateral_dp_epsilon)


def detect_supply_failure(p1: float, valve_cmd: ValveCommand, th: Thresholds) -> bool:
    # p1 sits upstream of the solenoid, so the command does not matter.
    return p1 < th.p1_min


def calibrated_value(sensor_id: int, reading: Reading, curves: Mapping[int, CalibrationCurve]) -> float:
    curve = curves.get(sensor_id)
    if curve is None:
        raise ConfigurationError(f"no calibration curve for sensor {sensor_id:#04x}")
    value = apply_calibration(curve, reading.raw)
    if sensor_id in netlink.PRESSURE_SENSORS:
        return to_kpa(value, curve.unit_label)
    return value


def controller_tick(snapshot: Mapping[int, Reading], curves: Mapping[int, CalibrationCurve],
                    state: ControllerState, th: Thresholds, tick: int,
                    stale_nodes=(),
                    ) -> tuple[ValveCommand, list[Alert]]:
    """Run one master evaluation and return the valve command plus new alerts.

    ``stale_nodes`` lists nodes whose data are too old to use (see
    ``netlink.staleness_check``). Readings from those nodes are ignored,
    the detectors that need them are skipped for this evaluation and a
    ``CommLoss`` alert is latched per node. A detector latches only after
    ``th.debounce_ticks`` consecutive positive evaluations, and each latched
    alert is returned exactly once.
    """
    stale = {c.node_id if isinstance(c, CommLoss) else c for c in stale_nodes}
    for sensor_id in snapshot:
        if sensor_id not in curves:
            raise ConfigurationError(f"no calibration curve for sensor {sensor_id:#04x}")

    values = {
        sid: calibrated_value(sid, r, curves)
        for sid, r in snapshot.items()
        if r.node_id not in stale
    }
    new_alerts: list[Alert] = []

    def latch(kind, node_id=None):
        key = (kind, node_id)
        if key not in state.latched:
            alert = make_alert(kind, tick, node_id)
            state.latched[key] = alert
            new_alerts.append(alert)

    for node_id in sorted(stale):
        latch(AlertKind.COMM_LOSS, node_id)

    def debounce(kind, positive):
        if positive is None:  # inputs missing or stale: no evaluation
            return
        if positive:
            state.counters[kind] = min(state.counters[kind] + 1, th.debounce_ticks)
            if state.counters[kind] >= th.debounce_ticks:
                latch(kind)
        else:
            state.counters[kind] = 0

    held = state.valve_cmd

    supply_positive = None
    if netlink.SENSOR_P1 in values:
        supply_positive = detect_supply_failure(values[netlink.SENSOR_P1], held, th)
    debounce(AlertKind.SUPPLY_FAILURE, supply_positive)
    supply_ok = supply_positive is False and not state.is_latched(AlertKind.SUPPLY_FAILURE)

    filter_positive = None
    if netlink.SENSOR_P2 in values and netlink.SENSOR_P3 in values:
        filter_positive = detect_filter_saturation(
            values[netlink.SENSOR_P2], values[netlink.SENSOR_P3], th)
    debounce(AlertKind.FILTER_SATURATED, filter_positive)

    clog_positive = None
    if netlink.SENSOR_P_HEAD in values and netlink.SENSOR_P_END in values:
        # Readings taken before the valve last opened describe a closed line.
        fresh_since_open = state.opened_at is not None and all(
            snapshot[sid].arrival_tick > state.opened_at
            for sid in (netlink.SENSOR_P_HEAD, netlink.SENSOR_P_END))
        clog_positive = fresh_since_open and detect_dripper_clog(
            values[netlink.SENSOR_P_HEAD], values[netlink.SENSOR_P_END], held, supply_ok, th)
    debounce(AlertKind.DRIPPERS_CLOGGED, clog_positive)

    cmd = held
    if netlink.SENSOR_SOIL in values:
        try:
            cmd = decide_valve(values[netlink.SENSOR_SOIL], state, th)
        except EvaluationError:
            cmd = held
    if cmd is ValveCommand.OPEN and held is not ValveCommand.OPEN:
        state.opened_at = tick
    state.valve_cmd = cmd
    state.last_eval_tick = tick
    return cmd, new_alerts


@dataclass
class AlertPanel:
    """Display, buzzer and LED sinks on the master."""

    display_lines: list = field(default_factory=list)
    buzzer_on: bool = False
    led_on: bool = False

    def dispatch(self, alert: Alert) -> None:
        if Channel.DISPLAY in alert.channels:
            self.display_lines.append(alert.text)
        if Channel.BUZZER in alert.channels:
            self.buzzer_on = True
        if Channel.LED in alert.channels:
            self.led_on = True
