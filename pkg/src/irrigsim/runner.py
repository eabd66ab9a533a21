"""Deterministic closed-loop runner.

Order of work inside one tick ``t``:

1. apply faults scheduled for ``t`` and re-settle the line;
2. master samples p1 locally (one noise draw);
3. each slave, in node-id order, samples if due (noise draws in sensor order);
4. each new frame, in node-id order, goes through the link (four draws);
5. datagrams due at ``t`` are decoded and ingested in send order;
6. on evaluation ticks the controller runs and one telemetry row is kept;
7. the valve command is applied and the plant steps by ``dt``.

All randomness comes from one ``numpy`` generator seeded with the scenario
seed, so outputs are a pure function of the scenario.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import controld, hydrosim, netlink
from .controld import AlertKind, ControllerState, ValveCommand
from .netlink import DecodeError, Duplicate, LostFrames
from .scenario import Scenario
from .sense import transduce

log = logging.getLogger(__name__)

TELEMETRY_COLUMNS = (
    "tick", "t_s", "p1_kpa", "p2_kpa", "p3_kpa", "p_head_kpa", "p_end_kpa",
    "flow_lph", "soil_moisture", "soil_moisture_meas", "valve_cmd", "alerts",
)


@dataclass(frozen=True)
class TelemetryRecord:
    tick: int
    t_s: float
    stations: hydrosim.StationPressures
    flow_lph: float
    soil_moisture: float
    soil_moisture_meas: Optional[float]
    valve_cmd: ValveCommand
    alerts: tuple

    def row(self) -> list[str]:
        st = self.stations
        meas = "" if self.soil_moisture_meas is None else f"{self.soil_moisture_meas:.6f}"
        return [
            str(self.tick), f"{self.t_s:.6f}",
            f"{st.p1_regulator:.6f}", f"{st.p2_pre_filter:.6f}", f"{st.p3_post_filter:.6f}",
            f"{st.p_head:.6f}", f"{st.p_end:.6f}",
            f"{self.flow_lph:.6f}", f"{self.soil_moisture:.6f}", meas,
            self.valve_cmd.value, "|".join(k.value for k in self.alerts),
        ]


@dataclass
class RunResult:
    scenario: Scenario
    telemetry: list = field(default_factory=list)
    events: list = field(default_factory=list)
    final_state: Optional[hydrosim.PlantState] = None
    controller: Optional[ControllerState] = None
    frames_sent: Counter = field(default_factory=Counter)
    frames_delivered: Counter = field(default_factory=Counter)
    trace: list = field(default_factory=list)

    def alert_counts(self) -> dict[str, int]:
        counts = {k.value: 0 for k in AlertKind}
        for e in self.events:
            if e["event"] == "alert":
                counts[e["kind"]] += 1
        return counts

    def alert_ticks(self, kind: AlertKind) -> list[int]:
        return [e["tick"] for e in self.events if e["event"] == "alert" and e["kind"] == kind.value]

    def summary(self) -> dict:
        s = self.final_state
        return {
            "scenario": self.scenario.name,
            "seed": self.scenario.seed,
            "ticks": self.scenario.n_ticks,
            "evaluations": len(self.telemetry),
            "alerts": self.alert_counts(),
            "final_state": {
                "tick": s.tick,
                "valve_open": s.valve_open,
                "shutoff_open": s.shutoff_open,
                "filter_clog": round(s.filter_clog, 6),
                "emitter_clog": round(s.emitter_clog, 6),
                "soil_moisture": round(s.soil_moisture, 6),
                "flow_lph": round(s.flow_lph, 6),
            },
        }

    def telemetry_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TELEMETRY_COLUMNS)
        for rec in self.telemetry:
            writer.writerow(rec.row())
        return buf.getvalue()

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n"
                       for e in self.events)


def _fault_event(tick, t_s, fault) -> dict:
    event = {"event": "fault", "tick": tick, "t_s": round(t_s, 6),
             "fault": type(fault).__name__}
    if hasattr(fault, "level"):
        event["level"] = round(fault.level, 6)
    return event


def simulate(scenario: Scenario, trace: bool = False) -> RunResult:
    """Run the closed loop; with ``trace`` every tick's settled plant state is kept."""
    rng = np.random.default_rng(scenario.seed)
    config = scenario.plant
    dt = scenario.dt
    period = scenario.period_ticks
    phase = scenario.phase_ticks

    state = hydrosim.settle(config, replace(scenario.initial, tick=0))
    nodes = [netlink.make_node(n, scenario.tick_ms, scenario.sample_period_ms)
             for n in sorted(netlink.NODE_SENSORS)]
    inbox = netlink.MasterInbox(tuple(n.node_id for n in nodes), scenario.staleness_timeout_ticks)
    ctrl = ControllerState(
        valve_cmd=ValveCommand.OPEN if state.valve_open else ValveCommand.CLOSED,
        opened_at=-1 if state.valve_open else None,
    )
    panel = controld.AlertPanel()
    result = RunResult(scenario)
    pending: list[tuple[int, int, netlink.Delivery]] = []
    faults = list(scenario.faults)
    fault_idx = 0

    for t in range(scenario.n_ticks):
        t_s = t * dt

        applied = False
        while fault_idx < len(faults) and faults[fault_idx].tick <= t:
            sf = faults[fault_idx]
            state = hydrosim.apply_fault(state, sf.fault)
            if sf.announce:
                result.events.append(_fault_event(t, t_s, sf.fault))
            fault_idx += 1
            applied = True
        if applied:
            state = hydrosim.settle(config, state)

        if trace:
            result.trace.append(state)

        for sid in netlink.MASTER_SENSORS:
            value = netlink.ground_truth(sid, state, config)
            inbox.record_local(sid, transduce(value, scenario.specs[sid], rng, t).raw, t)

        frames = []
        for node in nodes:
            frame = netlink.slave_tick(node, state, config, scenario.specs, t, rng)
            if frame is not None:
                frames.append(frame)
        for frame in frames:
            result.frames_sent[frame.node_id] += 1
            delivery = netlink.link_transmit(scenario.link, netlink.encode_frame(frame), t, rng)
            if delivery is not None:
                pending.append((delivery.tick, frame.node_id, delivery))

        due = [p for p in pending if p[0] <= t]
        pending = [p for p in pending if p[0] > t]
        for _, node_id, delivery in due:
            try:
                frame = netlink.decode_frame(delivery.data)
            except DecodeError as exc:
                result.events.append({"event": "decode_error", "tick": t, "t_s": round(t_s, 6),
                                      "node_id": node_id, "error": exc.name})
                continue
            result.frames_delivered[frame.node_id] += 1
            for a in netlink.master_ingest(inbox, frame, t):
                event = {"event": "anomaly", "tick": t, "t_s": round(t_s, 6),
                         "type": type(a).__name__, "node_id": a.node_id}
                if isinstance(a, LostFrames):
                    event["count"] = a.count
                elif isinstance(a, Duplicate):
                    event["seq"] = a.seq
                result.events.append(event)

        if t % period == phase:
            previous = ctrl.valve_cmd
            stale = netlink.staleness_check(inbox, t)
            snapshot = inbox.snapshot()
            cmd, alerts = controld.controller_tick(
                snapshot, scenario.curves, ctrl, scenario.thresholds, t, stale)
            if cmd is not previous:
                result.events.append({"event": "valve", "tick": t, "t_s": round(t_s, 6),
                                      "cmd": cmd.value})
            for alert in alerts:
                panel.dispatch(alert)
                result.events.append({
                    "event": "alert", "tick": t, "t_s": round(t_s, 6),
                    "kind": alert.kind.value, "node_id": alert.node_id,
                    "channels": sorted(c.value for c in alert.channels), "text": alert.text,
                })
                log.info("t=%.1fs alert %s", t_s, alert.text)
            stale_ids = {c.node_id for c in stale}
            soil = snapshot.get(netlink.SENSOR_SOIL)
            meas = None
            if soil is not None and soil.node_id not in stale_ids:
                meas = controld.calibrated_value(netlink.SENSOR_SOIL, soil, scenario.curves)
            result.telemetry.append(TelemetryRecord(
                t, t_s, state.stations, state.flow_lph, state.soil_moisture, meas,
                cmd, tuple(ctrl.active_kinds())))

        state = hydrosim.step(config, replace(state, valve_open=ctrl.valve_cmd is ValveCommand.OPEN), dt)

    result.final_state = state
    result.controller = ctrl
    return result


def run_scenario(scenario: Scenario, out_dir) -> dict:
    """Simulate and write ``telemetry.csv``, ``events.jsonl`` and ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = simulate(scenario)
    (out / "telemetry.csv").write_text(result.telemetry_csv())
    (out / "events.jsonl").write_text(result.events_jsonl())
    summary = result.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
