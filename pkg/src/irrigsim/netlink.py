"""Telemetry framing, slave sampling, the lossy radio link and the master inbox.

Wire format (all fields unsigned, big-endian)::

    0x7E | ver<<4 | node_id | seq | count | count x (sensor_id, hi, lo) | crc8

``hi`` holds the top two bits of a 10-bit raw value (upper six bits zero),
``lo`` the low eight. The CRC is CRC-8 with polynomial 0x07 and zero
initial value, computed over every byte between the start marker and the
checksum itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .hydrosim import PlantConfig, PlantState
from .sense import ADC_MAX, TransducerSpec, kpa_to_mca, transduce

log = logging.getLogger(__name__)

SOF = 0x7E
PROTOCOL_VERSION = 1
MAX_ENTRIES = 16
HEADER_LEN = 4  # SOF, ver/node, seq, count
MIN_FRAME_LEN = HEADER_LEN + 1

SENSOR_P1 = 0x01
SENSOR_P2 = 0x02
SENSOR_P3 = 0x03
SENSOR_FLOW = 0x04
SENSOR_P_HEAD = 0x05
SENSOR_P_END = 0x06
SENSOR_SOIL = 0x07
SENSOR_AIR_TEMP = 0x08
SENSOR_AIR_HUMIDITY = 0x09

MASTER_NODE = 0
MASTER_SENSORS = (SENSOR_P1,)
NODE_SENSORS = {
    1: (SENSOR_P2, SENSOR_P3, SENSOR_FLOW),
    2: (SENSOR_P_HEAD,),
    3: (SENSOR_P_END, SENSOR_SOIL, SENSOR_AIR_TEMP, SENSOR_AIR_HUMIDITY),
}
PRESSURE_SENSORS = (SENSOR_P1, SENSOR_P2, SENSOR_P3, SENSOR_P_HEAD, SENSOR_P_END)

SENSOR_NAMES = {
    SENSOR_P1: "p1_regulator",
    SENSOR_P2: "p2_pre_filter",
    SENSOR_P3: "p3_post_filter",
    SENSOR_FLOW: "flow",
    SENSOR_P_HEAD: "p_head",
    SENSOR_P_END: "p_end",
    SENSOR_SOIL: "soil_moisture",
    SENSOR_AIR_TEMP: "air_temp",
    SENSOR_AIR_HUMIDITY: "air_humidity",
}


def _make_crc_table(poly: int) -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
        table.append(crc)
    return tuple(table)


_CRC8_TABLE = _make_crc_table(0x07)


def crc8(data: bytes, crc: int = 0x00) -> int:
    """CRC-8, polynomial x^8 + x^2 + x + 1, no reflection, no final xor."""
    for byte in data:
        crc = _CRC8_TABLE[crc ^ byte]
    return crc


class FrameEncodeError(ValueError):
    pass


class DecodeError(ValueError):
    """Base class for frame decoding failures."""

    name = "DecodeError"

    def __str__(self):
        detail = super().__str__()
        return f"{self.name}: {detail}" if detail else self.name


class BadSof(DecodeError):
    name = "BadSof"


class Truncated(DecodeError):
    name = "Truncated"


class BadChecksum(DecodeError):
    name = "BadChecksum"


class BadValueRange(DecodeError):
    name = "BadValueRange"


@dataclass(frozen=True)
class Frame:
    node_id: int
    seq: int
    entries: tuple[tuple[int, int], ...] = ()
    version: int = PROTOCOL_VERSION

    def validate(self) -> None:
        if self.version != PROTOCOL_VERSION:
            raise FrameEncodeError(f"unsupported protocol version {self.version}")
        if not 0 <= self.node_id <= 0x0F:
            raise FrameEncodeError(f"node_id {self.node_id} does not fit in 4 bits")
        if not 0 <= self.seq <= 0xFF:
            raise FrameEncodeError(f"seq {self.seq} does not fit in 8 bits")
        if len(self.entries) > MAX_ENTRIES:
            raise FrameEncodeError(f"{len(self.entries)} entries exceeds {MAX_ENTRIES}")
        seen = set()
        for sensor_id, raw in self.entries:
            if not 0 <= sensor_id <= 0xFF:
                raise FrameEncodeError(f"sensor_id {sensor_id} does not fit in 8 bits")
            if not 0 <= raw <= ADC_MAX:
                raise FrameEncodeError(f"raw value {raw} outside [0, {ADC_MAX}]")
            if sensor_id in seen:
                raise FrameEncodeError(f"duplicate sensor_id {sensor_id:#04x}")
            seen.add(sensor_id)

    def readings(self) -> dict[int, int]:
        return dict(self.entries)


def encode_frame(frame: Frame) -> bytes:
    frame.validate()
    body = bytearray([(frame.version << 4) | frame.node_id, frame.seq, len(frame.entries)])
    for sensor_id, raw in frame.entries:
        body += bytes([sensor_id, raw >> 8, raw & 0xFF])
    return bytes([SOF]) + bytes(body) + bytes([crc8(body)])


def frame_length(count: int) -> int:
    return HEADER_LEN + 3 * count + 1


def _decode_datagram(data: bytes) -> Frame:
    if len(data) == 0:
        raise Truncated("empty input")
    if data[0] != SOF:
        raise BadSof(f"expected 0x7E, got {data[0]:#04x}")
    if len(data) < MIN_FRAME_LEN:
        raise Truncated(f"{len(data)} bytes is shorter than the {MIN_FRAME_LEN}-byte minimum")
    # Integrity first: a damaged count byte must read as a checksum failure,
    # not as a length error.
    if crc8(data[1:-1]) != data[-1]:
        raise BadChecksum(f"computed {crc8(data[1:-1]):#04x}, trailer {data[-1]:#04x}")
    count = data[3]
    expected = frame_length(count)
    if len(data) < expected:
        raise Truncated(f"count {count} needs {expected} bytes, got {len(data)}")
    if len(data) > expected or count > MAX_ENTRIES:
        raise BadValueRange(f"count {count} inconsistent with {len(data)}-byte frame")

    version, node_id = data[1] >> 4, data[1] & 0x0F
    if version != PROTOCOL_VERSION:
        raise BadValueRange(f"unsupported protocol version {version}")
    entries = []
    seen = set()
    for i in range(count):
        sensor_id, hi, lo = data[HEADER_LEN + 3 * i: HEADER_LEN + 3 * i + 3]
        if hi & 0xFC:
            raise BadValueRange(f"sensor {sensor_id:#04x}: value high byte {hi:#04x} exceeds 10 bits")
        if sensor_id in seen:
            raise BadValueRange(f"duplicate sensor_id {sensor_id:#04x}")
        seen.add(sensor_id)
        entries.append((sensor_id, (hi << 8) | lo))
    return Frame(node_id=node_id, seq=data[2], entries=tuple(entries), version=version)


def decode_frame(data: bytes, resync: bool = False) -> Frame:
    """Decode one frame delivered as a single datagram.

    With ``resync`` set, a failed attempt is retried from each later 0x7E
    in turn; the first error is re-raised when no candidate decodes.

    Raises:
        BadSof, Truncated, BadChecksum, BadValueRange
    """
    data = bytes(data)
    try:
        return _decode_datagram(data)
    except DecodeError as first:
        if not resync:
            raise
        start = data.find(SOF, 1)
        while start != -1:
            try:
                frame = _decode_datagram(data[start:])
            except DecodeError:
                start = data.find(SOF, start + 1)
                continue
            log.debug("resynchronized at offset %d after %s", start, first.name)
            return frame
        raise first


def ground_truth(sensor_id: int, state: PlantState, config: PlantConfig) -> float:
    """Physical value a sensor sees, in its transducer's units."""
    st = state.stations
    pressures = {
        SENSOR_P1: st.p1_regulator,
        SENSOR_P2: st.p2_pre_filter,
        SENSOR_P3: st.p3_post_filter,
        SENSOR_P_HEAD: st.p_head,
        SENSOR_P_END: st.p_end,
    }
    if sensor_id in pressures:
        return kpa_to_mca(pressures[sensor_id])
    if sensor_id == SENSOR_FLOW:
        return state.flow_lph
    if sensor_id == SENSOR_SOIL:
        return state.soil_moisture
    if sensor_id == SENSOR_AIR_TEMP:
        return config.air_temp_c
    if sensor_id == SENSOR_AIR_HUMIDITY:
        return config.air_humidity_pct
    raise KeyError(f"unknown sensor id {sensor_id:#04x}")


@dataclass
class NodeState:
    node_id: int
    sensor_ids: tuple[int, ...]
    sample_period_ticks: int = 20
    seq: int = 0
    next_sample_tick: int = 0
    sample_period_ms: int = 2000


def make_node(node_id: int, tick_ms: int = 100, sample_period_ms: int = 2000,
              sensor_ids: Optional[Sequence[int]] = None) -> NodeState:
    if sample_period_ms % tick_ms:
        raise ValueError(f"sample period {sample_period_ms} ms is not a multiple of {tick_ms} ms ticks")
    ids = tuple(NODE_SENSORS[node_id] if sensor_ids is None else sensor_ids)
    return NodeState(node_id, ids, sample_period_ms // tick_ms, sample_period_ms=sample_period_ms)


def slave_tick(node: NodeState, plant: PlantState, config: PlantConfig,
               specs: Mapping[int, TransducerSpec], tick: int,
               rng: np.random.Generator) -> Optional[Frame]:
    """Sample every attached sensor once per period and package a frame.

    Advances ``node`` in place. Noise draws happen in ``sensor_ids`` order.
    """
    if tick < node.next_sample_tick:
        return None
    entries = tuple(
        (sid, transduce(ground_truth(sid, plant, config), specs[sid], rng, tick).raw)
        for sid in node.sensor_ids
    )
    frame = Frame(node_id=node.node_id, seq=node.seq, entries=entries)
    node.seq = (node.seq + 1) % 256
    node.next_sample_tick += node.sample_period_ticks
    # A late caller must not burst frames to catch up.
    if node.next_sample_tick <= tick:
        periods = (tick - node.next_sample_tick) // node.sample_period_ticks + 1
        node.next_sample_tick += periods * node.sample_period_ticks
    return frame


@dataclass(frozen=True)
class LinkModel:
    drop_probability: float = 0.0
    corruption_probability: float = 0.0
    latency_ticks: int = 0

    def __post_init__(self):
        for name in ("drop_probability", "corruption_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.latency_ticks < 0:
            raise ValueError("latency_ticks must be >= 0")


@dataclass(frozen=True)
class Delivery:
    tick: int
    data: bytes
    corrupted: bool = False


def link_transmit(link: LinkModel, data: bytes, tick: int,
                  rng: np.random.Generator) -> Optional[Delivery]:
    """Push one datagram through the link.

    Exactly four uniform draws are consumed per call (drop, corrupt,
    position, mask) so the stream does not depend on outcomes. Corruption
    XORs a nonzero mask into one byte after the start marker.
    """
    u_drop, u_corrupt, u_pos, u_mask = rng.random(4)
    if u_drop < link.drop_probability:
        return None
    data = bytes(data)
    corrupted = False
    if u_corrupt < link.corruption_probability and len(data) > 1:
        pos = 1 + min(int(u_pos * (len(data) - 1)), len(data) - 2)
        mask = 1 + min(int(u_mask * 255), 254)
        buf = bytearray(data)
        buf[pos] ^= mask
        data = bytes(buf)
        corrupted = True
    return Delivery(tick + link.latency_ticks, data, corrupted)


@dataclass(frozen=True)
class Duplicate:
    node_id: int
    seq: int


@dataclass(frozen=True)
class LostFrames:
    node_id: int
    count: int


@dataclass(frozen=True)
class CommLoss:
    node_id: int


@dataclass(frozen=True)
class Reading:
    raw: int
    arrival_tick: int
    seq: int
    node_id: int


@dataclass
class MasterInbox:
    nodes: tuple[int, ...] = tuple(NODE_SENSORS)
    staleness_timeout_ticks: int = 50
    readings: dict[int, Reading] = field(default_factory=dict)
    last_seq: dict[int, int] = field(default_factory=dict)
    last_arrival: dict[int, int] = field(default_factory=dict)
    start_tick: int = 0

    def record_local(self, sensor_id: int, raw: int, tick: int) -> None:
        self.readings[sensor_id] = Reading(raw, tick, 0, MASTER_NODE)

    def node_age(self, node_id: int, tick: int) -> int:
        return tick - self.last_arrival.get(node_id, self.start_tick)

    def snapshot(self) -> dict[int, Reading]:
        return dict(self.readings)


def master_ingest(inbox: MasterInbox, frame: Frame, tick: int) -> list:
    """Store a decoded frame's readings; returns sequence anomalies.

    A repeated sequence number is dropped and reported as ``Duplicate``;
    a jump reports the number of frames skipped as ``LostFrames``.
    """
    anomalies = []
    last = inbox.last_seq.get(frame.node_id)
    if last is not None:
        if frame.seq == last:
            return [Duplicate(frame.node_id, frame.seq)]
        gap = (frame.seq - last - 1) % 256
        if gap:
            anomalies.append(LostFrames(frame.node_id, gap))
    inbox.last_seq[frame.node_id] = frame.seq
    inbox.last_arrival[frame.node_id] = tick
    for sensor_id, raw in frame.entries:
        inbox.readings[sensor_id] = Reading(raw, tick, frame.seq, frame.node_id)
    return anomalies


def staleness_check(inbox: MasterInbox, tick: int) -> list[CommLoss]:
    return [CommLoss(n) for n in inbox.nodes
            if inbox.node_age(n, tick) > inbox.staleness_timeout_ticks]
