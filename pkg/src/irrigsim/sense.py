"""Emulated 10-bit ADC transducers and linear calibration.

The master converts raw counts with a straight line,
``value = intercept + slope * raw``; the stock pressure curve reads in
metres of water column (mca)::

    y = 2.55225 + 0.142357 * raw
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ADC_MAX = 1023
STANDARD_GRAVITY = 9.80665  # kPa per metre of water column

REFERENCE_PRESSURE_CURVE_INTERCEPT = 2.55225
REFERENCE_PRESSURE_CURVE_SLOPE = 0.142357


class CalibrationInputError(ValueError):
    """Raw count outside the converter range."""


class CalibrationFitError(ValueError):
    """Not enough information to fit a line."""


class Quantity(enum.Enum):
    PRESSURE = "pressure"
    FLOW = "flow"
    SOIL_MOISTURE = "soil_moisture"
    AIR_TEMP = "air_temp"
    AIR_HUMIDITY = "air_humidity"


UNITS = {
    Quantity.PRESSURE: "mca",
    Quantity.FLOW: "L/h",
    Quantity.SOIL_MOISTURE: "fraction",
    Quantity.AIR_TEMP: "degC",
    Quantity.AIR_HUMIDITY: "%RH",
}


@dataclass(frozen=True)
class TransducerSpec:
    sensor_id: int
    quantity: Quantity
    span_min: float
    span_max: float
    noise_sigma_counts: float = 0.0
    adc_max: int = ADC_MAX

    def __post_init__(self):
        if not self.span_max > self.span_min:
            raise ValueError(f"sensor {self.sensor_id:#04x}: span_max must exceed span_min")
        if self.noise_sigma_counts < 0:
            raise ValueError(f"sensor {self.sensor_id:#04x}: noise sigma must be >= 0")
        if self.adc_max != ADC_MAX:
            raise ValueError("only 10-bit converters (adc_max=1023) are supported")

    @property
    def unit(self) -> str:
        return UNITS[self.quantity]


@dataclass(frozen=True)
class RawSample:
    sensor_id: int
    raw: int
    tick: int

    def __post_init__(self):
        if not 0 <= self.raw <= ADC_MAX:
            raise CalibrationInputError(f"raw count {self.raw} outside [0, {ADC_MAX}]")


@dataclass(frozen=True)
class CalibrationCurve:
    intercept: float
    slope: float
    unit_label: str = "mca"

    def __post_init__(self):
        if not (math.isfinite(self.slope) and self.slope != 0.0):
            raise CalibrationFitError(f"slope must be finite and nonzero, got {self.slope}")
        if not math.isfinite(self.intercept):
            raise CalibrationFitError(f"intercept must be finite, got {self.intercept}")

    def __call__(self, raw: int) -> float:
        return apply_calibration(self, raw)


REFERENCE_PRESSURE_CURVE = CalibrationCurve(
    REFERENCE_PRESSURE_CURVE_INTERCEPT, REFERENCE_PRESSURE_CURVE_SLOPE, "mca"
)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def transduce(value: float, spec: TransducerSpec, rng: np.random.Generator,
              tick: int = 0) -> RawSample:
    """Quantize a physical value to ADC counts with additive gaussian noise.

    One standard-normal draw is consumed per call, whatever the noise
    level, so the random stream stays aligned across configurations.
    """
    noise = float(rng.standard_normal()) * spec.noise_sigma_counts
    counts = (value - spec.span_min) / (spec.span_max - spec.span_min) * spec.adc_max
    raw = min(max(round_half_up(counts + noise), 0), spec.adc_max)
    return RawSample(spec.sensor_id, raw, tick)


def apply_calibration(curve: CalibrationCurve, raw: int) -> float:
    if not 0 <= raw <= ADC_MAX:
        raise CalibrationInputError(f"raw count {raw} outside [0, {ADC_MAX}]")
    return curve.intercept + curve.slope * raw


def ideal_curve(spec: TransducerSpec) -> CalibrationCurve:
    """The exact inverse of the transducer's span mapping."""
    slope = (spec.span_max - spec.span_min) / spec.adc_max
    return CalibrationCurve(spec.span_min, slope, spec.unit)


def fit_calibration(pairs: Iterable[Sequence[float]], unit_label: str = "mca") -> CalibrationCurve:
    """Ordinary least-squares line through ``(raw, reference)`` pairs.

    Raises:
        CalibrationFitError: fewer than two pairs, or all raw counts equal.
    """
    pairs = [(float(x), float(y)) for x, y in pairs]
    if len(pairs) < 2:
        raise CalibrationFitError(f"need at least 2 calibration pairs, got {len(pairs)}")
    n = len(pairs)
    x_mean = math.fsum(x for x, _ in pairs) / n
    y_mean = math.fsum(y for _, y in pairs) / n
    sxx = math.fsum((x - x_mean) ** 2 for x, _ in pairs)
    if sxx == 0.0:
        raise CalibrationFitError("raw counts have zero variance; slope is undetermined")
    sxy = math.fsum((x - x_mean) * (y - y_mean) for x, y in pairs)
    slope = sxy / sxx
    return CalibrationCurve(y_mean - slope * x_mean, slope, unit_label)


def residual_sum(curve: CalibrationCurve, pairs: Iterable[Sequence[float]]) -> float:
    return math.fsum((y - (curve.intercept + curve.slope * x)) ** 2 for x, y in pairs)


def mca_to_kpa(value: float) -> float:
    return value * STANDARD_GRAVITY


def kpa_to_mca(value: float) -> float:
    return value / STANDARD_GRAVITY


def to_kpa(value: float, unit_label: str) -> float:
    """Express a calibrated pressure in kPa given its curve's unit label."""
    unit = unit_label.strip().lower()
    if unit == "mca":
        return mca_to_kpa(value)
    if unit == "kpa":
        return value
    if unit == "bar":
        return value * 100.0
    raise ValueError(f"unsupported pressure unit {unit_label!r}")
