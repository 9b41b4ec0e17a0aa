"""Telemetry streams, synthetic fleets, fault injection and windowing.

The on-disk format is a plain CSV with header
``vehicle_id,timestamp,voltage,current,soc,temperature,mileage``.
Fault labels never live in that file; :func:`write_labels` and
:func:`load_labels` handle a sidecar ``vehicle_id,timestamp,label`` CSV.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple

import numpy as np

CSV_HEADER = ("vehicle_id", "timestamp", "voltage", "current", "soc", "temperature", "mileage")
LABEL_HEADER = ("vehicle_id", "timestamp", "label")
SIGNALS = ("voltage", "current", "soc", "temperature")
FAULT_KINDS = ("stuck_voltage", "offset_drop", "noise_burst")


class SchemaError(ValueError):
    pass


class TelemetryRecord(NamedTuple):
    timestamp: float
    voltage: float
    current: float
    soc: float
    temperature: float
    mileage: float


@dataclass
class TelemetryStream:
    """Column-oriented records of one vehicle, ordered by timestamp."""

    vehicle_id: str
    timestamp: np.ndarray
    voltage: np.ndarray
    current: np.ndarray
    soc: np.ndarray
    temperature: np.ndarray
    mileage: np.ndarray
    label: np.ndarray = None

    def __post_init__(self):
        n = len(self.timestamp)
        for name in ("timestamp",) + SIGNALS + ("mileage",):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"column {name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)
        if self.label is None:
            self.label = np.zeros(n, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int64)

    def __len__(self):
        return len(self.timestamp)

    def signals(self) -> np.ndarray:
        """``(n, 4)`` array of voltage, current, soc, temperature."""
        return np.column_stack([getattr(self, name) for name in SIGNALS])

    def records(self) -> Iterator[TelemetryRecord]:
        for row in zip(self.timestamp, self.voltage, self.current, self.soc, self.temperature, self.mileage):
            yield TelemetryRecord(*map(float, row))

    def copy(self) -> "TelemetryStream":
        return replace(
            self, **{name: getattr(self, name).copy() for name in ("timestamp",) + SIGNALS + ("mileage", "label")}
        )

    def equals(self, other: "TelemetryStream") -> bool:
        return self.vehicle_id == other.vehicle_id and all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("timestamp",) + SIGNALS + ("mileage",)
        )


@dataclass
class WindowedSample:
    values: np.ndarray
    mileage: float
    label: int = 0
    source: str = ""
    start: int = 0

    @property
    def T(self) -> int:
        return self.values.shape[0]


def stack_windows(windows):
    """Turn a list of windows into ``(X, mileage, labels)`` arrays."""
    if not windows:
        raise ValueError("no windows to stack")
    X = np.stack([w.values for w in windows])
    m = np.array([w.mileage for w in windows], dtype=np.float64)
    y = np.array([w.label for w in windows], dtype=np.int64)
    return X, m, y


@dataclass
class FleetConfig:
    n_vehicles: int = 20
    stream_length: int = 2048
    seed: int = 0
    dt: float = 10.0
    v0: float = 140.0
    ocv_slope: float = 0.2
    r0: float = 0.1
    gamma: float = 0.3
    mileage_max: float = 200_000.0
    mileage_start: tuple = (20_000.0, 180_000.0)
    km_per_amp_step: float = 0.004
    capacity_ah: float = 150.0
    current_amplitude: float = 40.0
    drive_period: float = 64.0
    harmonic_ratio: float = 0.5
    harmonic_weight: float = 0.3
    discharge_bias: float = 25.0
    charge_current: float = 60.0
    soc_bounds: tuple = (20.0, 90.0)
    ambient_range: tuple = (15.0, 30.0)
    heat_coef: float = 0.02
    thermal_tau: float = 30.0
    noise_std: tuple = (0.1, 1.0, 0.05, 0.1)

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if any(s < 0 for s in self.noise_std):
            raise ValueError("noise_std entries must be non-negative")
        if self.n_vehicles < 0 or self.stream_length < 1:
            raise ValueError("need n_vehicles >= 0 and stream_length >= 1")


def _vehicle_stream(config: FleetConfig, index: int) -> TelemetryStream:
    rng = np.random.default_rng([config.seed, index])
    n = config.stream_length
    amp = config.current_amplitude * rng.uniform(0.8, 1.2)
    phases = rng.uniform(0, 2 * np.pi, size=2)
    lo, hi = config.soc_bounds
    soc0 = rng.uniform(lo + 10.0, hi)
    mileage0 = rng.uniform(*config.mileage_start)
    ambient = rng.uniform(*config.ambient_range)
    k = np.arange(n)
    drive = config.discharge_bias + amp * (
        np.sin(2 * np.pi * k / config.drive_period + phases[0])
        + config.harmonic_weight * np.sin(2 * np.pi * k / (config.harmonic_ratio * config.drive_period) + phases[1])
    )
    noise = rng.normal(0.0, 1.0, size=(n, 4)) * np.asarray(config.noise_std)

    current = np.empty(n)
    soc = np.empty(n)
    mileage = np.empty(n)
    soc_now, km, charging = soc0, mileage0, False
    ah_to_pct = config.dt / 3600.0 / config.capacity_ah * 100.0
    for t in range(n):
        if charging and soc_now >= hi:
            charging = False
        elif not charging and soc_now <= lo:
            charging = True
        i_t = -config.charge_current if charging else drive[t]
        current[t] = i_t
        soc[t] = soc_now
        mileage[t] = km
        soc_now = float(np.clip(soc_now - i_t * ah_to_pct, 0.0, 100.0))
        if not charging:
            km += config.km_per_amp_step * abs(i_t)

    resistance = config.r0 * (1.0 + config.gamma * mileage / config.mileage_max)
    voltage = config.v0 + config.ocv_slope * soc - current * resistance
    heat = config.heat_coef * current**2 * resistance
    temperature = np.empty(n)
    temp = ambient
    for t in range(n):
        temp += (ambient + heat[t] - temp) / config.thermal_tau
        temperature[t] = temp

    return TelemetryStream(
        vehicle_id=f"V{index:03d}",
        timestamp=k * config.dt,
        voltage=voltage + noise[:, 0],
        current=current + noise[:, 1],
        soc=soc + noise[:, 2],
        temperature=temperature + noise[:, 3],
        mileage=mileage,
    )


def generate_fleet(config: FleetConfig) -> list[TelemetryStream]:
    """Simulate ``config.n_vehicles`` independent streams.

    Terminal voltage follows an affine open-circuit curve in SOC minus an
    ohmic drop whose resistance grows linearly with mileage. Each vehicle
    draws from its own generator seeded by ``(seed, index)``.
    """
    return [_vehicle_stream(config, i) for i in range(config.n_vehicles)]


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    onset: int
    duration: int
    magnitude: float = 0.0

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}; expected one of {FAULT_KINDS}")
        if self.onset < 0 or self.duration < 1:
            raise ValueError("fault needs onset >= 0 and duration >= 1")
        if self.magnitude < 0:
            raise ValueError("fault magnitude must be non-negative")


def inject_fault(stream: TelemetryStream, spec: FaultSpec, rng=None) -> TelemetryStream:
    """Return a copy of ``stream`` with the fault applied and its span labeled 1."""
    if spec.onset + spec.duration > len(stream):
        raise ValueError(
            f"fault span [{spec.onset}, {spec.onset + spec.duration}) exceeds stream length {len(stream)}"
        )
    out = stream.copy()
    span = slice(spec.onset, spec.onset + spec.duration)
    if spec.kind == "stuck_voltage":
        out.voltage[span] = out.voltage[spec.onset]
    elif spec.kind == "offset_drop":
        out.voltage[span] = out.voltage[span] - spec.magnitude
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        out.voltage[span] = out.voltage[span] + rng.normal(0.0, spec.magnitude, size=spec.duration)
    out.label[span] = 1
    return out


def make_windows(stream: TelemetryStream, T: int, stride: int | None = None) -> list[WindowedSample]:
    """Cut fixed-length windows at offsets ``0, stride, 2*stride, ...``.

    A window is labeled 1 when any record inside it is; its mileage is the
    mileage of its last record.
    """
    stride = T if stride is None else stride
    if T < 1 or stride < 1:
        raise ValueError("T and stride must be positive")
    n = len(stream)
    if n < T:
        raise ValueError(f"stream {stream.vehicle_id} has {n} records, shorter than window {T}")
    signals = stream.signals()
    out = []
    for start in range(0, n - T + 1, stride):
        end = start + T
        out.append(
            WindowedSample(
                values=signals[start:end].copy(),
                mileage=float(stream.mileage[end - 1]),
                label=int(stream.label[start:end].any()),
                source=stream.vehicle_id,
                start=start,
            )
        )
    return out


def windows_from_streams(streams, T, stride=None) -> list[WindowedSample]:
    out = []
    for s in streams:
        if len(s) >= T:
            out.extend(make_windows(s, T, stride))
    return out


def _open_text(path_or_file, mode):
    if isinstance(path_or_file, io.IOBase) or hasattr(path_or_file, "read" if mode == "r" else "write"):
        return path_or_file, False
    return open(path_or_file, mode, newline="", encoding="utf-8"), True


def _read_rows(path_or_file, required):
    fh, owned = _open_text(path_or_file, "r")
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError("empty file: missing header")
        header = [h.strip() for h in header]
        for col in required:
            if col not in header:
                raise SchemaError(f"missing column {col!r}")
        idx = [header.index(col) for col in required]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((lineno, row[idx[0]], [float(row[i]) for i in idx[1:]]))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"cannot parse line {lineno}: {exc}") from None
        return rows
    finally:
        if owned:
            fh.close()


def load_csv(path_or_file) -> list[TelemetryStream]:
    """Read telemetry grouped by vehicle (first-appearance order), sorted by timestamp."""
    groups: dict[str, list] = {}
    for lineno, vid, values in _read_rows(path_or_file, CSV_HEADER):
        if not all(np.isfinite(values)):
            raise SchemaError(f"non-finite value on line {lineno}")
        groups.setdefault(vid, []).append(values)
    streams = []
    for vid, rows in groups.items():
        arr = np.array(rows, dtype=np.float64)
        arr = arr[np.argsort(arr[:, 0], kind="stable")]
        if np.any(np.diff(arr[:, 5]) < 0):
            warnings.warn(f"mileage decreases within vehicle {vid}", stacklevel=2)
        streams.append(TelemetryStream(vid, *arr.T))
    return streams


def write_csv(streams, path_or_file) -> None:
    fh, owned = _open_text(path_or_file, "w")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in streams:
            for rec in s.records():
                writer.writerow([s.vehicle_id] + [repr(v) for v in rec])
    finally:
        if owned:
            fh.close()


def write_labels(streams, path_or_file) -> None:
    fh, owned = _open_text(path_or_file, "w")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        for s in streams:
            for ts, lab in zip(s.timestamp, s.label):
                writer.writerow([s.vehicle_id, repr(float(ts)), int(lab)])
    finally:
        if owned:
            fh.close()


def load_labels(path_or_file, streams) -> None:
    """Set ``stream.label`` in place from a sidecar label file; unmatched records stay 0."""
    lookup = {}
    for lineno, vid, (ts, lab) in _read_rows(path_or_file, LABEL_HEADER):
        if lab not in (0.0, 1.0):
            raise SchemaError(f"label must be 0 or 1 on line {lineno}")
        lookup[(vid, ts)] = int(lab)
    for s in streams:
        s.label = np.array([lookup.get((s.vehicle_id, float(ts)), 0) for ts in s.timestamp], dtype=np.int64)
