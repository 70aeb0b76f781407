"""Fixed-interval resampling of event streams into labelled observation codes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import (
    DataError,
    EmptySeries,
    EmptyStream,
    NonPositiveInterval,
    OverlappingIntervals,
    TooFewEvents,
    TooManySensors,
)
from .events import (
    US_PER_DAY,
    US_PER_SECOND,
    AnnotationInterval,
    EventStream,
    format_timestamp,
    parse_timestamp,
)

NULL = -1
NULL_TOKEN = "∅"
MAX_SENSORS = 64
LATCH = "latch"
PULSE = "pulse"


@dataclass(frozen=True)
class SensorMap:
    """Sensor id to bit position; indices are contiguous from 0."""

    bit_index: Mapping[str, int]

    def __post_init__(self) -> None:
        if sorted(self.bit_index.values()) != list(range(len(self.bit_index))):
            raise ValueError("sensor bit indices must be a permutation of 0..M-1")
        if len(self.bit_index) > MAX_SENSORS:
            raise TooManySensors(f"{len(self.bit_index)} sensors exceed the {MAX_SENSORS}-bit code width")

    @property
    def n_sensors(self) -> int:
        return len(self.bit_index)

    @classmethod
    def from_ids(cls, sensor_ids: Iterable[str]) -> "SensorMap":
        ids = list(dict.fromkeys(sensor_ids))
        return cls({sid: i for i, sid in enumerate(ids)})

    def sensors(self) -> list[str]:
        return sorted(self.bit_index, key=self.bit_index.__getitem__)


class LabeledSample(NamedTuple):
    timestamp: int
    code: int
    label: str | None


def code_hex(code: int, n_sensors: int) -> str:
    width = max(1, math.ceil(n_sensors / 4))
    return f"0x{int(code):0{width}X}"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SampleSeries:
    """Resampled sequence of observation codes with optional activity labels.

    ``labels`` holds indices into ``names``; ``NULL`` (-1) marks an
    annotation gap.  Timestamps are integer microseconds.  A freshly
    resampled series has timestamps ``t0 + k*delta``; after gap removal the
    remaining timestamps are no longer evenly spaced.
    """

    timestamps: np.ndarray
    codes: np.ndarray
    labels: np.ndarray
    names: tuple[str, ...]
    delta_t: float
    n_sensors: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "timestamps", _frozen(np.asarray(self.timestamps, dtype=np.int64)))
        object.__setattr__(self, "codes", _frozen(np.asarray(self.codes, dtype=np.uint64)))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int32)))
        object.__setattr__(self, "names", tuple(self.names))
        n = len(self.timestamps)
        if len(self.codes) != n or len(self.labels) != n:
            raise ValueError("timestamps, codes and labels must have equal length")
        if n and (self.labels.min() < NULL or self.labels.max() >= len(self.names)):
            raise ValueError("label index out of range")
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> LabeledSample:
        lab = int(self.labels[i])
        return LabeledSample(int(self.timestamps[i]), int(self.codes[i]), None if lab == NULL else self.names[lab])

    @property
    def alphabet(self) -> np.ndarray:
        return np.unique(self.codes)

    @property
    def delta_us(self) -> int:
        return int(round(self.delta_t * US_PER_SECOND))

    def label_list(self) -> list[str | None]:
        names = self.names
        return [None if i == NULL else names[i] for i in self.labels.tolist()]

    def null_mask(self) -> np.ndarray:
        return self.labels == NULL

    def with_labels(self, labels: Sequence[str | None]) -> "SampleSeries":
        """Copy with new labels given as names (``None`` for a gap)."""
        names = sorted({lab for lab in labels if lab is not None})
        index = {name: i for i, name in enumerate(names)}
        ids = np.fromiter((NULL if lab is None else index[lab] for lab in labels), dtype=np.int32, count=len(labels))
        return self.replace(labels=ids, names=tuple(names))

    def replace(self, **changes) -> "SampleSeries":
        fields = dict(
            timestamps=self.timestamps,
            codes=self.codes,
            labels=self.labels,
            names=self.names,
            delta_t=self.delta_t,
            n_sensors=self.n_sensors,
        )
        fields.update(changes)
        return SampleSeries(**fields)

    def take(self, index) -> "SampleSeries":
        return self.replace(timestamps=self.timestamps[index], codes=self.codes[index], labels=self.labels[index])

    def same_as(self, other: "SampleSeries") -> bool:
        """Equality of samples and label names (ignores the name table layout)."""
        return (
            len(self) == len(other)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.codes, other.codes)
            and self.label_list() == other.label_list()
            and self.delta_t == other.delta_t
            and self.n_sensors == other.n_sensors
        )

    def segment_starts(self) -> np.ndarray:
        """Boolean mask of samples that open a new calendar day (and the first sample)."""
        if len(self) == 0:
            return np.zeros(0, dtype=bool)
        day = self.timestamps // US_PER_DAY
        starts = np.empty(len(day), dtype=bool)
        starts[0] = True
        starts[1:] = day[1:] != day[:-1]
        return starts


def build_sensor_map(stream: EventStream) -> SensorMap:
    """Assign bits to sensors in order of first appearance."""
    if len(stream) == 0:
        raise EmptyStream("cannot build a sensor map from an empty stream")
    return SensorMap.from_ids(ev.sensor_id for ev in stream.events)


def resample(stream: EventStream, sensor_map: SensorMap, delta_t: float, mode: str = LATCH) -> SampleSeries:
    """Sample sensor states every ``delta_t`` seconds from the first event.

    In ``latch`` mode each sensor holds its last reported value and an event
    stamped exactly on a tick is applied before that tick is sampled.  In
    ``pulse`` mode a sample's bit is set when the sensor reported *active* in
    ``(tick - delta_t, tick]``.  The series stops at the last tick not after
    the last event, giving ``floor((t_last - t_first) / delta_t) + 1`` samples.
    All labels are Null.
    """
    if not delta_t > 0:
        raise NonPositiveInterval(f"delta_t must be positive, got {delta_t}")
    delta_us = int(round(delta_t * US_PER_SECOND))
    if delta_us <= 0:
        raise NonPositiveInterval(f"delta_t {delta_t} rounds to zero microseconds")
    if len(stream) == 0:
        raise EmptyStream("cannot resample an empty stream")
    events = stream.events
    times = np.fromiter((ev.timestamp for ev in events), dtype=np.int64, count=len(events))
    try:
        bits = np.fromiter((sensor_map.bit_index[ev.sensor_id] for ev in events), dtype=np.int64, count=len(events))
    except KeyError as exc:
        raise DataError(f"sensor {exc.args[0]} missing from the sensor map") from None
    active = np.fromiter((ev.active for ev in events), dtype=np.uint8, count=len(events))

    t0 = int(times[0])
    n = (int(times[-1]) - t0) // delta_us + 1
    ticks = t0 + delta_us * np.arange(n, dtype=np.int64)
    if mode == LATCH:
        states = kernels.latch_codes(bits, active)
        idx = np.searchsorted(times, ticks, side="right") - 1
        codes = states[idx]
    elif mode == PULSE:
        # sample k covers (tick_k - delta, tick_k]; sample 0 covers only t0
        k = np.maximum(0, -(-(times - t0) // delta_us))
        on = active.astype(bool) & (k < n)
        codes = np.zeros(n, dtype=np.uint64)
        np.bitwise_or.at(codes, k[on], np.left_shift(np.uint64(1), bits[on].astype(np.uint64)))
    else:
        raise ValueError(f"unknown resampling mode {mode!r}")
    labels = np.full(n, NULL, dtype=np.int32)
    return SampleSeries(ticks, codes, labels, (), float(delta_t), sensor_map.n_sensors)


def _check_disjoint(intervals: Sequence[AnnotationInterval]) -> list[AnnotationInterval]:
    ordered = sorted(intervals, key=lambda iv: (iv.start, iv.end))
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise OverlappingIntervals(
                f"{a.activity} [{format_timestamp(a.start)}, {format_timestamp(a.end)}) overlaps "
                f"{b.activity} starting {format_timestamp(b.start)}"
            )
    return ordered


def assign_labels(series: SampleSeries, intervals: Sequence[AnnotationInterval]) -> SampleSeries:
    """Label each sample with the interval containing it (``[start, end)``), else Null."""
    ordered = _check_disjoint(intervals)
    names = tuple(sorted({iv.activity for iv in ordered}))
    index = {name: i for i, name in enumerate(names)}
    labels = np.full(len(series), NULL, dtype=np.int32)
    ts = series.timestamps
    for iv in ordered:
        lo = np.searchsorted(ts, iv.start, side="left")
        hi = np.searchsorted(ts, iv.end, side="left")
        labels[lo:hi] = index[iv.activity]
    return series.replace(labels=labels, names=names)


def recommend_delta_t(stream: EventStream) -> tuple[float, float]:
    """Sampling interval range: 50% to 65% of the mean inter-event gap, in seconds."""
    n = len(stream)
    if n < 2:
        raise TooFewEvents(f"need at least 2 events to estimate spacing, got {n}")
    span_us = stream.events[-1].timestamp - stream.events[0].timestamp
    mean_s = Fraction(span_us, (n - 1) * US_PER_SECOND)
    return float(mean_s * Fraction(50, 100)), float(mean_s * Fraction(65, 100))


def chronological_split(series: SampleSeries, train_fraction: float) -> tuple[SampleSeries, SampleSeries]:
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(series) == 0:
        raise EmptySeries("cannot split an empty series")
    # repr() keeps 0.6 as 6/10 rather than its binary approximation
    cut = math.floor(len(series) * Fraction(repr(float(train_fraction))))
    return series.take(slice(0, cut)), series.take(slice(cut, None))


def write_csv(series: SampleSeries, path_or_file) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", encoding="utf-8", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "code_hex", "label"])
        names = series.names
        m = series.n_sensors
        for ts, code, lab in zip(series.timestamps.tolist(), series.codes.tolist(), series.labels.tolist()):
            writer.writerow([format_timestamp(ts), code_hex(code, m), NULL_TOKEN if lab == NULL else names[lab]])
    finally:
        if own:
            fh.close()


def read_csv(path_or_file, delta_t: float | None = None) -> SampleSeries:
    """Load a series written by :func:`write_csv`.

    ``delta_t`` defaults to the spacing of the first two rows; the sensor
    count is taken from the hex width (4 bits per digit).
    """
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, encoding="utf-8", newline="") if own else path_or_file
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["timestamp", "code_hex", "label"]:
            raise DataError(f"bad sample CSV header {header!r}")
        ts, codes, labels = [], [], []
        width = 1
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"sample CSV row {row_no}: expected 3 columns")
            try:
                date_str, time_str = row[0].split(" ")
                ts.append(parse_timestamp(date_str, time_str))
                codes.append(int(row[1], 16))
            except ValueError as exc:
                raise DataError(f"sample CSV row {row_no}: {exc}") from None
            width = max(width, len(row[1]) - 2)
            labels.append(None if row[2] == NULL_TOKEN else row[2])
    finally:
        if own:
            fh.close()
    if delta_t is None:
        if len(ts) < 2:
            raise DataError("delta_t cannot be inferred from fewer than 2 samples")
        delta_t = (ts[1] - ts[0]) / US_PER_SECOND
    base = SampleSeries(np.array(ts, dtype=np.int64), np.array(codes, dtype=np.uint64),
                        np.full(len(ts), NULL, dtype=np.int32), (), float(delta_t), 4 * width)
    return base.with_labels(labels)
