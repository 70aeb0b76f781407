"""Raw smart-home event logs.

The accepted layout is the CASAS one: ``date time sensor value [activity
begin|end]`` separated by whitespace.  Timestamps are kept as integer
microseconds since 1970-01-01 (naive local time, no zone conversion).
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

from .errors import MalformedLine, OverlappingIntervals, UnmatchedBegin, UnmatchedEnd

log = logging.getLogger(__name__)

US_PER_SECOND = 1_000_000
US_PER_DAY = 86_400 * US_PER_SECOND

_EPOCH_ORDINAL = _dt.date(1970, 1, 1).toordinal()

DEFAULT_VALUE_MAP: Mapping[str, bool] = {
    "ON": True,
    "OPEN": True,
    "OFF": False,
    "CLOSE": False,
    "CLOSED": False,
}


class Marker(str, Enum):
    BEGIN = "begin"
    END = "end"


@dataclass(frozen=True)
class Annotation:
    activity: str
    marker: Marker

    def __post_init__(self) -> None:
        if not self.activity:
            raise ValueError("annotation needs a non-empty activity name")


@dataclass(frozen=True)
class SensorEvent:
    """One sensor reading.

    ``token`` keeps the value spelling from the source so that serialising
    reproduces it; it does not take part in equality.
    """

    timestamp: int
    sensor_id: str
    active: bool
    annotation: Annotation | None = None
    token: str = field(default="", compare=False)

    def to_line(self) -> str:
        token = self.token or ("ON" if self.active else "OFF")
        parts = [format_timestamp(self.timestamp), self.sensor_id, token]
        if self.annotation is not None:
            parts += [self.annotation.activity, self.annotation.marker.value]
        return " ".join(parts)


@dataclass(frozen=True)
class AnnotationInterval:
    activity: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError(f"interval for {self.activity} has start >= end")


@dataclass(frozen=True)
class EventStream:
    events: tuple[SensorEvent, ...]
    source_digest: str
    skipped_count: int = 0

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def to_text(self) -> str:
        return "".join(ev.to_line() + "\n" for ev in self.events)


@lru_cache(maxsize=4096)
def _day_us(date_str: str) -> int:
    d = _dt.date.fromisoformat(date_str)
    return (d.toordinal() - _EPOCH_ORDINAL) * US_PER_DAY


def parse_timestamp(date_str: str, time_str: str) -> int:
    """Convert ``YYYY-MM-DD`` and ``HH:MM:SS[.ffffff]`` to integer microseconds."""
    hh, mm, ss = time_str.split(":")
    if "." in ss:
        whole, frac = ss.split(".")
        if not frac.isdigit() or len(frac) > 6:
            raise ValueError(f"bad fractional seconds {frac!r}")
        frac_us = int(frac.ljust(6, "0"))
    else:
        whole, frac_us = ss, 0
    h, m, s = int(hh), int(mm), int(whole)
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 61):
        raise ValueError(f"time out of range {time_str!r}")
    return _day_us(date_str) + ((h * 60 + m) * 60 + s) * US_PER_SECOND + frac_us


def format_timestamp(ts: int) -> str:
    days, rem = divmod(ts, US_PER_DAY)
    date = _dt.date.fromordinal(days + _EPOCH_ORDINAL)
    secs, us = divmod(rem, US_PER_SECOND)
    h, secs = divmod(secs, 3600)
    m, s = divmod(secs, 60)
    return f"{date.isoformat()} {h:02d}:{m:02d}:{s:02d}.{us:06d}"


def parse_event_line(
    line: str,
    line_no: int | None = None,
    value_map: Mapping[str, bool] = DEFAULT_VALUE_MAP,
) -> SensorEvent:
    fields = line.split()
    if len(fields) not in (4, 6):
        raise MalformedLine(line_no, f"expected 4 or 6 fields, got {len(fields)}", line)
    date_str, time_str, sensor_id, token = fields[:4]
    try:
        ts = parse_timestamp(date_str, time_str)
    except ValueError as exc:
        raise MalformedLine(line_no, f"unparseable timestamp ({exc})", line) from None
    active = value_map.get(token.upper())
    if active is None:
        raise MalformedLine(line_no, f"unrecognized value token {token!r}", line)
    annotation = None
    if len(fields) == 6:
        try:
            marker = Marker(fields[5].lower())
        except ValueError:
            raise MalformedLine(line_no, f"bad annotation marker {fields[5]!r}", line) from None
        annotation = Annotation(fields[4], marker)
    return SensorEvent(ts, sensor_id, active, annotation, token)


def parse_stream(
    source: str | bytes | Iterable[str],
    *,
    on_malformed: str = "fail",
    value_map: Mapping[str, bool] = DEFAULT_VALUE_MAP,
) -> EventStream:
    """Parse every event line of ``source``.

    Blank lines and ``#`` comments are ignored.  ``on_malformed`` is
    ``"fail"`` (raise on the first bad line) or ``"skip"`` (drop it and count
    it in ``skipped_count``).  Events are sorted stably by timestamp.
    """
    if on_malformed not in ("fail", "skip"):
        raise ValueError(f"on_malformed must be 'fail' or 'skip', not {on_malformed!r}")
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        lines: Iterable[str] = source.splitlines(keepends=True)
    else:
        lines = source

    digest = hashlib.sha256()
    events: list[SensorEvent] = []
    skipped = 0
    for line_no, line in enumerate(lines, start=1):
        digest.update(line.encode("utf-8"))
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            events.append(parse_event_line(stripped, line_no, value_map))
        except MalformedLine:
            if on_malformed == "fail":
                raise
            skipped += 1
    if skipped:
        log.warning("skipped %d malformed line(s)", skipped)
    events.sort(key=lambda ev: ev.timestamp)
    return EventStream(tuple(events), digest.hexdigest(), skipped)


def read_stream(path, **kwargs) -> EventStream:
    with open(path, encoding="utf-8") as fh:
        return parse_stream(fh, **kwargs)


def build_annotation_intervals(stream: EventStream | Sequence[SensorEvent]) -> list[AnnotationInterval]:
    """Pair Begin/End markers into intervals.

    Only one activity may be open at a time.  Zero-length intervals are
    dropped with a warning since they cannot contain a sample.
    """
    events = stream.events if isinstance(stream, EventStream) else stream
    intervals: list[AnnotationInterval] = []
    open_name: str | None = None
    open_at = 0
    for ev in events:
        ann = ev.annotation
        if ann is None:
            continue
        if ann.marker is Marker.BEGIN:
            if open_name is not None:
                raise OverlappingIntervals(
                    f"{ann.activity} begins at {format_timestamp(ev.timestamp)} while "
                    f"{open_name} (begun {format_timestamp(open_at)}) is still open"
                )
            open_name, open_at = ann.activity, ev.timestamp
            continue
        if open_name != ann.activity:
            raise UnmatchedEnd(
                f"{ann.activity} ends at {format_timestamp(ev.timestamp)} without a matching begin"
                + (f" ({open_name} is open)" if open_name else "")
            )
        if ev.timestamp > open_at:
            intervals.append(AnnotationInterval(open_name, open_at, ev.timestamp))
        else:
            log.warning("dropping zero-length %s interval at %s", open_name, format_timestamp(open_at))
        open_name = None
    if open_name is not None:
        raise UnmatchedBegin(f"{open_name} begun at {format_timestamp(open_at)} never ends")
    return intervals


def gap_intervals(intervals: Sequence[AnnotationInterval], first: int, last: int) -> list[tuple[int, int]]:
    """Unannotated ``[start, end)`` stretches of ``[first, last]``."""
    gaps = []
    cursor = first
    for iv in intervals:
        if iv.start > cursor:
            gaps.append((cursor, min(iv.start, last)))
        cursor = max(cursor, iv.end)
    if cursor < last:
        gaps.append((cursor, last))
    return gaps
