import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapmark.errors import EmptySeries, EmptyStream, NonPositiveInterval, OverlappingIntervals, TooFewEvents, TooManySensors
from gapmark.events import US_PER_SECOND, AnnotationInterval, EventStream, SensorEvent, build_annotation_intervals, read_stream
from gapmark.sampling import (
    NULL,
    PULSE,
    SensorMap,
    assign_labels,
    build_sensor_map,
    chronological_split,
    code_hex,
    read_csv,
    recommend_delta_t,
    resample,
    write_csv,
)

from _util import T0, series_from

S = US_PER_SECOND


def stream_of(*events):
    return EventStream(tuple(SensorEvent(T0 + int(t * S), sid, on) for t, sid, on in events), "")


def latch_oracle(stream, smap, delta_t):
    """Per-tick scan: for every tick replay all events at or before it."""
    times = [e.timestamp for e in stream.events]
    step = int(round(delta_t * S))
    n = (times[-1] - times[0]) // step + 1
    out = []
    for k in range(n):
        tick = times[0] + k * step
        state = {}
        for ev in stream.events:
            if ev.timestamp <= tick:
                state[ev.sensor_id] = ev.active
        out.append(sum(1 << smap.bit_index[s] for s, on in state.items() if on))
    return out


def test_first_appearance_map():
    smap = build_sensor_map(stream_of((0, "M001", True), (1, "D001", True), (2, "M001", False)))
    assert smap.bit_index == {"M001": 0, "D001": 1}
    assert smap.n_sensors == 2


def test_empty_stream_has_no_map():
    with pytest.raises(EmptyStream):
        build_sensor_map(EventStream((), ""))


def test_too_many_sensors():
    with pytest.raises(TooManySensors):
        SensorMap.from_ids(f"M{i:03d}" for i in range(65))


def test_thirty_four_sensors():
    ids = [f"M{i:03d}" for i in range(1, 32)] + ["D001", "D002", "D003"]
    smap = build_sensor_map(stream_of(*[(i, sid, True) for i, sid in enumerate(ids)]))
    assert smap.n_sensors == 34


def test_latch_persists():
    stream = stream_of((0, "M004", True), (14, "M005", False))
    smap = SensorMap.from_ids(["M004", "M005"])
    series = resample(stream, smap, 7)
    assert series.codes.tolist() == [1, 1, 1]
    assert (series.timestamps - T0).tolist() == [0, 7 * S, 14 * S]


def test_event_on_tick_applied_before_sampling():
    stream = stream_of((0, "M004", True), (3, "M004", False))
    series = resample(stream, build_sensor_map(stream), 7)
    # last event at 3 s: only the tick at 0 exists
    assert series.codes.tolist() == [1]
    stream = stream_of((0, "M004", True), (3, "M004", False), (7, "M001", False))
    series = resample(stream, build_sensor_map(stream), 7)
    assert series.codes.tolist() == [1, 0]
    assert series.codes.tolist() == latch_oracle(stream, build_sensor_map(stream), 7)


def test_table_code_bits():
    # bits set in the signature code 0x292D from a 34-sensor deployment
    ids = [f"S{i:02d}" for i in range(34)]
    on = [0, 2, 3, 5, 8, 11, 13]
    events = [(0, sid, False) for sid in ids] + [(1, ids[b], True) for b in on] + [(7, ids[0], True)]
    stream = stream_of(*events)
    series = resample(stream, build_sensor_map(stream), 7)
    assert int(series.codes[-1]) == 0x292D
    assert format(int(series.codes[-1]), "b") == "10100100101101"
    assert code_hex(int(series.codes[-1]), 34) == "0x00000292D"


def test_pulse_mode_or_of_window():
    stream = stream_of((0, "A", True), (1, "A", False), (8, "B", True), (9, "B", False), (14, "A", False))
    smap = SensorMap.from_ids(["A", "B"])
    assert resample(stream, smap, 7, mode=PULSE).codes.tolist() == [1, 0, 2]
    assert resample(stream, smap, 7).codes.tolist() == [1, 0, 0]


def test_nonpositive_delta():
    stream = stream_of((0, "A", True))
    with pytest.raises(NonPositiveInterval):
        resample(stream, build_sensor_map(stream), 0)
    with pytest.raises(NonPositiveInterval):
        resample(stream, build_sensor_map(stream), -7)


def test_labels_containment():
    stream = stream_of((0, "A", True), (14, "A", True))
    series = resample(stream, build_sensor_map(stream), 7)
    labelled = assign_labels(series, [AnnotationInterval("Sleeping", T0, T0 + 10 * S)])
    assert labelled.label_list() == ["Sleeping", "Sleeping", None]
    assert assign_labels(series, []).label_list() == [None, None, None]
    # end is exclusive
    labelled = assign_labels(series, [AnnotationInterval("Sleeping", T0, T0 + 7 * S)])
    assert labelled.label_list() == ["Sleeping", None, None]


def test_labels_reject_overlap():
    series = series_from([None] * 3)
    with pytest.raises(OverlappingIntervals):
        assign_labels(series, [AnnotationInterval("A", T0, T0 + 10 * S), AnnotationInterval("B", T0 + 5 * S, T0 + 20 * S)])


def test_recommend_delta_exact():
    # 11 s mean spacing
    stream = stream_of(*[(11 * k, "M001", k % 2 == 0) for k in range(100)])
    lo, hi = recommend_delta_t(stream)
    assert (lo, hi) == (5.5, 7.15)
    assert Fraction(lo) == Fraction(11, 2) and hi == float(Fraction(143, 20))
    assert lo <= 7 <= hi
    assert recommend_delta_t(stream_of((0, "A", 1), (10, "A", 0), (20, "A", 1))) == (5.0, 6.5)
    with pytest.raises(TooFewEvents):
        recommend_delta_t(stream_of((0, "A", True)))


def test_split_floor_rule():
    train, test = chronological_split(series_from(["A"] * 10), 0.6)
    assert (len(train), len(test)) == (6, 4)
    train, test = chronological_split(series_from(["A"]), 0.6)
    assert (len(train), len(test)) == (0, 1)
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            chronological_split(series_from(["A"] * 10), bad)
    with pytest.raises(EmptySeries):
        chronological_split(series_from([]), 0.6)


def test_split_keeps_order():
    s = series_from(["A", "B", "C", None, "A"])
    train, test = chronological_split(s, 0.6)
    assert train.label_list() + test.label_list() == s.label_list()
    assert np.all(np.diff(np.concatenate([train.timestamps, test.timestamps])) > 0)


def test_csv_round_trip():
    s = series_from(["A", None, "B", "B"], codes=[0, 3, 0xF0, 1], n_sensors=8)
    buf = io.StringIO()
    write_csv(s, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == "timestamp,code_hex,label"
    assert text.splitlines()[2] == "2010-11-04 00:00:07.000000,0x03,∅"
    back = read_csv(io.StringIO(text))
    assert back.same_as(s)


def test_fixture_resampling(fixture_dir):
    stream = read_stream(fixture_dir / "two_activities.txt")
    smap = build_sensor_map(stream)
    series = assign_labels(resample(stream, smap, 7), build_annotation_intervals(stream))
    assert len(series) == 120 // 7 + 1
    labels = series.label_list()
    assert labels[:6] == ["Sleeping"] * 6 and labels[6:10] == [None] * 4 and labels[10:] == ["Relax"] * 8
    assert series.codes.tolist() == latch_oracle(stream, smap, 7)


# --- properties ---------------------------------------------------------------

@st.composite
def event_streams(draw):
    n = draw(st.integers(1, 25))
    sensors = ["A", "B", "C", "D"]
    # times on a coarse grid so events often land exactly on ticks
    times = sorted(draw(st.lists(st.integers(0, 200), min_size=n, max_size=n)))
    return stream_of(*[(t * 0.5, draw(st.sampled_from(sensors)), draw(st.booleans())) for t in times])


@settings(max_examples=300, deadline=None)
@given(event_streams(), st.sampled_from([0.5, 1.0, 3.5, 7.0, 11.0]))
def test_latch_matches_tick_scan(stream, delta_t):
    smap = build_sensor_map(stream)
    series = resample(stream, smap, delta_t)
    assert series.codes.tolist() == latch_oracle(stream, smap, delta_t)
    span = stream.events[-1].timestamp - stream.events[0].timestamp
    assert len(series) == span // int(delta_t * S) + 1
    assert len(series.alphabet) <= min(len(series), 2 ** smap.n_sensors)
    # pure function of its inputs
    assert resample(stream, smap, delta_t).same_as(series)


@settings(max_examples=200, deadline=None)
@given(event_streams(), st.sampled_from([1.0, 7.0]), st.lists(st.integers(0, 100), min_size=0, max_size=8, unique=True))
def test_labelling_keeps_codes_and_counts(stream, delta_t, cuts):
    series = resample(stream, build_sensor_map(stream), delta_t)
    cuts = sorted(cuts)
    ivs = [AnnotationInterval(f"act{i % 3}", T0 + a * S, T0 + b * S) for i, (a, b) in enumerate(zip(cuts[0::2], cuts[1::2])) if b > a]
    labelled = assign_labels(series, ivs)
    assert np.array_equal(labelled.codes, series.codes)
    assert np.array_equal(labelled.timestamps, series.timestamps)
    assert int(np.count_nonzero(labelled.labels != NULL)) + int(labelled.null_mask().sum()) == len(series)
    for k, lab in enumerate(labelled.label_list()):
        t = labelled.timestamps[k]
        inside = [iv.activity for iv in ivs if iv.start <= t < iv.end]
        assert (inside[0] if inside else None) == lab
