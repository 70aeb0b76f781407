"""Synthetic smart-home streams with planted ground truth and annotation gaps.

The truth label sequence is a Markov chain sampled episode by episode from
``transition``.  Each sample draws an observation code from its activity's
profile or, inside an annotation gap with ``pair_signatures`` on, from a
distribution keyed by the ordered pair of activities around the gap.  Codes
are turned into a CASAS-style event stream whose latched resampling at
``delta_t`` reproduces them exactly, and whose begin/end markers reproduce
the gapped labels.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import InvalidConfig
from .events import US_PER_SECOND, Annotation, EventStream, Marker, SensorEvent, parse_timestamp
from .sampling import NULL, SampleSeries, SensorMap

BOUNDARY = "boundary"
UNIFORM = "uniform"
QUIET = 0

Profile = tuple[np.ndarray, np.ndarray]  # (codes, probabilities)


@dataclass(frozen=True, eq=False)
class SynthConfig:
    activities: tuple[str, ...]
    sensors: tuple[str, ...]
    transition: np.ndarray
    initial: np.ndarray
    profiles: tuple[Profile, ...]
    gap_fraction: float = 0.2
    gap_mode: str = BOUNDARY
    pair_signatures: bool = True
    signature_overrides: Mapping[tuple[str, str], Profile] = field(default_factory=dict)
    absorb_pairs: Mapping[tuple[str, str], float] = field(default_factory=dict)
    stickiness: float = 0.0
    delta_t: float = 7.0
    duration: float = 7.0 * 10_000
    seed: int = 0
    layout_seed: int = 2020
    start: str = "2010-11-04 00:00:00"

    @property
    def n_samples(self) -> int:
        return int(self.duration // self.delta_t) + 1

    def validate(self) -> "SynthConfig":
        n = len(self.activities)
        if n < 1 or len(set(self.activities)) != n:
            raise InvalidConfig("activities must be a non-empty list of unique names")
        if not 1 <= len(self.sensors) <= 64 or len(set(self.sensors)) != len(self.sensors):
            raise InvalidConfig("need 1..64 uniquely named sensors")
        a = np.asarray(self.transition, dtype=float)
        if a.shape != (n, n) or np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1) > 1e-9):
            raise InvalidConfig("generator transition matrix must be row-stochastic N x N")
        if np.any(np.diag(a) >= 1.0):
            raise InvalidConfig("every activity needs a non-zero chance of ending")
        pi = np.asarray(self.initial, dtype=float)
        if pi.shape != (n,) or np.any(pi < 0) or abs(pi.sum() - 1) > 1e-9:
            raise InvalidConfig("generator initial distribution must be stochastic")
        if len(self.profiles) != n:
            raise InvalidConfig("need one emission profile per activity")
        for codes, probs in list(self.profiles) + list(self.signature_overrides.values()):
            _check_profile(codes, probs, len(self.sensors))
        if not 0 <= self.gap_fraction < 1:
            raise InvalidConfig(f"gap_fraction must lie in [0, 1), got {self.gap_fraction}")
        if self.gap_mode not in (BOUNDARY, UNIFORM):
            raise InvalidConfig(f"gap_mode must be {BOUNDARY!r} or {UNIFORM!r}")
        for pair, frac in self.absorb_pairs.items():
            if not 0 <= frac < 1 or any(p not in self.activities for p in pair):
                raise InvalidConfig(f"bad absorb entry {pair}: {frac}")
        if not 0 <= self.stickiness < 1:
            raise InvalidConfig("stickiness must lie in [0, 1)")
        if not self.delta_t > 0 or not self.duration >= 0:
            raise InvalidConfig("delta_t must be positive and duration non-negative")
        try:
            parse_timestamp(*self.start.split(" "))
        except ValueError as exc:
            raise InvalidConfig(f"bad start time {self.start!r}: {exc}") from None
        return self


def _check_profile(codes, probs, n_sensors: int) -> None:
    codes = np.asarray(codes, dtype=np.uint64)
    probs = np.asarray(probs, dtype=float)
    if codes.shape != probs.shape or len(codes) == 0:
        raise InvalidConfig("emission profile needs matching non-empty code and probability lists")
    if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
        raise InvalidConfig("emission profile probabilities must sum to 1")
    if n_sensors < 64 and np.any(codes >> np.uint64(n_sensors)):
        raise InvalidConfig("emission code uses bits beyond the sensor count")


def _bits(sensor_idx) -> int:
    out = 0
    for i in sensor_idx:
        out |= 1 << int(i)
    return out


def _random_codes(rng: np.random.Generator, pool, k: int, lo: int, hi: int) -> list[int]:
    codes: list[int] = []
    pool = list(pool)
    while len(codes) < k:
        size = int(rng.integers(lo, min(hi, len(pool)) + 1))
        c = _bits(rng.choice(pool, size=size, replace=False))
        if c not in codes and c != QUIET:
            codes.append(c)
    return codes


def _pair_signature(config: SynthConfig, i: int, j: int) -> Profile:
    pair = (config.activities[i], config.activities[j])
    if pair in config.signature_overrides:
        codes, probs = config.signature_overrides[pair]
        return np.asarray(codes, dtype=np.uint64), np.asarray(probs, dtype=float)
    rng = np.random.default_rng([config.layout_seed, 7, i, j])
    m = len(config.sensors)
    pool = range(m)
    codes = _random_codes(rng, pool, 3, 2, 4)
    probs = rng.dirichlet(np.full(3, 2.0)) * 0.8
    return (np.array(codes + [QUIET], dtype=np.uint64), np.append(probs, 0.2))


def _episodes(config: SynthConfig, rng: np.random.Generator, n: int):
    """``(activity, start, length)`` tuples covering ``n`` samples."""
    a = np.asarray(config.transition, dtype=float)
    stay = np.diag(a)
    leave = a - np.diag(stay)
    leave = leave / leave.sum(axis=1, keepdims=True)
    eps = []
    state = int(rng.choice(len(stay), p=config.initial))
    t = 0
    while t < n:
        length = int(rng.geometric(1.0 - stay[state]))
        length = min(length, n - t)
        eps.append((state, t, length))
        t += length
        state = int(rng.choice(len(stay), p=leave[state]))
    return eps


def _gap_mask(config: SynthConfig, rng: np.random.Generator, eps, n: int) -> np.ndarray:
    gap = np.zeros(n, dtype=bool)
    if config.gap_fraction == 0:
        # no gaps at all, planted pairs included
        return gap
    if config.gap_mode == UNIFORM:
        return rng.random(n) < config.gap_fraction
    names = config.activities
    for e, (act, start, length) in enumerate(eps):
        edge = int(config.gap_fraction * length / 2)
        head, tail = edge, edge
        if e + 1 < len(eps):
            frac = config.absorb_pairs.get((names[act], names[eps[e + 1][0]]))
            if frac is not None:
                tail = max(tail, int(frac * length))
        tail = min(tail, length - head - 1)
        gap[start : start + head] = True
        if tail > 0:
            gap[start + length - tail : start + length] = True
    return gap


def generate(config: SynthConfig):
    """Return ``(stream, gapped_series, truth_series)`` for ``config``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_samples
    delta_us = int(round(config.delta_t * US_PER_SECOND))
    t0 = parse_timestamp(*config.start.split(" "))
    timestamps = t0 + delta_us * np.arange(n, dtype=np.int64)

    eps = _episodes(config, rng, n)
    truth = np.empty(n, dtype=np.int32)
    for act, start, length in eps:
        truth[start : start + length] = act
    gap = _gap_mask(config, rng, eps, n)
    gapped = np.where(gap, NULL, truth).astype(np.int32)

    # source of each sample's code: activity profile, or a pair signature inside gaps
    source = truth.astype(np.int64).copy()
    sources: list[Profile] = [(np.asarray(c, dtype=np.uint64), np.asarray(p, dtype=float)) for c, p in config.profiles]
    if config.pair_signatures and gap.any():
        pair_ids: dict[tuple[int, int], int] = {}
        padded = np.concatenate(([False], gap, [False]))
        edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
        for s, e in zip(edges[0::2].tolist(), (edges[1::2] - 1).tolist()):
            if s == 0 or e + 1 >= n:
                continue
            pair = (int(gapped[s - 1]), int(gapped[e + 1]))
            if pair not in pair_ids:
                pair_ids[pair] = len(sources)
                sources.append(_pair_signature(config, *pair))
            source[s : e + 1] = pair_ids[pair]

    fresh = np.empty(n, dtype=np.uint64)
    for sid, (codes, probs) in enumerate(sources):
        where = np.flatnonzero(source == sid)
        if len(where):
            fresh[where] = codes[rng.choice(len(codes), size=len(where), p=probs)]
    sticky = np.zeros(n, dtype=bool)
    if config.stickiness > 0 and n > 1:
        sticky[1:] = (rng.random(n - 1) < config.stickiness) & (source[1:] == source[:-1])
    keep_idx = np.maximum.accumulate(np.where(sticky, 0, np.arange(n)))
    codes = fresh[keep_idx]

    names = tuple(sorted(config.activities))
    remap = np.array([names.index(a) for a in config.activities], dtype=np.int32)
    truth_series = SampleSeries(timestamps, codes, remap[truth], names, float(config.delta_t), len(config.sensors))
    gapped_series = truth_series.replace(labels=np.where(gap, NULL, remap[truth]).astype(np.int32))
    stream = _to_stream(config, timestamps, codes, gapped_series, delta_us)
    return stream, gapped_series, truth_series


def _token(sensor: str, active: bool) -> str:
    if sensor.startswith("D"):
        return "OPEN" if active else "CLOSE"
    return "ON" if active else "OFF"


def _to_stream(config: SynthConfig, ts: np.ndarray, codes: np.ndarray, gapped: SampleSeries, delta_us: int) -> EventStream:
    sensors = config.sensors
    m = len(sensors)
    n = len(codes)
    codes_l = [int(c) for c in codes.tolist()]
    ts_l = ts.tolist()

    begins: dict[int, str] = {}
    ends: dict[int, str] = {}
    labels = gapped.labels
    if n:
        change = np.flatnonzero(np.diff(labels)) + 1
        starts = np.concatenate(([0], change))
        stops = np.concatenate((change, [n]))
        for s, e in zip(starts.tolist(), stops.tolist()):
            if labels[s] != NULL:
                begins[s] = gapped.names[labels[s]]
                ends[e - 1] = gapped.names[labels[s]]

    events: list[SensorEvent] = []
    add = events.append

    def noop(t: int, k: int, ann: Annotation | None) -> None:
        on = bool(codes_l[k] & 1)
        add(SensorEvent(t, sensors[0], on, ann, _token(sensors[0], on)))

    if n:
        # announce every sensor first so first-appearance order equals bit order
        for b in range(m):
            add(SensorEvent(ts_l[0], sensors[b], False, None, _token(sensors[b], False)))
    prev = 0
    for k in range(n):
        cur = codes_l[k]
        diff = cur ^ prev
        if diff:
            flips = [b for b in range(m) if diff >> b & 1]
            for j, b in enumerate(flips):
                # changes land just before the tick so the latch holds them at the tick
                t = ts_l[k] if k == 0 else ts_l[k] - 1000 * (len(flips) - j)
                on = bool(cur >> b & 1)
                add(SensorEvent(t, sensors[b], on, None, _token(sensors[b], on)))
        if k in begins:
            noop(ts_l[k], k, Annotation(begins[k], Marker.BEGIN))
        if k == n - 1:
            noop(ts_l[k], k, None)
        if k in ends:
            noop(ts_l[k] + delta_us // 2, k, Annotation(ends[k], Marker.END))
        prev = cur
    text = "".join(ev.to_line() + "\n" for ev in events)
    return EventStream(tuple(events), hashlib.sha256(text.encode("utf-8")).hexdigest(), 0)


def canonical_sensor_map(config: SynthConfig) -> SensorMap:
    return SensorMap.from_ids(config.sensors)


# ---------------------------------------------------------------------------
# presets

ARUBA_ACTIVITIES = (
    "Sleeping", "Bed_To_Toilet", "Meal_Preparation", "Relax", "Eating",
    "Work", "Wash_Dishes", "Leaving_Home", "Entering_Home",
)

# mean episode length in samples and successor weights
_ARUBA_SCHEDULE = {
    "Sleeping": (400, {"Bed_To_Toilet": 0.7, "Relax": 0.2, "Meal_Preparation": 0.1}),
    "Bed_To_Toilet": (20, {"Sleeping": 0.8, "Relax": 0.2}),
    "Meal_Preparation": (120, {"Eating": 0.6, "Relax": 0.2, "Wash_Dishes": 0.2}),
    "Relax": (200, {"Sleeping": 0.3, "Meal_Preparation": 0.25, "Work": 0.2, "Leaving_Home": 0.25}),
    "Eating": (60, {"Wash_Dishes": 0.5, "Relax": 0.5}),
    "Work": (150, {"Relax": 0.5, "Meal_Preparation": 0.3, "Leaving_Home": 0.2}),
    "Wash_Dishes": (40, {"Relax": 0.6, "Leaving_Home": 0.2, "Work": 0.2}),
    "Leaving_Home": (300, {"Entering_Home": 1.0}),
    "Entering_Home": (10, {"Relax": 0.6, "Meal_Preparation": 0.4}),
}

# sensor index ranges per zone: 31 motion sensors M001..M031, doors D001..D003
_ZONES = {
    "bedroom": range(0, 5),
    "bath": range(5, 9),
    "kitchen": range(9, 16),
    "living": range(16, 23),
    "office": range(23, 28),
    "hall": range(28, 31),
    "doors": range(31, 34),
}
_ARUBA_ZONES = {
    "Sleeping": ("bedroom",),
    "Bed_To_Toilet": ("bedroom", "bath", "hall"),
    "Meal_Preparation": ("kitchen",),
    "Relax": ("living", "bedroom"),
    "Eating": ("kitchen", "living"),
    "Work": ("office", "living"),
    "Wash_Dishes": ("kitchen",),
    "Leaving_Home": ("hall", "doors"),
    "Entering_Home": ("hall", "doors"),
}
# share of samples where the resident is still (no sensor latched on)
_ARUBA_QUIET = {
    "Sleeping": 0.55, "Relax": 0.35, "Work": 0.2, "Eating": 0.1,
    "Leaving_Home": 0.8, "Bed_To_Toilet": 0.05, "Meal_Preparation": 0.05,
    "Wash_Dishes": 0.05, "Entering_Home": 0.05,
}


def schedule_matrix(activities, schedule) -> tuple[np.ndarray, np.ndarray]:
    n = len(activities)
    a = np.zeros((n, n))
    for i, act in enumerate(activities):
        mean_len, succ = schedule[act]
        stay = 1.0 - 1.0 / mean_len
        a[i, i] = stay
        total = sum(succ.values())
        for nxt, w in succ.items():
            a[i, activities.index(nxt)] = (1.0 - stay) * w / total
    # start of day is usually asleep
    pi = np.full(n, 0.2 / (n - 1)) if n > 1 else np.ones(1)
    if n > 1:
        pi[0] = 0.8
    return a, pi


def _zone_profiles(activities, zones_of, quiet, layout_seed: int, pool_size: int = 4):
    """Activities sharing a zone draw from the same code pool with their own weights."""
    rng = np.random.default_rng([layout_seed, 1])
    pools = {z: _random_codes(rng, idx, pool_size, 1, 3) for z, idx in _ZONES.items()}
    profiles = []
    for act in activities:
        codes = [c for z in zones_of[act] for c in pools[z]]
        probs = rng.dirichlet(np.full(len(codes), 1.0)) * (1.0 - quiet[act])
        profiles.append((np.array(codes + [QUIET], dtype=np.uint64), np.append(probs, quiet[act])))
    return tuple(profiles)


def aruba_like(seed: int = 0, duration: float | None = None, **overrides) -> SynthConfig:
    """Nine activities, 34 binary sensors (31 motion, 3 door), ~10^5 samples at 7 s.

    Leaving_Home is followed by a long unannotated out-of-home stretch: most
    of each Leaving_Home episode is left unlabelled and its gap signature is
    dominated by the all-quiet code.
    """
    sensors = tuple(f"M{i:03d}" for i in range(1, 32)) + ("D001", "D002", "D003")
    a, pi = schedule_matrix(ARUBA_ACTIVITIES, _ARUBA_SCHEDULE)
    hall_door = [_bits([28]), _bits([31]), _bits([29, 32])]
    cfg = SynthConfig(
        activities=ARUBA_ACTIVITIES,
        sensors=sensors,
        transition=a,
        initial=pi,
        profiles=_zone_profiles(ARUBA_ACTIVITIES, _ARUBA_ZONES, _ARUBA_QUIET, 2020),
        gap_fraction=0.2,
        gap_mode=BOUNDARY,
        pair_signatures=True,
        signature_overrides={
            ("Leaving_Home", "Entering_Home"): (np.array(hall_door + [QUIET], dtype=np.uint64),
                                                np.array([0.04, 0.03, 0.03, 0.9])),
        },
        absorb_pairs={("Leaving_Home", "Entering_Home"): 0.85},
        stickiness=0.57,
        delta_t=7.0,
        duration=7.0 * 100_000 if duration is None else duration,
        seed=seed,
    )
    return replace(cfg, **overrides) if overrides else cfg


SMALL_ACTIVITIES = ("Sleeping", "Bed_To_Toilet", "Relax")


def small(seed: int = 0, duration: float | None = None, **overrides) -> SynthConfig:
    """Three activities over 8 sensors, 10^4 samples; quick fixture-scale runs."""
    sensors = tuple(f"M{i:03d}" for i in range(1, 8)) + ("D001",)
    schedule = {
        "Sleeping": (150, {"Bed_To_Toilet": 0.7, "Relax": 0.3}),
        "Bed_To_Toilet": (15, {"Sleeping": 0.8, "Relax": 0.2}),
        "Relax": (100, {"Sleeping": 0.6, "Bed_To_Toilet": 0.4}),
    }
    a, pi = schedule_matrix(SMALL_ACTIVITIES, schedule)
    rng = np.random.default_rng([2020, 3])
    bed, bath = _random_codes(rng, range(0, 4), 3, 1, 2), _random_codes(rng, range(3, 8), 3, 1, 2)
    # Sleeping and Relax share one code pool; only their weights differ
    pools = {"Sleeping": bed, "Bed_To_Toilet": bed + bath, "Relax": bed}
    quiet = {"Sleeping": 0.5, "Bed_To_Toilet": 0.05, "Relax": 0.4}
    profiles = []
    for act in SMALL_ACTIVITIES:
        codes = pools[act]
        probs = rng.dirichlet(np.full(len(codes), 2.0)) * (1 - quiet[act])
        profiles.append((np.array(codes + [QUIET], dtype=np.uint64), np.append(probs, quiet[act])))
    cfg = SynthConfig(
        activities=SMALL_ACTIVITIES,
        sensors=sensors,
        transition=a,
        initial=pi,
        profiles=tuple(profiles),
        gap_fraction=0.3,
        stickiness=0.3,
        duration=7.0 * 10_000 if duration is None else duration,
        seed=seed,
    )
    return replace(cfg, **overrides) if overrides else cfg


PRESETS = {"aruba-like": aruba_like, "small": small}


def preset(name: str, **kwargs) -> SynthConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise InvalidConfig(f"unknown synth preset {name!r} (choose from {', '.join(sorted(PRESETS))})") from None
    return factory(**kwargs).validate()


def mean_inter_event_seconds(stream: EventStream) -> float:
    if len(stream) < 2:
        return math.nan
    return (stream.events[-1].timestamp - stream.events[0].timestamp) / (len(stream) - 1) / US_PER_SECOND
