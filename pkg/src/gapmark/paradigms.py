"""Annotation-gap handling paradigms.

Every transform takes a partially labelled :class:`SampleSeries` and returns
a series with no Null labels (plus, for the paradigms proper, the
:class:`LabelSpace` a model should be trained over):

* ``P1`` drops gap samples,
* ``P2`` labels every gap ``Unknown``,
* ``P3`` labels each gap by its ordered neighbours, ``GAP[prev>next]``,
* ``Hybrid`` first extends the preceding activity over gaps matching a
  :class:`SemanticRule`, then applies ``P3`` to what is left.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import AllSamplesNull, InvalidRule, LabelCollision, UnknownLabelToken
from .sampling import NULL, SampleSeries

UNKNOWN = "Unknown"
START_SENTINEL = "^"
END_SENTINEL = "$"
NOT_AN_ACTIVITY = "NotAnActivity"

_GAP_RE = re.compile(r"^GAP\[(.+)>(.+)\]$")


class Paradigm(str, Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    HYBRID = "Hybrid"

    @classmethod
    def parse(cls, text: str) -> "Paradigm":
        for p in cls:
            if p.value.lower() == text.strip().lower():
                return p
        raise ValueError(f"unknown paradigm {text!r} (choose from p1, p2, p3, hybrid)")


def gap_label(prev: str, nxt: str) -> str:
    return f"GAP[{prev}>{nxt}]"


def parse_gap_label(label: str) -> tuple[str, str] | None:
    m = _GAP_RE.match(label)
    return (m.group(1), m.group(2)) if m else None


def is_paradigm_label(label: str) -> bool:
    return label == UNKNOWN or parse_gap_label(label) is not None


def _check_activity_name(name: str) -> None:
    if name in (START_SENTINEL, END_SENTINEL, NOT_AN_ACTIVITY) or is_paradigm_label(name):
        raise LabelCollision(f"{name!r} is reserved and cannot be an activity name")
    if any(ch in name for ch in "[]>") or not name or any(ch.isspace() for ch in name):
        raise LabelCollision(f"activity name {name!r} contains reserved characters")


@dataclass(frozen=True)
class LabelSpace:
    base_activities: tuple[str, ...]
    extra_labels: tuple[str, ...]
    paradigm: Paradigm

    def __post_init__(self) -> None:
        object.__setattr__(self, "base_activities", tuple(self.base_activities))
        object.__setattr__(self, "extra_labels", tuple(self.extra_labels))
        object.__setattr__(self, "paradigm", Paradigm(self.paradigm))
        for name in self.base_activities:
            _check_activity_name(name)
        if len(set(self.labels)) != len(self.labels):
            raise LabelCollision("base and extra labels must be distinct")
        n = len(self.base_activities)
        if self.paradigm is Paradigm.P1 and self.extra_labels:
            raise ValueError("P1 has no extra labels")
        if self.paradigm is Paradigm.P2 and self.extra_labels != (UNKNOWN,):
            raise ValueError("P2 has exactly the Unknown extra label")
        if self.paradigm in (Paradigm.P3, Paradigm.HYBRID):
            if any(parse_gap_label(lab) is None for lab in self.extra_labels):
                raise ValueError("P3 extra labels must be gap labels")
            if len(self.extra_labels) > (n + 2) ** 2:
                raise ValueError("more gap labels than ordered neighbour pairs")

    @property
    def labels(self) -> tuple[str, ...]:
        return self.base_activities + self.extra_labels

    @property
    def n_star(self) -> int:
        return len(self.extra_labels)


@dataclass(frozen=True)
class GapRun:
    start_index: int
    end_index: int
    prev_activity: str
    next_activity: str

    def __len__(self) -> int:
        return self.end_index - self.start_index + 1


@dataclass(frozen=True)
class SemanticRule:
    """Gaps between ``preceding`` and ``following`` are absorbed by ``preceding``."""

    preceding: str
    following: str
    action: str = "extend_preceding"

    def __post_init__(self) -> None:
        if self.action != "extend_preceding":
            raise InvalidRule(f"unsupported rule action {self.action!r}")
        if self.preceding == self.following:
            raise InvalidRule(f"rule {self.preceding} -> {self.following} links an activity to itself")
        for name in (self.preceding, self.following):
            try:
                _check_activity_name(name)
            except LabelCollision as exc:
                raise InvalidRule(str(exc)) from None


DEFAULT_RULES: tuple[SemanticRule, ...] = (SemanticRule("Leaving_Home", "Entering_Home"),)


def parse_rules(text: str) -> list[SemanticRule]:
    """Parse ``preceding -> following`` lines; ``#`` starts a comment."""
    rules = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split("->")]
        if len(parts) != 2 or not all(parts):
            raise InvalidRule(f"rule line {line_no}: expected 'preceding -> following', got {raw!r}")
        rules.append(SemanticRule(parts[0], parts[1]))
    return rules


def load_rules(path) -> list[SemanticRule]:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read())


def real_activities(series: SampleSeries) -> tuple[str, ...]:
    """Sorted non-paradigm label names occurring in ``series``."""
    used = np.unique(series.labels)
    return tuple(sorted(series.names[i] for i in used.tolist() if i != NULL and not is_paradigm_label(series.names[i])))


def _resolve_base(series: SampleSeries, base_activities: Iterable[str] | None) -> tuple[str, ...]:
    found = real_activities(series)
    if base_activities is None:
        return found
    base = tuple(base_activities)
    missing = set(found) - set(base)
    if missing:
        raise UnknownLabelToken(f"series contains activities outside the label space: {sorted(missing)}")
    return base


def _remap(series: SampleSeries, labels_for_names: Sequence[str | None], target: Sequence[str]) -> SampleSeries:
    """Re-index labels onto ``target``; ``labels_for_names[i]`` is the new name for old index ``i``."""
    index = {name: i for i, name in enumerate(target)}
    missing = -2
    lut = np.array([NULL if lab is None else index.get(lab, missing) for lab in labels_for_names] + [NULL],
                   dtype=np.int32)
    # old NULL (-1) indexes the trailing entry
    labels = lut[series.labels]
    if (labels == missing).any():
        bad = sorted({labels_for_names[i] for i in np.unique(series.labels[labels == missing]).tolist()})
        raise UnknownLabelToken(f"labels {bad} do not belong to the target label space")
    return series.replace(labels=labels, names=tuple(target))


def find_gap_runs(series: SampleSeries) -> list[GapRun]:
    null = series.null_mask()
    if not null.any():
        return []
    padded = np.concatenate(([False], null, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, ends = edges[0::2], edges[1::2] - 1
    labels, names, n = series.labels, series.names, len(series)
    runs = []
    for s, e in zip(starts.tolist(), ends.tolist()):
        prev = names[labels[s - 1]] if s > 0 else START_SENTINEL
        nxt = names[labels[e + 1]] if e + 1 < n else END_SENTINEL
        runs.append(GapRun(s, e, prev, nxt))
    return runs


def apply_gap_removal(series: SampleSeries, base_activities: Iterable[str] | None = None):
    """Paradigm 1: keep only labelled samples, in their original order."""
    keep = ~series.null_mask()
    if not keep.any():
        raise AllSamplesNull("every sample is an annotation gap; nothing to train on")
    base = _resolve_base(series, base_activities)
    space = LabelSpace(base, (), Paradigm.P1)
    out = series.take(np.flatnonzero(keep))
    return _remap(out, list(out.names), space.labels), space


def apply_unknown_label(series: SampleSeries, base_activities: Iterable[str] | None = None):
    """Paradigm 2: every gap sample becomes ``Unknown``."""
    base = _resolve_base(series, base_activities)
    space = LabelSpace(base, (UNKNOWN,), Paradigm.P2)
    out = _remap(series, list(series.names), space.labels)
    labels = out.labels.copy()
    labels[labels == NULL] = space.labels.index(UNKNOWN)
    return out.replace(labels=labels), space


def _interactivity(series: SampleSeries, base: tuple[str, ...], paradigm: Paradigm):
    runs = find_gap_runs(series)
    run_labels = [gap_label(r.prev_activity, r.next_activity) for r in runs]
    existing = [name for name in series.names if parse_gap_label(name) is not None]
    present = {series.names[i] for i in np.unique(series.labels).tolist() if i != NULL}
    extras = tuple(sorted(set(run_labels) | {lab for lab in existing if lab in present}))
    space = LabelSpace(base, extras, paradigm)
    out = _remap(series, list(series.names), space.labels)
    labels = out.labels.copy()
    index = {name: i for i, name in enumerate(space.labels)}
    for run, lab in zip(runs, run_labels):
        labels[run.start_index : run.end_index + 1] = index[lab]
    return out.replace(labels=labels), space


def apply_interactivity_labels(series: SampleSeries, base_activities: Iterable[str] | None = None):
    """Paradigm 3: each gap is labelled ``GAP[prev>next]`` by its ordered neighbours.

    Gaps at the series edges use ``^`` (start) and ``$`` (end) as the missing
    neighbour.
    """
    return _interactivity(series, _resolve_base(series, base_activities), Paradigm.P3)


def apply_semantic_preprocess(series: SampleSeries, rules: Sequence[SemanticRule]) -> SampleSeries:
    """Fill gaps whose ``(prev, next)`` matches a rule with the preceding activity."""
    pairs = {(r.preceding, r.following) for r in rules}
    if not pairs:
        return series
    labels = None
    for run in find_gap_runs(series):
        if (run.prev_activity, run.next_activity) in pairs:
            if labels is None:
                labels = series.labels.copy()
            labels[run.start_index : run.end_index + 1] = series.labels[run.start_index - 1]
    return series if labels is None else series.replace(labels=labels)


def apply_hybrid(series: SampleSeries, rules: Sequence[SemanticRule] = DEFAULT_RULES,
                 base_activities: Iterable[str] | None = None):
    """Semantic preprocessing followed by paradigm 3."""
    base = _resolve_base(series, base_activities)
    return _interactivity(apply_semantic_preprocess(series, rules), base, Paradigm.HYBRID)


def apply_paradigm(series: SampleSeries, paradigm: Paradigm | str, rules: Sequence[SemanticRule] = DEFAULT_RULES,
                   base_activities: Iterable[str] | None = None):
    if not isinstance(paradigm, Paradigm):
        paradigm = Paradigm.parse(paradigm)
    if paradigm is Paradigm.P1:
        return apply_gap_removal(series, base_activities)
    if paradigm is Paradigm.P2:
        return apply_unknown_label(series, base_activities)
    if paradigm is Paradigm.P3:
        return apply_interactivity_labels(series, base_activities)
    return apply_hybrid(series, rules, base_activities)


def project_to_ground_truth(label: str, space: LabelSpace | Iterable[str]) -> str:
    """Map a model label onto a base activity or ``NOT_AN_ACTIVITY``."""
    base = space.base_activities if isinstance(space, LabelSpace) else tuple(space)
    if label in base:
        return label
    if is_paradigm_label(label):
        return NOT_AN_ACTIVITY
    raise UnknownLabelToken(f"label {label!r} is neither a base activity nor a paradigm label")
