"""Per-activity scoring and paradigm comparison reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import InvariantViolation, LengthMismatch, UnknownActivity
from .hmm import DEFAULT_ALPHA, estimate, viterbi_decode
from .paradigms import (
    DEFAULT_RULES,
    NOT_AN_ACTIVITY,
    LabelSpace,
    Paradigm,
    SemanticRule,
    apply_paradigm,
    is_paradigm_label,
    project_to_ground_truth,
    real_activities,
)
from .sampling import NULL, SampleSeries, chronological_split

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
METRICS = ("recall", "precision", "accuracy", "specificity")
UNDEFINED = "n/a"


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts of (true, predicted) pairs; rows are truth, columns prediction.

    The last class is the ``NotAnActivity`` bucket collecting predictions of
    paradigm labels; its row is always empty.
    """

    classes: tuple[str, ...]
    counts: np.ndarray
    evaluated_total: int

    def __post_init__(self) -> None:
        if self.counts.shape != (len(self.classes), len(self.classes)):
            raise InvariantViolation("confusion counts do not match the class list")
        if self.counts.min(initial=0) < 0 or int(self.counts.sum()) != self.evaluated_total:
            raise InvariantViolation("confusion counts must be non-negative and sum to evaluated_total")

    @property
    def activities(self) -> tuple[str, ...]:
        return self.classes[:-1]

    def cell(self, truth: str, predicted: str) -> int:
        return int(self.counts[self.classes.index(truth), self.classes.index(predicted)])

    def one_vs_rest(self, activity: str) -> tuple[int, int, int, int]:
        """``(tp, fp, tn, fn)`` treating ``activity`` as the positive class."""
        if activity not in self.activities:
            raise UnknownActivity(f"{activity!r} is not an evaluated activity")
        i = self.classes.index(activity)
        tp = int(self.counts[i, i])
        fn = int(self.counts[i, :].sum()) - tp
        fp = int(self.counts[:, i].sum()) - tp
        tn = self.evaluated_total - tp - fn - fp
        return tp, fp, tn, fn


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass(frozen=True)
class ClassMetrics:
    activity: str
    tp: int
    fp: int
    tn: int
    fn: int
    recall: float | None
    precision: float | None
    accuracy: float | None
    specificity: float | None

    @classmethod
    def from_counts(cls, activity: str, tp: int, fp: int, tn: int, fn: int) -> "ClassMetrics":
        return cls(
            activity, tp, fp, tn, fn,
            recall=_ratio(tp, tp + fn),
            precision=_ratio(tp, tp + fp),
            accuracy=_ratio(tp + tn, tp + tn + fp + fn),
            specificity=_ratio(tn, tn + fp),
        )

    def as_dict(self) -> dict[str, Any]:
        return {
            "activity": self.activity,
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            **{m: getattr(self, m) for m in METRICS},
        }


def confusion(truth: Sequence[str | None], predicted: Sequence[str], space: LabelSpace | Sequence[str]) -> ConfusionMatrix:
    """Tally ``(truth, projected prediction)`` over samples whose truth is not Null."""
    if len(truth) != len(predicted):
        raise LengthMismatch(f"truth has {len(truth)} labels, predictions {len(predicted)}")
    base = space.base_activities if isinstance(space, LabelSpace) else tuple(space)
    classes = tuple(base) + (NOT_AN_ACTIVITY,)
    index = {name: i for i, name in enumerate(classes)}
    projected: dict[str, int] = {}
    rows, cols = [], []
    for t, p in zip(truth, predicted):
        if t is None:
            continue
        if t not in base:
            raise UnknownActivity(f"ground-truth label {t!r} is not a base activity")
        col = projected.get(p)
        if col is None:
            col = projected[p] = index[project_to_ground_truth(p, base)]
        rows.append(index[t])
        cols.append(col)
    k = len(classes)
    counts = np.bincount(np.asarray(rows, dtype=np.int64) * k + np.asarray(cols, dtype=np.int64),
                         minlength=k * k).reshape(k, k)
    return ConfusionMatrix(classes, counts, len(rows))


def class_metrics(cm: ConfusionMatrix, activity: str) -> ClassMetrics:
    return ClassMetrics.from_counts(activity, *cm.one_vs_rest(activity))


def recall(cm: ConfusionMatrix, activity: str) -> float | None:
    return class_metrics(cm, activity).recall


def precision(cm: ConfusionMatrix, activity: str) -> float | None:
    return class_metrics(cm, activity).precision


def accuracy(cm: ConfusionMatrix, activity: str) -> float | None:
    return class_metrics(cm, activity).accuracy


def specificity(cm: ConfusionMatrix, activity: str) -> float | None:
    return class_metrics(cm, activity).specificity


def format_metric(value: float | None) -> str:
    return UNDEFINED if value is None else f"{value:.6f}"


@dataclass(frozen=True, eq=False)
class ParadigmResult:
    paradigm: str
    n_states: int
    n_star: int
    train_samples: int
    test_samples: int
    evaluated_total: int
    log_probability: float
    metrics: tuple[ClassMetrics, ...]
    confusion: ConfusionMatrix
    fallback_rows: tuple[str, ...] = ()

    def metric(self, activity: str) -> ClassMetrics:
        for m in self.metrics:
            if m.activity == activity:
                return m
        raise UnknownActivity(activity)

    def mean(self, name: str) -> float | None:
        """Mean of a metric over the activities where it is defined."""
        values = [getattr(m, name) for m in self.metrics if getattr(m, name) is not None]
        return sum(values) / len(values) if values else None

    def as_dict(self) -> dict[str, Any]:
        return {
            "paradigm": self.paradigm,
            "n_states": self.n_states,
            "n_star": self.n_star,
            "train_samples": self.train_samples,
            "test_samples": self.test_samples,
            "evaluated_total": self.evaluated_total,
            "log_probability": self.log_probability,
            "fallback_rows": list(self.fallback_rows),
            "mean": {m: self.mean(m) for m in METRICS},
            "classes": [m.as_dict() for m in self.metrics],
        }


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    activities: tuple[str, ...]
    results: tuple[ParadigmResult, ...]
    sample_counts: Mapping[str, int]
    config: Mapping[str, Any] = field(default_factory=dict)
    dataset_digest: str = ""
    scoring_note: str = (
        "paradigm-generated predictions on annotated test samples count as a false negative "
        "for the true activity and a false positive for no activity"
    )

    def __getitem__(self, paradigm: str) -> ParadigmResult:
        for r in self.results:
            if r.paradigm.lower() == str(paradigm).lower():
                return r
        raise KeyError(paradigm)

    def check(self) -> "ComparisonReport":
        for r in self.results:
            for m in r.metrics:
                if m.tp + m.fp + m.tn + m.fn != r.evaluated_total:
                    raise InvariantViolation(f"{r.paradigm}/{m.activity}: TP+FP+TN+FN != evaluated total")
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "dataset_digest": self.dataset_digest,
            "config": dict(self.config),
            "sample_counts": dict(self.sample_counts),
            "activities": list(self.activities),
            "scoring_note": self.scoring_note,
            "paradigms": [r.as_dict() for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        """One row per (activity, metric), one column per paradigm."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["activity", "metric", *(r.paradigm for r in self.results)])
        for act in self.activities:
            per = [r.metric(act) for r in self.results]
            for name in ("tp", "fp", "tn", "fn"):
                w.writerow([act, name, *(getattr(m, name) for m in per)])
            for name in METRICS:
                w.writerow([act, name, *(format_metric(getattr(m, name)) for m in per)])
        for name in METRICS:
            w.writerow(["MEAN", name, *(format_metric(r.mean(name)) for r in self.results)])
        return buf.getvalue()

    def render(self) -> str:
        lines = []
        for r in self.results:
            lines.append(
                f"== {r.paradigm}: {r.n_states} states (N*={r.n_star}), train {r.train_samples} samples, "
                f"test {r.test_samples} samples, {r.evaluated_total} scored"
            )
            width = max([len("activity")] + [len(a) for a in self.activities])
            head = f"{'activity':<{width}} {'TP':>8} {'FP':>8} {'TN':>8} {'FN':>8} " + " ".join(
                f"{m:>11}" for m in METRICS)
            lines.append(head)
            lines.append("-" * len(head))
            for m in r.metrics:
                lines.append(
                    f"{m.activity:<{width}} {m.tp:>8} {m.fp:>8} {m.tn:>8} {m.fn:>8} "
                    + " ".join(f"{format_metric(getattr(m, k)):>11}" for k in METRICS)
                )
            lines.append(f"{'mean':<{width}} {'':>8} {'':>8} {'':>8} {'':>8} "
                         + " ".join(f"{format_metric(r.mean(k)):>11}" for k in METRICS))
            lines.append("")
        return "\n".join(lines)


def evaluate_model(model, test: SampleSeries, space: LabelSpace | Sequence[str]):
    """Decode ``test`` with ``model`` and score against its (raw) labels."""
    path = viterbi_decode(model, test.codes)
    cm = confusion(test.label_list(), path.labels(model), space)
    activities = cm.activities
    metrics = tuple(class_metrics(cm, a) for a in activities)
    return path, cm, metrics


def compare_paradigms(
    series: SampleSeries,
    split_fraction: float = 0.6,
    paradigms: Sequence[Paradigm | str] = (Paradigm.P1, Paradigm.P2, Paradigm.P3, Paradigm.HYBRID),
    alpha: float = DEFAULT_ALPHA,
    rules: Sequence[SemanticRule] = DEFAULT_RULES,
    config: Mapping[str, Any] | None = None,
    dataset_digest: str = "",
) -> ComparisonReport:
    """Train and score every paradigm on one chronological split.

    Only the training part is transformed; test labels stay raw, their gaps
    are not scored, and every paradigm decodes the same test codes.  Base
    activities are those of the whole series so all tables share one class
    list.  Paradigm labels absent from the training part are not made states.
    """
    if not paradigms:
        raise ValueError("at least one paradigm is required")
    base = real_activities(series)
    train, test = chronological_split(series, split_fraction)
    results = []
    for p in paradigms:
        p = p if isinstance(p, Paradigm) else Paradigm.parse(p)
        train_t, space = apply_paradigm(train, p, rules, base_activities=base)
        model = estimate(train_t, space, alpha, drop_unused_extra=True)
        results.append(score_model(model, base, test, len(train_t)))
        log.info("%s: %d states, mean accuracy %s", p.value, model.n_states, results[-1].mean("accuracy"))
    return _report(series, train, test, base, results, {
        "split_fraction": split_fraction, "alpha": alpha,
        "paradigms": [r.paradigm for r in results],
        "rules": [f"{r.preceding} -> {r.following}" for r in rules],
    }, config, dataset_digest)


def model_base_activities(model) -> tuple[str, ...]:
    return tuple(s for s in model.states if not is_paradigm_label(s))


def score_model(model, base: Sequence[str], test: SampleSeries, train_samples: int) -> ParadigmResult:
    """Decode ``test`` with ``model`` and summarise it as one report table."""
    path, cm, metrics = evaluate_model(model, test, base)
    try:
        p = Paradigm.parse(model.paradigm)
    except ValueError:
        p = None
    n_star = model.n_states - len(base) if p in (Paradigm.P3, Paradigm.HYBRID) else 0
    return ParadigmResult(
        paradigm=p.value if p else (model.paradigm or "model"),
        n_states=model.n_states,
        n_star=n_star,
        train_samples=train_samples,
        test_samples=len(test),
        evaluated_total=cm.evaluated_total,
        log_probability=path.log_probability,
        metrics=metrics,
        confusion=cm,
        fallback_rows=model.fallback_rows,
    )


def evaluate_saved_model(model, series: SampleSeries, split_fraction: float = 0.6,
                         config: Mapping[str, Any] | None = None, dataset_digest: str = "") -> ComparisonReport:
    """Score a trained model on the test part of ``series``'s chronological split."""
    base = model_base_activities(model)
    train, test = chronological_split(series, split_fraction)
    result = score_model(model, base, test, len(train))
    echo = {"split_fraction": split_fraction, "alpha": model.smoothing_alpha,
            "paradigms": [result.paradigm], "model_digest": model.training_digest}
    return _report(series, train, test, base, [result], echo, config, dataset_digest)


def _report(series, train, test, base, results, echo, config, dataset_digest) -> ComparisonReport:
    counts = {
        "total": len(series),
        "train": len(train),
        "test": len(test),
        "gap_samples": int(np.count_nonzero(series.labels == NULL)),
        "test_scored": int(np.count_nonzero(test.labels != NULL)),
    }
    if config:
        echo.update(config)
    return ComparisonReport(tuple(base), tuple(results), counts, echo, dataset_digest).check()
