"""Supervised discrete HMM: counting estimator, Viterbi decoding, forward likelihood.

Observation symbols are the distinct codes seen in training plus one
reserved *unseen* symbol (always the last emission column) that absorbs any
code met only at decode time.
"""

from __future__ import annotations

import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels
from .errors import (
    CorruptModel,
    EmptyObservations,
    EmptySeries,
    ImpossibleSequence,
    InstanceTooLarge,
    InvariantViolation,
    NullLabelPresent,
    UnknownLabelToken,
    VersionMismatch,
)
from .paradigms import LabelSpace
from .sampling import NULL, SampleSeries, code_hex

log = logging.getLogger(__name__)

FORMAT_MAGIC = "gapmark-hmm"
FORMAT_VERSION = 1
ROW_TOL = 1e-9
DEFAULT_ALPHA = 0.01
BRUTE_FORCE_LIMIT = 10**7
UNSEEN_TOKEN = "<UNSEEN>"


def _check_stochastic(name: str, mat: np.ndarray, exc=InvariantViolation) -> None:
    if not np.all(np.isfinite(mat)) or mat.min(initial=0.0) < 0.0 or mat.max(initial=0.0) > 1.0:
        raise exc(f"{name} has entries outside [0, 1]")
    sums = mat.sum(axis=-1)
    bad = np.abs(sums - 1.0) > ROW_TOL
    if np.any(bad):
        where = np.flatnonzero(np.atleast_1d(bad))[0]
        raise exc(f"{name} row {where} sums to {np.atleast_1d(sums)[where]!r}, not 1")


@dataclass(frozen=True, eq=False)
class HmmModel:
    states: tuple[str, ...]
    alphabet: np.ndarray
    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray
    smoothing_alpha: float = DEFAULT_ALPHA
    delta_t: float | None = None
    paradigm: str = ""
    training_digest: str = ""
    n_sensors: int = 64
    fallback_rows: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "alphabet", np.asarray(self.alphabet, dtype=np.uint64))
        for name in ("transition", "emission", "initial"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_symbols(self) -> int:
        """Observed codes plus the unseen symbol."""
        return len(self.alphabet) + 1

    def validate(self, exc=InvariantViolation) -> "HmmModel":
        n, m = self.n_states, self.n_symbols
        if len(set(self.states)) != n:
            raise exc("state labels are not unique")
        if np.any(self.alphabet[1:] <= self.alphabet[:-1]):
            raise exc("alphabet codes must be unique and sorted")
        if self.transition.shape != (n, n) or self.emission.shape != (n, m) or self.initial.shape != (n,):
            raise exc("parameter shapes do not match the state set and alphabet")
        if not self.smoothing_alpha >= 0:
            raise exc("smoothing alpha must be non-negative")
        _check_stochastic("transition", self.transition, exc)
        _check_stochastic("emission", self.emission, exc)
        _check_stochastic("initial", self.initial, exc)
        return self

    def symbols(self, codes) -> np.ndarray:
        """Emission column for each code; codes outside the alphabet map to the unseen column."""
        codes = np.asarray(codes, dtype=np.uint64)
        idx = np.searchsorted(self.alphabet, codes)
        idx_clip = np.minimum(idx, max(len(self.alphabet) - 1, 0))
        hit = (idx < len(self.alphabet)) & (self.alphabet[idx_clip] == codes) if len(self.alphabet) else np.zeros(len(codes), bool)
        return np.where(hit, idx, len(self.alphabet)).astype(np.int64)

    @cached_property
    def _logs(self):
        with np.errstate(divide="ignore"):
            return (np.log(self.initial), np.ascontiguousarray(np.log(self.transition)),
                    np.ascontiguousarray(np.log(self.emission)))

    def structurally_equal(self, other: "HmmModel") -> bool:
        return (
            self.states == other.states
            and np.array_equal(self.alphabet, other.alphabet)
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.emission, other.emission)
            and np.array_equal(self.initial, other.initial)
            and self.smoothing_alpha == other.smoothing_alpha
            and self.delta_t == other.delta_t
            and self.paradigm == other.paradigm
            and self.training_digest == other.training_digest
            and self.n_sensors == other.n_sensors
            and self.fallback_rows == other.fallback_rows
        )


@dataclass(frozen=True)
class DecodedPath:
    state_indices: np.ndarray
    log_probability: float

    def __len__(self) -> int:
        return len(self.state_indices)

    def labels(self, model: HmmModel) -> list[str]:
        states = model.states
        return [states[i] for i in self.state_indices.tolist()]


def _normalise_rows(counts: np.ndarray, alpha: float):
    width = counts.shape[-1]
    denom = counts.sum(axis=-1, keepdims=True) + alpha * width
    empty = (denom == 0).ravel()
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = (counts + alpha) / denom
    if np.any(empty):
        probs = np.atleast_2d(probs)
        probs[empty] = 1.0 / width
        probs = probs.reshape(counts.shape)
    return probs, empty


def estimate(series: SampleSeries, space: LabelSpace, alpha: float = DEFAULT_ALPHA, *,
             drop_unused_extra: bool = False) -> HmmModel:
    """Count-based maximum-likelihood estimate with additive smoothing.

    ``a_ij = (n_ij + alpha) / (n_i + alpha*N)``, likewise for emissions
    (over the observed codes plus the unseen symbol) and for the initial
    distribution, which counts the first state of every calendar day.  With
    ``alpha == 0`` a row without any counts is set uniform and its state is
    listed in ``fallback_rows``.

    With ``drop_unused_extra`` the paradigm labels (``Unknown``, gap labels)
    that never occur in ``series`` are left out of the state set.
    """
    if not alpha >= 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if len(series) == 0:
        raise EmptySeries("cannot estimate a model from an empty series")
    if np.any(series.labels == NULL):
        raise NullLabelPresent("series still has annotation gaps; apply a paradigm first")

    states = space.labels
    if drop_unused_extra:
        present = {series.names[i] for i in np.unique(series.labels).tolist()}
        states = space.base_activities + tuple(lab for lab in space.extra_labels if lab in present)
    index = {name: i for i, name in enumerate(states)}
    lut = np.array([index.get(name, -1) for name in series.names], dtype=np.int64)
    s = lut[series.labels]
    if np.any(s < 0):
        bad = sorted({series.names[i] for i in np.unique(series.labels[s < 0]).tolist()})
        raise UnknownLabelToken(f"labels {bad} are not in the label space")
    n = len(states)

    alphabet = series.alphabet
    m = len(alphabet) + 1
    k = np.searchsorted(alphabet, series.codes).astype(np.int64)

    trans_counts = np.bincount(s[:-1] * n + s[1:], minlength=n * n).reshape(n, n).astype(np.float64)
    emit_counts = np.bincount(s * m + k, minlength=n * m).reshape(n, m).astype(np.float64)
    init_counts = np.bincount(s[series.segment_starts()], minlength=n).astype(np.float64)

    transition, t_empty = _normalise_rows(trans_counts, alpha)
    emission, e_empty = _normalise_rows(emit_counts, alpha)
    initial, _ = _normalise_rows(init_counts, alpha)
    fallback = tuple(states[i] for i in np.flatnonzero(t_empty | e_empty))
    if fallback:
        log.warning("uniform fallback rows for states without counts: %s", ", ".join(fallback))

    digest = hashlib.sha256()
    digest.update("\n".join(states).encode("utf-8"))
    digest.update(s.astype(np.int32).tobytes())
    digest.update(series.codes.tobytes())
    digest.update(series.timestamps.tobytes())

    model = HmmModel(
        states=states,
        alphabet=alphabet,
        transition=transition,
        emission=emission,
        initial=initial,
        smoothing_alpha=float(alpha),
        delta_t=series.delta_t,
        paradigm=space.paradigm.value,
        training_digest=digest.hexdigest(),
        n_sensors=series.n_sensors,
        fallback_rows=fallback,
    )
    return model.validate()


def _observation_symbols(model: HmmModel, observations) -> np.ndarray:
    codes = np.asarray(observations, dtype=np.uint64).ravel()
    if len(codes) == 0:
        raise EmptyObservations("cannot decode an empty observation sequence")
    return model.symbols(codes)


def viterbi_decode(model: HmmModel, observations) -> DecodedPath:
    """Most probable state path for a sequence of observation codes.

    Ties go to the lowest state index, for the final state and for every
    backpointer.
    """
    obs = _observation_symbols(model, observations)
    log_pi, log_a, log_b = model._logs
    path, logp = kernels.viterbi(log_pi, log_a, log_b, obs)
    if not math.isfinite(logp):
        raise ImpossibleSequence("every state path has zero probability")
    return DecodedPath(np.asarray(path, dtype=np.int64), float(logp))


def _enumerate_paths(model: HmmModel, obs: np.ndarray, limit: int, chunk: int = 1 << 18):
    """Yield ``(paths, scores)`` blocks over all N**T paths.

    Path number ``i`` has ``q_t = (i // N**t) % N``, so enumeration order is
    lexicographic on the reversed path.  Scores are accumulated left to right
    exactly as the Viterbi recursion does.
    """
    n, t_len = model.n_states, len(obs)
    total = n**t_len
    if total > limit:
        raise InstanceTooLarge(f"{n}**{t_len} = {total} paths exceed the brute-force limit {limit}")
    log_pi, log_a, log_b = model._logs
    powers = n ** np.arange(t_len, dtype=np.int64)
    for lo in range(0, total, chunk):
        ids = np.arange(lo, min(total, lo + chunk), dtype=np.int64)
        paths = (ids[:, None] // powers[None, :]) % n
        score = log_pi[paths[:, 0]] + log_b[paths[:, 0], obs[0]]
        for t in range(1, t_len):
            score = score + log_a[paths[:, t - 1], paths[:, t]]
            score = score + log_b[paths[:, t], obs[t]]
        yield paths, score


def brute_force_decode(model: HmmModel, observations, limit: int = BRUTE_FORCE_LIMIT) -> DecodedPath:
    """Exhaustive search over every state path (test oracle for :func:`viterbi_decode`).

    Among equally probable paths the one compared smallest from the last step
    backwards wins, which is the path lowest-index backpointers produce.
    """
    obs = _observation_symbols(model, observations)
    best_path, best = None, -math.inf
    for paths, score in _enumerate_paths(model, obs, limit):
        i = int(np.argmax(score))
        if best_path is None or score[i] > best:
            best_path, best = paths[i].copy(), float(score[i])
    if not math.isfinite(best):
        raise ImpossibleSequence("every state path has zero probability")
    return DecodedPath(best_path, best)


def brute_force_log_likelihood(model: HmmModel, observations, limit: int = BRUTE_FORCE_LIMIT) -> float:
    """log of the sum over all paths of P(path, obs), by enumeration."""
    obs = _observation_symbols(model, observations)
    parts = []
    for _, score in _enumerate_paths(model, obs, limit):
        top = score.max()
        if np.isfinite(top):
            parts.append(top + math.log(np.exp(score - top).sum()))
    if not parts:
        return -math.inf
    top = max(parts)
    return top + math.log(sum(math.exp(p - top) for p in parts))


def sequence_log_likelihood(model: HmmModel, observations) -> float:
    """log P(observations | model) via the scaled forward recursion."""
    obs = _observation_symbols(model, observations)
    return float(kernels.forward_loglik(model.initial, model.transition, model.emission, obs))


def _fmt(values) -> str:
    return " ".join(f"{v:.17e}" for v in np.asarray(values).tolist())


def save_model(model: HmmModel, sink) -> None:
    """Write ``model`` as versioned text; ``sink`` is a path or a text file object."""
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        f"n_states {model.n_states}",
        f"n_symbols {model.n_symbols}",
        f"delta_t {'none' if model.delta_t is None else repr(float(model.delta_t))}",
        f"paradigm {model.paradigm or 'none'}",
        f"alpha {model.smoothing_alpha!r}",
        f"n_sensors {model.n_sensors}",
        f"training_digest {model.training_digest or 'none'}",
        f"fallback_rows {len(model.fallback_rows)}",
        *model.fallback_rows,
        "states",
        *model.states,
        "alphabet",
        *(code_hex(c, model.n_sensors) for c in model.alphabet.tolist()),
        UNSEEN_TOKEN,
        "initial",
        _fmt(model.initial),
        "transition",
        *(_fmt(row) for row in model.transition),
        "emission",
        *(_fmt(row) for row in model.emission),
        "end",
    ]
    text = "\n".join(lines) + "\n"
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(text)


class _Reader:
    def __init__(self, lines: list[str]) -> None:
        self.lines = lines
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise CorruptModel("model file ends unexpectedly")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def keyed(self, key: str) -> str:
        parts = self.next().split(" ", 1)
        if len(parts) != 2 or parts[0] != key:
            raise CorruptModel(f"expected '{key} <value>' at line {self.pos}")
        return parts[1]

    def expect(self, word: str) -> None:
        if self.next() != word:
            raise CorruptModel(f"expected section '{word}' at line {self.pos}")

    def floats(self, count: int) -> np.ndarray:
        try:
            row = np.array([float(x) for x in self.next().split()], dtype=np.float64)
        except ValueError:
            raise CorruptModel(f"non-numeric probability at line {self.pos}") from None
        if len(row) != count:
            raise CorruptModel(f"line {self.pos}: expected {count} values, got {len(row)}")
        return row


def load_model(source) -> HmmModel:
    """Read a model written by :func:`save_model` and re-check all invariants."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    r = _Reader(text.splitlines())
    head = r.next().split()
    if len(head) != 2 or head[0] != FORMAT_MAGIC:
        raise CorruptModel("not a gapmark model file")
    try:
        version = int(head[1])
    except ValueError:
        raise CorruptModel(f"bad format version {head[1]!r}") from None
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {version}, this build reads {FORMAT_VERSION}")
    try:
        n = int(r.keyed("n_states"))
        m = int(r.keyed("n_symbols"))
        delta_raw = r.keyed("delta_t")
        delta_t = None if delta_raw == "none" else float(delta_raw)
        paradigm = r.keyed("paradigm")
        alpha = float(r.keyed("alpha"))
        n_sensors = int(r.keyed("n_sensors"))
        digest = r.keyed("training_digest")
        n_fallback = int(r.keyed("fallback_rows"))
    except ValueError as exc:
        raise CorruptModel(f"bad header value: {exc}") from None
    if n < 1 or m < 1 or n_fallback < 0:
        raise CorruptModel("header sizes out of range")
    fallback = tuple(r.next() for _ in range(n_fallback))
    r.expect("states")
    states = tuple(r.next() for _ in range(n))
    r.expect("alphabet")
    try:
        alphabet = np.array([int(r.next(), 16) for _ in range(m - 1)], dtype=np.uint64)
    except ValueError:
        raise CorruptModel("bad alphabet code") from None
    if r.next() != UNSEEN_TOKEN:
        raise CorruptModel("alphabet must end with the unseen symbol")
    r.expect("initial")
    initial = r.floats(n)
    r.expect("transition")
    transition = np.vstack([r.floats(n) for _ in range(n)])
    r.expect("emission")
    emission = np.vstack([r.floats(m) for _ in range(n)])
    r.expect("end")
    model = HmmModel(
        states=states,
        alphabet=alphabet,
        transition=transition,
        emission=emission,
        initial=initial,
        smoothing_alpha=alpha,
        delta_t=delta_t,
        paradigm="" if paradigm == "none" else paradigm,
        training_digest="" if digest == "none" else digest,
        n_sensors=n_sensors,
        fallback_rows=fallback,
    )
    return model.validate(exc=CorruptModel)


def dumps_model(model: HmmModel) -> str:
    buf = io.StringIO()
    save_model(model, buf)
    return buf.getvalue()


def decode_labels(model: HmmModel, codes: Sequence[int] | np.ndarray) -> list[str]:
    return viterbi_decode(model, codes).labels(model)
