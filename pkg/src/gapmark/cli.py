"""``gapmark`` command-line harness.

Subcommands::

    gapmark ingest   --input events.txt [--delta-t 7|auto] [--out DIR]
    gapmark train    --input events.txt --paradigm p3 [--model FILE]
    gapmark evaluate --input events.txt --paradigms p1,p2,p3,hybrid
    gapmark evaluate --input events.txt --model FILE
    gapmark synth    --synth-preset aruba-like --seed 3 [--out DIR]

Any of ``--input``, ``--samples`` (a CSV written by ``ingest``) or
``--synth-preset`` can feed ``ingest``, ``train`` and ``evaluate``.  A
``--config`` file holds flat ``key = value`` lines using the long flag names;
flags given on the command line win.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .errors import DataError, GapmarkError, InvalidConfig, InvariantViolation, UsageError
from .evaluation import compare_paradigms, evaluate_saved_model
from .events import EventStream, build_annotation_intervals, read_stream
from .hmm import DEFAULT_ALPHA, estimate, load_model, save_model
from .paradigms import DEFAULT_RULES, Paradigm, apply_paradigm, find_gap_runs, load_rules, real_activities
from .sampling import LATCH, PULSE, assign_labels, build_sensor_map, chronological_split, read_csv, recommend_delta_t, resample, write_csv
from .synth import PRESETS, generate, preset

log = logging.getLogger("gapmark")

DEFAULT_DELTA_T = 7.0
DEFAULT_TRAIN_FRACTION = 0.6
ALL_PARADIGMS = ("P1", "P2", "P3", "Hybrid")


@dataclass
class RunConfig:
    input: str | None = None
    samples: str | None = None
    synth_preset: str | None = None
    delta_t: float | str = DEFAULT_DELTA_T
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    paradigms: tuple[str, ...] = ALL_PARADIGMS
    rules: str | None = None
    alpha: float = DEFAULT_ALPHA
    out: str = "out"
    seed: int = 0
    on_malformed: str = "fail"
    sampling: str = LATCH
    # synth-only knobs
    gap_fraction: float | None = None
    gap_mode: str | None = None
    duration: float | None = None
    signatures: bool | None = None

    def validate(self, need_source: bool = True) -> "RunConfig":
        sources = [s for s in (self.input, self.samples, self.synth_preset) if s]
        if need_source and len(sources) != 1:
            raise InvalidConfig("give exactly one of --input, --samples or --synth-preset")
        if self.delta_t != "auto" and not (isinstance(self.delta_t, float) and self.delta_t > 0):
            raise InvalidConfig(f"--delta-t must be positive or 'auto', got {self.delta_t!r}")
        if not 0 < self.train_fraction < 1:
            raise InvalidConfig(f"--train-fraction must lie strictly between 0 and 1, got {self.train_fraction}")
        if not self.alpha >= 0:
            raise InvalidConfig(f"--alpha must be non-negative, got {self.alpha}")
        if not self.paradigms:
            raise InvalidConfig("--paradigms is empty")
        if self.on_malformed not in ("fail", "skip"):
            raise InvalidConfig("--on-malformed must be 'fail' or 'skip'")
        if self.sampling not in (LATCH, PULSE):
            raise InvalidConfig(f"--sampling must be {LATCH!r} or {PULSE!r}")
        if self.synth_preset and self.synth_preset not in PRESETS:
            raise InvalidConfig(f"unknown synth preset {self.synth_preset!r}")
        return self

    def echo(self) -> dict[str, Any]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items() if v is not None}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_delta(text: str) -> float | str:
    if str(text).strip().lower() == "auto":
        return "auto"
    return float(text)


def _parse_paradigms(text: str) -> tuple[str, ...]:
    return tuple(Paradigm.parse(p).value for p in str(text).split(",") if p.strip())


_CONVERTERS = {
    "delta_t": _parse_delta,
    "train_fraction": float,
    "alpha": float,
    "seed": int,
    "paradigms": _parse_paradigms,
    "gap_fraction": float,
    "duration": float,
    "signatures": _parse_bool,
}
_KEYS = {f.name for f in fields(RunConfig)}


def _convert(key: str, value: Any) -> Any:
    conv = _CONVERTERS.get(key)
    if conv is None or not isinstance(value, str):
        return value
    try:
        return conv(value)
    except ValueError as exc:
        raise InvalidConfig(f"bad value for {key}: {exc}") from None


def read_config_file(path) -> dict[str, Any]:
    """Parse flat ``key = value`` lines; ``#`` comments and blank lines are ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfig(f"cannot read config file {path}: {exc}") from None
    out: dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _KEYS:
            raise InvalidConfig(f"{path}:{line_no}: expected 'key = value' with a known key, got {raw!r}")
        out[key] = _convert(key, value.strip())
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    merged: dict[str, Any] = {}
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in _KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = _convert(key, value)
    if "out" not in merged and os.environ.get("GAPMARK_OUT"):
        merged["out"] = os.environ["GAPMARK_OUT"]
    if isinstance(merged.get("delta_t"), int):
        merged["delta_t"] = float(merged["delta_t"])
    return RunConfig(**merged)


# ---------------------------------------------------------------------------
# loading


@dataclass
class Loaded:
    series: Any
    stream: EventStream | None = None
    digest: str = ""
    delta_t: float = DEFAULT_DELTA_T
    recommended: tuple[float, float] | None = None



def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _from_stream(stream: EventStream, cfg: RunConfig) -> Loaded:
    recommended = recommend_delta_t(stream) if len(stream) >= 2 else None
    if cfg.delta_t == "auto":
        if recommended is None:
            raise DataError("delta_t 'auto' needs at least 2 events")
        delta_t = (recommended[0] + recommended[1]) / 2
    else:
        delta_t = float(cfg.delta_t)
    sensor_map = build_sensor_map(stream)
    series = resample(stream, sensor_map, delta_t, mode=cfg.sampling)
    series = assign_labels(series, build_annotation_intervals(stream))
    return Loaded(series, stream, stream.source_digest, delta_t, recommended)


def load_input(cfg: RunConfig) -> Loaded:
    if cfg.samples:
        # the CSV's own spacing wins over --delta-t
        try:
            series = read_csv(cfg.samples)
        except OSError as exc:
            raise DataError(f"cannot read {cfg.samples}: {exc}") from None
        return Loaded(series, None, _file_digest(cfg.samples), series.delta_t)
    if cfg.input:
        try:
            stream = read_stream(cfg.input, on_malformed=cfg.on_malformed)
        except OSError as exc:
            raise DataError(f"cannot read {cfg.input}: {exc}") from None
        if stream.skipped_count:
            log.warning("skipped %d malformed lines", stream.skipped_count)
        return _from_stream(stream, cfg)
    stream, _, _ = generate(preset(cfg.synth_preset, seed=cfg.seed, **_synth_overrides(cfg)))
    return _from_stream(stream, cfg)


def _synth_overrides(cfg: RunConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if cfg.gap_fraction is not None:
        out["gap_fraction"] = cfg.gap_fraction
    if cfg.gap_mode is not None:
        out["gap_mode"] = cfg.gap_mode
    if cfg.duration is not None:
        out["duration"] = cfg.duration
    if cfg.signatures is not None:
        out["pair_signatures"] = cfg.signatures
    return out


def _rules(cfg: RunConfig):
    return load_rules(cfg.rules) if cfg.rules else DEFAULT_RULES


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(cfg: RunConfig, loaded: Loaded) -> dict[str, Any]:
    run = cfg.echo()
    run["delta_t"] = loaded.delta_t
    return {"run": run, "input_digest": loaded.digest, "version": __version__}


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig) -> int:
    loaded = load_input(cfg)
    series = loaded.series
    out = _out_dir(cfg)
    csv_path = out / "samples.csv"
    write_csv(series, csv_path)
    labels = series.label_list()
    counts = Counter(lab for lab in labels if lab is not None)
    gaps = int(series.null_mask().sum())
    lines = []
    if loaded.stream is not None:
        lines.append(f"events:           {len(loaded.stream)}")
    lines += [
        f"sensors:          {series.n_sensors}",
        f"delta_t:          {loaded.delta_t:g} s",
        f"samples:          {len(series)}",
        f"gap samples:      {gaps} ({gaps / len(series):.2%})",
        f"gap runs:         {len(find_gap_runs(series))}",
        f"activities:       {len(counts)}",
    ]
    lines += [f"  {name:<24}{counts[name]}" for name in sorted(counts)]
    if loaded.recommended is not None:
        lo, hi = loaded.recommended
        lines.append(f"recommended delta_t: {lo:g} .. {hi:g} s")
    lines.append(f"wrote {csv_path}")
    print("\n".join(lines))
    return 0


def cmd_train(cfg: RunConfig, paradigm: str, model_path: str | None) -> int:
    loaded = load_input(cfg)
    series = loaded.series
    base = real_activities(series)
    train, _ = chronological_split(series, cfg.train_fraction)
    p = Paradigm.parse(paradigm)
    train_t, space = apply_paradigm(train, p, _rules(cfg), base_activities=base)
    model = estimate(train_t, space, cfg.alpha, drop_unused_extra=True)
    path = Path(model_path) if model_path else _out_dir(cfg) / f"model-{p.value.lower()}.hmm"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    n_star = model.n_states - len(base) if p in (Paradigm.P3, Paradigm.HYBRID) else 0
    print(f"paradigm:  {p.value}")
    print(f"N_total:   {model.n_states}")
    print(f"M_total:   {len(model.alphabet)} observed codes (+1 unseen)")
    if p in (Paradigm.P3, Paradigm.HYBRID):
        print(f"N*:        {n_star}")
    if model.fallback_rows:
        print(f"uniform fallback rows: {', '.join(model.fallback_rows)}")
    print(f"trained on {len(train_t)} samples; wrote {path}")
    return 0


def cmd_evaluate(cfg: RunConfig, model_path: str | None) -> int:
    loaded = load_input(cfg)
    echo = _echo(cfg, loaded)
    if model_path:
        try:
            model = load_model(model_path)
        except OSError as exc:
            raise DataError(f"cannot read model {model_path}: {exc}") from None
        echo["model_file_digest"] = _file_digest(model_path)
        report = evaluate_saved_model(model, loaded.series, cfg.train_fraction, echo, loaded.digest)
    else:
        report = compare_paradigms(loaded.series, cfg.train_fraction, cfg.paradigms, cfg.alpha,
                                   _rules(cfg), echo, loaded.digest)
    out = _out_dir(cfg)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    print(report.render())
    print(f"wrote {out / 'report.csv'} and {out / 'report.json'}")
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    name = cfg.synth_preset or "aruba-like"
    config = preset(name, seed=cfg.seed, **_synth_overrides(cfg))
    stream, gapped, truth = generate(config)
    out = _out_dir(cfg)
    events_path, truth_path, gapped_path = out / "events.txt", out / "truth.csv", out / "gapped.csv"
    events_path.write_text(stream.to_text(), encoding="utf-8")
    write_csv(truth, truth_path)
    write_csv(gapped, gapped_path)
    gaps = int(gapped.null_mask().sum())
    print(f"preset {name}, seed {cfg.seed}: {len(stream)} events, {len(truth)} samples, "
          f"{len(config.activities)} activities, {len(config.sensors)} sensors, "
          f"{gaps / max(len(truth), 1):.2%} unlabelled")
    print(f"wrote {events_path}, {truth_path} and {gapped_path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, source: bool = True) -> None:
    if source:
        src = p.add_argument_group("input")
        src.add_argument("--input", help="CASAS-style event file")
        src.add_argument("--samples", help="sample CSV written by 'ingest'")
        src.add_argument("--synth-preset", choices=sorted(PRESETS), help="generate the input instead")
        p.add_argument("--delta-t", help="sampling interval in seconds, or 'auto' (default 7)")
        p.add_argument("--on-malformed", choices=("fail", "skip"), help="malformed event lines (default fail)")
        p.add_argument("--sampling", choices=(LATCH, PULSE), help="resampling mode (default latch)")
    p.add_argument("--out", help="output directory (default $GAPMARK_OUT or ./out)")
    p.add_argument("--seed", type=int, help="synth seed (default 0)")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--gap-fraction", type=float, help="synth: share of each activity's edges left unlabelled")
    p.add_argument("--gap-mode", choices=("boundary", "uniform"), help="synth: where gaps go")
    p.add_argument("--duration", type=float, help="synth: seconds of data to generate")
    p.add_argument("--no-signatures", dest="signatures", action="store_const", const=False,
                   help="synth: gap samples use their true activity's profile")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gapmark", description="Annotation-gap paradigms for HMM activity recognition.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="resample an event stream and print statistics")
    _add_common(p)

    p = sub.add_parser("train", help="train one paradigm's HMM on the training split")
    _add_common(p)
    p.add_argument("--paradigm", default="p3", help="p1, p2, p3 or hybrid (default p3)")
    p.add_argument("--train-fraction", type=float, help="chronological training share (default 0.6)")
    p.add_argument("--rules", help="semantic rule file for hybrid ('A -> B' per line)")
    p.add_argument("--alpha", type=float, help="additive smoothing (default 0.01)")
    p.add_argument("--model", help="model output path (default OUT/model-<paradigm>.hmm)")

    p = sub.add_parser("evaluate", help="score paradigms (or a saved model) on the test split")
    _add_common(p)
    p.add_argument("--paradigms", help="comma list of p1,p2,p3,hybrid (default all four)")
    p.add_argument("--train-fraction", type=float, help="chronological training share (default 0.6)")
    p.add_argument("--rules", help="semantic rule file for hybrid")
    p.add_argument("--alpha", type=float, help="additive smoothing (default 0.01)")
    p.add_argument("--model", help="score this saved model instead of training")

    p = sub.add_parser("synth", help="write a synthetic event stream and its ground truth")
    _add_common(p, source=False)
    p.add_argument("--synth-preset", help=f"preset name ({', '.join(sorted(PRESETS))}; default aruba-like)")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    if args.command == "synth":
        cfg.validate(need_source=False)
        return cmd_synth(cfg)
    cfg.validate()
    if args.command == "ingest":
        return cmd_ingest(cfg)
    if args.command == "train":
        try:
            paradigm = Paradigm.parse(args.paradigm).value
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from None
        return cmd_train(cfg, paradigm, args.model)
    return cmd_evaluate(cfg, getattr(args, "model", None))


def main(argv: Sequence[str] | None = None) -> int:
    try:
        return run(argv)
    except UsageError as exc:
        print(f"gapmark: usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"gapmark: data error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"gapmark: internal error: {exc}", file=sys.stderr)
        return 3
    except GapmarkError as exc:  # pragma: no cover - every subclass is handled above
        print(f"gapmark: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
