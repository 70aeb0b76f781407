import json

import pytest

from gapmark import cli
from gapmark.errors import InvariantViolation
from gapmark.events import Annotation, Marker, SensorEvent, format_timestamp
from gapmark.hmm import load_model

from _util import T0


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def two_pair_stream(path):
    """Sleeping, gap, Bed_To_Toilet, gap, Sleeping at 1 s resolution, both gaps early."""
    plan = [("Sleeping", 0, 20), (None, 20, 26), ("Bed_To_Toilet", 26, 36), (None, 36, 40), ("Sleeping", 40, 100)]
    lines = []
    for act, a, b in plan:
        for t in range(a, b):
            ann = None
            if act and t == a:
                ann = Annotation(act, Marker.BEGIN)
            elif act and t == b - 1:
                ann = Annotation(act, Marker.END)
            lines.append(SensorEvent(T0 + t * 1_000_000, f"M00{t % 3 + 1}", t % 2 == 0, ann,
                                     "ON" if t % 2 == 0 else "OFF").to_line())
    path.write_text("\n".join(lines) + "\n")
    return path


def test_ingest_fixture(capsys, tmp_path, fixture_dir):
    code, out, _ = run(capsys, "ingest", "--input", fixture_dir / "two_activities.txt", "--out", tmp_path)
    assert code == 0
    assert "events:           20" in out
    assert "activities:       2" in out and "gap runs:         1" in out
    assert "samples:          18" in out
    assert "recommended delta_t:" in out
    assert (tmp_path / "samples.csv").read_text().startswith("timestamp,code_hex,label\n")


def test_ingest_empty_file(capsys, tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    code, _, err = run(capsys, "ingest", "--input", empty, "--out", tmp_path)
    assert code == 2 and "data error" in err


def test_ingest_synth_preset_sample_count(capsys, tmp_path):
    code, out, _ = run(capsys, "ingest", "--synth-preset", "aruba-like", "--duration", 7000, "--out", tmp_path)
    assert code == 0
    assert f"samples:          {7000 // 7 + 1}" in out
    assert "sensors:          34" in out


def test_ingest_auto_delta(capsys, tmp_path, fixture_dir):
    code, out, _ = run(capsys, "ingest", "--input", fixture_dir / "two_activities.txt", "--delta-t", "auto",
                       "--out", tmp_path)
    # 120 s over 19 gaps: range (3.157.., 4.105..), midpoint 3.63..
    assert code == 0 and "delta_t:          3.63158 s" in out


@pytest.mark.parametrize("paradigm,extra", [("p1", 0), ("p2", 1), ("p3", 2), ("hybrid", 2)])
def test_train_state_counts(capsys, tmp_path, paradigm, extra):
    src = two_pair_stream(tmp_path / "events.txt")
    model_path = tmp_path / f"{paradigm}.hmm"
    code, out, _ = run(capsys, "train", "--input", src, "--delta-t", 1, "--paradigm", paradigm,
                       "--model", model_path, "--out", tmp_path)
    assert code == 0
    model = load_model(model_path)
    assert model.n_states == 2 + extra
    assert f"N_total:   {2 + extra}" in out
    if paradigm in ("p3", "hybrid"):
        assert "N*:        2" in out


def test_train_then_evaluate_model(capsys, tmp_path):
    src = two_pair_stream(tmp_path / "events.txt")
    run(capsys, "train", "--input", src, "--delta-t", 1, "--paradigm", "p2", "--out", tmp_path)
    code, out, _ = run(capsys, "evaluate", "--input", src, "--delta-t", 1, "--model", tmp_path / "model-p2.hmm",
                       "--out", tmp_path / "ev")
    assert code == 0 and out.count("== P2") == 1
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["config"]["model_digest"] == load_model(tmp_path / "model-p2.hmm").training_digest


def test_evaluate_four_tables_and_determinism(capsys, tmp_path):
    args = ["evaluate", "--synth-preset", "small", "--duration", 14000, "--seed", 5, "--paradigms", "p1,p2,p3,hybrid"]
    code, out, _ = run(capsys, *args, "--out", tmp_path / "a")
    assert code == 0 and out.count("== ") == 4
    run(capsys, *args, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    counts = {p["paradigm"]: p["test_samples"] for p in report["paradigms"]}
    assert len(set(counts.values())) == 1
    run_cfg = report["config"]["run"]
    assert run_cfg["synth_preset"] == "small" and run_cfg["seed"] == 5 and run_cfg["train_fraction"] == 0.6
    assert report["dataset_digest"] == report["config"]["input_digest"] != ""


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# experiment\nsynth_preset = small\nduration = 7000\nparadigms = p1\nseed = 2\n")
    code, out, _ = run(capsys, "evaluate", "--config", cfg, "--paradigms", "p2", "--out", tmp_path)
    assert code == 0 and "== P2" in out and "== P1" not in out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["run"]["seed"] == 2


def test_bad_config_key(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(capsys, "evaluate", "--config", cfg, "--synth-preset", "small")
    assert code == 1 and "usage error" in err


def test_out_dir_from_environment(capsys, tmp_path, monkeypatch, fixture_dir):
    monkeypatch.setenv("GAPMARK_OUT", str(tmp_path / "envout"))
    code, _, _ = run(capsys, "ingest", "--input", fixture_dir / "two_activities.txt")
    assert code == 0 and (tmp_path / "envout" / "samples.csv").exists()


def test_samples_csv_input(capsys, tmp_path, fixture_dir):
    run(capsys, "ingest", "--input", fixture_dir / "two_activities.txt", "--out", tmp_path)
    code, out, _ = run(capsys, "train", "--samples", tmp_path / "samples.csv", "--paradigm", "p1", "--out", tmp_path)
    assert code == 0 and "N_total:   2" in out


@pytest.mark.parametrize("argv", [
    ["ingest"],
    ["ingest", "--input", "a.txt", "--synth-preset", "small"],
    ["ingest", "--synth-preset", "small", "--delta-t", "-7"],
    ["evaluate", "--synth-preset", "small", "--train-fraction", "1.0"],
    ["evaluate", "--synth-preset", "small", "--paradigms", "p9"],
    ["train", "--synth-preset", "small", "--paradigm", "p9"],
])
def test_usage_errors_exit_1(capsys, tmp_path, argv):
    code, _, err = run(capsys, *argv, "--out", tmp_path)
    assert code == 1 and "usage error" in err


@pytest.mark.parametrize("argv", [["frobnicate"], ["ingest", "--no-such-flag"], []])
def test_argparse_errors_exit_1(capsys, argv):
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 1


def test_missing_input_is_data_error(capsys, tmp_path):
    code, _, err = run(capsys, "ingest", "--input", tmp_path / "nope.txt", "--out", tmp_path)
    assert code == 2


def test_malformed_input(capsys, tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("2010-11-04 00:00:00 M001 ON\nnonsense\n2010-11-04 00:00:14 M001 OFF\n")
    code, _, err = run(capsys, "ingest", "--input", bad, "--out", tmp_path)
    assert code == 2 and "line 2" in err
    code, out, _ = run(capsys, "ingest", "--input", bad, "--on-malformed", "skip", "--out", tmp_path)
    assert code == 0 and "events:           2" in out


def test_internal_error_exit_3(capsys, monkeypatch, tmp_path, fixture_dir):
    def boom(cfg):
        raise InvariantViolation("broken")

    monkeypatch.setattr(cli, "cmd_ingest", boom)
    code, _, err = run(capsys, "ingest", "--input", fixture_dir / "two_activities.txt", "--out", tmp_path)
    assert code == 3 and "internal error" in err


def test_synth_command(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--synth-preset", "aruba-like", "--duration", 7000, "--seed", 1,
                       "--out", tmp_path / "a")
    assert code == 0
    for name in ("events.txt", "truth.csv", "gapped.csv"):
        assert (tmp_path / "a" / name).stat().st_size > 0
    run(capsys, "synth", "--synth-preset", "aruba-like", "--duration", 7000, "--seed", 1, "--out", tmp_path / "b")
    for name in ("events.txt", "truth.csv", "gapped.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    code, _, err = run(capsys, "synth", "--gap-fraction", 1.5, "--out", tmp_path / "c")
    assert code == 1 and "gap_fraction" in err


def test_synth_output_feeds_ingest(capsys, tmp_path):
    run(capsys, "synth", "--synth-preset", "small", "--duration", 700, "--out", tmp_path)
    code, out, _ = run(capsys, "ingest", "--input", tmp_path / "events.txt", "--out", tmp_path / "i")
    assert code == 0 and "samples:          101" in out
    first_line = (tmp_path / "events.txt").read_text().splitlines()[0]
    assert first_line.startswith(format_timestamp(T0))
