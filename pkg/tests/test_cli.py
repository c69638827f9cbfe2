import json

import numpy as np
import pytest
import yaml

from lineage_rfs.cli import main
from lineage_rfs.config import ConfigError, dump_config, load_config, parse_config
from lineage_rfs.io import FileFormatError, read_detections, read_trackset, write_detections, write_trackset
from lineage_rfs.measurement import Detection, DetectionFrame
from lineage_rfs.simulator import ScenarioConfig, generate_detections, generate_truth

SMALL = {"scenario": {"frames": 12, "initial_cells": 3, "clutter_rate": 5.0},
         "sensor": {"clutter_rate": 5.0},
         "filter": {"gibbs_samples": 100, "cap": 100}}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return str(path)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_simulate_track_evaluate_round_trip(tmp_path, small_config, capsys):
    sim, trk, ev = tmp_path / "sim", tmp_path / "trk", tmp_path / "ev"
    assert main(["simulate", "--config", small_config, "--out", str(sim)]) == 0
    assert len(read_detections(sim / "detections.jsonl")) == 12
    assert main(["track", "--config", small_config, "--detections", str(sim / "detections.jsonl"),
                 "--variant", "pa", "--out", str(trk)]) == 0
    for name in ("tracks.json", "stats.csv", "config_used.yaml", "cardinality.png", "background.png",
                 "divisions.png"):
        assert (trk / name).exists(), name
    lines = (trk / "stats.csv").read_text().splitlines()
    assert lines[0].startswith("frame,n_hypotheses,cardinality_mean") and len(lines) == 13
    capsys.readouterr()
    assert main(["evaluate", "--tracks", str(trk / "tracks.json"), "--truth", str(sim / "truth.json"),
                 "--out", str(ev)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert 0.0 <= summary["tra"] <= 1.0 and summary["mean_ospa"] <= 25.0
    for name in ("ospa.csv", "ospa2.csv", "mitosis_error.csv", "tra.json", "ospa.png"):
        assert (ev / name).exists(), name
    assert main(["stats", str(trk), "--truth", str(sim / "truth.json"), "--no-plots"]) == 0
    assert "mean_abs_cardinality_error" in json.loads((trk / "summary.json").read_text())


def test_outputs_are_byte_reproducible(tmp_path, small_config):
    main(["simulate", "--config", small_config, "--seed", "5", "--out", str(tmp_path / "a")])
    main(["simulate", "--config", small_config, "--seed", "5", "--out", str(tmp_path / "b")])
    for name in ("truth.json", "detections.jsonl"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)
    det = str(tmp_path / "a" / "detections.jsonl")
    for out in ("ta", "tb"):
        main(["track", "--config", small_config, "--detections", det, "--variant", "ua", "--no-plots",
              "--out", str(tmp_path / out)])
    for name in ("tracks.json", "stats.csv", "config_used.yaml"):
        assert read(tmp_path / "ta" / name) == read(tmp_path / "tb" / name)


def test_evaluating_truth_against_itself(tmp_path, small_config, capsys):
    main(["simulate", "--config", small_config, "--out", str(tmp_path)])
    capsys.readouterr()
    truth = str(tmp_path / "truth.json")
    assert main(["evaluate", "--tracks", truth, "--truth", truth, "--no-plots", "--out", str(tmp_path / "e")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["tra"] == 1.0 and summary["mean_ospa"] == 0.0 and summary["mean_ospa2"] == 0.0


def test_zero_frames_gives_empty_outputs(tmp_path):
    cfg = tmp_path / "empty.yaml"
    cfg.write_text(yaml.safe_dump({"scenario": {"frames": 0}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "detections.jsonl").read_text() == ""
    assert main(["track", "--config", str(cfg), "--detections", str(tmp_path / "s" / "detections.jsonl"),
                 "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "stats.csv").read_text().count("\n") == 1
    assert read_trackset(tmp_path / "t" / "tracks.json").tracks == {}


def test_errors_map_to_exit_codes(tmp_path, capsys):
    assert main(["track", "--detections", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"frame": 1, "detections": []}\n{"frame": 2, "detections": [{"x": 1}]}\n')
    assert main(["track", "--detections", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bad.jsonl:2" in capsys.readouterr().err
    cfg = tmp_path / "c.yaml"
    cfg.write_text("filter:\n  gibbs: 10\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "gibbs" in capsys.readouterr().err


def test_detection_file_round_trip(tmp_path):
    sc = ScenarioConfig(initial_cells=4, frames=8, seed=2)
    frames = generate_detections(generate_truth(sc), sc)
    path = tmp_path / "d.jsonl"
    write_detections(path, frames)
    back = read_detections(path)
    assert [f.frame for f in back] == [f.frame for f in frames]
    for a, b in zip(frames, back):
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.features, b.features)


def test_detection_reader_rejects_unordered_frames(tmp_path):
    path = tmp_path / "d.jsonl"
    write_detections(path, [DetectionFrame(2, []), DetectionFrame(1, [Detection([1, 1], [0.5, 0.5])])])
    with pytest.raises(FileFormatError):
        read_detections(path)


def test_trackset_round_trip_keeps_lineage(tmp_path):
    truth = generate_truth(ScenarioConfig(initial_cells=8, mitosis_prob=0.2, frames=15, seed=1))
    path = tmp_path / "t.json"
    write_trackset(path, truth)
    back = read_trackset(path)
    assert set(back.tracks) == set(truth.tracks)
    assert back.lineage.to_dict() == truth.lineage.to_dict()
    assert back.modes == truth.modes


def test_config_round_trip_and_defaults(tmp_path):
    cfg = load_config(None)
    assert cfg.filter.variant == "pa" and cfg.sensor.clutter_rate == 30.0
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    again = load_config(str(path))
    assert dump_config(again) == dump_config(cfg)
    assert again.filter_config("ef").variant == "ef"


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"filter": {"variant": "zz"}},
    {"scenario": {"unknown": 3}},
    {"sensor": {"appearance": "table"}},
    {"metrics": 5},
])
def test_invalid_configs_are_rejected(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_config_overrides_reach_the_models():
    cfg = parse_config({"sensor": {"sigma_eps": 3.0, "clutter_rate": 12.0}, "filter": {"unknown_detection": True}})
    models = cfg.models()
    assert models.sensor.clutter_rate == 12.0
    assert np.allclose(models.sensor.R, 9.0 * np.eye(2))
    assert models.birth.known_pd is None
