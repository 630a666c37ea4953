import json

import numpy as np
import pytest

from usblab.errors import ConfigError
from usblab.experiments import (
    ExperimentConfig,
    KeystrokeParams,
    WebsiteParams,
    bulk_limits_table,
    derive_seed,
    load_config,
    read_feature_dataset,
    reproduce_tables,
    run_experiment,
    write_feature_dataset,
)
from usblab.fingerprint import load_classifier
from usblab.keystroke import load_hmm
from usblab.traceio import read_trace


def small_keystroke(out, seed=77):
    return ExperimentConfig(
        scenario="keystroke",
        master_seed=seed,
        out_dir=str(out),
        keystroke=KeystrokeParams(n_words=60, profiling_words=25, trials=10),
    )


def small_website(out, seed=78):
    return ExperimentConfig(
        scenario="website",
        master_seed=seed,
        out_dir=str(out),
        website=WebsiteParams(n_sites=3, trials_per_site=5, epochs=25, duration_us=2_000_000),
    )


def test_derive_seed_stable_and_namespaced():
    assert derive_seed(1, "a", 0) == derive_seed(1, "a", 0)
    assert derive_seed(1, "a", 0) != derive_seed(1, "a", 1)
    assert derive_seed(1, "a") != derive_seed(2, "a")
    assert derive_seed(1, "a") != derive_seed(1, "b")


def test_config_roundtrip_and_digest(tmp_path):
    cfg = small_keystroke(tmp_path / "run")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = load_config(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.digest() == cfg.digest()
    # run placement is not part of the experiment identity
    moved = ExperimentConfig.from_dict({**cfg.to_dict(), "out_dir": "elsewhere"})
    assert moved.digest() == cfg.digest()
    with pytest.raises(ConfigError):
        ExperimentConfig(scenario="tea-leaves")


def test_keystroke_run_artifacts(tmp_path):
    run = run_experiment(small_keystroke(tmp_path / "run"))
    assert (run / "dictionary.txt").exists()
    assert (run / "typist_profile.json").exists()
    model = load_hmm(run / "models" / "hmm.json")
    model.validate()
    doc = json.loads((run / "reports" / "keystroke_accuracy.json").read_text())
    assert 0.0 <= doc["top10"] <= doc["top50"] <= 1.0
    assert doc["config_digest"] and doc["master_seed"] == 77
    # traces saved in the standard format
    traces = sorted((run / "traces").glob("attack_*.trace"))
    assert len(traces) == 10
    spy = read_trace(traces[0])
    assert spy.metadata["scenario"] == "keystroke"


def test_website_run_artifacts(tmp_path):
    run = run_experiment(small_website(tmp_path / "run"))
    rows, labels, ids, window_ms = read_feature_dataset(run / "datasets" / "features.txt")
    assert len(rows) == 15 and window_ms == 5.0
    assert sorted(set(labels)) == ["site000", "site001", "site002"]
    # dataset layout: one directory per label with per-trial traces
    for label in set(labels):
        assert len(list((run / "datasets" / label).glob("trial_*.trace"))) == 5
    clf = load_classifier(run / "models" / "classifier.npz")
    assert sorted(clf.classes_) == ["site000", "site001", "site002"]
    cv = json.loads((run / "reports" / "cv_report.json").read_text())
    assert cv["top3"] >= cv["top1"]
    corr = json.loads((run / "reports" / "correlation.json").read_text())
    assert set(corr["per_site"]) == set(labels)


def test_feature_dataset_roundtrip(tmp_path):
    rows = [np.array([0.125, 0.25, 0.3]), np.array([0.2, 0.1, 0.4])]
    path = tmp_path / "features.txt"
    write_feature_dataset(path, rows, ["a", "b"], ["i0", "i1"], 5.0)
    rows2, labels, ids, window_ms = read_feature_dataset(path)
    assert labels == ["a", "b"] and ids == ["i0", "i1"] and window_ms == 5.0
    assert np.array_equal(rows2[0], rows[0]) and np.array_equal(rows2[1], rows[1])


def test_bulk_limits_table_exact_rows():
    table = bulk_limits_table()
    assert "53,248,000" in table and "13" in table
    assert "1,064,000" in table and "133" in table
    assert "7,616,000" in table and "119" in table
    assert "22,016,000" in table and "86" in table
    assert "40,960,000" in table and "40" in table


def test_reproduce_tables_absent_rows_and_idempotence(tmp_path):
    run = run_experiment(small_keystroke(tmp_path / "run"))
    ghost = tmp_path / "missing_run"
    ghost.mkdir()
    out1 = reproduce_tables([run, ghost], tmp_path / "tables")
    summary = json.loads((out1 / "tables_summary.json").read_text())
    assert summary["absent_runs"] == ["missing_run"]
    assert "run" in summary["runs_by_table"]["keystroke_accuracy"]
    first = {p.name: p.read_text() for p in out1.iterdir()}
    out2 = reproduce_tables([run, ghost], tmp_path / "tables")
    second = {p.name: p.read_text() for p in out2.iterdir()}
    assert first == second
