import json

from usblab.cli import main
from usblab.experiments import ExperimentConfig, KeystrokeParams


def small_config(tmp_path, **kw):
    cfg = ExperimentConfig(
        scenario="keystroke",
        master_seed=55,
        out_dir=str(tmp_path / "run"),
        keystroke=KeystrokeParams(n_words=50, profiling_words=20, trials=6),
        **kw,
    )
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def test_evaluate_keystroke_from_config(tmp_path, capsys):
    code = main(["evaluate", str(small_config(tmp_path)), "--scenario", "keystroke"])
    out = capsys.readouterr().out
    assert code == 0
    assert "Top-10" in out and "run directory" in out


def test_train_hmm_then_decode(tmp_path, capsys):
    cfg_path = small_config(tmp_path)
    assert main(["train-hmm", str(cfg_path)]) == 0
    capsys.readouterr()
    run = tmp_path / "run"
    trace = sorted(run.glob("traces/profile_*.trace"))[0]
    code = main(
        [
            "decode",
            "--model", str(run / "models" / "hmm.json"),
            "--dictionary", str(run / "dictionary.txt"),
            "--trace", str(trace),
            "--top", "5",
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert len(out.strip().splitlines()) == 5


def test_sanitize_command(tmp_path, capsys):
    cfg_path = small_config(tmp_path)
    assert main(["simulate", str(cfg_path)]) == 0
    capsys.readouterr()
    code = main(["sanitize", "--traces", str(tmp_path / "run" / "traces"), "--out", str(tmp_path / "san")])
    out = capsys.readouterr().out
    assert code == 0 and "kept" in out
    doc = json.loads((tmp_path / "san" / "sanitize.json").read_text())
    assert doc["kept"]


def test_report_command(tmp_path, capsys):
    cfg_path = small_config(tmp_path)
    assert main(["evaluate", str(cfg_path)]) == 0
    capsys.readouterr()
    code = main(["report", "--runs", str(tmp_path / "run"), "--out", str(tmp_path / "tables")])
    assert code == 0
    table = (tmp_path / "tables" / "table_bulk_limits.txt").read_text()
    assert "53,248,000" in table


def test_exit_code_on_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": "nonsense"}))
    code = main(["evaluate", str(bad)])
    err = capsys.readouterr().err
    assert code == 2 and "configuration error" in err


def test_exit_code_on_missing_traces(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = main(["sanitize", "--traces", str(tmp_path / "empty")])
    assert code == 2
