"""Report serialization, weight files, and the command-line driver."""

from __future__ import annotations

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from promptflat.cli import main
from promptflat.errors import DegenerateInput, FormatError, IoError, ShapeMismatch
from promptflat.models.logistic import LogisticModel
from promptflat.models.weights import (MAGIC, load_model, load_prefix,
                                       load_transformer, read_weight_file,
                                       save_model, save_prefix,
                                       write_weight_file)
from promptflat.models.transformer import TransformerConfig
from promptflat.reports import (canonical_json, csv_rows, csv_text,
                                write_report, write_text_atomic)

SAMPLE = Path(__file__).resolve().parent.parent / "sample_data"


# -- canonical json -----------------------------------------------------

def test_canonical_json_sorts_keys_and_formats_floats():
    text = canonical_json({"b": 0.1, "a": 1 / 3, "c": 7})
    assert text == '{"a": 0.333333333333, "b": 0.1, "c": 7}'


def test_canonical_json_scalar_forms():
    assert canonical_json(None) == "null"
    assert canonical_json(True) == "true"
    assert canonical_json(False) == "false"
    assert canonical_json(12) == "12"
    assert canonical_json(1e20) == "1e+20"
    assert canonical_json("café") == '"café"'
    assert canonical_json((1, [2, None])) == "[1, [2, null]]"


def test_canonical_json_uses_to_dict():
    class Wrapped:
        def to_dict(self):
            return {"x": 1}

    assert canonical_json(Wrapped()) == '{"x": 1}'


def test_canonical_json_rejections():
    with pytest.raises(DegenerateInput):
        canonical_json({1: "non-string key"})
    with pytest.raises(DegenerateInput):
        canonical_json(float("nan"))
    with pytest.raises(DegenerateInput):
        canonical_json({"x": float("inf")})
    with pytest.raises(DegenerateInput):
        canonical_json(object())


def test_canonical_json_deterministic():
    obj = {"z": [0.1, 0.2], "a": {"n": 3, "m": None}}
    assert canonical_json(obj) == canonical_json(json.loads(json.dumps(obj)))


# -- csv ----------------------------------------------------------------

def test_csv_columns_in_first_seen_order():
    text = csv_text([{"b": 1, "a": 2}, {"a": 3, "c": 4}])
    assert text == "b,a,c\n1,2,\n,3,4\n"


def test_csv_quoting():
    text = csv_text([{"v": 'say "hi", twice', "w": "line\nbreak", "n": None}])
    assert text == 'v,w,n\n"say ""hi"", twice","line\nbreak",\n'


def test_csv_rejects_empty():
    with pytest.raises(DegenerateInput):
        csv_text([])


def test_csv_rows_flattens_per_prompt():
    report = {"per_prompt": [
        {"prompt_id": "a", "accuracy": 1.0, "metrics": {"mi": 0.5}}],
        "config": {"ignored": True}}
    assert csv_rows(report) == [{"prompt_id": "a", "accuracy": 1.0, "mi": 0.5}]


def test_csv_rows_prefixes_on_clash():
    rows = csv_rows([{"x": 1, "sub": {"x": 2}}])
    assert rows == [{"x": 1, "sub.x": 2}]


def test_csv_rows_history_view():
    report = {"history": [(0, 1.5, 0.9), (1, 1.2, 0.7)]}
    assert csv_rows(report) == [
        {"epoch": 0, "loss": 1.5, "grad_norm": 0.9},
        {"epoch": 1, "loss": 1.2, "grad_norm": 0.7}]


def test_csv_rows_bad_type():
    with pytest.raises(DegenerateInput):
        csv_rows(42)


# -- atomic writes ------------------------------------------------------

def test_write_text_atomic(tmp_path):
    path = tmp_path / "out.json"
    write_text_atomic(str(path), "data\n")
    assert path.read_bytes() == b"data\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.json"]  # no temps


def test_write_text_atomic_missing_parent(tmp_path):
    with pytest.raises(IoError):
        write_text_atomic(str(tmp_path / "no" / "such" / "dir.json"), "x")


def test_write_report_formats(tmp_path):
    report = {"rows": [{"a": 1, "b": 0.25}]}
    jpath, cpath = tmp_path / "r.json", tmp_path / "r.csv"
    write_report(report, str(jpath), "json")
    assert jpath.read_text() == canonical_json(report) + "\n"
    write_report(report, str(cpath), "csv")
    assert cpath.read_text() == "a,b\n1,0.25\n"
    with pytest.raises(DegenerateInput):
        write_report(report, str(tmp_path / "r.xml"), "xml")


# -- weight files -------------------------------------------------------

def test_weight_file_round_trip(tmp_path):
    path = str(tmp_path / "w.pflt")
    tensors = [("a", np.arange(6, dtype=np.float32).reshape(2, 3)),
               ("b", np.array([1.5], dtype=np.float32))]
    write_weight_file(path, {"backend": "demo", "k": 2}, tensors)
    config, loaded = read_weight_file(path)
    assert config == {"backend": "demo", "k": 2}
    assert [n for n, _ in loaded] == ["a", "b"]
    for (_, got), (_, want) in zip(loaded, tensors):
        np.testing.assert_array_equal(got, want)


def test_weight_file_header_is_first_line(tmp_path):
    path = str(tmp_path / "w.pflt")
    write_weight_file(path, {"backend": "demo"}, [("t", np.zeros(2, np.float32))])
    blob = Path(path).read_bytes()
    assert blob.startswith(MAGIC)
    header = json.loads(blob[len(MAGIC):blob.index(b"\n")])
    assert header["config"] == {"backend": "demo"}
    assert header["tensors"] == [{"name": "t", "shape": [2], "offset": 0}]


def test_weight_file_malformed_inputs(tmp_path):
    cases = {
        "magic.pflt": b"NOPE1{}\n",
        "noheader.pflt": MAGIC + b'{"config":{},"tensors":[]}',
        "badjson.pflt": MAGIC + b"not json\n",
        "nokeys.pflt": MAGIC + b'{"config":{}}\n',
        "badentry.pflt": MAGIC + b'{"config":{},"tensors":[{"name":"w"}]}\n',
    }
    for name, blob in cases.items():
        p = tmp_path / name
        p.write_bytes(blob)
        with pytest.raises(FormatError):
            read_weight_file(str(p))


def test_weight_file_truncated_payload(tmp_path):
    path = tmp_path / "t.pflt"
    write_weight_file(str(path), {}, [("w", np.zeros(8, np.float32))])
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_weight_file(str(path))


def test_logistic_save_load_byte_stable(tmp_path, logistic_model, toy_inputs):
    p1, p2 = str(tmp_path / "a.pflt"), str(tmp_path / "b.pflt")
    save_model(logistic_model, p1)
    again = load_model(p1)
    assert isinstance(again, LogisticModel)
    assert again.cfg == logistic_model.cfg
    save_model(again, p2)
    assert Path(p1).read_bytes() == Path(p2).read_bytes()
    enc_a = logistic_model.encode(None, toy_inputs.texts)
    enc_b = again.encode(None, toy_inputs.texts)
    np.testing.assert_allclose(again.probs(enc_b),
                               logistic_model.probs(enc_a), atol=1e-6)


def test_prefix_save_load(tmp_path):
    prefix = np.linspace(-1, 1, 12).reshape(3, 4)
    path = str(tmp_path / "p.pflt")
    save_prefix(prefix, path)
    got = load_prefix(path)
    np.testing.assert_array_equal(got, prefix.astype(np.float32))


def test_backend_dispatch_errors(tmp_path, logistic_model):
    mpath = str(tmp_path / "m.pflt")
    save_model(logistic_model, mpath)
    with pytest.raises(FormatError):
        load_prefix(mpath)
    with pytest.raises(FormatError):
        load_transformer(mpath, TransformerConfig())
    with pytest.raises(IoError):
        load_model(str(tmp_path / "u.pflt"))  # file does not exist


def test_unknown_backend_rejected(tmp_path):
    path = str(tmp_path / "odd.pflt")
    write_weight_file(path, {"backend": "mystery"}, [("w", np.zeros(1, np.float32))])
    with pytest.raises(FormatError):
        load_model(path)
    with pytest.raises(ShapeMismatch):
        save_model(object(), str(tmp_path / "no.pflt"))


# -- cli ----------------------------------------------------------------

def _config(tmp_path, name="run.json", **overrides):
    cfg = {
        "weights": str(SAMPLE / "model.pflt"),
        "pool": str(SAMPLE / "pool.json"),
        "verbalizer": str(SAMPLE / "verbalizer.json"),
        "train": str(SAMPLE / "train.jsonl"),
        "dev": str(SAMPLE / "dev.jsonl"),
        "test": str(SAMPLE / "test.jsonl"),
        "metrics": ["mi", "pflat"],
        "n_samples": 2,
        "sigma2": 1e-4,
        "master_seed": 0,
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_score_stdout(tmp_path, capsys):
    assert main(["score", "--config", _config(tmp_path)]) == 0
    out = capsys.readouterr().out
    report = json.loads(out)
    ids = [row["prompt_id"] for row in report["per_prompt"]]
    assert ids == ["plain", "terse", "critic", "skewed", "verbose", "bare"]
    assert set(report["per_prompt"][0]["metrics"]) == {"mi", "pflat"}


def test_cli_select_loss_and_ranking(tmp_path, capsys):
    assert main(["select", "--config", _config(tmp_path),
                 "--metric", "loss", "--alpha", "0.0"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["metric"] == "loss" and report["alpha"] == 0.0
    ranked = [r["prompt_id"] for r in report["ranking"]]
    assert report["selected"] == ranked[0]
    scores = [r["score"] for r in report["ranking"]]
    assert scores == sorted(scores)


def test_cli_evaluate_out_file_and_csv(tmp_path, capsys):
    cfg = _config(tmp_path)
    out = tmp_path / "eval.json"
    assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    assert capsys.readouterr().out == ""
    report = json.loads(out.read_text())
    assert set(report) == {"per_prompt", "correlations", "ranking", "config"}
    csv_out = tmp_path / "eval.csv"
    assert main(["evaluate", "--config", cfg, "--out", str(csv_out),
                 "--format", "csv"]) == 0
    header = csv_out.read_text().splitlines()[0].split(",")
    assert header[:2] == ["prompt_id", "accuracy"]
    assert "pflat" in header


def test_cli_seed_override(tmp_path):
    cfg = _config(tmp_path)
    base, seeded = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["evaluate", "--config", cfg, "--out", str(base)]) == 0
    assert main(["evaluate", "--config", cfg, "--out", str(seeded),
                 "--seed", "5"]) == 0
    assert json.loads(seeded.read_text())["config"]["master_seed"] == 5
    assert base.read_bytes() != seeded.read_bytes()


def test_cli_threads_do_not_change_bytes(tmp_path):
    cfg = _config(tmp_path)
    outs = []
    for threads in ("1", "8", "1"):
        out = tmp_path / f"t{len(outs)}.json"
        assert main(["evaluate", "--config", cfg, "--out", str(out),
                     "--threads", threads]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_cli_tune_alpha(tmp_path, capsys):
    cfg = _config(tmp_path, alpha_grid=[0.0, 1.0])
    assert main(["tune-alpha", "--config", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["base_metric"] == "loss"
    assert [r["alpha"] for r in report["per_alpha"]] == [0.0, 1.0]
    assert report["alpha"] in (0.0, 1.0)


def test_cli_sweep(tmp_path, capsys):
    cfg = _config(tmp_path,
                  sweep={"variable": "sigma2", "values": [1e-4, 1e-2],
                         "repeats": 1, "metric": "pflat"})
    assert main(["sweep", "--config", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    assert [row["value"] for row in report["rows"]] == [1e-4, 1e-2]
    assert len(report["summary"]) == 2


def test_cli_prefix_tune(tmp_path, capsys):
    cfg = _config(tmp_path,
                  sam={"rho": 0.05, "learning_rate": 0.01, "epochs": 3,
                       "prefix_len": 2},
                  prefix_out=str(tmp_path / "prefix.pflt"))
    assert main(["prefix-tune", "--config", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["history"]) == 3
    assert report["use_flatness"] is True
    assert "test_accuracy" in report
    prefix = load_prefix(str(tmp_path / "prefix.pflt"))
    assert prefix.shape[0] == 2


def test_cli_fit_backend_deterministic(tmp_path, capsys):
    cfg = _config(tmp_path,
                  fit={"vocab_size": 64, "l2": 1e-3, "train_epochs": 40,
                       "learning_rate": 0.5, "seed": 0})
    w1, w2 = tmp_path / "w1.pflt", tmp_path / "w2.pflt"
    assert main(["fit-backend", "--config", cfg, "--out", str(w1)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["examples"] == 40 and "train_loss" in report
    assert main(["fit-backend", "--config", cfg, "--out", str(w2)]) == 0
    assert w1.read_bytes() == w2.read_bytes()
    assert isinstance(load_model(str(w1)), LogisticModel)


def test_cli_usage_errors_exit_1(tmp_path, capsys):
    assert main(["score"]) == 1  # --config is required
    assert main(["not-a-command", "--config", "x"]) == 1
    cfg = _config(tmp_path)
    assert main(["select", "--config", cfg, "--metric", "pflat",
                 "--alpha", "1.0"]) == 1
    assert main(["score", "--config", cfg, "--threads", "0"]) == 1
    capsys.readouterr()


def test_cli_data_errors_exit_2(tmp_path, capsys):
    assert main(["score", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"text": "x", "label": "mystery"}\n')
    cfg = _config(tmp_path, test=str(bad))
    assert main(["score", "--config", cfg]) == 2
    capsys.readouterr()


def test_cli_numeric_errors_exit_3(tmp_path, capsys):
    pool = {"prompts": [
        {"id": "a", "instruction": "label the text", "demos": []},
        {"id": "b", "instruction": "classify the text", "demos": []}]}
    pool_path = tmp_path / "two.json"
    pool_path.write_text(json.dumps(pool))
    cfg = _config(tmp_path, pool=str(pool_path))
    assert main(["evaluate", "--config", cfg]) == 3  # study needs 3 prompts
    capsys.readouterr()


def test_cli_installed_entry_point(tmp_path):
    cfg = _config(tmp_path)
    env = dict(os.environ, PFLAT_THREADS="2")
    runs = [subprocess.run(["promptflat", "score", "--config", cfg],
                           capture_output=True, env=env) for _ in range(2)]
    for run in runs:
        assert run.returncode == 0
    assert runs[0].stdout == runs[1].stdout
    assert json.loads(runs[0].stdout)["per_prompt"]
