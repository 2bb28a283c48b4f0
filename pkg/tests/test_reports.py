import csv
import json

import pytest

from noteclass.manifest import RunManifest, load_manifest
from noteclass.metrics import (
    classification_report,
    per_instrument_transcription,
)
from noteclass.notes import DataError, InstrumentTaxonomy, NoteEvent, NoteList
from noteclass.reports import write_classification_report, write_transcription_report
from noteclass.training import TrainHistory
from noteclass import reports


def test_classification_report_files(tmp_path):
    tax = InstrumentTaxonomy(classes=("a", "b", "c"))
    report = classification_report([0, 1, 2, 0, 1], [0, 1, 2, 1, 1], 3)
    payload = write_classification_report(report, tax, tmp_path / "rep",
                                          meta={"config_hash": "deadbeef"})
    with open(tmp_path / "rep.csv") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "# config_hash=deadbeef"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["class", "tp", "fp", "fn", "precision", "recall", "f_score"]
    assert rows[1][0] == "a"
    assert rows[-1][0] == "macro_mean"
    data = json.loads((tmp_path / "rep.json").read_text())
    assert data["macro_f"] == pytest.approx(report.macro_f)
    assert data["classes"]["b"]["tp"] == report.per_class[1].tp
    assert payload == data
    png = (tmp_path / "rep.png").read_bytes()
    assert png[:8] == b"\x89PNG\r\n\x1a\n"


def test_transcription_report_files(tmp_path):
    tax = InstrumentTaxonomy(classes=("a", "b"))
    ref = NoteList("r", [NoteEvent(60, 0.0, 0.5, 0), NoteEvent(70, 1.0, 1.5, 1)])
    est = NoteList("r", [NoteEvent(60, 0.01, 0.5, 0), NoteEvent(70, 2.0, 2.5, 1)])
    report = per_instrument_transcription(ref, est, 2)
    write_transcription_report(report, tax, tmp_path / "tr")
    data = json.loads((tmp_path / "tr.json").read_text())
    assert data["mode"] == "transcription"
    assert data["onset"]["mpe_only"]["tp"] == 1
    assert set(data["onset"]["classes"]) == {"a", "b"}
    assert data["onset_offset"]["macro_f"] <= data["onset"]["macro_f"] + 1e-12
    with open(tmp_path / "tr.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "class"
    assert rows[1][0] == "mpe_only"
    assert (tmp_path / "tr.png").exists()


def test_history_plot(tmp_path):
    h = TrainHistory()
    for e in range(5):
        h.append(1.0 / (e + 1), 1.1 / (e + 1), 1e-3 * 0.2 ** (e // 2), 0.1)
    reports.plot_history(h, tmp_path / "h.png")
    assert (tmp_path / "h.png").stat().st_size > 0


def test_manifest_defaults_and_hash(tmp_path):
    m = load_manifest(None, {})
    assert m.clip.frontend == "mel-256"
    assert m.comb.n_harmonics == 3           # mel default
    assert m.taxonomy.num_classes == 7
    assert len(m.config_hash()) == 12

    cqt = load_manifest(None, {"clip": {"frontend": "cqt-115"}})
    assert cqt.comb.n_harmonics == 1         # cqt default
    assert m.config_hash() != cqt.config_hash()


def test_manifest_file_overrides_flags(tmp_path):
    path = tmp_path / "m.yaml"
    path.write_text(
        "clip:\n  frontend: cqt-115\n"
        "comb: none\n"
        "train:\n  batch_size: 8\n"
        "model:\n  branches: square-k57\n"
    )
    m = load_manifest(path, {"clip": {"frontend": "mel-256", "t_max_s": 0.6},
                             "train": {"max_epochs": 5}})
    assert m.clip.frontend == "cqt-115"     # file wins
    assert m.clip.t_max_s == 0.6            # flag survives where file is silent
    assert m.comb is None                   # no-aux ablation
    assert m.train.batch_size == 8
    assert m.train.max_epochs == 5
    cfg = m.model_config()
    assert cfg.branches == ((3, 3),)
    assert cfg.growth_rate == 57
    assert cfg.input_bins == 115


def test_manifest_model_config_dimensions():
    m = load_manifest(None, {"clip": {"frontend": "cqt-115", "t_max_s": 0.8},
                             "taxonomy": {"classes": ["x", "y", "z"]}})
    cfg = m.model_config()
    assert cfg.input_bins == 115
    assert cfg.input_frames == 83
    assert cfg.classes == 3


def test_manifest_bad_branch_preset():
    m = RunManifest(model={"branches": "bogus"})
    with pytest.raises(DataError):
        m.model_config()


def test_manifest_relative_paths(tmp_path):
    sub = tmp_path / "runs"
    sub.mkdir()
    path = sub / "m.yaml"
    path.write_text("audio_dir: data/audio\ncache_dir: /abs/cache\n")
    m = load_manifest(path)
    assert m.audio_dir == str(sub / "data" / "audio")
    assert m.cache_dir == "/abs/cache"


def test_manifest_missing_paths_required():
    m = load_manifest(None, {})
    with pytest.raises(DataError):
        m.require_paths("audio_dir")
