"""Command-line surface: synth, ingest, features, train, assign, eval.

Exit codes: 0 ok, 1 usage error, 2 data/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import audio, data, reports
from .manifest import RunManifest, load_manifest
from .metrics import (
    MatchSpec,
    classification_report,
    per_instrument_transcription,
)
from .model import NoteClassifier, count_params, load_checkpoint, save_checkpoint
from .notes import (
    DataError,
    DatasetCsvSpec,
    InstrumentTaxonomy,
    NoteEvent,
    NoteList,
    dedupe_concurrent_notes,
    read_notes,
    write_notes,
)
from .synth import DEFAULT_PROFILES, gen_dataset
from .training import NumericError, split_validation, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noteclass",
        description="Note-level instrument assignment: training, per-note "
                    "classification and both evaluation protocols.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--notes", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--polyphony", default="0.4,0.35,0.25",
                   help="comma weights for simultaneous group sizes 1..n")
    p.add_argument("--pitch-min", type=int, default=36)
    p.add_argument("--pitch-max", type=int, default=84)
    p.add_argument("--dur-min", type=float, default=0.15)
    p.add_argument("--dur-max", type=float, default=0.8)
    p.add_argument("--sample-rate", type=int, default=44100)
    p.add_argument("--notes-per-recording", type=int, default=50)
    p.add_argument("--prefix", default="synth", help="recording id prefix")

    p = sub.add_parser("ingest", help="normalize raw label files into interchange CSV")
    p.add_argument("--labels", required=True, help="label file or directory")
    p.add_argument("--format", required=True,
                   choices=["dataset-csv", "interchange-csv", "interchange-json"])
    p.add_argument("--taxonomy", help="taxonomy config file")
    p.add_argument("--out", required=True, help="output directory for interchange CSVs")
    p.add_argument("--sample-rate", type=int, default=44100,
                   help="sample rate of dataset-csv times and of the dedup grid")
    p.add_argument("--onset-col", default="start_time")
    p.add_argument("--offset-col", default="end_time")
    p.add_argument("--pitch-col", default="note")
    p.add_argument("--instrument-col", default="instrument")

    p = sub.add_parser("features", help="precompute cached features for a directory of WAVs")
    _add_manifest_flags(p)

    p = sub.add_parser("train", help="train a classifier from a manifest")
    _add_manifest_flags(p)

    p = sub.add_parser("assign", help="classify note events with a trained checkpoint")
    _add_manifest_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--notes", dest="notes_path",
                   help="interchange note file/dir (defaults to manifest labels_dir)")
    p.add_argument("--out", help="output file/dir (default: <out_dir>/assigned)")

    p = sub.add_parser("eval", help="score assigned notes against a reference")
    p.add_argument("--reference", required=True, help="reference note file or directory")
    p.add_argument("--assigned", required=True, help="assigned note file or directory")
    p.add_argument("--mode", choices=["auto", "classification", "transcription"],
                   default="auto")
    p.add_argument("--taxonomy", help="taxonomy config file")
    p.add_argument("--out-prefix", default="report",
                   help="prefix for the .csv/.json/.png report files")
    p.add_argument("--onset-tolerance", type=float, default=0.05)
    p.add_argument("--pitch-tolerance", type=float, default=0.5)
    p.add_argument("--offset-min-tolerance", type=float, default=0.05)
    p.add_argument("--offset-ratio", type=float, default=0.2)
    return parser


def _add_manifest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="run manifest (YAML); its values win over flags")
    p.add_argument("--audio-dir")
    p.add_argument("--labels-dir")
    p.add_argument("--cache-dir")
    p.add_argument("--checkpoint-dir")
    p.add_argument("--out-dir")
    p.add_argument("--taxonomy")
    p.add_argument("--frontend", choices=["mel-256", "cqt-115"])
    p.add_argument("--t-max", type=float, dest="t_max_s")
    p.add_argument("--harmonics", type=int)
    p.add_argument("--no-aux", action="store_true")
    p.add_argument("--branches", choices=["multi", "square-k57", "triple-square"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)


def _manifest_from_args(args) -> RunManifest:
    overrides: dict = {}
    for key in ("audio_dir", "labels_dir", "cache_dir", "checkpoint_dir", "out_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "taxonomy", None):
        overrides["taxonomy"] = args.taxonomy
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    clip = {}
    if getattr(args, "frontend", None):
        clip["frontend"] = args.frontend
    if getattr(args, "t_max_s", None) is not None:
        clip["t_max_s"] = args.t_max_s
    if clip:
        overrides["clip"] = clip
    if getattr(args, "no_aux", False):
        overrides["comb"] = "none"
    elif getattr(args, "harmonics", None) is not None:
        overrides["comb"] = {"harmonics": args.harmonics}
    if getattr(args, "branches", None):
        overrides["model"] = {"branches": args.branches}
    train_over = {}
    for flag, key in (("batch_size", "batch_size"), ("max_epochs", "max_epochs"),
                      ("lr", "initial_lr")):
        value = getattr(args, flag, None)
        if value is not None:
            train_over[key] = value
    if train_over:
        overrides["train"] = train_over
    return load_manifest(getattr(args, "manifest", None), overrides)


def cmd_synth(args) -> int:
    out = Path(args.out)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    weights = [float(w) for w in args.polyphony.split(",") if w.strip()]
    recordings, notelists = gen_dataset(
        DEFAULT_PROFILES,
        n_notes=args.notes,
        polyphony_weights=weights,
        pitch_range=(args.pitch_min, args.pitch_max),
        duration_range=(args.dur_min, args.dur_max),
        seed=args.seed,
        sample_rate=args.sample_rate,
        notes_per_recording=args.notes_per_recording,
        id_prefix=args.prefix,
    )
    taxonomy = InstrumentTaxonomy(classes=tuple(p.name for p in DEFAULT_PROFILES))
    for (rid, samples), notes in zip(recordings, notelists):
        audio.write_wav(out / "audio" / f"{rid}.wav", samples, args.sample_rate)
        write_notes(notes, out / "labels" / f"{rid}.csv", "interchange-csv", taxonomy)
    with open(out / "taxonomy.yaml", "w") as fh:
        yaml.safe_dump({"classes": list(taxonomy.classes)}, fh)
    total = sum(len(n) for n in notelists)
    print(f"wrote {len(recordings)} recordings, {total} notes to {out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    taxonomy = (InstrumentTaxonomy.from_file(args.taxonomy) if args.taxonomy
                else InstrumentTaxonomy())
    spec = DatasetCsvSpec(onset_col=args.onset_col, offset_col=args.offset_col,
                          pitch_col=args.pitch_col, instrument_col=args.instrument_col,
                          sample_rate=args.sample_rate)
    src = Path(args.labels)
    paths = sorted(src.iterdir()) if src.is_dir() else [src]
    paths = [p for p in paths if p.suffix in (".csv", ".json")]
    if not paths:
        raise DataError(f"no label files at {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    total_kept = total_dropped = total_removed = 0
    for path in paths:
        notes, stats = read_notes(path, args.format, taxonomy, spec)
        notes, removed = dedupe_concurrent_notes(notes, args.sample_rate)
        write_notes(notes, out / f"{path.stem}.csv", "interchange-csv", taxonomy)
        total_kept += len(notes)
        total_dropped += stats.dropped
        total_removed += removed
    print(f"ingested {len(paths)} files: kept {total_kept} notes, "
          f"dropped {total_dropped} (filter), removed {total_removed} (concurrent duplicates)")
    return EXIT_OK


def cmd_features(args) -> int:
    m = _manifest_from_args(args)
    m.require_paths("audio_dir")
    cache_dir = m.cache_dir or str(Path(m.out_dir) / "cache")
    wavs = sorted(Path(m.audio_dir).glob("*.wav"))
    if not wavs:
        raise DataError(f"no WAV files under {m.audio_dir}")
    for wav in wavs:
        spec = data.recording_features(wav, wav.stem, m.clip, cache_dir)
        print(f"{wav.stem}: {spec.values.shape[0]}x{spec.n_frames} frames cached")
    print(f"cache key {m.clip.cache_key()} in {cache_dir}")
    return EXIT_OK


def _load_training_set(m: RunManifest):
    pairs = []
    for wav_path, label_path in data.matched_stems(m.audio_dir, m.labels_dir):
        notes, _ = read_notes(label_path, "interchange-csv", m.taxonomy)
        notes, _ = dedupe_concurrent_notes(notes, m.clip.sample_rate)
        pairs.append((wav_path, notes))
    return data.assemble_dataset(pairs, m.clip, m.comb, m.cache_dir)


def cmd_train(args) -> int:
    m = _manifest_from_args(args)
    # config validation first: taxonomy/model problems must surface before audio I/O
    model_cfg = m.model_config()
    m.require_paths("audio_dir", "labels_dir")
    X, y, _ = _load_training_set(m)
    if np.any(y < 0):
        raise DataError("training requires instrument labels on every note")
    train_idx, val_idx = split_validation(y, m.train.val_fraction, m.train.seed)

    import torch

    torch.manual_seed(m.train.seed)  # seeded weight init: runs reproduce from manifest
    model = NoteClassifier(model_cfg)
    print(f"model: {count_params(model)} trainable parameters, "
          f"input {model_cfg.input_bins}x{model_cfg.input_frames}x{model_cfg.in_channels}")

    def progress(epoch, history, _model):
        print(f"epoch {epoch}: train {history.train_loss[-1]:.4f} "
              f"val {history.val_loss[-1]:.4f} lr {history.lr[-1]:.2g}")
        return False

    history = train(model, X[train_idx], y[train_idx], X[val_idx], y[val_idx],
                    m.train, on_epoch=progress)

    ckpt_dir = Path(m.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    out_dir = Path(m.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": m.config_hash(), "seed": m.train.seed,
            "best_epoch": history.best_epoch}
    ckpt_path = ckpt_dir / "model.pt"
    save_checkpoint(model, ckpt_path, extra=meta)
    history.to_csv(out_dir / "history.csv", meta)
    reports.plot_history(history, out_dir / "history.png")
    print(f"best epoch {history.best_epoch}, val loss "
          f"{min(history.val_loss):.4f}; checkpoint at {ckpt_path}")
    return EXIT_OK


def _iter_note_sources(notes_path, audio_dir, taxonomy):
    """Yield (recording_id, wav_path, NoteList) for a note file or directory."""
    notes_path = Path(notes_path)
    wavs = {p.stem: p for p in sorted(Path(audio_dir).glob("*.wav"))}
    files = sorted(notes_path.glob("*.csv")) + sorted(notes_path.glob("*.json")) \
        if notes_path.is_dir() else [notes_path]
    if not files:
        raise DataError(f"no note files at {notes_path}")
    for path in files:
        fmt = "interchange-json" if path.suffix == ".json" else "interchange-csv"
        notes, _ = read_notes(path, fmt, taxonomy)
        if path.stem not in wavs:
            raise DataError(f"notes {path.name}: no matching WAV in {audio_dir}")
        yield path.stem, wavs[path.stem], notes


def cmd_assign(args) -> int:
    m = _manifest_from_args(args)
    model_cfg = m.model_config()
    model, _, _ = load_checkpoint(args.checkpoint, expected_cfg=model_cfg)
    m.require_paths("audio_dir")
    notes_path = args.notes_path or m.notes or m.labels_dir
    if notes_path is None:
        raise DataError("assign needs a notes source (--notes or manifest labels_dir)")
    out = Path(args.out) if args.out else Path(m.out_dir) / "assigned"
    single = Path(notes_path).is_file()
    if not single:
        out.mkdir(parents=True, exist_ok=True)

    import torch

    meta_total = 0
    for rid, wav_path, notes in _iter_note_sources(notes_path, m.audio_dir, m.taxonomy):
        feats = data.recording_features(wav_path, rid, m.clip, m.cache_dir)
        X = data.build_inputs(feats, notes.notes, m.clip, m.comb)
        probs = np.zeros((0, model_cfg.classes))
        if X.shape[0]:
            model.eval()
            with torch.no_grad():
                chunks = [model.predict_proba(torch.as_tensor(X[i : i + 64])).numpy()
                          for i in range(0, X.shape[0], 64)]
            probs = np.concatenate(chunks)
        assigned = NoteList(rid, [
            NoteEvent(n.pitch_midi, n.onset_s, n.offset_s, int(np.argmax(probs[i])))
            for i, n in enumerate(notes.notes)
        ])
        target = out if single else out / f"{rid}.csv"
        if single:
            target.parent.mkdir(parents=True, exist_ok=True)
        write_notes(assigned, target, "interchange-csv", m.taxonomy, probs=probs)
        meta_total += len(assigned)
    print(f"assigned {meta_total} notes -> {out}")
    return EXIT_OK


def _read_eval_side(path, taxonomy):
    """Read one eval input (file or directory) into per-recording NoteLists."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv")) + sorted(path.glob("*.json"))
        if not files:
            raise DataError(f"no note files under {path}")
    else:
        files = [path]
    out = {}
    for p in files:
        fmt = "interchange-json" if p.suffix == ".json" else "interchange-csv"
        notes, _ = read_notes(p, fmt, taxonomy)
        out[p.stem] = notes
    return out


def cmd_eval(args) -> int:
    taxonomy = (InstrumentTaxonomy.from_file(args.taxonomy) if args.taxonomy
                else InstrumentTaxonomy())
    refs = _read_eval_side(args.reference, taxonomy)
    ests = _read_eval_side(args.assigned, taxonomy)
    if set(refs) != set(ests):
        raise DataError(f"reference and assigned recordings differ: "
                        f"{sorted(set(refs) ^ set(ests))}")

    def tuples(notelist):
        return sorted((n.pitch_midi, round(n.onset_s, 6), round(n.offset_s, 6))
                      for n in notelist.notes)

    identical = all(tuples(refs[k]) == tuples(ests[k]) for k in refs)
    mode = args.mode
    if mode == "auto":
        mode = "classification" if identical else "transcription"
    elif mode == "classification" and not identical:
        raise DataError("classification mode requires identical note sets; "
                        "use transcription mode for estimator output")

    meta = {"mode": mode, "recordings": len(refs)}
    if mode == "classification":
        true, pred = [], []
        for key in sorted(refs):
            ref_sorted = refs[key].sorted()
            est_sorted = ests[key].sorted()
            for rn, en in zip(ref_sorted.notes, est_sorted.notes):
                if rn.instrument is None or en.instrument is None:
                    raise DataError("classification eval needs labels on both sides")
                true.append(rn.instrument)
                pred.append(en.instrument)
        report = classification_report(pred, true, taxonomy.num_classes)
        payload = reports.write_classification_report(report, taxonomy, args.out_prefix, meta)
        print(f"classification macro-F {payload['macro_f']:.3f} "
              f"accuracy {payload['accuracy']:.3f} over {payload['n_examples']} notes")
    else:
        spec = MatchSpec(onset_tolerance_s=args.onset_tolerance,
                         pitch_tolerance_st=args.pitch_tolerance,
                         offset_min_tolerance_s=args.offset_min_tolerance,
                         offset_ratio=args.offset_ratio)
        ref_all, est_all = [], []
        for key in sorted(refs):
            ref_all.extend(refs[key].notes)
            est_all.extend(ests[key].notes)
        report = per_instrument_transcription(ref_all, est_all, taxonomy.num_classes, spec)
        payload = reports.write_transcription_report(report, taxonomy, args.out_prefix, meta)
        print(f"transcription onset F {payload['onset']['mpe_only']['f_score']:.3f}, "
              f"onset+offset F {payload['onset_offset']['mpe_only']['f_score']:.3f}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "features": cmd_features,
    "train": cmd_train,
    "assign": cmd_assign,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
