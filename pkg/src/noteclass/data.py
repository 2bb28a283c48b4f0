"""Assembly of per-note model inputs from recordings and note lists."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import audio
from .comb import CombConfig, assemble_input, build_aux_channel
from .features import ClipConfig, Spectrogram, cached_features, extract_note_clip
from .notes import DataError


def note_input(features: Spectrogram, note, clip_cfg: ClipConfig,
               comb_cfg: Optional[CombConfig]) -> np.ndarray:
    """One (2, F, T) float32 input: main clip and auxiliary comb channel."""
    main = extract_note_clip(features, note, clip_cfg)
    aux = build_aux_channel(note, clip_cfg, comb_cfg) if comb_cfg is not None else None
    pair = assemble_input(main, aux)
    return pair.stacked().transpose(2, 0, 1).astype(np.float32)


def build_inputs(features: Spectrogram, notes: Sequence, clip_cfg: ClipConfig,
                 comb_cfg: Optional[CombConfig]) -> np.ndarray:
    """(N, 2, F, T) batch for all notes of one recording."""
    if not len(notes):
        return np.zeros((0, 2, clip_cfg.n_bins, clip_cfg.frame_count), dtype=np.float32)
    return np.stack([note_input(features, n, clip_cfg, comb_cfg) for n in notes])


def recording_features(wav_path, recording_id: str, clip_cfg: ClipConfig,
                       cache_dir=None) -> Spectrogram:
    """Features for one WAV, via the on-disk cache when a cache dir is given."""
    def load():
        samples, _ = audio.read_wav(wav_path, expected_rate=clip_cfg.sample_rate)
        return samples

    stat = Path(wav_path).stat()
    stamp = f"{stat.st_size}-{stat.st_mtime_ns}"
    return cached_features(load, recording_id, clip_cfg, cache_dir, stamp)


def assemble_dataset(
    pairs: Sequence[tuple],          # (wav_path, NoteList)
    clip_cfg: ClipConfig,
    comb_cfg: Optional[CombConfig],
    cache_dir=None,
) -> tuple[np.ndarray, np.ndarray, list]:
    """Inputs and labels for a set of recordings.

    Returns (X of shape (N, 2, F, T), y of shape (N,) with -1 for unlabeled
    notes, refs as (recording_index, note) pairs aligned with X).
    """
    xs, ys, refs = [], [], []
    for rec_idx, (wav_path, notelist) in enumerate(pairs):
        feats = recording_features(wav_path, notelist.recording_id, clip_cfg, cache_dir)
        xs.append(build_inputs(feats, notelist.notes, clip_cfg, comb_cfg))
        for n in notelist.notes:
            ys.append(-1 if n.instrument is None else n.instrument)
            refs.append((rec_idx, n))
    if not xs:
        raise DataError("no recordings to assemble")
    X = np.concatenate(xs) if len(xs) > 1 else xs[0]
    return X, np.asarray(ys, dtype=np.int64), refs


def matched_stems(audio_dir, labels_dir, label_suffix: str = ".csv") -> list:
    """Pair <stem>.wav with <stem><suffix> label files; error when labels lack audio."""
    audio_dir, labels_dir = Path(audio_dir), Path(labels_dir)
    wavs = {p.stem: p for p in sorted(audio_dir.glob("*.wav"))}
    out = []
    for label_path in sorted(labels_dir.glob(f"*{label_suffix}")):
        stem = label_path.stem
        if stem not in wavs:
            raise DataError(f"label file {label_path.name} has no matching WAV in {audio_dir}")
        out.append((wavs[stem], label_path))
    if not out:
        raise DataError(f"no label files under {labels_dir}")
    return out
