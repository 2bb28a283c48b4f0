"""Auxiliary note-conditioned input: a harmonic comb over the note's lifetime.

The comb activates frequency bins at integer multiples of the note's pitch
(within a quarter-tone tolerance) between onset and offset, then is projected
onto the same frequency axis as the main input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .features import (
    CQT_FRONTEND,
    MEL_FRONTEND,
    QUARTER_TONE,
    ClipConfig,
    clip_start_frame,
    frontend_filterbank,
)
from .notes import DataError, NoteEvent


@dataclass(frozen=True)
class CombConfig:
    """Harmonic count for the auxiliary channel; tolerance is +- one quarter tone."""

    n_harmonics: int = 3
    tolerance_ratio: float = QUARTER_TONE

    def __post_init__(self):
        if self.n_harmonics < 1:
            raise DataError("comb needs at least one harmonic")
        if self.tolerance_ratio <= 1.0:
            raise DataError("tolerance ratio must exceed 1")

    @classmethod
    def default_for(cls, frontend: str) -> "CombConfig":
        # Best-performing harmonic counts differ per frontend.
        return cls(n_harmonics=3 if frontend == MEL_FRONTEND else 1)


@dataclass
class InputPair:
    """Two-channel model input: main audio clip and auxiliary comb, same shape."""

    main: np.ndarray
    aux: np.ndarray

    def __post_init__(self):
        if self.main.shape != self.aux.shape:
            raise DataError(f"channel shape mismatch: {self.main.shape} vs {self.aux.shape}")

    @property
    def shape(self):
        return self.main.shape + (2,)

    def stacked(self) -> np.ndarray:
        """(F, T, 2) array with channel 1 = main, channel 2 = aux."""
        return np.stack([self.main, self.aux], axis=-1)


def clip_frame_times(note: NoteEvent, cfg: ClipConfig) -> np.ndarray:
    """Absolute start times of the clip's frames on the recording's grid."""
    start = clip_start_frame(note, cfg)
    return (start + np.arange(cfg.frame_count)) * cfg.hop_s


def active_frame_mask(note: NoteEvent, cfg: ClipConfig) -> np.ndarray:
    """Frames whose time lies inside [onset, min(offset, onset + t_max)]."""
    times = clip_frame_times(note, cfg)
    end = min(note.offset_s, note.onset_s + cfg.t_max_s)
    return (times >= note.onset_s) & (times <= end)


def harmonic_comb_linear(
    note: NoteEvent,
    n_harmonics: int,
    freq_axis: np.ndarray,
    frame_times: np.ndarray,
    t_max_s: float,
    tolerance_ratio: float = QUARTER_TONE,
) -> np.ndarray:
    """Binary comb on a linear frequency axis, (n_bins x n_frames).

    Cell (b, k) is 1 iff bin b's center frequency lies within the tolerance
    window of some harmonic h*f0 (h <= n_harmonics, h*f0 below Nyquist) and
    frame k's time lies inside the note.  Frames in the pre-onset context and
    past the offset stay zero.
    """
    freq_axis = np.asarray(freq_axis, dtype=np.float64)
    frame_times = np.asarray(frame_times, dtype=np.float64)
    nyquist = freq_axis[-1]
    f0 = note.f0_hz

    bins = np.zeros(freq_axis.shape[0], dtype=np.float64)
    for h in range(1, n_harmonics + 1):
        fh = h * f0
        if fh >= nyquist:
            break
        bins[(freq_axis >= fh / tolerance_ratio) & (freq_axis <= fh * tolerance_ratio)] = 1.0

    end = min(note.offset_s, note.onset_s + t_max_s)
    active = (frame_times >= note.onset_s) & (frame_times <= end)
    return np.outer(bins, active.astype(np.float64))


def comb_on_semitone_axis(
    note: NoteEvent,
    n_harmonics: int,
    center_freqs: np.ndarray,
    frame_times: np.ndarray,
    t_max_s: float,
    tolerance_ratio: float = QUARTER_TONE,
) -> np.ndarray:
    """Comb built directly on semitone-spaced bins (CQT path), already 0/1."""
    log_tol = np.log2(tolerance_ratio)
    centers = np.asarray(center_freqs, dtype=np.float64)
    nyquist_midi_top = centers[-1] * tolerance_ratio
    f0 = note.f0_hz
    bins = np.zeros(centers.shape[0], dtype=np.float64)
    for h in range(1, n_harmonics + 1):
        fh = h * f0
        if fh >= nyquist_midi_top:
            break
        bins[np.abs(np.log2(centers / fh)) <= log_tol] = 1.0
    end = min(note.offset_s, note.onset_s + t_max_s)
    active = (np.asarray(frame_times) >= note.onset_s) & (np.asarray(frame_times) <= end)
    return np.outer(bins, active.astype(np.float64))


def project_comb(binary_comb: np.ndarray, filterbank: np.ndarray) -> np.ndarray:
    """Project a binary comb through the main-input filterbank, peak-scaled to 1.

    No log compression is applied: the channel starts binary and only becomes
    non-binary through the filtering, so its scale stays O(1).
    """
    out = filterbank @ binary_comb
    peak = out.max()
    if peak > 0:
        out = out / peak
    return out


def build_aux_channel(note: NoteEvent, clip_cfg: ClipConfig,
                      comb_cfg: Optional[CombConfig]) -> np.ndarray:
    """Auxiliary channel for one note on the configured frontend axis ((F, T))."""
    if comb_cfg is None:
        return np.zeros((clip_cfg.n_bins, clip_cfg.frame_count), dtype=np.float64)
    times = clip_frame_times(note, clip_cfg)
    fb, centers = frontend_filterbank(clip_cfg)
    if clip_cfg.frontend == CQT_FRONTEND:
        return comb_on_semitone_axis(note, comb_cfg.n_harmonics, centers, times,
                                     clip_cfg.t_max_s, comb_cfg.tolerance_ratio)
    window_len = 2 * (fb.shape[1] - 1)
    linear_axis = np.fft.rfftfreq(window_len, d=1.0 / clip_cfg.sample_rate)
    comb = harmonic_comb_linear(note, comb_cfg.n_harmonics, linear_axis, times,
                                clip_cfg.t_max_s, comb_cfg.tolerance_ratio)
    return project_comb(comb, fb)


def assemble_input(main: np.ndarray, aux: Optional[np.ndarray] = None) -> InputPair:
    """Stack the main clip with its auxiliary channel (zeros in no-aux mode)."""
    if aux is None:
        aux = np.zeros_like(main)
    return InputPair(main, aux)
