"""Main-input construction: STFT, mel / pseudo-CQT frontends, per-note clips.

A recording is analysed once into an F x T feature grid; each note is then a
fixed-length slice of that grid with a small context prefix before the onset
and zeros after the note ends.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import get_window

from .notes import DataError, NoteEvent, midi_to_hz

MEL_FRONTEND = "mel-256"
CQT_FRONTEND = "cqt-115"
CQT_START_MIDI = 20  # G#0
QUARTER_TONE = 2.0 ** (1.0 / 24.0)


@dataclass(frozen=True)
class ClipConfig:
    """Framing and frequency-axis parameters shared by all inputs of a run."""

    t_max_s: float = 0.4
    delta_s: float = 0.03
    hop_s: float = 0.01
    window_len: int = 4096
    sample_rate: int = 44100
    frontend: str = MEL_FRONTEND

    def __post_init__(self):
        if self.frontend not in (MEL_FRONTEND, CQT_FRONTEND):
            raise DataError(f"unknown frontend {self.frontend!r}")
        if min(self.t_max_s, self.delta_s, self.hop_s) <= 0 or self.window_len <= 0:
            raise DataError("clip parameters must be positive")

    @property
    def frame_count(self) -> int:
        """Frames per note clip: round((t_max + delta) / hop); 43 at defaults."""
        return int(round((self.t_max_s + self.delta_s) / self.hop_s))

    @property
    def delta_frames(self) -> int:
        return int(round(self.delta_s / self.hop_s))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_s * self.sample_rate))

    @property
    def n_bins(self) -> int:
        return 256 if self.frontend == MEL_FRONTEND else 115

    @property
    def n_fft_bins(self) -> int:
        return self.window_len // 2 + 1

    def cache_key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


@dataclass
class Spectrogram:
    """Nonnegative magnitude grid (F x T) with its frequency axis and framing."""

    values: np.ndarray          # (F, T), >= 0
    freq_axis: np.ndarray       # (F,), bin center frequencies in Hz
    hop_s: float
    origin_s: float = 0.0       # time of frame 0

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != len(self.freq_axis):
            raise DataError("spectrogram values must be (F, T) matching freq_axis")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def duration_s(self) -> float:
        return self.origin_s + self.n_frames * self.hop_s


def stft_magnitude(samples: np.ndarray, cfg: ClipConfig) -> Spectrogram:
    """Magnitude STFT with Blackman-Harris windows.

    Frame k covers samples [k*hop, k*hop + window); the tail is zero-padded so
    a recording of N samples yields ceil(N / hop) frames.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise DataError("empty audio input")
    hop = cfg.hop_samples
    win_len = cfg.window_len
    n_frames = int(np.ceil(samples.size / hop))
    padded = np.zeros((n_frames - 1) * hop + win_len, dtype=np.float64)
    padded[: samples.size] = samples
    frames = np.lib.stride_tricks.sliding_window_view(padded, win_len)[::hop]
    window = get_window("blackmanharris", win_len, fftbins=True)
    mags = np.abs(np.fft.rfft(frames * window, axis=1)).T
    freqs = np.fft.rfftfreq(win_len, d=1.0 / cfg.sample_rate)
    return Spectrogram(mags, freqs, cfg.hop_s)


def hz_to_mel(f_hz) -> np.ndarray:
    """HTK mel scale: 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(m) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft_bins: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank (n_mels x n_fft_bins), rows normalized to unit sum.

    Filter centers are equally spaced on the mel scale from 0 Hz to Nyquist.
    """
    if n_fft_bins < n_mels:
        raise DataError(f"need n_fft_bins >= n_mels, got {n_fft_bins} < {n_mels}")
    nyquist = sample_rate / 2.0
    window_len = 2 * (n_fft_bins - 1)
    bin_freqs = np.fft.rfftfreq(window_len, d=1.0 / sample_rate)
    grid = mel_to_hz(np.linspace(0.0, float(hz_to_mel(nyquist)), n_mels + 2))
    fb = np.zeros((n_mels, n_fft_bins))
    for i in range(n_mels):
        lo, center, hi = grid[i], grid[i + 1], grid[i + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    sums = fb.sum(axis=1, keepdims=True)
    if np.any(sums == 0):
        raise DataError("mel filterbank has an empty row; FFT resolution too coarse")
    return fb / sums


def mel_center_freqs(n_mels: int, sample_rate: int) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, float(hz_to_mel(sample_rate / 2.0)), n_mels + 2))[1:-1]


def cqt_filterbank(n_fft_bins: int, sample_rate: int) -> np.ndarray:
    """Pseudo-CQT filterbank: semitone-spaced averaging rows over STFT bins.

    Row j averages the STFT bins whose center lies within a quarter tone of
    the semitone center (MIDI 20 + j).  Below roughly MIDI 54 the quarter-tone
    window is narrower than one FFT bin; those rows fall back to the single
    nearest bin so that every row keeps support.
    """
    window_len = 2 * (n_fft_bins - 1)
    bin_freqs = np.fft.rfftfreq(window_len, d=1.0 / sample_rate)
    centers = cqt_center_freqs()
    fb = np.zeros((len(centers), n_fft_bins))
    for j, c in enumerate(centers):
        members = np.flatnonzero((bin_freqs >= c / QUARTER_TONE) & (bin_freqs <= c * QUARTER_TONE))
        if members.size == 0:
            members = np.array([np.argmin(np.abs(bin_freqs - c))])
        fb[j, members] = 1.0 / members.size
    return fb


def cqt_center_freqs(n_bins: int = 115) -> np.ndarray:
    return np.array([midi_to_hz(CQT_START_MIDI + j) for j in range(n_bins)])


@lru_cache(maxsize=8)
def frontend_filterbank(cfg: ClipConfig) -> tuple[np.ndarray, np.ndarray]:
    """(filterbank matrix F x n_fft_bins, output center frequencies) for cfg."""
    if cfg.frontend == MEL_FRONTEND:
        fb = mel_filterbank(cfg.n_bins, cfg.n_fft_bins, cfg.sample_rate)
        centers = mel_center_freqs(cfg.n_bins, cfg.sample_rate)
    else:
        fb = cqt_filterbank(cfg.n_fft_bins, cfg.sample_rate)
        centers = cqt_center_freqs(cfg.n_bins)
    return fb, centers


def apply_frontend(linear_spec: Spectrogram, cfg: ClipConfig) -> Spectrogram:
    """Project a linear-frequency magnitude STFT onto the configured axis.

    Both paths apply log1p compression, which preserves zeros and keeps the
    main channel bounded alongside the O(1) auxiliary channel.
    """
    fb, centers = frontend_filterbank(cfg)
    if linear_spec.values.shape[0] != fb.shape[1]:
        raise DataError(
            f"frontend expects {fb.shape[1]} STFT bins, got {linear_spec.values.shape[0]}"
        )
    out = np.log1p(fb @ linear_spec.values)
    return Spectrogram(out, centers, linear_spec.hop_s, linear_spec.origin_s)


def compute_features(samples: np.ndarray, cfg: ClipConfig) -> Spectrogram:
    """Full-recording features: STFT then frontend projection."""
    return apply_frontend(stft_magnitude(samples, cfg), cfg)


def clip_start_frame(note: NoteEvent, cfg: ClipConfig) -> int:
    """Index of the first clip frame in the full-recording grid: floor((onset - delta)/hop).

    The small epsilon keeps grid-aligned onsets on their exact frame despite
    float rounding of the division.
    """
    return int(np.floor((note.onset_s - cfg.delta_s) / cfg.hop_s + 1e-9))


def extract_note_clip(full_features: Spectrogram, note: NoteEvent, cfg: ClipConfig) -> np.ndarray:
    """Per-note clip of shape (F, frame_count).

    The clip covers [onset - delta, onset - delta + t_max + delta); frames
    outside the recording are zero, and when the note is shorter than t_max
    every frame at index >= round((delta + duration)/hop) is zeroed.
    """
    total = full_features.n_frames
    if note.onset_s > total * full_features.hop_s:
        raise DataError(
            f"note onset {note.onset_s:.3f}s is beyond the recording end "
            f"({total * full_features.hop_s:.3f}s)"
        )
    n_frames = cfg.frame_count
    start = clip_start_frame(note, cfg)
    clip = np.zeros((full_features.values.shape[0], n_frames), dtype=full_features.values.dtype)
    src_lo = max(start, 0)
    src_hi = min(start + n_frames, total)
    if src_hi > src_lo:
        clip[:, src_lo - start : src_hi - start] = full_features.values[:, src_lo:src_hi]
    if note.duration_s < cfg.t_max_s:
        zero_from = int(round((cfg.delta_s + note.duration_s) / cfg.hop_s))
        if zero_from < n_frames:
            clip[:, zero_from:] = 0.0
    return clip


# Cached-feature container: magic, header length, JSON header, float32 grid.
_MAGIC = b"NCFT"


def save_features(spec: Spectrogram, cfg: ClipConfig, path, stamp: Optional[str] = None) -> None:
    header = {
        "n_bins": int(spec.values.shape[0]),
        "n_frames": int(spec.values.shape[1]),
        "hop_s": spec.hop_s,
        "origin_s": spec.origin_s,
        "frontend": cfg.frontend,
        "config_hash": cfg.cache_key(),
        "source_stamp": stamp,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(spec.values, dtype="<f4").tobytes())


def load_features(path, cfg: Optional[ClipConfig] = None) -> Spectrogram:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"{path} is not a cached-feature file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        grid = np.frombuffer(fh.read(), dtype="<f4")
    shape = (header["n_bins"], header["n_frames"])
    if grid.size != shape[0] * shape[1]:
        raise DataError(f"{path}: truncated feature grid")
    if cfg is not None and header.get("config_hash") != cfg.cache_key():
        raise DataError(f"{path}: cached features were built with a different config")
    if cfg is not None:
        _, centers = frontend_filterbank(cfg)
    else:
        centers = np.arange(shape[0], dtype=np.float64)
    return Spectrogram(grid.reshape(shape).astype(np.float64), centers,
                       header["hop_s"], header.get("origin_s", 0.0))


def cached_features(samples_loader, recording_id: str, cfg: ClipConfig,
                    cache_dir=None, stamp: Optional[str] = None) -> Spectrogram:
    """Features for one recording, backed by an on-disk cache keyed by config hash.

    ``samples_loader`` is a zero-argument callable returning the audio vector;
    it is only invoked on a cache miss.  ``stamp`` identifies the source audio
    (size/mtime); a stamp change invalidates the cached entry.
    """
    if cache_dir is None:
        return compute_features(samples_loader(), cfg)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{recording_id}.{cfg.cache_key()}.feat"
    if path.exists():
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic == _MAGIC:
                (hlen,) = struct.unpack("<I", fh.read(4))
                header = json.loads(fh.read(hlen))
                if stamp is None or header.get("source_stamp") == stamp:
                    return load_features(path, cfg)
    spec = compute_features(samples_loader(), cfg)
    save_features(spec, cfg, path, stamp)
    return spec
