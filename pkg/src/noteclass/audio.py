"""Minimal mono WAV I/O (16-bit PCM) via the stdlib wave module."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .notes import DataError


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM mono."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    if peak > 1.0:
        samples = samples / peak
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(pcm.tobytes())


def read_wav(path, expected_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM WAV; returns (float samples in [-1, 1], rate)."""
    path = Path(path)
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1 or wav.getsampwidth() != 2:
            raise DataError(f"{path}: expected mono 16-bit PCM")
        rate = wav.getframerate()
        raw = wav.readframes(wav.getnframes())
    if expected_rate is not None and rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate} does not match configured {expected_rate}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return samples, rate
