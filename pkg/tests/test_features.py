import numpy as np
import pytest
from scipy.signal import get_window

from noteclass.features import (
    ClipConfig,
    Spectrogram,
    apply_frontend,
    cached_features,
    cqt_center_freqs,
    extract_note_clip,
    frontend_filterbank,
    hz_to_mel,
    load_features,
    mel_filterbank,
    save_features,
    stft_magnitude,
)
from noteclass.notes import DataError, NoteEvent, midi_to_hz

SR = 44100


def test_clip_config_defaults():
    cfg = ClipConfig()
    assert cfg.frame_count == 43
    assert cfg.delta_frames == 3
    assert cfg.n_bins == 256
    assert ClipConfig(frontend="cqt-115").n_bins == 115
    assert ClipConfig(t_max_s=1.0).frame_count == 103


def test_stft_zero_input_frame_count():
    cfg = ClipConfig()
    spec = stft_magnitude(np.zeros(SR), cfg)
    assert spec.n_frames == 100
    assert not spec.values.any()
    assert spec.values.shape[0] == 2049


def test_stft_empty_input_rejected():
    with pytest.raises(DataError):
        stft_magnitude(np.array([]), ClipConfig())


def test_stft_pure_tone_peak_bin():
    cfg = ClipConfig()
    t = np.arange(SR) / SR
    spec = stft_magnitude(np.sin(2 * np.pi * 440.0 * t), cfg)
    target_bin = int(np.argmin(np.abs(spec.freq_axis - 440.0)))
    interior = spec.values[:, 5:80]  # frames fully inside the signal
    assert np.all(interior.argmax(axis=0) == target_bin)


def test_stft_parseval_energy():
    # window-weighted time-domain energy must match the spectrum frame energy
    cfg = ClipConfig()
    rng = np.random.default_rng(0)
    samples = rng.standard_normal(cfg.window_len + 10 * cfg.hop_samples)
    spec = stft_magnitude(samples, cfg)
    window = get_window("blackmanharris", cfg.window_len, fftbins=True)
    k = 4
    frame = samples[k * cfg.hop_samples : k * cfg.hop_samples + cfg.window_len] * window
    time_energy = np.sum(frame**2)
    mags = spec.values[:, k]
    spec_energy = (mags[0] ** 2 + 2 * np.sum(mags[1:-1] ** 2) + mags[-1] ** 2) / cfg.window_len
    assert spec_energy == pytest.approx(time_energy, rel=1e-6)


def test_stft_short_input_zero_padded():
    cfg = ClipConfig()
    spec = stft_magnitude(np.ones(100), cfg)
    assert spec.n_frames == 1


def test_mel_scale_value():
    assert float(hz_to_mel(1000.0)) == pytest.approx(
        2595.0 * np.log10(1.0 + 1000.0 / 700.0), abs=1e-9
    )
    assert float(hz_to_mel(1000.0)) == pytest.approx(1000.0, abs=0.05)


def test_mel_filterbank_structure():
    fb = mel_filterbank(256, 2049, SR)
    assert fb.shape == (256, 2049)
    assert np.all(fb.sum(axis=1) > 0)
    assert np.allclose(fb.sum(axis=1), 1.0)
    # triangular overlap: every FFT bin feeds at most 2 filters
    assert int((fb > 0).sum(axis=0).max()) <= 2
    # centers monotone in Hz
    centers = np.array([np.argmax(row) for row in fb])
    assert np.all(np.diff(centers) >= 0)


def test_mel_filterbank_requires_resolution():
    with pytest.raises(DataError):
        mel_filterbank(256, 128, SR)


def test_frontend_zero_preservation():
    for frontend in ("mel-256", "cqt-115"):
        cfg = ClipConfig(frontend=frontend)
        spec = stft_magnitude(np.zeros(SR // 2), cfg)
        out = apply_frontend(spec, cfg)
        assert out.values.shape[0] == cfg.n_bins
        assert not out.values.any()


def test_cqt_semitone_indexing_440():
    cfg = ClipConfig(frontend="cqt-115")
    t = np.arange(SR) / SR
    out = apply_frontend(stft_magnitude(0.5 * np.sin(2 * np.pi * 440.0 * t), cfg), cfg)
    # MIDI 69 sits 49 semitone bins above the MIDI-20 origin
    assert int(out.values[:, 50].argmax()) == 49
    assert out.values.shape[0] == 115


def test_cqt_axis_definition():
    centers = cqt_center_freqs()
    assert len(centers) == 115
    assert centers[0] == pytest.approx(midi_to_hz(20))
    assert centers[49] == pytest.approx(440.0)


def test_frontend_monotone_in_gain():
    rng = np.random.default_rng(1)
    samples = rng.standard_normal(SR // 4) * 0.1
    for frontend in ("mel-256", "cqt-115"):
        cfg = ClipConfig(frontend=frontend)
        lo = apply_frontend(stft_magnitude(samples, cfg), cfg).values
        hi = apply_frontend(stft_magnitude(samples * 3.0, cfg), cfg).values
        assert np.all(hi >= lo - 1e-12)


def test_pure_tone_localization_resolvable_range():
    """Above the STFT resolution floor, a sine's argmax bin center lies within
    a quarter tone of the tone.  Below ~MIDI 54 neither axis can separate
    semitones with a 4096-sample window, so pitches there are excluded."""
    t = np.arange(int(0.5 * SR)) / SR
    for frontend in ("mel-256", "cqt-115"):
        cfg = ClipConfig(frontend=frontend)
        _, centers = frontend_filterbank(cfg)
        for midi in range(55, 105, 3):
            f = midi_to_hz(midi)
            out = apply_frontend(stft_magnitude(0.4 * np.sin(2 * np.pi * f * t), cfg), cfg)
            b = int(out.values[:, 20].argmax())
            assert abs(np.log2(centers[b] / f)) <= 1 / 24 + 1e-9, (frontend, midi)


def _full_grid(n_frames=300, n_bins=256, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.uniform(0.5, 2.0, (n_bins, n_frames))
    return Spectrogram(values, np.linspace(10, 22050, n_bins), 0.01)


def test_clip_long_note_no_trailing_zeroing():
    cfg = ClipConfig()
    full = _full_grid()
    clip = extract_note_clip(full, NoteEvent(60, 1.0, 1.6), cfg)  # D >= t_max
    assert clip.shape == (256, 43)
    assert np.all(clip.any(axis=0))


def test_clip_onset_zero_prefix_padding():
    cfg = ClipConfig()
    full = _full_grid()
    clip = extract_note_clip(full, NoteEvent(60, 0.0, 1.0), cfg)
    assert not clip[:, :3].any()
    assert np.array_equal(clip[:, 3:], full.values[:, : 43 - 3])


def test_clip_zeroing_rule_exact():
    # D = 0.2 s at defaults: frames >= round((0.03 + 0.2)/0.01) = 23 are zero
    cfg = ClipConfig()
    full = _full_grid()
    note = NoteEvent(60, 1.0, 1.2)
    clip = extract_note_clip(full, note, cfg)
    assert not clip[:, 23:].any()
    start = 97  # floor((1.0 - 0.03)/0.01)
    assert np.array_equal(clip[:, :23], full.values[:, start : start + 23])


def test_clip_shape_general_config():
    cfg = ClipConfig(t_max_s=0.6)
    full = _full_grid()
    clip = extract_note_clip(full, NoteEvent(60, 1.0, 1.1), cfg)
    assert clip.shape == (256, 63)


def test_clip_onset_past_end_rejected():
    cfg = ClipConfig()
    full = _full_grid(n_frames=100)  # 1 s
    with pytest.raises(DataError):
        extract_note_clip(full, NoteEvent(60, 2.0, 2.5), cfg)


def test_clip_zeroing_randomized():
    cfg = ClipConfig()
    full = _full_grid(seed=4)
    rng = np.random.default_rng(9)
    for _ in range(30):
        onset = float(rng.uniform(0.1, 2.0))
        dur = float(rng.uniform(0.02, 0.8))
        note = NoteEvent(60, onset, onset + dur)
        clip = extract_note_clip(full, note, cfg)
        assert clip.shape == (256, cfg.frame_count)
        if dur < cfg.t_max_s:
            zero_from = int(round((cfg.delta_s + dur) / cfg.hop_s))
            if zero_from < cfg.frame_count:
                assert not clip[:, zero_from:].any()


def test_feature_cache_roundtrip(tmp_path):
    cfg = ClipConfig(frontend="cqt-115")
    rng = np.random.default_rng(2)
    samples = rng.standard_normal(SR // 2) * 0.2

    calls = []

    def loader():
        calls.append(1)
        return samples

    first = cached_features(loader, "rec0", cfg, tmp_path)
    second = cached_features(loader, "rec0", cfg, tmp_path)
    assert len(calls) == 1  # second hit served from cache
    assert np.allclose(first.values, second.values, atol=1e-6)
    cache_files = list(tmp_path.glob("rec0.*.feat"))
    assert len(cache_files) == 1
    assert cfg.cache_key() in cache_files[0].name


def test_feature_cache_config_mismatch(tmp_path):
    cfg = ClipConfig()
    spec = Spectrogram(np.ones((256, 4)), np.linspace(10, 22050, 256), 0.01)
    path = tmp_path / "x.feat"
    save_features(spec, cfg, path)
    with pytest.raises(DataError):
        load_features(path, ClipConfig(t_max_s=0.6))
    back = load_features(path, cfg)
    assert back.values.shape == (256, 4)
