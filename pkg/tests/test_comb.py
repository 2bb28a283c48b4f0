import numpy as np
import pytest

from noteclass.comb import (
    CombConfig,
    active_frame_mask,
    assemble_input,
    build_aux_channel,
    clip_frame_times,
    comb_on_semitone_axis,
    harmonic_comb_linear,
    project_comb,
)
from noteclass.features import ClipConfig, frontend_filterbank, mel_center_freqs
from noteclass.notes import DataError, NoteEvent

SR = 44100
LINEAR_AXIS = np.fft.rfftfreq(4096, d=1.0 / SR)
Q = 2.0 ** (1.0 / 24.0)


def test_comb_config_validation():
    with pytest.raises(DataError):
        CombConfig(n_harmonics=0)
    assert CombConfig.default_for("mel-256").n_harmonics == 3
    assert CombConfig.default_for("cqt-115").n_harmonics == 1


def _times(note, cfg):
    return clip_frame_times(note, cfg)


def test_comb_active_bins_near_harmonics():
    cfg = ClipConfig()
    note = NoteEvent(69, 1.0, 2.0)
    comb = harmonic_comb_linear(note, 2, LINEAR_AXIS, _times(note, cfg), cfg.t_max_s)
    active_bins = np.flatnonzero(comb.any(axis=1))
    freqs = LINEAR_AXIS[active_bins]
    for f in freqs:
        near_440 = 440.0 / Q <= f <= 440.0 * Q
        near_880 = 880.0 / Q <= f <= 880.0 * Q
        assert near_440 or near_880
    # both harmonics are represented
    assert np.any((freqs >= 440.0 / Q) & (freqs <= 440.0 * Q))
    assert np.any((freqs >= 880.0 / Q) & (freqs <= 880.0 * Q))


def test_comb_delta_prefix_zero():
    cfg = ClipConfig()
    note = NoteEvent(69, 1.0, 2.0)
    comb = harmonic_comb_linear(note, 3, LINEAR_AXIS, _times(note, cfg), cfg.t_max_s)
    assert not comb[:, :3].any()
    assert comb[:, 3:].any()


def test_comb_nyquist_harmonic_count():
    # pitch 104: f0 = 440 * 2^(35/12); harmonics above Nyquist are dropped
    f0 = 440.0 * 2.0 ** (35.0 / 12.0)
    max_h = int(np.floor(SR / 2.0 / f0))
    assert max_h == 6
    cfg = ClipConfig()
    note = NoteEvent(104, 1.0, 2.0)

    def active_harmonics(H):
        comb = harmonic_comb_linear(note, H, LINEAR_AXIS, _times(note, cfg), cfg.t_max_s)
        bins = np.flatnonzero(comb.any(axis=1))
        hs = {int(round(f / f0)) for f in LINEAR_AXIS[bins]}
        return hs

    assert active_harmonics(5) == {1, 2, 3, 4, 5}
    assert active_harmonics(12) == {1, 2, 3, 4, 5, 6}


def test_comb_monotone_in_harmonics():
    cfg = ClipConfig()
    rng = np.random.default_rng(0)
    for _ in range(20):
        note = NoteEvent(int(rng.integers(21, 105)), 0.5, float(rng.uniform(0.6, 1.5)))
        prev = None
        for H in (1, 2, 4, 7):
            comb = harmonic_comb_linear(note, H, LINEAR_AXIS, _times(note, cfg), cfg.t_max_s)
            if prev is not None:
                assert np.all(comb >= prev)  # adding harmonics never deactivates a cell
            prev = comb


def test_project_comb_zero_and_peak():
    fb, _ = frontend_filterbank(ClipConfig())
    zero = project_comb(np.zeros((2049, 43)), fb)
    assert not zero.any()
    cfg = ClipConfig()
    note = NoteEvent(69, 1.0, 2.0)
    comb = harmonic_comb_linear(note, 3, LINEAR_AXIS, _times(note, cfg), cfg.t_max_s)
    proj = project_comb(comb, fb)
    assert proj.max() == pytest.approx(1.0)


def test_mel_projection_peak_near_440():
    # brute-force oracle: the filterbank response of the comb column must
    # peak at the mel bin whose center is nearest 440 Hz
    cfg = ClipConfig()
    fb, _ = frontend_filterbank(cfg)
    note = NoteEvent(69, 1.0, 2.0)
    comb = harmonic_comb_linear(note, 1, LINEAR_AXIS, _times(note, cfg), cfg.t_max_s)
    proj = project_comb(comb, fb)
    col = proj[:, 10]
    active = np.flatnonzero(comb[:, 10])
    expected = np.array([row[active].sum() for row in fb])
    assert int(col.argmax()) == int(expected.argmax())
    centers = mel_center_freqs(256, SR)
    nearest = int(np.argmin(np.abs(centers - 440.0)))
    assert abs(int(col.argmax()) - nearest) <= 1


def test_cqt_comb_direct_bins():
    cfg = ClipConfig(frontend="cqt-115")
    _, centers = frontend_filterbank(cfg)
    note = NoteEvent(69, 1.0, 2.0)
    comb = comb_on_semitone_axis(note, 1, centers, _times(note, cfg), cfg.t_max_s)
    bins = np.flatnonzero(comb.any(axis=1))
    assert list(bins) == [49]  # MIDI 69 - 20
    assert set(np.unique(comb)) <= {0.0, 1.0}


def test_assemble_input_shapes():
    main = np.random.default_rng(0).uniform(size=(256, 43))
    aux = np.zeros((256, 43))
    pair = assemble_input(main, aux)
    assert pair.shape == (256, 43, 2)
    assert pair.stacked().shape == (256, 43, 2)
    with pytest.raises(DataError):
        assemble_input(main, np.zeros((115, 43)))


def test_assemble_no_aux_mode():
    main = np.ones((115, 43))
    pair = assemble_input(main, None)
    assert not pair.aux.any()
    assert np.array_equal(pair.stacked()[:, :, 0], main)


def test_aux_full_span_for_long_note():
    cfg = ClipConfig()
    note = NoteEvent(60, 1.0, 5.0)  # far longer than t_max
    aux = build_aux_channel(note, cfg, CombConfig(3))
    assert aux[:, :3].sum() == 0
    assert np.all(aux[:, 3:].any(axis=0))


def test_aux_zero_outside_note_randomized():
    rng = np.random.default_rng(5)
    for frontend in ("mel-256", "cqt-115"):
        cfg = ClipConfig(frontend=frontend)
        for _ in range(25):
            onset = float(rng.uniform(0.05, 3.0))
            dur = float(rng.uniform(0.03, 1.0))
            note = NoteEvent(int(rng.integers(21, 105)), onset, onset + dur)
            aux = build_aux_channel(note, cfg, CombConfig(int(rng.integers(1, 6))))
            times = clip_frame_times(note, cfg)
            outside = (times < note.onset_s) | (times > note.offset_s)
            assert not aux[:, outside].any()


def test_main_and_aux_share_frame_grid():
    cfg = ClipConfig()
    note = NoteEvent(60, 0.77, 1.0)
    times = clip_frame_times(note, cfg)
    assert times.shape == (cfg.frame_count,)
    mask = active_frame_mask(note, cfg)
    aux = build_aux_channel(note, cfg, CombConfig(2))
    assert np.array_equal(aux.any(axis=0), mask)
