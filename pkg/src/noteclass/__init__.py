"""Note-level instrument assignment toolkit.

Given note events (pitch, onset, offset) from ground truth or any external
multi-pitch estimator, classify the instrument that played each note using
a two-channel spectrogram input (audio clip + harmonic comb) and a
multi-branch densely connected convolutional network.
"""

from .notes import (
    NoteEvent,
    NoteList,
    InstrumentTaxonomy,
    midi_to_hz,
    read_notes,
    write_notes,
    dedupe_concurrent_notes,
)
from .features import ClipConfig, Spectrogram, stft_magnitude, mel_filterbank, apply_frontend, extract_note_clip
from .comb import CombConfig, InputPair, harmonic_comb_linear, project_comb, assemble_input
from .model import ModelConfig, NoteClassifier, count_params, analytic_param_count, predict_class
from .training import TrainConfig, TrainHistory, PlateauSchedule, split_validation, cross_entropy, train
from .metrics import (
    EvalCounts,
    MatchSpec,
    classification_report,
    match_notes,
    transcription_fscore,
    per_instrument_transcription,
)
from .synth import TimbreProfile, DEFAULT_PROFILES, synth_note, gen_dataset

__version__ = "0.1.0"
