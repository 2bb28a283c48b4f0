"""Note-event domain types, instrument taxonomy and note file I/O.

A note event is the tuple (pitch, onset, offset) on the semitone grid; the
interchange formats defined here are the boundary through which any external
multi-pitch estimator can feed the classifier.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

PITCH_MIN = 21   # A0
PITCH_MAX = 104  # G#7

DEFAULT_CLASSES = ("piano", "violin", "viola", "cello", "french_horn", "bassoon", "clarinet")

# Raw instrument codes found in dataset label files (MIDI-program style numbers)
# plus name aliases.  Codes for harpsichord/bass/oboe/flute are intentionally
# absent: unmapped codes are discarded at ingest.  These defaults are
# configurable through a taxonomy file and should be validated against the
# actual corpus before a full-scale run.
DEFAULT_RAW_MAP = {
    "1": "piano",
    "41": "violin",
    "42": "viola",
    "43": "cello",
    "61": "french_horn",
    "71": "bassoon",
    "72": "clarinet",
    "horn": "french_horn",
    "french horn": "french_horn",
}


class DataError(Exception):
    """Malformed or inconsistent input data."""


def midi_to_hz(pitch_midi: int) -> float:
    """Equal-temperament frequency of a MIDI pitch (A4 = 69 = 440 Hz)."""
    return 440.0 * 2.0 ** ((pitch_midi - 69) / 12.0)


@dataclass
class NoteEvent:
    """One note: integer MIDI pitch, onset/offset in seconds, optional class id."""

    pitch_midi: int
    onset_s: float
    offset_s: float
    instrument: Optional[int] = None

    def __post_init__(self):
        if self.offset_s <= self.onset_s:
            raise DataError(
                f"note duration must be positive: onset={self.onset_s}, offset={self.offset_s}"
            )
        if not PITCH_MIN <= self.pitch_midi <= PITCH_MAX:
            raise DataError(f"pitch {self.pitch_midi} outside [{PITCH_MIN}, {PITCH_MAX}]")

    @property
    def duration_s(self) -> float:
        return self.offset_s - self.onset_s

    @property
    def f0_hz(self) -> float:
        return midi_to_hz(self.pitch_midi)


@dataclass
class InstrumentTaxonomy:
    """Ordered class list plus the raw-code -> class-name mapping used at ingest."""

    classes: Sequence[str] = DEFAULT_CLASSES
    raw_map: Optional[dict] = None

    def __post_init__(self):
        self.classes = tuple(_norm(c) for c in self.classes)
        if len(set(self.classes)) != len(self.classes):
            raise DataError("taxonomy classes must be unique")
        if not self.classes:
            raise DataError("taxonomy needs at least one class")
        if self.raw_map is None:
            # the shipped code table only makes sense for the default classes
            self.raw_map = dict(DEFAULT_RAW_MAP) if self.classes == DEFAULT_CLASSES else {}
        self.raw_map = {_norm(k): _norm(v) for k, v in self.raw_map.items()}
        for raw, name in self.raw_map.items():
            if name not in self.classes:
                raise DataError(f"taxonomy maps raw code {raw!r} to unknown class {name!r}")
        self._ids = {name: i for i, name in enumerate(self.classes)}

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_id(self, name: str) -> int:
        key = _norm(name)
        if key not in self._ids:
            raise DataError(f"unknown instrument class {name!r}")
        return self._ids[key]

    def class_name(self, class_id: int) -> str:
        return self.classes[class_id]

    def map_raw(self, raw_code) -> Optional[int]:
        """Class id for a raw dataset code, or None when the code is discarded."""
        key = _norm(str(raw_code))
        name = self.raw_map.get(key)
        if name is None:
            # Class names used directly (e.g. interchange files) map to themselves.
            return self._ids.get(key)
        return self._ids[name]

    @classmethod
    def from_file(cls, path) -> "InstrumentTaxonomy":
        """Load a taxonomy config: {"classes": [...], "map": {raw: class}} (JSON or YAML)."""
        import yaml

        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except Exception as exc:
            raise DataError(f"cannot parse taxonomy file {path}: {exc}") from exc
        if not isinstance(data, dict) or "classes" not in data:
            raise DataError(f"taxonomy file {path} must define a 'classes' list")
        return cls(classes=data["classes"], raw_map=data.get("map"))


def _norm(token: str) -> str:
    return str(token).strip().lower().replace(" ", "_")


@dataclass
class NoteList:
    """Notes of one recording, canonically sorted by (onset, pitch)."""

    recording_id: str
    notes: list = field(default_factory=list)

    def sorted(self) -> "NoteList":
        ordered = sorted(self.notes, key=lambda n: (n.onset_s, n.pitch_midi, n.offset_s))
        return NoteList(self.recording_id, ordered)

    def __len__(self) -> int:
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)


@dataclass
class IngestStats:
    kept: int = 0
    dropped_pitch: int = 0
    dropped_instrument: int = 0
    dropped_duration: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_pitch + self.dropped_instrument + self.dropped_duration


@dataclass
class DatasetCsvSpec:
    """Column layout of a raw dataset label file (times given in samples)."""

    onset_col: str = "start_time"
    offset_col: str = "end_time"
    pitch_col: str = "note"
    instrument_col: str = "instrument"
    sample_rate: int = 44100


FORMATS = ("dataset-csv", "interchange-csv", "interchange-json")


def read_notes(
    path,
    format: str,
    taxonomy: Optional[InstrumentTaxonomy] = None,
    dataset_spec: Optional[DatasetCsvSpec] = None,
    recording_id: Optional[str] = None,
) -> tuple[NoteList, IngestStats]:
    """Read a note file into a canonical NoteList.

    Events with pitch outside [21, 104], non-positive duration, or (for
    labeled formats) an instrument code absent from the taxonomy are dropped
    and counted in the returned stats.
    """
    path = Path(path)
    if format not in FORMATS:
        raise DataError(f"unknown note format {format!r}; expected one of {FORMATS}")
    if taxonomy is None:
        taxonomy = InstrumentTaxonomy()
    rid = recording_id if recording_id is not None else path.stem

    stats = IngestStats()
    notes: list[NoteEvent] = []

    def add(pitch, onset, offset, raw_instrument, lineno):
        if offset <= onset:
            stats.dropped_duration += 1
            return
        if not PITCH_MIN <= pitch <= PITCH_MAX:
            stats.dropped_pitch += 1
            return
        instrument = None
        if raw_instrument is not None and str(raw_instrument).strip() != "":
            instrument = taxonomy.map_raw(raw_instrument)
            if instrument is None:
                stats.dropped_instrument += 1
                return
        notes.append(NoteEvent(pitch, onset, offset, instrument))
        stats.kept += 1

    if format == "interchange-json":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc
        if recording_id is None:
            rid = data.get("recording_id", rid)
        for i, row in enumerate(data.get("notes", [])):
            try:
                add(int(row["pitch_midi"]), float(row["onset_s"]), float(row["offset_s"]),
                    row.get("instrument"), i)
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: note entry {i}: {exc}") from exc
        return NoteList(rid, notes).sorted(), stats

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return NoteList(rid, []), stats
        if format == "interchange-csv":
            required = {"onset_s", "offset_s", "pitch_midi"}
            cols = set(reader.fieldnames)
            if not required <= cols:
                raise DataError(f"{path}: interchange CSV needs columns {sorted(required)}, got {reader.fieldnames}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    add(int(float(row["pitch_midi"])), float(row["onset_s"]), float(row["offset_s"]),
                        row.get("instrument"), lineno)
                except (TypeError, ValueError) as exc:
                    raise DataError(f"{path}: line {lineno}: {exc}") from exc
        else:  # dataset-csv, times in samples
            spec = dataset_spec or DatasetCsvSpec()
            needed = [spec.onset_col, spec.offset_col, spec.pitch_col, spec.instrument_col]
            missing = [c for c in needed if c not in reader.fieldnames]
            if missing:
                raise DataError(f"{path}: dataset CSV missing columns {missing}")
            sr = float(spec.sample_rate)
            for lineno, row in enumerate(reader, start=2):
                try:
                    add(int(float(row[spec.pitch_col])),
                        float(row[spec.onset_col]) / sr,
                        float(row[spec.offset_col]) / sr,
                        row[spec.instrument_col], lineno)
                except (TypeError, ValueError) as exc:
                    raise DataError(f"{path}: line {lineno}: {exc}") from exc

    return NoteList(rid, notes).sorted(), stats


def write_notes(
    notes: NoteList,
    path,
    format: str = "interchange-csv",
    taxonomy: Optional[InstrumentTaxonomy] = None,
    probs: Optional[Sequence[Sequence[float]]] = None,
) -> None:
    """Write a NoteList in an interchange format.

    ``probs`` optionally attaches one class-probability row per note (written
    as p_<class> columns in CSV, a "probs" object in JSON); round-trips with
    read_notes are lossless on the note fields.
    """
    if format not in ("interchange-csv", "interchange-json"):
        raise DataError(f"write_notes supports interchange formats only, got {format!r}")
    if taxonomy is None:
        taxonomy = InstrumentTaxonomy()
    if probs is not None and len(probs) != len(notes.notes):
        raise DataError("probs must align one row per note")
    path = Path(path)
    ordered = notes.sorted()

    def name_of(n: NoteEvent):
        return None if n.instrument is None else taxonomy.class_name(n.instrument)

    if format == "interchange-json":
        payload = {"recording_id": ordered.recording_id, "notes": []}
        for i, n in enumerate(ordered.notes):
            entry = {
                "onset_s": round(n.onset_s, 6),
                "offset_s": round(n.offset_s, 6),
                "pitch_midi": n.pitch_midi,
                "instrument": name_of(n),
            }
            if probs is not None:
                entry["probs"] = {taxonomy.class_name(c): float(p)
                                  for c, p in enumerate(probs[i])}
            payload["notes"].append(entry)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
        return

    fieldnames = ["onset_s", "offset_s", "pitch_midi", "instrument"]
    if probs is not None:
        fieldnames += [f"p_{taxonomy.class_name(c)}" for c in range(taxonomy.num_classes)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for i, n in enumerate(ordered.notes):
            row = [f"{n.onset_s:.6f}", f"{n.offset_s:.6f}", n.pitch_midi, name_of(n) or ""]
            if probs is not None:
                row += [f"{p:.8f}" for p in probs[i]]
            writer.writerow(row)


def dedupe_concurrent_notes(notes: NoteList, sample_rate: int = 44100) -> tuple[NoteList, int]:
    """Drop groups of differently-labeled notes sharing an exact (pitch, onset, offset).

    Exactness is decided on the integer sample grid at ``sample_rate``.  All
    members of a colliding group are removed (the single-label target would be
    ambiguous); returns the surviving list and the number of removed notes.
    """
    groups: dict[tuple, list[NoteEvent]] = {}
    for n in notes.notes:
        if n.instrument is None:
            raise DataError("dedupe requires labeled notes")
        key = (n.pitch_midi, round(n.onset_s * sample_rate), round(n.offset_s * sample_rate))
        groups.setdefault(key, []).append(n)

    kept: list[NoteEvent] = []
    removed = 0
    for members in groups.values():
        labels = {m.instrument for m in members}
        if len(members) >= 2 and len(labels) >= 2:
            removed += len(members)
        else:
            kept.extend(members)
    return NoteList(notes.recording_id, kept).sorted(), removed


def read_notes_dir(directory, format: str, taxonomy=None, dataset_spec=None):
    """Read every note file in a directory; yields (NoteList, IngestStats) per file."""
    directory = Path(directory)
    suffix = ".json" if format == "interchange-json" else ".csv"
    paths = sorted(p for p in directory.iterdir() if p.suffix == suffix)
    if not paths:
        raise DataError(f"no {suffix} note files found in {directory}")
    return [read_notes(p, format, taxonomy, dataset_spec) for p in paths]
