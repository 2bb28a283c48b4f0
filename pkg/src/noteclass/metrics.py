"""Both evaluation protocols: per-class note classification scores, and
MIREX-style transcription matching for notes coming from an external
multi-pitch estimator."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .notes import DataError, NoteList

MODE_ONSET = "onset"
MODE_ONSET_OFFSET = "onset+offset"


@dataclass
class EvalCounts:
    """True/false positive and false negative counts with derived P/R/F.

    Zero-denominator conventions: P=0 when TP+FP=0, R=0 when TP+FN=0,
    F=0 when P+R=0.
    """

    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f_score(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class ClassificationReport:
    per_class: list                      # EvalCounts, indexed by class id
    n_examples: int = 0

    @property
    def macro_f(self) -> float:
        """Unweighted mean of per-class F-scores."""
        return float(np.mean([c.f_score for c in self.per_class]))

    @property
    def accuracy(self) -> float:
        correct = sum(c.tp for c in self.per_class)
        return correct / self.n_examples if self.n_examples else 0.0


def classification_report(predicted: Sequence[int], true: Sequence[int],
                          n_classes: int) -> ClassificationReport:
    """Per-class TP/FP/FN over aligned prediction/label sequences."""
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape:
        raise DataError("predicted and true label sequences must align")
    per_class = []
    for c in range(n_classes):
        tp = int(np.sum((predicted == c) & (true == c)))
        fp = int(np.sum((predicted == c) & (true != c)))
        fn = int(np.sum((predicted != c) & (true == c)))
        per_class.append(EvalCounts(tp, fp, fn))
    return ClassificationReport(per_class, n_examples=int(predicted.size))


@dataclass(frozen=True)
class MatchSpec:
    """MIREX note-matching tolerances."""

    mode: str = MODE_ONSET
    onset_tolerance_s: float = 0.05
    pitch_tolerance_st: float = 0.5
    offset_min_tolerance_s: float = 0.05
    offset_ratio: float = 0.2

    def __post_init__(self):
        if self.mode not in (MODE_ONSET, MODE_ONSET_OFFSET):
            raise DataError(f"unknown matching mode {self.mode!r}")
        if min(self.onset_tolerance_s, self.pitch_tolerance_st,
               self.offset_min_tolerance_s, self.offset_ratio) <= 0:
            raise DataError("matching tolerances must be positive")

    def admissible(self, ref, est) -> bool:
        if abs(ref.onset_s - est.onset_s) > self.onset_tolerance_s:
            return False
        if abs(ref.pitch_midi - est.pitch_midi) > self.pitch_tolerance_st:
            return False
        if self.mode == MODE_ONSET_OFFSET:
            tol = max(self.offset_min_tolerance_s, self.offset_ratio * ref.duration_s)
            if abs(ref.offset_s - est.offset_s) > tol:
                return False
        return True


def _notes(seq) -> list:
    return list(seq.notes) if isinstance(seq, NoteList) else list(seq)


def match_notes(reference, estimate, spec: MatchSpec) -> list:
    """Maximum-cardinality one-to-one matching of admissible (ref, est) pairs.

    Augmenting-path (Kuhn) search over the admissibility graph; each note is
    matched at most once.  Returns (ref_index, est_index) pairs sorted by
    reference index.
    """
    refs = _notes(reference)
    ests = _notes(estimate)
    adjacency = [
        [e for e, est in enumerate(ests) if spec.admissible(ref, est)]
        for ref in refs
    ]
    match_of_est = [-1] * len(ests)

    def augment(root: int) -> bool:
        # Alternating BFS from an unmatched reference note.
        discoverer = {}            # est -> ref that first reached it
        came_from = {root: None}   # ref -> matched est it was entered through
        queue = deque([root])
        while queue:
            r = queue.popleft()
            for e in adjacency[r]:
                if e in discoverer:
                    continue
                discoverer[e] = r
                holder = match_of_est[e]
                if holder == -1:
                    # free estimate found: flip matches back along the path
                    while e is not None:
                        owner = discoverer[e]
                        match_of_est[e] = owner
                        e = came_from[owner]
                    return True
                if holder not in came_from:
                    came_from[holder] = e
                    queue.append(holder)
        return False

    for r in range(len(refs)):
        augment(r)

    return sorted((r, e) for e, r in enumerate(match_of_est) if r != -1)


def transcription_fscore(reference, estimate, spec: MatchSpec) -> EvalCounts:
    """Pooled transcription counts: TP = matched, FP = unmatched estimates,
    FN = unmatched references."""
    refs = _notes(reference)
    ests = _notes(estimate)
    matched = len(match_notes(refs, ests, spec))
    return EvalCounts(tp=matched, fp=len(ests) - matched, fn=len(refs) - matched)


@dataclass
class TranscriptionReport:
    """Per-instrument transcription scores in both matching modes, plus the
    instrument-agnostic pooled row."""

    per_class: dict = field(default_factory=dict)   # mode -> list[EvalCounts]
    pooled: dict = field(default_factory=dict)      # mode -> EvalCounts
    n_classes: int = 0

    def macro_f(self, mode: str) -> float:
        return float(np.mean([c.f_score for c in self.per_class[mode]]))


def per_instrument_transcription(
    reference: NoteList,
    estimate: NoteList,
    n_classes: int,
    base_spec: Optional[MatchSpec] = None,
) -> TranscriptionReport:
    """Per-class transcription scoring of estimator notes with assigned classes.

    For each class the reference and estimate are filtered to that class and
    scored in both onset-only and onset+offset modes; the pooled row ignores
    instrument labels entirely.
    """
    base_spec = base_spec or MatchSpec()
    refs = _notes(reference)
    ests = _notes(estimate)
    for n in ests:
        if n.instrument is None:
            raise DataError("estimated notes must carry an assigned class")
    report = TranscriptionReport(n_classes=n_classes)
    for mode in (MODE_ONSET, MODE_ONSET_OFFSET):
        spec = MatchSpec(mode=mode,
                         onset_tolerance_s=base_spec.onset_tolerance_s,
                         pitch_tolerance_st=base_spec.pitch_tolerance_st,
                         offset_min_tolerance_s=base_spec.offset_min_tolerance_s,
                         offset_ratio=base_spec.offset_ratio)
        report.pooled[mode] = transcription_fscore(refs, ests, spec)
        rows = []
        for c in range(n_classes):
            ref_c = [n for n in refs if n.instrument == c]
            est_c = [n for n in ests if n.instrument == c]
            rows.append(transcription_fscore(ref_c, est_c, spec))
        report.per_class[mode] = rows
    return report
