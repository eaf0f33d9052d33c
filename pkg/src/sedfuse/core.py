"""Shared domain types, validation, and file I/O for every pipeline artifact.

Five on-disk formats move data between stages:

* ``events.tsv``        strong labels / decoded detections (4-column TSV)
* ``weak.tsv``          clip-level label sets (2-column TSV, comma-joined)
* ``grids.jsonl``       per-clip frame posteriors, one JSON object per line
* ``tags.jsonl``        clip-level tag probabilities per separated source
* ``sep_manifest.jsonl`` mixture -> ordered source ids

Parsing is strict: malformed rows and out-of-vocabulary labels raise
immediately instead of being coerced or skipped, so label drift cannot
pass silently. All values are immutable after construction and safe to
share across threads. Floats are serialized with ``repr`` so every
write/parse round trip is value-exact.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class SedfuseError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SedfuseError):
    """A domain invariant was violated."""


class VocabularyError(ValidationError):
    """A class name is unknown or a class set does not match the vocabulary."""


class ParseError(SedfuseError):
    """A file could not be parsed; carries the path and offending line."""

    def __init__(self, path: str, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


# Class names and clip ids are embedded in TSV and comma-joined fields.
_FORBIDDEN_NAME_CHARS = ("\t", "\n", "\r", ",")
_FORBIDDEN_ID_CHARS = ("\t", "\n", "\r")

EVENTS_HEADER = ("filename", "onset", "offset", "event_label")
WEAK_HEADER = ("filename", "event_labels")


def _check_name(name: str, kind: str) -> None:
    if not isinstance(name, str) or not name:
        raise ValidationError(f"{kind} must be a non-empty string, got {name!r}")
    bad = _FORBIDDEN_NAME_CHARS if kind == "class name" else _FORBIDDEN_ID_CHARS
    for ch in bad:
        if ch in name:
            raise ValidationError(f"{kind} {name!r} contains forbidden character {ch!r}")


def fmt_float(x: float) -> str:
    """Shortest decimal string that parses back to the exact same float."""
    return repr(float(x))


@dataclass(frozen=True)
class ClassVocabulary:
    """Ordered set of target class names plus the reserved non-target label."""

    classes: tuple[str, ...]
    other_label: str = "other"

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 1:
            raise ValidationError("vocabulary needs at least one class")
        for name in self.classes:
            _check_name(name, "class name")
        _check_name(self.other_label, "class name")
        if len(set(self.classes)) != len(self.classes):
            raise ValidationError("class names must be unique")
        if self.other_label in self.classes:
            raise ValidationError(
                f"reserved label {self.other_label!r} must not be a target class"
            )

    def __len__(self) -> int:
        return len(self.classes)

    def __contains__(self, name: str) -> bool:
        return name in self.classes

    def index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise VocabularyError(f"unknown class {name!r}") from None

    def with_other(self) -> tuple[str, ...]:
        """Target classes followed by the reserved non-target label."""
        return self.classes + (self.other_label,)


@dataclass(eq=False)
class FrameGrid:
    """One clip's T x C matrix of frame-level class posteriors.

    Columns follow the :class:`ClassVocabulary` order of the run that
    produced the grid; the grid itself stores no names.
    """

    clip_id: str
    hop_seconds: float
    values: np.ndarray

    def __post_init__(self):
        _check_name(self.clip_id, "clip id")
        if not (float(self.hop_seconds) > 0.0):
            raise ValidationError(f"{self.clip_id}: hop_seconds must be > 0")
        self.hop_seconds = float(self.hop_seconds)
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"{self.clip_id}: posterior matrix must be 2-D and non-empty")
        bad = ~((arr >= 0.0) & (arr <= 1.0))
        if bad.any():
            t, c = np.argwhere(bad)[0]
            raise ValidationError(
                f"{self.clip_id}: frame {t}, class column {c}: "
                f"value {arr[t, c]!r} outside [0, 1]"
            )
        arr.setflags(write=False)
        self.values = arr

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_frames * self.hop_seconds


@dataclass(eq=False)
class BinaryGrid:
    """Thresholded frame activity, same layout as the grid it came from."""

    clip_id: str
    hop_seconds: float
    values: np.ndarray

    def __post_init__(self):
        _check_name(self.clip_id, "clip id")
        if not (float(self.hop_seconds) > 0.0):
            raise ValidationError(f"{self.clip_id}: hop_seconds must be > 0")
        self.hop_seconds = float(self.hop_seconds)
        arr = np.array(self.values, copy=True)
        if arr.dtype != np.bool_:
            raise ValidationError(f"{self.clip_id}: binary grid must be boolean")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"{self.clip_id}: binary matrix must be 2-D and non-empty")
        arr.setflags(write=False)
        self.values = arr

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Event:
    """A single labeled interval: (clip, onset, offset, class)."""

    clip_id: str
    onset: float
    offset: float
    event_label: str

    def __post_init__(self):
        _check_name(self.clip_id, "clip id")
        _check_name(self.event_label, "class name")
        onset = float(self.onset)
        offset = float(self.offset)
        if not (np.isfinite(onset) and np.isfinite(offset)):
            raise ValidationError(f"{self.clip_id}: non-finite event time")
        if onset < 0.0:
            raise ValidationError(f"{self.clip_id}: onset {onset} < 0")
        if not onset < offset:
            raise ValidationError(
                f"{self.clip_id}: onset {onset} must be strictly before offset {offset}"
            )
        object.__setattr__(self, "onset", onset)
        object.__setattr__(self, "offset", offset)

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass
class EventList:
    """Ordered list of events (strong labels or decoded detections)."""

    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        self.events = list(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def validate_vocab(self, vocab: ClassVocabulary) -> None:
        for ev in self.events:
            if ev.event_label not in vocab:
                raise VocabularyError(
                    f"{ev.clip_id}: unknown class {ev.event_label!r}"
                )

    def by_clip(self) -> dict[str, list[Event]]:
        out: dict[str, list[Event]] = {}
        for ev in self.events:
            out.setdefault(ev.clip_id, []).append(ev)
        return out

    def clip_ids(self) -> list[str]:
        """Clip ids in first-appearance order."""
        seen: dict[str, None] = {}
        for ev in self.events:
            seen.setdefault(ev.clip_id)
        return list(seen)

    def label_set(self) -> set[str]:
        return {ev.event_label for ev in self.events}


@dataclass
class WeakLabelSet:
    """Clip-level class presence without timestamps."""

    labels: dict[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = {k: frozenset(v) for k, v in self.labels.items()}
        for clip_id, classes in self.labels.items():
            _check_name(clip_id, "clip id")
            if not classes:
                raise ValidationError(f"{clip_id}: weak label set must be non-empty")

    def validate_vocab(self, vocab: ClassVocabulary) -> None:
        for clip_id, classes in self.labels.items():
            for name in classes:
                if name not in vocab:
                    raise VocabularyError(f"{clip_id}: unknown class {name!r}")

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self.labels

    def __getitem__(self, clip_id: str) -> frozenset[str]:
        return self.labels[clip_id]


@dataclass
class TagPrediction:
    """Clip-level tag probabilities for one separated source.

    ``probs`` covers every vocabulary class plus the reserved non-target
    label.
    """

    source_id: str
    parent_clip_id: str
    probs: dict[str, float]

    def __post_init__(self):
        _check_name(self.source_id, "clip id")
        _check_name(self.parent_clip_id, "clip id")
        self.probs = {str(k): float(v) for k, v in self.probs.items()}
        for name, p in self.probs.items():
            if not (0.0 <= p <= 1.0):
                raise ValidationError(
                    f"{self.source_id}: probability {p!r} for {name!r} outside [0, 1]"
                )

    def validate_vocab(self, vocab: ClassVocabulary) -> None:
        expected = set(vocab.with_other())
        got = set(self.probs)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise VocabularyError(
                f"{self.source_id}: tag classes do not match vocabulary "
                f"(missing {missing}, unexpected {extra})"
            )


@dataclass
class SeparationManifest:
    """Mixture clip id -> ordered source ids, fixed source count per run."""

    sources: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self.sources = {k: tuple(v) for k, v in self.sources.items()}
        counts = {len(v) for v in self.sources.values()}
        if len(counts) > 1:
            raise ValidationError(
                f"source count must be identical across mixtures, got {sorted(counts)}"
            )
        seen: set[str] = set()
        for mixture_id, source_ids in self.sources.items():
            _check_name(mixture_id, "clip id")
            for sid in source_ids:
                _check_name(sid, "clip id")
                if sid in seen:
                    raise ValidationError(f"duplicate source id {sid!r}")
                seen.add(sid)

    @property
    def n_sources(self) -> int:
        if not self.sources:
            return 0
        return len(next(iter(self.sources.values())))

    def __len__(self) -> int:
        return len(self.sources)


# ---------------------------------------------------------------------------
# Atomic file writing
# ---------------------------------------------------------------------------


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# events.tsv
# ---------------------------------------------------------------------------


def parse_events(path: str | os.PathLike, vocab: ClassVocabulary | None = None) -> EventList:
    """Read a 4-column annotation TSV; row order is preserved."""
    events: list[Event] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if tuple(header.split("\t")) != EVENTS_HEADER:
            expected = "\t".join(EVENTS_HEADER)
            raise ParseError(path, 1, f"expected header {expected!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(path, line_no, f"expected 4 columns, got {len(cols)}")
            clip_id, onset_s, offset_s, label = cols
            try:
                onset = float(onset_s)
                offset = float(offset_s)
            except ValueError:
                raise ParseError(path, line_no, f"non-numeric time in {cols[1:3]}") from None
            if vocab is not None and label not in vocab:
                raise VocabularyError(f"{path}:{line_no}: unknown class {label!r}")
            try:
                events.append(Event(clip_id, onset, offset, label))
            except ValidationError as exc:
                raise ParseError(path, line_no, str(exc)) from None
    return EventList(events)


def write_events(events: EventList, path: str | os.PathLike) -> None:
    lines = ["\t".join(EVENTS_HEADER)]
    for ev in events:
        lines.append(
            f"{ev.clip_id}\t{fmt_float(ev.onset)}\t{fmt_float(ev.offset)}\t{ev.event_label}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# weak.tsv
# ---------------------------------------------------------------------------


def parse_weak_labels(path: str | os.PathLike, vocab: ClassVocabulary) -> WeakLabelSet:
    """Read clip-level labels; duplicate class names in a row collapse."""
    labels: dict[str, frozenset[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if tuple(header.split("\t")) != WEAK_HEADER:
            expected = "\t".join(WEAK_HEADER)
            raise ParseError(path, 1, f"expected header {expected!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError(path, line_no, f"expected 2 columns, got {len(cols)}")
            clip_id, joined = cols
            if clip_id in labels:
                raise ParseError(path, line_no, f"duplicate clip id {clip_id!r}")
            names = joined.split(",")
            if not all(names):
                raise ParseError(path, line_no, "empty class name in label list")
            for name in names:
                if name not in vocab:
                    raise VocabularyError(f"{path}:{line_no}: unknown class {name!r}")
            labels[clip_id] = frozenset(names)
    return WeakLabelSet(labels)


def write_weak_labels(weak: WeakLabelSet, vocab: ClassVocabulary, path: str | os.PathLike) -> None:
    lines = ["\t".join(WEAK_HEADER)]
    for clip_id, classes in weak.labels.items():
        ordered = sorted(classes, key=vocab.index)
        lines.append(f"{clip_id}\t{','.join(ordered)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# grids.jsonl
# ---------------------------------------------------------------------------


def _load_jsonl(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}") from None
            if not isinstance(record, dict):
                raise ParseError(path, line_no, "record must be a JSON object")
            yield line_no, record


def _record_fields(path, line_no, record: dict, fields: Sequence[str]) -> list:
    out = []
    for name in fields:
        if name not in record:
            raise ParseError(path, line_no, f"missing field {name!r}")
        out.append(record[name])
    return out


def parse_framegrids(path: str | os.PathLike, vocab: ClassVocabulary) -> list[FrameGrid]:
    """Read posterior grids; columns are reordered to the vocabulary order."""
    grids: list[FrameGrid] = []
    for line_no, record in _load_jsonl(path):
        clip_id, hop, classes, posteriors = _record_fields(
            path, line_no, record, ("clip_id", "hop_seconds", "classes", "posteriors")
        )
        classes = list(classes)
        if sorted(classes) != sorted(vocab.classes):
            raise VocabularyError(
                f"{path}:{line_no}: class set {classes} does not match vocabulary"
            )
        arr = np.asarray(posteriors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != len(classes):
            raise ParseError(
                path, line_no, f"posteriors must be T x {len(classes)}, got shape {arr.shape}"
            )
        perm = [classes.index(name) for name in vocab.classes]
        try:
            grids.append(FrameGrid(clip_id, hop, arr[:, perm]))
        except ValidationError as exc:
            raise type(exc)(f"{path}:{line_no}: {exc}") from None
    return grids


def write_framegrids(
    grids: Sequence[FrameGrid], vocab: ClassVocabulary, path: str | os.PathLike
) -> None:
    lines = []
    for grid in grids:
        if grid.n_classes != len(vocab):
            raise ValidationError(
                f"{grid.clip_id}: grid has {grid.n_classes} columns, vocabulary has {len(vocab)}"
            )
        record = {
            "clip_id": grid.clip_id,
            "hop_seconds": grid.hop_seconds,
            "classes": list(vocab.classes),
            "posteriors": grid.values.tolist(),
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# tags.jsonl
# ---------------------------------------------------------------------------


def parse_tags(path: str | os.PathLike, vocab: ClassVocabulary) -> list[TagPrediction]:
    tags: list[TagPrediction] = []
    for line_no, record in _load_jsonl(path):
        source_id, parent, probs = _record_fields(
            path, line_no, record, ("source_id", "parent_clip_id", "probs")
        )
        try:
            tag = TagPrediction(source_id, parent, dict(probs))
            tag.validate_vocab(vocab)
        except ValidationError as exc:
            raise type(exc)(f"{path}:{line_no}: {exc}") from None
        tags.append(tag)
    return tags


def write_tags(
    tags: Sequence[TagPrediction], vocab: ClassVocabulary, path: str | os.PathLike
) -> None:
    order = vocab.with_other()
    lines = []
    for tag in tags:
        tag.validate_vocab(vocab)
        record = {
            "source_id": tag.source_id,
            "parent_clip_id": tag.parent_clip_id,
            "probs": {name: tag.probs[name] for name in order},
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# sep_manifest.jsonl
# ---------------------------------------------------------------------------


def parse_manifest(path: str | os.PathLike) -> SeparationManifest:
    sources: dict[str, tuple[str, ...]] = {}
    for line_no, record in _load_jsonl(path):
        mixture_id, source_ids = _record_fields(path, line_no, record, ("mixture_id", "sources"))
        if mixture_id in sources:
            raise ParseError(path, line_no, f"duplicate mixture id {mixture_id!r}")
        sources[mixture_id] = tuple(source_ids)
    try:
        return SeparationManifest(sources)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_manifest(manifest: SeparationManifest, path: str | os.PathLike) -> None:
    lines = [
        json.dumps({"mixture_id": mid, "sources": list(sids)}, separators=(",", ":"))
        for mid, sids in manifest.sources.items()
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))
