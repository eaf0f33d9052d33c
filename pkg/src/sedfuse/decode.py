"""Turn frame posteriors into event lists.

The decoding chain is ``binarize -> median_smooth -> extract_events``.
Thresholding uses ``>=`` so the conventional 0.5 operating point includes
posteriors that are exactly 0.5. The majority filter pads with inactive
frames at the clip edges, which biases against spurious clip-edge events.
``rasterize`` inverts ``extract_events`` for frame-aligned events and is
what produces frame targets for fusion fitting.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import (
    BinaryGrid,
    ClassVocabulary,
    Event,
    EventList,
    FrameGrid,
    ValidationError,
)


@dataclass(frozen=True)
class PostProcessConfig:
    """Per-class decision thresholds and median-filter windows.

    Classes absent from the override maps fall back to the defaults.
    Windows must be odd so the filter is centered.
    """

    default_threshold: float = 0.5
    default_median_window: int = 7
    class_thresholds: Mapping[str, float] = field(default_factory=dict)
    class_median_windows: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "class_thresholds", dict(self.class_thresholds))
        object.__setattr__(self, "class_median_windows", dict(self.class_median_windows))
        for t in [self.default_threshold, *self.class_thresholds.values()]:
            if not (0.0 < float(t) < 1.0):
                raise ValidationError(f"threshold {t!r} outside (0, 1)")
        for w in [self.default_median_window, *self.class_median_windows.values()]:
            if not (isinstance(w, (int, np.integer)) and w >= 1):
                raise ValidationError(f"median window {w!r} must be a positive integer")
            if w % 2 == 0:
                raise ValidationError(f"median window {w!r} must be odd")

    def threshold_for(self, class_name: str) -> float:
        return float(self.class_thresholds.get(class_name, self.default_threshold))

    def window_for(self, class_name: str) -> int:
        return int(self.class_median_windows.get(class_name, self.default_median_window))

    def threshold_vector(self, vocab: ClassVocabulary) -> np.ndarray:
        return np.array([self.threshold_for(c) for c in vocab.classes], dtype=np.float64)

    def window_vector(self, vocab: ClassVocabulary) -> np.ndarray:
        return np.array([self.window_for(c) for c in vocab.classes], dtype=np.int64)

    def with_global_threshold(self, threshold: float) -> "PostProcessConfig":
        """Same windows, one threshold for every class (operating-point sweeps)."""
        return replace(self, default_threshold=float(threshold), class_thresholds={})

    @classmethod
    def from_dict(cls, data: Mapping) -> "PostProcessConfig":
        return cls(
            default_threshold=data.get("default_threshold", 0.5),
            default_median_window=data.get("default_median_window", 7),
            class_thresholds=data.get("thresholds", {}),
            class_median_windows=data.get("median_windows", {}),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PostProcessConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "default_threshold": self.default_threshold,
            "default_median_window": self.default_median_window,
            "thresholds": dict(self.class_thresholds),
            "median_windows": dict(self.class_median_windows),
        }


def binarize(grid: FrameGrid, cfg: PostProcessConfig, vocab: ClassVocabulary) -> BinaryGrid:
    """Activate cells whose posterior is >= the class threshold."""
    if grid.n_classes != len(vocab):
        raise ValidationError(
            f"{grid.clip_id}: grid has {grid.n_classes} columns, vocabulary has {len(vocab)}"
        )
    active = grid.values >= cfg.threshold_vector(vocab)[None, :]
    return BinaryGrid(grid.clip_id, grid.hop_seconds, active)


def _majority_filter_columns(values: np.ndarray, window: int) -> np.ndarray:
    """Centered binary majority vote per column; outside frames count inactive."""
    if window == 1:
        return values.copy()
    t = values.shape[0]
    pad = window // 2
    padded = np.zeros((t + 2 * pad, values.shape[1]), dtype=np.int64)
    padded[pad : pad + t] = values
    csum = np.zeros((t + 2 * pad + 1, values.shape[1]), dtype=np.int64)
    np.cumsum(padded, axis=0, out=csum[1:])
    counts = csum[window:] - csum[: t + 2 * pad + 1 - window]
    return counts >= (window // 2 + 1)


def median_smooth(bgrid: BinaryGrid, cfg: PostProcessConfig, vocab: ClassVocabulary) -> BinaryGrid:
    """Per-class binary median (= majority) filter with the class window."""
    if bgrid.n_classes != len(vocab):
        raise ValidationError(
            f"{bgrid.clip_id}: grid has {bgrid.n_classes} columns, vocabulary has {len(vocab)}"
        )
    windows = cfg.window_vector(vocab)
    out = np.empty_like(bgrid.values)
    for window in np.unique(windows):
        cols = np.flatnonzero(windows == window)
        out[:, cols] = _majority_filter_columns(bgrid.values[:, cols], int(window))
    return BinaryGrid(bgrid.clip_id, bgrid.hop_seconds, out)


def _runs(column: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximal active runs as (start, end_exclusive) frame index arrays."""
    delta = np.diff(column.astype(np.int8), prepend=0, append=0)
    return np.flatnonzero(delta == 1), np.flatnonzero(delta == -1)


def extract_events(bgrid: BinaryGrid, vocab: ClassVocabulary) -> EventList:
    """Run-length decode: run [a, b] becomes the event (a*hop, (b+1)*hop)."""
    if bgrid.n_classes != len(vocab):
        raise ValidationError(
            f"{bgrid.clip_id}: grid has {bgrid.n_classes} columns, vocabulary has {len(vocab)}"
        )
    hop = bgrid.hop_seconds
    events: list[Event] = []
    for c, name in enumerate(vocab.classes):
        starts, ends = _runs(bgrid.values[:, c])
        for a, b in zip(starts.tolist(), ends.tolist()):
            events.append(Event(bgrid.clip_id, a * hop, b * hop, name))
    return EventList(events)


def decode(grid: FrameGrid, cfg: PostProcessConfig, vocab: ClassVocabulary) -> EventList:
    """binarize -> median_smooth -> extract_events for one clip."""
    return extract_events(median_smooth(binarize(grid, cfg, vocab), cfg, vocab), vocab)


def decode_many(
    grids: Sequence[FrameGrid], cfg: PostProcessConfig, vocab: ClassVocabulary
) -> EventList:
    """Decode a whole dump; events concatenate in clip order."""
    events: list[Event] = []
    for grid in grids:
        events.extend(decode(grid, cfg, vocab))
    return EventList(events)


def rasterize(
    events: EventList,
    hop_seconds: float,
    frames: int,
    vocab: ClassVocabulary,
    clip_id: str | None = None,
) -> BinaryGrid:
    """Frame f is active iff f*hop lies inside [onset, offset) of an event.

    All events must belong to one clip; pass ``clip_id`` explicitly when
    the list may be empty.
    """
    if frames < 1:
        raise ValidationError("frames must be >= 1")
    clip_ids = {ev.clip_id for ev in events}
    if len(clip_ids) > 1:
        raise ValidationError(f"events span multiple clips: {sorted(clip_ids)}")
    if clip_id is None:
        if not clip_ids:
            raise ValidationError("empty event list needs an explicit clip_id")
        clip_id = next(iter(clip_ids))
    elif clip_ids and next(iter(clip_ids)) != clip_id:
        raise ValidationError(f"events belong to {next(iter(clip_ids))!r}, not {clip_id!r}")

    clip_end = frames * hop_seconds
    times = np.arange(frames, dtype=np.float64) * hop_seconds
    values = np.zeros((frames, len(vocab)), dtype=bool)
    for ev in events:
        if ev.offset > clip_end + 1e-9:
            raise ValidationError(
                f"{clip_id}: event ending at {ev.offset} extends past clip end {clip_end}"
            )
        values[(times >= ev.onset) & (times < ev.offset), vocab.index(ev.event_label)] = True
    return BinaryGrid(clip_id, hop_seconds, values)
