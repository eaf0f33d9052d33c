"""Scoring: collar-based event F1 and polyphonic detection scores (PSDS).

Collar F1 matches detections to references per (clip, class) with a
maximum-cardinality bipartite matching, so the score is order-independent
and checkable against brute force. PSDS sweeps decision thresholds,
classifies detections with intersection criteria (detection tolerance,
ground-truth coverage, cross-trigger tolerance), builds per-class ROC
staircases of true-positive rate against effective false-positive rate
per hour, and integrates the across-class effective curve up to ``e_max``.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import ClassVocabulary, EventList, FrameGrid, ValidationError
from .decode import PostProcessConfig, _majority_filter_columns


# ---------------------------------------------------------------------------
# Collar-based event F1
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CollarConfig:
    """Onset/offset tolerances for event matching.

    The offset tolerance is the larger of a fixed collar and a fraction
    of the reference event's length.
    """

    onset_collar: float = 0.2
    offset_collar_min: float = 0.2
    offset_collar_ratio: float = 0.2

    def __post_init__(self):
        for v in (self.onset_collar, self.offset_collar_min, self.offset_collar_ratio):
            if v < 0:
                raise ValidationError(f"collar value {v!r} must be >= 0")


def events_compatible(ref_onset, ref_offset, est_onset, est_offset, cfg: CollarConfig) -> bool:
    """Collar predicate for a single (reference, estimate) pair."""
    offset_collar = max(cfg.offset_collar_min, cfg.offset_collar_ratio * (ref_offset - ref_onset))
    return (
        abs(est_onset - ref_onset) <= cfg.onset_collar
        and abs(est_offset - ref_offset) <= offset_collar
    )


def _kuhn_matching(adjacency: Sequence[Sequence[int]], n_right: int) -> list[int]:
    """Maximum bipartite matching; returns right-side partner per left node."""
    match_right = [-1] * n_right

    def try_augment(u: int, visited: list[bool]) -> bool:
        for v in adjacency[u]:
            if visited[v]:
                continue
            visited[v] = True
            if match_right[v] == -1 or try_augment(match_right[v], visited):
                match_right[v] = u
                return True
        return False

    for u in range(len(adjacency)):
        try_augment(u, [False] * n_right)
    match_left = [-1] * len(adjacency)
    for v, u in enumerate(match_right):
        if u != -1:
            match_left[u] = v
    return match_left


def match_events(
    ref: EventList, est: EventList, cfg: CollarConfig = CollarConfig()
) -> list[tuple[int, int]]:
    """Maximum-cardinality one-to-one matching within each (clip, class).

    Returns (ref_index, est_index) pairs into the two input lists; each
    event is matched at most once.
    """
    ref_groups: dict[tuple[str, str], list[int]] = {}
    for i, ev in enumerate(ref):
        ref_groups.setdefault((ev.clip_id, ev.event_label), []).append(i)
    est_groups: dict[tuple[str, str], list[int]] = {}
    for j, ev in enumerate(est):
        est_groups.setdefault((ev.clip_id, ev.event_label), []).append(j)

    pairs: list[tuple[int, int]] = []
    for key, ref_idx in ref_groups.items():
        est_idx = est_groups.get(key)
        if not est_idx:
            continue
        adjacency = []
        for i in ref_idx:
            r = ref.events[i]
            adjacency.append(
                [
                    k
                    for k, j in enumerate(est_idx)
                    if events_compatible(
                        r.onset, r.offset, est.events[j].onset, est.events[j].offset, cfg
                    )
                ]
            )
        match_left = _kuhn_matching(adjacency, len(est_idx))
        for u, v in enumerate(match_left):
            if v != -1:
                pairs.append((ref_idx[u], est_idx[v]))
    pairs.sort()
    return pairs


@dataclass(frozen=True)
class ClassScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


def _prf(tp: int, fp: int, fn: int) -> ClassScore:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassScore(tp, fp, fn, precision, recall, f1)


@dataclass
class F1Report:
    """Per-class counts and scores plus the unweighted macro F1."""

    per_class: dict[str, ClassScore]
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "per_class": {
                name: {
                    "tp": s.tp,
                    "fp": s.fp,
                    "fn": s.fn,
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                }
                for name, s in self.per_class.items()
            },
            "macro_f1": self.macro_f1,
        }


def event_f1(
    ref: EventList,
    est: EventList,
    cfg: CollarConfig = CollarConfig(),
    vocab: ClassVocabulary | None = None,
) -> F1Report:
    """Collar-based event F1; macro averages over every vocabulary class."""
    if vocab is None:
        vocab = ClassVocabulary(tuple(sorted(ref.label_set() | est.label_set())))
    ref.validate_vocab(vocab)
    est.validate_vocab(vocab)
    matched = match_events(ref, est, cfg)
    tp_per_class: dict[str, int] = {name: 0 for name in vocab.classes}
    for i, _ in matched:
        tp_per_class[ref.events[i].event_label] += 1
    ref_counts = {name: 0 for name in vocab.classes}
    est_counts = {name: 0 for name in vocab.classes}
    for ev in ref:
        ref_counts[ev.event_label] += 1
    for ev in est:
        est_counts[ev.event_label] += 1
    per_class = {
        name: _prf(
            tp_per_class[name],
            est_counts[name] - tp_per_class[name],
            ref_counts[name] - tp_per_class[name],
        )
        for name in vocab.classes
    }
    macro = sum(s.f1 for s in per_class.values()) / len(per_class)
    return F1Report(per_class, macro)


# ---------------------------------------------------------------------------
# PSDS
# ---------------------------------------------------------------------------


def default_operating_points(n: int = 50, low: float = 0.01, high: float = 0.99) -> tuple[float, ...]:
    return tuple(float(t) for t in np.linspace(low, high, n))


@dataclass(frozen=True)
class PSDSConfig:
    """Detection/ground-truth/cross-trigger criteria and ROC parameters.

    The two conventional parameterizations are provided as ``PSDS1`` and
    ``PSDS2`` below; both are plain config, not constants of the scorer.
    """

    dtc: float = 0.7
    gtc: float = 0.7
    cttc: float = 0.3
    alpha_ct: float = 0.0
    alpha_st: float = 1.0
    e_max: float = 100.0
    operating_points: tuple[float, ...] = field(default_factory=default_operating_points)

    def __post_init__(self):
        object.__setattr__(self, "operating_points", tuple(float(t) for t in self.operating_points))
        for name, v in (("dtc", self.dtc), ("gtc", self.gtc), ("cttc", self.cttc)):
            if not (0.0 < v <= 1.0):
                raise ValidationError(f"{name}={v!r} outside (0, 1]")
        if self.alpha_ct < 0 or self.alpha_st < 0:
            raise ValidationError("alpha_ct and alpha_st must be >= 0")
        if not self.e_max > 0:
            raise ValidationError("e_max must be > 0")
        pts = self.operating_points
        if not pts:
            raise ValidationError("operating_points must be non-empty")
        if any(not (0.0 < t < 1.0) for t in pts):
            raise ValidationError("operating points must lie in (0, 1)")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValidationError("operating points must be strictly increasing")

    @classmethod
    def from_dict(cls, data: Mapping) -> "PSDSConfig":
        kwargs = dict(data)
        if "operating_points" in kwargs:
            kwargs["operating_points"] = tuple(kwargs["operating_points"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "dtc": self.dtc,
            "gtc": self.gtc,
            "cttc": self.cttc,
            "alpha_ct": self.alpha_ct,
            "alpha_st": self.alpha_st,
            "e_max": self.e_max,
            "operating_points": list(self.operating_points),
        }


PSDS1 = PSDSConfig(dtc=0.7, gtc=0.7, cttc=0.3, alpha_ct=0.0, alpha_st=1.0, e_max=100.0)
PSDS2 = PSDSConfig(dtc=0.1, gtc=0.1, cttc=0.3, alpha_ct=0.5, alpha_st=1.0, e_max=100.0)


@dataclass
class PSDSReport:
    """PSDS value with the effective curve and per-class ROC points."""

    psds: float
    effective_curve: list[tuple[float, float, float]]
    class_rocs: dict[str, list[tuple[float, float, float]]]

    def to_dict(self) -> dict:
        return {
            "psds": self.psds,
            "effective_curve": [list(p) for p in self.effective_curve],
            "class_rocs": {k: [list(p) for p in v] for k, v in self.class_rocs.items()},
        }


class _Coverage:
    """Total covered time of sorted disjoint intervals, vectorized queries."""

    def __init__(self, starts: np.ndarray, ends: np.ndarray):
        self.starts = starts
        self.ends = ends
        self.prefix = np.concatenate([[0.0], np.cumsum(ends - starts)])

    @classmethod
    def from_intervals(cls, starts: np.ndarray, ends: np.ndarray) -> "_Coverage":
        """Build from possibly overlapping intervals by merging."""
        if len(starts) == 0:
            return cls(np.empty(0), np.empty(0))
        order = np.argsort(starts, kind="stable")
        starts, ends = starts[order], ends[order]
        merged_s, merged_e = [starts[0]], [ends[0]]
        for s, e in zip(starts[1:], ends[1:]):
            if s <= merged_e[-1]:
                merged_e[-1] = max(merged_e[-1], e)
            else:
                merged_s.append(s)
                merged_e.append(e)
        return cls(np.asarray(merged_s), np.asarray(merged_e))

    def covered_before(self, x: np.ndarray) -> np.ndarray:
        j = np.searchsorted(self.starts, x, side="right")
        cov = self.prefix[j]
        prev = np.maximum(j - 1, 0)
        overshoot = np.where(
            j >= 1, np.maximum(0.0, self.ends[prev] - x), 0.0
        ) if len(self.starts) else np.zeros_like(np.asarray(x, dtype=np.float64))
        return cov - overshoot

    def intersect(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Vectorized |[a_i, b_i) ∩ union| for interval arrays."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        return self.covered_before(b) - self.covered_before(a)


def dataset_duration_seconds(grids: Sequence[FrameGrid]) -> float:
    return float(sum(g.duration_seconds for g in grids))


def _decode_all_operating_points(
    grids: Sequence[FrameGrid],
    windows: np.ndarray,
    thresholds: Sequence[float],
    bases: np.ndarray,
):
    """Decode every grid at every threshold; detections in global time.

    Yields, per threshold, per-class (onsets, offsets) arrays sorted by
    onset, with each clip shifted onto its own disjoint band so interval
    queries can run dataset-wide.
    """
    n_classes = len(windows)
    window_groups = [
        (int(w), np.flatnonzero(windows == w)) for w in np.unique(windows)
    ]
    # Group clips by frame count so thresholding/median runs stacked.
    shape_groups: dict[int, list[int]] = {}
    for k, grid in enumerate(grids):
        shape_groups.setdefault(grid.n_frames, []).append(k)
    stacks = []
    for t_frames, clip_idx in shape_groups.items():
        stack = np.stack([grids[k].values for k in clip_idx])
        hops = np.array([grids[k].hop_seconds for k in clip_idx])
        stacks.append((np.asarray(clip_idx), stack, hops, t_frames))

    for threshold in thresholds:
        per_class_on: list[list[np.ndarray]] = [[] for _ in range(n_classes)]
        per_class_off: list[list[np.ndarray]] = [[] for _ in range(n_classes)]
        for clip_idx, stack, hops, t_frames in stacks:
            active = stack >= threshold
            smoothed = np.empty_like(active)
            k_clips = active.shape[0]
            for window, cols in window_groups:
                flat = active[:, :, cols].transpose(1, 0, 2).reshape(t_frames, -1)
                sm = _majority_filter_columns(flat, window)
                smoothed[:, :, cols] = sm.reshape(t_frames, k_clips, len(cols)).transpose(
                    1, 0, 2
                )
            # Run extraction over all (clip, class) rows at once.
            rows = smoothed.transpose(0, 2, 1).reshape(-1, t_frames)
            delta = np.diff(rows.astype(np.int8), axis=1, prepend=0, append=0)
            r_s, p_s = np.nonzero(delta == 1)
            r_e, p_e = np.nonzero(delta == -1)
            local_clip = r_s // n_classes
            cls_idx = r_s % n_classes
            hop = hops[local_clip]
            base = bases[clip_idx[local_clip]]
            onset = p_s * hop + base
            offset = p_e * hop + base
            for c in range(n_classes):
                mask = cls_idx == c
                if mask.any():
                    per_class_on[c].append(onset[mask])
                    per_class_off[c].append(offset[mask])
        out = []
        for c in range(n_classes):
            if per_class_on[c]:
                on = np.concatenate(per_class_on[c])
                off = np.concatenate(per_class_off[c])
                order = np.argsort(on, kind="stable")
                out.append((on[order], off[order]))
            else:
                out.append((np.empty(0), np.empty(0)))
        yield out


def psds_many(
    grids: Sequence[FrameGrid],
    ref: EventList,
    decode_cfg: PostProcessConfig,
    psds_cfgs: Sequence[PSDSConfig],
    vocab: ClassVocabulary,
) -> list[PSDSReport]:
    """Score several PSDS parameterizations sharing one detection sweep.

    All configs must use the same operating points (they share the decoded
    detections; only the counting criteria differ).
    """
    if not ref.events:
        raise ValidationError("reference event list is empty")
    if not grids:
        raise ValidationError("no posterior grids given")
    op_sets = {cfg.operating_points for cfg in psds_cfgs}
    if len(op_sets) > 1:
        raise ValidationError("all PSDS configs must share operating points")
    ref.validate_vocab(vocab)
    total_dur = dataset_duration_seconds(grids)
    if not total_dur > 0:
        raise ValidationError("dataset duration must be > 0")

    clip_ids = [g.clip_id for g in grids]
    if len(set(clip_ids)) != len(clip_ids):
        raise ValidationError("duplicate clip ids in grids")
    clip_index = {cid: k for k, cid in enumerate(clip_ids)}
    missing = {ev.clip_id for ev in ref} - set(clip_ids)
    if missing:
        raise ValidationError(f"reference clips without grids: {sorted(missing)}")
    for ev in ref:
        clip_dur = grids[clip_index[ev.clip_id]].duration_seconds
        if ev.offset > clip_dur + 1e-9:
            raise ValidationError(
                f"{ev.clip_id}: reference event ending at {ev.offset} extends "
                f"past the clip's {clip_dur}s"
            )

    # Disjoint global bands, one per clip, so coverage queries span the dataset.
    band = max(g.duration_seconds for g in grids) + 1.0
    bases = np.arange(len(grids), dtype=np.float64) * band

    n_classes = len(vocab)
    gt_on: list[list[float]] = [[] for _ in range(n_classes)]
    gt_off: list[list[float]] = [[] for _ in range(n_classes)]
    for ev in ref:
        c = vocab.index(ev.event_label)
        base = bases[clip_index[ev.clip_id]]
        gt_on[c].append(ev.onset + base)
        gt_off[c].append(ev.offset + base)
    gt_on_arr = [np.asarray(v) for v in gt_on]
    gt_off_arr = [np.asarray(v) for v in gt_off]
    gt_cov = [
        _Coverage.from_intervals(gt_on_arr[c], gt_off_arr[c]) for c in range(n_classes)
    ]
    n_ref = np.array([len(v) for v in gt_on], dtype=np.int64)
    gt_dur = np.array(
        [float(np.sum(gt_off_arr[c] - gt_on_arr[c])) for c in range(n_classes)]
    )
    evaluated = np.flatnonzero(n_ref > 0)

    ops = psds_cfgs[0].operating_points
    windows = decode_cfg.window_vector(vocab)
    need_ct = any(cfg.alpha_ct > 0 for cfg in psds_cfgs)

    n_cfg = len(psds_cfgs)
    n_op = len(ops)
    tp = np.zeros((n_cfg, n_op, n_classes), dtype=np.int64)
    fp = np.zeros((n_cfg, n_op, n_classes), dtype=np.int64)
    ct = np.zeros((n_cfg, n_op, n_classes, n_classes), dtype=np.int64)

    eval_set = set(evaluated.tolist())
    for oi, dets in enumerate(
        _decode_all_operating_points(grids, windows, ops, bases)
    ):
        for c in range(n_classes):
            on, off = dets[c]
            if len(on) == 0:
                continue
            lengths = off - on
            ratio_same = gt_cov[c].intersect(on, off) / lengths
            for gi, cfg in enumerate(psds_cfgs):
                passing = ratio_same >= cfg.dtc
                fp[gi, oi, c] = int(np.sum(~passing))
                if c in eval_set and passing.any():
                    det_cov = _Coverage(on[passing], off[passing])
                    covered = det_cov.intersect(gt_on_arr[c], gt_off_arr[c])
                    tp[gi, oi, c] = int(
                        np.sum(covered / (gt_off_arr[c] - gt_on_arr[c]) >= cfg.gtc)
                    )
                if need_ct and cfg.alpha_ct > 0 and (~passing).any():
                    f_on, f_off, f_len = on[~passing], off[~passing], lengths[~passing]
                    for c2 in evaluated:
                        if c2 == c:
                            continue
                        ratio_cross = gt_cov[c2].intersect(f_on, f_off) / f_len
                        ct[gi, oi, c, c2] = int(np.sum(ratio_cross >= cfg.cttc))

    reports = []
    for gi, cfg in enumerate(psds_cfgs):
        reports.append(
            _roc_report(
                cfg, ops, vocab, evaluated, n_ref, gt_dur, total_dur,
                tp[gi], fp[gi], ct[gi],
            )
        )
    return reports


def _roc_report(
    cfg: PSDSConfig,
    ops: Sequence[float],
    vocab: ClassVocabulary,
    evaluated: np.ndarray,
    n_ref: np.ndarray,
    gt_dur: np.ndarray,
    total_dur: float,
    tp: np.ndarray,
    fp: np.ndarray,
    ct: np.ndarray,
) -> PSDSReport:
    """Per-class monotone ROC staircases and the integrated effective curve."""
    n_op = len(ops)
    tpr = np.zeros((n_op, len(evaluated)))
    efpr = np.zeros((n_op, len(evaluated)))
    for j, c in enumerate(evaluated):
        tpr[:, j] = tp[:, c] / n_ref[c]
        rate = fp[:, c] * 3600.0 / total_dur
        if cfg.alpha_ct > 0 and len(evaluated) > 1:
            others = [c2 for c2 in evaluated if c2 != c]
            ctr = np.stack(
                [ct[:, c, c2] * 3600.0 / gt_dur[c2] for c2 in others], axis=1
            )
            rate = rate + cfg.alpha_ct * ctr.mean(axis=1)
        efpr[:, j] = rate

    # Monotone non-decreasing upper staircase per class.
    stairs = []
    for j in range(len(evaluated)):
        order = np.lexsort((tpr[:, j], efpr[:, j]))
        x = efpr[order, j]
        y = np.maximum.accumulate(tpr[order, j])
        stairs.append((x, y))

    grid_vals = [np.array([0.0, cfg.e_max])]
    for x, _ in stairs:
        grid_vals.append(x[x <= cfg.e_max])
    grid = np.unique(np.concatenate(grid_vals))

    step_tpr = np.zeros((len(grid), len(evaluated)))
    for j, (x, y) in enumerate(stairs):
        idx = np.searchsorted(x, grid, side="right") - 1
        step_tpr[:, j] = np.where(idx >= 0, y[np.maximum(idx, 0)], 0.0)

    mean_tpr = step_tpr.mean(axis=1)
    std_tpr = step_tpr.std(axis=1)
    etpr = np.maximum(mean_tpr - cfg.alpha_st * std_tpr, 0.0)
    area = float(np.sum(np.diff(grid) * etpr[:-1]))
    value = area / cfg.e_max

    effective_curve = [
        (float(grid[i]), float(mean_tpr[i]), float(std_tpr[i])) for i in range(len(grid))
    ]
    class_rocs = {
        vocab.classes[c]: [
            (float(ops[oi]), float(efpr[oi, j]), float(tpr[oi, j])) for oi in range(n_op)
        ]
        for j, c in enumerate(evaluated)
    }
    return PSDSReport(value, effective_curve, class_rocs)


def psds(
    grids: Sequence[FrameGrid],
    ref: EventList,
    decode_cfg: PostProcessConfig,
    psds_cfg: PSDSConfig,
    vocab: ClassVocabulary,
) -> PSDSReport:
    """Polyphonic detection score over the configured operating points."""
    return psds_many(grids, ref, decode_cfg, [psds_cfg], vocab)[0]


# ---------------------------------------------------------------------------
# Report tables
# ---------------------------------------------------------------------------


@dataclass
class ReportTables:
    """System-level metric grid plus the class-by-system F1 breakdown."""

    systems: list[str]
    overall: dict[str, dict[str, float | None]]
    classwise: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "systems": list(self.systems),
            "overall": {k: dict(v) for k, v in self.overall.items()},
            "classwise_f1": {k: dict(v) for k, v in self.classwise.items()},
        }

    def to_text(self) -> str:
        def pct(x: float | None) -> str:
            return "-" if x is None else f"{100.0 * x:.1f}"

        lines = []
        headers = ["System", "Collar-based F1", "PSDS1", "PSDS2"]
        rows = [
            [name, pct(m.get("collar_f1")), pct(m.get("psds1")), pct(m.get("psds2"))]
            for name, m in self.overall.items()
        ]
        lines.extend(_aligned(headers, rows))
        if self.classwise:
            lines.append("")
            headers = ["Event class", *self.systems]
            rows = [
                [name, *[pct(per_system.get(s)) for s in self.systems]]
                for name, per_system in self.classwise.items()
            ]
            lines.extend(_aligned(headers, rows))
        return "\n".join(lines) + "\n"


def _aligned(headers: list[str], rows: list[list[str]]) -> list[str]:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*headers), fmt.format(*["-" * w for w in widths])]
    out.extend(fmt.format(*row) for row in rows)
    return out


def report_tables(
    f1_reports: Mapping[str, F1Report],
    psds1_reports: Mapping[str, PSDSReport] | None = None,
    psds2_reports: Mapping[str, PSDSReport] | None = None,
) -> ReportTables:
    """Assemble the systems x metrics grid and the class-wise F1 table."""
    psds1_reports = psds1_reports or {}
    psds2_reports = psds2_reports or {}
    systems = list(f1_reports)
    for extra in (psds1_reports, psds2_reports):
        for name in extra:
            if name not in systems:
                systems.append(name)
    overall: dict[str, dict[str, float | None]] = {}
    for name in systems:
        f1 = f1_reports.get(name)
        p1 = psds1_reports.get(name)
        p2 = psds2_reports.get(name)
        overall[name] = {
            "collar_f1": f1.macro_f1 if f1 else None,
            "psds1": p1.psds if p1 else None,
            "psds2": p2.psds if p2 else None,
        }
    classwise: dict[str, dict[str, float]] = {}
    for name in systems:
        f1 = f1_reports.get(name)
        if not f1:
            continue
        for cls, score in f1.per_class.items():
            classwise.setdefault(cls, {})[name] = score.f1
    return ReportTables(systems, overall, classwise)
