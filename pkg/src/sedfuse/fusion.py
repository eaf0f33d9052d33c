"""Prediction-combination mathematics for frame-level posteriors.

Three fusion families over M aligned model dumps:

* pair blending: ``alpha * p_a + (1 - alpha) * p_b`` with ``alpha`` fitted
  post-hoc by grid search on a development set;
* class-wise discriminative fusion: per class, a softmax over the models'
  development-set F1 scores (scaled by ``beta``) weights the posteriors.
  ``normalized`` mode makes the weights a convex combination; ``faithful``
  mode additionally divides by M, which scales every output by 1/M and is
  kept for fidelity (binarizing faithful output at t/M equals binarizing
  normalized output at t);
* baselines: equal-weight average and per-class logistic regression fused
  at frame level, trained with deterministic full-batch gradient descent.

All math is pure and deterministic with fixed summation order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ClassVocabulary,
    EventList,
    FrameGrid,
    ValidationError,
    atomic_write_text,
)
from .decode import PostProcessConfig, decode_many, rasterize
from .metrics import CollarConfig, F1Report, event_f1

DEFAULT_BETA_SWEEP = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0)

OBJECTIVE_MACRO_F1 = "macro-collar-f1"
OBJECTIVE_FRAME_BCE = "frame-bce"

_BCE_EPS = 1e-12


def _require_aligned(grids: Sequence[FrameGrid]) -> FrameGrid:
    if not grids:
        raise ValidationError("need at least one grid")
    first = grids[0]
    for g in grids[1:]:
        if (
            g.clip_id != first.clip_id
            or g.values.shape != first.values.shape
            or g.hop_seconds != first.hop_seconds
        ):
            raise ValidationError(
                f"grids not aligned: ({first.clip_id}, {first.values.shape}, "
                f"{first.hop_seconds}) vs ({g.clip_id}, {g.values.shape}, {g.hop_seconds})"
            )
    return first


# ---------------------------------------------------------------------------
# Pair combination
# ---------------------------------------------------------------------------


def combine_pair(p_a: FrameGrid, p_b: FrameGrid, alpha: float) -> FrameGrid:
    """Elementwise convex combination ``alpha * p_a + (1 - alpha) * p_b``."""
    _require_aligned([p_a, p_b])
    if not (0.0 <= alpha <= 1.0):
        raise ValidationError(f"alpha {alpha!r} outside [0, 1]")
    # Endpoint and equal-input short circuits keep those cases bit-exact.
    if alpha == 1.0 or np.array_equal(p_a.values, p_b.values):
        return FrameGrid(p_a.clip_id, p_a.hop_seconds, p_a.values)
    if alpha == 0.0:
        return FrameGrid(p_b.clip_id, p_b.hop_seconds, p_b.values)
    mixed = np.clip(alpha * p_a.values + (1.0 - alpha) * p_b.values, 0.0, 1.0)
    return FrameGrid(p_a.clip_id, p_a.hop_seconds, mixed)


@dataclass
class AlphaFit:
    """Fitted pair weight with the full search curve (higher = better)."""

    alpha: float
    objective: str
    curve: list[tuple[float, float]]

    def best_score(self) -> float:
        return max(s for _, s in self.curve)


def _objective_score(
    combined: Sequence[FrameGrid],
    truth: EventList,
    decode_cfg: PostProcessConfig,
    vocab: ClassVocabulary,
    objective: str,
    collar: CollarConfig,
) -> float:
    if objective == OBJECTIVE_MACRO_F1:
        return event_f1(truth, decode_many(combined, decode_cfg, vocab), collar, vocab).macro_f1
    if objective == OBJECTIVE_FRAME_BCE:
        return -frame_bce(combined, truth, vocab)
    raise ValidationError(f"unknown objective {objective!r}")


def frame_bce(grids: Sequence[FrameGrid], truth: EventList, vocab: ClassVocabulary) -> float:
    """Mean binary cross-entropy of posteriors against rasterized truth."""
    by_clip = truth.by_clip()
    total = 0.0
    count = 0
    for grid in grids:
        target = rasterize(
            EventList(by_clip.get(grid.clip_id, [])),
            grid.hop_seconds,
            grid.n_frames,
            vocab,
            clip_id=grid.clip_id,
        ).values
        p = np.clip(grid.values, _BCE_EPS, 1.0 - _BCE_EPS)
        total += float(-np.sum(np.where(target, np.log(p), np.log1p(-p))))
        count += target.size
    if count == 0:
        raise ValidationError("no frames to score")
    return total / count


def fit_alpha(
    dev_pairs: Sequence[tuple[FrameGrid, FrameGrid]],
    dev_truth: EventList,
    decode_cfg: PostProcessConfig,
    vocab: ClassVocabulary,
    objective: str = OBJECTIVE_MACRO_F1,
    collar: CollarConfig = CollarConfig(),
) -> AlphaFit:
    """Grid-search alpha over {0.00, 0.01, ..., 1.00} on a development set.

    Ties are broken toward 0.5, then toward the smaller alpha, so a flat
    curve lands on the balanced blend.
    """
    if not dev_pairs:
        raise ValidationError("development set is empty")
    if not dev_truth.events:
        raise ValidationError("development truth is empty")
    curve: list[tuple[float, float]] = []
    for i in range(101):
        alpha = i / 100.0
        combined = [combine_pair(a, b, alpha) for a, b in dev_pairs]
        curve.append(
            (alpha, _objective_score(combined, dev_truth, decode_cfg, vocab, objective, collar))
        )
    best_score = max(s for _, s in curve)
    candidates = [a for a, s in curve if s == best_score]
    alpha = min(candidates, key=lambda a: (abs(a - 0.5), a))
    return AlphaFit(alpha, objective, curve)


# ---------------------------------------------------------------------------
# Class-wise discriminative fusion
# ---------------------------------------------------------------------------


@dataclass
class ClassF1Table:
    """Development-set class-wise F1 per model: the fusion's skill matrix."""

    models: tuple[str, ...]
    classes: tuple[str, ...]
    values: np.ndarray  # (M, C)

    def __post_init__(self):
        self.models = tuple(self.models)
        self.classes = tuple(self.classes)
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.shape != (len(self.models), len(self.classes)):
            raise ValidationError(
                f"F1 table shape {arr.shape} does not match "
                f"{len(self.models)} models x {len(self.classes)} classes"
            )
        if len(self.models) < 1:
            raise ValidationError("F1 table needs at least one model")
        if not ((arr >= 0.0) & (arr <= 1.0)).all():
            raise ValidationError("F1 values must lie in [0, 1]")
        arr.setflags(write=False)
        self.values = arr

    @classmethod
    def from_reports(
        cls, reports: Mapping[str, F1Report], vocab: ClassVocabulary
    ) -> "ClassF1Table":
        models = tuple(reports)
        values = np.array(
            [[reports[m].per_class[c].f1 for c in vocab.classes] for m in models]
        )
        return cls(models, vocab.classes, values)

    def save(self, path: str | os.PathLike) -> None:
        record = {
            "models": list(self.models),
            "classes": list(self.classes),
            "f1": self.values.tolist(),
        }
        atomic_write_text(path, json.dumps(record, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ClassF1Table":
        with open(path, "r", encoding="utf-8") as fh:
            record = json.load(fh)
        return cls(tuple(record["models"]), tuple(record["classes"]), record["f1"])


@dataclass
class FusionWeights:
    """Per-class softmax weights over models; columns sum to one."""

    values: np.ndarray  # (M, C)
    beta: float
    mode: str = "normalized"

    def __post_init__(self):
        if self.mode not in ("normalized", "faithful"):
            raise ValidationError(f"unknown fusion mode {self.mode!r}")
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValidationError("weights must be an M x C matrix")
        arr.setflags(write=False)
        self.values = arr

    @property
    def n_models(self) -> int:
        return self.values.shape[0]


def classwise_weights(
    table: ClassF1Table, beta: float, mode: str = "normalized"
) -> FusionWeights:
    """Per-class softmax of ``beta * F1`` over models (max-subtracted)."""
    if not np.isfinite(beta):
        raise ValidationError(f"beta must be finite, got {beta!r}")
    scaled = beta * table.values
    scaled = scaled - scaled.max(axis=0, keepdims=True)
    expd = np.exp(scaled)
    weights = expd / expd.sum(axis=0, keepdims=True)
    return FusionWeights(weights, float(beta), mode)


def fuse_classwise(grids: Sequence[FrameGrid], weights: FusionWeights) -> FrameGrid:
    """Weighted per-class combination of M aligned grids.

    ``normalized`` mode is the convex combination (fusing identical grids
    returns the grid unchanged); ``faithful`` mode divides the result by M.
    """
    first = _require_aligned(grids)
    if weights.n_models != len(grids):
        raise ValidationError(
            f"{weights.n_models} weight rows for {len(grids)} grids"
        )
    if weights.values.shape[1] != first.n_classes:
        raise ValidationError(
            f"{weights.values.shape[1]} weight columns for {first.n_classes} classes"
        )
    # Anchored form: g1 + sum_m w_m * (g_m - g1). With weight columns
    # summing to one this equals the weighted sum, and fusing M copies of
    # the same grid reproduces it bit-exactly.
    anchor = grids[0].values
    out = anchor.copy()
    for m in range(1, len(grids)):
        out += weights.values[m][None, :] * (grids[m].values - anchor)
    out = np.clip(out, 0.0, 1.0)
    if weights.mode == "faithful":
        out = out / len(grids)
    return FrameGrid(first.clip_id, first.hop_seconds, out)


def fuse_average(grids: Sequence[FrameGrid]) -> FrameGrid:
    """Elementwise equal-weight average of M aligned grids."""
    first = _require_aligned(grids)
    mean = np.clip(np.mean([g.values for g in grids], axis=0), 0.0, 1.0)
    return FrameGrid(first.clip_id, first.hop_seconds, mean)


@dataclass
class BetaSweep:
    """Best beta under the development objective with the full curve."""

    beta: float
    objective: str
    curve: list[tuple[float, float]]


def sweep_beta(
    model_grids: Sequence[Sequence[FrameGrid]],
    f1_table: ClassF1Table,
    dev_truth: EventList,
    betas: Sequence[float],
    decode_cfg: PostProcessConfig,
    vocab: ClassVocabulary,
    collar: CollarConfig = CollarConfig(),
    mode: str = "normalized",
) -> BetaSweep:
    """Decode and score each beta on the development set; ties pick min beta."""
    if not betas:
        raise ValidationError("beta list is empty")
    if not dev_truth.events:
        raise ValidationError("development truth is empty")
    clips = _aligned_clip_sets(model_grids)
    curve: list[tuple[float, float]] = []
    for beta in betas:
        weights = classwise_weights(f1_table, beta, mode)
        fused = [fuse_classwise(per_clip, weights) for per_clip in clips]
        score = event_f1(
            dev_truth, decode_many(fused, decode_cfg, vocab), collar, vocab
        ).macro_f1
        curve.append((float(beta), score))
    best_score = max(s for _, s in curve)
    best_beta = min(b for b, s in curve if s == best_score)
    return BetaSweep(best_beta, OBJECTIVE_MACRO_F1, curve)


def _aligned_clip_sets(
    model_grids: Sequence[Sequence[FrameGrid]],
) -> list[list[FrameGrid]]:
    """Transpose the models x clips structure into per-clip model groups."""
    if not model_grids:
        raise ValidationError("need at least one model")
    n_clips = len(model_grids[0])
    for grids in model_grids:
        if len(grids) != n_clips:
            raise ValidationError("models carry different clip counts")
    clips = []
    for k in range(n_clips):
        group = [grids[k] for grids in model_grids]
        _require_aligned(group)
        clips.append(group)
    return clips


# ---------------------------------------------------------------------------
# Logistic-regression fusion
# ---------------------------------------------------------------------------


def logistic_loss_and_grad(
    w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, float]:
    """Mean BCE of sigmoid(x @ w + b) against 0/1 targets, with gradients.

    Uses the softplus identity BCE = softplus(z) - y*z, which needs no
    probability clipping and stays exact for large |z|.
    """
    z = x @ w + b
    t = np.exp(-np.abs(z))
    p = np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    loss = float(np.mean(np.maximum(z, 0.0) - y * z + np.log1p(t)))
    err = p - y
    grad_w = x.T @ err / len(y)
    grad_b = float(np.mean(err))
    return loss, grad_w, grad_b


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LogisticFusionModel:
    """Per-class frame-level logistic fusion of M model posteriors.

    Classes whose development targets were degenerate (all active or all
    inactive) are flagged and fall back to the equal-weight average.
    """

    model_names: tuple[str, ...]
    classes: tuple[str, ...]
    weights: np.ndarray  # (C, M)
    bias: np.ndarray  # (C,)
    iterations: np.ndarray  # (C,)
    final_loss: np.ndarray  # (C,)
    fallback: np.ndarray  # (C,) bool

    def __post_init__(self):
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValidationError("logistic fusion parameters must be finite")

    def metadata(self) -> dict:
        return {
            "models": list(self.model_names),
            "classes": list(self.classes),
            "iterations": self.iterations.tolist(),
            "final_loss": self.final_loss.tolist(),
            "fallback": self.fallback.tolist(),
        }


def _frame_matrix(
    model_grids: Sequence[Sequence[FrameGrid]],
    truth: EventList | None,
    vocab: ClassVocabulary,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Stack posteriors into (frames, models, classes) and rasterize targets."""
    clips = _aligned_clip_sets(model_grids)
    by_clip = truth.by_clip() if truth is not None else None
    feats, targets = [], []
    for group in clips:
        feats.append(np.stack([g.values for g in group], axis=1))
        if by_clip is not None:
            ref = group[0]
            targets.append(
                rasterize(
                    EventList(by_clip.get(ref.clip_id, [])),
                    ref.hop_seconds,
                    ref.n_frames,
                    vocab,
                    clip_id=ref.clip_id,
                ).values
            )
    x = np.concatenate(feats, axis=0)
    y = np.concatenate(targets, axis=0).astype(np.float64) if targets else None
    return x, y


def fit_logistic_fusion(
    model_grids: Sequence[Sequence[FrameGrid]],
    dev_truth: EventList,
    vocab: ClassVocabulary,
    model_names: Sequence[str] | None = None,
    max_iter: int = 10000,
    tol: float = 1e-8,
) -> LogisticFusionModel:
    """Per-class logistic regression on frame posteriors.

    Deterministic full-batch gradient descent from zero initialization;
    the step size is set from a per-class curvature bound so every step
    descends. A class converges when its loss improves by less than
    ``tol``.
    """
    if not dev_truth.events:
        raise ValidationError("development truth is empty")
    n_models = len(model_grids)
    if model_names is None:
        model_names = tuple(f"model_{m + 1}" for m in range(n_models))
    x_all, y_all = _frame_matrix(model_grids, dev_truth, vocab)
    n_classes = len(vocab)
    weights = np.zeros((n_classes, n_models))
    bias = np.zeros(n_classes)
    iterations = np.zeros(n_classes, dtype=np.int64)
    final_loss = np.zeros(n_classes)
    fallback = np.zeros(n_classes, dtype=bool)

    for c in range(n_classes):
        x = np.ascontiguousarray(x_all[:, :, c])
        y = y_all[:, c]
        if y.min() == y.max():
            fallback[c] = True
            weights[c] = 1.0 / n_models
            final_loss[c] = float("nan")
            continue
        x_aug = np.concatenate([x, np.ones((len(x), 1))], axis=1)
        hessian_bound = 0.25 * float(
            np.linalg.eigvalsh(x_aug.T @ x_aug / len(x_aug))[-1]
        )
        lr = 1.0 / max(hessian_bound, 1e-12)
        w = np.zeros(n_models)
        b = 0.0
        loss, grad_w, grad_b = logistic_loss_and_grad(w, b, x, y)
        for it in range(1, max_iter + 1):
            # Monotone backtracking step: halve until the loss decreases,
            # then let the step grow again for the flat late stage.
            while True:
                w2 = w - lr * grad_w
                b2 = b - lr * grad_b
                new_loss, new_gw, new_gb = logistic_loss_and_grad(w2, b2, x, y)
                if new_loss <= loss or lr < 1e-300:
                    break
                lr *= 0.5
            improvement = loss - new_loss
            w, b, loss, grad_w, grad_b = w2, b2, new_loss, new_gw, new_gb
            lr *= 2.0
            iterations[c] = it
            if improvement < tol:
                break
        weights[c] = w
        bias[c] = b
        final_loss[c] = loss

    return LogisticFusionModel(
        tuple(model_names), vocab.classes, weights, bias, iterations, final_loss, fallback
    )


def apply_logistic_fusion(
    model: LogisticFusionModel, grids: Sequence[FrameGrid]
) -> FrameGrid:
    """Per-class sigmoid(w . p + b) per frame; fallback classes average."""
    first = _require_aligned(grids)
    if len(grids) != model.weights.shape[1]:
        raise ValidationError(
            f"model fuses {model.weights.shape[1]} inputs, got {len(grids)}"
        )
    if first.n_classes != len(model.classes):
        raise ValidationError(
            f"model covers {len(model.classes)} classes, grids have {first.n_classes}"
        )
    stack = np.stack([g.values for g in grids], axis=1)  # (T, M, C)
    out = np.empty((first.n_frames, first.n_classes))
    for c in range(first.n_classes):
        if model.fallback[c]:
            out[:, c] = stack[:, :, c].mean(axis=1)
        else:
            out[:, c] = _sigmoid(stack[:, :, c] @ model.weights[c] + model.bias[c])
    return FrameGrid(first.clip_id, first.hop_seconds, out)


# ---------------------------------------------------------------------------
# Curve serialization
# ---------------------------------------------------------------------------


def save_curve(
    path: str | os.PathLike, parameter: str, best: float, objective: str,
    curve: Sequence[tuple[float, float]],
) -> None:
    """curves.json: the fitted parameter with its (value, score) sweep."""
    record = {
        "parameter": parameter,
        "objective": objective,
        "best": best,
        "curve": [[p, s] for p, s in curve],
    }
    atomic_write_text(path, json.dumps(record, indent=2) + "\n")
