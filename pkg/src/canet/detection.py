"""Anomaly scoring and evaluation.

Prediction deviations are normalized per sensor by mean and interquartile
range, the largest few per timestamp are summed into a score, a global
threshold is grid-searched for the best point-adjusted F1, and the report
carries the per-timestamp trail.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from canet.data import WindowedDataset
from canet.model import CanModel, can_forward
from canet.tensor import Tensor

IQR_FLOOR = 1e-6
REC_FUSE_WEIGHT = 0.1


def prediction_errors(predicted: np.ndarray, actual: np.ndarray) -> np.ndarray:
    """Elementwise absolute deviation."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {actual.shape}")
    return np.abs(predicted - actual)


def normalize_errors(errors: np.ndarray, calibration: np.ndarray) -> np.ndarray:
    """Standardize each sensor row by the mean and IQR of its calibration row.

    Quantiles interpolate linearly between order statistics; an IQR below
    the floor is clamped so constant rows stay finite.
    """
    errors = np.asarray(errors, dtype=np.float64)
    calibration = np.asarray(calibration, dtype=np.float64)
    mu = calibration.mean(axis=1, keepdims=True)
    q1 = np.quantile(calibration, 0.25, axis=1, keepdims=True)
    q3 = np.quantile(calibration, 0.75, axis=1, keepdims=True)
    iqr = np.maximum(q3 - q1, IQR_FLOOR)
    return (errors - mu) / iqr


@dataclass
class ScoreSeries:
    """Per-timestamp anomaly scores plus the sensors that produced them."""

    values: np.ndarray                  # (T,)
    top_sensors: np.ndarray             # (T, k) sensor indices, ties to lower index
    k: int


def anomaly_scores(normalized: np.ndarray, k: int) -> ScoreSeries:
    """Sum the k largest normalized deviations per timestamp."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    normalized = np.asarray(normalized, dtype=np.float64)
    n = normalized.shape[0]
    keep = min(k, n)
    order = np.argsort(-normalized, axis=0, kind="stable")[:keep]     # (keep, T)
    picked = np.take_along_axis(normalized, order, axis=0)
    return ScoreSeries(values=picked.sum(axis=0), top_sensors=order.T, k=keep)


def point_adjust(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mark whole true anomaly segments detected when any point inside was.

    Predictions on normal timestamps are left untouched.
    """
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    adjusted = pred.copy()
    edges = np.flatnonzero(np.diff(truth.astype(np.int8), prepend=0, append=0))
    for start, end in zip(edges[0::2], edges[1::2]):
        if pred[start:end].any():
            adjusted[start:end] = True
    return adjusted.astype(np.int64)


@dataclass
class DetectionReport:
    threshold: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    timestamps: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None
    raw_pred: Optional[np.ndarray] = None
    adjusted_pred: Optional[np.ndarray] = None
    top_sensors: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out = {
            "threshold": float(self.threshold),
            "precision": float(self.precision),
            "recall": float(self.recall),
            "f1": float(self.f1),
            "counts": {"tp": int(self.tp), "fp": int(self.fp), "fn": int(self.fn)},
        }
        if self.scores is not None:
            out["per_timestamp"] = [
                {"t": int(t), "score": float(s), "raw_pred": int(r), "adjusted_pred": int(a)}
                for t, s, r, a in zip(self.timestamps, self.scores,
                                      self.raw_pred, self.adjusted_pred)
            ]
        out.update(self.extras)
        return out


def confusion_metrics(pred: np.ndarray, truth: np.ndarray) -> DetectionReport:
    """Pointwise counts and precision/recall/F1 with the zero conventions."""
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DetectionReport(threshold=np.nan, precision=precision, recall=recall,
                           f1=f1, tp=tp, fp=fp, fn=fn)


def threshold_grid_search(scores, truth: np.ndarray):
    """Exhaustively try every separating threshold and keep the best
    point-adjusted F1; ties resolve toward the higher threshold.

    Candidates are the midpoints between consecutive distinct score values
    plus a sentinel below the minimum (predict everything).
    """
    values = scores.values if isinstance(scores, ScoreSeries) else np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    if values.shape != truth.shape:
        raise ValueError(f"length mismatch: {values.shape} vs {truth.shape}")
    if not truth.any():
        raise ValueError("threshold search needs at least one true anomaly")

    distinct = np.unique(values)
    candidates = [distinct[0] - 1.0]
    candidates.extend((distinct[:-1] + distinct[1:]) / 2.0)

    best = None
    best_threshold = None
    for theta in candidates:
        pred = values > theta
        adjusted = point_adjust(pred, truth)
        report = confusion_metrics(adjusted, truth)
        if best is None or report.f1 > best.f1 or (report.f1 == best.f1 and theta > best_threshold):
            best = report
            best_threshold = theta
            best_raw = pred.astype(np.int64)
            best_adjusted = adjusted
    best.threshold = float(best_threshold)
    best.raw_pred = best_raw
    best.adjusted_pred = best_adjusted
    return best_threshold, best


def predict_series(model: CanModel, dataset: WindowedDataset,
                   batch_size: int = 256, threads: int = 0,
                   with_reconstruction: bool = False):
    """Run the prediction decoder over every window.

    Returns ``(predictions, rec_last)`` with one column per window: the
    prediction targets column ``j + window`` and, when requested, the
    reconstruction of the window's last history column.  Batches are
    independent, so thread count never changes the numbers.
    """
    n_windows = len(dataset)
    n = dataset.n_sensors
    predictions = np.empty((n, n_windows), dtype=np.float64)
    rec_last = np.empty((n, n_windows), dtype=np.float64) if with_reconstruction else None
    if with_reconstruction and model.rec_decoder is None:
        raise ValueError("model has no reconstruction decoder")

    spans = [(s, min(s + batch_size, n_windows)) for s in range(0, n_windows, batch_size)]

    def run(span):
        start, end = span
        hist, _ = dataset.batch(range(start, end))
        out = can_forward(Tensor(hist), model)
        predictions[:, start:end] = out.y_pred.data.T
        if rec_last is not None:
            rec_last[:, start:end] = out.y_rec.data[:, :, -1].T

    if threads <= 0:
        threads = max(1, int(os.environ.get("CAN_THREADS", "1")))
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return predictions, rec_last


def evaluate(model: CanModel, dataset: WindowedDataset, truth: np.ndarray,
             score_sensors: int = 2, calibration: str = "self",
             calibration_errors: Optional[np.ndarray] = None,
             can_plus: bool = False, batch_size: int = 256,
             threads: int = 0) -> DetectionReport:
    """Score a labelled test series and search the best threshold.

    ``truth`` is the full-length label vector; the first ``window``
    timestamps have no prediction and are excluded.  With
    ``calibration='train'`` the caller supplies held-out prediction errors
    via ``calibration_errors``; the default calibrates on the evaluated
    stream itself.  ``can_plus`` fuses the reconstruction deviation into the
    score at a fixed small weight.
    """
    truth = np.asarray(truth).astype(bool)
    k = dataset.window
    length = dataset.values.shape[1]
    if truth.shape[0] != length:
        raise ValueError(f"truth length {truth.shape[0]} does not match series length {length}")

    predictions, rec_last = predict_series(
        model, dataset, batch_size=batch_size, threads=threads,
        with_reconstruction=can_plus)
    actual = dataset.values[:, k:].astype(np.float64)
    errors = prediction_errors(predictions, actual)

    if calibration == "train":
        if calibration_errors is None:
            raise ValueError("calibration='train' needs calibration_errors")
        calib = calibration_errors
    else:
        calib = errors
    normalized = normalize_errors(errors, calib)
    scored = anomaly_scores(normalized, score_sensors)
    score_values = scored.values

    if can_plus:
        # rec_last[:, j] reconstructs column j+k-1; align to the scored
        # timestamps (shift one window) and edge-pad the final slot.
        # Reconstruction deviations always self-calibrate: the train-mode
        # calibration stream carries prediction errors, not these.
        rec_actual = dataset.values[:, k - 1:length - 1].astype(np.float64)
        rec_errors = prediction_errors(rec_last, rec_actual)
        rec_norm = normalize_errors(rec_errors, rec_errors)
        rec_scores = anomaly_scores(rec_norm, score_sensors).values
        aligned = np.concatenate([rec_scores[1:], rec_scores[-1:]])
        score_values = score_values + REC_FUSE_WEIGHT * aligned

    scored_truth = truth[k:]
    threshold, report = threshold_grid_search(score_values, scored_truth)
    report.timestamps = np.arange(k, length)
    report.scores = score_values
    report.top_sensors = scored.top_sensors
    report.extras = {"scored_from": int(k), "score_sensors": int(scored.k),
                     "calibration": calibration, "can_plus": bool(can_plus)}
    return report


def write_scores_csv(path, report: DetectionReport, truth: np.ndarray) -> None:
    """(t, score, label) rows for external plotting."""
    truth = np.asarray(truth).astype(int)
    with open(path, "w", newline="") as handle:
        handle.write("t,score,label\n")
        for t, s in zip(report.timestamps, report.scores):
            handle.write(f"{int(t)},{float(s)!r},{truth[int(t)]}\n")
