"""Anomaly-map scoring and detection / localization metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.stats import rankdata

from .errors import MetricUndefinedError, ValidationError


@dataclass
class ScoredResult:
    map: np.ndarray
    score: float
    stem: str = ""
    image_label: int = 0
    pixel_labels: np.ndarray | None = None
    smoothing_window: int = 21
    smoothed: np.ndarray | None = None
    guidance_stem: str = ""


@dataclass
class MetricsReport:
    auroc_det: float
    f1: float
    tpr: float
    tnr: float
    acc: float
    macc: float
    threshold: float
    auroc_loc: float | None = None
    ap_loc: float | None = None
    n_images: int = 0
    n_anomalous: int = 0
    n_pixels: int = 0
    n_anomalous_pixels: int = 0
    config_fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)


def smooth_and_score(O: np.ndarray, w: int = 21) -> tuple[np.ndarray, float]:
    """w x w mean filter (zero padding) and the max of the result."""
    if w < 1 or w % 2 == 0:
        raise ValidationError(f"smoothing window must be odd and >= 1, got {w}")
    O = np.asarray(O, dtype=np.float64)
    smoothed = uniform_filter(O, size=w, mode="constant", cval=0.0)
    smoothed = np.clip(smoothed, 0.0, 1.0)
    return smoothed, float(smoothed.max())


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValidationError(f"{s.size} scores vs {y.size} labels")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; tied pairs count 1/2."""
    s, y = _check_binary(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUROC needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise AP, sum over thresholds of (R_k - R_{k-1}) * P_k."""
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefinedError("average precision needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # one operating point per distinct score
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _rates(pred: np.ndarray, y: np.ndarray) -> dict:
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    tpr = tp / (tp + fn)
    tnr = tn / (tn + fp)
    return {"f1": f1, "tpr": tpr, "tnr": tnr, "acc": (tp + tn) / y.size,
            "macc": (tpr + tnr) / 2}


def threshold_metrics(scores, labels) -> dict:
    """F1-optimal threshold (score > t is anomalous) and the rates at it.

    Candidates are midpoints between consecutive distinct scores plus one
    threshold below and one above all scores. The lowest threshold wins ties.
    """
    s, y = _check_binary(scores, labels)
    if y.all() or not y.any():
        raise MetricUndefinedError("threshold metrics need both classes")
    u = np.unique(s)
    cands = np.r_[u[0] - 1.0, (u[:-1] + u[1:]) / 2, u[-1] + 1.0]
    best = None
    for t in cands:
        r = _rates(s > t, y)
        if best is None or r["f1"] > best["f1"]:
            best = dict(r, threshold=float(t))
    return best


def pixel_metrics(results: list[ScoredResult]) -> tuple[float, float] | None:
    """Pooled pixel AUROC and AP; None when no result carries pixel labels."""
    maps, labels = [], []
    for r in results:
        if r.pixel_labels is None:
            continue
        maps.append(np.asarray(r.map, dtype=np.float64).ravel())
        labels.append(np.asarray(r.pixel_labels).ravel() > 0.5)
    if not maps:
        return None
    s, y = np.concatenate(maps), np.concatenate(labels)
    if not y.any() or y.all():
        return None
    return auroc(s, y), average_precision(s, y)


def build_report(results: list[ScoredResult], fingerprint: str = "") -> MetricsReport:
    scores = [r.score for r in results]
    labels = [r.image_label for r in results]
    det = auroc(scores, labels)
    th = threshold_metrics(scores, labels)
    pix = pixel_metrics(results)
    with_px = [r for r in results if r.pixel_labels is not None]
    n_px = sum(int(np.size(r.pixel_labels)) for r in with_px)
    n_apx = sum(int(np.sum(np.asarray(r.pixel_labels) > 0.5)) for r in with_px)
    return MetricsReport(
        auroc_det=det, f1=th["f1"], tpr=th["tpr"], tnr=th["tnr"], acc=th["acc"],
        macc=th["macc"], threshold=th["threshold"],
        auroc_loc=pix[0] if pix else None, ap_loc=pix[1] if pix else None,
        n_images=len(results), n_anomalous=int(sum(labels)),
        n_pixels=n_px, n_anomalous_pixels=n_apx, config_fingerprint=fingerprint,
    )
