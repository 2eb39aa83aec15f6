import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgsf.errors import MetricUndefinedError, ValidationError
from sgsf.scoring_metrics import (
    ScoredResult, auroc, average_precision, build_report, pixel_metrics, smooth_and_score,
    threshold_metrics,
)


def auroc_pairs(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly, ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def ap_sweep(scores, labels):
    """Precision/recall at every distinct threshold t (predict score >= t), descending."""
    scores, labels = np.asarray(scores, float), np.asarray(labels, bool)
    n_pos = labels.sum()
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= t
        tp = np.sum(pred & labels)
        recall = tp / n_pos
        precision = tp / pred.sum()
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def conv_oracle(O, w):
    """Direct zero-padded w x w box mean."""
    N, M = O.shape
    h = w // 2
    out = np.zeros_like(O, dtype=float)
    for i in range(N):
        for j in range(M):
            acc = 0.0
            for di in range(-h, h + 1):
                for dj in range(-h, h + 1):
                    a, b = i + di, j + dj
                    if 0 <= a < N and 0 <= b < M:
                        acc += O[a, b]
            out[i, j] = acc / (w * w)
    return out


def test_smooth_zero_map():
    assert smooth_and_score(np.zeros((32, 32)), 21)[1] == 0.0


def test_single_spike_score():
    O = np.zeros((64, 64))
    O[32, 32] = 1.0
    assert abs(smooth_and_score(O, 21)[1] - 1 / 441) <= 1e-9


def test_smooth_matches_oracle():
    O = np.random.default_rng(0).random((12, 12))
    smoothed, score = smooth_and_score(O, 5)
    np.testing.assert_allclose(smoothed, conv_oracle(O, 5), atol=1e-12)
    assert score == pytest.approx(conv_oracle(O, 5).max(), abs=1e-12)


def test_smooth_constant_map():
    smoothed, score = smooth_and_score(np.full((64, 64), 0.3), 21)
    assert score == pytest.approx(0.3, abs=1e-12)
    assert smoothed[0, 0] < 0.3  # zero padding suppresses borders


def test_smooth_even_window():
    with pytest.raises(ValidationError):
        smooth_and_score(np.zeros((8, 8)), 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_smooth_monotone(seed):
    rng = np.random.default_rng(seed)
    O1 = rng.random((24, 24)) * 0.5
    O2 = O1 + rng.random((24, 24)) * 0.5
    assert smooth_and_score(O1, 7)[1] <= smooth_and_score(O2, 7)[1]


def test_auroc_basic():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auroc_single_class():
    with pytest.raises(MetricUndefinedError):
        auroc([0.1, 0.2], [1, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_auroc_vs_pairs_and_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    s = np.round(rng.random(100), 2)  # rounding creates ties
    y = rng.random(100) < 0.4
    y[0], y[1] = True, False
    a = auroc(s, y)
    assert abs(a - auroc_pairs(s, y)) <= 1e-9
    assert abs(auroc(np.exp(3 * s) - 7, y) - a) <= 1e-12


def test_ap_basic():
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert average_precision([0.2, 0.9], [1, 0]) == 0.5


def test_ap_no_positives():
    with pytest.raises(MetricUndefinedError):
        average_precision([0.2, 0.3], [0, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_ap_vs_sweep(seed, ties):
    rng = np.random.default_rng(seed)
    s = rng.random(100)
    if ties:
        s = np.round(s, 1)
    y = rng.random(100) < 0.3
    y[0] = True
    assert abs(average_precision(s, y) - ap_sweep(s, y)) <= 1e-9


def test_ap_random_concentrates_near_prevalence():
    rng = np.random.default_rng(0)
    vals, prev = [], []
    for _ in range(1000):
        y = rng.random(200) < 0.2
        y[0] = True
        vals.append(average_precision(rng.random(200), y))
        prev.append(y.mean())
    assert abs(np.mean(vals) - np.mean(prev)) <= 0.05


def threshold_bruteforce(scores, labels):
    best = None
    for t in [-np.inf] + sorted(set(scores)):
        pred = [s > t for s in scores]
        tp = sum(p and y for p, y in zip(pred, labels))
        fp = sum(p and not y for p, y in zip(pred, labels))
        fn = sum((not p) and y for p, y in zip(pred, labels))
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        if best is None or f1 > best[0]:
            tn = len(labels) - tp - fp - fn
            best = (f1, tp / (tp + fn), tn / (tn + fp), (tp + tn) / len(labels))
    return best


def test_threshold_perfect():
    r = threshold_metrics([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert r["f1"] == r["tpr"] == r["tnr"] == r["acc"] == r["macc"] == 1.0
    assert 0.2 < r["threshold"] < 0.8


def test_threshold_all_equal():
    r = threshold_metrics([0.5] * 4, [0, 1, 0, 1])
    # the better of all-positive (f1 2/3) and all-negative (f1 0)
    assert r["f1"] == pytest.approx(2 / 3)
    assert r["tpr"] == 1.0 and r["tnr"] == 0.0


def test_threshold_hand_case():
    s, y = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    r = threshold_metrics(s, y)
    f1, tpr, tnr, acc = threshold_bruteforce(s, y)
    assert (r["f1"], r["tpr"], r["tnr"], r["acc"]) == pytest.approx((f1, tpr, tnr, acc))
    assert r["f1"] == pytest.approx(0.8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_threshold_vs_bruteforce_and_macc(seed):
    rng = np.random.default_rng(seed)
    s = np.round(rng.random(30), 1).tolist()
    y = (rng.random(30) < 0.5).tolist()
    y[0], y[1] = True, False
    r = threshold_metrics(s, y)
    assert r["f1"] == pytest.approx(threshold_bruteforce(s, y)[0], abs=1e-12)
    assert r["macc"] == (r["tpr"] + r["tnr"]) / 2


def test_threshold_single_class():
    with pytest.raises(MetricUndefinedError):
        threshold_metrics([0.2, 0.3], [0, 0])


def _result(m, px, label=0):
    return ScoredResult(np.asarray(m, float), float(np.max(m)), "", label, px)


def test_pixel_metrics_perfect_and_constant():
    masks = [np.zeros((4, 4)), np.zeros((4, 4))]
    masks[1][1:3, 1:3] = 1
    perfect = [_result(m, m) for m in masks]
    assert pixel_metrics(perfect) == (1.0, 1.0)
    const = [_result(np.full((4, 4), 0.3), m) for m in masks]
    assert pixel_metrics(const)[0] == 0.5


def test_pixel_metrics_concatenation():
    rng = np.random.default_rng(3)
    maps = [rng.random((5, 5)) for _ in range(2)]
    labels = [rng.random((5, 5)) < 0.3 for _ in range(2)]
    got = pixel_metrics([_result(m, l) for m, l in zip(maps, labels)])
    s = np.concatenate([m.ravel() for m in maps])
    y = np.concatenate([l.ravel() for l in labels])
    assert got == (auroc(s, y), average_precision(s, y))
    assert abs(got[0] - auroc_pairs(s, y)) <= 1e-9


def test_pixel_metrics_absent():
    assert pixel_metrics([_result(np.zeros((2, 2)), None)]) is None


def test_build_report_fields():
    res = [_result(np.full((2, 2), v), None, lab) for v, lab in
           [(0.1, 0), (0.4, 0), (0.7, 1), (0.3, 1)]]
    rep = build_report(res, "abc")
    assert rep.auroc_det == 0.75
    assert rep.auroc_loc is None and rep.ap_loc is None
    assert rep.macc == pytest.approx((rep.tpr + rep.tnr) / 2, abs=1e-9)
    assert rep.config_fingerprint == "abc" and rep.n_images == 4
