"""Exact-arithmetic mAP oracle and the handcrafted cases it is checked on.

The oracle walks every score cut-off, re-matches the kept predictions from
scratch with rational IoU, and integrates the interpolated PR curve with
Fractions. It shares no code with the package.
"""

from fractions import Fraction

import numpy as np

from smalltarget.data import DetectionBox


def _q(v):
    return Fraction(v).limit_denominator(10**6)


def _iou(a, b):
    ax1, ay1, ax2, ay2 = (_q(a.cx) - _q(a.w) / 2, _q(a.cy) - _q(a.h) / 2,
                          _q(a.cx) + _q(a.w) / 2, _q(a.cy) + _q(a.h) / 2)
    bx1, by1, bx2, by2 = (_q(b.cx) - _q(b.w) / 2, _q(b.cy) - _q(b.h) / 2,
                          _q(b.cx) + _q(b.w) / 2, _q(b.cy) + _q(b.h) / 2)
    iw = max(Fraction(0), min(ax2, bx2) - max(ax1, bx1))
    ih = max(Fraction(0), min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = _q(a.w) * _q(a.h) + _q(b.w) * _q(b.h) - inter
    return inter / union


def _tp_count(ranked, truths, k):
    """TPs among the first k ranked predictions, matched greedily in rank order."""
    claimed = set()
    tp = 0
    for img, p in ranked[:k]:
        cands = [(j, _iou(p, t)) for j, t in enumerate(truths[img]) if t.class_id == p.class_id]
        if not cands:
            continue
        j, o = max(cands, key=lambda c: (c[1], -c[0]))
        if o >= Fraction(1, 2) and (img, j) not in claimed:
            claimed.add((img, j))
            tp += 1
    return tp


def oracle_ap(preds, truths, cls):
    ranked = [(img, p) for img, ps in enumerate(preds) for p in ps if p.class_id == cls]
    ranked.sort(key=lambda item: -item[1].score)
    npos = sum(t.class_id == cls for ts in truths for t in ts)
    if npos == 0:
        return None
    curve = []  # (recall, precision) at every cut-off
    for k in range(1, len(ranked) + 1):
        tp = _tp_count(ranked, truths, k)
        curve.append((Fraction(tp, npos), Fraction(tp, k)))
    ap = Fraction(0)
    prev = Fraction(0)
    for r in sorted({r for r, _ in curve}):
        if r == 0:
            continue
        ap += (r - prev) * max(p for rr, p in curve if rr >= r)
        prev = r
    return ap


def oracle_map(preds, truths):
    classes = sorted({t.class_id for ts in truths for t in ts})
    aps = [oracle_ap(preds, truths, c) for c in classes]
    return sum(aps, Fraction(0)) / len(aps) if aps else Fraction(0)


def B(cx, cy, w, h, c, s=1.0):
    return DetectionBox(float(cx), float(cy), float(w), float(h), c, s)


def _random_case(seed):
    """Integer-grid boxes near the truths, distinct scores, 1-3 images, 2 classes."""
    rng = np.random.default_rng(seed)
    n_img = int(rng.integers(1, 4))
    truths, preds = [], []
    scores = rng.permutation(np.arange(1, 200))[:60] / 200.0
    si = 0
    for _ in range(n_img):
        ts = [B(rng.integers(10, 90), rng.integers(10, 90), rng.integers(4, 12),
                rng.integers(4, 12), int(rng.integers(2))) for _ in range(int(rng.integers(1, 5)))]
        ps = []
        for t in ts:
            for _ in range(int(rng.integers(0, 3))):
                ps.append(B(t.cx + rng.integers(-3, 4), t.cy + rng.integers(-3, 4),
                            max(1, t.w + rng.integers(-3, 4)), max(1, t.h + rng.integers(-3, 4)),
                            t.class_id if rng.random() < 0.8 else 1 - t.class_id, scores[si]))
                si += 1
        for _ in range(int(rng.integers(0, 3))):
            ps.append(B(rng.integers(5, 95), rng.integers(5, 95), 6, 6, int(rng.integers(2)), scores[si]))
            si += 1
        truths.append(ts)
        preds.append(ps)
    return preds, truths


def handcrafted_cases():
    """20 (name, preds, truths) cases."""
    t1 = [[B(20, 20, 10, 10, 0), B(60, 60, 8, 8, 1)]]
    cases = [
        ("no predictions", [[]], t1),
        ("perfect", [[B(20, 20, 10, 10, 0, 0.9), B(60, 60, 8, 8, 1, 0.8)]], t1),
        ("duplicate detection", [[B(20, 20, 10, 10, 0, 0.9), B(21, 20, 10, 10, 0, 0.8),
                                  B(60, 60, 8, 8, 1, 0.7)]], t1),
        ("low-ranked true positive", [[B(80, 10, 5, 5, 0, 0.9), B(20, 20, 10, 10, 0, 0.5),
                                       B(60, 60, 8, 8, 1, 0.7)]], t1),
        ("wrong class", [[B(20, 20, 10, 10, 1, 0.9), B(60, 60, 8, 8, 0, 0.8)]], t1),
        ("iou exactly one half", [[B(20 + 10 / 3, 20, 10, 10, 0, 0.9)]], [[B(20, 20, 10, 10, 0)]]),
        ("iou just below one half", [[B(23.4, 20, 10, 10, 0, 0.9)]], [[B(20, 20, 10, 10, 0)]]),
        ("two classes five predictions",
         [[B(20, 20, 10, 10, 0, 0.95), B(22, 21, 10, 10, 0, 0.6), B(60, 60, 8, 8, 1, 0.85),
           B(90, 90, 6, 6, 1, 0.9), B(40, 40, 6, 6, 0, 0.3)]], t1),
        ("multi image", [[B(20, 20, 10, 10, 0, 0.4)], [B(30, 30, 6, 6, 0, 0.8), B(70, 70, 6, 6, 0, 0.7)]],
         [[B(20, 20, 10, 10, 0)], [B(30, 30, 6, 6, 0), B(50, 50, 6, 6, 0)]]),
        ("image without truths", [[B(10, 10, 5, 5, 0, 0.99)], [B(20, 20, 10, 10, 0, 0.5)]],
         [[], [B(20, 20, 10, 10, 0)]]),
    ]
    for k in range(10):
        preds, truths = _random_case(100 + k)
        cases.append((f"random grid case {k}", preds, truths))
    return cases
