"""Independent reference implementations used to verify the package.

Everything here is deliberately written with a different algorithm (or at
least a different code path) than the library: double loops instead of
vectorization, Jacobi rotations instead of power iteration, pairwise
counting instead of sorting. Slow is fine; these only run in tests.
"""

from __future__ import annotations

import numpy as np


def jacobi_eigh(a: np.ndarray, sweeps: int = 100, tol: float = 1e-14):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue,
    eigenvectors in columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("square matrix required")
    v = np.eye(n)
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] ** 2
        if off <= tol * max(1.0, float(np.trace(a @ a))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    lam = np.diag(a).copy()
    order = np.argsort(lam)[::-1]
    return lam[order], v[:, order]


def mann_whitney_auc(scores, labels) -> float:
    """AuROC as the pairwise P(score_pos > score_neg) + half ties, O(n^2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes required")
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def finite_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = f(x)
        flat[i] = keep - h
        lo = f(x)
        flat[i] = keep
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def gradient_field_loops(frame: np.ndarray) -> np.ndarray:
    """Forward-difference gradient, explicit loops, (H, W, 2) hor-then-ver."""
    h, w = frame.shape
    g = np.zeros((h, w, 2))
    for y in range(h):
        for x in range(w):
            if x + 1 < w and y + 1 < h:
                g[y, x, 0] = frame[y, x + 1] - frame[y, x]
                g[y, x, 1] = frame[y + 1, x] - frame[y, x]
    return g


def normalized_flow_loops(diff: np.ndarray, grad: np.ndarray, eps: float) -> np.ndarray:
    """Per-pixel D*G/||G||^2 with the eps guard, flattened row-major."""
    h, w = diff.shape
    out = np.zeros(2 * h * w)
    k = 0
    for y in range(h):
        for x in range(w):
            n2 = grad[y, x, 0] ** 2 + grad[y, x, 1] ** 2
            if n2 >= eps:
                out[k] = diff[y, x] * grad[y, x, 0] / n2
                out[k + 1] = diff[y, x] * grad[y, x, 1] / n2
            k += 2
    return out


def coverage_average_loops(windows: np.ndarray, offsets, n: int) -> np.ndarray:
    """Mean over all windows covering each index, explicit accumulation."""
    total = np.zeros(n)
    count = np.zeros(n)
    for win, off in zip(windows, offsets):
        for j, val in enumerate(win):
            idx = off + j
            if idx < n:
                total[idx] += val
                count[idx] += 1.0
    if (count == 0).any():
        raise ValueError("uncovered index")
    return total / count


def confusion_loops(pred, labels):
    tp = fp = tn = fn = 0
    for p, y in zip(pred, labels):
        if p == 1 and y == 1:
            tp += 1
        elif p == 1 and y == 0:
            fp += 1
        elif p == 0 and y == 0:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def definitional_metrics(probs, labels, threshold=0.5):
    """accuracy/precision/recall/f1 straight from the textbook formulas.

    Undefined ratios come back as None.
    """
    pred = [1 if p >= threshold else 0 for p in probs]
    tp, fp, tn, fn = confusion_loops(pred, labels)
    total = tp + fp + tn + fn
    acc = (tp + tn) / total
    prec = tp / (tp + fp) if tp + fp > 0 else None
    rec = tp / (tp + fn) if tp + fn > 0 else None
    if prec is None or rec is None or prec + rec == 0:
        f1 = None
    else:
        f1 = 2 * prec * rec / (prec + rec)
    return acc, prec, rec, f1, (tp, fp, tn, fn)


def transitions_loops(binary):
    """(onsets, offsets) as indices of the new value, explicit scan."""
    onsets, offsets = [], []
    for i in range(1, len(binary)):
        if binary[i - 1] == 0 and binary[i] == 1:
            onsets.append(i)
        elif binary[i - 1] == 1 and binary[i] == 0:
            offsets.append(i)
    return onsets, offsets


def greedy_match_loops(gt_idx, pred_idx, max_dist):
    """Distance-ordered greedy matching; returns (pairs, misses).

    Candidate pairs are ranked by (|distance|, signed distance, gt position,
    prediction position) and accepted when both endpoints are still free.
    Pairs come back sorted by GT index.
    """
    cands = []
    for i, g in enumerate(gt_idx):
        for j, p in enumerate(pred_idx):
            d = p - g
            if abs(d) <= max_dist:
                cands.append((abs(d), d, i, j))
    cands.sort()
    used_g, used_p = set(), set()
    pairs = []
    for _, d, i, j in cands:
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        pairs.append((i, gt_idx[i], pred_idx[j]))
    pairs.sort()
    misses = len(gt_idx) - len(pairs)
    return [(g, p) for _, g, p in pairs], misses
