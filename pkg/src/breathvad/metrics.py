"""Classification metrics, transition-timing errors, and report files.

Thresholded predictions feed the usual confusion-matrix metrics; AuROC is
integrated over tie-grouped score thresholds. Undefined ratios (0/0) are
reported as None, never silently coerced to 0, so aggregation stays honest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLD = 0.5
DEFAULT_MATCH_WINDOW_S = 2.0

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

UNDEFINED = "undefined"  # textual marker in report files

_METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "auroc")


@dataclass
class Metrics:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    auroc: float | None
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass
class TransitionErrors:
    """Signed timing errors (prediction minus truth, seconds) per matched
    ground-truth transition, plus counts of unmatched ones."""

    onset_errors_s: list[float]
    offset_errors_s: list[float]
    onset_misses: int
    offset_misses: int


def confusion_counts(pred_binary, labels) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) for binary arrays of equal length."""
    pred = np.asarray(pred_binary).astype(bool)
    truth = np.asarray(labels).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError("prediction and label lengths differ")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return tp, fp, tn, fn


def auroc(probs, labels) -> float:
    """Area under the ROC via tie-grouped thresholds and trapezoids.

    Equal scores collapse into one ROC vertex, which credits ties with
    half weight, matching the pairwise ranking statistic exactly.
    """
    scores = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(labels).astype(np.int64)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError("probs and labels must be equal-length vectors")
    n_pos = int(np.count_nonzero(truth == 1))
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both classes present")
    fpr, tpr, _ = roc_points(scores, truth)
    return float(_trapezoid(tpr, fpr))


def roc_points(probs, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC vertices (fpr, tpr, threshold), one per distinct score, plus the
    all-negative origin. fpr ascends; threshold at the origin is +inf."""
    scores = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(labels).astype(np.int64)
    n_pos = int(np.count_nonzero(truth == 1))
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = truth[order]
    group_end = np.flatnonzero(np.diff(s))
    group_end = np.concatenate([group_end, [s.size - 1]])
    tp = np.cumsum(y)[group_end]
    fp = np.cumsum(1 - y)[group_end]
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    thresholds = np.concatenate([[np.inf], s[group_end]])
    return fpr, tpr, thresholds


def pr_points(probs, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision-recall vertices (recall, precision, threshold) over the
    same descending-threshold sweep as roc_points (no zero-recall point)."""
    scores = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(labels).astype(np.int64)
    n_pos = int(np.count_nonzero(truth == 1))
    if n_pos == 0 or n_pos == truth.size:
        raise ValueError("precision-recall needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = truth[order]
    group_end = np.flatnonzero(np.diff(s))
    group_end = np.concatenate([group_end, [s.size - 1]])
    tp = np.cumsum(y)[group_end]
    predicted = group_end + 1.0
    recall = tp / n_pos
    precision = tp / predicted
    return recall, precision, s[group_end]


def metrics(probs, labels, threshold: float = DEFAULT_THRESHOLD) -> Metrics:
    """All five metrics at once; undefined ratios come back as None.

    auroc is None when the labels are single-class; the other metrics are
    still computed from the thresholded confusion counts.
    """
    scores = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(labels).astype(np.int64)
    if scores.shape != truth.shape or scores.ndim != 1 or scores.size == 0:
        raise ValueError("probs and labels must be equal-length nonempty vectors")
    tp, fp, tn, fn = confusion_counts(scores >= threshold, truth)
    accuracy = (tp + tn) / (tp + fp + tn + fn)
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    try:
        area = auroc(scores, truth)
    except ValueError:
        area = None
    return Metrics(
        accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        auroc=area, tp=tp, fp=fp, tn=tn, fn=fn,
    )


def find_transitions(binary) -> tuple[np.ndarray, np.ndarray]:
    """Interior edges of a binary sequence: (onset indices, offset indices).

    An onset is the first 1 after a 0, an offset the first 0 after a 1;
    the sequence boundary itself is not a transition.
    """
    x = np.asarray(binary).astype(np.int64)
    step = np.diff(x)
    onsets = np.flatnonzero(step == 1) + 1
    offsets = np.flatnonzero(step == -1) + 1
    return onsets, offsets


def _match_greedy(gt: np.ndarray, pred: np.ndarray, max_dist: float) -> tuple[list[tuple[int, int]], int]:
    """Nearest-unmatched pairing of transitions, closest pairs first.

    Candidate (gt, pred) pairs within max_dist samples are taken in order
    of |distance| (ties: earlier prediction, then earlier truth), each
    claiming both endpoints. Distance-first ordering keeps the pairing
    stable under time reversal (exact-distance ties aside), which a
    left-to-right greedy does not.
    """
    pairs = [
        (abs(int(p) - int(g)), int(p) - int(g), gi, pi)
        for gi, g in enumerate(gt)
        for pi, p in enumerate(pred)
        if abs(int(p) - int(g)) <= max_dist
    ]
    pairs.sort()
    gt_used = [False] * len(gt)
    pred_used = [False] * len(pred)
    matched: list[tuple[int, int]] = []
    for _, _, gi, pi in pairs:
        if gt_used[gi] or pred_used[pi]:
            continue
        gt_used[gi] = True
        pred_used[pi] = True
        matched.append((gi, pi))
    matched.sort()  # report in ground-truth order
    return matched, len(gt) - len(matched)


def transition_errors(
    pred_binary,
    labels,
    fps: float,
    match_window_s: float = DEFAULT_MATCH_WINDOW_S,
) -> TransitionErrors:
    """Signed onset/offset timing errors against ground truth.

    Each ground-truth transition is paired with the nearest unmatched
    predicted transition of the same kind within +-match_window_s; the
    recorded error is (prediction - truth) / fps in seconds. Ground-truth
    transitions left unpaired are counted as misses.
    """
    pred = np.asarray(pred_binary).astype(np.int64)
    truth = np.asarray(labels).astype(np.int64)
    if pred.shape != truth.shape:
        raise ValueError("prediction and label lengths differ")
    if fps <= 0:
        raise ValueError("fps must be positive")
    max_dist = match_window_s * fps
    gt_on, gt_off = find_transitions(truth)
    pr_on, pr_off = find_transitions(pred)

    on_pairs, on_miss = _match_greedy(gt_on, pr_on, max_dist)
    off_pairs, off_miss = _match_greedy(gt_off, pr_off, max_dist)
    onset_errors = [float(pr_on[pi] - gt_on[gi]) / fps for gi, pi in on_pairs]
    offset_errors = [float(pr_off[pi] - gt_off[gi]) / fps for gi, pi in off_pairs]
    return TransitionErrors(
        onset_errors_s=onset_errors,
        offset_errors_s=offset_errors,
        onset_misses=on_miss,
        offset_misses=off_miss,
    )


def export_curves(probs, labels, roc_path: str, pr_path: str) -> None:
    """Write plot-ready `fpr,tpr,threshold` and `recall,precision,threshold`
    CSVs; values use repr so re-integration reproduces auroc exactly."""
    fpr, tpr, thr = roc_points(probs, labels)
    with open(roc_path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr,threshold\n")
        for f, t, h in zip(fpr, tpr, thr):
            fh.write(f"{float(f)!r},{float(t)!r},{float(h)!r}\n")
    recall, precision, thr = pr_points(probs, labels)
    with open(pr_path, "w", encoding="utf-8") as fh:
        fh.write("recall,precision,threshold\n")
        for r, p, h in zip(recall, precision, thr):
            fh.write(f"{float(r)!r},{float(p)!r},{float(h)!r}\n")


def write_transition_csv(errors: TransitionErrors, path: str) -> None:
    """One `kind,error_s` row per matched transition."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("kind,error_s\n")
        for e in errors.onset_errors_s:
            fh.write(f"onset,{e!r}\n")
        for e in errors.offset_errors_s:
            fh.write(f"offset,{e!r}\n")


def _fmt(value) -> str:
    return UNDEFINED if value is None else repr(float(value))


def format_eval_report(
    m: Metrics,
    errors: TransitionErrors | None = None,
    context: dict[str, str] | None = None,
) -> str:
    """Key=value block for one evaluation run.

    `context` entries (model, mode, split, ...) go first so aggregation can
    group runs; metric keys follow in fixed order.
    """
    lines = []
    for key, value in (context or {}).items():
        lines.append(f"{key}={value}")
    for key in _METRIC_KEYS:
        lines.append(f"{key}={_fmt(getattr(m, key))}")
    for key in ("tp", "fp", "tn", "fn"):
        lines.append(f"{key}={getattr(m, key)}")
    if errors is not None:
        for kind, errs, misses in (
            ("onset", errors.onset_errors_s, errors.onset_misses),
            ("offset", errors.offset_errors_s, errors.offset_misses),
        ):
            mean = float(np.mean(errs)) if errs else None
            lines.append(f"{kind}_error_mean_s={_fmt(mean)}")
            lines.append(f"{kind}_matched={len(errs)}")
            lines.append(f"{kind}_misses={misses}")
    return "\n".join(lines) + "\n"


def aggregate_reports(reports: list[dict[str, str]]) -> str:
    """Mean and std per metric, grouped by (model, split, mode).

    Runs with an undefined value for some metric are left out of that
    metric's aggregate; if every run is undefined the aggregate is too.
    Std is the population standard deviation across the group's runs.
    """
    groups: dict[tuple[str, str, str], list[dict[str, str]]] = {}
    for rep in reports:
        key = (rep.get("model", "?"), rep.get("split", "?"), rep.get("mode", "?"))
        groups.setdefault(key, []).append(rep)

    blocks = []
    for (model, split, mode) in sorted(groups):
        runs = groups[(model, split, mode)]
        lines = [f"[model={model} split={split} mode={mode}]", f"n_runs={len(runs)}"]
        for key in _METRIC_KEYS:
            values = [
                float(r[key]) for r in runs if r.get(key, UNDEFINED) != UNDEFINED
            ]
            if values:
                lines.append(f"{key}_mean={float(np.mean(values))!r}")
                lines.append(f"{key}_std={float(np.std(values))!r}")
            else:
                lines.append(f"{key}_mean={UNDEFINED}")
                lines.append(f"{key}_std={UNDEFINED}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
