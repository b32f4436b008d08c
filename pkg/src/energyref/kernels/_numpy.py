"""Pure-numpy reference implementations of the hot kernels.

These are always importable and serve as the fallback when numba is absent
or disabled through ``ENERGYREF_DISABLE_NUMBA``.
"""

from __future__ import annotations

import numpy as np


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` xyxy box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix0 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy0 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix1 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy1 = np.minimum(a[:, None, 3], b[None, :, 3])
    iw = np.maximum(ix1 - ix0, 0.0)
    ih = np.maximum(iy1 - iy0, 0.0)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def greedy_match(det_boxes, det_img, gt_boxes, gt_img, iou_threshold):
    """Mark each detection (already in ranking order) as TP or FP.

    A detection claims the unmatched ground truth of its own image with the
    highest IoU, provided that IoU reaches ``iou_threshold``. Equal IoUs go to
    the lower ground-truth index.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    det_img = np.asarray(det_img, dtype=np.int64)
    gt_img = np.asarray(gt_img, dtype=np.int64)
    n = det_boxes.shape[0]
    tp = np.zeros(n, dtype=np.bool_)
    if n == 0 or gt_boxes.shape[0] == 0:
        return tp
    order = np.argsort(gt_img, kind="stable")
    sorted_img = gt_img[order]
    matched = np.zeros(gt_boxes.shape[0], dtype=np.bool_)
    for i in range(n):
        lo = np.searchsorted(sorted_img, det_img[i], side="left")
        hi = np.searchsorted(sorted_img, det_img[i], side="right")
        if lo == hi:
            continue
        cand = order[lo:hi]
        free = cand[~matched[cand]]
        if free.size == 0:
            continue
        ious = iou_matrix(det_boxes[i : i + 1], gt_boxes[free])[0]
        # argmax returns the first maximum; free is ascending so ties pick the lower index
        k = int(np.argmax(ious))
        if ious[k] >= iou_threshold:
            matched[free[k]] = True
            tp[i] = True
    return tp


def average_precision(tp, num_gt):
    """All-point interpolated AP of a ranked TP/FP sequence."""
    tp = np.asarray(tp, dtype=np.bool_)
    if tp.size == 0 or num_gt <= 0:
        return 0.0
    ctp = np.cumsum(tp, dtype=np.float64)
    ranks = np.arange(1, tp.size + 1, dtype=np.float64)
    precision = ctp / ranks
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[tp].sum() / num_gt)


def trapezoid(t, w):
    t = np.asarray(t, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if t.size < 2:
        return 0.0
    return float(np.sum(0.5 * (w[1:] + w[:-1]) * (t[1:] - t[:-1])))


def pairwise_within(thumbs, threshold):
    """Index pairs ``i < j`` whose L2 distance is at most ``threshold``."""
    thumbs = np.asarray(thumbs, dtype=np.float64)
    n = thumbs.shape[0]
    out = []
    for i in range(n - 1):
        d = np.sqrt(np.sum((thumbs[i + 1 :] - thumbs[i]) ** 2, axis=1))
        hits = np.nonzero(d <= threshold)[0]
        for j in hits:
            out.append((i, i + 1 + int(j)))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def pairwise_cross(a, b, threshold):
    """Index pairs ``(i, j)`` with ``i`` in ``a`` and ``j`` in ``b`` within ``threshold``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = []
    for i in range(a.shape[0]):
        d = np.sqrt(np.sum((b - a[i]) ** 2, axis=1))
        for j in np.nonzero(d <= threshold)[0]:
            out.append((i, int(j)))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)
