"""numba-compiled kernels. Same signatures and results as ``_numpy``."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _iou_pair(a0, a1, a2, a3, b0, b1, b2, b3):
    iw = min(a2, b2) - max(a0, b0)
    ih = min(a3, b3) - max(a1, b1)
    if iw < 0.0:
        iw = 0.0
    if ih < 0.0:
        ih = 0.0
    inter = iw * ih
    union = (a2 - a0) * (a3 - a1) + (b2 - b0) * (b3 - b1) - inter
    return inter / union


@njit(cache=True)
def _iou_matrix(a, b):
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = _iou_pair(a[i, 0], a[i, 1], a[i, 2], a[i, 3],
                                  b[j, 0], b[j, 1], b[j, 2], b[j, 3])
    return out


@njit(cache=True)
def _greedy_match(det_boxes, det_img, gt_boxes, gt_img, order, iou_threshold):
    n = det_boxes.shape[0]
    m = gt_boxes.shape[0]
    tp = np.zeros(n, dtype=np.bool_)
    matched = np.zeros(m, dtype=np.bool_)
    sorted_img = gt_img[order]
    for i in range(n):
        lo = np.searchsorted(sorted_img, det_img[i], side="left")
        hi = np.searchsorted(sorted_img, det_img[i], side="right")
        best = -1
        best_iou = 0.0
        for k in range(lo, hi):
            j = order[k]
            if matched[j]:
                continue
            v = _iou_pair(det_boxes[i, 0], det_boxes[i, 1], det_boxes[i, 2], det_boxes[i, 3],
                          gt_boxes[j, 0], gt_boxes[j, 1], gt_boxes[j, 2], gt_boxes[j, 3])
            if best == -1 or v > best_iou:
                best = j
                best_iou = v
        if best >= 0 and best_iou >= iou_threshold:
            matched[best] = True
            tp[i] = True
    return tp


@njit(cache=True)
def _average_precision(tp, num_gt):
    n = tp.shape[0]
    if n == 0 or num_gt <= 0:
        return 0.0
    precision = np.empty(n, dtype=np.float64)
    ctp = 0.0
    for i in range(n):
        if tp[i]:
            ctp += 1.0
        precision[i] = ctp / (i + 1.0)
    running = 0.0
    total = 0.0
    # walk backwards to build the envelope, then sum in forward order below
    for i in range(n - 1, -1, -1):
        if precision[i] > running:
            running = precision[i]
        precision[i] = running
    for i in range(n):
        if tp[i]:
            total += precision[i]
    return total / num_gt


@njit(cache=True)
def _trapezoid(t, w):
    total = 0.0
    for i in range(t.shape[0] - 1):
        total += 0.5 * (w[i + 1] + w[i]) * (t[i + 1] - t[i])
    return total


@njit(cache=True)
def _pairwise_within(thumbs, threshold):
    n, d = thumbs.shape
    limit = threshold * threshold
    hits_i = []
    hits_j = []
    for i in range(n - 1):
        for j in range(i + 1, n):
            acc = 0.0
            over = False
            for k in range(d):
                diff = thumbs[j, k] - thumbs[i, k]
                acc += diff * diff
                # slack keeps the early exit from disagreeing with the final sqrt test
                if acc > limit * 1.0000001 + 1e-9:
                    over = True
                    break
            if not over and np.sqrt(acc) <= threshold:
                hits_i.append(i)
                hits_j.append(j)
    out = np.empty((len(hits_i), 2), dtype=np.int64)
    for k in range(len(hits_i)):
        out[k, 0] = hits_i[k]
        out[k, 1] = hits_j[k]
    return out


@njit(cache=True)
def _pairwise_cross(a, b, threshold):
    d = a.shape[1]
    limit = threshold * threshold
    hits_i = []
    hits_j = []
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            acc = 0.0
            over = False
            for k in range(d):
                diff = b[j, k] - a[i, k]
                acc += diff * diff
                # slack keeps the early exit from disagreeing with the final sqrt test
                if acc > limit * 1.0000001 + 1e-9:
                    over = True
                    break
            if not over and np.sqrt(acc) <= threshold:
                hits_i.append(i)
                hits_j.append(j)
    out = np.empty((len(hits_i), 2), dtype=np.int64)
    for k in range(len(hits_i)):
        out[k, 0] = hits_i[k]
        out[k, 1] = hits_j[k]
    return out


def _f64(x, cols=None):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    return arr.reshape(-1, cols) if cols else arr


def iou_matrix(a, b):
    return _iou_matrix(_f64(a, 4), _f64(b, 4))


def greedy_match(det_boxes, det_img, gt_boxes, gt_img, iou_threshold):
    gt_img = np.ascontiguousarray(gt_img, dtype=np.int64)
    order = np.argsort(gt_img, kind="stable").astype(np.int64)
    return _greedy_match(_f64(det_boxes, 4), np.ascontiguousarray(det_img, dtype=np.int64),
                         _f64(gt_boxes, 4), gt_img, order, float(iou_threshold))


def average_precision(tp, num_gt):
    return float(_average_precision(np.ascontiguousarray(tp, dtype=np.bool_), int(num_gt)))


def trapezoid(t, w):
    return float(_trapezoid(_f64(t), _f64(w)))


def pairwise_within(thumbs, threshold):
    thumbs = np.ascontiguousarray(thumbs, dtype=np.float64)
    if thumbs.ndim != 2 or thumbs.shape[0] < 2:
        return np.empty((0, 2), dtype=np.int64)
    return _pairwise_within(thumbs, float(threshold))


def pairwise_cross(a, b, threshold):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.empty((0, 2), dtype=np.int64)
    return _pairwise_cross(a, b, float(threshold))
