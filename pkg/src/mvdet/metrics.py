"""Hungarian matching, detection losses and association metrics.

Implements the bipartite matcher with a documented tie-break, the 2D/3D
loss formulas with their default balancing weights (lambda1 = 0.5,
lambda2 = 0.2), the candidate/valid association predicates with the
AAR/Recall sweep, and a simplified 11-point-interpolated AP evaluator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._kernels import iou_matrix
from .geometry import Box2D, CameraView, project_anchor_batch

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0

# Instances up to this many cells get the exact lexicographic-smallest
# tie-break; larger ones return the solver's (deterministic) optimum.
_LEX_REFINE_MAX_CELLS = 256


@dataclass(frozen=True)
class MatchParams:
    """Association thresholds and matching cost weights."""

    tau_dis: float = 2.0
    tau_iou: float = 0.5
    w_class: float = 2.0
    w_l1: float = 5.0
    w_iou: float = 2.0

    def __post_init__(self):
        if self.tau_dis <= 0:
            raise ValueError("tau_dis must be positive")
        if not (0.0 < self.tau_iou < 1.0):
            raise ValueError("tau_iou must lie in (0, 1)")


@dataclass(frozen=True)
class LossWeights:
    """Loss balancing constants and component toggles."""

    lambda1: float = 0.5
    lambda2: float = 0.2
    w_focal: float = 2.0
    w_l1: float = 5.0
    w_iou: float = 2.0
    include_alpha: bool = True
    include_aux: bool = True

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "w_focal", "w_l1", "w_iou"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class Pred3D:
    box: np.ndarray  # (9,) anchor vector
    class_id: int
    score: float = 1.0


@dataclass(frozen=True)
class Pred2D:
    box: Box2D
    class_id: int
    score: float = 1.0


@dataclass(frozen=True)
class GtBox2D:
    """Projection-derived 2D ground truth with its 3D back-link."""

    box: Box2D
    class_id: int
    box3d_index: int


@dataclass
class FrameTruth:
    """Ground truth of one frame in the form the metrics consume."""

    boxes3d: np.ndarray    # (G, 9)
    classes3d: np.ndarray  # (G,)
    gt2d: list[GtBox2D]
    rig: list[CameraView]


@dataclass
class AARResult:
    """Association accuracy at one threshold plus the sweep curve.

    ``aar`` is 100 * n_valid / n_candidate (0 with ``no_candidates`` set
    when nothing matched); ``recall`` is 100 * n_candidate / N_2d.  The
    curve rows are (tau_iou, aar, recall, n_candidate, n_valid).
    """

    n_candidate: int
    n_valid: int
    aar: float
    recall: float
    curve: list[tuple[float, float, float, int, int]] = field(default_factory=list)
    no_candidates: bool = False


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost one-to-one assignment of min(n, m) pairs.

    Raises on NaN or infinite costs.  Among cost-equal optima, instances up
    to 256 cells return the lexicographically smallest assignment (pairs
    compared sorted by row); larger instances return the solver's
    deterministic optimum.  Rows come back in ascending order.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2D, got shape {cost.shape}")
    if cost.size == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    if np.isnan(cost).any():
        raise ValueError("NaN in cost matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    if cost.size <= _LEX_REFINE_MAX_CELLS:
        rows, cols = _lex_smallest(cost, float(cost[rows, cols].sum()))
    order = np.argsort(rows)
    return rows[order].astype(np.intp), cols[order].astype(np.intp)


def _lex_smallest(cost: np.ndarray, opt: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy construction of the lexicographically smallest optimal assignment."""
    n, m = cost.shape
    k = min(n, m)
    tol = 1e-9 * (1.0 + abs(opt))
    rows_left = list(range(n))
    cols_left = list(range(m))
    out_r: list[int] = []
    out_c: list[int] = []
    acc = 0.0
    lo = 0
    for step in range(k):
        need = k - step - 1
        picked = False
        for r in [rr for rr in rows_left if rr >= lo]:
            future = [rr for rr in rows_left if rr > r]
            if len(future) < need:
                break
            for c in cols_left:
                rest_cols = [cc for cc in cols_left if cc != c]
                if need == 0:
                    sub_opt = 0.0
                else:
                    sub = cost[np.ix_(future, rest_cols)]
                    sr, sc = linear_sum_assignment(sub)
                    sub_opt = float(sub[sr, sc].sum())
                if abs(acc + cost[r, c] + sub_opt - opt) <= tol:
                    acc += float(cost[r, c])
                    out_r.append(r)
                    out_c.append(c)
                    rows_left.remove(r)
                    cols_left.remove(c)
                    lo = r + 1
                    picked = True
                    break
            if picked:
                break
        if not picked:  # numerical fallback; should not happen
            rows, cols = linear_sum_assignment(cost)
            return rows.astype(np.intp), cols.astype(np.intp)
    return np.asarray(out_r, dtype=np.intp), np.asarray(out_c, dtype=np.intp)


def class_nll(logits: np.ndarray, class_ids: np.ndarray) -> np.ndarray:
    """-log softmax(logits)[class] as an (n, m) matrix over id choices."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    return -logp[:, np.asarray(class_ids, dtype=np.intp)]


def match_2d_per_camera(
    pred_boxes: dict[int, np.ndarray],
    pred_logits: dict[int, np.ndarray],
    gt_boxes: dict[int, np.ndarray],
    gt_classes: dict[int, np.ndarray],
    params: MatchParams | None = None,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Hungarian matching run independently inside every camera group.

    Cost per (pred, gt) pair: w_class * class NLL + w_l1 * L1 over
    (cx, cy, w, h) + w_iou * (1 - IoU).  Cameras without ground truth get
    an empty assignment.
    """
    params = params or MatchParams()
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for view_id, boxes in pred_boxes.items():
        gt_b = gt_boxes.get(view_id)
        if gt_b is None or len(gt_b) == 0 or len(boxes) == 0:
            out[view_id] = (np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp))
            continue
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        gt_b = np.asarray(gt_b, dtype=np.float64).reshape(-1, 4)
        nll = class_nll(pred_logits[view_id], gt_classes[view_id])
        l1 = np.abs(boxes[:, None, :] - gt_b[None, :, :]).sum(axis=2)
        iou = iou_matrix(boxes, gt_b)
        cost = params.w_class * nll + params.w_l1 * l1 + params.w_iou * (1.0 - iou)
        out[view_id] = hungarian(cost)
    return out


def focal_loss(
    logits: np.ndarray, target_class: np.ndarray, normalizer: Optional[float] = None
) -> float:
    """Per-class sigmoid focal loss (alpha 0.25, gamma 2).

    ``target_class`` holds the positive class per row, -1 for background.
    Normalized by the positive count unless a normalizer is given.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target_class = np.asarray(target_class, dtype=np.intp).reshape(-1)
    if logits.shape[0] == 0:
        return 0.0
    n, k = logits.shape
    t = np.zeros((n, k))
    pos = target_class >= 0
    t[np.flatnonzero(pos), target_class[pos]] = 1.0
    p = 1.0 / (1.0 + np.exp(-logits))
    eps = 1e-12
    loss = -FOCAL_ALPHA * t * (1.0 - p) ** FOCAL_GAMMA * np.log(p + eps) - (
        1.0 - FOCAL_ALPHA
    ) * (1.0 - t) * p ** FOCAL_GAMMA * np.log(1.0 - p + eps)
    if normalizer is None:
        normalizer = max(float(pos.sum()), 1.0)
    return float(loss.sum() / normalizer)


def loss_alpha(pred_sin_cos: np.ndarray, gt_theta: np.ndarray) -> float:
    """Mean absolute error of the encoded observation angle.

    (1/M) sum |sin(theta) - s_hat| + |cos(theta) - c_hat| over matched
    pairs; defined as 0 for an empty batch.
    """
    pred = np.asarray(pred_sin_cos, dtype=np.float64).reshape(-1, 2)
    theta = np.asarray(gt_theta, dtype=np.float64).reshape(-1)
    if pred.shape[0] != theta.shape[0]:
        raise ValueError("pred and gt angle counts differ")
    if pred.shape[0] == 0:
        return 0.0
    err = np.abs(np.sin(theta) - pred[:, 0]) + np.abs(np.cos(theta) - pred[:, 1])
    return float(err.mean())


def loss_2d_parts(
    pred_boxes: dict[int, np.ndarray],
    pred_logits: dict[int, np.ndarray],
    pred_alphas: dict[int, np.ndarray],
    gt_boxes: dict[int, np.ndarray],
    gt_classes: dict[int, np.ndarray],
    gt_thetas: dict[int, np.ndarray],
    assignments: dict[int, tuple[np.ndarray, np.ndarray]],
    weights: LossWeights | None = None,
) -> dict[str, float]:
    """Per-term 2D loss breakdown over per-camera matched predictions."""
    weights = weights or LossWeights()
    cls_total = 0.0
    l1_sum = 0.0
    iou_sum = 0.0
    alpha_pred = []
    alpha_gt = []
    n_matched = 0
    for view_id, boxes in pred_boxes.items():
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        logits = np.asarray(pred_logits[view_id], dtype=np.float64)
        pi, gi = assignments.get(view_id, (np.zeros(0, dtype=np.intp),) * 2)
        targets = np.full(boxes.shape[0], -1, dtype=np.intp)
        if len(pi):
            g_cls = np.asarray(gt_classes[view_id], dtype=np.intp)
            targets[pi] = g_cls[gi]
            g_box = np.asarray(gt_boxes[view_id], dtype=np.float64).reshape(-1, 4)
            l1_sum += float(np.abs(boxes[pi] - g_box[gi]).sum())
            ious = iou_matrix(boxes[pi], g_box[gi])
            iou_sum += float((1.0 - np.diagonal(ious)).sum())
            alpha_pred.append(np.asarray(pred_alphas[view_id])[pi])
            alpha_gt.append(np.asarray(gt_thetas[view_id])[gi])
            n_matched += len(pi)
        cls_total += focal_loss(logits, targets, normalizer=None) * max(
            float((targets >= 0).sum()), 1.0
        )
    norm = max(float(n_matched), 1.0)
    cls = cls_total / norm
    l1 = l1_sum / norm
    iou = iou_sum / norm
    if alpha_pred:
        alpha = loss_alpha(np.concatenate(alpha_pred), np.concatenate(alpha_gt))
    else:
        alpha = 0.0
    detr2d = weights.w_focal * cls + weights.w_l1 * l1 + weights.w_iou * iou
    total = detr2d
    if weights.include_alpha:
        total = total + weights.lambda1 * alpha
    return {
        "class": cls,
        "l1": l1,
        "iou": iou,
        "alpha": alpha,
        "detr2d": detr2d,
        "total": total,
    }


def loss_2d(
    pred_boxes, pred_logits, pred_alphas, gt_boxes, gt_classes, gt_thetas,
    assignments, weights: LossWeights | None = None,
) -> float:
    """DETR-style 2D loss plus lambda1-weighted observation-angle loss."""
    return loss_2d_parts(
        pred_boxes, pred_logits, pred_alphas, gt_boxes, gt_classes, gt_thetas,
        assignments, weights,
    )["total"]


def loss_3d(
    pred_boxes: np.ndarray,
    pred_logits: np.ndarray,
    gt_boxes: np.ndarray,
    gt_classes: np.ndarray,
    assignment: tuple[np.ndarray, np.ndarray],
) -> float:
    """Focal classification plus L1 over the 9-dim box of matched pairs."""
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 9)
    pi, gi = assignment
    targets = np.full(pred_boxes.shape[0], -1, dtype=np.intp)
    l1 = 0.0
    if len(pi):
        targets[pi] = np.asarray(gt_classes, dtype=np.intp)[gi]
        gt_b = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 9)
        l1 = float(np.abs(pred_boxes[pi] - gt_b[gi]).sum() / len(pi))
    return focal_loss(pred_logits, targets) + l1


def loss_instance_depth(
    pred_bin_logits: np.ndarray,
    gt_depth: np.ndarray,
    range_max: float = 60.0,
) -> float:
    """Focal loss over uniform depth bins (multi-bin depth prediction)."""
    logits = np.asarray(pred_bin_logits, dtype=np.float64)
    depth = np.asarray(gt_depth, dtype=np.float64).reshape(-1)
    if logits.shape[0] != depth.shape[0]:
        raise ValueError("depth target count must match logits")
    if logits.shape[0] == 0:
        return 0.0
    n_bins = logits.shape[1]
    width = range_max / n_bins
    bins = np.clip(np.floor(depth / width), 0, n_bins - 1).astype(np.intp)
    return focal_loss(logits, bins)


def loss_dense_depth(pred_map: np.ndarray, gt_map: np.ndarray) -> float:
    """Masked L1 over a depth map; infinite ground truth is ignored."""
    pred = np.asarray(pred_map, dtype=np.float64)
    gt = np.asarray(gt_map, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("depth maps must share a shape")
    mask = np.isfinite(gt)
    if not mask.any():
        return 0.0
    return float(np.abs(pred[mask] - gt[mask]).mean())


def loss_aux(
    l_roi2d: float, l_ins_depth: float, l_dense_depth: float,
    weights: LossWeights | None = None,
) -> float:
    """Auxiliary-branch combiner: roi + instance depth + lambda2 * dense."""
    weights = weights or LossWeights()
    return l_roi2d + l_ins_depth + weights.lambda2 * l_dense_depth


def loss_total(
    l3d: float, l2d: float, laux: float, weights: LossWeights | None = None
) -> float:
    """Overall loss: 3D + 2D + auxiliary (aux droppable via the toggle)."""
    weights = weights or LossWeights()
    for v in (l3d, l2d, laux):
        if not math.isfinite(v):
            raise ValueError("loss components must be finite")
    total = l3d + l2d
    if weights.include_aux:
        total += laux
    return float(total)


def projected_rect(view: CameraView, box9: np.ndarray) -> Optional[Box2D]:
    """Clipped bounding rectangle of a 3D box in one view; None if invalid."""
    vp = project_anchor_batch(view, np.asarray(box9, dtype=np.float64)[None, :])
    if not vp.valid[0]:
        return None
    return Box2D(*(float(c) for c in vp.rect[0]), view_id=view.view_id)


def candidate_match(
    pred3d: Pred3D,
    gt2d: GtBox2D,
    truth: FrameTruth,
    params: MatchParams | None = None,
) -> bool:
    """Candidate predicate: center distance, projected IoU and class tests.

    True iff the 3D centers of the prediction and the 2D box's linked 3D
    ground truth are within tau_dis, the prediction's projected rectangle
    overlaps the 2D ground truth with IoU >= tau_iou, and the 3D classes
    agree.
    """
    params = params or MatchParams()
    g3 = truth.boxes3d[gt2d.box3d_index]
    if int(truth.classes3d[gt2d.box3d_index]) != pred3d.class_id:
        return False
    d = float(np.linalg.norm(np.asarray(pred3d.box[:3]) - g3[:3]))
    if d > params.tau_dis:
        return False
    view = next((v for v in truth.rig if v.view_id == gt2d.box.view_id), None)
    if view is None:
        raise ValueError(f"truth rig lacks view {gt2d.box.view_id}")
    rect = projected_rect(view, np.asarray(pred3d.box))
    if rect is None:
        return False
    iou = iou_matrix(rect.as_array()[None, :], gt2d.box.as_array()[None, :])[0, 0]
    return bool(iou >= params.tau_iou)


DEFAULT_TAUS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def aar(
    preds3d: Sequence[Pred3D],
    preds2d: Sequence[Pred2D],
    truth: FrameTruth,
    params: MatchParams | None = None,
    taus: Sequence[float] = DEFAULT_TAUS,
) -> AARResult:
    """Association accuracy rate and recall, with a tau_iou sweep.

    Candidates count every (3D prediction, 2D ground truth) pair passing
    the candidate predicate; valid matches count (3D prediction, 2D
    prediction) pairs that share a passing ground-truth box and whose 2D
    prediction also overlaps it at tau_iou with the right class.  Recall
    divides candidates by the number of 2D ground-truth boxes.
    """
    params = params or MatchParams()
    n2d = len(truth.gt2d)
    views = {v.view_id: v for v in truth.rig}

    # geometry reused across thresholds
    p_boxes = np.stack([np.asarray(p.box, dtype=np.float64) for p in preds3d]) if preds3d else np.zeros((0, 9))
    p_cls = np.array([p.class_id for p in preds3d], dtype=np.intp)
    g_centers = truth.boxes3d[:, :3] if len(truth.boxes3d) else np.zeros((0, 3))
    if len(preds3d) and len(truth.boxes3d):
        dist = np.linalg.norm(p_boxes[:, None, :3] - g_centers[None, :, :], axis=2)
        cls_eq = p_cls[:, None] == truth.classes3d[None, :].astype(np.intp)
    else:
        dist = np.zeros((len(preds3d), len(truth.boxes3d)))
        cls_eq = np.zeros((len(preds3d), len(truth.boxes3d)), dtype=bool)

    rects: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for view_id, view in views.items():
        if len(preds3d):
            vp = project_anchor_batch(view, p_boxes)
            rects[view_id] = (vp.rect, vp.valid)
        else:
            rects[view_id] = (np.zeros((0, 4)), np.zeros(0, dtype=bool))

    gt_by_view: dict[int, list[int]] = {}
    for j, g in enumerate(truth.gt2d):
        if g.box.view_id not in views:
            raise ValueError(
                f"gt2d entry references view {g.box.view_id} missing from the rig"
            )
        gt_by_view.setdefault(g.box.view_id, []).append(j)

    # IoU(pred3d rect, gt2d) and the distance/class gate per pair
    pair_iou: dict[int, np.ndarray] = {}
    pair_gate: dict[int, np.ndarray] = {}
    for view_id, j_list in gt_by_view.items():
        rect, valid = rects[view_id]
        g_boxes = np.stack([truth.gt2d[j].box.as_array() for j in j_list])
        iou = np.zeros((len(preds3d), len(j_list)))
        if len(preds3d):
            iou[valid] = iou_matrix(rect[valid], g_boxes)
        links = np.array([truth.gt2d[j].box3d_index for j in j_list], dtype=np.intp)
        gate = np.zeros((len(preds3d), len(j_list)), dtype=bool)
        if len(preds3d):
            gate = (dist[:, links] <= params.tau_dis) & cls_eq[:, links]
            gate &= valid[:, None]
        pair_iou[view_id] = iou
        pair_gate[view_id] = gate

    # IoU(pred2d, gt2d) and 2D class equality per view
    p2_by_view: dict[int, list[int]] = {}
    for k, p in enumerate(preds2d):
        p2_by_view.setdefault(p.box.view_id, []).append(k)
    p2_iou: dict[int, np.ndarray] = {}
    p2_cls: dict[int, np.ndarray] = {}
    for view_id, j_list in gt_by_view.items():
        k_list = p2_by_view.get(view_id, [])
        g_boxes = np.stack([truth.gt2d[j].box.as_array() for j in j_list])
        if k_list:
            pk = np.stack([preds2d[k].box.as_array() for k in k_list])
            p2_iou[view_id] = iou_matrix(pk, g_boxes)
            p2_cls[view_id] = (
                np.array([preds2d[k].class_id for k in k_list], dtype=np.intp)[:, None]
                == np.array([truth.gt2d[j].class_id for j in j_list], dtype=np.intp)[None, :]
            )
        else:
            p2_iou[view_id] = np.zeros((0, len(j_list)))
            p2_cls[view_id] = np.zeros((0, len(j_list)), dtype=bool)

    def counts_at(tau: float) -> tuple[int, int]:
        n_cand = 0
        n_valid = 0
        for view_id, j_list in gt_by_view.items():
            phi = pair_gate[view_id] & (pair_iou[view_id] >= tau)
            n_cand += int(phi.sum())
            ok2d = p2_cls[view_id] & (p2_iou[view_id] >= tau)  # (K, J)
            # psi(i, k): exists j with phi(i, j) and ok2d(k, j)
            n_valid += int((phi @ ok2d.T.astype(np.float64) > 0).sum())
        return n_cand, n_valid

    curve = []
    for tau in taus:
        c, v = counts_at(float(tau))
        a = 100.0 * v / c if c else 0.0
        r = 100.0 * c / n2d if n2d else 0.0
        curve.append((float(tau), a, r, c, v))
    c0, v0 = counts_at(params.tau_iou)
    return AARResult(
        n_candidate=c0,
        n_valid=v0,
        aar=100.0 * v0 / c0 if c0 else 0.0,
        recall=100.0 * c0 / n2d if n2d else 0.0,
        curve=curve,
        no_candidates=(c0 == 0),
    )


def ap_2d(
    preds2d: Sequence[Pred2D],
    gt2d: Sequence[GtBox2D],
    iou_thresholds: Sequence[float] = (0.5,),
) -> dict[int, dict[float, float]]:
    """11-point interpolated AP per class and IoU threshold.

    Predictions are ranked by descending score (ties by view then input
    order) and matched greedily to the best unused same-view ground truth.
    Classes appearing in either predictions or ground truth are reported.
    """
    classes = sorted(
        {p.class_id for p in preds2d} | {g.class_id for g in gt2d}
    )
    out: dict[int, dict[float, float]] = {}
    recall_pts = np.linspace(0.0, 1.0, 11)
    for cls in classes:
        cls_preds = [
            (k, p) for k, p in enumerate(preds2d) if p.class_id == cls
        ]
        cls_preds.sort(key=lambda kp: (-kp[1].score, kp[1].box.view_id, kp[0]))
        cls_gt = [g for g in gt2d if g.class_id == cls]
        n_gt = len(cls_gt)
        out[cls] = {}
        for thr in iou_thresholds:
            used = [False] * n_gt
            tp = np.zeros(len(cls_preds))
            fp = np.zeros(len(cls_preds))
            for rank, (_, p) in enumerate(cls_preds):
                best_iou, best_j = 0.0, -1
                for j, g in enumerate(cls_gt):
                    if used[j] or g.box.view_id != p.box.view_id:
                        continue
                    iou = iou_matrix(
                        p.box.as_array()[None, :], g.box.as_array()[None, :]
                    )[0, 0]
                    if iou >= thr and iou > best_iou:
                        best_iou, best_j = iou, j
                if best_j >= 0:
                    used[best_j] = True
                    tp[rank] = 1.0
                else:
                    fp[rank] = 1.0
            if n_gt == 0 or len(cls_preds) == 0:
                out[cls][float(thr)] = 0.0
                continue
            ctp = np.cumsum(tp)
            cfp = np.cumsum(fp)
            recall = ctp / n_gt
            precision = ctp / np.maximum(ctp + cfp, 1e-12)
            ap = 0.0
            for r in recall_pts:
                sel = recall >= r - 1e-12
                ap += float(precision[sel].max()) if sel.any() else 0.0
            out[cls][float(thr)] = ap / 11.0
    return out


def mean_ap(ap: dict[int, dict[float, float]]) -> float:
    vals = [v for per_cls in ap.values() for v in per_cls.values()]
    return float(np.mean(vals)) if vals else 0.0


# ---------------------------------------------------------------------------
# detections interchange JSON ("mvdet-detections/1")

def detections_to_json_obj(
    frames: Sequence[tuple[int, Sequence[Pred3D], Sequence[Pred2D]]]
) -> dict:
    def p3(p: Pred3D) -> dict:
        return {
            "box": [float(v) for v in np.asarray(p.box).reshape(9)],
            "class_id": int(p.class_id),
            "score": float(p.score),
        }

    out_frames = []
    for frame_id, p3d, p2d in frames:
        by_view: dict[str, list] = {}
        for p in p2d:
            by_view.setdefault(str(p.box.view_id), []).append(
                {
                    "box": [p.box.cx, p.box.cy, p.box.w, p.box.h],
                    "class_id": int(p.class_id),
                    "score": float(p.score),
                }
            )
        out_frames.append(
            {"frame_id": int(frame_id), "boxes3d": [p3(p) for p in p3d], "boxes2d": by_view}
        )
    return {"format": "mvdet-detections/1", "frames": out_frames}


def parse_detections(obj: dict) -> list[tuple[int, list[Pred3D], list[Pred2D]]]:
    if obj.get("format") != "mvdet-detections/1":
        raise ValueError(f"not a detections file: format={obj.get('format')!r}")
    frames = []
    for f in obj["frames"]:
        p3d = [
            Pred3D(
                box=np.asarray(b["box"], dtype=np.float64),
                class_id=int(b["class_id"]),
                score=float(b.get("score", 1.0)),
            )
            for b in f["boxes3d"]
        ]
        p2d = []
        for view_id, entries in f.get("boxes2d", {}).items():
            for b in entries:
                cx, cy, w, h = (float(v) for v in b["box"])
                p2d.append(
                    Pred2D(
                        box=Box2D(cx=cx, cy=cy, w=w, h=h, view_id=int(view_id)),
                        class_id=int(b["class_id"]),
                        score=float(b.get("score", 1.0)),
                    )
                )
        frames.append((int(f.get("frame_id", 0)), p3d, p2d))
    return frames
