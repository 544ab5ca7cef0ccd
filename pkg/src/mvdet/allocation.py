"""Dynamic query allocation: the 3D-to-2D mapping matrix and its algebra.

Builds one 2D query column per valid (anchor, view) pair, capped per camera
for truncated candidates, and provides the gather (Q2d = T^T Q3d) and
mean-scatter (T Q / colsum) operations against that mapping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Anchor3D, Box2D, CameraView, anchors_to_array, project_anchor_batch


@dataclass(frozen=True)
class AllocationLimits:
    """Caps applied during allocation.

    ``max_truncated_per_camera`` bounds the number of truncated (projection
    center) columns each camera group may contribute; ``size_clamp`` is the
    elementwise upper bound (w, l, h) applied to anchor sizes before
    projection.
    """

    max_truncated_per_camera: int = 100
    size_clamp: tuple[float, float, float] = (35.0, 35.0, 10.0)

    def __post_init__(self):
        if self.max_truncated_per_camera <= 0:
            raise ValueError("max_truncated_per_camera must be positive")
        if any(s <= 0 for s in self.size_clamp):
            raise ValueError("size clamp values must be positive")


@dataclass
class MappingMatrix:
    """Sparse N x M assignment from 3D queries to their 2D query columns.

    Every column has exactly one owning row; columns are ordered by camera
    group (all of the first rig view, then the next, ...), and by ascending
    anchor index within a group.
    """

    n_3d: int
    n_2d: int
    rows: np.ndarray          # (M,) owning 3D row per column
    camera_of_col: np.ndarray  # (M,) view id per column

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.intp).reshape(-1)
        self.camera_of_col = np.asarray(self.camera_of_col, dtype=np.intp).reshape(-1)
        if self.rows.shape[0] != self.n_2d or self.camera_of_col.shape[0] != self.n_2d:
            raise ValueError("column arrays must have length n_2d")
        if self.n_2d and (self.rows.min() < 0 or self.rows.max() >= self.n_3d):
            raise ValueError("row index out of range")

    @property
    def entries(self) -> list[tuple[int, int]]:
        return [(int(r), j) for j, r in enumerate(self.rows)]

    def to_dense(self) -> np.ndarray:
        t = np.zeros((self.n_3d, self.n_2d))
        t[self.rows, np.arange(self.n_2d)] = 1.0
        return t

    def cols_of_view(self, view_id: int) -> np.ndarray:
        return np.flatnonzero(self.camera_of_col == view_id)


@dataclass
class AllocationResult:
    """Mapping plus the per-column geometry the 2D decoder consumes.

    ``truncation[j]`` is the center indicator of column j: True when the
    projected anchor center itself lies in the view (NOT truncated), False
    for truncated columns.  ``ref_points[j]`` is the projected anchor
    center when it is in view, else the center of the clipped bounding
    rectangle.  ``dropped`` lists (anchor_index, view_id) pairs whose
    clipped rectangle degenerated to zero area and were therefore not
    allocated; ``capped`` records per-view counts removed by the truncated
    cap.
    """

    mapping: MappingMatrix
    ref_points: np.ndarray    # (M, 2)
    truncation: np.ndarray    # (M,) bool
    rects: list[Box2D]
    dropped: list[tuple[int, int]] = field(default_factory=list)
    capped: dict[int, int] = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "format": "mvdet-allocation/1",
            "n_3d": self.mapping.n_3d,
            "n_2d": self.mapping.n_2d,
            "rows": [int(r) for r in self.mapping.rows],
            "camera_of_col": [int(c) for c in self.mapping.camera_of_col],
            "ref_points": [[float(u), float(v)] for u, v in self.ref_points],
            "truncation": [bool(t) for t in self.truncation],
            "rects": [[b.cx, b.cy, b.w, b.h, b.view_id] for b in self.rects],
            "dropped_zero_area": [[int(i), int(v)] for i, v in self.dropped],
            "capped_per_view": {str(k): int(v) for k, v in self.capped.items()},
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AllocationResult":
        mapping = MappingMatrix(
            n_3d=int(obj["n_3d"]),
            n_2d=int(obj["n_2d"]),
            rows=np.asarray(obj["rows"], dtype=np.intp),
            camera_of_col=np.asarray(obj["camera_of_col"], dtype=np.intp),
        )
        return cls(
            mapping=mapping,
            ref_points=np.asarray(obj["ref_points"], dtype=np.float64).reshape(-1, 2),
            truncation=np.asarray(obj["truncation"], dtype=bool),
            rects=[
                Box2D(cx=r[0], cy=r[1], w=r[2], h=r[3], view_id=int(r[4]))
                for r in obj["rects"]
            ],
            dropped=[(int(i), int(v)) for i, v in obj.get("dropped_zero_area", [])],
            capped={int(k): int(v) for k, v in obj.get("capped_per_view", {}).items()},
        )


def clamp_anchors(
    anchors: Sequence[Anchor3D] | np.ndarray, limits: AllocationLimits | None = None
) -> list[Anchor3D] | np.ndarray:
    """Clamp anchor sizes elementwise to the configured maximum.

    Centers, yaw and velocity are untouched.  Lists of Anchor3D come back
    as lists; (N, 9) arrays come back as arrays.
    """
    limits = limits or AllocationLimits()
    clamp = np.asarray(limits.size_clamp, dtype=np.float64)
    if isinstance(anchors, np.ndarray):
        out = anchors_to_array(anchors).copy()
        out[:, 3:6] = np.minimum(out[:, 3:6], clamp)
        return out
    return [
        Anchor3D(
            center=a.center,
            size=tuple(float(min(s, c)) for s, c in zip(a.size, clamp)),
            yaw=a.yaw,
            velocity=a.velocity,
        )
        for a in anchors
    ]


def allocate(
    anchors: Sequence[Anchor3D] | np.ndarray,
    rig: Sequence[CameraView],
    limits: AllocationLimits | None = None,
) -> AllocationResult:
    """Build the mapping matrix and per-column data for one set of anchors.

    One column is created per (anchor, view) pair that passes the validity
    rule, iterating the rig in order so camera groups are contiguous.
    Within a camera, truncated candidates (anchor center not in the view)
    beyond the per-camera cap are discarded, keeping those with the largest
    clipped rectangle area (ties favor the lower anchor index).  Columns
    whose clipped rectangle has zero area are dropped and reported rather
    than allocated.  Anchors are expected to be clamped already.
    """
    if len(rig) == 0:
        raise ValueError("empty rig")
    limits = limits or AllocationLimits()
    arr = anchors_to_array(anchors)
    n = arr.shape[0]

    rows: list[np.ndarray] = []
    cams: list[np.ndarray] = []
    refs: list[np.ndarray] = []
    truncs: list[np.ndarray] = []
    rects: list[Box2D] = []
    dropped: list[tuple[int, int]] = []
    capped: dict[int, int] = {}

    for view in rig:
        vp = project_anchor_batch(view, arr)
        usable = vp.valid & (vp.rect_area > 0.0)
        for i in np.flatnonzero(vp.valid & ~usable):
            dropped.append((int(i), view.view_id))

        trunc_idx = np.flatnonzero(usable & ~vp.center_in_view)
        if trunc_idx.size > limits.max_truncated_per_camera:
            # keep the largest clipped areas; lexsort's last key dominates,
            # ties fall back to the lower anchor index
            order = np.lexsort((trunc_idx, -vp.rect_area[trunc_idx]))
            keep = np.sort(trunc_idx[order[: limits.max_truncated_per_camera]])
            capped[view.view_id] = int(trunc_idx.size - keep.size)
            trunc_idx = keep
        center_idx = np.flatnonzero(usable & vp.center_in_view)
        idx = np.sort(np.concatenate([center_idx, trunc_idx])).astype(np.intp)
        if idx.size == 0:
            continue

        center_in = vp.center_in_view[idx]
        ref = np.where(
            center_in[:, None],
            vp.uv[idx, 0, :],
            vp.rect[idx, 0:2],
        )
        rows.append(idx)
        cams.append(np.full(idx.size, view.view_id, dtype=np.intp))
        refs.append(ref)
        truncs.append(center_in)
        for i in idx:
            rects.append(Box2D(*(float(c) for c in vp.rect[i]), view_id=view.view_id))

    if rows:
        all_rows = np.concatenate(rows)
        all_cams = np.concatenate(cams)
        all_refs = np.concatenate(refs, axis=0)
        all_truncs = np.concatenate(truncs)
    else:
        all_rows = np.zeros(0, dtype=np.intp)
        all_cams = np.zeros(0, dtype=np.intp)
        all_refs = np.zeros((0, 2))
        all_truncs = np.zeros(0, dtype=bool)

    mapping = MappingMatrix(
        n_3d=n, n_2d=all_rows.shape[0], rows=all_rows, camera_of_col=all_cams
    )
    return AllocationResult(
        mapping=mapping,
        ref_points=all_refs,
        truncation=all_truncs,
        rects=rects,
        dropped=dropped,
        capped=capped,
    )


def gather_2d(mapping: MappingMatrix, q3d: np.ndarray) -> np.ndarray:
    """Build 2D query features by duplicating each owning 3D row.

    Sparse equivalent of the dense product T^T Q3d (exactly equal, since
    each column has a single unit entry).
    """
    q3d = np.asarray(q3d, dtype=np.float64)
    if q3d.ndim != 2 or q3d.shape[0] != mapping.n_3d:
        raise ValueError(
            f"q3d must be ({mapping.n_3d}, C), got {q3d.shape}"
        )
    return q3d[mapping.rows].copy()


def scatter_mean(mapping: MappingMatrix, q2d: np.ndarray) -> np.ndarray:
    """Average each 3D query's 2D columns back into one row.

    Sparse equivalent of T Q2d / colsum(T); rows that own no column are
    zero-filled (their denominator would be 0).  The mean is computed as
    first-copy + mean of differences so a row whose columns are all equal
    comes back bit-identical to that value.
    """
    q2d = np.asarray(q2d, dtype=np.float64)
    if q2d.ndim != 2 or q2d.shape[0] != mapping.n_2d:
        raise ValueError(
            f"q2d must be ({mapping.n_2d}, C), got {q2d.shape}"
        )
    n, c = mapping.n_3d, q2d.shape[1]
    out = np.zeros((n, c))
    if mapping.n_2d == 0:
        return out
    counts = np.bincount(mapping.rows, minlength=n).astype(np.float64)
    owned = np.flatnonzero(counts > 0)
    first_col = np.full(n, -1, dtype=np.intp)
    uniq, first = np.unique(mapping.rows, return_index=True)
    first_col[uniq] = first
    anchor_vals = np.zeros((n, c))
    anchor_vals[owned] = q2d[first_col[owned]]
    diff_sum = np.zeros((n, c))
    np.add.at(diff_sum, mapping.rows, q2d - anchor_vals[mapping.rows])
    out[owned] = anchor_vals[owned] + diff_sum[owned] / counts[owned, None]
    return out
