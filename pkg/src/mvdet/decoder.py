"""Hybrid decoder: interleaved multi-view 2D and 3D sub-layers.

Each hybrid layer runs its 2D sub-layers (allocate -> group attention ->
2D head -> gate -> aggregate, with a 3D deep-supervision tap) followed by
its 3D sub-layers (self-attention, reference-point sampling, 3D head).
Heads are toy two-layer perceptrons with additive anchor refinement; all
parameters come from one seeded initializer so a fixed seed and inputs give
bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .aggregation import GateParams, aggregate, gate_truncation
from .allocation import AllocationLimits, MappingMatrix, allocate, clamp_anchors, gather_2d
from .geometry import CameraView, anchors_to_array, project_view_points
from .groupattn import (
    AttentionParams,
    CrossAttentionParams,
    GroupMask,
    ViewFeatures,
    softmax_rows,
    build_mask,
    cross_attention,
    masked_self_attention,
    ref_point_cross_attention,
)
from ._kernels import bilinear_sample

# Table-style layer arrangements: letter -> (l_2d, l_3d, l_hybrid); every
# preset totals (l_2d + l_3d) * l_hybrid = 6 sub-layers.
PRESETS = {
    "A": (0, 1, 6),
    "B": (1, 0, 6),
    "C": (2, 1, 2),
    "D": (1, 2, 2),
    "E": (3, 3, 1),
    "F": (1, 1, 3),
}

MIN_BOX_SIZE = 0.01  # meters; floor applied after additive size refinement


@dataclass(frozen=True)
class DecoderConfig:
    """Decoder shape, arrangement and seeding."""

    n_queries: int = 900
    channels: int = 64
    l_2d: int = 1
    l_3d: int = 1
    l_hybrid: int = 3
    top_k_temporal: int = 256
    heads: int = 8
    seed: int = 0
    n_classes: int = 5
    feature_channels: int = 16
    n_scales: int = 2
    limits: AllocationLimits = field(default_factory=AllocationLimits)

    def __post_init__(self):
        if self.n_queries <= 0:
            raise ValueError("n_queries must be positive")
        if self.l_2d < 0 or self.l_3d < 0 or self.l_hybrid < 1:
            raise ValueError("layer counts must be non-negative, l_hybrid >= 1")
        if self.l_2d + self.l_3d == 0:
            raise ValueError("at least one sub-layer per hybrid layer")
        if self.channels % self.heads:
            raise ValueError("channels must be divisible by heads")

    @property
    def total_sublayers(self) -> int:
        return (self.l_2d + self.l_3d) * self.l_hybrid

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "DecoderConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        l_2d, l_3d, l_hybrid = PRESETS[name]
        return cls(l_2d=l_2d, l_3d=l_3d, l_hybrid=l_hybrid, **overrides)

    @classmethod
    def high_res(cls, **overrides) -> "DecoderConfig":
        """The 1200-query profile used with the larger input resolution."""
        overrides.setdefault("n_queries", 1200)
        return cls(**overrides)

    def to_json_obj(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "channels": self.channels,
            "l_2d": self.l_2d,
            "l_3d": self.l_3d,
            "l_hybrid": self.l_hybrid,
            "top_k_temporal": self.top_k_temporal,
            "heads": self.heads,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "feature_channels": self.feature_channels,
            "n_scales": self.n_scales,
            "max_truncated_per_camera": self.limits.max_truncated_per_camera,
            "size_clamp": list(self.limits.size_clamp),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "DecoderConfig":
        """Config from a JSON dict; a "preset" key wins over explicit
        l_2d / l_3d / l_hybrid entries."""
        obj = dict(obj)
        preset = obj.pop("preset", None)
        limits = AllocationLimits(
            max_truncated_per_camera=obj.pop("max_truncated_per_camera", 100),
            size_clamp=tuple(obj.pop("size_clamp", (35.0, 35.0, 10.0))),
        )
        known = {
            k: obj[k]
            for k in (
                "n_queries", "channels", "l_2d", "l_3d", "l_hybrid",
                "top_k_temporal", "heads", "seed", "n_classes",
                "feature_channels", "n_scales",
            )
            if k in obj
        }
        if preset:
            for k in ("l_2d", "l_3d", "l_hybrid"):
                known.pop(k, None)
            return cls.from_preset(preset, limits=limits, **known)
        return cls(limits=limits, **known)


@dataclass
class QuerySet:
    """Query features with their anchors (and optional scores)."""

    features: np.ndarray          # (N, C)
    anchors: np.ndarray           # (N, 9)
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.anchors = anchors_to_array(self.anchors)
        if self.features.shape[0] != self.anchors.shape[0]:
            raise ValueError("features and anchors must have the same row count")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if self.scores.shape[0] != self.features.shape[0]:
                raise ValueError("scores must align with features")

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class Layer3DOutput:
    """One 3D head emission: refined anchors plus class logits."""

    boxes3d: np.ndarray  # (N, 9)
    logits: np.ndarray   # (N, K)
    source: str          # "3d" sub-layer or "agg" supervision tap


@dataclass
class Layer2DOutput:
    """One 2D sub-layer emission, aligned 1:1 with its mapping columns."""

    mapping: MappingMatrix
    ref_points: np.ndarray
    truncation: np.ndarray
    boxes2d: np.ndarray  # (M, 4) cx, cy, w, h in pixels
    logits: np.ndarray   # (M, K)
    alphas: np.ndarray   # (M, 2) predicted (sin, cos)

    def by_camera(self) -> dict[int, dict[str, np.ndarray]]:
        out = {}
        for view_id in np.unique(self.mapping.camera_of_col):
            cols = self.mapping.cols_of_view(int(view_id))
            out[int(view_id)] = {
                "cols": cols,
                "boxes": self.boxes2d[cols],
                "logits": self.logits[cols],
                "alphas": self.alphas[cols],
            }
        return out


@dataclass
class HeadOutputs:
    """Per-layer head emissions for deep supervision."""

    layers_2d: list[Layer2DOutput] = field(default_factory=list)
    layers_3d: list[Layer3DOutput] = field(default_factory=list)
    agg_taps: list[Layer3DOutput] = field(default_factory=list)

    @property
    def n_sublayers(self) -> int:
        return len(self.layers_2d) + len(self.layers_3d)

    def to_json_obj(self) -> dict:
        def l3(o: Layer3DOutput) -> dict:
            return {
                "source": o.source,
                "boxes3d": o.boxes3d.tolist(),
                "logits": o.logits.tolist(),
            }

        def l2(o: Layer2DOutput) -> dict:
            return {
                "rows": o.mapping.rows.tolist(),
                "camera_of_col": o.mapping.camera_of_col.tolist(),
                "boxes2d": o.boxes2d.tolist(),
                "logits": o.logits.tolist(),
                "alphas": o.alphas.tolist(),
                "truncation": [bool(t) for t in o.truncation],
            }

        return {
            "format": "mvdet-headoutputs/1",
            "layers_2d": [l2(o) for o in self.layers_2d],
            "layers_3d": [l3(o) for o in self.layers_3d],
            "agg_taps": [l3(o) for o in self.agg_taps],
        }


@dataclass
class MlpParams:
    """Two-layer perceptron weights."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def seeded(cls, c_in: int, hidden: int, c_out: int, rng: np.random.Generator) -> "MlpParams":
        bound = 1.0 / math.sqrt(c_in)
        return cls(
            w1=rng.uniform(-bound, bound, size=(c_in, hidden)),
            b1=rng.uniform(-bound, bound, size=hidden),
            w2=rng.uniform(-bound, bound, size=(hidden, c_out)),
            b2=rng.uniform(-bound, bound, size=c_out),
        )

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.w1 + self.b1, 0.0) @ self.w2 + self.b2

    def zero_(self) -> None:
        for a in (self.w1, self.b1, self.w2, self.b2):
            a[...] = 0.0


def wrap_yaw(theta: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    out = np.remainder(np.asarray(theta, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class _Layer2DParams:
    temporal: AttentionParams
    self_attn: AttentionParams
    cross: CrossAttentionParams
    head2d: MlpParams
    gate: GateParams
    agg_attn: AttentionParams
    agg_head3d: MlpParams


@dataclass
class _Layer3DParams:
    temporal: AttentionParams
    self_attn: AttentionParams
    cross: CrossAttentionParams
    head3d: MlpParams


class HybridDecoder:
    """Seeded decoder over a fixed rig.

    Parameters are drawn in a fixed documented order from one generator, so
    construction is deterministic and independent of the rig (heads and
    attention weights are shared across camera groups).
    """

    def __init__(self, config: DecoderConfig, rig: Sequence[CameraView]):
        if len(rig) == 0:
            raise ValueError("empty rig")
        self.config = config
        self.rig = list(rig)
        rng = np.random.default_rng(config.seed)
        c, h = config.channels, config.heads
        cf, ns, k = config.feature_channels, config.n_scales, config.n_classes
        self.layers_2d: list[list[_Layer2DParams]] = []
        self.layers_3d: list[list[_Layer3DParams]] = []
        for _ in range(config.l_hybrid):
            p2, p3 = [], []
            for _ in range(config.l_2d):
                p2.append(
                    _Layer2DParams(
                        temporal=AttentionParams.seeded(c, h, rng),
                        self_attn=AttentionParams.seeded(c, h, rng),
                        cross=CrossAttentionParams.seeded(cf, c, ns, rng),
                        head2d=MlpParams.seeded(c, c, 4 + k + 2, rng),
                        gate=GateParams.seeded(c, c, rng),
                        agg_attn=AttentionParams.seeded(c, h, rng),
                        agg_head3d=MlpParams.seeded(c, c, 7 + k, rng),
                    )
                )
            for _ in range(config.l_3d):
                p3.append(
                    _Layer3DParams(
                        temporal=AttentionParams.seeded(c, h, rng),
                        self_attn=AttentionParams.seeded(c, h, rng),
                        cross=CrossAttentionParams.seeded(cf, c, ns, rng),
                        head3d=MlpParams.seeded(c, c, 7 + k, rng),
                    )
                )
            self.layers_2d.append(p2)
            self.layers_3d.append(p3)

    def zero_heads(self) -> None:
        """Zero every head MLP (refinements become no-ops)."""
        for layer in self.layers_2d:
            for p in layer:
                p.head2d.zero_()
                p.agg_head3d.zero_()
        for layer in self.layers_3d:
            for p in layer:
                p.head3d.zero_()

    def initial_queries(
        self, bev_range: float = 55.0, rng_seed: Optional[int] = None
    ) -> QuerySet:
        """Seeded initial query set: BEV-spread anchors, uniform features."""
        cfg = self.config
        rng = np.random.default_rng(cfg.seed if rng_seed is None else rng_seed)
        bound = 1.0 / math.sqrt(cfg.channels)
        feats = rng.uniform(-bound, bound, size=(cfg.n_queries, cfg.channels))
        anchors = np.zeros((cfg.n_queries, 9))
        anchors[:, 0] = rng.uniform(-bev_range, bev_range, cfg.n_queries)
        anchors[:, 1] = rng.uniform(-bev_range, bev_range, cfg.n_queries)
        anchors[:, 2] = rng.uniform(0.2, 1.2, cfg.n_queries)
        anchors[:, 3] = rng.uniform(0.6, 2.2, cfg.n_queries)
        anchors[:, 4] = rng.uniform(0.6, 5.0, cfg.n_queries)
        anchors[:, 5] = rng.uniform(0.5, 2.0, cfg.n_queries)
        anchors[:, 6] = rng.uniform(-np.pi, np.pi, cfg.n_queries)
        return QuerySet(features=feats, anchors=anchors)

    def _check_features(self, features: dict[int, ViewFeatures]) -> None:
        for view in self.rig:
            vf = features.get(view.view_id)
            if vf is None:
                raise ValueError(f"missing feature maps for view {view.view_id}")
            if len(vf.maps) != self.config.n_scales:
                raise ValueError(
                    f"view {view.view_id}: expected {self.config.n_scales} scales, "
                    f"got {len(vf.maps)}"
                )

    def _refine_anchors(self, anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
        out = anchors.copy()
        out[:, 0:3] = out[:, 0:3] + deltas[:, 0:3]
        out[:, 3:6] = np.maximum(out[:, 3:6] + deltas[:, 3:6], MIN_BOX_SIZE)
        out[:, 6] = wrap_yaw(out[:, 6] + deltas[:, 6])
        return out

    def _cross_attention_3d(
        self,
        q3: np.ndarray,
        anchors: np.ndarray,
        features: dict[int, ViewFeatures],
        params: CrossAttentionParams,
    ) -> np.ndarray:
        """Anchor centers sample every view they fall into; mean over views."""
        n = q3.shape[0]
        weights = softmax_rows(params.scale_logits[None, :])[0]
        acc = np.zeros((n, params.w_proj.shape[0]))
        cnt = np.zeros(n)
        centers = anchors[:, 0:3]
        for view in self.rig:
            uv, front = project_view_points(view, centers)
            inb = (
                front
                & (uv[:, 0] > 0.0)
                & (uv[:, 0] < view.width)
                & (uv[:, 1] > 0.0)
                & (uv[:, 1] < view.height)
            )
            idx = np.flatnonzero(inb)
            if idx.size == 0:
                continue
            vf = features[view.view_id]
            combined = np.zeros((idx.size, params.w_proj.shape[0]))
            for s, fmap in enumerate(vf.maps):
                hs, ws = fmap.shape[0], fmap.shape[1]
                mx = uv[idx, 0] * (ws / vf.width) - 0.5
                my = uv[idx, 1] * (hs / vf.height) - 0.5
                combined = combined + weights[s] * bilinear_sample(
                    fmap, np.stack([mx, my], axis=1)
                )
            acc[idx] += combined
            cnt[idx] += 1.0
        seen = cnt > 0
        acc[seen] = acc[seen] / cnt[seen, None]
        return acc @ params.w_proj

    def forward(
        self,
        features: dict[int, ViewFeatures],
        queries: QuerySet,
        temporal: Optional[QuerySet] = None,
    ) -> tuple[HeadOutputs, QuerySet]:
        """Run every hybrid layer; returns head outputs and updated queries.

        The allocation mapping is recomputed inside every 2D sub-layer
        (anchors may have been refined since the previous one).
        """
        cfg = self.config
        if queries.n != cfg.n_queries:
            raise ValueError(
                f"query set has {queries.n} rows, config expects {cfg.n_queries}"
            )
        self._check_features(features)
        q3 = np.asarray(queries.features, dtype=np.float64).copy()
        anchors = queries.anchors.copy()
        out = HeadOutputs()
        last_logits = None
        for li in range(cfg.l_hybrid):
            for p in self.layers_2d[li]:
                if temporal is not None and temporal.n > 0:
                    q3 = q3 + cross_attention(q3, temporal.features, p.temporal)
                anchors = clamp_anchors(anchors, cfg.limits)
                alloc = allocate(anchors, self.rig, cfg.limits)
                groups = GroupMask(alloc.mapping.camera_of_col)
                mask = build_mask(groups)
                q2 = gather_2d(alloc.mapping, q3)
                if alloc.mapping.n_2d:
                    q2 = q2 + masked_self_attention(q2, mask, p.self_attn)
                    q2 = q2 + ref_point_cross_attention(
                        q2, alloc.ref_points, features, groups, p.cross
                    )
                raw = p.head2d.apply(q2)
                base = np.array([[b.cx, b.cy, b.w, b.h] for b in alloc.rects]).reshape(-1, 4)
                boxes2d = base + raw[:, 0:4]
                boxes2d[:, 2:4] = np.maximum(boxes2d[:, 2:4], 0.0)
                out.layers_2d.append(
                    Layer2DOutput(
                        mapping=alloc.mapping,
                        ref_points=alloc.ref_points,
                        truncation=alloc.truncation,
                        boxes2d=boxes2d,
                        logits=raw[:, 4 : 4 + cfg.n_classes],
                        alphas=raw[:, 4 + cfg.n_classes :],
                    )
                )
                q2g = gate_truncation(q2, alloc.truncation, p.gate)
                q3 = aggregate(q3, q2g, alloc.mapping, p.agg_attn)
                tap = p.agg_head3d.apply(q3)
                anchors = self._refine_anchors(anchors, tap[:, 0:7])
                logits = tap[:, 7:]
                out.agg_taps.append(
                    Layer3DOutput(boxes3d=anchors.copy(), logits=logits, source="agg")
                )
                last_logits = logits
            for p in self.layers_3d[li]:
                if temporal is not None and temporal.n > 0:
                    q3 = q3 + cross_attention(q3, temporal.features, p.temporal)
                q3 = q3 + cross_attention(q3, q3, p.self_attn)
                q3 = q3 + self._cross_attention_3d(q3, anchors, features, p.cross)
                raw = p.head3d.apply(q3)
                anchors = self._refine_anchors(anchors, raw[:, 0:7])
                logits = raw[:, 7:]
                out.layers_3d.append(
                    Layer3DOutput(boxes3d=anchors.copy(), logits=logits, source="3d")
                )
                last_logits = logits
        scores = None
        if last_logits is not None:
            scores = _sigmoid(last_logits.max(axis=1))
        updated = QuerySet(features=q3, anchors=anchors, scores=scores)
        return out, updated


def forward(
    config: DecoderConfig,
    rig: Sequence[CameraView],
    features: dict[int, ViewFeatures],
    queries: QuerySet,
    temporal: Optional[QuerySet] = None,
) -> tuple[HeadOutputs, QuerySet]:
    """One-shot decoder forward (constructs the seeded decoder internally)."""
    return HybridDecoder(config, rig).forward(features, queries, temporal)


def propagate_topk(queries: QuerySet, k: int) -> QuerySet:
    """Keep the K best-scored queries as next-frame temporal queries.

    Rows are ordered by descending score; ties keep the lower index first.
    Requires scores; raises when k exceeds the query count.
    """
    if queries.scores is None:
        raise ValueError("propagate_topk requires scores")
    n = queries.n
    if k > n:
        raise ValueError(f"k={k} exceeds query count {n}")
    order = np.lexsort((np.arange(n), -queries.scores))[:k]
    return QuerySet(
        features=queries.features[order].copy(),
        anchors=queries.anchors[order].copy(),
        scores=queries.scores[order].copy(),
    )
