"""Query-group attention: camera-group masks and masked attention.

The additive mask keeps 2D queries of different camera groups (and, with
denoising active, different denoise groups) from attending to each other.
Masked self-attention is evaluated block by block over the mask's
equivalence classes, so the output rows of one group depend only on that
group's inputs -- perturbing or removing another group leaves them
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from ._kernels import bilinear_sample

# Additive sentinel standing in for -inf.  After row-max subtraction the
# exponent of a masked logit is below the double underflow threshold, so its
# softmax weight is exactly 0.0 (holds for |unmasked logits| << 1e9).
NEG_INF = -1e9


@dataclass(frozen=True)
class GroupMask:
    """Group id per query column (camera ids, plus denoise-group ids)."""

    group_of: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.group_of, dtype=np.intp).reshape(-1)
        object.__setattr__(self, "group_of", g)

    @property
    def size(self) -> int:
        return self.group_of.shape[0]


@dataclass(frozen=True)
class AttentionParams:
    """Projection weights for scaled dot-product attention."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    heads: int = 1

    @classmethod
    def seeded(cls, channels: int, heads: int, rng: np.random.Generator) -> "AttentionParams":
        bound = 1.0 / math.sqrt(channels)
        draw = lambda: rng.uniform(-bound, bound, size=(channels, channels))
        return cls(w_q=draw(), w_k=draw(), w_v=draw(), heads=heads)


@dataclass(frozen=True)
class CrossAttentionParams:
    """Reference-point sampling parameters: scale mixing and projection."""

    scale_logits: np.ndarray  # (S,) mixed through a softmax
    w_proj: np.ndarray        # (C_feat, C)

    @classmethod
    def seeded(
        cls, feature_channels: int, channels: int, n_scales: int,
        rng: np.random.Generator,
    ) -> "CrossAttentionParams":
        bound = 1.0 / math.sqrt(channels)
        return cls(
            scale_logits=rng.uniform(-bound, bound, size=n_scales),
            w_proj=rng.uniform(-bound, bound, size=(feature_channels, channels)),
        )


@dataclass(frozen=True)
class ViewFeatures:
    """Multi-scale feature maps of one camera view, with its pixel size."""

    width: int
    height: int
    maps: list[np.ndarray]  # each (H_s, W_s, C_feat)


def build_mask(groups: GroupMask, denoise=None) -> np.ndarray:
    """Additive attention mask: 0 within a group, the -inf sentinel across.

    With a denoise layout present, a pair is permitted only when it shares
    the camera group AND the part (both in the match part, or both in the
    same denoise group); match and denoise parts are blocked from each
    other in both directions.
    """
    g = groups.group_of
    if g.size and g.min() < 0:
        raise ValueError("group id out of range")
    same = g[:, None] == g[None, :]
    if denoise is not None:
        part = denoise.part_ids()
        if part.shape[0] != g.shape[0]:
            raise ValueError(
                f"denoise layout covers {part.shape[0]} queries, mask has {g.shape[0]}"
            )
        same = same & (part[:, None] == part[None, :])
    mask = np.where(same, 0.0, NEG_INF)
    return mask


def _mask_blocks(mask: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Partition rows by identical allowed sets.

    Returns (block_rows, block_cols): for rows whose allowed column set
    equals their own row set (an equivalence class, as every mask built by
    this package is), cols is rows; otherwise the rows are returned
    individually with their allowed columns.
    """
    allowed = mask == 0.0
    patterns, inverse = np.unique(allowed, axis=0, return_inverse=True)
    block_rows, block_cols = [], []
    for p in range(patterns.shape[0]):
        rows = np.flatnonzero(inverse == p)
        cols = np.flatnonzero(patterns[p])
        if rows.size == cols.size and np.array_equal(rows, cols):
            block_rows.append(rows)
            block_cols.append(cols)
        else:
            for r in rows:
                block_rows.append(np.array([r], dtype=np.intp))
                block_cols.append(cols)
    return block_rows, block_cols


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def attention_weights(x: np.ndarray, mask: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Per-head attention weights as an (h, M, M) array (0 where blocked)."""
    x = np.asarray(x, dtype=np.float64)
    m, c = x.shape
    h = params.heads
    d = c // h
    out = np.zeros((h, m, m))
    block_rows, block_cols = _mask_blocks(mask)
    for rows, cols in zip(block_rows, block_cols):
        if cols.size == 0:
            continue
        xr = x[rows]
        xc = x[cols]
        q = xr @ params.w_q
        k = xc @ params.w_k
        for head in range(h):
            sl = slice(head * d, (head + 1) * d)
            scores = (q[:, sl] @ k[:, sl].T) / math.sqrt(d)
            out[np.ix_([head], rows, cols)] = softmax_rows(scores)[None]
    return out


def masked_self_attention(x: np.ndarray, mask: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Scaled dot-product self-attention with an additive group mask.

    Evaluates softmax((QK^T)/sqrt(d) + mask) V per head over the mask's
    allowed blocks only, which realizes the additive -inf semantics exactly
    and keeps each group's rows independent of every other group's values.
    Raises on NaN input (fail fast) and when C is not divisible by the head
    count.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"x must be (M, C), got {x.shape}")
    if np.isnan(x).any():
        raise ValueError("NaN in attention input")
    m, c = x.shape
    if mask.shape != (m, m):
        raise ValueError(f"mask must be ({m}, {m}), got {mask.shape}")
    if c % params.heads:
        raise ValueError(f"channels {c} not divisible by heads {params.heads}")
    h = params.heads
    d = c // h
    out = np.zeros_like(x)
    block_rows, block_cols = _mask_blocks(mask)
    for rows, cols in zip(block_rows, block_cols):
        if cols.size == 0:
            continue
        xr = x[rows]
        xc = x[cols]
        q = xr @ params.w_q
        k = xc @ params.w_k
        v = xc @ params.w_v
        for head in range(h):
            sl = slice(head * d, (head + 1) * d)
            scores = (q[:, sl] @ k[:, sl].T) / math.sqrt(d)
            out[np.ix_(rows, np.arange(head * d, (head + 1) * d))] = (
                softmax_rows(scores) @ v[:, sl]
            )
    return out


def cross_attention(x_q: np.ndarray, x_kv: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Plain (unmasked) attention of queries over a key/value set."""
    x_q = np.asarray(x_q, dtype=np.float64)
    x_kv = np.asarray(x_kv, dtype=np.float64)
    if np.isnan(x_q).any() or np.isnan(x_kv).any():
        raise ValueError("NaN in attention input")
    c = x_q.shape[1]
    h = params.heads
    if c % h:
        raise ValueError(f"channels {c} not divisible by heads {h}")
    d = c // h
    q = x_q @ params.w_q
    k = x_kv @ params.w_k
    v = x_kv @ params.w_v
    out = np.empty_like(x_q)
    for head in range(h):
        sl = slice(head * d, (head + 1) * d)
        scores = (q[:, sl] @ k[:, sl].T) / math.sqrt(d)
        out[:, sl] = softmax_rows(scores) @ v[:, sl]
    return out


def ref_point_cross_attention(
    x: np.ndarray,
    ref_points: np.ndarray,
    features: dict[int, ViewFeatures],
    groups: GroupMask,
    params: CrossAttentionParams,
) -> np.ndarray:
    """Sample each query's own view at its reference point.

    One bilinear sample per scale (clamped to the map), mixed with learned
    softmax scale weights and projected to the query width.  A query never
    reads another view's features, so perturbing the maps of view v can
    only change the outputs of group v.
    """
    x = np.asarray(x, dtype=np.float64)
    ref_points = np.asarray(ref_points, dtype=np.float64).reshape(-1, 2)
    m = x.shape[0]
    if ref_points.shape[0] != m or groups.size != m:
        raise ValueError("x, ref_points and groups must agree in length")
    weights = softmax_rows(params.scale_logits[None, :])[0]
    out = np.zeros((m, params.w_proj.shape[1]))
    for view_id in np.unique(groups.group_of):
        idx = np.flatnonzero(groups.group_of == view_id)
        vf = features.get(int(view_id))
        if vf is None:
            raise ValueError(f"missing feature maps for view {view_id}")
        if len(vf.maps) != params.scale_logits.shape[0]:
            raise ValueError(
                f"view {view_id} has {len(vf.maps)} scales, "
                f"params expect {params.scale_logits.shape[0]}"
            )
        pts = ref_points[idx]
        combined = np.zeros((idx.size, params.w_proj.shape[0]))
        for s, fmap in enumerate(vf.maps):
            hs, ws = fmap.shape[0], fmap.shape[1]
            # map pixel centers: view pixel u covers map coord u*W_s/W - 0.5
            mx = pts[:, 0] * (ws / vf.width) - 0.5
            my = pts[:, 1] * (hs / vf.height) - 0.5
            sampled = bilinear_sample(fmap, np.stack([mx, my], axis=1))
            combined = combined + weights[s] * sampled
        out[idx] = combined @ params.w_proj
    return out
