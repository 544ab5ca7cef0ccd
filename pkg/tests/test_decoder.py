import numpy as np
import pytest

from mvdet.decoder import (
    PRESETS,
    DecoderConfig,
    HybridDecoder,
    QuerySet,
    forward,
    propagate_topk,
    wrap_yaw,
)
from mvdet.groupattn import ViewFeatures
from mvdet.simulator import render_features, sample_scene


def small_config(**over):
    over.setdefault("n_queries", 24)
    over.setdefault("channels", 16)
    over.setdefault("heads", 4)
    over.setdefault("feature_channels", 8)
    return DecoderConfig(**over)


@pytest.fixture
def setup(rig6):
    scene = sample_scene(2, rig6, n_boxes=8)
    feats, _ = render_features(scene, rig6, scales=(8, 16), channels=8)
    return rig6, feats


def test_wrap_yaw_range():
    vals = wrap_yaw(np.array([0.0, np.pi, -np.pi, 3 * np.pi, -2.5 * np.pi, 7.0]))
    assert np.all(vals > -np.pi) and np.all(vals <= np.pi)
    assert vals[1] == np.pi  # pi stays pi, -pi wraps to pi
    assert vals[2] == np.pi


def test_preset_table():
    assert PRESETS == {
        "A": (0, 1, 6), "B": (1, 0, 6), "C": (2, 1, 2),
        "D": (1, 2, 2), "E": (3, 3, 1), "F": (1, 1, 3),
    }
    for name in PRESETS:
        cfg = DecoderConfig.from_preset(name)
        assert cfg.total_sublayers == 6


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(channels=10, heads=4)
    with pytest.raises(ValueError):
        small_config(l_2d=0, l_3d=0)
    with pytest.raises(ValueError):
        DecoderConfig.from_preset("Z")
    assert DecoderConfig.high_res().n_queries == 1200


def test_config_json_roundtrip():
    cfg = DecoderConfig.from_preset("D", n_queries=64, channels=32, heads=4, seed=5)
    back = DecoderConfig.from_json_obj(cfg.to_json_obj())
    assert back == cfg
    preset = DecoderConfig.from_json_obj({"preset": "F", "n_queries": 32, "channels": 16, "heads": 4})
    assert (preset.l_2d, preset.l_3d, preset.l_hybrid) == (1, 1, 3)


def test_sublayer_counts_per_preset(setup):
    rig, feats = setup
    for name, (l2, l3, lh) in PRESETS.items():
        cfg = small_config(l_2d=l2, l_3d=l3, l_hybrid=lh)
        dec = HybridDecoder(cfg, rig)
        out, updated = dec.forward(feats, dec.initial_queries())
        assert out.n_sublayers == 6, name
        assert len(out.layers_2d) == l2 * lh
        assert len(out.layers_3d) == l3 * lh
        assert len(out.agg_taps) == l2 * lh
        assert updated.n == cfg.n_queries


def test_preset_a_runs_no_allocation(setup):
    rig, feats = setup
    cfg = small_config(l_2d=0, l_3d=1, l_hybrid=6)
    dec = HybridDecoder(cfg, rig)
    out, _ = dec.forward(feats, dec.initial_queries())
    assert out.layers_2d == [] and out.agg_taps == []
    assert len(out.layers_3d) == 6


def test_preset_f_taps_and_camera_groups(setup):
    rig, feats = setup
    cfg = small_config(l_2d=1, l_3d=1, l_hybrid=3)
    dec = HybridDecoder(cfg, rig)
    out, _ = dec.forward(feats, dec.initial_queries())
    assert len(out.agg_taps) == 3
    for layer in out.layers_2d:
        by_cam = layer.by_camera()
        assert by_cam  # per-camera 2D outputs exist
        for view_id, entry in by_cam.items():
            assert entry["boxes"].shape[0] == len(entry["cols"])


def test_zero_heads_leave_anchors_unchanged(rig6):
    cfg = small_config()
    dec = HybridDecoder(cfg, rig6)
    dec.zero_heads()
    queries = dec.initial_queries()
    zero_feats = {
        v.view_id: ViewFeatures(
            width=v.width, height=v.height,
            maps=[np.zeros((v.height // 8, v.width // 8, cfg.feature_channels)),
                  np.zeros((v.height // 16, v.width // 16, cfg.feature_channels))],
        )
        for v in rig6
    }
    out, updated = dec.forward(zero_feats, queries)
    assert np.array_equal(updated.anchors, queries.anchors)
    for layer in out.layers_3d + out.agg_taps:
        assert np.array_equal(layer.boxes3d, queries.anchors)


def test_forward_determinism(setup):
    rig, feats = setup
    cfg = small_config(seed=77)
    d1 = HybridDecoder(cfg, rig)
    d2 = HybridDecoder(cfg, rig)
    q1, q2 = d1.initial_queries(), d2.initial_queries()
    o1, u1 = d1.forward(feats, q1)
    o2, u2 = d2.forward(feats, q2)
    assert np.array_equal(u1.features, u2.features)
    assert np.array_equal(u1.anchors, u2.anchors)
    assert np.array_equal(u1.scores, u2.scores)
    for a, b in zip(o1.layers_2d, o2.layers_2d):
        assert np.array_equal(a.boxes2d, b.boxes2d)
        assert np.array_equal(a.logits, b.logits)
    for a, b in zip(o1.layers_3d + o1.agg_taps, o2.layers_3d + o2.agg_taps):
        assert np.array_equal(a.boxes3d, b.boxes3d)
        assert np.array_equal(a.logits, b.logits)


def test_2d_output_rows_match_allocation(setup):
    rig, feats = setup
    cfg = small_config(l_2d=2, l_3d=1, l_hybrid=2)
    dec = HybridDecoder(cfg, rig)
    out, _ = dec.forward(feats, dec.initial_queries())
    for layer in out.layers_2d:
        m = layer.mapping.n_2d
        assert layer.boxes2d.shape == (m, 4)
        assert layer.logits.shape == (m, cfg.n_classes)
        assert layer.alphas.shape == (m, 2)
        assert layer.ref_points.shape == (m, 2)


def test_view_drop_robustness(rig6):
    scene = sample_scene(2, rig6, n_boxes=8)
    feats, _ = render_features(scene, rig6, scales=(8, 16), channels=8)
    cfg = small_config()
    dec_full = HybridDecoder(cfg, rig6)
    out_full, _ = dec_full.forward(feats, dec_full.initial_queries())
    rig5 = rig6[:-1]
    dec_small = HybridDecoder(cfg, rig5)
    out_small, upd = dec_small.forward(feats, dec_small.initial_queries())
    dropped = rig6[-1].view_id
    cams_full = {int(v) for l in out_full.layers_2d for v in np.unique(l.mapping.camera_of_col)}
    cams_small = {int(v) for l in out_small.layers_2d for v in np.unique(l.mapping.camera_of_col)}
    assert dropped in cams_full
    assert dropped not in cams_small
    assert cams_small <= cams_full - {dropped}
    assert upd.n == cfg.n_queries


def test_temporal_queries_change_output(setup):
    rig, feats = setup
    cfg = small_config(seed=5)
    dec = HybridDecoder(cfg, rig)
    q = dec.initial_queries()
    out_plain, upd_plain = dec.forward(feats, q)
    temporal = propagate_topk(upd_plain, 8) if upd_plain.scores is not None else None
    out_t, upd_t = dec.forward(feats, q, temporal=temporal)
    assert not np.array_equal(upd_plain.features, upd_t.features)


def test_forward_errors(setup):
    rig, feats = setup
    cfg = small_config()
    dec = HybridDecoder(cfg, rig)
    with pytest.raises(ValueError):
        dec.forward({}, dec.initial_queries())  # missing features
    bad = QuerySet(features=np.zeros((3, cfg.channels)), anchors=np.zeros((3, 9)) + [0, 0, 0, 1, 1, 1, 0, 0, 0])
    with pytest.raises(ValueError):
        dec.forward(feats, bad)  # row count mismatch


# -------------------------------------------------------------- propagate_topk

def test_topk_hand_case():
    qs = QuerySet(
        features=np.arange(6, dtype=float).reshape(3, 2),
        anchors=np.tile([0, 0, 0, 1, 1, 1, 0, 0, 0.0], (3, 1)),
        scores=np.array([0.9, 0.1, 0.5]),
    )
    out = propagate_topk(qs, 2)
    assert out.scores.tolist() == [0.9, 0.5]
    assert np.array_equal(out.features, qs.features[[0, 2]])


def test_topk_full_set_sorted():
    qs = QuerySet(
        features=np.zeros((4, 2)),
        anchors=np.tile([0, 0, 0, 1, 1, 1, 0, 0, 0.0], (4, 1)),
        scores=np.array([0.2, 0.8, 0.2, 0.9]),
    )
    out = propagate_topk(qs, 4)
    assert out.scores.tolist() == [0.9, 0.8, 0.2, 0.2]


def test_topk_ties_prefer_lower_index():
    qs = QuerySet(
        features=np.arange(8, dtype=float).reshape(4, 2),
        anchors=np.tile([0, 0, 0, 1, 1, 1, 0, 0, 0.0], (4, 1)),
        scores=np.array([0.5, 0.9, 0.5, 0.1]),
    )
    out = propagate_topk(qs, 2)
    assert np.array_equal(out.features, qs.features[[1, 0]])


def test_topk_matches_sort_oracle():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        scores = rng.uniform(size=n).round(2)  # rounding forces ties
        qs = QuerySet(
            features=rng.standard_normal((n, 3)),
            anchors=np.tile([0, 0, 0, 1, 1, 1, 0, 0, 0.0], (n, 1)),
            scores=scores,
        )
        k = int(rng.integers(1, n + 1))
        out = propagate_topk(qs, k)
        order = sorted(range(n), key=lambda i: (-scores[i], i))[:k]
        assert np.array_equal(out.features, qs.features[order])


def test_topk_errors():
    qs = QuerySet(
        features=np.zeros((3, 2)),
        anchors=np.tile([0, 0, 0, 1, 1, 1, 0, 0, 0.0], (3, 1)),
    )
    with pytest.raises(ValueError):
        propagate_topk(qs, 1)  # no scores
    qs2 = QuerySet(features=qs.features, anchors=qs.anchors, scores=np.ones(3))
    with pytest.raises(ValueError):
        propagate_topk(qs2, 4)  # k > N
