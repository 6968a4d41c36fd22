import math

import numpy as np
import pytest

from lte import encoder as enc
from lte.autodiff import engine as ad
from lte.autodiff.engine import GraphStateError
from lte.autodiff.nn import ParamStore
from lte.encoder import (Encoder, EncoderConfig, EmbeddingFormatError, LightTransportEmbedding,
                         attention_scores_dump, plan_encoder)
from lte.model import LTEModel
from lte.sampling import sample_surface_points
from lte.scene import MiniSceneConfig, generate_mini_scene, two_room_scene

from conftest import tiny_config


@pytest.fixture(scope="module")
def scene():
    return generate_mini_scene(MiniSceneConfig(seed=11))


@pytest.fixture(scope="module")
def cloud(scene):
    return sample_surface_points(scene, 400, seed=2)


def make_encoder(cfg, seed=0):
    return Encoder(ParamStore(seed), cfg)


def test_anchor_count_is_ceil_of_reduction(cloud):
    for M, red in ((400, 0.5), (399, 0.5), (101, 0.25)):
        plan = plan_encoder(cloud.take(np.arange(M)), EncoderConfig(dim=8, heads=2, knn=4, patch=8, reduction=red))
        assert len(plan.anchors) == math.ceil(M * red)


def test_full_scale_count_halves():
    rng = np.random.default_rng(0)
    M = 20000
    from lte.sampling import ScenePointCloud
    c = ScenePointCloud(rng.random((M, 3)), np.tile([0, 0, 1.0], (M, 1)), np.full((M, 3), 0.5),
                        np.zeros((M, 3)), np.zeros(M))
    cfg = EncoderConfig()
    plan = plan_encoder(c, cfg)
    assert plan.anchors.shape == (10000, 3)
    lat = make_encoder(EncoderConfig(blocks=0)).embed(plan)
    assert lat.shape == (10000, cfg.dim)


def test_too_few_points_errors(cloud):
    with pytest.raises(ValueError, match="fewer than knn"):
        plan_encoder(cloud.take(np.arange(10)), EncoderConfig(knn=16))


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(dim=10, heads=4).validate()
    with pytest.raises(ValueError):
        EncoderConfig(patch=8, knn=16).validate()


def test_k1_is_self_neighbourhood(cloud):
    cfg = EncoderConfig(dim=8, heads=2, knn=1, patch=8, blocks=0)
    e = make_encoder(cfg)
    plan = plan_encoder(cloud, cfg)
    np.testing.assert_array_equal(plan.neighbours[:, 0], plan.anchor_idx)
    X = e.F(ad.Tensor(plan.features))
    Xa = ad.gather(X, plan.anchor_idx)
    expect = e.G(ad.concat([ad.mul(Xa, 0.0), Xa], axis=-1)).data
    np.testing.assert_array_equal(e.embed(plan).data, expect)


def test_permutation_invariance(cloud):
    cfg = EncoderConfig(dim=16, heads=2, knn=8, patch=32, blocks=2)
    e = make_encoder(cfg)
    perm = np.random.default_rng(5).permutation(len(cloud))
    p1, p2 = plan_encoder(cloud, cfg), plan_encoder(cloud.take(perm), cfg)
    l1, l2 = e(p1).data, e(p2).data
    k1 = {tuple(a): l for a, l in zip(p1.anchors.tolist(), l1)}
    assert len(k1) == len(p1.anchors)
    for a, l in zip(p2.anchors.tolist(), l2):
        np.testing.assert_allclose(k1[tuple(a)], l, atol=1e-5)


def test_zero_blocks_is_identity(cloud):
    cfg = EncoderConfig(dim=8, heads=2, knn=4, patch=8, blocks=0)
    e = make_encoder(cfg)
    plan = plan_encoder(cloud, cfg)
    x = e.embed(plan)
    assert e.encode(x, plan) is x


def test_single_patch_equals_dense_attention(cloud):
    cfg = EncoderConfig(dim=16, heads=4, knn=4, patch=256, blocks=1)
    e = make_encoder(cfg)
    plan = plan_encoder(cloud, cfg)  # m = 200 <= P
    x = ad.gather(e.embed(plan), plan.serial)
    patch = e._attention(e.blocks[0], x, plan.patches[0]).data
    dense = e.dense_attention_reference(x)
    np.testing.assert_allclose(patch, dense, atol=1e-5)


def test_attention_rows_are_distributions(cloud):
    cfg = EncoderConfig(dim=16, heads=4, knn=4, patch=64, blocks=2)
    e = make_encoder(cfg)
    plan = plan_encoder(cloud, cfg)
    e.retain = True
    e(plan)
    for idx, mask, attn in e.retained:
        rows = attn.sum(-1)[np.broadcast_to(mask[:, None, :], attn.shape[:3])]
        assert np.abs(rows - 1).max() < 1e-6
        assert attn.min() >= 0 and attn.max() <= 1


def test_alternate_blocks_shift_only_when_several_patches(cloud):
    cfg = EncoderConfig(dim=8, heads=2, knn=4, patch=64, blocks=2)
    plan = plan_encoder(cloud, cfg)
    assert plan.patches[0][0][0, 0] == 0 and plan.patches[1][0][0, 0] == 32
    big = plan_encoder(cloud, EncoderConfig(dim=8, heads=2, knn=4, patch=256, blocks=2))
    assert big.patches[1][0][0, 0] == 0


def test_attention_cost_is_linear_in_m():
    rng = np.random.default_rng(0)
    from lte.sampling import ScenePointCloud
    cfg = EncoderConfig(dim=8, heads=2, knn=4, patch=64, blocks=2)
    e = make_encoder(cfg)
    counts = []
    for m in (1000, 2000, 4000):
        M = 2 * m
        c = ScenePointCloud(rng.random((M, 3)), np.tile([0, 0, 1.0], (M, 1)), np.full((M, 3), 0.5),
                            np.zeros((M, 3)), np.zeros(M))
        plan = plan_encoder(c, cfg)
        enc.reset_counters()
        e(plan)
        counts.append(enc.OP_COUNTERS["attention_pairs"] / m)
    assert max(counts) / min(counts) < 1.1


def test_dump_requires_retention(cloud):
    cfg = EncoderConfig(dim=8, heads=2, knn=4, patch=8, blocks=1)
    e = make_encoder(cfg)
    plan = plan_encoder(cloud, cfg)
    e(plan)
    with pytest.raises(GraphStateError):
        attention_scores_dump(e, plan, 0)


def test_dump_clamps_to_m(cloud):
    cfg = EncoderConfig(dim=8, heads=2, knn=4, patch=256, blocks=1)
    e = make_encoder(cfg)
    plan = plan_encoder(cloud, cfg)
    e.retain = True
    e(plan)
    top = attention_scores_dump(e, plan, 3, top_n=10 ** 6)
    assert len(top) == len(plan.anchors)
    assert sorted(a for a, _ in top) == list(range(len(plan.anchors)))
    assert all(0 <= s <= 1 for _, s in top)


def test_dump_two_room_focus_stays_in_lit_room():
    sc = two_room_scene()
    model = LTEModel()
    cloud = sample_surface_points(sc, 8000, seed=0)
    plan = model.plan(cloud)
    lamp = sc.vertices[sc.emitter_mask()].reshape(-1, 3).mean(0)
    from lte.sampling import knn
    fa = int(knn(plan.anchors, lamp[None], 1)[0][0, 0])
    model.encoder.retain = True
    model.encoder(plan)
    top = attention_scores_dump(model.encoder, plan, fa, top_n=200)
    xs = np.array([plan.anchors[a][0] for a, _ in top])
    assert (xs < 4.0).mean() >= 0.6


def test_embedding_round_trip(tmp_path, cloud):
    model = LTEModel(tiny_config())
    emb = model.embed(cloud, scene_hash="abc123")
    p = tmp_path / "e.lte1"
    emb.save(p)
    back = LightTransportEmbedding.load(p)
    assert back.anchors.tobytes() == emb.anchors.astype("<f4").tobytes()
    assert back.latents.tobytes() == emb.latents.astype("<f4").tobytes()
    assert (back.scene_hash, back.config_hash) == ("abc123", model.config_hash())
    p2 = tmp_path / "f.lte1"
    back.save(p2)
    assert p.read_bytes() == p2.read_bytes()


def test_embedding_rejects_corruption(tmp_path, cloud):
    emb = LTEModel(tiny_config()).embed(cloud)
    p = tmp_path / "e.lte1"
    emb.save(p)
    raw = p.read_bytes()
    (tmp_path / "short").write_bytes(raw[:-4])
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    for name in ("short", "magic"):
        with pytest.raises(EmbeddingFormatError):
            LightTransportEmbedding.load(tmp_path / name)
