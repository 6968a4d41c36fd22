import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lte.autodiff import engine as ad
from lte.autodiff.gradcheck import finite_difference_check
from lte.model import LTEModel
from lte.sampling import QueryPointSet, sample_query_points, sample_surface_points
from lte.scene import MiniSceneConfig, generate_mini_scene
from lte.tracer.integrators import bake_irradiance
from lte.training import (METRICS_HEADER, Dataset, DatasetError, Schedule, SceneRecord, TrainingError,
                          evaluate, idw_interpolate, load_dataset, log_rel_l2_loss, lr_at, read_metrics_csv,
                          save_dataset, smooth, split_probes, train, write_metrics_csv)

from conftest import tiny_config


@pytest.fixture(scope="module")
def scene():
    return generate_mini_scene(MiniSceneConfig(seed=2))


@pytest.fixture(scope="module")
def dataset(scene):
    cloud = sample_surface_points(scene, 256, seed=0)
    q = sample_query_points(scene, 200, seed=1)
    E = bake_irradiance(scene, q.positions, q.normals, rays_per_point=64, seed=0, include_direct=True)
    ds = Dataset("irradiance")
    ds.add(SceneRecord("s0", cloud, q.with_targets(E.astype(np.float32))))
    return ds


def test_loss_closed_form():
    v = float(log_rel_l2_loss(np.array([[math.e - 1]]), np.array([[0.0]])).data)
    assert abs(v - 0.98030) < 1e-5
    with ad.precision(64):
        v64 = float(log_rel_l2_loss(np.array([[math.e - 1]]), np.array([[0.0]])).data)
    assert abs(v64 - 1 / 1.01 ** 2) < 1e-12


def test_loss_zero_iff_equal(rng):
    y = rng.random((10, 3)) * 5
    assert float(log_rel_l2_loss(y, y).data) == 0.0
    assert float(log_rel_l2_loss(y + 0.1, y).data) > 0


def test_loss_rejects_negative():
    with pytest.raises(ValueError):
        log_rel_l2_loss(np.array([-1.0]), np.array([1.0]))


def test_loss_gradient_fd(rng):
    y = rng.random((5, 3)) * 3
    err = finite_difference_check(lambda t: log_rel_l2_loss(t[0], y), [rng.random((5, 3)) * 3 + 0.1])
    assert err < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=12), st.lists(st.floats(0, 100), min_size=1, max_size=12))
def test_loss_nonnegative_property(a, b):
    n = min(len(a), len(b))
    with ad.precision(64):
        v = float(log_rel_l2_loss(np.array(a[:n]), np.array(b[:n])).data)
    assert v >= 0 and (v > 0 or np.allclose(a[:n], b[:n]))


def test_lr_schedule_endpoints():
    s = Schedule(2000, 1e-3, 1000)
    assert lr_at(0, s) == 0.0
    assert lr_at(1000, s) == 1e-3
    assert abs(lr_at(2000, s)) < 1e-12
    assert lr_at(500, s) == 5e-4
    assert abs(lr_at(1500, s) - 5e-4) < 1e-15
    with pytest.raises(ValueError):
        lr_at(2001, s)


def test_schedule_requires_warmup_below_total():
    with pytest.raises(ValueError):
        Schedule(100, 1e-3, 100)


def test_dataset_round_trip(tmp_path, dataset):
    p = tmp_path / "d.ltds"
    save_dataset(p, dataset)
    back = load_dataset(p)
    assert back.kind == "irradiance" and len(back) == 1
    r0, r1 = dataset.records[0], back.records[0]
    for a, b in ((r0.cloud.positions, r1.cloud.positions), (r0.queries.targets, r1.queries.targets),
                 (r0.cloud.roughness, r1.cloud.roughness)):
        assert np.asarray(a, "<f4").tobytes() == np.asarray(b, "<f4").tobytes()
    p2 = tmp_path / "e.ltds"
    save_dataset(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_dataset_rejects_wrong_kind(dataset):
    r = dataset.records[0]
    with pytest.raises(DatasetError):
        Dataset("radiance").add(r)
    with pytest.raises(DatasetError):
        Dataset("bogus")


def test_dataset_rejects_corrupt_file(tmp_path, dataset):
    p = tmp_path / "d.ltds"
    save_dataset(p, dataset)
    (tmp_path / "cut").write_bytes(p.read_bytes()[:-10])
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "cut")


def test_unbaked_dataset_cannot_train(tmp_path, dataset):
    r = dataset.records[0]
    unbaked = QueryPointSet(r.queries.positions, r.queries.normals, r.queries.albedo)
    ds = Dataset("irradiance").add(SceneRecord("u", r.cloud, unbaked))
    assert not ds.baked
    save_dataset(tmp_path / "u.ltds", ds)
    assert not load_dataset(tmp_path / "u.ltds").baked
    with pytest.raises(DatasetError):
        train(ds, tiny_config(), Schedule(10, 1e-3, 2, 16))


def test_training_is_deterministic(dataset):
    a = train(dataset, tiny_config(), Schedule(20, 3e-3, 4, 32), seed=5, log_every=0)
    b = train(dataset, tiny_config(), Schedule(20, 3e-3, 4, 32), seed=5, log_every=0)
    assert a.losses == b.losses
    assert a.model.store.digest() == b.model.store.digest()


def test_overfit_loss_drops(dataset, tmp_path):
    # smooth noise-free targets; Monte Carlo targets would put a noise floor under the loss
    r = dataset.records[0]
    p = r.queries.positions
    E = np.stack([2 + np.sin(1.5 * p[:, 0]), 2 + np.cos(1.5 * p[:, 2]), 1.5 + 0.5 * np.sin(p[:, 1] + p[:, 0])], 1)
    ds = Dataset("irradiance").add(SceneRecord("s", r.cloud, r.queries.with_targets(E.astype(np.float32))))
    res = train(ds, tiny_config(dim=16, knn=8, patch=32, kappa=8), Schedule(400, 1e-2, 40, 64),
                log_every=0, loss_csv=tmp_path / "loss.csv")
    sm = smooth(res.losses)
    assert sm[-1] < 0.25 * sm[50]
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,smoothed,lr,scene" and len(lines) == 401


def test_finetune_freezes_encoder(dataset, tmp_path):
    cfg = tiny_config()
    base = train(dataset, cfg, Schedule(5, 1e-3, 1, 32), log_every=0).model
    ck = tmp_path / "base.ltec"
    base.save(ck)
    ft = train(dataset, cfg, Schedule(10, 1e-2, 2, 32), mode="finetune_decoder", init_checkpoint=ck,
               log_every=0).model
    assert ft.store.digest("encoder.") == base.store.digest("encoder.")
    assert ft.store.digest("decoder.") != base.store.digest("decoder.")


def test_finetune_needs_checkpoint(dataset):
    with pytest.raises(ValueError):
        train(dataset, tiny_config(), Schedule(5, 1e-3, 1, 8), mode="finetune_decoder")


def test_nan_loss_aborts_with_step(dataset, tmp_path):
    m = LTEModel(tiny_config())
    m.store[m.decoder.out_irr.layers[-1].b].data[:] = np.nan
    m.save(tmp_path / "nan.ltec")
    with pytest.raises(TrainingError, match="step 0"):
        train(dataset, tiny_config(), Schedule(5, 1e-3, 1, 32), init_checkpoint=tmp_path / "nan.ltec", log_every=0)


def test_checkpoints_written(dataset, tmp_path):
    res = train(dataset, tiny_config(), Schedule(6, 1e-3, 1, 16), checkpoint_every=3, out_dir=tmp_path, log_every=0)
    assert [p.name for p in res.checkpoints] == ["step000003.ltec", "step000006.ltec"]
    m = LTEModel.load(res.checkpoints[-1])
    assert m.store.digest() == res.model.store.digest()


def test_metrics_csv_round_trip(tmp_path):
    rows = [{"scene": "a", "method": "model", "count": 3, "mse": 0.125, "psnr": 21.5, "ssim": 0.5},
            {"scene": "mean", "method": "model", "count": 3, "mse": 0.125, "psnr": 21.5, "ssim": float("nan")}]
    write_metrics_csv(tmp_path / "m.csv", rows)
    back = read_metrics_csv(tmp_path / "m.csv")
    assert back[0] == rows[0] and math.isnan(back[1]["ssim"])
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == ",".join(METRICS_HEADER)


def test_evaluate_reference_against_itself(dataset):
    class Oracle(LTEModel):
        def predict_irradiance(self, emb, queries, **kw):
            return queries.targets

    rec = dataset.records[0]
    rows = evaluate(Oracle(tiny_config()), dataset,
                    images={"img": (rec.queries.targets.reshape(10, 20, 3), rec.queries.targets.reshape(10, 20, 3))})
    model_row = [r for r in rows if r["method"] == "model" and r["scene"] == "s0"][0]
    assert model_row["mse"] == 0
    img = [r for r in rows if r["method"] == "image" and r["scene"] == "img"][0]
    assert img["mse"] == 0 and img["ssim"] == pytest.approx(1.0)


def test_idw_exact_at_probes_and_convex(rng):
    pp = rng.random((20, 3))
    pv = rng.random((20, 3))
    np.testing.assert_array_equal(idw_interpolate(pp, pv, pp), pv)
    q = rng.random((50, 3))
    out = idw_interpolate(pp, pv, q)
    assert np.all(out >= pv.min(0) - 1e-12) and np.all(out <= pv.max(0) + 1e-12)


def test_split_probes(dataset):
    rest, probes = split_probes(dataset, 64)
    assert len(rest.records[0].queries) == 200 - 64
    pos, val = probes["s0"]
    np.testing.assert_array_equal(pos, dataset.records[0].queries.positions[:64])
    with pytest.raises(DatasetError):
        split_probes(dataset, 500)
