import json
import subprocess
import sys

import numpy as np
import pytest

from lte.autodiff.checkpoint import write_checkpoint
from lte.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, manifest_path
from lte.imageio import ImageFormatError, read_pfm, to_ldr, write_pfm, write_png
from lte.metrics import image_metrics, mse, psnr, ssim

TINY = ["--dim", "16", "--blocks", "1", "--heads", "2", "--patch", "32", "--enc-knn", "8", "--knn", "8",
        "--batch", "64", "--log-every", "0"]


def run(*argv):
    return main([str(a) for a in argv])


def manifest(out):
    doc = json.loads(manifest_path(out).read_text())
    doc.pop("wall_clock_s")
    return doc


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    """gen -> sample -> bake -> train -> render -> eval on the Cornell box at toy scale."""
    d = tmp_path_factory.mktemp("smoke")
    s = d / "scenes" / "cornell.json"
    assert run("gen", "--fixture", "cornell", "--out", d / "scenes") == 0
    assert run("sample", "--scene", s, "--scene-points", 512, "--query-points", 400, "--kind", "irradiance",
               "--seed", 1, "--out", d / "raw.ltds") == 0
    assert run("bake", "--data", d / "raw.ltds", "--scene", s, "--spp", 64, "--out", d / "baked.ltds") == 0
    assert run("train", "--data", d / "baked.ltds", "--steps", 300, "--lr", "1e-2", *TINY,
               "--out", d / "run") == 0
    return d, s


def test_smoke_pipeline_artifacts(smoke):
    d, s = smoke
    ck = d / "run" / "model.ltec"
    assert run("render", "--scene", s, "--checkpoint", ck, "--scene-points", 512, "--width", 16, "--height", 16,
               "--out", d / "pred.pfm") == 0
    img = read_pfm(d / "pred.pfm")
    assert img.shape == (16, 16, 3) and np.isfinite(img).all() and img.max() > 0
    assert (d / "pred.png").exists()
    assert run("eval", "--checkpoint", ck, "--data", d / "baked.ltds", "--scene", s, "--scene-points", 512,
               "--width", 8, "--height", 8, "--spp", 32, "--out", d / "metrics.csv") == 0
    head = (d / "metrics.csv").read_text().splitlines()
    assert head[0].startswith("scene,method")
    assert any(",idw_baseline," in line for line in head) and any(",image," in line for line in head)
    for p in ("scenes", "raw.ltds", "baked.ltds", "run", "pred.pfm", "metrics.csv"):
        assert manifest_path(d / p).exists(), p


def test_render_full_and_oracle(smoke, tmp_path):
    d, s = smoke
    small = ["--width", 8, "--height", 8]
    assert run("render", "--scene", s, "--oracle", "--spp", 16, *small, "--out", tmp_path / "o.pfm") == 0
    assert run("render", "--scene", s, "--oracle", "--full", "--spp", 4, *small, "--out", tmp_path / "of.pfm") == 0
    assert run("render", "--scene", s, "--checkpoint", d / "run" / "model.ltec", "--full", "--spp", 2,
               "--scene-points", 512, *small, "--out", tmp_path / "f.pfm") == 0
    for name in ("o", "of", "f"):
        assert np.isfinite(read_pfm(tmp_path / f"{name}.pfm")).all()


def test_commands_reproducible_from_manifest(smoke, tmp_path):
    d, s = smoke
    cmds = [
        ("bake", "--data", d / "raw.ltds", "--scene", s, "--spp", 16, "--out", tmp_path / "b.ltds"),
        ("train", "--data", d / "baked.ltds", "--steps", 5, *TINY, "--out", tmp_path / "t"),
        ("render", "--scene", s, "--checkpoint", d / "run" / "model.ltec", "--scene-points", 512,
         "--width", 8, "--height", 8, "--out", tmp_path / "r.pfm"),
        ("sh-compare", "--fixture", "step", "--l-max", "2,10", "--out", tmp_path / "sh"),
    ]
    for c in cmds:
        assert run(*c) == 0
        first = manifest(c[-1])
        assert run(*c) == 0
        assert manifest(c[-1]) == first, c[0]


def test_bake_independent_of_thread_count(smoke, tmp_path, monkeypatch):
    d, s = smoke
    monkeypatch.setenv("LTE_THREADS", "1")
    assert run("bake", "--data", d / "raw.ltds", "--scene", s, "--spp", 8, "--out", tmp_path / "1.ltds") == 0
    monkeypatch.setenv("LTE_THREADS", "3")
    assert run("bake", "--data", d / "raw.ltds", "--scene", s, "--spp", 8, "--out", tmp_path / "3.ltds") == 0
    assert (tmp_path / "1.ltds").read_bytes() == (tmp_path / "3.ltds").read_bytes()


def test_prediction_independent_of_camera(smoke):
    # a pixel's value is the model evaluated at its primary hit, whatever else is in the batch
    from lte.model import LTEModel
    from lte.pipeline import pixel_queries
    from lte.sampling import sample_surface_points
    from lte.scene import load_scene

    d, s = smoke
    model = LTEModel.load(d / "run" / "model.ltec")
    scene = load_scene(s)
    emb = model.embed(sample_surface_points(scene, 512, seed=0))
    q, _, _ = pixel_queries(scene, scene.camera.with_resolution(32, 32))
    full = model.predict_irradiance(emb, q)
    part = model.predict_irradiance(emb, q.take(slice(100, 160)))
    np.testing.assert_allclose(part, full[100:160], rtol=1e-6, atol=1e-7)


def test_sh_guide_and_attention(smoke, tmp_path):
    d, s = smoke
    assert run("sh-compare", "--data", d / "baked.ltds", "--out", tmp_path / "x") == EXIT_DATA  # not a grid set
    assert run("sh-compare", "--scene", s, "--spp", 2, "--l-max", "1,4", "--out", tmp_path / "sh") == 0
    assert (tmp_path / "sh" / "sh_error.csv").read_text().startswith("l_max,mse_r,mse_g,mse_b,overshoot")
    assert read_pfm(tmp_path / "sh" / "panels.pfm").shape == (32, 96, 3)
    assert run("guide", "--scene", s, "--width", 6, "--height", 6, "--bake-spp", 1, "--out", tmp_path / "g") == 0
    lines = (tmp_path / "g" / "variance.csv").read_text().splitlines()
    assert lines[0] == "pixel_x,pixel_y,var_guided,var_brdf" and len(lines) == 37
    assert run("attn-dump", "--scene", s, "--checkpoint", d / "run" / "model.ltec", "--scene-points", 512,
               "--top", 10, "--out", tmp_path / "attn.csv") == 0
    rows = (tmp_path / "attn.csv").read_text().splitlines()
    assert rows[0] == "rank,anchor,x,y,z,score" and len(rows) == 11


# ---------------------------------------------------------------- exit codes

def test_usage_errors(tmp_path, monkeypatch, capsys):
    assert run("render", "--bogus", "--out", tmp_path / "a.pfm") == EXIT_USAGE
    assert run("nosuchcommand") == EXIT_USAGE
    assert run("gen") == EXIT_USAGE  # --out missing
    monkeypatch.setenv("LTE_THREADS", "lots")
    assert run("gen", "--out", tmp_path / "s") == EXIT_USAGE
    assert "LTE_THREADS" in capsys.readouterr().err


def test_render_needs_checkpoint_or_oracle(smoke, tmp_path):
    _, s = smoke
    assert run("render", "--scene", s, "--out", tmp_path / "a.pfm") == EXIT_USAGE


def test_data_errors(smoke, tmp_path):
    d, s = smoke
    assert run("render", "--scene", tmp_path / "missing.json", "--oracle", "--out", tmp_path / "a.pfm") == EXIT_DATA
    (tmp_path / "bad.json").write_text("{")
    assert run("sample", "--scene", tmp_path / "bad.json", "--out", tmp_path / "x.ltds") == EXIT_DATA
    (tmp_path / "junk.ltec").write_bytes(b"LTEC\x01\x00\x00\x00garbage")
    assert run("render", "--scene", s, "--checkpoint", tmp_path / "junk.ltec", "--out", tmp_path / "a.pfm") == EXIT_DATA
    (tmp_path / "junk.ltds").write_bytes(b"not a dataset at all")
    assert run("train", "--data", tmp_path / "junk.ltds", "--out", tmp_path / "t") == EXIT_DATA
    assert run("train", "--data", d / "raw.ltds", "--steps", 5, *TINY, "--out", tmp_path / "t") == EXIT_DATA


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit(smoke, tmp_path):
    from lte.autodiff.checkpoint import read_checkpoint

    d, _ = smoke
    ck = d / "run" / "model.ltec"
    params = read_checkpoint(ck)
    params = {k: np.full_like(v, np.nan) if "head_irr" in k else v for k, v in params.items()}
    write_checkpoint(tmp_path / "nan.ltec", params)
    (tmp_path / "nan.ltec.json").write_bytes((d / "run" / "model.ltec.json").read_bytes())
    assert run("train", "--data", d / "baked.ltds", "--steps", 5, *TINY, "--checkpoint", tmp_path / "nan.ltec",
               "--out", tmp_path / "t") == EXIT_NUMERIC


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "lte.cli", "gen", "--fixture", "lightbox", "--out", tmp_path],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "lightbox.json").exists()
    r = subprocess.run([sys.executable, "-m", "lte.cli", "--help"], capture_output=True, text=True)
    for name in ("gen", "sample", "bake", "train", "render", "eval", "sh-compare", "guide", "attn-dump"):
        assert name in r.stdout


# ---------------------------------------------------------------- metrics and images

def test_metrics_closed_forms(rng):
    a = rng.random((24, 20, 3))
    m = image_metrics(a, a)
    assert m["mse"] == 0 and m["ssim"] == pytest.approx(1.0) and m["psnr"] == float("inf")
    assert mse(a + 0.1, a) == pytest.approx(0.01, rel=1e-9)
    b = rng.random((24, 20, 3)) * 3
    assert ssim(a, b) == ssim(b, a)
    assert ssim(a, b) < 1
    assert psnr(a * 0 + 0.5, np.ones_like(a)) == pytest.approx(10 * np.log10(4))
    with pytest.raises(ValueError, match="dimension"):
        mse(a, a[:-1])


def test_pfm_round_trip_and_layout(tmp_path, rng):
    img = (rng.normal(size=(5, 7, 3)) * 100).astype(np.float32)
    img[0, 0] = [np.inf, -0.0, 1e-40]
    write_pfm(tmp_path / "a.pfm", img)
    back = read_pfm(tmp_path / "a.pfm")
    assert back.tobytes() == img.tobytes()
    write_pfm(tmp_path / "one.pfm", np.array([[[1.0, 2.0, 3.0]]]))
    raw = (tmp_path / "one.pfm").read_bytes()
    assert raw == b"PF\n1 1\n-1.0\n" + np.array([1, 2, 3], "<f4").tobytes()
    # bottom-up rows: the first stored row is the image's last row
    write_pfm(tmp_path / "b.pfm", img)
    first = np.frombuffer((tmp_path / "b.pfm").read_bytes().split(b"\n", 3)[3][:84], "<f4")
    assert first.tobytes() == img[-1].tobytes()


@pytest.mark.parametrize("raw", [b"P6\n1 1\n255\n...", b"PF\n1 1\n1.0\n" + bytes(12), b"PF\n2 2\n-1.0\n" + bytes(12),
                                 b"PF\nx y\n-1.0\n", b"PF\n"])
def test_pfm_rejects_bad_files(tmp_path, raw):
    (tmp_path / "x.pfm").write_bytes(raw)
    with pytest.raises(ImageFormatError):
        read_pfm(tmp_path / "x.pfm")


def test_pfm_needs_rgb(tmp_path):
    with pytest.raises(ImageFormatError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2)))


def test_png_tonemapped(tmp_path):
    from PIL import Image

    img = np.array([[[0.0, 1.0, 1e6]]])
    assert to_ldr(img).tolist() == [[[0, round((0.5 ** (1 / 2.2)) * 255), 255]]]
    write_png(tmp_path / "a.png", img)
    assert np.asarray(Image.open(tmp_path / "a.png")).tolist() == to_ldr(img).tolist()
