import numpy as np
import pytest
from scipy.stats import chisquare

from lte.guiding import (VARIANCE_HEADER, GuidingDistribution, bake_guidance, build_product_histogram,
                         cdf_invert_sample, guided_render, write_variance_csv)
from lte.scene import lightbox_scene
from lte.tracer import brdf
from lte.tracer.integrators import local_to_bin

LAMBERT = (brdf.LAMBERTIAN, (0.8, 0.8, 0.8), 1.0)
NORMAL_VIEW = np.array([0.0, 0.0, 1.0])


def lumpy_grid(seed=0):
    rng = np.random.default_rng(seed)
    return rng.gamma(0.7, 1.0, (32, 32, 3))


def test_constant_field_gives_cosine_rows():
    d = build_product_histogram(np.ones((32, 32, 3)), LAMBERT, NORMAL_VIEW)
    cos_row = 1 - (np.arange(32) + 0.5) / 32
    np.testing.assert_allclose(d.mass.sum(1), cos_row / cos_row.sum(), rtol=1e-12)
    np.testing.assert_allclose(d.mass, d.mass[:, :1].repeat(32, 1), rtol=1e-12)


def test_normalized_and_floored():
    d = build_product_histogram(lumpy_grid(), (brdf.CONDUCTOR_GGX, (0.9, 0.9, 0.9), 0.2), [0.3, 0.1, 0.95])
    assert abs((d.pdf * d.bin_solid_angle).sum() - 1) < 1e-6
    assert np.all(d.pdf > 0)


def test_concentrated_field():
    g = np.zeros((32, 32, 3))
    g[5, 7] = 10.0
    d = build_product_histogram(g, LAMBERT, NORMAL_VIEW)
    assert d.mass[5, 7] >= 1 - 31e-3
    nofloor = build_product_histogram(g, LAMBERT, NORMAL_VIEW, floor_frac=0)
    assert nofloor.mass[5, 7] == 1.0


def test_black_grid_falls_back_to_uniform():
    d = build_product_histogram(np.zeros((32, 32, 3)), LAMBERT, NORMAL_VIEW)
    assert d.is_fallback and d.mass.sum() == pytest.approx(1) and np.ptp(d.mass) < 1e-15


def test_negative_grid_rejected():
    with pytest.raises(ValueError):
        build_product_histogram(-np.ones((32, 32, 3)), LAMBERT, NORMAL_VIEW)


def test_uniform_inversion_example():
    d = GuidingDistribution.from_weights(np.ones((1, 4)))
    for u1 in (0.0, 0.4, 0.99):
        _, _, row, col = cdf_invert_sample(d, np.array([u1]), np.array([0.6]))
        assert (row[0], col[0]) == (0, 2)


def test_weighted_inversion_example():
    d = GuidingDistribution.from_weights(np.array([[1.0, 3.0]]))
    _, _, _, col = cdf_invert_sample(d, np.array([0.5, 0.5]), np.array([0.1, 0.3]))
    assert col.tolist() == [0, 1]


def test_inversion_monotone_in_u2():
    d = build_product_histogram(lumpy_grid(1), LAMBERT, NORMAL_VIEW)
    u2 = np.linspace(0, 1, 5000, endpoint=False)
    for u1 in (0.05, 0.5, 0.93):
        _, _, row, col = cdf_invert_sample(d, np.full_like(u2, u1), u2)
        assert len(set(row.tolist())) == 1 and np.all(np.diff(col) >= 0)


def test_chi_square_one_million_samples():
    d = build_product_histogram(lumpy_grid(2), LAMBERT, NORMAL_VIEW)
    rng = np.random.default_rng(0)
    n = 10 ** 6
    local, pdf, row, col = cdf_invert_sample(d, rng.random(n), rng.random(n))
    # the jittered direction lands in the chosen bin and reports that bin's density
    r, c = local_to_bin(local, 32)
    np.testing.assert_array_equal(r, row)
    np.testing.assert_array_equal(c, col)
    np.testing.assert_array_equal(pdf, d.pdf_of(local))
    counts = np.bincount(row * 32 + col, minlength=1024)
    expected = d.mass.ravel() * n
    sigma = np.sqrt(n * d.mass.ravel() * (1 - d.mass.ravel()))
    assert np.all(np.abs(counts - expected) <= 4 * sigma)
    assert chisquare(counts, expected).pvalue > 0.01


# ---------------------------------------------------------------- rendering

@pytest.fixture(scope="module")
def glow():
    sc = lightbox_scene(emissive_walls=True)
    return sc, bake_guidance(sc, sc.camera, spp_per_bin=16)


def test_mix_one_is_plain_brdf_sampling(glow):
    sc, g = glow
    a = guided_render(sc, guidance=g, spp=2, mix_brdf=1.0, seed=3)
    b = guided_render(sc, guidance=None, spp=2, seed=3)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_guided_variance_not_above_brdf(glow, tmp_path):
    sc, g = glow
    vg = np.mean([guided_render(sc, guidance=g, spp=2, seed=s).variance for s in range(8)], axis=0)
    vb = np.mean([guided_render(sc, guidance=None, spp=2, seed=s).variance for s in range(8)], axis=0)
    assert vg.mean() <= vb.mean()
    write_variance_csv(tmp_path / "v.csv", vg, vb)
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == ",".join(VARIANCE_HEADER) and len(lines) == 1 + vg.size


def test_guided_is_unbiased(glow):
    sc, g = glow
    ref = guided_render(sc, guidance=None, spp=4096, seed=99).image
    est = np.mean([guided_render(sc, guidance=g, spp=2, seed=s).image for s in range(64)], axis=0)
    tiles = lambda im: im.reshape(2, 8, 2, 8, 3).mean((1, 3))  # noqa: E731
    np.testing.assert_allclose(tiles(est), tiles(ref), rtol=0.02)
