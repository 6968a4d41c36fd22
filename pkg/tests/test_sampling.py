import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lte import kernels
from lte.sampling import (KNN, farthest_point_sample, knn, knn_linear, morton_code, sample_query_points,
                          sample_surface_points, serialize_zorder)
from lte.scene import Material, SceneBuilder, SceneError, cornell_box

BACKENDS = ["python"] + (["compiled"] if kernels._ext is not None else [])


def one_triangle(mat=None):
    b = SceneBuilder()
    m = b.material(mat or Material())
    b.triangle((0, 0, 0), (2, 0, 0), (0, 0, 1), m, (0, 1, 0))
    return b.build()


def test_points_inside_single_triangle():
    sc = one_triangle()
    pc = sample_surface_points(sc, 1000, seed=0)
    a, b, c = sc.vertices[0]
    T = np.stack([b - a, c - a], 1)[[0, 2]]
    uv = np.linalg.solve(T, (pc.positions - a)[:, [0, 2]].T).T
    assert uv.min() >= -1e-12 and uv.sum(1).max() <= 1 + 1e-12
    assert np.all(pc.positions[:, 1] == 0)
    np.testing.assert_allclose(np.linalg.norm(pc.normals, axis=1), 1, atol=1e-5)


def test_area_proportional_counts():
    b = SceneBuilder()
    m = b.material(Material())
    b.triangle((0, 0, 0), (2, 0, 0), (0, 0, 1), m, (0, 1, 0))  # area 1
    b.triangle((5, 0, 0), (8, 0, 0), (5, 0, 2), m, (0, 1, 0))  # area 3
    sc = b.build()
    for fn in (sample_surface_points, sample_query_points):
        pc = fn(sc, 40000, seed=3)
        n1 = int((pc.positions[:, 0] < 4).sum())
        sigma = np.sqrt(40000 * 0.25 * 0.75)
        assert abs(n1 - 10000) < 3 * sigma


def test_emission_is_copied():
    sc = one_triangle(Material("emitter", (0, 0, 0), radiance=(3.0, 2.0, 1.0)))
    pc = sample_surface_points(sc, 50, seed=0)
    np.testing.assert_array_equal(pc.emission, np.tile([3.0, 2.0, 1.0], (50, 1)))


def test_non_emissive_points_have_zero_emission():
    pc = sample_surface_points(cornell_box(), 2000, seed=0)
    lit = pc.emission.sum(1) > 0
    assert lit.any() and (~lit).any()
    assert np.all(pc.emission[~lit] == 0)


def test_emitter_only_scene_has_no_shadeable_surface():
    sc = one_triangle(Material("emitter", (0, 0, 0), radiance=(1.0, 1.0, 1.0)))
    with pytest.raises(SceneError, match="no shadeable surface"):
        sample_query_points(sc, 10)


def test_queries_avoid_emitters():
    sc = cornell_box()
    q = sample_query_points(sc, 5000, seed=0)
    assert not np.any(np.abs(q.positions[:, 1] - 5.487) < 1e-9)  # the light quad's plane


def test_sampling_is_deterministic():
    sc = cornell_box()
    a, b = sample_query_points(sc, 500, seed=4), sample_query_points(sc, 500, seed=4)
    assert a.positions.tobytes() == b.positions.tobytes()
    c, d = sample_surface_points(sc, 500, seed=4), sample_surface_points(sc, 500, seed=4)
    assert c.features().tobytes() == d.features().tobytes()


def test_count_must_be_positive():
    with pytest.raises(ValueError):
        sample_surface_points(cornell_box(), 0)


# ---------------------------------------------------------------- FPS

def fps_oracle(pos, m, start=0):
    """Independent O(M m) greedy max-min; np.argmax takes the lowest index on ties."""
    sel = [start]
    d = ((pos - pos[start]) ** 2).sum(1)
    for _ in range(m - 1):
        d[sel] = -1.0
        i = int(np.argmax(d))
        sel.append(i)
        d = np.minimum(d, ((pos - pos[i]) ** 2).sum(1))
    return np.array(sel)


@pytest.mark.parametrize("backend", BACKENDS)
def test_fps_example(backend):
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [10, 10, 10]], dtype=float)
    assert farthest_point_sample(pts, 2, 0, backend=backend).tolist() == [0, 3]
    assert farthest_point_sample(pts, 1, 2, backend=backend).tolist() == [2]
    full = farthest_point_sample(pts, 4, 0, backend=backend)
    assert sorted(full.tolist()) == [0, 1, 2, 3]
    assert full.tolist() == fps_oracle(pts, 4).tolist()


def test_fps_m_too_large():
    with pytest.raises(ValueError):
        farthest_point_sample(np.zeros((3, 3)), 4)


def test_fps_identity_on_all_distinct_points():
    pts = np.random.default_rng(0).random((50, 3))
    order = farthest_point_sample(pts, 50)
    assert order.tolist() == fps_oracle(pts, 50).tolist()
    assert sorted(order.tolist()) == list(range(50))


# ---------------------------------------------------------------- KNN

def knn_oracle(t, q, k):
    d2 = ((q[:, None, :] - t[None, :, :]) ** 2).sum(-1)
    idx = np.array([np.lexsort((np.arange(len(t)), row))[:k] for row in d2])
    return idx, np.sqrt(np.take_along_axis(d2, idx, 1))


@pytest.mark.parametrize("backend", BACKENDS)
def test_knn_examples(backend):
    t = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    idx, d = knn(t, np.array([[1.4, 0, 0]]), 2, backend=backend)
    assert idx.tolist() == [[1, 2]]
    idx, d = knn(t, t[2:3], 1, backend=backend)
    assert idx.tolist() == [[2]] and d[0, 0] == 0


def test_knn_k_out_of_range():
    with pytest.raises(ValueError):
        knn(np.zeros((3, 3)), np.zeros((1, 3)), 4)


@pytest.mark.parametrize("backend", BACKENDS)
def test_knn_tree_equals_linear_scan_large(backend):
    rng = np.random.default_rng(0)
    t, q = rng.random((10000, 3)), rng.random((1000, 3))
    i1, d1 = KNN(t).query(q, 32, backend=backend)
    i2, d2 = knn_linear(t, q, 32)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_array_equal(d1, d2)


def test_knn_ties_go_to_lower_index():
    g = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    t = np.concatenate([g, g])  # every point duplicated
    q = g + 0.5
    for backend in BACKENDS:
        i1, _ = KNN(t).query(q, 10, backend=backend)
        np.testing.assert_array_equal(i1, knn_oracle(t, q, 10)[0])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 300), st.integers(1, 40), st.integers(0, 2 ** 31), st.booleans())
def test_knn_property(n, k, seed, grid):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 4, (n, 3)).astype(float) if grid else rng.normal(size=(n, 3))
    q = rng.integers(0, 4, (20, 3)).astype(float) if grid else rng.normal(size=(20, 3))
    k = min(k, n)
    oi, od = knn_oracle(t, q, k)
    for backend in BACKENDS:
        i, d = KNN(t, leaf_size=4).query(q, k, backend=backend)
        np.testing.assert_array_equal(i, oi)
        np.testing.assert_array_equal(d, od)


# ---------------------------------------------------------------- Z-order

def test_morton_examples():
    assert morton_code(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])).tolist() == [0, 1, 2, 4]
    assert morton_code(np.array([[1, 1, 1], [2, 0, 0]])).tolist() == [7, 8]


def test_zorder_is_bijection_and_stable():
    pts = np.random.default_rng(1).random((1000, 3))
    perm = serialize_zorder(pts, 10)
    assert sorted(perm.tolist()) == list(range(1000))
    same = np.zeros((5, 3))
    assert serialize_zorder(same, 8).tolist() == [0, 1, 2, 3, 4]


def test_zorder_bits_range():
    with pytest.raises(ValueError):
        serialize_zorder(np.zeros((2, 3)), 3)


def test_zorder_locality():
    rng = np.random.default_rng(2)
    pts = rng.random((5000, 3))
    s = pts[serialize_zorder(pts, 10)]
    i = rng.integers(0, 4999, 1000)
    adjacent = np.linalg.norm(s[i + 1] - s[i], axis=1)
    random = np.linalg.norm(pts[rng.integers(0, 5000, 1000)] - pts[rng.integers(0, 5000, 1000)], axis=1)
    assert np.median(adjacent) < np.median(random)


def test_flat_axis_quantizes_to_zero():
    pts = np.random.default_rng(3).random((100, 3))
    pts[:, 1] = 2.0
    perm = serialize_zorder(pts, 6)
    assert sorted(perm.tolist()) == list(range(100))
