import json

import numpy as np
import pytest

from lte.scene import (Camera, Material, MiniSceneConfig, SceneBuilder, SceneError, cornell_box, dumps_scene,
                       generate_mini_scene, load_scene, save_scene, scene_to_dict, two_room_scene)

QUAD_FILE = {
    "format": "lte-scene", "version": 1,
    "materials": [
        {"name": "lamp", "kind": "emitter", "albedo": [0, 0, 0], "roughness": 1.0, "radiance": [5, 5, 5]},
        {"name": "floor", "kind": "lambertian", "albedo": [0.5, 0.5, 0.5], "roughness": 1.0, "radiance": [0, 0, 0]},
    ],
    "triangles": [
        [0, 2, 0, 1, 2, 0, 1, 2, 1, 0, -1, 0, 0, -1, 0, 0, -1, 0, 0],
        [0, 2, 0, 1, 2, 1, 0, 2, 1, 0, -1, 0, 0, -1, 0, 0, -1, 0, 0],
        [0, 0, 0, 0, 0, 1, 1, 0, 1, 0, 2, 0, 0, 2, 0, 0, 2, 0, 1],
        [0, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 1],
    ],
    "camera": {"origin": [0.5, 1, -2], "look_at": [0.5, 1, 0.5], "up": [0, 1, 0], "fov_deg": 45,
               "width": 8, "height": 8},
}


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_quad_file_loads(tmp_path):
    sc = load_scene(write(tmp_path, QUAD_FILE))
    assert sc.num_triangles == 4 and len(sc.materials) == 2
    assert sc.emitter_mask().tolist() == [True, True, False, False]
    # (0, 2, 0) normals were not unit length in the file
    np.testing.assert_allclose(np.linalg.norm(sc.normals, axis=-1), 1.0)


def test_dangling_material_names_triangle(tmp_path):
    doc = json.loads(json.dumps(QUAD_FILE))
    doc["triangles"][2][18] = 5
    with pytest.raises(SceneError, match="triangle 2"):
        load_scene(write(tmp_path, doc))


def test_degenerate_triangle_names_index(tmp_path):
    doc = json.loads(json.dumps(QUAD_FILE))
    doc["triangles"][3][3:6] = doc["triangles"][3][0:3]
    with pytest.raises(SceneError, match="triangle 3"):
        load_scene(write(tmp_path, doc))


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("camera"),
    lambda d: d.update(version=99),
    lambda d: d.update(format="other"),
    lambda d: d["triangles"][0].pop(),
    lambda d: d["materials"][1].update(kind="plastic"),
    lambda d: d["materials"][1].update(albedo=[1.0, 0.5, 0.5]),
])
def test_malformed_files_rejected(tmp_path, mutate):
    doc = json.loads(json.dumps(QUAD_FILE))
    mutate(doc)
    with pytest.raises(SceneError):
        load_scene(write(tmp_path, doc))


def test_bad_json_is_scene_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SceneError):
        load_scene(p)


def test_cornell_box_fixture():
    sc = cornell_box()
    assert sc.num_triangles == 32
    assert len({i for i, m in enumerate(sc.materials) if m.is_emissive}) == 1
    assert sc.emitter_mask().sum() == 2


def test_generator_is_deterministic():
    a, b = generate_mini_scene(MiniSceneConfig(seed=7)), generate_mini_scene(MiniSceneConfig(seed=7))
    assert dumps_scene(a) == dumps_scene(b)
    assert dumps_scene(a) != dumps_scene(generate_mini_scene(MiniSceneConfig(seed=8)))


def test_empty_room():
    sc = generate_mini_scene(MiniSceneConfig(seed=1, clutter=(0, 0), lights=(1, 1)))
    assert sc.num_triangles == 12 + 2
    assert sc.emitter_mask().sum() == 2


def test_fifty_generated_scenes_valid_with_clearance():
    for seed in range(50):
        cfg = MiniSceneConfig(seed=seed)
        sc = generate_mini_scene(cfg).validate()
        v = sc.vertices.reshape(-1, 3)
        X, Y, Z = v.max(0)
        lights = sc.vertices[sc.emitter_mask()].reshape(-1, 3)
        assert len(lights) >= 6
        c = cfg.light_clearance - 1e-9
        assert lights[:, 0].min() >= c and lights[:, 0].max() <= X - c
        assert lights[:, 2].min() >= c and lights[:, 2].max() <= Z - c
        assert np.all(lights[:, 1] < Y) and np.all(lights[:, 1] > Y - 0.01)
        # emitters face down, into the room
        np.testing.assert_allclose(sc.face_normals()[sc.emitter_mask()], [[0, -1, 0]] * int(sc.emitter_mask().sum()))
        # clutter stays inside the room
        boxes = sc.vertices[~sc.emitter_mask()][12:].reshape(-1, 3)
        assert boxes[:, 0].min() > 0 and boxes[:, 0].max() < X and boxes[:, 2].min() > 0 and boxes[:, 2].max() < Z


def test_unsatisfiable_placement_errors():
    with pytest.raises(SceneError, match="could not place"):
        generate_mini_scene(MiniSceneConfig(seed=0, clutter=(40, 40), box_footprint=(1.5, 2.0), max_retries=20))


def test_empty_range_rejected():
    with pytest.raises(SceneError, match="empty range"):
        generate_mini_scene(MiniSceneConfig(room_width=(5.0, 3.0)))


@pytest.mark.parametrize("make", [lambda: generate_mini_scene(MiniSceneConfig(seed=3, glossy_fraction=0.5)),
                                  cornell_box, two_room_scene])
def test_save_load_round_trip(tmp_path, make):
    sc = make()
    save_scene(sc, tmp_path / "a.json")
    back = load_scene(tmp_path / "a.json")
    for name in ("vertices", "normals", "material_ids"):
        assert getattr(back, name).tobytes() == getattr(sc, name).tobytes()
    assert back.materials == sc.materials and back.camera == sc.camera
    assert dumps_scene(back) == dumps_scene(sc)


def test_center_ray_is_view_direction():
    cam = Camera((1.0, 2.0, -3.0), (0.5, 1.0, 4.0), (0, 1, 0), 50.0, 64, 48)
    d = cam.rays(32.0, 24.0)
    fwd = np.subtract(cam.look_at, cam.origin)
    np.testing.assert_allclose(d, fwd / np.linalg.norm(fwd), atol=1e-12)


def test_builder_flips_normals_toward_facing():
    b = SceneBuilder()
    m = b.material(Material())
    b.quad((0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 0, 0), m, (0, 1, 0))
    sc = b.build()
    np.testing.assert_allclose(sc.face_normals(), [[0, 1, 0], [0, 1, 0]])
    assert scene_to_dict(sc)["version"] == 1
