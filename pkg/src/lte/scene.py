"""Scene data model, the JSON scene format, and the procedural room generator.

Scene file layout (UTF-8 JSON)::

    {
      "format": "lte-scene", "version": 1,
      "materials": [{"name": str, "kind": "lambertian" | "conductor_ggx" | "emitter",
                     "albedo": [r, g, b], "roughness": float, "radiance": [r, g, b]}, ...],
      "triangles": [[x0, y0, z0, x1, y1, z1, x2, y2, z2,
                     nx0, ny0, nz0, nx1, ny1, nz1, nx2, ny2, nz2, material_id], ...],
      "camera": {"origin": [..], "look_at": [..], "up": [..], "fov_deg": float,
                 "width": int, "height": int}
    }

Units are meters and watts; radiance is W sr^-1 m^-2. Emitters radiate from
their front face only (the side their normal points to) and reflect with
their ``albedo`` (zero unless set, e.g. for furnace fixtures).
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMAT_TAG = "lte-scene"
FORMAT_VERSION = 1
KINDS = ("lambertian", "conductor_ggx", "emitter")


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    kind: str = "lambertian"
    albedo: tuple = (0.5, 0.5, 0.5)
    roughness: float = 1.0
    radiance: tuple = (0.0, 0.0, 0.0)
    name: str = ""

    def validate(self, where="material"):
        if self.kind not in KINDS:
            raise SceneError(f"{where}: unknown kind {self.kind!r}")
        alb = np.asarray(self.albedo, dtype=float)
        rad = np.asarray(self.radiance, dtype=float)
        if alb.shape != (3,) or rad.shape != (3,):
            raise SceneError(f"{where}: albedo and radiance must be RGB triples")
        if np.any(alb < 0) or np.any(alb > 1):
            raise SceneError(f"{where}: albedo outside [0, 1]")
        if self.kind == "lambertian" and np.any(alb >= 1):
            raise SceneError(f"{where}: lambertian albedo must be < 1 per channel")
        if self.kind == "conductor_ggx" and not (0 < self.roughness <= 1):
            raise SceneError(f"{where}: roughness must lie in (0, 1]")
        if not np.all(np.isfinite(rad)) or np.any(rad < 0):
            raise SceneError(f"{where}: radiance must be finite and non-negative")

    @property
    def is_emissive(self):
        return any(c > 0 for c in self.radiance)


@dataclass(frozen=True)
class Camera:
    origin: tuple = (0.0, 1.5, -3.0)
    look_at: tuple = (0.0, 1.5, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov_deg: float = 45.0
    width: int = 64
    height: int = 64

    def basis(self):
        o = np.asarray(self.origin, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - o
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return o, fwd, right, up

    def rays(self, px, py):
        """Unit directions through continuous pixel coordinates (0,0 = top-left corner)."""
        _, fwd, right, up = self.basis()
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        half_h = np.tan(np.radians(self.fov_deg) * 0.5)
        half_w = half_h * self.width / self.height
        sx = (2.0 * px / self.width - 1.0) * half_w
        sy = (1.0 - 2.0 * py / self.height) * half_h
        d = fwd + sx[..., None] * right + sy[..., None] * up
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def with_resolution(self, width, height):
        return Camera(self.origin, self.look_at, self.up, self.fov_deg, width, height)


@dataclass(frozen=True, eq=False)
class Scene:
    vertices: np.ndarray  # (T, 3, 3)
    normals: np.ndarray  # (T, 3, 3) per-vertex shading normals
    material_ids: np.ndarray  # (T,)
    materials: tuple
    camera: Camera = field(default_factory=Camera)

    def __post_init__(self):
        for name in ("vertices", "normals", "material_ids"):
            arr = np.array(getattr(self, name), dtype=np.int64 if name == "material_ids" else np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def num_triangles(self):
        return len(self.vertices)

    def areas(self):
        v = self.vertices
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def face_normals(self):
        """Mean of the vertex shading normals (flat shading: all three agree)."""
        n = self.normals.mean(axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def material_table(self):
        kind = np.array([KINDS.index(m.kind) for m in self.materials], dtype=np.int32)
        albedo = np.array([m.albedo for m in self.materials], dtype=np.float64).reshape(-1, 3)
        rough = np.array([m.roughness for m in self.materials], dtype=np.float64)
        emit = np.array([m.radiance for m in self.materials], dtype=np.float64).reshape(-1, 3)
        return kind, albedo, rough, emit

    def emitter_mask(self):
        emissive = np.array([m.is_emissive for m in self.materials])
        return emissive[self.material_ids]

    def digest(self):
        return hashlib.sha256(dumps_scene(self).encode()).hexdigest()

    def validate(self):
        validate_scene(self)
        return self


# ---------------------------------------------------------------- validation

def validate_scene(scene, require_emitter=False):
    if len(scene.materials) == 0:
        raise SceneError("scene has no materials")
    for i, m in enumerate(scene.materials):
        m.validate(f"material {i}")
    v, n, ids = scene.vertices, scene.normals, scene.material_ids
    if v.ndim != 3 or v.shape[1:] != (3, 3) or n.shape != v.shape or ids.shape != (len(v),):
        raise SceneError(f"inconsistent triangle arrays: vertices {v.shape}, normals {n.shape}, ids {ids.shape}")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(n))):
        bad = int(np.flatnonzero(~np.isfinite(v).all(axis=(1, 2)) | ~np.isfinite(n).all(axis=(1, 2)))[0])
        raise SceneError(f"triangle {bad}: non-finite coordinates")
    out = np.flatnonzero((ids < 0) | (ids >= len(scene.materials)))
    if len(out):
        raise SceneError(f"triangle {int(out[0])}: material id {int(ids[out[0]])} out of range")
    area = scene.areas()
    small = np.flatnonzero(~(area > 1e-12))
    if len(small):
        raise SceneError(f"triangle {int(small[0])}: degenerate (area {area[small[0]]:.3g})")
    if require_emitter and not scene.emitter_mask().any():
        raise SceneError("lit scene requires at least one emitter")


def _unit_normals(n):
    length = np.linalg.norm(n, axis=-1, keepdims=True)
    if np.any(length == 0):
        tri = int(np.flatnonzero((length == 0).any(axis=(1, 2)))[0])
        raise SceneError(f"triangle {tri}: zero-length normal")
    off = np.abs(length - 1.0) > 1e-12
    # leave already-unit normals untouched so save/load round-trips bit-exactly
    return np.where(off, n / length, n)


# ------------------------------------------------------------------------ IO

def scene_to_dict(scene):
    tris = []
    for v, n, m in zip(scene.vertices, scene.normals, scene.material_ids):
        tris.append([float(x) for x in v.reshape(-1)] + [float(x) for x in n.reshape(-1)] + [int(m)])
    cam = scene.camera
    return {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "materials": [
            {
                "name": m.name,
                "kind": m.kind,
                "albedo": [float(c) for c in m.albedo],
                "roughness": float(m.roughness),
                "radiance": [float(c) for c in m.radiance],
            }
            for m in scene.materials
        ],
        "triangles": tris,
        "camera": {
            "origin": [float(c) for c in cam.origin],
            "look_at": [float(c) for c in cam.look_at],
            "up": [float(c) for c in cam.up],
            "fov_deg": float(cam.fov_deg),
            "width": int(cam.width),
            "height": int(cam.height),
        },
    }


def dumps_scene(scene):
    return json.dumps(scene_to_dict(scene), separators=(",", ":"))


def save_scene(scene, path):
    Path(path).write_text(dumps_scene(scene), encoding="utf-8")


def scene_from_dict(doc):
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise SceneError(f"not a scene document (format tag must be {FORMAT_TAG!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise SceneError(f"unsupported scene version {doc.get('version')!r}")
    for key in ("materials", "triangles", "camera"):
        if key not in doc:
            raise SceneError(f"missing section {key!r}")
    mats = []
    for i, m in enumerate(doc["materials"]):
        try:
            mats.append(Material(
                kind=m["kind"],
                albedo=tuple(float(c) for c in m.get("albedo", (0.0, 0.0, 0.0))),
                roughness=float(m.get("roughness", 1.0)),
                radiance=tuple(float(c) for c in m.get("radiance", (0.0, 0.0, 0.0))),
                name=str(m.get("name", "")),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"material {i}: malformed ({exc})") from None
    rows = doc["triangles"]
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != 19:
            raise SceneError(f"triangle {i}: expected 19 values, got {len(row) if isinstance(row, list) else row!r}")
        if float(row[18]) != int(row[18]):
            raise SceneError(f"triangle {i}: material id must be an integer")
    arr = np.array(rows, dtype=np.float64).reshape(-1, 19)
    c = doc["camera"]
    try:
        cam = Camera(tuple(c["origin"]), tuple(c["look_at"]), tuple(c["up"]), float(c["fov_deg"]),
                     int(c["width"]), int(c["height"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError(f"camera: malformed ({exc})") from None
    ids = arr[:, 18].astype(np.int64)
    normals = arr[:, 9:18].reshape(-1, 3, 3)
    scene = Scene(arr[:, :9].reshape(-1, 3, 3), normals, ids, tuple(mats), cam)
    validate_scene(scene)
    return Scene(scene.vertices, _unit_normals(scene.normals), ids, tuple(mats), cam)


def load_scene(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: malformed JSON ({exc})") from None
    return scene_from_dict(doc)


# ------------------------------------------------------------ construction

class SceneBuilder:
    """Accumulates quads/triangles with flat normals."""

    def __init__(self):
        self.verts, self.norms, self.ids, self.materials = [], [], [], []

    def material(self, mat):
        self.materials.append(mat)
        return len(self.materials) - 1

    def triangle(self, a, b, c, mat_id, facing=None):
        a, b, c = (np.asarray(p, dtype=np.float64) for p in (a, b, c))
        n = np.cross(b - a, c - a)
        n = n / np.linalg.norm(n)
        if facing is not None and np.dot(n, facing) < 0:
            n = -n
        self.verts.append([a, b, c])
        self.norms.append([n, n, n])
        self.ids.append(mat_id)

    def quad(self, a, b, c, d, mat_id, facing=None):
        self.triangle(a, b, c, mat_id, facing)
        self.triangle(a, c, d, mat_id, facing)

    def box(self, lo, hi, mat_id, bottom=False):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        x0, y0, z0 = lo
        x1, y1, z1 = hi
        self.quad((x0, y1, z0), (x1, y1, z0), (x1, y1, z1), (x0, y1, z1), mat_id, (0, 1, 0))
        self.quad((x0, y0, z0), (x0, y1, z0), (x0, y1, z1), (x0, y0, z1), mat_id, (-1, 0, 0))
        self.quad((x1, y0, z0), (x1, y0, z1), (x1, y1, z1), (x1, y1, z0), mat_id, (1, 0, 0))
        self.quad((x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0), mat_id, (0, 0, -1))
        self.quad((x0, y0, z1), (x0, y1, z1), (x1, y1, z1), (x1, y0, z1), mat_id, (0, 0, 1))
        if bottom:
            self.quad((x0, y0, z0), (x0, y0, z1), (x1, y0, z1), (x1, y0, z0), mat_id, (0, -1, 0))

    def room(self, size, mats):
        """Inward-facing closed room [0, X] x [0, Y] x [0, Z]; mats = floor, ceiling, walls."""
        X, Y, Z = size
        floor, ceil, wall = mats
        self.quad((0, 0, 0), (X, 0, 0), (X, 0, Z), (0, 0, Z), floor, (0, 1, 0))
        self.quad((0, Y, 0), (0, Y, Z), (X, Y, Z), (X, Y, 0), ceil, (0, -1, 0))
        self.quad((0, 0, 0), (0, 0, Z), (0, Y, Z), (0, Y, 0), wall, (1, 0, 0))
        self.quad((X, 0, 0), (X, Y, 0), (X, Y, Z), (X, 0, Z), wall, (-1, 0, 0))
        self.quad((0, 0, 0), (0, Y, 0), (X, Y, 0), (X, 0, 0), wall, (0, 0, 1))
        self.quad((0, 0, Z), (X, 0, Z), (X, Y, Z), (0, Y, Z), wall, (0, 0, -1))

    def ceiling_light(self, x0, x1, z0, z1, y, mat_id):
        self.quad((x0, y, z0), (x1, y, z0), (x1, y, z1), (x0, y, z1), mat_id, (0, -1, 0))

    def build(self, camera=None):
        scene = Scene(np.array(self.verts).reshape(-1, 3, 3), np.array(self.norms).reshape(-1, 3, 3),
                      np.array(self.ids, dtype=np.int64), tuple(self.materials), camera or Camera())
        validate_scene(scene)
        return scene


# ------------------------------------------------------------ mini scenes

DEFAULT_PALETTE = (
    (0.80, 0.78, 0.74), (0.70, 0.70, 0.70), (0.62, 0.52, 0.40), (0.35, 0.45, 0.60),
    (0.60, 0.25, 0.20), (0.25, 0.50, 0.30), (0.85, 0.80, 0.55), (0.30, 0.30, 0.32),
)


@dataclass(frozen=True)
class MiniSceneConfig:
    seed: int = 0
    room_width: tuple = (3.0, 6.0)  # x extent range, m
    room_height: tuple = (2.4, 3.2)  # y extent range, m
    room_depth: tuple = (3.0, 6.0)  # z extent range, m
    clutter: tuple = (2, 6)  # box count range (inclusive)
    box_footprint: tuple = (0.3, 1.2)
    box_height: tuple = (0.3, 1.6)
    palette: tuple = DEFAULT_PALETTE
    lights: tuple = (1, 2)
    light_size: tuple = (0.4, 1.0)
    light_radiance: tuple = (8.0, 20.0)
    light_clearance: float = 0.2  # m, from walls and between lights
    wall_margin: float = 0.05  # m, clutter to wall
    glossy_fraction: float = 0.0  # chance a box is a GGX conductor
    glossy_roughness: float = 0.1
    max_retries: int = 200
    image_size: tuple = (64, 64)

    def validate(self):
        for name in ("room_width", "room_height", "room_depth", "clutter", "box_footprint",
                     "box_height", "lights", "light_size", "light_radiance"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise SceneError(f"config.{name}: empty range {lo}..{hi}")
        if self.light_size[0] <= 0 or self.lights[0] < 1:
            raise SceneError("config: lights need positive area and count >= 1")
        if not self.palette:
            raise SceneError("config: empty albedo palette")


def generate_mini_scene(config: MiniSceneConfig) -> Scene:
    """Closed box room with floor clutter and rectangular ceiling lights; deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    X = rng.uniform(*config.room_width)
    Y = rng.uniform(*config.room_height)
    Z = rng.uniform(*config.room_depth)
    pal = np.asarray(config.palette)

    b = SceneBuilder()

    def albedo():
        return tuple(float(c) for c in pal[rng.integers(len(pal))])

    floor = b.material(Material("lambertian", albedo(), name="floor"))
    ceil = b.material(Material("lambertian", albedo(), name="ceiling"))
    wall = b.material(Material("lambertian", albedo(), name="walls"))
    b.room((X, Y, Z), (floor, ceil, wall))

    n_lights = int(rng.integers(config.lights[0], config.lights[1] + 1))
    c = config.light_clearance
    placed = []
    for li in range(n_lights):
        for _ in range(config.max_retries):
            w, d = rng.uniform(*config.light_size, size=2)
            if w + 2 * c > X or d + 2 * c > Z:
                continue
            x0 = rng.uniform(c, X - c - w)
            z0 = rng.uniform(c, Z - c - d)
            rect = (x0, x0 + w, z0, z0 + d)
            if all(rect[1] + c <= p[0] or p[1] + c <= rect[0] or rect[3] + c <= p[2] or p[3] + c <= rect[2]
                   for p in placed):
                placed.append(rect)
                break
        else:
            raise SceneError(f"could not place light {li} after {config.max_retries} tries")
    radiance = rng.uniform(*config.light_radiance)
    tint = rng.uniform(0.85, 1.0, size=3)
    lamp = b.material(Material("emitter", (0.0, 0.0, 0.0), radiance=tuple(float(radiance * t) for t in tint),
                               name="light"))
    for x0, x1, z0, z1 in placed:
        b.ceiling_light(x0, x1, z0, z1, Y - 1e-3, lamp)

    n_boxes = int(rng.integers(config.clutter[0], config.clutter[1] + 1))
    m = config.wall_margin
    boxes = []
    for bi in range(n_boxes):
        for _ in range(config.max_retries):
            w, d = rng.uniform(*config.box_footprint, size=2)
            h = min(rng.uniform(*config.box_height), Y - 0.5)
            if w + 2 * m > X or d + 2 * m > Z:
                continue
            x0 = rng.uniform(m, X - m - w)
            z0 = rng.uniform(m, Z - m - d)
            lo, hi = (x0, 0.0, z0), (x0 + w, h, z0 + d)
            gap = 0.02
            if all(hi[0] + gap <= q[0][0] or q[1][0] + gap <= lo[0] or hi[2] + gap <= q[0][2] or q[1][2] + gap <= lo[2]
                   for q in boxes):
                boxes.append((lo, hi))
                break
        else:
            raise SceneError(f"could not place clutter box {bi} after {config.max_retries} tries")
    for lo, hi in boxes:
        if rng.uniform() < config.glossy_fraction:
            mid = b.material(Material("conductor_ggx", albedo(), roughness=config.glossy_roughness, name="metal"))
        else:
            mid = b.material(Material("lambertian", albedo(), name="box"))
        b.box(lo, hi, mid)

    cam = Camera(
        origin=(0.15 * X, min(1.6, 0.7 * Y), 0.1 * Z),
        look_at=(0.6 * X, 0.35 * Y, 0.75 * Z),
        up=(0.0, 1.0, 0.0),
        fov_deg=70.0,
        width=config.image_size[0],
        height=config.image_size[1],
    )
    return b.build(cam)


# ----------------------------------------------------------------- fixtures

_CORNELL = {
    "floor": [(552.8, 0, 0), (0, 0, 0), (0, 0, 559.2), (549.6, 0, 559.2)],
    "ceiling": [(556, 548.8, 0), (556, 548.8, 559.2), (0, 548.8, 559.2), (0, 548.8, 0)],
    "back": [(549.6, 0, 559.2), (0, 0, 559.2), (0, 548.8, 559.2), (556, 548.8, 559.2)],
    "green": [(0, 0, 559.2), (0, 0, 0), (0, 548.8, 0), (0, 548.8, 559.2)],
    "red": [(552.8, 0, 0), (549.6, 0, 559.2), (556, 548.8, 559.2), (556, 548.8, 0)],
    "light": [(343, 548.7, 227), (343, 548.7, 332), (213, 548.7, 332), (213, 548.7, 227)],
    "short": [
        [(130, 165, 65), (82, 165, 225), (240, 165, 272), (290, 165, 114)],
        [(290, 0, 114), (290, 165, 114), (240, 165, 272), (240, 0, 272)],
        [(130, 0, 65), (130, 165, 65), (290, 165, 114), (290, 0, 114)],
        [(82, 0, 225), (82, 165, 225), (130, 165, 65), (130, 0, 65)],
        [(240, 0, 272), (240, 165, 272), (82, 165, 225), (82, 0, 225)],
    ],
    "tall": [
        [(423, 330, 247), (265, 330, 296), (314, 330, 456), (472, 330, 406)],
        [(423, 0, 247), (423, 330, 247), (472, 330, 406), (472, 0, 406)],
        [(472, 0, 406), (472, 330, 406), (314, 330, 456), (314, 0, 456)],
        [(314, 0, 456), (314, 330, 456), (265, 330, 296), (265, 0, 296)],
        [(265, 0, 296), (265, 330, 296), (423, 330, 247), (423, 0, 247)],
    ],
}


def cornell_box(width=64, height=64, radiance=(17.0, 12.0, 4.0), glossy_blocks=False, roughness=0.1):
    """The classic Cornell box scaled to meters (1 unit = 1 cm): 32 triangles, one emitter."""
    s = 0.01
    b = SceneBuilder()
    white = b.material(Material("lambertian", (0.73, 0.73, 0.73), name="white"))
    red = b.material(Material("lambertian", (0.63, 0.065, 0.05), name="red"))
    green = b.material(Material("lambertian", (0.14, 0.45, 0.091), name="green"))
    lamp = b.material(Material("emitter", (0.0, 0.0, 0.0), radiance=tuple(radiance), name="light"))
    block = white
    if glossy_blocks:
        block = b.material(Material("conductor_ggx", (0.95, 0.64, 0.54), roughness=roughness, name="copper"))
    center = np.array([2.78, 2.744, 2.796])

    def quad(pts, mat, inward=True, box_center=None):
        p = [np.asarray(q, float) * s for q in pts]
        mid = np.mean(p, axis=0)
        facing = (center - mid) if inward else (mid - box_center)
        b.quad(p[0], p[1], p[2], p[3], mat, facing)

    quad(_CORNELL["light"], lamp, inward=False, box_center=np.array([2.78, 6.0, 2.795]))
    quad(_CORNELL["floor"], white)
    quad(_CORNELL["ceiling"], white)
    quad(_CORNELL["back"], white)
    quad(_CORNELL["green"], green)
    quad(_CORNELL["red"], red)
    for name in ("short", "tall"):
        faces = _CORNELL[name]
        pts = np.array([q for f in faces for q in f], float) * s
        c = pts.mean(axis=0)
        c[1] = pts[:, 1].max() * 0.5
        for f in faces:
            quad(f, block, inward=False, box_center=c)
    cam = Camera((2.78, 2.73, -8.0), (2.78, 2.73, -7.99), (0.0, 1.0, 0.0), 39.3, width, height)
    return b.build(cam)


def two_room_scene(width=64, height=64):
    """Two rooms side by side split by an opaque wall; only the left room is lit."""
    b = SceneBuilder()
    white = b.material(Material("lambertian", (0.7, 0.7, 0.7), name="white"))
    lamp = b.material(Material("emitter", (0.0, 0.0, 0.0), radiance=(15.0, 15.0, 15.0), name="light"))
    X, Y, Z = 8.0, 2.8, 4.0
    b.room((X, Y, Z), (white, white, white))
    # dividing wall at x = 4, both faces
    b.quad((4, 0, 0), (4, Y, 0), (4, Y, Z), (4, 0, Z), white, (-1, 0, 0))
    b.quad((4.001, 0, 0), (4.001, 0, Z), (4.001, Y, Z), (4.001, Y, 0), white, (1, 0, 0))
    b.ceiling_light(1.5, 2.5, 1.5, 2.5, Y - 1e-3, lamp)
    b.box((0.8, 0, 0.8), (1.6, 0.8, 1.6), white)
    b.box((5.8, 0, 2.2), (6.8, 1.0, 3.2), white)
    cam = Camera((0.5, 1.6, 0.3), (3.0, 0.8, 3.0), (0, 1, 0), 70.0, width, height)
    return b.build(cam)


def lightbox_scene(width=16, height=16, radiance=(1.0, 1.0, 1.0), emissive_walls=False):
    """Closed room lit by its whole ceiling, with a diffuse and a glossy block: a low-variance fixture.

    With ``emissive_walls`` the walls glow too, so the floor sees a nearly constant incident field.
    """
    b = SceneBuilder()
    white = b.material(Material("lambertian", (0.6, 0.6, 0.6), name="white"))
    red = b.material(Material("lambertian", (0.7, 0.2, 0.15), name="red"))
    lamp = b.material(Material("emitter", (0.0, 0.0, 0.0), radiance=tuple(radiance), name="ceiling"))
    metal = b.material(Material("conductor_ggx", (0.9, 0.7, 0.5), roughness=0.4, name="metal"))
    X, Y, Z = 2.0, 2.0, 2.0
    b.room((X, Y, Z), (white, lamp, lamp if emissive_walls else red))
    b.box((0.3, 0.0, 0.9), (0.9, 0.7, 1.5), white)
    b.box((1.1, 0.0, 0.6), (1.6, 0.5, 1.1), metal)
    cam = Camera((1.0, 1.0, 0.05), (1.0, 0.5, 1.5), (0, 1, 0), 60.0, width, height)
    return b.build(cam)
