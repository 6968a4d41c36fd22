"""Small analytic scenes shared by the tracer tests and the acceptance suite."""
import numpy as np

from lte.scene import Material, SceneBuilder


def emissive_plane(half=1e4, height=1.0, radiance=1.0):
    """A huge downward-facing emitter at y = height: a proxy for an unbounded plane."""
    b = SceneBuilder()
    lamp = b.material(Material("emitter", (0, 0, 0), radiance=(radiance,) * 3))
    b.quad((-half, height, -half), (-half, height, half), (half, height, half), (half, height, -half), lamp,
           (0, -1, 0))
    return b.build()


def furnace(albedo=0.5, radiance=1.0, size=2.0):
    """Closed box whose every inner face emits ``radiance`` and reflects with ``albedo``."""
    b = SceneBuilder()
    m = b.material(Material("emitter", (albedo,) * 3, radiance=(radiance,) * 3))
    b.room((size, size, size), (m, m, m))
    return b.build()


def black_box(size=2.0):
    b = SceneBuilder()
    m = b.material(Material("lambertian", (0.5, 0.5, 0.5)))
    b.room((size, size, size), (m, m, m))
    return b.build()


def icosahedron(radius=1.0):
    t = (1 + 5 ** 0.5) / 2
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t], [0, -1, -t],
                  [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    v *= radius / np.linalg.norm(v[0])
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
             (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5),
             (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    b = SceneBuilder()
    m = b.material(Material())
    for f in faces:
        c = v[list(f)].mean(0)
        b.triangle(*v[list(f)], m, -c)
    return b.build()


def small_light(side=0.1, distance=5.0, radiance=10.0):
    """A small square emitter centered at (0, distance, 0), facing down."""
    b = SceneBuilder()
    lamp = b.material(Material("emitter", (0, 0, 0), radiance=(radiance,) * 3))
    h = side / 2
    b.quad((-h, distance, -h), (-h, distance, h), (h, distance, h), (h, distance, -h), lamp, (0, -1, 0))
    return b.build()
