from lte.tracer.accel import EPS_RAY, Accel, Hit, build_bvh, intersect, intersect_linear
from lte.tracer.brdf import eval_brdf, pdf_brdf, sample_brdf
from lte.tracer.integrators import (
    GRID_RES,
    bake_irradiance,
    bake_radiance_grid,
    bin_solid_angle,
    direct_irradiance,
    grid_bin_centers,
    grid_irradiance,
    primary_hits,
    trace_direct,
    trace_radiance,
)
from lte.tracer.sampling import sample_cosine_hemisphere, stream_keys, tangent_frame

__all__ = [
    "EPS_RAY", "GRID_RES", "Accel", "Hit", "bake_irradiance", "bake_radiance_grid", "bin_solid_angle",
    "build_bvh", "direct_irradiance", "eval_brdf", "grid_bin_centers", "grid_irradiance", "intersect",
    "intersect_linear", "pdf_brdf", "primary_hits", "sample_brdf", "sample_cosine_hemisphere",
    "stream_keys", "tangent_frame", "trace_direct", "trace_radiance",
]
