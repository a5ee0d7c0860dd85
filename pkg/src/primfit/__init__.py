"""Point-cloud benchmark toolkit for simple geometric primitives.

Generates synthetic primitive segments with controlled artifacts, fits and
recognizes the five surface families (plane, cylinder, sphere, cone, torus)
with direct methods, and evaluates classification/fitting/recognition
quality.
"""

from .geometry import (
    PLANE, CYLINDER, SPHERE, CONE, TORUS, ALL_KINDS, KIND_NAMES,
    PointCloud, PlaneParams, CylinderParams, SphereParams, ConeParams,
    TorusParams, PrimitiveParams, RigidTransform,
    apply_transform, bbox_diagonal, canonicalize_axis, distance_to_primitive,
    sample_surface, transform_params,
)

__all__ = [
    "PLANE", "CYLINDER", "SPHERE", "CONE", "TORUS", "ALL_KINDS", "KIND_NAMES",
    "PointCloud", "PlaneParams", "CylinderParams", "SphereParams",
    "ConeParams", "TorusParams", "PrimitiveParams", "RigidTransform",
    "apply_transform", "bbox_diagonal", "canonicalize_axis",
    "distance_to_primitive", "sample_surface", "transform_params",
]

__version__ = "0.1.0"
