"""Synthetic segment generation, point-cloud artifacts and benchmark file I/O.

A segment starts as a parametric sampling of a primitive in canonical pose
(centered at the origin, rotational axis on z), gets cut by random planes
into a patch, is repositioned by a random rigid motion, and may then receive
one of the artifact types A0..A9:

    A0 clean                        A5 uniform noise + undersampling
    A1 uniform noise                A6 Gaussian noise + undersampling
    A2 Gaussian noise               A7 uniform noise + missing parts
    A3 undersampling                A8 Gaussian noise + missing parts
    A4 missing parts                A9 local deformation (Gaussian bump)

Noise magnitudes follow U(-1/n, 1/n) with n drawn in [3, 20] for the uniform
type and N(-1/n, 4/n^2) with n in [10, 30] for the Gaussian type, applied
per coordinate to a random subset of the points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .geometry import (CONE, CYLINDER, PLANE, SPHERE, TORUS, ConeParams,
                       CylinderParams, PlaneParams, PointCloud,
                       PrimitiveParams, RigidTransform, SphereParams,
                       TorusParams)

PERTURBATION_KINDS = tuple(f"A{i}" for i in range(10))

VECTOR_LENGTHS = {PLANE: 7, CYLINDER: 8, SPHERE: 5, CONE: 8, TORUS: 9}

# parameter ranges for randomly drawn primitives (model units / radians)
RADIUS_RANGE = (0.5, 3.0)
TORUS_SECOND_RANGE = (0.1, 0.9)      # fraction of the first radius
CONE_APERTURE_RANGE = (np.radians(10.0), np.radians(75.0))
EXTENT_RANGE = (1.0, 4.0)
TRANSLATION_RANGE = (-5.0, 5.0)

NOISE_FRACTION_RANGE = (0.3, 1.0)
REMOVAL_FRACTION_RANGE = (0.3, 0.7)
HOLE_RADIUS_RANGE = (0.05, 0.25)     # fraction of the bbox diagonal
BUMP_AMPLITUDE_RANGE = (0.03, 0.10)  # fraction of the bbox diagonal
BUMP_SIGMA_RANGE = (0.05, 0.20)      # fraction of the bbox diagonal

_MIN_SURVIVORS = 10


class GenerationError(RuntimeError):
    """Raised when the cut retry budget is exhausted."""


class DegenerateCloudError(ValueError):
    """Raised when an artifact leaves too few points to be a usable segment."""


class CloudParseError(ValueError):
    """Raised on malformed point-cloud text files."""


class VectorFormatError(ValueError):
    """Raised on ground-truth vectors violating the per-kind layout."""


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def segment_seed(master_seed: int, index: int) -> int:
    """Stable per-segment sub-seed derived from the run seed and position."""
    ss = np.random.SeedSequence((int(master_seed), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# random primitives and segment synthesis
# ---------------------------------------------------------------------------

def random_params(kind: int, rng) -> PrimitiveParams:
    """Random primitive in canonical pose with sizes in the documented ranges."""
    gen = _as_rng(rng)
    z = np.array([0.0, 0.0, 1.0])
    origin = np.zeros(3)
    if kind == PLANE:
        return PlaneParams(z, origin)
    if kind == CYLINDER:
        return CylinderParams(gen.uniform(*RADIUS_RANGE), z, origin)
    if kind == SPHERE:
        return SphereParams(gen.uniform(*RADIUS_RANGE), origin)
    if kind == CONE:
        return ConeParams(gen.uniform(*CONE_APERTURE_RANGE), z, origin)
    if kind == TORUS:
        first = gen.uniform(*RADIUS_RANGE)
        lo, hi = TORUS_SECOND_RANGE
        return TorusParams(first, gen.uniform(lo, hi * first), z, origin)
    raise ValueError(f"unknown primitive kind {kind}")


def cut_half_space(points: np.ndarray, normal: np.ndarray,
                   plane_point: np.ndarray, keep_positive: bool) -> np.ndarray:
    """Mask of points on the requested side of the cutting plane."""
    side = (points - plane_point) @ normal
    return side >= 0.0 if keep_positive else side < 0.0


def _apply_random_cuts(points: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Cut with 1-3 random planes; each cut keeps a side holding >= 20% of
    the current points.  Returns the surviving subset."""
    for _ in range(int(gen.integers(1, 4))):
        n = points.shape[0]
        anchor = points[int(gen.integers(n))]
        normal = gen.normal(size=3)
        normal /= np.linalg.norm(normal)
        pos = cut_half_space(points, normal, anchor, True)
        n_pos = int(pos.sum())
        viable = [s for s, c in ((True, n_pos), (False, n - n_pos)) if c >= 0.2 * n]
        if not viable:
            continue
        keep_positive = viable[int(gen.integers(len(viable)))]
        points = points[pos if keep_positive else ~pos]
    return points


def generate_segment(kind: int, rng_seed, point_count: int,
                     cloud_id: str = "") -> tuple[PointCloud, np.ndarray]:
    """Synthesize one segment and its ground-truth vector.

    The returned cloud is unperturbed: every point lies on the encoded
    surface to 1e-9.  Cut draws are retried (up to 8 times) until at least
    20% of ``point_count`` survives.
    """
    if point_count < 100:
        raise ValueError("point_count must be >= 100")
    gen = _as_rng(rng_seed)
    params = random_params(kind, gen)
    extent = float(gen.uniform(*EXTENT_RANGE)) if kind in (PLANE, CYLINDER, CONE) else None
    base = geo.sample_surface(params, point_count, gen, extent=extent)

    kept = None
    for _ in range(8):
        candidate = _apply_random_cuts(base.points, gen)
        if candidate.shape[0] >= 0.2 * point_count:
            kept = candidate
            break
    if kept is None:
        raise GenerationError(f"cut retry budget exhausted for kind {kind}")

    rotation = geo.random_rotation(gen)
    if kind == CONE and not geo.is_canonical(rotation @ np.array([0.0, 0.0, 1.0])):
        # flip the pre-image nappe so the repositioned cone opens along a
        # sign-canonical direction; keeps the file encoding lossless
        rotation = rotation @ np.diag([1.0, -1.0, -1.0])  # pi turn about x
    transform = RigidTransform(rotation, gen.uniform(*TRANSLATION_RANGE, size=3))
    cloud = PointCloud(transform.apply(kept), cloud_id)
    moved = geo.transform_params(params, transform)
    return cloud, params_to_vector(moved)


# ---------------------------------------------------------------------------
# artifacts A0..A9
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationSpec:
    """One drawn artifact instance; ``draw`` fills the per-cloud parameters."""

    kind: str
    n: int | None = None                      # noise intensity divisor
    noise_fraction: float | None = None       # share of points receiving noise
    removal_fraction: float | None = None     # A3/A5/A6 removal share
    center_index: int | None = None           # A4/A7/A8 hole center (cloud index)
    hole_radius: float | None = None
    bump_center_index: int | None = None
    bump_cov: np.ndarray | None = None        # 2x2 covariance, tangent chart
    bump_amplitude: float | None = None
    surface: PrimitiveParams | None = None    # A9 needs the source surface

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.n is not None:
            lo, hi = (3, 20) if self.kind in ("A1", "A5", "A7") else (10, 30)
            if not lo <= self.n <= hi:
                raise ValueError(f"{self.kind} noise divisor n={self.n} outside [{lo}, {hi}]")
        for frac in (self.noise_fraction, self.removal_fraction):
            if frac is not None and not 0.0 <= frac <= 1.0:
                raise ValueError("fractions must lie in [0, 1]")


def draw_perturbation(kind: str, cloud: PointCloud, rng,
                      surface: PrimitiveParams | None = None) -> PerturbationSpec:
    """Draw the random parameters of artifact ``kind`` for ``cloud``."""
    gen = _as_rng(rng)
    fields: dict = {"kind": kind}
    if kind in ("A1", "A5", "A7"):
        fields["n"] = int(gen.integers(3, 21))
        fields["noise_fraction"] = float(gen.uniform(*NOISE_FRACTION_RANGE))
    elif kind in ("A2", "A6", "A8"):
        fields["n"] = int(gen.integers(10, 31))
        fields["noise_fraction"] = float(gen.uniform(*NOISE_FRACTION_RANGE))
    if kind in ("A3", "A5", "A6"):
        fields["removal_fraction"] = float(gen.uniform(*REMOVAL_FRACTION_RANGE))
    if kind in ("A4", "A7", "A8"):
        fields["center_index"] = int(gen.integers(len(cloud)))
        fields["hole_radius"] = float(gen.uniform(*HOLE_RADIUS_RANGE)) * geo.bbox_diagonal(cloud)
    if kind == "A9":
        if surface is None:
            raise ValueError("A9 requires the source surface")
        diag = geo.bbox_diagonal(cloud)
        angle = gen.uniform(0.0, 2.0 * np.pi)
        rot = np.array([[np.cos(angle), -np.sin(angle)],
                        [np.sin(angle), np.cos(angle)]])
        sigmas = gen.uniform(*BUMP_SIGMA_RANGE, size=2) * diag
        fields.update(
            bump_center_index=int(gen.integers(len(cloud))),
            bump_cov=rot @ np.diag(sigmas**2) @ rot.T,
            bump_amplitude=float(gen.uniform(*BUMP_AMPLITUDE_RANGE)) * diag,
            surface=surface,
        )
    return PerturbationSpec(**fields)


def uniform_offsets(n: int, size, rng) -> np.ndarray:
    """Per-coordinate offsets U(-1/n, 1/n)."""
    return _as_rng(rng).uniform(-1.0 / n, 1.0 / n, size=size)


def gaussian_offsets(n: int, size, rng) -> np.ndarray:
    """Per-coordinate offsets N(-1/n, 4/n^2)."""
    return _as_rng(rng).normal(-1.0 / n, 2.0 / n, size=size)


def _add_noise(points: np.ndarray, spec: PerturbationSpec,
               gen: np.random.Generator, gaussian: bool) -> np.ndarray:
    count = int(round(spec.noise_fraction * points.shape[0]))
    if count == 0:
        return points
    chosen = gen.choice(points.shape[0], size=count, replace=False)
    offsets = (gaussian_offsets if gaussian else uniform_offsets)(spec.n, (count, 3), gen)
    out = points.copy()
    out[chosen] += offsets
    return out


def _undersample(points: np.ndarray, fraction: float,
                 gen: np.random.Generator) -> np.ndarray:
    remove = int(round(fraction * points.shape[0]))
    keep = points.shape[0] - remove
    if keep < _MIN_SURVIVORS:
        raise DegenerateCloudError(f"undersampling would leave {keep} points")
    kept = np.sort(gen.choice(points.shape[0], size=keep, replace=False))
    return points[kept]


def _remove_ball(points: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    center = points[spec.center_index]
    outside = np.linalg.norm(points - center, axis=1) > spec.hole_radius
    if int(outside.sum()) < _MIN_SURVIVORS:
        raise DegenerateCloudError("missing-part ball would leave too few points")
    return points[outside]


def _bump(points: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    center = points[spec.bump_center_index]
    normals = geo.surface_normal_at(spec.surface, points)
    n0 = normals[spec.bump_center_index]
    e1, e2 = geo.orthonormal_frame(n0)
    rel = points - center
    uv = np.stack([rel @ e1, rel @ e2], axis=1)
    quad = np.einsum("ni,ij,nj->n", uv, np.linalg.inv(spec.bump_cov), uv)
    magnitude = spec.bump_amplitude * np.exp(-0.5 * quad)
    return points + magnitude[:, None] * normals


def perturb(cloud: PointCloud, spec: PerturbationSpec, rng) -> PointCloud:
    """Apply a drawn artifact; structural edits precede noise in A5-A8."""
    gen = _as_rng(rng)
    pts = cloud.points
    kind = spec.kind
    if kind == "A0":
        return PointCloud(pts.copy(), cloud.id)
    if kind in ("A3", "A5", "A6"):
        pts = _undersample(pts, spec.removal_fraction, gen)
    if kind in ("A4", "A7", "A8"):
        pts = _remove_ball(pts, spec)
    if kind in ("A1", "A5", "A7"):
        pts = _add_noise(pts, spec, gen, gaussian=False)
    elif kind in ("A2", "A6", "A8"):
        pts = _add_noise(pts, spec, gen, gaussian=True)
    elif kind == "A9":
        pts = _bump(pts, spec)
    return PointCloud(pts, cloud.id)


# ---------------------------------------------------------------------------
# ground-truth vectors
# ---------------------------------------------------------------------------

def params_to_vector(prim: PrimitiveParams) -> np.ndarray:
    """Flat [kind, parameters...] encoding.

    Axis entries are sign-canonicalized, matching the file convention; for
    cones this drops the nappe orientation, so producers should arrange for
    the opening direction to already be canonical when losslessness matters.
    """
    if isinstance(prim, PlaneParams):
        return np.concatenate(([PLANE], geo.canonicalize_axis(prim.normal), prim.point))
    if isinstance(prim, CylinderParams):
        return np.concatenate(([CYLINDER, prim.radius],
                               geo.canonicalize_axis(prim.axis), prim.axis_point))
    if isinstance(prim, SphereParams):
        return np.concatenate(([SPHERE, prim.radius], prim.center))
    if isinstance(prim, ConeParams):
        return np.concatenate(([CONE, prim.half_aperture],
                               geo.canonicalize_axis(prim.axis), prim.vertex))
    if isinstance(prim, TorusParams):
        return np.concatenate(([TORUS, prim.radius_first, prim.radius_second],
                               geo.canonicalize_axis(prim.axis), prim.center))
    raise TypeError(f"unsupported primitive type: {type(prim)!r}")


def validate_vector(vec: np.ndarray) -> int:
    """Check kind-code/length consistency; returns the kind code."""
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1 or vec.size < 1:
        raise VectorFormatError("ground-truth vector must be a flat non-empty sequence")
    code = vec[0]
    if not (np.isfinite(code) and code == int(code) and int(code) in VECTOR_LENGTHS):
        raise VectorFormatError(f"unknown primitive code {code!r}")
    kind = int(code)
    expected = VECTOR_LENGTHS[kind]
    if vec.size != expected:
        raise VectorFormatError(
            f"{geo.KIND_NAMES[kind]} vector must have {expected} entries, got {vec.size}")
    if not np.all(np.isfinite(vec)):
        raise VectorFormatError("ground-truth vector entries must be finite")
    return kind


def vector_to_params(vec: np.ndarray) -> PrimitiveParams:
    """Decode a ground-truth vector; cones open along the stored axis."""
    vec = np.asarray(vec, dtype=float)
    kind = validate_vector(vec)
    if kind == PLANE:
        return PlaneParams(geo.canonicalize_axis(vec[1:4]), vec[4:7])
    if kind == CYLINDER:
        return CylinderParams(vec[1], geo.canonicalize_axis(vec[2:5]), vec[5:8])
    if kind == SPHERE:
        return SphereParams(vec[1], vec[2:5])
    if kind == CONE:
        axis = vec[2:5] / np.linalg.norm(vec[2:5])
        return ConeParams(vec[1], axis, vec[5:8])
    return TorusParams(vec[1], vec[2], geo.canonicalize_axis(vec[3:6]), vec[6:9])


# ---------------------------------------------------------------------------
# text files
# ---------------------------------------------------------------------------

def _format_scalar(x: float) -> str:
    return "%.17g" % x


def write_cloud_txt(cloud: PointCloud, path) -> None:
    """One "x y z" line per point, 17 significant digits."""
    lines = [" ".join(_format_scalar(c) for c in row) for row in cloud.points]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud_txt(path, cloud_id: str | None = None) -> PointCloud:
    text = Path(path).read_text()
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CloudParseError(f"{path}: line {lineno}: expected 3 values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise CloudParseError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise CloudParseError(f"{path}: no points found")
    pts = np.array(rows, dtype=float)
    if not np.all(np.isfinite(pts)):
        raise CloudParseError(f"{path}: non-finite coordinate")
    return PointCloud(pts, Path(path).stem if cloud_id is None else cloud_id)


def write_gt_txt(vec: np.ndarray, path) -> None:
    """One scalar per line, validated against the per-kind layout."""
    validate_vector(vec)
    Path(path).write_text("\n".join(_format_scalar(x) for x in np.asarray(vec, dtype=float)) + "\n")


def read_gt_txt(path) -> np.ndarray:
    text = Path(path).read_text()
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            values.append(float(line.strip()))
        except ValueError as exc:
            raise VectorFormatError(f"{path}: line {lineno}: {exc}") from None
    vec = np.array(values, dtype=float)
    try:
        validate_vector(vec)
    except VectorFormatError as exc:
        raise VectorFormatError(f"{path}: {exc}") from None
    return vec


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------

MANIFEST_HEADER = ("file", "kind", "perturbation", "seed")


@dataclass(frozen=True)
class ManifestRow:
    file: str
    kind: int
    perturbation: str
    seed: int


def write_manifest(rows: list[ManifestRow], path) -> None:
    seen = set()
    for row in rows:
        if row.file in seen:
            raise ValueError(f"duplicate manifest entry {row.file!r}")
        seen.add(row.file)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in rows:
            writer.writerow([row.file, row.kind, row.perturbation, row.seed])


def read_manifest(path) -> list[ManifestRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ValueError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        return [ManifestRow(r[0], int(r[1]), r[2], int(r[3])) for r in reader if r]
