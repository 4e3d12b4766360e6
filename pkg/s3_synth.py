"""
S3 synthetic data - piecewise-planar scenes, corrupted predictions, sensor samplers, cost volumes.

Every generator takes an explicit seed; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator
from scipy import ndimage

from s3_core import (
    CameraIntrinsics, CostVolume, DenseField, DomainError, IntensityImage, Representation,
    RepresentationError, SparseSignalMap, backproject,
)

logger = logging.getLogger(__name__)

SKY_COLOR = (0.55, 0.72, 0.95)
PLANE_COLOR = (0.45, 0.40, 0.35)
BOX_PALETTE = (
    (0.90, 0.20, 0.20),
    (0.20, 0.75, 0.25),
    (0.20, 0.30, 0.90),
    (0.95, 0.85, 0.20),
    (0.75, 0.30, 0.85),
    (0.15, 0.85, 0.85),
)
SKY_LABEL = 0
PLANE_LABEL = 1


# ========================================
# 1. Specs
# ========================================

class BoxSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    top: int = Field(ge=0)
    left: int = Field(ge=0)
    height: int = Field(ge=1)
    width: int = Field(ge=1)
    depth: float = Field(gt=0.0, allow_inf_nan=False)


def _parse_boxes(value):
    if isinstance(value, str):
        boxes = []
        for chunk in value.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split(":")
            if len(parts) != 5:
                raise ValueError(f"box {chunk!r} must be top:left:height:width:depth")
            boxes.append(dict(zip(("top", "left", "height", "width", "depth"), parts)))
        return boxes
    return value


class SceneSpec(BaseModel):
    """Slanted ground plane (inverse depth affine in pixels) plus fronto-parallel boxes."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    height: int = Field(default=48, ge=4)
    width: int = Field(default=64, ge=4)
    seed: int = Field(default=0, ge=0)
    focal: float = Field(default=120.0, gt=0.0, allow_inf_nan=False)
    baseline: float = Field(default=0.54, gt=0.0, allow_inf_nan=False)
    plane_inv_depth: float = Field(default=1.0 / 30.0, allow_inf_nan=False)
    plane_row_slope: float = Field(default=0.004, allow_inf_nan=False)
    plane_col_slope: float = Field(default=0.0, allow_inf_nan=False)
    far_depth: float = Field(default=80.0, gt=0.0, allow_inf_nan=False)
    boxes: Tuple[BoxSpec, ...] = (
        BoxSpec(top=18, left=12, height=16, width=14, depth=9.0),
        BoxSpec(top=20, left=40, height=10, width=10, depth=15.0),
    )
    texture_noise: float = Field(default=0.02, ge=0.0, le=0.5)

    @field_validator("boxes", mode="before")
    @classmethod
    def _boxes_from_text(cls, value):
        return _parse_boxes(value)

    @field_serializer("boxes")
    def _boxes_to_text(self, boxes):
        return ";".join(f"{b.top}:{b.left}:{b.height}:{b.width}:{b.depth!r}" for b in boxes)

    @model_validator(mode="after")
    def _check_layout(self):
        for box in self.boxes:
            if box.depth >= self.far_depth:
                raise ValueError(f"box depth {box.depth} must be below far_depth {self.far_depth}")
            if box.top >= self.height or box.left >= self.width:
                raise ValueError(f"box at ({box.top}, {box.left}) lies outside the image")
        return self

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.baseline)


class CorruptionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    bias: float = Field(default=0.0, ge=0.0, allow_inf_nan=False)
    edge_radius: int = Field(default=0, ge=0)
    noise_sigma: float = Field(default=0.0, ge=0.0, allow_inf_nan=False)
    outlier_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    outlier_magnitude: float = Field(default=0.0, ge=0.0, allow_inf_nan=False)
    edge_ratio: float = Field(default=0.3, gt=0.0)
    min_region: float = Field(default=0.1, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)


@dataclass(frozen=True, eq=False)
class Scene:
    image: IntensityImage
    depth: DenseField
    intrinsics: CameraIntrinsics
    labels: np.ndarray


# ========================================
# 2. Scenes
# ========================================

def generate_scene(spec: SceneSpec) -> Scene:
    """Render depth as the nearest surface per pixel and color each surface with its own base color."""
    h, w = spec.height, spec.width
    intr = spec.intrinsics()
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    inv = spec.plane_inv_depth + spec.plane_row_slope * (rows - intr.cv) + spec.plane_col_slope * (cols - intr.cu)
    sky = inv <= 1.0 / spec.far_depth
    depth = np.where(sky, spec.far_depth, 1.0 / np.where(sky, 1.0, inv))
    labels = np.where(sky, SKY_LABEL, PLANE_LABEL)

    for n, box in enumerate(spec.boxes):
        sl = (slice(box.top, min(h, box.top + box.height)), slice(box.left, min(w, box.left + box.width)))
        closer = box.depth < depth[sl]
        depth[sl] = np.where(closer, box.depth, depth[sl])
        labels[sl] = np.where(closer, PLANE_LABEL + 1 + n, labels[sl])

    palette = np.array((SKY_COLOR, PLANE_COLOR) + tuple(BOX_PALETTE[n % len(BOX_PALETTE)]
                                                        for n in range(len(spec.boxes))))
    rng = np.random.default_rng(spec.seed)
    noise = rng.uniform(-spec.texture_noise, spec.texture_noise, size=(h, w, 3))
    image = np.clip(palette[labels] + noise, 0.0, 1.0)
    logger.debug("scene %dx%d with %d boxes, depth range %.2f..%.2f", h, w, len(spec.boxes),
                 depth.min(), depth.max())
    return Scene(IntensityImage(image), DenseField(depth, np.ones((h, w), bool), Representation.DEPTH),
                 intr, labels)


# ========================================
# 3. Corruption
# ========================================

def depth_edges(field: DenseField, ratio: float) -> np.ndarray:
    """Pixels with a 4-neighbour whose value differs by more than ``ratio`` relative."""
    v = field.values
    edge = np.zeros(v.shape, bool)
    scale = np.maximum(np.abs(v), 1e-12)
    jump_v = np.abs(np.diff(v, axis=0)) > ratio * np.minimum(scale[1:], scale[:-1])
    jump_h = np.abs(np.diff(v, axis=1)) > ratio * np.minimum(scale[:, 1:], scale[:, :-1])
    edge[1:] |= jump_v
    edge[:-1] |= jump_v
    edge[:, 1:] |= jump_h
    edge[:, :-1] |= jump_h
    return edge


def corrupt(gt: DenseField, spec: CorruptionSpec) -> DenseField:
    """Fake a network prediction: fattened edges, biased large regions, noise, outliers."""
    rng = np.random.default_rng(spec.seed)
    values = np.where(gt.valid, gt.values, 0.0).copy()
    edge = depth_edges(gt, spec.edge_ratio) & gt.valid

    band = edge
    if spec.edge_radius > 0 and edge.any():
        band = ndimage.binary_dilation(edge, iterations=spec.edge_radius)
        size = 2 * spec.edge_radius + 1
        filled = np.where(gt.valid, gt.values, np.inf)
        nearest = ndimage.minimum_filter(filled, size=size, mode="nearest")
        values = np.where(band & gt.valid & np.isfinite(nearest), nearest, values)

    if spec.bias > 0.0:
        regions, count = ndimage.label(gt.valid & ~edge)
        sizes = np.bincount(regions.ravel(), minlength=count + 1)
        large = np.nonzero(sizes[1:] >= spec.min_region * gt.valid.size)[0] + 1
        biased = np.isin(regions, large) & ~band
        values = np.where(biased, values + spec.bias, values)

    if spec.noise_sigma > 0.0:
        values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)

    if spec.outlier_rate > 0.0 and spec.outlier_magnitude > 0.0:
        flat = np.flatnonzero(gt.valid)
        picked = rng.choice(flat, size=int(round(spec.outlier_rate * len(flat))), replace=False)
        values.flat[picked] += spec.outlier_magnitude

    values = np.maximum(values, 1e-3)
    return DenseField(values, gt.valid, gt.representation)


# ========================================
# 4. Samplers
# ========================================

def _from_pixels(gt: DenseField, flat: np.ndarray) -> SparseSignalMap:
    flat = np.sort(flat)
    rows, cols = np.unravel_index(flat, gt.dims)
    return SparseSignalMap(gt.height, gt.width, rows, cols, gt.values[rows, cols], gt.representation)


def sample_uniform(gt: DenseField, rate: float, seed: int) -> SparseSignalMap:
    """Seeded uniform sample of exactly round(rate * valid) valid pixels."""
    if not (0.0 < rate <= 1.0):
        raise DomainError(f"sampling rate must lie in (0, 1], got {rate}")
    flat = np.flatnonzero(gt.valid)
    count = int(round(rate * len(flat)))
    rng = np.random.default_rng(seed)
    return _from_pixels(gt, rng.choice(flat, size=count, replace=False))


def sample_beams(gt: DenseField, intrinsics: CameraIntrinsics, beam_count: int,
                 elevation_step_deg: float, seed: int) -> SparseSignalMap:
    """Scanning-line sampling: keep points of ``beam_count`` evenly spaced elevation bins."""
    if gt.representation is not Representation.DEPTH:
        raise RepresentationError("beam sampling needs depth")
    if beam_count < 1:
        raise DomainError("beam_count must be >= 1")
    if elevation_step_deg <= 0:
        raise DomainError("elevation step must be > 0")
    cloud = backproject(gt, intrinsics)
    x, y, z = cloud.xyz.T
    elevation = np.degrees(np.arctan2(-y, np.sqrt(x ** 2 + z ** 2)))
    phase = np.random.default_rng(seed).uniform(0.0, elevation_step_deg)
    bins = np.floor((elevation - phase) / elevation_step_deg).astype(np.int64)
    occupied = np.unique(bins)
    if beam_count >= len(occupied):
        chosen = occupied
    else:
        chosen = occupied[np.round(np.linspace(0, len(occupied) - 1, beam_count)).astype(np.int64)]
    keep = np.isin(bins, chosen)
    if not keep.any():
        raise DomainError("empty beams")
    flat = cloud.rows[keep] * gt.width + cloud.cols[keep]
    logger.debug("beam sampling kept %d of %d points in %d bins", int(keep.sum()), len(keep), len(chosen))
    return _from_pixels(gt, flat)


def sample_radar(gt: DenseField, row_band: Tuple[int, int], count: int, seed: int) -> SparseSignalMap:
    """Seeded sample of ``count`` valid pixels from rows [row_band[0], row_band[1])."""
    top, bottom = row_band
    if not (0 <= top < bottom <= gt.height):
        raise DomainError(f"row band {row_band} outside image rows [0, {gt.height})")
    if count < 1:
        raise DomainError("radar count must be >= 1")
    mask = np.zeros(gt.dims, bool)
    mask[top:bottom] = gt.valid[top:bottom]
    flat = np.flatnonzero(mask)
    if len(flat) < count:
        raise DomainError(f"row band holds {len(flat)} valid pixels, fewer than {count}")
    rng = np.random.default_rng(seed)
    return _from_pixels(gt, rng.choice(flat, size=count, replace=False))


# ========================================
# 5. Cost volumes
# ========================================

def build_cost_volume(disparity: DenseField, max_disparity: int, features: int = 1, sharpness: float = 2.0,
                      noise: float = 0.0, seed: int = 0, amplitude: float = 40.0,
                      floor: float = 0.1) -> CostVolume:
    """Evidence volume amplitude * (floor + exp(-(d - D)^2 s^2 / 2)) + noise * N(0, 1).

    Invalid pixels carry the flat floor level.
    """
    if disparity.representation is not Representation.DISPARITY:
        raise RepresentationError("cost volumes are built from disparity")
    if max_disparity < 1 or features < 1:
        raise DomainError("need max_disparity >= 1 and features >= 1")
    if sharpness <= 0:
        raise DomainError("sharpness must be > 0")
    inner = disparity.values[disparity.valid]
    if inner.size and (inner.min() < 0.0 or inner.max() >= max_disparity):
        raise DomainError(f"disparity out of range [0, {max_disparity})")
    d = np.arange(max_disparity, dtype=np.float64)[None, None, :]
    bump = np.exp(-((d - disparity.values[:, :, None]) ** 2) * sharpness ** 2 / 2.0)
    bump = np.where(disparity.valid[:, :, None], bump, 0.0)
    base = amplitude * (floor + bump)
    values = np.repeat(base[..., None], features, axis=3)
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        values = values + noise * rng.standard_normal(values.shape)
    return CostVolume(values)


def disparity_range(intrinsics: CameraIntrinsics, depth: DenseField) -> Tuple[float, float]:
    inner = depth.values[depth.valid]
    fb = intrinsics.focal * intrinsics.baseline
    return float(fb / inner.max()), float(fb / inner.min())


def planes_for(intrinsics: CameraIntrinsics, depth: DenseField, margin: int = 4) -> int:
    """Smallest plane count covering every disparity of ``depth`` plus a margin."""
    return int(math.floor(disparity_range(intrinsics, depth)[1])) + 1 + margin
