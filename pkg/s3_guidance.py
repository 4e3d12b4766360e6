"""
S3 guidance - inject expanded depth and confidence into a depth-estimation pipeline.

Stages: input stacking, output fusion, cost-volume modulation (raw Gaussian hints
or confidence-weighted expanded hints), and normalization-parameter interpolation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import softmax

from s3_core import (
    CostVolume, DenseField, DomainError, IntensityImage, RasterFormatError, Representation,
    RepresentationError, SparseSignalMap,
)

logger = logging.getLogger(__name__)

CV_HEADER_BYTES = 16


class GaussianGuideConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    height: float = Field(default=10.0, gt=0.0, allow_inf_nan=False)
    width: float = Field(default=1.0, gt=0.0, allow_inf_nan=False)
    shift: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)


# ========================================
# 1. Output stage
# ========================================

def _require_dims(a: Tuple[int, int], b: Tuple[int, int], what: str) -> None:
    if tuple(a) != tuple(b):
        raise DomainError(f"{what}: dims {tuple(a)} and {tuple(b)} differ")


def fuse_output(expanded: DenseField, confidence: DenseField, prediction: DenseField) -> DenseField:
    """D_out = G_exp * C + D * (1 - C) where G_exp is valid, D elsewhere.

    Pixels where only G_exp is valid take G_exp.
    """
    _require_dims(expanded.dims, prediction.dims, "fuse_output")
    _require_dims(confidence.dims, prediction.dims, "fuse_output")
    if confidence.representation is not Representation.UNITLESS:
        raise RepresentationError("confidence must be unitless")
    if expanded.representation is not prediction.representation:
        raise RepresentationError(
            f"cannot fuse {expanded.representation.value} into {prediction.representation.value}")
    conf = np.where(confidence.valid, confidence.values, 0.0)
    blended = expanded.values * conf + prediction.values * (1.0 - conf)
    out = np.where(expanded.valid, blended, prediction.values)
    out = np.where(expanded.valid & ~prediction.valid, expanded.values, out)
    return DenseField(out, expanded.valid | prediction.valid, prediction.representation)


def naive_output_guidance(sparse: SparseSignalMap, prediction: DenseField) -> DenseField:
    """Overwrite the prediction with the raw sparse values at their pixels."""
    _require_dims(sparse.dims, prediction.dims, "naive_output_guidance")
    if sparse.representation is not prediction.representation:
        raise RepresentationError("sparse and prediction representations differ")
    values = prediction.values.copy()
    valid = prediction.valid.copy()
    values[sparse.rows, sparse.cols] = sparse.values
    valid[sparse.rows, sparse.cols] = True
    return DenseField(values, valid, prediction.representation)


def input_concat(image: IntensityImage, expanded: DenseField, confidence: DenseField) -> np.ndarray:
    """Channel stack [image channels..., G_exp, C]; invalid G_exp pixels hold 0 in both extra channels."""
    _require_dims(image.dims, expanded.dims, "input_concat")
    _require_dims(image.dims, confidence.dims, "input_concat")
    g = np.where(expanded.valid, expanded.values, 0.0)
    c = np.where(expanded.valid, confidence.values, 0.0)
    return np.concatenate([image.values, g[:, :, None], c[:, :, None]], axis=2)


# ========================================
# 2. Cost-volume stage
# ========================================

def _gaussian_peak(disparities: np.ndarray, hint: np.ndarray, height: float, width: float) -> np.ndarray:
    return height * np.exp(-((disparities - hint) ** 2) / (2.0 * width ** 2))


def _peak_grid(hints: np.ndarray, planes: int, cfg: GaussianGuideConfig) -> np.ndarray:
    d = np.arange(planes, dtype=np.float64)[None, None, :]
    return _gaussian_peak(d, hints[:, :, None], cfg.height, cfg.width)


def _check_hint_range(values: np.ndarray, planes: int) -> None:
    if values.size and values.max() >= planes:
        raise DomainError(f"hint disparity {values.max():g} outside cost volume range [0, {planes})")


def gsm_modulate(cv: CostVolume, sparse: SparseSignalMap, cfg: GaussianGuideConfig) -> CostVolume:
    """Multiply every feature at hint pixels by h * exp(-(d - G)^2 / (2 w^2))."""
    if sparse.representation is not Representation.DISPARITY:
        raise RepresentationError("cost-volume hints must be disparities")
    _require_dims(sparse.dims, (cv.height, cv.width), "gsm_modulate")
    _check_hint_range(sparse.values, cv.max_disparity)
    hints = np.zeros(sparse.dims)
    mask = np.zeros(sparse.dims, bool)
    hints[sparse.rows, sparse.cols] = sparse.values
    mask[sparse.rows, sparse.cols] = True
    peak = _peak_grid(hints, cv.max_disparity, cfg)
    out = np.where(mask[:, :, None, None], cv.values * peak[..., None], cv.values)
    return CostVolume(out)


def s3_modulate(cv: CostVolume, expanded: DenseField, confidence: DenseField,
                cfg: GaussianGuideConfig) -> CostVolume:
    """Multiply features where G_exp is valid by C * h * exp(-(d - G_exp)^2 / (2 w^2)) + s."""
    if expanded.representation is not Representation.DISPARITY:
        raise RepresentationError("cost-volume hints must be disparities")
    if confidence.representation is not Representation.UNITLESS:
        raise RepresentationError("confidence must be unitless")
    _require_dims(expanded.dims, (cv.height, cv.width), "s3_modulate")
    _require_dims(confidence.dims, expanded.dims, "s3_modulate")
    _check_hint_range(expanded.values[expanded.valid], cv.max_disparity)
    mask = expanded.valid
    peak = _peak_grid(expanded.values, cv.max_disparity, cfg)
    multiplier = confidence.values[:, :, None] * peak + cfg.shift
    out = np.where(mask[:, :, None, None], cv.values * multiplier[..., None], cv.values)
    return CostVolume(out)


def regress_disparity(cv: CostVolume) -> DenseField:
    """Soft-argmax over disparity planes of the feature-channel mean."""
    evidence = cv.values.mean(axis=3)
    prob = softmax(evidence, axis=2)
    d = np.arange(cv.max_disparity, dtype=np.float64)
    disparity = (prob * d).sum(axis=2)
    return DenseField(disparity, np.ones(disparity.shape, bool), Representation.DISPARITY)


# ========================================
# 3. Normalization-parameter stage
# ========================================

@dataclass(frozen=True, eq=False)
class NormParams:
    """Per-(disparity, channel) normalization parameters with a hint-conditioned branch.

    gain_cond(x) = gain_phi * (gain_map[0] * x + gain_map[1]) + gain_psi, and the
    same shape for the offset. All per-plane arrays are (D, F).
    """
    gain_uncond: np.ndarray
    offset_uncond: np.ndarray
    gain_phi: np.ndarray
    gain_psi: np.ndarray
    offset_phi: np.ndarray
    offset_psi: np.ndarray
    gain_map: Tuple[float, float] = (1.0, 0.0)
    offset_map: Tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        shape = np.shape(self.gain_uncond)
        if len(shape) != 2:
            raise DomainError("normalization parameters must be (D, F) arrays")
        for name in ("gain_uncond", "offset_uncond", "gain_phi", "gain_psi", "offset_phi", "offset_psi"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise DomainError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("gain_map", "offset_map"):
            pair = tuple(float(v) for v in getattr(self, name))
            if len(pair) != 2 or not np.all(np.isfinite(pair)):
                raise DomainError(f"{name} must be two finite numbers")
            object.__setattr__(self, name, pair)

    @property
    def planes(self) -> int:
        return self.gain_uncond.shape[0]

    @property
    def features(self) -> int:
        return self.gain_uncond.shape[1]

    @classmethod
    def quadratic_peak(cls, features: int, planes: int, kappa: float = 1.0) -> "NormParams":
        """Identity gain; conditional offset kappa * (2 d x - d^2), which peaks at d = x."""
        d = np.arange(planes, dtype=np.float64)[:, None] * np.ones((1, features))
        ones = np.ones((planes, features))
        zeros = np.zeros((planes, features))
        return cls(gain_uncond=ones, offset_uncond=zeros,
                   gain_phi=zeros, gain_psi=ones,
                   offset_phi=2.0 * kappa * d, offset_psi=-kappa * d ** 2)

    def conditional(self, hint: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Conditional (gain, offset) for hint values of any shape S, returned as S + (D, F)."""
        x = np.asarray(hint, dtype=np.float64)[..., None, None]
        g = self.gain_map[0] * x + self.gain_map[1]
        h = self.offset_map[0] * x + self.offset_map[1]
        return self.gain_phi * g + self.gain_psi, self.offset_phi * h + self.offset_psi


def norm_modulate(params: NormParams, expanded: DenseField, confidence: DenseField,
                  pixel: Tuple[int, int], d: int) -> Tuple[np.ndarray, np.ndarray]:
    """(gain, offset) over channels at one pixel and disparity plane."""
    if not (0 <= d < params.planes):
        raise DomainError(f"disparity plane {d} outside [0, {params.planes})")
    i, j = pixel
    if not expanded.valid[i, j]:
        return params.gain_uncond[d].copy(), params.offset_uncond[d].copy()
    c = float(confidence.values[i, j])
    gain_c, offset_c = params.conditional(expanded.values[i, j])
    gain = c * gain_c[d] + (1.0 - c) * params.gain_uncond[d]
    offset = c * offset_c[d] + (1.0 - c) * params.offset_uncond[d]
    return gain, offset


def norm_modulate_volume(params: NormParams, expanded: DenseField,
                         confidence: DenseField) -> Tuple[np.ndarray, np.ndarray]:
    """Gain and offset volumes, each (H, W, D, F)."""
    _require_dims(expanded.dims, confidence.dims, "norm_modulate_volume")
    conf = np.where(expanded.valid, confidence.values, 0.0)[:, :, None, None]
    gain_c, offset_c = params.conditional(expanded.values)
    gain = conf * gain_c + (1.0 - conf) * params.gain_uncond
    offset = conf * offset_c + (1.0 - conf) * params.offset_uncond
    invalid = ~expanded.valid
    gain[invalid] = params.gain_uncond
    offset[invalid] = params.offset_uncond
    return gain, offset


def apply_norm_params(cv: CostVolume, gain: np.ndarray, offset: np.ndarray) -> CostVolume:
    if gain.shape != cv.values.shape or offset.shape != cv.values.shape:
        raise DomainError(f"normalization volumes {gain.shape} do not match cost volume {cv.values.shape}")
    return CostVolume(gain * cv.values + offset)


# ========================================
# 4. Cost-volume files
# ========================================

def write_cost_volume(cv: CostVolume, path: Union[str, Path]) -> None:
    header = np.array(cv.values.shape, dtype="<u4").tobytes()
    try:
        Path(path).write_bytes(header + cv.values.astype("<f4").tobytes())
    except OSError as e:
        raise RasterFormatError("unwritable path", 0, f"{path}: {e}") from e


def read_cost_volume(path: Union[str, Path]) -> CostVolume:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise RasterFormatError("malformed header", 0, f"cannot read {path}: {e}") from e
    if len(data) < CV_HEADER_BYTES:
        raise RasterFormatError("malformed header", 0, "header shorter than 16 bytes")
    shape = tuple(int(v) for v in np.frombuffer(data, dtype="<u4", count=4))
    if min(shape) < 1:
        raise RasterFormatError("malformed header", 0, f"bad shape {shape}")
    count = int(np.prod(shape))
    if len(data) - CV_HEADER_BYTES < 4 * count:
        raise RasterFormatError("truncated payload", len(data), f"expected {4 * count} payload bytes")
    values = np.frombuffer(data, dtype="<f4", count=count, offset=CV_HEADER_BYTES)
    bad = ~np.isfinite(values)
    if bad.any():
        raise RasterFormatError("out-of-range", CV_HEADER_BYTES + 4 * int(np.argmax(bad)), "non-finite value")
    return CostVolume(values.astype(np.float64).reshape(shape))
