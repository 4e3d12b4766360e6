"""Shared fixtures and small builders for the S3 test suite."""

from __future__ import annotations

import numpy as np
import pytest

from s3_core import CameraIntrinsics, DenseField, IntensityImage, Representation, SparseSignalMap
from s3_synth import SceneSpec, generate_scene


def gray(values) -> IntensityImage:
    return IntensityImage(np.asarray(values, dtype=np.float64))


def depth_field(values, valid=None) -> DenseField:
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(values.shape, bool) if valid is None else valid
    return DenseField(values, mask, Representation.DEPTH)


def disparity_field(values, valid=None) -> DenseField:
    values = np.asarray(values, dtype=np.float64)
    mask = np.ones(values.shape, bool) if valid is None else valid
    return DenseField(values, mask, Representation.DISPARITY)


def sparse_depth(height, width, points) -> SparseSignalMap:
    return SparseSignalMap.from_points(height, width, points, Representation.DEPTH)


def small_spec(**overrides) -> SceneSpec:
    base = dict(height=24, width=32, boxes="8:6:10:8:9.0;10:20:6:6:14.0", seed=3)
    base.update(overrides)
    return SceneSpec(**base)


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(focal=100.0, cu=15.5, cv=11.5, baseline=0.5)


@pytest.fixture
def two_tone_image() -> IntensityImage:
    """8x8 gray image, left half 0.2 and right half 0.8."""
    img = np.full((8, 8), 0.2)
    img[:, 4:] = 0.8
    return gray(img)


@pytest.fixture
def small_scene():
    return generate_scene(small_spec())
