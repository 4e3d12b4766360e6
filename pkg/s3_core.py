"""
S3 core - shared domain types, raster / point / key=value I/O and the pinhole camera.

Every type here is immutable after construction: arrays are copied on the way in
and flagged read-only, so all operations downstream are pure functions.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ValidationError

logger = logging.getLogger(__name__)

# ========================================
# 1. Constants
# ========================================

DEPTH_PNG_SCALE = 256.0
PNG16_MAX = 65535
PFM_INVALID = np.inf

POINTS_HEADER = re.compile(r"^#\s*rows=(\d+)\s+cols=(\d+)\s+repr=(depth|disparity)\s*$")


class Representation(str, Enum):
    """Unit tag carried by every field and sparse map."""
    DEPTH = "depth"
    DISPARITY = "disparity"
    UNITLESS = "unitless"


class RasterFormat(str, Enum):
    PFM = "pfm"
    PNG16 = "png16"
    PNG8 = "png8"


# ========================================
# 2. Exceptions
# ========================================

class S3Exception(Exception):
    """Root of every error raised by the toolbox."""
    pass


class DomainError(S3Exception):
    """Invalid numeric input or violated type invariant."""
    pass


class RepresentationError(S3Exception):
    """Operands carry incompatible representation tags."""
    pass


class ConfigError(S3Exception):
    """Unknown keys, invalid values or missing config files."""
    pass


class RasterFormatError(S3Exception):
    """Raster / point file problem, located by byte offset."""

    def __init__(self, reason: str, offset: int = 0, detail: str = ""):
        self.reason = reason
        self.offset = offset
        message = f"{reason} at byte {offset}"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class NumericalError(S3Exception):
    """Divergence, singular systems and exhausted iteration caps."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class SingularSystemError(NumericalError):
    pass


class EmptySupportError(NumericalError):
    pass


# ========================================
# 3. Domain types
# ========================================

def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class IntensityImage:
    """Color or gray image with values in [0, 1], stored as (H, W, C)."""
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise DomainError(f"image must be HxW, HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("image values must be finite and within [0, 1]")
        object.__setattr__(self, "values", _frozen(arr, np.float64))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True, eq=False)
class DenseField:
    """Dense H x W scalar field with a validity mask.

    Invalid pixels hold 0.0 in ``values`` but that number carries no meaning;
    ``valid`` is the only source of truth about signal presence.
    """
    values: np.ndarray
    valid: np.ndarray
    representation: Representation

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        mask = np.array(self.valid, dtype=bool)
        if vals.ndim != 2 or vals.shape != mask.shape:
            raise DomainError(f"field values {vals.shape} and mask {mask.shape} must be matching 2-D arrays")
        if vals.shape[0] < 1 or vals.shape[1] < 1:
            raise DomainError("field must be at least 1x1")
        rep = Representation(self.representation)
        if not np.all(np.isfinite(vals[mask])):
            raise DomainError("valid field entries must be finite")
        if rep is Representation.UNITLESS and mask.any():
            inner = vals[mask]
            if inner.min() < 0.0 or inner.max() > 1.0:
                raise DomainError("confidence field values must lie in [0, 1]")
        vals = np.where(mask, vals, 0.0)
        object.__setattr__(self, "values", _frozen(vals, np.float64))
        object.__setattr__(self, "valid", _frozen(mask, bool))
        object.__setattr__(self, "representation", rep)

    @classmethod
    def full(cls, height: int, width: int, value: float, representation: Representation) -> "DenseField":
        return cls(np.full((height, width), value, dtype=np.float64), np.ones((height, width), bool), representation)

    @classmethod
    def empty(cls, height: int, width: int, representation: Representation) -> "DenseField":
        return cls(np.zeros((height, width)), np.zeros((height, width), bool), representation)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray, valid: Optional[np.ndarray] = None,
                    representation: Optional[Representation] = None) -> "DenseField":
        return DenseField(values, self.valid if valid is None else valid,
                          self.representation if representation is None else representation)


@dataclass(frozen=True, eq=False)
class SparseSignalMap:
    """Sparse observations as point arrays; position k in the arrays is the source index."""
    height: int
    width: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    representation: Representation

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not (len(rows) == len(cols) == len(vals)):
            raise DomainError("rows, cols and values must have equal length")
        if self.height < 1 or self.width < 1:
            raise DomainError("sparse map dims must be >= 1")
        rep = Representation(self.representation)
        if rep is Representation.UNITLESS:
            raise DomainError("sparse maps carry depth or disparity, not confidence")
        if len(rows):
            if rows.min() < 0 or rows.max() >= self.height or cols.min() < 0 or cols.max() >= self.width:
                raise DomainError("sparse point outside image bounds")
            linear = rows * self.width + cols
            if len(np.unique(linear)) != len(linear):
                raise DomainError("duplicate sparse point at one pixel")
            if not np.all(np.isfinite(vals)) or vals.min() <= 0.0:
                raise DomainError("sparse values must be finite and > 0")
        object.__setattr__(self, "rows", _frozen(rows, np.int64))
        object.__setattr__(self, "cols", _frozen(cols, np.int64))
        object.__setattr__(self, "values", _frozen(vals, np.float64))
        object.__setattr__(self, "representation", rep)

    @classmethod
    def from_points(cls, height: int, width: int, points: Iterable[Tuple[int, int, float]],
                    representation: Representation) -> "SparseSignalMap":
        pts = list(points)
        if not pts:
            return cls(height, width, [], [], [], representation)
        rows, cols, vals = zip(*pts)
        return cls(height, width, rows, cols, vals, representation)

    @classmethod
    def from_dense(cls, dense: DenseField) -> "SparseSignalMap":
        rows, cols = np.nonzero(dense.valid)
        return cls(dense.height, dense.width, rows, cols, dense.values[rows, cols], dense.representation)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def points(self) -> List[Tuple[int, int, float]]:
        return [(int(i), int(j), float(v)) for i, j, v in zip(self.rows, self.cols, self.values)]

    def to_dense(self) -> DenseField:
        vals = np.zeros((self.height, self.width))
        mask = np.zeros((self.height, self.width), bool)
        vals[self.rows, self.cols] = self.values
        mask[self.rows, self.cols] = True
        return DenseField(vals, mask, self.representation)

    def subset(self, indices: Sequence[int]) -> "SparseSignalMap":
        idx = np.asarray(indices, dtype=np.int64)
        return SparseSignalMap(self.height, self.width, self.rows[idx], self.cols[idx],
                               self.values[idx], self.representation)

    def values_at(self, dense: DenseField) -> np.ndarray:
        """Sample ``dense`` at the source pixels; NaN where ``dense`` is invalid."""
        if dense.dims != self.dims:
            raise DomainError(f"field dims {dense.dims} differ from sparse dims {self.dims}")
        picked = dense.values[self.rows, self.cols]
        return np.where(dense.valid[self.rows, self.cols], picked, np.nan)

    def with_values(self, values: np.ndarray, representation: Representation) -> "SparseSignalMap":
        return SparseSignalMap(self.height, self.width, self.rows, self.cols, values, representation)


@dataclass(frozen=True, eq=False)
class ConfidencePatch:
    """One source's confidence patch, clipped to the image.

    ``top``/``left`` locate ``values`` in the image; the center cell is 1 exactly.
    """
    index: int
    center: Tuple[int, int]
    half_size: int
    top: int
    left: int
    values: np.ndarray
    source_value: float

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DomainError("patch values must be 2-D")
        ci, cj = self.center[0] - self.top, self.center[1] - self.left
        if not (0 <= ci < vals.shape[0] and 0 <= cj < vals.shape[1]):
            raise DomainError("patch center outside its footprint")
        if vals[ci, cj] != 1.0:
            raise DomainError("patch center confidence must be exactly 1")
        if not np.all(np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0:
            raise DomainError("patch confidences must lie in [0, 1]")
        side = 2 * self.half_size + 1
        if vals.shape[0] > side or vals.shape[1] > side:
            raise DomainError("patch larger than 2L+1")
        object.__setattr__(self, "values", _frozen(vals, np.float64))
        object.__setattr__(self, "center", (int(self.center[0]), int(self.center[1])))

    @property
    def bottom(self) -> int:
        return self.top + self.values.shape[0]

    @property
    def right(self) -> int:
        return self.left + self.values.shape[1]


@dataclass(frozen=True, eq=False)
class CostVolume:
    """H x W x D_max x F evidence volume (larger = more likely)."""
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[..., None]
        if arr.ndim != 4:
            raise DomainError(f"cost volume must be 4-D (H, W, D, F), got {arr.shape}")
        if arr.shape[2] < 1 or arr.shape[3] < 1:
            raise DomainError("cost volume needs D_max >= 1 and F >= 1")
        if not np.all(np.isfinite(arr)):
            raise DomainError("cost volume values must be finite")
        object.__setattr__(self, "values", _frozen(arr, np.float64))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def max_disparity(self) -> int:
        return self.values.shape[2]

    @property
    def features(self) -> int:
        return self.values.shape[3]


@dataclass(frozen=True)
class CameraIntrinsics:
    focal: float
    cu: float
    cv: float
    baseline: float

    def __post_init__(self):
        if not (self.focal > 0 and math.isfinite(self.focal)):
            raise DomainError("focal length must be > 0")
        if not (self.baseline > 0 and math.isfinite(self.baseline)):
            raise DomainError("baseline must be > 0")

    def to_dict(self) -> Dict[str, str]:
        return {"focal": repr(self.focal), "cu": repr(self.cu), "cv": repr(self.cv),
                "baseline": repr(self.baseline)}

    @classmethod
    def from_dict(cls, data: Mapping[str, str]) -> "CameraIntrinsics":
        try:
            return cls(float(data["focal"]), float(data["cu"]), float(data["cv"]), float(data["baseline"]))
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad intrinsics record: {e}") from e


@dataclass(frozen=True, eq=False)
class PointCloud3D:
    """Camera-frame points (meters) with their pixel of origin."""
    xyz: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.int64).reshape(-1)
        if not (len(xyz) == len(rows) == len(cols)):
            raise DomainError("point and pixel arrays must align")
        if len(xyz):
            if np.any(xyz[:, 2] <= 0) or not np.all(np.isfinite(xyz)):
                raise DomainError("every point needs finite coordinates and z > 0")
            if rows.min() < 0 or rows.max() >= self.height or cols.min() < 0 or cols.max() >= self.width:
                raise DomainError("pixel back-reference out of bounds")
        object.__setattr__(self, "xyz", _frozen(xyz, np.float64))
        object.__setattr__(self, "rows", _frozen(rows, np.int64))
        object.__setattr__(self, "cols", _frozen(cols, np.int64))

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def z(self) -> np.ndarray:
        return self.xyz[:, 2]


# ========================================
# 4. Key=value text config
# ========================================

def read_key_value(path: Union[str, Path]) -> Dict[str, str]:
    """Read a key=value text file into an ordered dict (comments and blanks skipped)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    data: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            data[key.strip()] = value.strip()
    return data


def write_key_value(path: Union[str, Path], data: Mapping[str, object]) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for key, value in data.items():
                f.write(f"{key}={_format_value(value)}\n")
    except OSError as e:
        raise ConfigError(f"cannot write {path}: {e}") from e


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def read_intrinsics(path: Union[str, Path]) -> CameraIntrinsics:
    return CameraIntrinsics.from_dict(read_key_value(path))


def write_intrinsics(intrinsics: CameraIntrinsics, path: Union[str, Path]) -> None:
    write_key_value(path, intrinsics.to_dict())


ModelT = TypeVar("ModelT", bound=BaseModel)


def load_config(model_cls: Type[ModelT], path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> ModelT:
    """Build a config model from a key=value file plus overrides (overrides win, None skipped)."""
    data: Dict[str, Any] = {}
    if path is not None:
        data.update(read_key_value(path))
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        source = f" ({path})" if path is not None else ""
        raise ConfigError(f"invalid {model_cls.__name__}{source}: {problems}") from e


def dump_config(model: BaseModel) -> Dict[str, Any]:
    """Flatten a config model to key=value-ready primitives."""
    return model.model_dump(mode="json")


# ========================================
# 5. Raster I/O (PFM, 16-bit PNG, 8-bit PNG)
# ========================================

def read_raster(path: Union[str, Path], fmt: Union[RasterFormat, str] = RasterFormat.PFM,
                representation: Optional[Representation] = Representation.DEPTH,
                scale: float = DEPTH_PNG_SCALE) -> Union[IntensityImage, DenseField]:
    """Read a raster file.

    Three-channel PFM, 8-bit PNG and ``representation=None`` yield an
    IntensityImage; everything else yields a DenseField tagged ``representation``.
    """
    fmt = RasterFormat(fmt)
    path = Path(path)
    if fmt is RasterFormat.PFM:
        return _read_pfm(path, representation)
    if fmt is RasterFormat.PNG16:
        if representation in (None, Representation.UNITLESS):
            raise RasterFormatError("representation mismatch", 0, "16-bit rasters hold depth or disparity")
        return _read_png16(path, Representation(representation), scale)
    return _read_png8(path)


def write_raster(obj: Union[IntensityImage, DenseField], path: Union[str, Path],
                 fmt: Union[RasterFormat, str] = RasterFormat.PFM, scale: float = DEPTH_PNG_SCALE) -> None:
    fmt = RasterFormat(fmt)
    path = Path(path)
    if fmt is RasterFormat.PFM:
        payload = _encode_pfm(obj)
        _write_bytes(path, payload)
    elif fmt is RasterFormat.PNG16:
        _write_png16(obj, path, scale)
    else:
        if not isinstance(obj, IntensityImage):
            raise RasterFormatError("representation mismatch", 0, "8-bit PNG holds intensity images only")
        arr = np.round(obj.values * 255.0).astype(np.uint8)
        _save_image(Image.fromarray(arr[:, :, 0] if obj.channels == 1 else arr), path)


def _write_bytes(path: Path, payload: bytes) -> None:
    try:
        path.write_bytes(payload)
    except OSError as e:
        raise RasterFormatError("unwritable path", 0, f"{path}: {e}") from e


def _save_image(img: Image.Image, path: Path) -> None:
    try:
        img.save(path, format="PNG")
    except OSError as e:
        raise RasterFormatError("unwritable path", 0, f"{path}: {e}") from e


def _read_header_line(data: bytes, pos: int) -> Tuple[bytes, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise RasterFormatError("malformed header", pos, "header line not terminated")
    return data[pos:end].strip(), end + 1


def _read_pfm(path: Path, representation: Optional[Representation]) -> Union[IntensityImage, DenseField]:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise RasterFormatError("malformed header", 0, f"cannot read {path}: {e}") from e

    magic, pos = _read_header_line(data, 0)
    if magic not in (b"PF", b"Pf"):
        raise RasterFormatError("malformed header", 0, f"bad magic {magic!r}")
    channels = 3 if magic == b"PF" else 1

    dims_offset = pos
    dims, pos = _read_header_line(data, pos)
    try:
        width, height = (int(t) for t in dims.split())
    except ValueError:
        raise RasterFormatError("malformed header", dims_offset, f"bad dimensions {dims!r}")
    if width < 1 or height < 1:
        raise RasterFormatError("malformed header", dims_offset, "dimensions must be >= 1")

    scale_offset = pos
    scale_text, pos = _read_header_line(data, pos)
    try:
        scale = float(scale_text)
    except ValueError:
        raise RasterFormatError("malformed header", scale_offset, f"bad scale {scale_text!r}")
    if scale == 0.0 or not math.isfinite(scale):
        raise RasterFormatError("malformed header", scale_offset, "scale must be finite and non-zero")

    count = width * height * channels
    if len(data) - pos < 4 * count:
        raise RasterFormatError("truncated payload", len(data),
                                f"expected {4 * count} payload bytes, found {len(data) - pos}")
    dtype = "<f4" if scale < 0 else ">f4"
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)

    as_image = channels == 3 or representation is None
    if as_image:
        bad = ~np.isfinite(raw) | (raw < 0.0) | (raw > 1.0)
    else:
        bad = np.isnan(raw) | (raw == -np.inf) | (raw < 0.0)
        if representation is Representation.UNITLESS:
            bad |= np.isfinite(raw) & (raw > 1.0)
    if bad.any():
        first = int(np.argmax(bad))
        raise RasterFormatError("out-of-range", pos + 4 * first, f"value {raw[first]!r}")

    # PFM rows run bottom-to-top
    grid = np.flipud(raw.reshape(height, width, channels))
    if as_image:
        return IntensityImage(grid)
    plane = grid[:, :, 0]
    valid = np.isfinite(plane)
    return DenseField(np.where(valid, plane, 0.0), valid, Representation(representation))


def _encode_pfm(obj: Union[IntensityImage, DenseField]) -> bytes:
    if isinstance(obj, IntensityImage):
        grid = obj.values
        magic = b"PF" if obj.channels == 3 else b"Pf"
    else:
        grid = np.where(obj.valid, obj.values, PFM_INVALID)[:, :, None]
        magic = b"Pf"
    height, width = grid.shape[:2]
    header = magic + b"\n" + f"{width} {height}\n".encode("ascii") + b"-1.0\n"
    payload = np.flipud(grid).astype("<f4").tobytes()
    return header + payload


def _read_png16(path: Path, representation: Representation, scale: float) -> DenseField:
    arr = _load_png(path)
    if arr.ndim != 2:
        raise RasterFormatError("malformed header", 0, "16-bit depth PNG must be single channel")
    arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() > PNG16_MAX:
        raise RasterFormatError("out-of-range", 0, "16-bit PNG value outside [0, 65535]")
    valid = arr > 0
    return DenseField(arr / scale, valid, representation)


def _read_png8(path: Path) -> IntensityImage:
    arr = _load_png(path)
    if arr.dtype != np.uint8:
        raise RasterFormatError("malformed header", 0, f"expected 8-bit PNG, got {arr.dtype}")
    if arr.ndim == 3:
        arr = arr[:, :, :3]
    return IntensityImage(arr / 255.0)


def _load_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            return np.array(img)
    except FileNotFoundError as e:
        raise RasterFormatError("malformed header", 0, f"missing file {path}") from e
    except UnidentifiedImageError as e:
        raise RasterFormatError("malformed header", 0, str(e)) from e
    except OSError as e:
        size = path.stat().st_size if path.exists() else 0
        raise RasterFormatError("truncated payload", size, str(e)) from e


def _write_png16(obj: Union[IntensityImage, DenseField], path: Path, scale: float) -> None:
    if not isinstance(obj, DenseField) or obj.representation is Representation.UNITLESS:
        raise RasterFormatError("representation mismatch", 0, "16-bit PNG holds depth or disparity fields")
    quantized = np.round(obj.values * scale)
    inside = quantized[obj.valid]
    if inside.size and (inside.min() < 1 or inside.max() > PNG16_MAX):
        raise RasterFormatError("value exceeds format range", 0,
                                f"valid values must map into [1, {PNG16_MAX}] at scale {scale}")
    out = np.where(obj.valid, quantized, 0).astype(np.uint16)
    _save_image(Image.fromarray(out), path)


# ========================================
# 6. Sparse point files
# ========================================

def write_points(sparse: SparseSignalMap, path: Union[str, Path]) -> None:
    lines = [f"# rows={sparse.height} cols={sparse.width} repr={sparse.representation.value}"]
    lines += [f"{i},{j},{v!r}" for i, j, v in sparse.points]
    _write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def read_points(path: Union[str, Path]) -> SparseSignalMap:
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except OSError as e:
        raise RasterFormatError("malformed header", 0, f"cannot read {path}: {e}") from e

    lines = text.splitlines(keepends=True)
    if not lines:
        raise RasterFormatError("malformed header", 0, "empty point file")
    match = POINTS_HEADER.match(lines[0].strip())
    if not match:
        raise RasterFormatError("malformed header", 0, f"bad header {lines[0].strip()!r}")
    height, width, rep = int(match.group(1)), int(match.group(2)), Representation(match.group(3))

    offset = len(lines[0].encode("utf-8"))
    points = []
    for line in lines[1:]:
        record = line.strip()
        if record and not record.startswith("#"):
            try:
                i, j, v = record.split(",")
                points.append((int(i), int(j), float(v)))
            except ValueError:
                raise RasterFormatError("malformed record", offset, repr(record))
        offset += len(line.encode("utf-8"))
    try:
        return SparseSignalMap.from_points(height, width, points, rep)
    except DomainError as e:
        raise RasterFormatError("out-of-range", 0, str(e)) from e


# ========================================
# 7. Camera model
# ========================================

AnySignal = Union[DenseField, SparseSignalMap]


def _triangulate(obj: AnySignal, intrinsics: CameraIntrinsics, source: Representation,
                 target: Representation) -> AnySignal:
    if obj.representation is not source:
        raise RepresentationError(f"expected {source.value} input, got {obj.representation.value}")
    fb = intrinsics.focal * intrinsics.baseline
    if isinstance(obj, SparseSignalMap):
        return obj.with_values(fb / obj.values, target)
    inner = obj.values[obj.valid]
    if inner.size and inner.min() <= 0.0:
        raise DomainError(f"{source.value} must be > 0 on valid pixels")
    out = np.zeros_like(obj.values)
    out[obj.valid] = fb / inner
    return DenseField(out, obj.valid, target)


def disparity_to_depth(obj: AnySignal, intrinsics: CameraIntrinsics) -> AnySignal:
    """depth = f * b / disparity on valid pixels."""
    return _triangulate(obj, intrinsics, Representation.DISPARITY, Representation.DEPTH)


def depth_to_disparity(obj: AnySignal, intrinsics: CameraIntrinsics) -> AnySignal:
    return _triangulate(obj, intrinsics, Representation.DEPTH, Representation.DISPARITY)


def backproject(depth: AnySignal, intrinsics: CameraIntrinsics) -> PointCloud3D:
    """Lift valid depth pixels (row-major order) or sparse points (source order) to 3-D."""
    if depth.representation is not Representation.DEPTH:
        raise RepresentationError("backproject needs a depth representation")
    if isinstance(depth, SparseSignalMap):
        rows, cols, z = depth.rows, depth.cols, depth.values
    else:
        rows, cols = np.nonzero(depth.valid)
        z = depth.values[rows, cols]
    x = (cols - intrinsics.cu) * z / intrinsics.focal
    y = (rows - intrinsics.cv) * z / intrinsics.focal
    return PointCloud3D(np.stack([x, y, z], axis=1), rows, cols, depth.dims[0], depth.dims[1])


def project(cloud: PointCloud3D, intrinsics: CameraIntrinsics,
            dims: Optional[Tuple[int, int]] = None) -> SparseSignalMap:
    """Project points back to pixels; the nearest point wins when two land on one pixel."""
    height, width = dims if dims is not None else (cloud.height, cloud.width)
    if not len(cloud):
        return SparseSignalMap(height, width, [], [], [], Representation.DEPTH)
    x, y, z = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    cols = np.rint(intrinsics.focal * x / z + intrinsics.cu).astype(np.int64)
    rows = np.rint(intrinsics.focal * y / z + intrinsics.cv).astype(np.int64)
    inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    rows, cols, z = rows[inside], cols[inside], z[inside]

    order = np.lexsort((z, rows * width + cols))
    linear = (rows * width + cols)[order]
    first = np.ones(len(order), bool)
    first[1:] = linear[1:] != linear[:-1]
    keep = np.sort(order[first])
    return SparseSignalMap(height, width, rows[keep], cols[keep], z[keep], Representation.DEPTH)
