"""
S3 expansion - grow each sparse point into a confidence patch and merge the patches.

Two patch models are available:
  * ad-hoc: binary flood fill bounded by an intensity threshold and a window
  * kernel: logistic confidence over spatial and intensity distance, trainable

Patches are merged into an expanded map G_exp (confidence-weighted mean) and a
confidence map C (max over patches). Source pixels always keep their own value
with confidence 1.
"""

from __future__ import annotations

import heapq
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage
from scipy.special import expit

from s3_core import (
    ConfidencePatch, DenseField, DomainError, EmptySupportError, IntensityImage, NumericalError,
    Representation, RepresentationError, SparseSignalMap, dump_config, load_config, write_key_value,
)

logger = logging.getLogger(__name__)

PARAM_NAMES = ("alpha", "beta", "bias")
DEFAULT_HALF_SIZE = 16


# ========================================
# 1. Config models
# ========================================

class AdhocConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tau: float = Field(default=0.05, ge=0.0, allow_inf_nan=False)
    half_size: int = Field(default=DEFAULT_HALF_SIZE, ge=0)


class KernelParams(BaseModel):
    """Logistic kernel C = sigmoid(bias - ds^2/alpha^2 - di^2/beta^2)."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(default=4.0, gt=0.0, allow_inf_nan=False)
    beta: float = Field(default=0.1, gt=0.0, allow_inf_nan=False)
    bias: float = Field(default=2.0, allow_inf_nan=False)
    path_accum: bool = False

    def as_vector(self) -> np.ndarray:
        return np.array([math.log(self.alpha), math.log(self.beta), self.bias])

    def from_vector(self, theta: np.ndarray) -> "KernelParams":
        return KernelParams(alpha=float(np.exp(theta[0])), beta=float(np.exp(theta[1])),
                            bias=float(theta[2]), path_accum=self.path_accum)


class TrainingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda1: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)
    lambda2: float = Field(default=0.01, ge=0.0, allow_inf_nan=False)
    lambda_sup: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)
    learning_rate: float = Field(default=0.05, gt=0.0, allow_inf_nan=False)
    iterations: int = Field(default=100, ge=0)
    sample_rate: float = Field(default=1.0, gt=0.0, le=1.0)
    half_size: int = Field(default=8, ge=0)
    seed: int = Field(default=0, ge=0)
    init_alpha: float = Field(default=4.0, gt=0.0, allow_inf_nan=False)
    init_beta: float = Field(default=0.1, gt=0.0, allow_inf_nan=False)
    init_bias: float = Field(default=2.0, allow_inf_nan=False)
    path_accum: bool = False

    def initial_params(self) -> KernelParams:
        return KernelParams(alpha=self.init_alpha, beta=self.init_beta, bias=self.init_bias,
                            path_accum=self.path_accum)


def write_params(params: KernelParams, path: Union[str, Path]) -> None:
    write_key_value(path, dump_config(params))


def read_params(path: Union[str, Path]) -> KernelParams:
    return load_config(KernelParams, path)


# ========================================
# 2. Patch geometry
# ========================================

@dataclass(frozen=True, eq=False)
class PatchGeometry:
    """Distances from one source to every pixel of its clipped window."""
    index: int
    center: Tuple[int, int]
    half_size: int
    top: int
    left: int
    spatial_sq: np.ndarray
    intensity: np.ndarray
    source_value: float

    @property
    def local_center(self) -> Tuple[int, int]:
        return self.center[0] - self.top, self.center[1] - self.left


def _window(center: Tuple[int, int], half_size: int, dims: Tuple[int, int]) -> Tuple[slice, slice]:
    i, j = center
    return (slice(max(0, i - half_size), min(dims[0], i + half_size + 1)),
            slice(max(0, j - half_size), min(dims[1], j + half_size + 1)))


def _minimax_distance(pixels: np.ndarray, start: Tuple[int, int]) -> np.ndarray:
    """Smallest achievable largest step along 4-connected paths from ``start``."""
    h, w = pixels.shape[:2]
    down = np.abs(pixels[1:] - pixels[:-1]).max(axis=2)
    right = np.abs(pixels[:, 1:] - pixels[:, :-1]).max(axis=2)

    best = np.full((h, w), np.inf)
    best[start] = 0.0
    heap = [(0.0, start[0], start[1])]
    while heap:
        d, i, j = heapq.heappop(heap)
        if d > best[i, j]:
            continue
        steps = []
        if i + 1 < h:
            steps.append((i + 1, j, down[i, j]))
        if i > 0:
            steps.append((i - 1, j, down[i - 1, j]))
        if j + 1 < w:
            steps.append((i, j + 1, right[i, j]))
        if j > 0:
            steps.append((i, j - 1, right[i, j - 1]))
        for ni, nj, edge in steps:
            nd = max(d, float(edge))
            if nd < best[ni, nj]:
                best[ni, nj] = nd
                heapq.heappush(heap, (nd, ni, nj))
    return best


def patch_geometry(image: IntensityImage, sparse: SparseSignalMap, half_size: int,
                   path_accumulation: bool = False,
                   indices: Optional[Sequence[int]] = None) -> List[PatchGeometry]:
    _check_dims(image, sparse)
    if half_size < 0:
        raise DomainError("half size must be >= 0")
    chosen = range(len(sparse)) if indices is None else indices
    out = []
    for k in chosen:
        center = (int(sparse.rows[k]), int(sparse.cols[k]))
        rs, cs = _window(center, half_size, image.dims)
        pixels = image.values[rs, cs]
        local = (center[0] - rs.start, center[1] - cs.start)
        rr, cc = np.mgrid[rs, cs]
        spatial_sq = ((rr - center[0]) ** 2 + (cc - center[1]) ** 2).astype(np.float64)
        if path_accumulation:
            intensity = _minimax_distance(pixels, local)
        else:
            intensity = np.abs(pixels - pixels[local]).max(axis=2)
        out.append(PatchGeometry(int(k), center, half_size, rs.start, cs.start, spatial_sq,
                                 intensity, float(sparse.values[k])))
    return out


def _check_dims(image: IntensityImage, sparse: SparseSignalMap) -> None:
    if image.dims != sparse.dims:
        raise DomainError(f"image dims {image.dims} differ from sparse dims {sparse.dims}")


# ========================================
# 3. Patch models
# ========================================

def _flood_patch(image: IntensityImage, sparse: SparseSignalMap, k: int, cfg: AdhocConfig) -> ConfidencePatch:
    center = (int(sparse.rows[k]), int(sparse.cols[k]))
    rs, cs = _window(center, cfg.half_size, image.dims)
    pixels = image.values[rs, cs]
    local = (center[0] - rs.start, center[1] - cs.start)
    allowed = np.abs(pixels - pixels[local]).max(axis=2) <= cfg.tau
    # default structuring element is the 4-neighbour cross
    labels, _ = ndimage.label(allowed)
    grown = (labels == labels[local]).astype(np.float64)
    return ConfidencePatch(k, center, cfg.half_size, rs.start, cs.start, grown, float(sparse.values[k]))


def adhoc_expand(image: IntensityImage, sparse: SparseSignalMap, cfg: AdhocConfig,
                 indices: Optional[Sequence[int]] = None, workers: int = 1) -> List[ConfidencePatch]:
    """Binary patches grown greedily from each source while colors stay within tau of the center."""
    _check_dims(image, sparse)
    chosen = list(range(len(sparse)) if indices is None else indices)
    return _map(lambda k: _flood_patch(image, sparse, k, cfg), chosen, workers)


def _kernel_values(geom: PatchGeometry, params: KernelParams) -> Tuple[np.ndarray, np.ndarray]:
    z = params.bias - geom.spatial_sq / params.alpha ** 2 - geom.intensity ** 2 / params.beta ** 2
    conf = expit(z)
    conf[geom.local_center] = 1.0
    return z, conf


def kernel_value(params: KernelParams, spatial_sq: float, intensity: float = 0.0) -> float:
    """Kernel confidence at one (squared spatial distance, intensity distance) pair."""
    return float(expit(params.bias - spatial_sq / params.alpha ** 2 - intensity ** 2 / params.beta ** 2))


def confidence_from_geometry(geom: PatchGeometry, params: KernelParams) -> ConfidencePatch:
    _, conf = _kernel_values(geom, params)
    return ConfidencePatch(geom.index, geom.center, geom.half_size, geom.top, geom.left, conf, geom.source_value)


def kernel_confidence(image: IntensityImage, sparse: SparseSignalMap, params: KernelParams,
                      half_size: int = DEFAULT_HALF_SIZE, indices: Optional[Sequence[int]] = None,
                      workers: int = 1) -> List[ConfidencePatch]:
    geometries = patch_geometry(image, sparse, half_size, params.path_accum, indices)
    return _map(lambda g: confidence_from_geometry(g, params), geometries, workers)


def _map(fn, items: Sequence, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# ========================================
# 4. Aggregation
# ========================================

@dataclass(frozen=True, eq=False)
class ExpansionJacobian:
    """Derivatives of G_exp and C with respect to (alpha, beta, bias), each (3, H, W)."""
    d_expanded: np.ndarray
    d_confidence: np.ndarray


@dataclass
class _Accumulator:
    dims: Tuple[int, int]
    numerator: np.ndarray = field(init=False)
    denominator: np.ndarray = field(init=False)
    peak: np.ndarray = field(init=False)
    owner: np.ndarray = field(init=False)

    def __post_init__(self):
        self.numerator = np.zeros(self.dims)
        self.denominator = np.zeros(self.dims)
        self.peak = np.zeros(self.dims)
        self.owner = np.full(self.dims, -1, dtype=np.int64)

    def add(self, slot: int, top: int, left: int, conf: np.ndarray, value: float) -> None:
        sl = (slice(top, top + conf.shape[0]), slice(left, left + conf.shape[1]))
        self.numerator[sl] += conf * value
        self.denominator[sl] += conf
        # strict comparison keeps the lowest source index on ties
        better = conf > self.peak[sl]
        self.peak[sl] = np.where(better, conf, self.peak[sl])
        self.owner[sl] = np.where(better, slot, self.owner[sl])

    def finish(self, sparse: SparseSignalMap) -> Tuple[DenseField, DenseField, np.ndarray]:
        valid = self.denominator > 0.0
        expanded = np.zeros(self.dims)
        np.divide(self.numerator, self.denominator, out=expanded, where=valid)
        conf = np.where(valid, self.peak, 0.0)
        source_mask = np.zeros(self.dims, bool)
        source_mask[sparse.rows, sparse.cols] = True
        expanded[sparse.rows, sparse.cols] = sparse.values
        conf[sparse.rows, sparse.cols] = 1.0
        valid[sparse.rows, sparse.cols] = True
        return (DenseField(expanded, valid, sparse.representation),
                DenseField(conf, np.ones(self.dims, bool), Representation.UNITLESS),
                source_mask)


def _validate_patch(patch: ConfidencePatch, sparse: SparseSignalMap) -> None:
    k = patch.index
    if not (0 <= k < len(sparse)):
        raise DomainError(f"patch references source {k} absent from the sparse map")
    if patch.center != (int(sparse.rows[k]), int(sparse.cols[k])):
        raise DomainError(f"patch {k} centered at {patch.center} but source {k} is elsewhere")
    if patch.bottom > sparse.height or patch.right > sparse.width or patch.top < 0 or patch.left < 0:
        raise DomainError(f"patch {k} extends beyond the image")


def aggregate(patches: Iterable[ConfidencePatch], sparse: SparseSignalMap,
              dims: Optional[Tuple[int, int]] = None) -> Tuple[DenseField, DenseField]:
    """Merge patches: confidence-weighted mean for G_exp, max for C.

    Pixels reached by no positive confidence are invalid in G_exp and hold C = 0.
    Reduction runs in ascending source index so the result does not depend on
    the order of ``patches``.
    """
    dims = sparse.dims if dims is None else tuple(dims)
    if dims != sparse.dims:
        raise DomainError(f"aggregate dims {dims} differ from sparse dims {sparse.dims}")
    ordered = sorted(patches, key=lambda p: p.index)
    seen = set()
    acc = _Accumulator(dims)
    for patch in ordered:
        _validate_patch(patch, sparse)
        if patch.index in seen:
            raise DomainError(f"source {patch.index} has more than one patch")
        seen.add(patch.index)
        acc.add(patch.index, patch.top, patch.left, patch.values, float(sparse.values[patch.index]))
    expanded, conf, _ = acc.finish(sparse)
    logger.debug("aggregated %d patches, %d valid pixels", len(ordered), int(expanded.valid.sum()))
    return expanded, conf


def kernel_expand_with_jacobian(geometries: Sequence[PatchGeometry], sparse: SparseSignalMap,
                                params: KernelParams,
                                dims: Optional[Tuple[int, int]] = None
                                ) -> Tuple[DenseField, DenseField, ExpansionJacobian]:
    dims = sparse.dims if dims is None else tuple(dims)
    ordered = sorted(geometries, key=lambda g: g.index)
    acc = _Accumulator(dims)
    evaluated = []
    for slot, geom in enumerate(ordered):
        z, conf = _kernel_values(geom, params)
        sig = conf * (1.0 - conf)
        sig[geom.local_center] = 0.0
        d_conf = np.stack([
            sig * 2.0 * geom.spatial_sq / params.alpha ** 3,
            sig * 2.0 * geom.intensity ** 2 / params.beta ** 3,
            sig,
        ])
        evaluated.append((geom, conf, d_conf))
        acc.add(slot, geom.top, geom.left, conf, geom.source_value)

    expanded, confidence, source_mask = acc.finish(sparse)
    d_num = np.zeros((3,) + dims)
    d_peak = np.zeros((3,) + dims)
    for slot, (geom, conf, d_conf) in enumerate(evaluated):
        sl = (slice(geom.top, geom.top + conf.shape[0]), slice(geom.left, geom.left + conf.shape[1]))
        d_num[:, sl[0], sl[1]] += d_conf * (geom.source_value - expanded.values[sl])
        owned = acc.owner[sl] == slot
        d_peak[:, sl[0], sl[1]] += np.where(owned, d_conf, 0.0)

    covered = acc.denominator > 0.0
    d_expanded = np.zeros_like(d_num)
    np.divide(d_num, acc.denominator, out=d_expanded, where=covered[None])
    d_expanded[:, source_mask] = 0.0
    d_peak[:, source_mask] = 0.0
    return expanded, confidence, ExpansionJacobian(d_expanded, d_peak)


# ========================================
# 5. Composite expansion
# ========================================

def choose_sources(count: int, sample_rate: float, seed: int = 0) -> np.ndarray:
    """Seeded subset of source indices (sorted) keeping round(rate * count), at least one."""
    if not (0.0 < sample_rate <= 1.0):
        raise DomainError(f"sample rate must lie in (0, 1], got {sample_rate}")
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if sample_rate >= 1.0:
        return np.arange(count)
    keep = max(1, int(round(sample_rate * count)))
    rng = np.random.default_rng(seed)
    return np.sort(rng.permutation(count)[:keep])


def _passthrough(sparse: SparseSignalMap, k: int, half_size: int) -> ConfidencePatch:
    i, j = int(sparse.rows[k]), int(sparse.cols[k])
    return ConfidencePatch(k, (i, j), half_size, i, j, np.ones((1, 1)), float(sparse.values[k]))


def expand(image: IntensityImage, sparse: SparseSignalMap, model: Union[AdhocConfig, KernelParams], *,
           half_size: int = DEFAULT_HALF_SIZE, sample_rate: float = 1.0, seed: int = 0,
           workers: int = 1) -> Tuple[DenseField, DenseField]:
    """Expand a seeded subset of the sources and aggregate; the rest pass through as single pixels."""
    _check_dims(image, sparse)
    chosen = choose_sources(len(sparse), sample_rate, seed)
    if isinstance(model, AdhocConfig):
        patches = adhoc_expand(image, sparse, model, chosen, workers)
        half = model.half_size
    elif isinstance(model, KernelParams):
        patches = kernel_confidence(image, sparse, model, half_size, chosen, workers)
        half = half_size
    else:
        raise DomainError(f"unknown expansion model {type(model).__name__}")
    picked = set(int(k) for k in chosen)
    patches += [_passthrough(sparse, k, half) for k in range(len(sparse)) if k not in picked]
    expanded, conf = aggregate(patches, sparse)
    logger.info("expanded %d/%d sources (%s), %.1f%% pixels valid",
                len(chosen), len(sparse), type(model).__name__,
                100.0 * expanded.valid.mean())
    return expanded, conf


# ========================================
# 6. Losses
# ========================================

@dataclass(frozen=True)
class LossEvaluation:
    value: float
    gradient: np.ndarray  # d value / d (alpha, beta, bias)
    support: int


def _check_same(*fields: DenseField) -> None:
    dims = fields[0].dims
    for f in fields[1:]:
        if f.dims != dims:
            raise DomainError(f"field dims {f.dims} differ from {dims}")


def s3_loss(expanded: DenseField, confidence: DenseField, target: DenseField,
            lambda1: float = 1.0, lambda2: float = 0.01,
            jacobian: Optional[ExpansionJacobian] = None,
            held_confidence: Optional[DenseField] = None) -> LossEvaluation:
    """lambda1 * C * |D* - G_exp| + lambda2 * C, L1 mean over valid D* with C > 0.

    C in the first term is a constant under differentiation; only the second
    term's gradient flows through C. ``held_confidence`` replaces C in the first
    term (value and gradient), which evaluates the loss with that confidence
    frozen at another parameter setting.
    """
    _check_same(expanded, confidence, target)
    if confidence.representation is not Representation.UNITLESS:
        raise RepresentationError("confidence must be unitless")
    if expanded.representation is not target.representation:
        raise RepresentationError("expanded and target representations differ")
    conf = confidence.values
    first = conf
    if held_confidence is not None:
        _check_same(held_confidence, confidence)
        first = held_confidence.values
    support = target.valid & (conf > 0.0) & expanded.valid
    count = int(support.sum())
    if count == 0:
        raise EmptySupportError("empty loss support")
    diff = expanded.values - target.values
    term = lambda1 * first * np.abs(diff) + lambda2 * conf
    value = float(term[support].sum() / count)

    gradient = np.zeros(3)
    if jacobian is not None:
        per_pixel = (lambda1 * first * np.sign(diff))[None] * jacobian.d_expanded + lambda2 * jacobian.d_confidence
        gradient = per_pixel[:, support].sum(axis=1) / count
    return LossEvaluation(value, gradient, count)


def supervised_loss(expanded: DenseField, confidence: DenseField, prediction: DenseField, target: DenseField,
                    jacobian: Optional[ExpansionJacobian] = None) -> LossEvaluation:
    """L1 mean of |D* - D_out| with D_out = G_exp * C + D * (1 - C); no detach."""
    _check_same(expanded, confidence, prediction, target)
    support = target.valid & prediction.valid
    count = int(support.sum())
    if count == 0:
        raise EmptySupportError("empty loss support")
    conf = np.where(expanded.valid, confidence.values, 0.0)
    fused = expanded.values * conf + prediction.values * (1.0 - conf)
    fused = np.where(expanded.valid, fused, prediction.values)
    diff = fused - target.values
    value = float(np.abs(diff)[support].sum() / count)

    gradient = np.zeros(3)
    if jacobian is not None:
        spread = np.where(expanded.valid, expanded.values - prediction.values, 0.0)
        d_fused = conf[None] * jacobian.d_expanded + spread[None] * jacobian.d_confidence
        gradient = (np.sign(diff)[None] * d_fused)[:, support].sum(axis=1) / count
    return LossEvaluation(value, gradient, count)


# ========================================
# 7. Training
# ========================================

@dataclass(frozen=True, eq=False)
class TrainingSample:
    image: IntensityImage
    sparse: SparseSignalMap
    target: DenseField
    prediction: Optional[DenseField] = None


@dataclass
class TrainingResult:
    params: KernelParams
    curve: List[float]
    raw_losses: List[float]

    @property
    def initial_loss(self) -> float:
        return self.curve[0]

    @property
    def final_loss(self) -> float:
        return self.curve[-1]

    def curve_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"iter": np.arange(len(self.curve)), "loss": self.curve})


@dataclass
class _Evaluation:
    loss: float
    lagged: float
    gradient: np.ndarray
    confidences: List[DenseField]


def _objective(prepared, params: KernelParams, cfg: TrainingConfig,
               held: Optional[Sequence[DenseField]] = None) -> _Evaluation:
    total, lagged, grad = 0.0, 0.0, np.zeros(3)
    confidences = []
    for slot, (sample, geometries) in enumerate(prepared):
        expanded, conf, jac = kernel_expand_with_jacobian(geometries, sample.sparse, params)
        ev = s3_loss(expanded, conf, sample.target, cfg.lambda1, cfg.lambda2, jac)
        total += ev.value
        grad += ev.gradient
        if held is None:
            lagged += ev.value
        else:
            lagged += s3_loss(expanded, conf, sample.target, cfg.lambda1, cfg.lambda2,
                              held_confidence=held[slot]).value
        if sample.prediction is not None and cfg.lambda_sup > 0.0:
            sup = supervised_loss(expanded, conf, sample.prediction, sample.target, jac)
            total += cfg.lambda_sup * sup.value
            lagged += cfg.lambda_sup * sup.value
            grad += cfg.lambda_sup * sup.gradient
        confidences.append(conf)
    n = len(prepared)
    return _Evaluation(total / n, lagged / n, grad / n, confidences)


def train_kernel(dataset: Sequence[TrainingSample], cfg: TrainingConfig,
                 initial: Optional[KernelParams] = None) -> TrainingResult:
    """Adam on (log alpha, log beta, bias) following the detached gradient.

    Each step descends the loss with the first term's confidence held at the
    step's starting point, so iterates are ranked by that same lagged loss:
    iterate t scores its loss with C taken from iterate t - 1 (iterate 0 scores
    its plain loss). The best-scoring parameters are returned. ``curve[t]`` is
    the best score after t steps and never increases; ``raw_losses[t]`` is the
    plain loss of iterate t.
    """
    if not dataset:
        raise DomainError("training dataset is empty")
    params = cfg.initial_params() if initial is None else initial
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(dataset))
    prepared = []
    for sample, ss in zip(dataset, seeds):
        chosen = choose_sources(len(sample.sparse), cfg.sample_rate, int(ss.generate_state(1)[0]))
        prepared.append((sample, patch_geometry(sample.image, sample.sparse, cfg.half_size,
                                                params.path_accum, chosen)))

    theta = params.as_vector()
    m = np.zeros(3)
    v = np.zeros(3)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    best_theta, best_loss = theta.copy(), math.inf
    curve: List[float] = []
    raw: List[float] = []
    held = None
    for it in range(cfg.iterations + 1):
        try:
            ev = _objective(prepared, params.from_vector(theta), cfg, held)
        except (ValueError, OverflowError) as e:
            raise NumericalError(f"training diverged: {e}", iteration=it) from e
        if not (math.isfinite(ev.loss) and math.isfinite(ev.lagged)) or not np.all(np.isfinite(ev.gradient)):
            raise NumericalError("training diverged: loss became non-finite", iteration=it)
        raw.append(ev.loss)
        if ev.lagged < best_loss:
            best_loss, best_theta = ev.lagged, theta.copy()
        curve.append(best_loss)
        logger.debug("iter %d loss %.6g lagged %.6g best %.6g", it, ev.loss, ev.lagged, best_loss)
        held = ev.confidences
        grad = ev.gradient
        if it == cfg.iterations:
            break
        # chain rule into log-space for the two scales
        scaled = grad * np.array([math.exp(theta[0]), math.exp(theta[1]), 1.0])
        m = beta1 * m + (1 - beta1) * scaled
        v = beta2 * v + (1 - beta2) * scaled ** 2
        m_hat = m / (1 - beta1 ** (it + 1))
        v_hat = v / (1 - beta2 ** (it + 1))
        theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)

    trained = params.from_vector(best_theta)
    logger.info("training finished: loss %.6g -> %.6g (alpha=%.4g beta=%.4g bias=%.4g)",
                curve[0], curve[-1], trained.alpha, trained.beta, trained.bias)
    return TrainingResult(trained, curve, raw)
