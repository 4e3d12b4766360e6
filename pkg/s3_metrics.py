"""
S3 metrics - disparity / depth error statistics and the improved-pixel table.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from rich.table import Table

from s3_core import DenseField, DomainError, Representation, RepresentationError

logger = logging.getLogger(__name__)

ERROR_THRESHOLDS = (1, 2, 3, 4, 5)
DELTA_BASE = 1.25
IMPROVEMENT_THRESHOLDS = (0.0, 0.5, 1.0, 2.0)


@dataclass(frozen=True)
class EvalReport:
    """Avg and >n rates for any representation; RMS, REL and deltas only for depth."""
    representation: str
    pixels: int
    avg: float
    gt1: float
    gt2: float
    gt3: float
    gt4: float
    gt5: float
    rms: Optional[float] = None
    rel: Optional[float] = None
    d1: Optional[float] = None
    d2: Optional[float] = None
    d3: Optional[float] = None

    @property
    def error_rates(self) -> Tuple[float, ...]:
        return self.gt1, self.gt2, self.gt3, self.gt4, self.gt5

    @property
    def deltas(self) -> Tuple[Optional[float], ...]:
        return self.d1, self.d2, self.d3

    @property
    def has_depth_family(self) -> bool:
        return self.rms is not None

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


@dataclass(frozen=True)
class ImprovementReport:
    thresholds: Tuple[float, ...]
    percentages: Tuple[float, ...]
    pixels: int

    def as_row(self) -> Dict[str, float]:
        return {f"improved>{t:g}": p for t, p in zip(self.thresholds, self.percentages)}


def _support(*fields: DenseField) -> np.ndarray:
    dims = fields[0].dims
    rep = fields[0].representation
    for f in fields[1:]:
        if f.dims != dims:
            raise DomainError(f"field dims {f.dims} differ from {dims}")
        if f.representation is not rep:
            raise RepresentationError(
                f"cannot compare {f.representation.value} with {rep.value}")
    mask = np.logical_and.reduce([f.valid for f in fields])
    if not mask.any():
        raise DomainError("zero overlap between evaluated fields")
    return mask


def evaluate(pred: DenseField, gt: DenseField) -> EvalReport:
    mask = _support(pred, gt)
    p = pred.values[mask]
    g = gt.values[mask]
    err = np.abs(p - g)
    rates = {f"gt{n}": 100.0 * float(np.mean(err > n)) for n in ERROR_THRESHOLDS}
    report = dict(representation=gt.representation.value, pixels=int(mask.sum()),
                  avg=float(err.mean()), **rates)
    if gt.representation is Representation.DEPTH:
        if g.min() <= 0.0 or p.min() <= 0.0:
            raise DomainError("relative depth metrics need positive depth on every evaluated pixel")
        ratio = np.maximum(p / g, g / p)
        report.update(
            rms=float(np.sqrt(np.mean(err ** 2))),
            rel=float(np.mean(err / g)),
            **{f"d{i}": 100.0 * float(np.mean(ratio < DELTA_BASE ** i)) for i in (1, 2, 3)},
        )
    return EvalReport(**report)


def improvement(baseline: DenseField, guided: DenseField, gt: DenseField,
                thresholds: Sequence[float] = IMPROVEMENT_THRESHOLDS) -> ImprovementReport:
    """Percentage of pixels whose absolute error shrank by more than each threshold."""
    mask = _support(baseline, guided, gt)
    gain = np.abs(baseline.values - gt.values)[mask] - np.abs(guided.values - gt.values)[mask]
    pct = tuple(100.0 * float(np.mean(gain > t)) for t in thresholds)
    return ImprovementReport(tuple(float(t) for t in thresholds), pct, int(mask.sum()))


# ========================================
# Reporting
# ========================================

def reports_to_frame(reports: Mapping[str, EvalReport]) -> pd.DataFrame:
    rows = [{"name": name, **report.as_row()} for name, report in reports.items()]
    return pd.DataFrame(rows)


def write_reports(reports: Mapping[str, EvalReport], path: Union[str, Path]) -> pd.DataFrame:
    frame = reports_to_frame(reports)
    frame.to_csv(path, index=False, float_format="%.6f")
    return frame


def render_table(frame: pd.DataFrame, title: str = "Evaluation") -> Table:
    table = Table(title=title, show_header=True, header_style="bold magenta")
    for column in frame.columns:
        table.add_column(str(column), justify="left" if column == "name" else "right")
    for _, row in frame.iterrows():
        table.add_row(*[_cell(v) for v in row.tolist()])
    return table


def _cell(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)
