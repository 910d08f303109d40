"""Evaluation: per-class IoU, IoU loss, dot-matched P/R/F1, per-patch counts, R^2."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import FormatError
from .instancer import Component
from .raster import CLASS_NAMES, N_CLASSES, DotSet, SemanticMask


# --- IoU ---------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: tuple[int, int, int]
    fp: tuple[int, int, int]
    fn: tuple[int, int, int]


def confusion(pred: SemanticMask, ref: SemanticMask) -> ConfusionCounts:
    if pred.shape != ref.shape:
        raise ValueError(f"prediction {pred.width}x{pred.height} and reference {ref.width}x{ref.height} differ")
    joint = np.bincount((ref.data.astype(np.int64) * N_CLASSES + pred.data).ravel(),
                        minlength=N_CLASSES * N_CLASSES).reshape(N_CLASSES, N_CLASSES)
    tp = np.diag(joint)
    fp = joint.sum(axis=0) - tp
    fn = joint.sum(axis=1) - tp
    return ConfusionCounts(tuple(map(int, tp)), tuple(map(int, fp)), tuple(map(int, fn)))


def iou_from_counts(tp: int, fp: int, fn: int) -> float:
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


def iou(pred: SemanticMask, ref: SemanticMask) -> dict[str, float]:
    """IoU per class name plus ``"mean"``; a class absent from both scores 1."""
    cc = confusion(pred, ref)
    out = {name: iou_from_counts(cc.tp[c], cc.fp[c], cc.fn[c]) for c, name in enumerate(CLASS_NAMES)}
    out["mean"] = sum(out[n] for n in CLASS_NAMES) / N_CLASSES
    return out


def iou_loss(iou_value: float) -> float:
    if not iou_value > 0:
        raise ValueError(f"IoU loss undefined for IoU <= 0 (got {iou_value})")
    return -math.log(iou_value) + 0.0  # + 0.0 turns -0.0 into 0.0


# --- detection -----------------------------------------------------------------

@dataclass(frozen=True)
class DetectionTally:
    n_components: int
    n_dots: int
    tp: int

    def __post_init__(self):
        if self.tp > min(self.n_components, self.n_dots):
            raise ValueError("tp cannot exceed the number of components or dots")


@dataclass(frozen=True)
class DetectionResult:
    precision: float
    recall: float
    f1: float
    tally: DetectionTally
    flags: tuple[str, ...] = ()


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def dot_owners(components: Sequence[Component], dots: DotSet) -> np.ndarray:
    """Index of the component containing each dot, or -1."""
    owner_of_dot = np.full(len(dots), -1, dtype=np.int64)
    if not components or not len(dots):
        return owner_of_dot
    d = dots.as_array()
    stride = int(max(d[:, 0].max(), max(int(c.pixels[:, 0].max()) for c in components))) + 1
    keys = np.concatenate([c.pixels[:, 1] * stride + c.pixels[:, 0] for c in components])
    owner = np.concatenate([np.full(c.area, i) for i, c in enumerate(components)])
    order = np.argsort(keys, kind="stable")
    keys, owner = keys[order], owner[order]
    q = d[:, 1] * stride + d[:, 0]
    pos = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
    found = keys[pos] == q
    owner_of_dot[found] = owner[pos[found]]
    return owner_of_dot


def matched_components(components: Sequence[Component], dots: DotSet) -> np.ndarray:
    """Boolean per component: does its pixel set contain at least one dot."""
    hit = np.zeros(len(components), dtype=bool)
    own = dot_owners(components, dots)
    hit[own[own >= 0]] = True
    return hit


def detection_metrics(components: Sequence[Component], dots: DotSet) -> DetectionResult:
    if any(c.pixels is None for c in components):
        raise ValueError("detection metrics need components with pixel sets")
    tp = int(matched_components(components, dots).sum())
    n_c, n_d = len(components), len(dots)
    flags = []
    if n_c == 0:
        flags.append("no_components")
    if n_d == 0:
        flags.append("no_dots")
    p = tp / n_c if n_c else 0.0
    r = tp / n_d if n_d else 0.0
    return DetectionResult(p, r, f1_score(p, r), DetectionTally(n_c, n_d, tp), tuple(flags))


# --- per-patch counts and regression ---------------------------------------------

@dataclass(frozen=True)
class CountRecord:
    patch_row: int
    patch_col: int
    manual: int
    predicted: int


def _cell(v: float, size: int, limit: int) -> int:
    px = min(max(math.floor(v + 0.5), 0), limit - 1)
    return px // size


def per_patch_counts(components: Sequence[Component], dots: DotSet, patch_w: int, patch_h: int,
                     image_w: int, image_h: int, anchor: str = "dot") -> list[CountRecord]:
    """Counts on a non-overlapping grid; the last row/column may be smaller.

    Dots count in the patch containing them. A component counts in the patch
    of its centroid, except with ``anchor="dot"`` a component holding dots
    counts where its first dot lies, so a berry straddling a patch border is
    never split between manual and predicted tallies.
    """
    if patch_w < 1 or patch_h < 1:
        raise ValueError("patch size must be positive")
    if anchor not in ("dot", "centroid"):
        raise ValueError(f"unknown anchor {anchor!r}")
    rows = math.ceil(image_h / patch_h)
    cols = math.ceil(image_w / patch_w)
    manual = np.zeros((rows, cols), dtype=np.int64)
    pred = np.zeros((rows, cols), dtype=np.int64)
    for x, y in dots:
        manual[_cell(y, patch_h, image_h), _cell(x, patch_w, image_w)] += 1
    first_dot = {}
    if anchor == "dot" and components and len(dots):
        owner = dot_owners(components, dots)
        for (x, y), i in zip(dots, owner):
            if i >= 0 and i not in first_dot:
                first_dot[int(i)] = (x, y)
    for i, c in enumerate(components):
        cx, cy = first_dot.get(i, c.centroid)
        pred[_cell(cy, patch_h, image_h), _cell(cx, patch_w, image_w)] += 1
    return [CountRecord(r, q, int(manual[r, q]), int(pred[r, q])) for r in range(rows) for q in range(cols)]


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    mode: str = "ols"


def fit_counts(manual: Sequence[int], predicted: Sequence[int], mode: str = "ols") -> FitResult:
    """Least-squares line predicted ~ manual, evaluated in exact rationals.

    ``mode="identity"`` scores the residuals against y = x instead of the
    fitted line (slope and intercept still describe the OLS fit).
    """
    if mode not in ("ols", "identity"):
        raise ValueError(f"unknown R^2 mode {mode!r}")
    if len(manual) != len(predicted):
        raise ValueError("manual and predicted counts differ in length")
    n = len(manual)
    if n < 2:
        raise ValueError("R^2 needs at least two records")
    xs = [Fraction(v) for v in manual]
    ys = [Fraction(v) for v in predicted]
    sx, sy = sum(xs), sum(ys)
    sxx = n * sum(x * x for x in xs) - sx * sx
    if sxx == 0:
        raise ValueError("R^2 undefined: manual counts have zero variance")
    sxy = n * sum(x * y for x, y in zip(xs, ys)) - sx * sy
    syy = n * sum(y * y for y in ys) - sy * sy
    slope = sxy / sxx
    intercept = (sy - slope * sx) / n
    # sxx, sxy, syy are n times the centred sums, so SS_res / SS_tot needs no 1/n
    if mode == "ols":
        ss_res_n = syy - sxy * sxy / sxx
    else:
        ss_res_n = n * sum((y - x) ** 2 for x, y in zip(xs, ys))
    if ss_res_n == 0:
        r2 = 1.0
    elif syy == 0:
        r2 = -math.inf
    else:
        r2 = float(1 - ss_res_n / syy)
    return FitResult(float(slope), float(intercept), r2, mode)


def r_squared(records: Sequence[CountRecord], mode: str = "ols") -> FitResult:
    return fit_counts([r.manual for r in records], [r.predicted for r in records], mode)


# --- CSV / SVG emission -------------------------------------------------------------

RECORD_HEADER = ("patch_row", "patch_col", "manual", "predicted")


def format_count_records(records: Sequence[CountRecord]) -> str:
    out = io.StringIO()
    out.write(",".join(RECORD_HEADER) + "\n")
    for r in records:
        out.write(f"{r.patch_row},{r.patch_col},{r.manual},{r.predicted}\n")
    return out.getvalue()


def parse_count_records(text: str) -> list[CountRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != RECORD_HEADER:
        raise FormatError(f"count CSV must start with {','.join(RECORD_HEADER)!r}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            out.append(CountRecord(*(int(v) for v in row)))
        except (TypeError, ValueError):
            raise FormatError(f"line {lineno}: expected four integers, got {','.join(row)!r}") from None
    return out


PLOT_SIZE = 400
PLOT_MARGIN = 50


def emit_correlation_plot(records: Sequence[CountRecord], fit: FitResult) -> tuple[str, str]:
    """Scatter of (manual, predicted) with dashed identity line and solid fit line.

    Returns (svg_text, csv_text).
    """
    top = max([1] + [r.manual for r in records] + [r.predicted for r in records])
    span = PLOT_SIZE - 2 * PLOT_MARGIN

    def px(v: float) -> float:
        return PLOT_MARGIN + span * v / top

    def py(v: float) -> float:
        return PLOT_SIZE - PLOT_MARGIN - span * v / top

    def line(cls: str, x0, y0, x1, y1, extra: str) -> str:
        return (f'<line class="{cls}" x1="{px(x0):.2f}" y1="{py(y0):.2f}" '
                f'x2="{px(x1):.2f}" y2="{py(y1):.2f}" {extra}/>')

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_SIZE}" height="{PLOT_SIZE}" '
        f'viewBox="0 0 {PLOT_SIZE} {PLOT_SIZE}">',
        f'<rect x="0" y="0" width="{PLOT_SIZE}" height="{PLOT_SIZE}" fill="white"/>',
        line("axis", 0, 0, top, 0, 'stroke="black"'),
        line("axis", 0, 0, 0, top, 'stroke="black"'),
        line("identity", 0, 0, top, top, 'stroke="gray" stroke-dasharray="6,4"'),
        line("fit", 0, fit.intercept, top, fit.intercept + fit.slope * top, 'stroke="blue"'),
    ]
    for r in records:
        parts.append(f'<circle class="point" cx="{px(r.manual):.2f}" cy="{py(r.predicted):.2f}" '
                     f'r="3" fill="none" stroke="red"/>')
    parts += [
        f'<text x="{PLOT_MARGIN}" y="{PLOT_MARGIN - 20}" font-size="14">'
        f'R² = {100 * fit.r_squared:.2f} %  (y = {fit.slope:.4f} x + {fit.intercept:.4f})</text>',
        f'<text x="{PLOT_SIZE / 2:.0f}" y="{PLOT_SIZE - 15}" font-size="12" text-anchor="middle">manual count</text>',
        f'<text x="15" y="{PLOT_SIZE / 2:.0f}" font-size="12" transform="rotate(-90 15 {PLOT_SIZE / 2:.0f})" '
        f'text-anchor="middle">predicted count</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n", format_count_records(records)


# --- report -----------------------------------------------------------------------

@dataclass
class EvalReport:
    detection: DetectionResult
    records: list[CountRecord]
    fit: FitResult | None = None
    iou: dict[str, float] | None = None
    notes: list[str] = field(default_factory=list)


def _fmt(v: float) -> str:
    return "nan" if v != v else f"{v:.6f}"


def format_report(report: EvalReport) -> str:
    rows = []
    if report.iou is not None:
        for name in (*CLASS_NAMES, "mean"):
            rows.append(("iou", name, _fmt(report.iou[name])))
        m = report.iou["mean"]
        rows.append(("iou_loss", "mean", _fmt(iou_loss(m)) if m > 0 else "inf"))
    d = report.detection
    rows += [
        ("precision", "berry", _fmt(d.precision)),
        ("recall", "berry", _fmt(d.recall)),
        ("f1", "berry", _fmt(d.f1)),
        ("components", "berry", str(d.tally.n_components)),
        ("dots", "berry", str(d.tally.n_dots)),
        ("tp", "berry", str(d.tally.tp)),
        ("patches", "count", str(len(report.records))),
    ]
    if report.fit is not None:
        rows += [
            ("slope", "count", _fmt(report.fit.slope)),
            ("intercept", "count", _fmt(report.fit.intercept)),
            ("r_squared", "count", _fmt(report.fit.r_squared)),
        ]
    else:
        rows.append(("r_squared", "count", "nan"))
    out = io.StringIO()
    out.write("metric,class,value\n")
    for r in rows:
        out.write(",".join(r) + "\n")
    return out.getvalue()


def parse_report(text: str) -> dict[tuple[str, str], float]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["metric", "class", "value"]:
        raise FormatError('report CSV must start with "metric,class,value"')
    return {(m, c): float(v) for m, c, v in reader}


def percent(v: float) -> str:
    return f"{100 * v:.2f}"
