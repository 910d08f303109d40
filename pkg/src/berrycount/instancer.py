"""Berry candidates from a semantic mask, with moment-based shape descriptors."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import ndimage

from .errors import FormatError
from .raster import EIGHT_CONNECTED, FOUR_CONNECTED, Cls, SemanticMask


@dataclass(frozen=True, eq=False)
class Component:
    """One berry candidate.

    ``pixels`` is an (N, 2) array of (x, y) in raster order, or None for
    components read back from a components CSV (descriptors only).
    """

    id: int
    area: int
    centroid: tuple[float, float]
    a_maj: float
    a_min: float
    enclosure: float
    pixels: np.ndarray | None = None

    @property
    def axis_ratio(self) -> float:
        return self.a_min / self.a_maj

    @property
    def mean_radius(self) -> float:
        return (self.a_min + self.a_maj) / 4.0


def moment_axes(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    """Full axis lengths (major, minor) of the equal-covariance ellipse.

    Each pixel is a unit square, so its own variance 1/12 is added per axis.
    """
    if len(xs) == 1:
        return 1.0, 1.0
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    mu20 = np.mean(dx * dx) + 1.0 / 12.0
    mu02 = np.mean(dy * dy) + 1.0 / 12.0
    mu11 = np.mean(dx * dy)
    half_tr = 0.5 * (mu20 + mu02)
    disc = np.sqrt(0.25 * (mu20 - mu02) ** 2 + mu11 * mu11)
    lam1 = half_tr + disc
    lam2 = max(half_tr - disc, 0.0)
    return 4.0 * float(np.sqrt(lam1)), 4.0 * float(np.sqrt(lam2))


def _enclosure(local: np.ndarray, edge_near: np.ndarray) -> float:
    """Fraction of boundary pixels with an Edge pixel in their 8-neighbourhood."""
    inner = ndimage.binary_erosion(local, structure=FOUR_CONNECTED, border_value=0)
    boundary = local & ~inner
    n = int(boundary.sum())
    return float((boundary & edge_near).sum()) / n


def compute_descriptors(pixels, mask: SemanticMask, id: int = 1) -> Component:
    """Descriptors for an arbitrary pixel set given as (x, y) pairs."""
    pts = np.array(sorted(set(map(tuple, np.asarray(pixels).reshape(-1, 2).tolist())),
                          key=lambda p: (p[1], p[0])), dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("cannot describe an empty pixel set")
    xs, ys = pts[:, 0], pts[:, 1]
    h, w = mask.shape
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= w or ys.max() >= h:
        raise ValueError("pixel set extends outside the mask")
    y0, y1 = max(ys.min() - 1, 0), min(ys.max() + 2, h)
    x0, x1 = max(xs.min() - 1, 0), min(xs.max() + 2, w)
    local = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    local[ys - y0, xs - x0] = True
    edge_near = _edge_near(mask, y0, y1, x0, x1)
    return _component(id, xs, ys, local, edge_near)


def _edge_near(mask: SemanticMask, y0, y1, x0, x1) -> np.ndarray:
    """Pixels of the window [y0:y1, x0:x1] with an Edge pixel within Chebyshev distance 1."""
    h, w = mask.shape
    ya, yb = max(y0 - 1, 0), min(y1 + 1, h)
    xa, xb = max(x0 - 1, 0), min(x1 + 1, w)
    edge = mask.data[ya:yb, xa:xb] == Cls.EDGE
    near = ndimage.binary_dilation(edge, structure=EIGHT_CONNECTED)
    return near[y0 - ya : y0 - ya + (y1 - y0), x0 - xa : x0 - xa + (x1 - x0)]


def _component(id, xs, ys, local, edge_near) -> Component:
    a_maj, a_min = moment_axes(xs.astype(np.float64), ys.astype(np.float64))
    pixels = np.stack([xs, ys], axis=1)
    pixels.setflags(write=False)
    return Component(
        id=int(id),
        area=len(xs),
        centroid=(float(xs.mean()), float(ys.mean())),
        a_maj=a_maj,
        a_min=a_min,
        enclosure=_enclosure(local, edge_near),
        pixels=pixels,
    )


def label_berries(mask: SemanticMask) -> tuple[np.ndarray, int]:
    """4-connected labelling of Berry pixels, ids in raster order of first pixel."""
    labels, n = ndimage.label(mask.data == Cls.BERRY, structure=FOUR_CONNECTED)
    if n == 0:
        return labels, 0
    flat = labels.ravel()
    lab = flat[flat > 0]
    # already in order iff each new id is exactly one more than the largest seen so far
    seen = np.maximum.accumulate(lab)
    if lab[0] == 1 and (lab[1:] <= seen[:-1] + 1).all():
        return labels, n
    _, first = np.unique(lab, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.zeros(n + 1, dtype=labels.dtype)
    remap[order + 1] = np.arange(1, n + 1, dtype=labels.dtype)
    return remap[labels], n


def _axes_batch(mu20, mu02, mu11) -> tuple[np.ndarray, np.ndarray]:
    half_tr = 0.5 * (mu20 + mu02)
    disc = np.sqrt(0.25 * (mu20 - mu02) ** 2 + mu11 * mu11)
    return 4.0 * np.sqrt(half_tr + disc), 4.0 * np.sqrt(np.maximum(half_tr - disc, 0.0))


def connected_components(mask: SemanticMask, threads: int = 1) -> list[Component]:
    """Berry components with descriptors, computed for all labels in one vectorised pass.

    ``threads`` is accepted for interface symmetry with the other stages; the
    pass has no per-component loop to spread out.
    """
    labels, n = label_berries(mask)
    if n == 0:
        return []
    h, w = mask.shape
    flat = labels.ravel()
    fg = np.flatnonzero(flat)
    lab = flat[fg]
    ys, xs = np.divmod(fg, w)

    # pixels grouped by label, raster order within each group
    order = np.argsort(lab.astype(np.uint16) if n < 65536 else lab, kind="stable")
    area = np.bincount(lab, minlength=n + 1)[1:]
    starts = np.concatenate([[0], np.cumsum(area)[:-1]])
    first = order[starts]
    ox, oy = xs[first], ys[first]

    # moments about each component's first pixel, then centred
    dx = (xs - ox[lab - 1]).astype(np.float64)
    dy = (ys - oy[lab - 1]).astype(np.float64)
    sums = [np.bincount(lab, weights=v, minlength=n + 1)[1:] for v in (dx, dy, dx * dx, dy * dy, dx * dy)]
    mx, my = sums[0] / area, sums[1] / area
    mu20 = sums[2] / area - mx * mx + 1.0 / 12.0
    mu02 = sums[3] / area - my * my + 1.0 / 12.0
    mu11 = sums[4] / area - mx * my
    a_maj, a_min = _axes_batch(mu20, mu02, mu11)
    single = area == 1
    a_maj[single] = a_min[single] = 1.0

    # boundary pixels: some 4-neighbour (or the raster edge) carries another label
    pl = np.pad(labels, 1)
    pw = w + 2
    fp = (ys + 1) * pw + (xs + 1)
    plf = pl.ravel()
    boundary = np.zeros(len(fg), dtype=bool)
    for off in (1, -1, pw, -pw):
        boundary |= plf[fp + off] != lab
    pe = np.pad(mask.data == Cls.EDGE, 1).ravel()
    bfp = fp[boundary]
    near = np.zeros(len(bfp), dtype=bool)
    for off in (1, -1, pw, -pw, pw + 1, pw - 1, -pw + 1, -pw - 1):
        near |= pe[bfp + off]
    blab = lab[boundary]
    n_boundary = np.bincount(blab, minlength=n + 1)[1:]
    n_near = np.bincount(blab, weights=near, minlength=n + 1)[1:]
    enclosure = n_near / n_boundary

    pixels = np.stack([xs, ys], axis=1)[order]
    pixels.setflags(write=False)
    cx, cy = ox + mx, oy + my
    return [
        Component(k + 1, int(area[k]), (float(cx[k]), float(cy[k])), float(a_maj[k]), float(a_min[k]),
                  float(enclosure[k]), pixels[starts[k] : starts[k] + area[k]])
        for k in range(n)
    ]


def count_berries(mask: SemanticMask) -> int:
    return label_berries(mask)[1]


# --- components CSV --------------------------------------------------------

CSV_HEADER = ("id", "area", "cx", "cy", "a_maj", "a_min", "enclosure")


def format_components(components: Iterable[Component]) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_HEADER) + "\n")
    for c in components:
        out.write(f"{c.id},{c.area},{c.centroid[0]:.4f},{c.centroid[1]:.4f},"
                  f"{c.a_maj:.4f},{c.a_min:.4f},{c.enclosure:.4f}\n")
    return out.getvalue()


def parse_components(text: str) -> list[Component]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise FormatError(f"components CSV must start with {','.join(CSV_HEADER)!r}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise FormatError(f"line {lineno}: expected {len(CSV_HEADER)} fields")
        try:
            cid, area = int(row[0]), int(row[1])
            cx, cy, amaj, amin, enc = (float(v) for v in row[2:])
        except ValueError:
            raise FormatError(f"line {lineno}: unparsable value in {','.join(row)!r}") from None
        out.append(Component(cid, area, (cx, cy), amaj, amin, enc))
    return out
