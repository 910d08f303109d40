"""Training-label synthesis: instance maps -> berry/edge/background masks.

Also extracts dot annotations from instance maps and implements the three
training-time augmentations (horizontal flip, box blur, gamma shift).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import Cls, DotSet, GrayImage, InstanceMap, SemanticMask

DEFAULT_EDGE_WIDTHS = (2, 3)


def erode_instances(ids: np.ndarray, steps: int) -> np.ndarray:
    """Erode every instance independently with the 4-neighbourhood element.

    A pixel survives one step iff it and its four neighbours carry the same
    id; pixels outside the raster count as background.
    """
    ids = np.asarray(ids)
    # ids fit in 16 bits; the narrower type halves memory traffic
    cur = ids.astype(np.uint16) if ids.size and 0 <= ids.min() and ids.max() <= 65535 else ids
    for _ in range(steps):
        p = np.pad(cur, 1)
        keep = (
            (cur > 0)
            & (p[:-2, 1:-1] == cur)
            & (p[2:, 1:-1] == cur)
            & (p[1:-1, :-2] == cur)
            & (p[1:-1, 2:] == cur)
        )
        cur = np.where(keep, cur, 0).astype(cur.dtype, copy=False)
    return cur.astype(ids.dtype, copy=False)


def synthesize_labels(inst: InstanceMap, edge_width: int = 2) -> SemanticMask:
    if edge_width < 1:
        raise ValueError(f"edge width must be >= 1, got {edge_width}")
    core = erode_instances(inst.ids, edge_width)
    out = np.full(inst.shape, Cls.BACKGROUND, dtype=np.uint8)
    out[inst.ids > 0] = Cls.EDGE
    out[core > 0] = Cls.BERRY
    return SemanticMask(out)


def extract_dots(inst: InstanceMap) -> DotSet:
    """One dot per instance at its rounded centroid, snapped onto the instance."""
    ids = inst.ids
    h, w = ids.shape
    flat = ids.ravel()
    fg = np.flatnonzero(flat)
    if len(fg) == 0:
        return DotSet()
    k = flat[fg]
    ys, xs = np.divmod(fg, w)
    n = np.bincount(k)
    labels = np.flatnonzero(n)
    # centroids relative to each instance's first pixel keep the sums small
    first = np.full(len(n), len(fg))
    np.minimum.at(first, k, np.arange(len(fg)))
    ox, oy = xs[first[labels]], ys[first[labels]]
    ref_x = np.zeros(len(n), dtype=np.int64)
    ref_y = np.zeros(len(n), dtype=np.int64)
    ref_x[labels], ref_y[labels] = ox, oy
    cnt = n[labels]
    cx = ox + np.bincount(k, weights=xs - ref_x[k])[labels] / cnt
    cy = oy + np.bincount(k, weights=ys - ref_y[k])[labels] / cnt
    rx = np.floor(cx + 0.5).astype(np.int64)
    ry = np.floor(cy + 0.5).astype(np.int64)
    inside = (rx >= 0) & (rx < w) & (ry >= 0) & (ry < h)
    on = np.zeros(len(labels), dtype=bool)
    on[inside] = ids[ry[inside], rx[inside]] == labels[inside]
    pts = np.stack([rx, ry], axis=1)
    if not on.all():
        objects = ndimage.find_objects(ids)
        for i in np.flatnonzero(~on):
            lab = labels[i]
            sl = objects[lab - 1]
            py, px = np.nonzero(ids[sl] == lab)
            py, px = py + sl[0].start, px + sl[1].start
            # first minimum in raster order breaks ties
            j = int(np.argmin((px - cx[i]) ** 2 + (py - cy[i]) ** 2))
            pts[i] = px[j], py[j]
    return DotSet(tuple(map(tuple, pts.tolist())))


# --- augmentation ----------------------------------------------------------

@dataclass(frozen=True)
class AugmentSpec:
    hflip: bool = False
    blur_kernel: int | None = None
    gamma: float | None = None

    def __post_init__(self):
        k = self.blur_kernel
        if k is not None and (k % 2 == 0 or not 3 <= k <= 7):
            raise ValueError(f"blur kernel must be odd and in [3, 7], got {k}")
        g = self.gamma
        if g is not None and not 0.8 <= g <= 1.2:
            raise ValueError(f"gamma must lie in [0.8, 1.2], got {g}")


def sample_augment_spec(rng) -> AugmentSpec:
    """Draw a random augmentation from a :class:`berrycount.rng.SplitMix64`."""
    return AugmentSpec(
        hflip=rng.uniform() < 0.5,
        blur_kernel=(3, 5, 7)[rng.randint(0, 2)] if rng.uniform() < 0.5 else None,
        gamma=0.8 + 0.4 * rng.uniform() if rng.uniform() < 0.5 else None,
    )


def box_blur(a: np.ndarray, k: int) -> np.ndarray:
    """k x k mean with clamped borders, rounded half-up in exact integers."""
    sums = ndimage.convolve(a.astype(np.int64), np.ones((k, k), dtype=np.int64), mode="nearest")
    n = k * k
    return (2 * sums + n) // (2 * n)


def gamma_table(gamma: float) -> np.ndarray:
    x = np.arange(256, dtype=np.float64) / 255.0
    return np.floor(255.0 * x**gamma + 0.5).astype(np.uint8)


def augment(img: GrayImage, mask: SemanticMask, spec: AugmentSpec) -> tuple[GrayImage, SemanticMask]:
    if img.shape != mask.shape:
        raise ValueError(f"image {img.shape} and mask {mask.shape} differ in size")
    a = img.data
    m = mask.data
    if spec.hflip:
        a = a[:, ::-1]
        m = m[:, ::-1]
    if spec.blur_kernel is not None:
        a = box_blur(a, spec.blur_kernel)
    if spec.gamma is not None:
        a = gamma_table(spec.gamma)[a]
    return GrayImage(a), SemanticMask(m)
