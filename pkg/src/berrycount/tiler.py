"""Overlapping patch grids, patch extraction and majority-vote stitching."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

from .errors import FormatError
from .raster import N_CLASSES, Cls, GrayImage, InstanceMap, SemanticMask


@dataclass(frozen=True)
class PatchGrid:
    image_w: int
    image_h: int
    patch_w: int
    patch_h: int
    stride_x: int
    stride_y: int
    origins: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.origins)

    @property
    def max_cover(self) -> int:
        return math.ceil(self.patch_w / self.stride_x) * math.ceil(self.patch_h / self.stride_y)


def _axis_origins(image: int, patch: int, stride: int) -> list[int]:
    last = image - patch
    out = list(range(0, last + 1, stride))
    if out[-1] != last:
        out.append(last)
    return out


def plan_grid(image_w: int, image_h: int, patch_w: int, patch_h: int, overlap: float) -> PatchGrid:
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap fraction must lie in [0, 1), got {overlap}")
    if patch_w < 1 or patch_h < 1:
        raise ValueError(f"patch size must be positive, got {patch_w}x{patch_h}")
    if patch_w > image_w or patch_h > image_h:
        raise ValueError(f"patch {patch_w}x{patch_h} larger than image {image_w}x{image_h}")
    sx = max(1, math.floor(patch_w * (1 - overlap) + 0.5))
    sy = max(1, math.floor(patch_h * (1 - overlap) + 0.5))
    xs = _axis_origins(image_w, patch_w, sx)
    ys = _axis_origins(image_h, patch_h, sy)
    return PatchGrid(image_w, image_h, patch_w, patch_h, sx, sy, tuple((x, y) for y in ys for x in xs))


def _count_dtype(n: int):
    """Smallest unsigned type that can hold counts up to n."""
    return np.uint8 if n < 2**8 else np.uint16 if n < 2**16 else np.uint32


def coverage(grid: PatchGrid) -> np.ndarray:
    """Number of patches covering each pixel, shape (image_h, image_w)."""
    cov = np.zeros((grid.image_h, grid.image_w), dtype=_count_dtype(len(grid)))
    for x, y in grid.origins:
        cov[y : y + grid.patch_h, x : x + grid.patch_w] += 1
    return cov


R = TypeVar("R", np.ndarray, SemanticMask, InstanceMap, GrayImage)


def _pixels(raster) -> tuple[np.ndarray, str | None]:
    if isinstance(raster, np.ndarray):
        return raster, None
    field = dataclasses.fields(raster)[0].name
    return getattr(raster, field), field


def extract(raster: R, grid: PatchGrid) -> list[R]:
    a, field = _pixels(raster)
    if a.shape[:2] != (grid.image_h, grid.image_w):
        raise ValueError(f"raster {a.shape[1]}x{a.shape[0]} does not match grid {grid.image_w}x{grid.image_h}")
    out = []
    for x, y in grid.origins:
        crop = a[y : y + grid.patch_h, x : x + grid.patch_w]
        out.append(crop.copy() if field is None else type(raster)(crop))
    return out


def vote_field(patch_masks: Sequence[SemanticMask], grid: PatchGrid) -> np.ndarray:
    """Per-class vote counts, shape (3, image_h, image_w)."""
    if len(patch_masks) != len(grid.origins):
        raise ValueError(f"{len(patch_masks)} patch masks for {len(grid.origins)} grid origins")
    votes = np.zeros((N_CLASSES, grid.image_h, grid.image_w), dtype=_count_dtype(len(grid)))
    berry, edge = votes[Cls.BERRY], votes[Cls.EDGE]
    for i, (m, (x, y)) in enumerate(zip(patch_masks, grid.origins)):
        d = m.data if isinstance(m, SemanticMask) else np.asarray(m)
        if d.shape != (grid.patch_h, grid.patch_w):
            raise ValueError(f"patch {i} is {d.shape[1]}x{d.shape[0]}, expected {grid.patch_w}x{grid.patch_h}")
        win = (slice(y, y + grid.patch_h), slice(x, x + grid.patch_w))
        berry[win] += d == Cls.BERRY
        edge[win] += d == Cls.EDGE
    # every vote that is not Berry or Edge is Background
    votes[Cls.BACKGROUND] = coverage(grid) - berry - edge
    return votes


def stitch(patch_masks: Sequence[SemanticMask], grid: PatchGrid,
           image_w: int | None = None, image_h: int | None = None) -> SemanticMask:
    """Majority vote per pixel; ties go to Edge, then Berry, then Background."""
    if image_w is not None and image_w != grid.image_w or image_h is not None and image_h != grid.image_h:
        raise ValueError(f"image {image_w}x{image_h} does not match grid {grid.image_w}x{grid.image_h}")
    votes = vote_field(patch_masks, grid)
    bg, berry, edge = votes
    if not (bg + berry + edge).all():
        raise ValueError("patch grid leaves pixels without any vote")
    out = np.where(berry >= bg, np.uint8(Cls.BERRY), np.uint8(Cls.BACKGROUND))
    out[(edge >= berry) & (edge >= bg)] = Cls.EDGE
    return SemanticMask(out)


# --- grid manifest -----------------------------------------------------------

def format_grid(grid: PatchGrid) -> str:
    lines = [
        f"image {grid.image_w} {grid.image_h}",
        f"patch {grid.patch_w} {grid.patch_h}",
        f"stride {grid.stride_x} {grid.stride_y}",
        f"count {len(grid.origins)}",
    ]
    lines += [f"origin {x} {y}" for x, y in grid.origins]
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> PatchGrid:
    fields: dict[str, tuple[int, int]] = {}
    origins = []
    count = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        key, vals = parts[0], parts[1:]
        try:
            nums = [int(v) for v in vals]
        except ValueError:
            raise FormatError(f"grid line {lineno}: non-integer value in {line!r}") from None
        if key == "count" and len(nums) == 1:
            count = nums[0]
        elif key in ("image", "patch", "stride") and len(nums) == 2:
            fields[key] = (nums[0], nums[1])
        elif key == "origin" and len(nums) == 2:
            origins.append((nums[0], nums[1]))
        else:
            raise FormatError(f"grid line {lineno}: unrecognised entry {line!r}")
    missing = {"image", "patch", "stride"} - fields.keys()
    if missing:
        raise FormatError(f"grid manifest missing {sorted(missing)}")
    if count is not None and count != len(origins):
        raise FormatError(f"grid manifest declares {count} origins but lists {len(origins)}")
    (iw, ih), (pw, ph), (sx, sy) = fields["image"], fields["patch"], fields["stride"]
    for x, y in origins:
        if not (0 <= x <= iw - pw and 0 <= y <= ih - ph):
            raise FormatError(f"grid origin ({x},{y}) puts patch outside the image")
    return PatchGrid(iw, ih, pw, ph, sx, sy, tuple(origins))
