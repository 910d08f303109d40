"""Seeded synthetic vineyard scenes and a prediction corruptor.

Together these replace the segmentation network: a scene gives a ground-truth
instance map, dots and a rendered grey image; ``corrupt`` turns the ideal
label mask into a plausible faulty prediction (fused berries, missed small
berries, leaf-edge crescents, thick edges).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import FormatError, SceneError
from .instancer import connected_components
from .labelgen import extract_dots
from .raster import EIGHT_CONNECTED, FOUR_CONNECTED, Cls, DotSet, GrayImage, InstanceMap, SemanticMask
from .rng import SplitMix64


@dataclass(frozen=True)
class SceneSpec:
    width: int = 2592
    height: int = 2048
    n_bunches: int = 10
    berries_per_bunch: tuple[int, int] = (28, 38)
    radius: tuple[float, float] = (8.0, 14.0)
    ellipticity: tuple[float, float] = (0.8, 1.0)
    bunch_spread: float = 70.0
    n_crescents: int = 10
    seed: int = 0
    # berry centres closer than separation * (r_i + r_j) are re-drawn; 0 disables
    separation: float = 0.8
    # every surviving berry keeps a non-empty 4-connected core for erosion depths 1..min_core,
    # and its dot lies in the deepest of those cores
    min_core: int = 3

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise SceneError("scene dimensions must be positive")
        if self.n_bunches < 0 or self.n_crescents < 0 or self.min_core < 0:
            raise SceneError("counts must be non-negative")
        for name in ("berries_per_bunch", "radius", "ellipticity"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise SceneError(f"{name} range [{lo}, {hi}] is empty")
        if self.berries_per_bunch[0] < 0:
            raise SceneError("berries_per_bunch must be non-negative")
        if self.radius[0] <= 0:
            raise SceneError("radius must be positive")
        if not (0 < self.ellipticity[0] and self.ellipticity[1] <= 1):
            raise SceneError("ellipticity must lie in (0, 1]")
        if self.bunch_spread < 0 or self.separation < 0:
            raise SceneError("bunch_spread and separation must be non-negative")


PRESETS = {
    # compact, homogeneous bunches in the lower canopy
    "vsp": SceneSpec(n_bunches=11, berries_per_bunch=(28, 38), radius=(8.0, 14.0),
                     ellipticity=(0.8, 1.0), bunch_spread=70.0, n_crescents=10, separation=0.8),
    # loose bunches all over the canopy, inhomogeneous berry sizes
    "smph": SceneSpec(n_bunches=25, berries_per_bunch=(18, 26), radius=(4.0, 20.0),
                      ellipticity=(0.6, 1.0), bunch_spread=110.0, n_crescents=30, separation=0.7),
}


def preset(name: str, seed: int = 0, **overrides) -> SceneSpec:
    try:
        base = PRESETS[name]
    except KeyError:
        raise SceneError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return SceneSpec(**{**asdict(base), "seed": seed, **overrides})


def format_scene_spec(spec: SceneSpec) -> str:
    lines = []
    for f in fields(spec):
        v = getattr(spec, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def parse_scene_spec(text: str) -> SceneSpec:
    kinds = {f.name: f.type for f in fields(SceneSpec)}
    kw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or key not in kinds:
            raise FormatError(f"spec line {lineno}: unknown entry {line!r}")
        try:
            if key in ("berries_per_bunch",):
                kw[key] = tuple(int(v) for v in val.split(","))
            elif key in ("radius", "ellipticity"):
                kw[key] = tuple(float(v) for v in val.split(","))
            elif key in ("bunch_spread", "separation"):
                kw[key] = float(val)
            else:
                kw[key] = int(val)
        except ValueError:
            raise FormatError(f"spec line {lineno}: bad value {val!r}") from None
    return SceneSpec(**kw)


# --- scene generation ----------------------------------------------------------

@dataclass(frozen=True)
class Berry:
    cx: float
    cy: float
    a: float  # semi-major
    b: float  # semi-minor
    theta: float


class Scene(NamedTuple):
    instances: InstanceMap
    dots: DotSet
    image: GrayImage | None


def ellipse_window(berry: Berry, width: int, height: int):
    """Bounding window slices and the inside test on pixel centres."""
    r = berry.a
    x0, x1 = max(int(math.floor(berry.cx - r)), 0), min(int(math.ceil(berry.cx + r)) + 1, width)
    y0, y1 = max(int(math.floor(berry.cy - r)), 0), min(int(math.ceil(berry.cy + r)) + 1, height)
    if x0 >= x1 or y0 >= y1:
        return None
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = xx - berry.cx, yy - berry.cy
    c, s = math.cos(berry.theta), math.sin(berry.theta)
    u = (dx * c + dy * s) / berry.a
    v = (-dx * s + dy * c) / berry.b
    q = u * u + v * v
    return (slice(y0, y1), slice(x0, x1)), q


def _place_berries(spec: SceneSpec, rng: SplitMix64) -> list[Berry]:
    berries: list[Berry] = []
    centres = np.zeros((0, 3))  # cx, cy, r
    margin = spec.bunch_spread + spec.radius[1]
    for _ in range(spec.n_bunches):
        bx = rng.uniform_range(min(margin, spec.width / 2), max(spec.width - margin, spec.width / 2))
        by = rng.uniform_range(min(margin, spec.height / 2), max(spec.height - margin, spec.height / 2))
        n = rng.randint(*spec.berries_per_bunch)
        for _ in range(n):
            r = rng.uniform_range(*spec.radius)
            e = rng.uniform_range(*spec.ellipticity)
            theta = rng.uniform_range(0.0, math.pi)
            for _attempt in range(50):
                # teardrop: full width at the top, narrowing towards the tip
                t = rng.uniform()
                half_w = spec.bunch_spread * (1.0 - 0.6 * t)
                cx = bx + half_w * (2.0 * rng.uniform() - 1.0)
                cy = by - spec.bunch_spread + 2.0 * spec.bunch_spread * t
                if spec.separation > 0 and len(centres):
                    d = np.hypot(centres[:, 0] - cx, centres[:, 1] - cy)
                    if (d < spec.separation * (centres[:, 2] + r)).any():
                        continue
                berries.append(Berry(cx, cy, r, r * e, theta))
                centres = np.vstack([centres, [cx, cy, r]])
                break
    return berries


def _clean_instances(ids: np.ndarray, min_core: int) -> np.ndarray:
    """Keep the largest 4-connected piece of each id; drop ids whose core fails.

    A core passes if it stays non-empty and 4-connected for every erosion depth
    1..min_core. Ties between equal-sized pieces go to the one whose first
    pixel comes first in raster order.
    """
    out = ids.copy()
    h, w = ids.shape
    for k, sl in enumerate(ndimage.find_objects(ids), start=1):
        if sl is None:
            continue
        y0, y1 = max(sl[0].start - 1, 0), min(sl[0].stop + 1, h)
        x0, x1 = max(sl[1].start - 1, 0), min(sl[1].stop + 1, w)
        win = out[y0:y1, x0:x1]
        mine = win == k
        # a pixel survives d erosion steps iff its taxicab distance to the outside exceeds d;
        # a pixel deeper than d has its whole radius-d diamond in its own piece, so depths
        # computed over all pieces at once are the per-piece depths
        depth = ndimage.distance_transform_cdt(np.pad(mine, 1), metric="taxicab")[1:-1, 1:-1]
        if not _single_piece_core_ok(depth, min_core):
            lab, n = ndimage.label(mine, structure=FOUR_CONNECTED)
            if n > 1:
                sizes = np.bincount(lab.ravel())[1:]
                keep = lab == (int(np.argmax(sizes)) + 1)
                win[mine & ~keep] = 0
                mine = keep
                depth = np.where(keep, depth, 0)
            if not _core_ok(depth, min_core):
                win[mine] = 0
                continue
        if not _dot_in_core(mine, depth, min_core):
            win[mine] = 0
    return out


# 4-connectivity inside each plane, no links between planes
_PLANAR_FOUR = np.zeros((3, 3, 3), dtype=bool)
_PLANAR_FOUR[1] = FOUR_CONNECTED


def _core_ok(depth: np.ndarray, min_core: int) -> bool:
    """Cores after 1..min_core erosions are all non-empty and 4-connected.

    The cores are stacked as planes and labelled in one call: each non-empty
    plane holds at least one feature, so min_core features means one per plane.
    """
    if min_core == 0:
        return True
    if depth.max() <= min_core:
        return False
    planes = depth[None] > np.arange(1, min_core + 1)[:, None, None]
    return ndimage.label(planes, structure=_PLANAR_FOUR)[1] == min_core


def _single_piece_core_ok(depth: np.ndarray, min_core: int) -> bool:
    """Fast path: one piece whose cores pass, decided with a single labelling call."""
    if depth.max() <= min_core:
        return False
    planes = depth[None] > np.arange(min_core + 1)[:, None, None]
    return ndimage.label(planes, structure=_PLANAR_FOUR)[1] == min_core + 1


def _dot_in_core(mine: np.ndarray, depth: np.ndarray, min_core: int) -> bool:
    """Whether the instance's dot (see ``extract_dots``) survives min_core erosion steps.

    When the rounded centroid is off-shape every nearest member pixel must
    qualify, so tie-breaking cannot move the dot out of the core.
    """
    ys, xs = np.nonzero(mine)
    cx, cy = xs.mean(), ys.mean()
    rx, ry = int(np.floor(cx + 0.5)), int(np.floor(cy + 0.5))
    if 0 <= ry < mine.shape[0] and 0 <= rx < mine.shape[1] and mine[ry, rx]:
        return bool(depth[ry, rx] > min_core)
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    near = d2 <= d2.min() + 1e-9
    return bool((depth[ys[near], xs[near]] > min_core).all())


def render_image(ids: np.ndarray, berries: list[Berry], spec: SceneSpec, rng: SplitMix64) -> np.ndarray:
    h, w = ids.shape
    img = np.full((h, w), 55.0)
    for k, berry in enumerate(berries, start=1):
        win = ellipse_window(berry, w, h)
        if win is None:
            continue
        sl, q = win
        vis = ids[sl] == k
        img[sl][vis] = 95.0 + 110.0 * np.sqrt(np.clip(1.0 - q[vis], 0.0, 1.0))
    for _ in range(spec.n_crescents):
        cx, cy = rng.uniform_range(0, w), rng.uniform_range(0, h)
        R = rng.uniform_range(10.0, 30.0)
        a0 = rng.uniform_range(0.0, 2 * math.pi)
        arc = _arc_pixels(cx, cy, R, 2.0, a0, math.radians(rng.uniform_range(120, 220)), w, h)
        if arc is not None:
            img[arc[1], arc[0]] = 170.0
    noise = (rng.noise_field((h, w)) >> np.uint64(59)).astype(np.float64) - 15.5  # 5 bits, centred
    return np.clip(np.floor(img + noise * 0.6 + 0.5), 0, 255).astype(np.uint8)


def generate_scene(spec: SceneSpec, render: bool = True) -> Scene:
    """Place, rasterize and clean the berries of one scene.

    ``render=False`` skips the grey image (``Scene.image`` is None); the
    instance map and dots do not depend on it.
    """
    rng = SplitMix64(spec.seed)
    place_rng, render_rng = rng.fork(), rng.fork()
    berries = _place_berries(spec, place_rng)
    if len(berries) > 65535:
        raise SceneError("more than 65535 berries requested")
    ids = np.zeros((spec.height, spec.width), dtype=np.int32)
    for k, berry in enumerate(berries, start=1):
        win = ellipse_window(berry, spec.width, spec.height)
        if win is None:
            continue
        sl, q = win
        ids[sl][q <= 1.0] = k
    ids = _clean_instances(ids, spec.min_core)
    inst = InstanceMap(ids)
    if berries and not ids.any():
        raise SceneError("no berry survived occlusion; the scene spec is too dense")
    image = GrayImage(render_image(ids, berries, spec, render_rng)) if render else None
    return Scene(inst, extract_dots(inst), image)


# --- corruption -------------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSpec:
    merge_rate: float = 0.0
    drop_below: float = 0.0
    crescent_noise: int = 0
    dilate_edge: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.merge_rate <= 1.0:
            raise ValueError(f"merge_rate must lie in [0, 1], got {self.merge_rate}")
        if self.drop_below < 0 or self.crescent_noise < 0 or self.dilate_edge < 0:
            raise ValueError("drop_below, crescent_noise and dilate_edge must be non-negative")

    @property
    def is_noop(self) -> bool:
        return self.merge_rate == 0 and self.drop_below == 0 and self.crescent_noise == 0 and self.dilate_edge == 0


BENCHMARK_CORRUPTION = dict(merge_rate=0.1, drop_below=3.0, crescent_noise=20, dilate_edge=1)
# filter benchmark: scenes (preset, seed) corrupted with seed BENCHMARK_SEED_OFFSET + seed
BENCHMARK_SCENES = tuple((name, seed) for name in ("vsp", "smph") for seed in range(1, 6))
BENCHMARK_SEED_OFFSET = 1000


def adjacent_pairs(ids: np.ndarray) -> list[tuple[int, int]]:
    """Sorted unique (a, b), a < b, of 4-adjacent distinct foreground ids."""
    pairs = set()
    for p, q in ((ids[:, :-1], ids[:, 1:]), (ids[:-1, :], ids[1:, :])):
        m = (p != q) & (p > 0) & (q > 0)
        a, b = np.minimum(p[m], q[m]), np.maximum(p[m], q[m])
        pairs.update(zip(a.tolist(), b.tolist()))
    return sorted(pairs)


def shared_edge_band(ids: np.ndarray, a: int, b: int, objects=None) -> tuple[tuple[slice, slice], np.ndarray]:
    """Pixels of a and b whose nearest exit from their own instance lies in the other one.

    Returns the window slices and the band mask inside that window.
    """
    if objects is None:
        objects = ndimage.find_objects(ids)
    sa, sb = objects[a - 1], objects[b - 1]
    y0 = max(min(sa[0].start, sb[0].start) - 1, 0)
    y1 = min(max(sa[0].stop, sb[0].stop) + 1, ids.shape[0])
    x0 = max(min(sa[1].start, sb[1].start) - 1, 0)
    x1 = min(max(sa[1].stop, sb[1].stop) + 1, ids.shape[1])
    win = np.pad(ids[y0:y1, x0:x1], 1)
    band = np.zeros(win.shape, dtype=bool)
    for me, other in ((a, b), (b, a)):
        mine = win == me
        d_exit = ndimage.distance_transform_cdt(mine, metric="taxicab")
        d_other = ndimage.distance_transform_cdt(win != other, metric="taxicab")
        band |= mine & (d_other == d_exit)
    return (slice(y0, y1), slice(x0, x1)), band[1:-1, 1:-1]


def _arc_pixels(cx, cy, R, thickness, a0, span, w, h):
    x0, x1 = int(math.floor(cx - R - 1)), int(math.ceil(cx + R + 1)) + 1
    y0, y1 = int(math.floor(cy - R - 1)), int(math.ceil(cy + R + 1)) + 1
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = xx - cx, yy - cy
    d = np.hypot(dx, dy)
    ang = np.mod(np.arctan2(dy, dx) - a0, 2 * math.pi)
    sel = (d > R - thickness) & (d <= R) & (ang <= span)
    lab, n = ndimage.label(sel, structure=FOUR_CONNECTED)
    if n == 0:
        return None
    sizes = np.bincount(lab.ravel())[1:]
    piece = lab == int(np.argmax(sizes)) + 1
    py, px = np.nonzero(piece)
    px, py = px + x0, py + y0
    inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    return px[inside], py[inside]


MIN_ARC_LENGTH = 26.0


def _paint_crescent(m: np.ndarray, rng: SplitMix64, clearance: int, attempts: int = 200) -> bool:
    h, w = m.shape
    for _ in range(attempts):
        R = rng.uniform_range(8.0, 18.0)
        thickness = rng.uniform_range(1.4, 2.0)
        a0 = rng.uniform_range(0.0, 2 * math.pi)
        # arcs shorter than ~MIN_ARC_LENGTH px are thin enough to pass the area test
        span = max(math.radians(rng.uniform_range(90.0, 250.0)), MIN_ARC_LENGTH / R)
        cx, cy = rng.uniform_range(0, w), rng.uniform_range(0, h)
        arc = _arc_pixels(cx, cy, R, thickness, a0, span, w, h)
        if arc is None:
            continue
        px, py = arc
        if len(px) < 12:
            continue
        # the kept piece must lie wholly inside the raster and stay 4-connected there
        cand = np.zeros((h, w), dtype=bool)
        cand[py, px] = True
        ys0, ys1 = max(py.min() - clearance, 0), min(py.max() + clearance + 1, h)
        xs0, xs1 = max(px.min() - clearance, 0), min(px.max() + clearance + 1, w)
        local = cand[ys0:ys1, xs0:xs1]
        if ndimage.label(local, structure=FOUR_CONNECTED)[1] != 1:
            continue
        halo = ndimage.binary_dilation(local, structure=EIGHT_CONNECTED, iterations=clearance)
        if (m[ys0:ys1, xs0:xs1][halo] != Cls.BACKGROUND).any():
            continue
        m[py, px] = Cls.BERRY
        return True
    return False


def corrupt(mask: SemanticMask, inst: InstanceMap, spec: CorruptionSpec) -> SemanticMask:
    """Apply merge, drop, crescent noise and edge dilation, in that order."""
    if mask.shape != inst.shape:
        raise ValueError("mask and instance map differ in size")
    if spec.is_noop:
        return mask
    rng = SplitMix64(spec.seed)
    merge_rng, crescent_rng = rng.fork(), rng.fork()
    m = mask.data.copy()
    ids = inst.ids

    if spec.merge_rate > 0:
        objects = ndimage.find_objects(ids)
        for a, b in adjacent_pairs(ids):
            if merge_rng.uniform() < spec.merge_rate:
                sl, band = shared_edge_band(ids, a, b, objects)
                win = m[sl]
                win[band & (win == Cls.EDGE)] = Cls.BERRY

    if spec.drop_below > 0:
        for c in connected_components(SemanticMask(m)):
            if c.mean_radius < spec.drop_below:
                m[c.pixels[:, 1], c.pixels[:, 0]] = Cls.BACKGROUND

    for _ in range(spec.crescent_noise):
        _paint_crescent(m, crescent_rng, clearance=1 + spec.dilate_edge)

    if spec.dilate_edge > 0:
        edge = ndimage.binary_dilation(m == Cls.EDGE, structure=FOUR_CONNECTED, iterations=spec.dilate_edge)
        m[edge] = Cls.EDGE

    return SemanticMask(m)
