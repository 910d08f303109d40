"""Raster types and the PGM / CSV codecs every other module reads and writes.

Masks hold class *indices* (see :class:`Cls`) internally; the on-disk grey
codes 0/128/255 only exist inside the codecs.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import FormatError


class Cls(IntEnum):
    BACKGROUND = 0
    BERRY = 1
    EDGE = 2


N_CLASSES = 3
CLASS_NAMES = ("background", "berry", "edge")
CLASS_CODES = np.array([0, 128, 255], dtype=np.uint8)

_CODE_TO_CLASS = np.full(256, 255, dtype=np.uint8)
_CODE_TO_CLASS[CLASS_CODES] = np.arange(N_CLASSES, dtype=np.uint8)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
EIGHT_CONNECTED = ndimage.generate_binary_structure(2, 2)


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _check_2d(a: np.ndarray, what: str) -> None:
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{what} must be a non-empty 2-D array, got shape {a.shape}")


@dataclass(frozen=True, eq=False)
class SemanticMask:
    """Per-pixel class raster, shape (height, width), values in :class:`Cls`."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        _check_2d(a, "SemanticMask")
        if a.size and (a.min() < 0 or a.max() >= N_CLASSES):
            raise ValueError("SemanticMask values must be class indices 0, 1 or 2")
        object.__setattr__(self, "data", _frozen(a, np.uint8))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, SemanticMask):
            return NotImplemented
        return np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"SemanticMask({self.width}x{self.height})"


@dataclass(frozen=True, eq=False)
class InstanceMap:
    """Instance-id raster; 0 is background, k >= 1 is berry k."""

    ids: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.ids)
        _check_2d(a, "InstanceMap")
        if a.size and (a.min() < 0 or a.max() > 65535):
            raise ValueError("instance ids must lie in [0, 65535]")
        object.__setattr__(self, "ids", _frozen(a, np.int32))

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape

    def instance_ids(self) -> np.ndarray:
        u = np.unique(self.ids)
        return u[u > 0]

    def __len__(self):
        return len(self.instance_ids())

    def __eq__(self, other):
        if not isinstance(other, InstanceMap):
            return NotImplemented
        return np.array_equal(self.ids, other.ids)

    def __repr__(self):
        return f"InstanceMap({self.width}x{self.height}, {len(self)} instances)"


@dataclass(frozen=True, eq=False)
class GrayImage:
    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        _check_2d(a, "GrayImage")
        if a.size and (a.min() < 0 or a.max() > 255):
            raise ValueError("GrayImage values must be 8-bit")
        object.__setattr__(self, "data", _frozen(a, np.uint8))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class DotSet:
    """Annotated berry positions as (x, y) = (column, row), order preserved."""

    points: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        pts = tuple((int(x), int(y)) for x, y in self.points)
        if len(set(pts)) != len(pts):
            raise ValueError("DotSet contains duplicate points")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def as_array(self) -> np.ndarray:
        """(N, 2) int array of (x, y)."""
        if not self.points:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(self.points, dtype=np.int64)

    def check_bounds(self, width: int, height: int) -> None:
        for x, y in self.points:
            if not (0 <= x < width and 0 <= y < height):
                raise ValueError(f"dot ({x},{y}) outside {width}x{height} raster")


# --- PGM -------------------------------------------------------------------

def _read_header_tokens(buf: bytes) -> tuple[list[bytes], int]:
    """Return the four header tokens and the payload offset."""
    tokens: list[bytes] = []
    i, n = 0, len(buf)
    while len(tokens) < 4:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise FormatError("malformed PGM header: unexpected end of data")
        j = i
        while j < n and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
            j += 1
        tokens.append(buf[i:j])
        i = j
    # exactly one whitespace byte separates header from raster
    if i >= n or not buf[i : i + 1].isspace():
        raise FormatError("malformed PGM header: missing separator before payload")
    return tokens, i + 1


def decode_pgm(buf: bytes) -> tuple[np.ndarray, int]:
    """Decode a binary PGM into a (height, width) array and its maxval."""
    tokens, offset = _read_header_tokens(bytes(buf))
    if tokens[0] != b"P5":
        raise FormatError(f"malformed PGM header: magic {tokens[0]!r} is not P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("malformed PGM header: non-integer field") from None
    if width < 1 or height < 1:
        raise FormatError(f"malformed PGM header: bad dimensions {width}x{height}")
    if not 0 < maxval <= 65535:
        raise FormatError(f"malformed PGM header: maxval {maxval}")
    bpp = 1 if maxval < 256 else 2
    need = width * height * bpp
    payload = buf[offset:]
    if len(payload) < need:
        raise FormatError(f"truncated PGM payload: {len(payload)} of {need} bytes")
    dtype = np.uint8 if bpp == 1 else np.dtype(">u2")
    a = np.frombuffer(payload[:need], dtype=dtype).reshape(height, width)
    return a.astype(np.int64), maxval


def encode_pgm(a: np.ndarray, maxval: int) -> bytes:
    a = np.asarray(a)
    h, w = a.shape
    header = f"P5\n{w} {h} {maxval}\n".encode("ascii")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    return header + a.astype(dtype).tobytes()


def decode_semantic_mask(buf: bytes) -> SemanticMask:
    a, maxval = decode_pgm(buf)
    if maxval != 255:
        raise FormatError(f"semantic mask must have maxval 255, got {maxval}")
    cls = _CODE_TO_CLASS[a]
    if (cls == 255).any():
        bad = int(a[cls == 255][0])
        raise FormatError(f"invalid class value {bad}")
    return SemanticMask(cls)


def encode_semantic_mask(mask: SemanticMask) -> bytes:
    return encode_pgm(CLASS_CODES[mask.data], 255)


def decode_instance_map(buf: bytes, check_connectivity: bool = True) -> InstanceMap:
    a, maxval = decode_pgm(buf)
    if maxval != 65535:
        raise FormatError(f"instance map must have maxval 65535, got {maxval}")
    inst = InstanceMap(a)
    if check_connectivity:
        split = disconnected_instances(inst)
        if split:
            raise FormatError(f"instances not 4-connected: {split[:10]}")
    return inst


def encode_instance_map(inst: InstanceMap) -> bytes:
    return encode_pgm(inst.ids, 65535)


def decode_gray_image(buf: bytes) -> GrayImage:
    a, maxval = decode_pgm(buf)
    if maxval != 255:
        raise FormatError(f"grey image must have maxval 255, got {maxval}")
    return GrayImage(a)


def encode_gray_image(img: GrayImage) -> bytes:
    return encode_pgm(img.data, 255)


def disconnected_instances(inst: InstanceMap) -> list[int]:
    """Ids whose pixel set is not a single 4-connected piece."""
    bad = []
    for k, sl in enumerate(ndimage.find_objects(inst.ids), start=1):
        if sl is None:
            continue
        _, n = ndimage.label(inst.ids[sl] == k, structure=FOUR_CONNECTED)
        if n > 1:
            bad.append(k)
    return bad


# --- dots CSV ---------------------------------------------------------------

def parse_dots(text: str) -> DotSet:
    lines = text.splitlines()
    if not lines:
        return DotSet()
    if lines[0].strip().replace(" ", "") != "x,y":
        raise FormatError(f'line 1: expected header "x,y", got {lines[0]!r}')
    pts = []
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise FormatError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            pts.append((int(row[0]), int(row[1])))
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer token in {','.join(row)!r}") from None
    try:
        return DotSet(tuple(pts))
    except ValueError as e:
        raise FormatError(str(e)) from None


def format_dots(dots: DotSet) -> str:
    out = io.StringIO()
    out.write("x,y\n")
    for x, y in dots:
        out.write(f"{x},{y}\n")
    return out.getvalue()


# --- file helpers -------------------------------------------------------------

PathLike = str | os.PathLike


def read_semantic_mask(path: PathLike) -> SemanticMask:
    return decode_semantic_mask(Path(path).read_bytes())


def write_semantic_mask(path: PathLike, mask: SemanticMask) -> None:
    Path(path).write_bytes(encode_semantic_mask(mask))


def read_instance_map(path: PathLike) -> InstanceMap:
    return decode_instance_map(Path(path).read_bytes())


def write_instance_map(path: PathLike, inst: InstanceMap) -> None:
    Path(path).write_bytes(encode_instance_map(inst))


def read_gray_image(path: PathLike) -> GrayImage:
    return decode_gray_image(Path(path).read_bytes())


def write_gray_image(path: PathLike, img: GrayImage) -> None:
    Path(path).write_bytes(encode_gray_image(img))


def read_dots(path: PathLike) -> DotSet:
    return parse_dots(Path(path).read_text(encoding="utf-8"))


def write_dots(path: PathLike, dots: DotSet) -> None:
    Path(path).write_text(format_dots(dots), encoding="utf-8", newline="\n")


def mask_from_codes(codes: Sequence[Sequence[int]] | np.ndarray) -> SemanticMask:
    """Build a mask from on-disk grey codes (handy in tests and notebooks)."""
    a = np.asarray(codes, dtype=np.int64)
    cls = _CODE_TO_CLASS[np.clip(a, 0, 255)]
    if ((a < 0) | (a > 255)).any() or (cls == 255).any():
        raise ValueError("codes must be 0, 128 or 255")
    return SemanticMask(cls)


def mask_from_rows(rows: Iterable[str]) -> SemanticMask:
    """Parse an ASCII sketch: '.' background, 'b' berry, 'e' edge."""
    table = {".": Cls.BACKGROUND, "b": Cls.BERRY, "e": Cls.EDGE}
    return SemanticMask(np.array([[table[c] for c in r] for r in rows], dtype=np.uint8))
