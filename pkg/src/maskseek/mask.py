"""Binary-mask latents, colour segmentation and the similarity scores.

Masks are stored as read-only boolean arrays together with a packed
``uint64`` view so that intersections reduce to ``bitwise_and`` plus a
popcount.  All scoring functions are pure.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage


class MaskDimensionError(ValueError):
    """Two masks from cameras with different resolutions were compared."""


class RunLengthError(ValueError):
    """An RLE stream does not describe a mask of the requested size."""


def pack_words(bits: np.ndarray) -> np.ndarray:
    """Pack a flat boolean array into little-endian uint64 words (zero padded)."""
    packed = np.packbits(bits.ravel())
    pad = (-packed.size) % 8
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, dtype=np.uint8)])
    return packed.view("<u8")


class BinaryMask:
    """Fixed-size bitmap, row-major with a top-left origin."""

    __slots__ = ("_bits", "_words", "_popcount")

    def __init__(self, bits: np.ndarray):
        arr = np.array(bits, dtype=bool, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        self._bits = arr
        self._words: Optional[np.ndarray] = None
        self._popcount = int(np.count_nonzero(arr))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def ones(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def from_flat(cls, flat, width: int, height: int) -> "BinaryMask":
        flat = np.asarray(flat, dtype=bool)
        if flat.size != width * height:
            raise ValueError(f"expected {width * height} bits, got {flat.size}")
        return cls(flat.reshape(height, width))

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def width(self) -> int:
        return self._bits.shape[1]

    @property
    def height(self) -> int:
        return self._bits.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self._bits.shape

    @property
    def popcount(self) -> int:
        return self._popcount

    @property
    def words(self) -> np.ndarray:
        if self._words is None:
            words = pack_words(self._bits)
            words.setflags(write=False)
            self._words = words
        return self._words

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._bits, other._bits))

    __hash__ = None

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, popcount={self.popcount})"


@dataclass(frozen=True)
class StateLatents:
    """Static-camera and gripper-camera masks for one timestep."""

    static_mask: BinaryMask
    gripper_mask: BinaryMask


def _check_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise MaskDimensionError(
            f"incompatible camera resolutions: {a.width}x{a.height} vs {b.width}x{b.height}")


def intersection_count(a: BinaryMask, b: BinaryMask) -> int:
    _check_dims(a, b)
    return int(np.bitwise_count(a.words & b.words).sum())


def dice_from_counts(inter: int, pa: int, pb: int) -> float:
    total = pa + pb
    if total == 0:
        return 0.0
    return (2.0 * inter) / total


def size_from_counts(pa: int, pb: int) -> float:
    hi = max(pa, pb)
    if hi == 0:
        return 0.0
    return min(pa, pb) / hi


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """Dice overlap ``2|A&B| / (|A|+|B|)``; two empty masks score 0."""
    inter = intersection_count(a, b)
    return dice_from_counts(inter, a.popcount, b.popcount)


def size_coef(a: BinaryMask, b: BinaryMask) -> float:
    """Popcount ratio ``min/max``; only popcounts are used so dims may differ."""
    return size_from_counts(a.popcount, b.popcount)


def weighted_dice(a: BinaryMask, b: BinaryMask) -> float:
    return dice(a, b) * size_coef(a, b)


def combine(gripper_score: float, static_score: float, alpha: float) -> float:
    return alpha * gripper_score + (1.0 - alpha) * static_score


def sim_zs(z: StateLatents, s: StateLatents, alpha: float) -> float:
    """Alpha-weighted blend of the gripper-pair and static-pair weighted Dice."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    g = weighted_dice(z.gripper_mask, s.gripper_mask)
    st = weighted_dice(z.static_mask, s.static_mask)
    return combine(g, st, alpha)


# ---------------------------------------------------------------------------
# segmentation

@dataclass(frozen=True)
class ColorSpec:
    """HSV box; hue in degrees and allowed to wrap (e.g. ``(340, 20)``)."""

    hue_range: Tuple[float, float]
    sat_range: Tuple[float, float] = (0.0, 1.0)
    val_range: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        h0, h1 = self.hue_range
        if not (0 <= h0 < 360 and 0 <= h1 < 360):
            raise ValueError(f"hue bounds must lie in [0, 360): {self.hue_range}")
        for name, (lo, hi) in (("sat", self.sat_range), ("val", self.val_range)):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError(f"{name} range must be ordered within [0, 1]: {(lo, hi)}")


@dataclass(frozen=True)
class PositionFilter:
    """Keep only components inside ``region`` with area in ``[min_area, max_area]``.

    ``region`` is ``(row0, col0, row1, col1)`` with exclusive upper bounds.
    """

    region: Optional[Tuple[int, int, int, int]] = None
    min_area: int = 0
    max_area: Optional[int] = None

    def __post_init__(self):
        if self.max_area is not None and self.min_area > self.max_area:
            raise ValueError("min_area must not exceed max_area")
        if self.region is not None:
            r0, c0, r1, c1 = self.region
            if not (0 <= r0 <= r1 and 0 <= c0 <= c1):
                raise ValueError(f"malformed region {self.region}")


PERMISSIVE = PositionFilter()


def rgb_to_hsv(image: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexcone HSV from 8-bit RGB: hue in degrees [0, 360), sat and val in [0, 1]."""
    rgb = np.asarray(image, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.zeros_like(mx)
    rmax = (delta > 0) & (mx == r)
    gmax = (delta > 0) & (mx == g) & ~rmax
    bmax = (delta > 0) & ~rmax & ~gmax
    hue[rmax] = (60.0 * ((g - b) / safe))[rmax] % 360.0
    hue[gmax] = (60.0 * ((b - r) / safe) + 120.0)[gmax]
    hue[bmax] = (60.0 * ((r - g) / safe) + 240.0)[bmax]
    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return hue, sat, mx


def hsv_to_rgb(hue: float, sat: float, val: float) -> Tuple[int, int, int]:
    """Inverse of :func:`rgb_to_hsv` for a single colour, rounded to 8 bits."""
    c = val * sat
    hp = (hue % 360.0) / 60.0
    x = c * (1 - abs(hp % 2 - 1))
    table = [(c, x, 0), (x, c, 0), (0, c, x), (0, x, c), (x, 0, c), (c, 0, x)]
    r, g, b = table[int(hp) % 6]
    m = val - c
    return tuple(int(round((v + m) * 255)) for v in (r, g, b))


def color_match(image: np.ndarray, spec: ColorSpec) -> np.ndarray:
    hue, sat, val = rgb_to_hsv(image)
    h0, h1 = spec.hue_range
    if h0 <= h1:
        hmask = (hue >= h0) & (hue <= h1)
    else:
        hmask = (hue >= h0) | (hue <= h1)
    return (hmask
            & (sat >= spec.sat_range[0]) & (sat <= spec.sat_range[1])
            & (val >= spec.val_range[0]) & (val <= spec.val_range[1]))


_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def segment(image: np.ndarray, spec: ColorSpec, filt: PositionFilter = PERMISSIVE) -> BinaryMask:
    """Colour threshold followed by region and 4-connected area filtering."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError("segment expects a nonempty HxWx3 image")
    hit = color_match(image, spec)
    if filt.region is not None:
        r0, c0, r1, c1 = filt.region
        inside = np.zeros_like(hit)
        inside[r0:r1, c0:c1] = True
        hit &= inside
    if filt.min_area > 0 or filt.max_area is not None:
        labels, n = ndimage.label(hit, structure=_FOUR_CONNECTED)
        if n:
            areas = np.bincount(labels.ravel())
            keep = areas >= filt.min_area
            if filt.max_area is not None:
                keep &= areas <= filt.max_area
            keep[0] = False
            hit = keep[labels]
    return BinaryMask(hit)


# ---------------------------------------------------------------------------
# run-length encoding

def rle_runs(mask: BinaryMask) -> np.ndarray:
    flat = mask.bits.ravel()
    if flat.size == 0:
        return np.zeros(1, dtype=np.int64)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(edges)
    if flat[0]:
        runs = np.concatenate([[0], runs])
    return runs


def rle_encode(mask: BinaryMask) -> bytes:
    """Alternating run counts (zeros first) as little-endian uint32."""
    runs = rle_runs(mask)
    return runs.astype("<u4").tobytes()


def rle_decode(data: bytes, width: int, height: int) -> BinaryMask:
    if len(data) % 4:
        raise RunLengthError(f"RLE stream length {len(data)} is not a multiple of 4")
    runs = np.frombuffer(data, dtype="<u4").astype(np.int64)
    total = int(runs.sum())
    if total != width * height:
        raise RunLengthError(f"run counts sum to {total}, expected {width * height}")
    values = np.arange(runs.size) % 2 == 1
    flat = np.repeat(values, runs)
    return BinaryMask.from_flat(flat, width, height)


def rle_pack(runs) -> bytes:
    """Helper for tests and fixtures: raw uint32 runs to bytes."""
    return struct.pack(f"<{len(runs)}I", *runs)
