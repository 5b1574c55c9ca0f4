"""Demonstration dataset: trajectories, language filtering, subsampling, file format.

File layout (all integers little-endian)::

    MASKSEEK v1\\n
    per trajectory:
        task_label \\t instruction(%-encoded) \\t env_variant \\t n_frames
            \\t static WxH \\t gripper WxH \\t episode_seed \\n
        per frame:
            u32 len, RLE static mask
            u32 len, RLE gripper mask
            u8 mode, f64 dx, f64 dy, f64 dz, u8 gripper
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import enum
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple
from urllib.parse import quote, unquote

import numpy as np

from .mask import BinaryMask, RunLengthError, StateLatents, rle_decode, rle_encode

MAGIC = b"MASKSEEK v1\n"
MAX_FRAMES = 64
MAX_STEP = 0.05


class Mode(enum.IntEnum):
    ABSOLUTE = 0
    RELATIVE = 1


class Grip(enum.IntEnum):
    OPEN = 0
    CLOSE = 1
    HOLD = 2


@dataclass(frozen=True)
class Action:
    """Absolute target coordinates or a relative delta, plus a gripper command."""

    mode: Mode
    dx: float
    dy: float
    dz: float
    gripper: Grip = Grip.HOLD

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "gripper", Grip(self.gripper))
        if self.mode is Mode.RELATIVE:
            bound = MAX_STEP + 1e-12
            if max(abs(self.dx), abs(self.dy), abs(self.dz)) > bound:
                raise ValueError(f"relative step exceeds {MAX_STEP}: {self}")


@dataclass
class Trajectory:
    task_label: str
    instruction: str
    env_variant: str
    frames: List[Tuple[StateLatents, Action]]
    episode_seed: int = -1

    def __post_init__(self):
        n = len(self.frames)
        if not 1 <= n <= MAX_FRAMES:
            raise ValueError(f"trajectory must hold 1..{MAX_FRAMES} frames, got {n}")
        s_shape = self.frames[0][0].static_mask.shape
        g_shape = self.frames[0][0].gripper_mask.shape
        for latents, _ in self.frames:
            if latents.static_mask.shape != s_shape or latents.gripper_mask.shape != g_shape:
                raise ValueError("all frames of a trajectory must share mask dimensions")

    def __len__(self):
        return len(self.frames)

    @property
    def static_shape(self) -> Tuple[int, int]:
        return self.frames[0][0].static_mask.shape

    @property
    def gripper_shape(self) -> Tuple[int, int]:
        return self.frames[0][0].gripper_mask.shape


@dataclass
class Dataset:
    trajectories: List[Trajectory] = field(default_factory=list)

    def __post_init__(self):
        self.trajectories = list(self.trajectories)

    @property
    def task_index(self) -> Dict[str, List[int]]:
        index: Dict[str, List[int]] = {}
        for i, traj in enumerate(self.trajectories):
            index.setdefault(traj.task_label, []).append(i)
        return index

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def add(self, traj: Trajectory) -> None:
        self.trajectories.append(traj)


def split_frames(task_label: str, instruction: str, env_variant: str,
                 frames: Sequence[Tuple[StateLatents, Action]],
                 episode_seed: int = -1) -> List[Trajectory]:
    """Cut a long rollout into consecutive trajectories of at most 64 frames."""
    return [Trajectory(task_label, instruction, env_variant, list(frames[i:i + MAX_FRAMES]),
                       episode_seed)
            for i in range(0, len(frames), MAX_FRAMES)]


# ---------------------------------------------------------------------------
# queries

def filter_by_task(dataset: Dataset, task_label: str) -> List[Trajectory]:
    return [t for t in dataset.trajectories if t.task_label == task_label]


def subsample(dataset: Dataset, fraction: float, per_variant: bool = True,
              seed: int = 0) -> Dataset:
    """Uniform draw without replacement of ``ceil(fraction * n)`` trajectories.

    With ``per_variant`` the draw is done separately for every environment
    variant. Selected trajectories keep their original order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    trajs = dataset.trajectories
    if fraction == 1.0:
        return Dataset(list(trajs))
    rng = np.random.default_rng(seed)
    if per_variant:
        groups: Dict[str, List[int]] = {}
        for i, t in enumerate(trajs):
            groups.setdefault(t.env_variant, []).append(i)
        pools = [groups[v] for v in sorted(groups)]
    else:
        pools = [list(range(len(trajs)))]
    chosen: List[int] = []
    for idx in pools:
        take = math.ceil(fraction * len(idx))
        picks = rng.choice(len(idx), size=take, replace=False)
        chosen.extend(idx[p] for p in picks)
    return Dataset([trajs[i] for i in sorted(chosen)])


def strided_frames(traj: Trajectory, stride: int) -> Iterator[Tuple[int, StateLatents]]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    for i in range(0, len(traj.frames), stride):
        yield i, traj.frames[i][0]


# ---------------------------------------------------------------------------
# file format

class DatasetFormatError(Exception):
    """The file is not a well-formed dataset."""


class FormatVersionError(DatasetFormatError):
    pass


class TruncatedDatasetError(DatasetFormatError):
    pass


class ChecksumMismatchError(DatasetFormatError):
    pass


class RunLengthFormatError(DatasetFormatError):
    pass


class RecordStructureError(DatasetFormatError):
    pass


_ACTION = struct.Struct("<B3dB")
_U32 = struct.Struct("<I")


def _dims(shape: Tuple[int, int]) -> str:
    h, w = shape
    return f"{w}x{h}"


def _parse_dims(text: str) -> Tuple[int, int]:
    try:
        w, h = (int(v) for v in text.split("x"))
    except ValueError:
        raise RecordStructureError(f"bad dimension field {text!r}") from None
    if w <= 0 or h <= 0:
        raise RecordStructureError(f"bad dimension field {text!r}")
    return w, h


def dumps_dataset(dataset: Dataset) -> bytes:
    out = bytearray(MAGIC)
    for t in dataset.trajectories:
        fields = [t.task_label, quote(t.instruction, safe=""), t.env_variant, str(len(t)),
                  _dims(t.static_shape), _dims(t.gripper_shape), str(t.episode_seed)]
        for f in (t.task_label, t.env_variant):
            if "\t" in f or "\n" in f:
                raise ValueError(f"field may not contain tabs or newlines: {f!r}")
        out += ("\t".join(fields) + "\n").encode("utf-8")
        for latents, act in t.frames:
            for m in (latents.static_mask, latents.gripper_mask):
                blob = rle_encode(m)
                out += _U32.pack(len(blob))
                out += blob
            out += _ACTION.pack(int(act.mode), act.dx, act.dy, act.dz, int(act.gripper))
    out += _U32.pack(zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_bytes(dumps_dataset(dataset))


class _Reader:
    def __init__(self, buf: bytes, end: int):
        self.buf = buf
        self.pos = 0
        self.end = end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedDatasetError(f"unexpected end of data at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def line(self) -> str:
        nl = self.buf.find(b"\n", self.pos, self.end)
        if nl < 0:
            raise TruncatedDatasetError(f"unterminated metadata line at byte {self.pos}")
        raw = self.buf[self.pos:nl]
        self.pos = nl + 1
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise RecordStructureError("metadata line is not valid UTF-8") from None


def loads_dataset(buf: bytes) -> Dataset:
    """Parse structure, then verify the CRC, then decode the masks."""
    if not buf.startswith(MAGIC):
        head = buf[:len(MAGIC)]
        if MAGIC.startswith(head):
            raise TruncatedDatasetError("file ends inside the header")
        raise FormatVersionError(f"unsupported header {head!r}")
    if len(buf) < len(MAGIC) + 4:
        raise TruncatedDatasetError("file too short for a checksum")
    rd = _Reader(buf, len(buf) - 4)
    rd.pos = len(MAGIC)
    records = []
    while rd.pos < rd.end:
        meta = rd.line().split("\t")
        if len(meta) != 7:
            raise RecordStructureError(f"expected 7 metadata fields, got {len(meta)}")
        label, instr, variant, count, sdims, gdims, seed = meta
        try:
            n = int(count)
            episode_seed = int(seed)
        except ValueError:
            raise RecordStructureError("non-integer frame count or seed") from None
        if not 1 <= n <= MAX_FRAMES:
            raise RecordStructureError(f"frame count {n} outside 1..{MAX_FRAMES}")
        sw, sh = _parse_dims(sdims)
        gw, gh = _parse_dims(gdims)
        raw_frames = []
        for _ in range(n):
            blobs = []
            for _ in range(2):
                (length,) = _U32.unpack(rd.take(4))
                blobs.append(rd.take(length))
            mode, dx, dy, dz, grip = _ACTION.unpack(rd.take(_ACTION.size))
            raw_frames.append((blobs, (mode, dx, dy, dz, grip)))
        records.append((label, unquote(instr), variant, episode_seed, (sw, sh), (gw, gh),
                        raw_frames))
    (stored_crc,) = _U32.unpack(buf[-4:])
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumMismatchError("CRC-32 mismatch")

    trajectories = []
    for label, instr, variant, episode_seed, (sw, sh), (gw, gh), raw_frames in records:
        frames = []
        for (sblob, gblob), (mode, dx, dy, dz, grip) in raw_frames:
            try:
                latents = StateLatents(rle_decode(sblob, sw, sh), rle_decode(gblob, gw, gh))
            except RunLengthError as exc:
                raise RunLengthFormatError(str(exc)) from None
            try:
                act = Action(Mode(mode), dx, dy, dz, Grip(grip))
            except ValueError as exc:
                raise RecordStructureError(f"invalid action: {exc}") from None
            frames.append((latents, act))
        trajectories.append(Trajectory(label, instr, variant, frames, episode_seed))
    return Dataset(trajectories)


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_bytes())


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if len(a) != len(b):
        return False
    for ta, tb in zip(a.trajectories, b.trajectories):
        if (ta.task_label, ta.instruction, ta.env_variant, ta.episode_seed, len(ta)) != \
                (tb.task_label, tb.instruction, tb.env_variant, tb.episode_seed, len(tb)):
            return False
        for (la, aa), (lb, ab) in zip(ta.frames, tb.frames):
            if la.static_mask != lb.static_mask or la.gripper_mask != lb.gripper_mask:
                return False
            if aa != ab:
                return False
    return True
