"""Frame containers and the ``PNNF`` array file format.

Container layout (all integers little-endian)::

    bytes  0-3   magic "PNNF"
    byte   4     version (1)
    byte   5     dtype code (1 = f32le, 2 = f64le)
    bytes  6-7   reserved, zero
    bytes  8-15  height (u64)
    bytes 16-23  width (u64)
    bytes 24-31  reserved, zero
    then height*width*itemsize payload bytes, row-major

Frame metadata (iso, black/white level, bit depth) lives in a YAML sidecar next to the
container, ``<container>.yaml``.
"""

import logging
import os
import struct
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Any
from typing import Sequence

import numpy as np
import yaml

from .schemas import frame_set_manifest_schema
from .schemas import frame_sidecar_schema

logger = logging.getLogger("darkproxy.frames")

MAGIC = b"PNNF"
VERSION = 1
HEADER = struct.Struct("<4sBBHQQQ")
DTYPES: dict[int, np.dtype] = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODES: dict[str, int] = {"<f4": 1, "<f8": 2}


class FrameFormatError(ValueError):
    pass


class FrameLengthError(FrameFormatError):
    pass


class FrameRangeError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RawFrame:
    """One 2-D sensor readout in digital numbers (DN)"""

    data: np.ndarray
    iso: int
    black_level: float
    white_level: float
    bit_depth: int

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype="<f4", order="C", copy=True)
        if data.ndim != 2:
            raise ShapeError(f"frame data must be 2-D, got shape {data.shape}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        if self.iso <= 0:
            raise ValueError(f"ISO must be a positive integer, got {self.iso}")
        if not self.black_level < self.white_level:
            raise ValueError(
                f"black level {self.black_level} must be below white level {self.white_level}"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RawFrame):
            return NotImplemented
        return (
            self.metadata() == other.metadata()
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def max_code(self) -> int:
        return 2**self.bit_depth - 1

    def validate(self, quantized: bool = True) -> "RawFrame":
        """Check the quantized-frame invariant: integer values in ``[0, 2**bit_depth - 1]``"""
        if not quantized:
            return self
        d = self.data
        if not np.all(np.isfinite(d)):
            raise FrameRangeError("quantized frame holds non-finite values")
        if d.size and (d.min() < 0 or d.max() > self.max_code):
            raise FrameRangeError(
                f"quantized frame values must lie in [0, {self.max_code}], "
                f"found [{d.min()}, {d.max()}]"
            )
        if not np.array_equal(d, np.round(d)):
            raise FrameRangeError("quantized frame holds non-integer values")
        return self

    def metadata(self) -> dict[str, Any]:
        return {
            "iso": int(self.iso),
            "black_level": float(self.black_level),
            "white_level": float(self.white_level),
            "bit_depth": int(self.bit_depth),
        }

    def with_data(self, data: np.ndarray) -> "RawFrame":
        return replace(self, data=data)

    def as_float(self) -> np.ndarray:
        return self.data.astype(np.float64)


@dataclass(frozen=True)
class FrameSet:
    """Frames of one ISO with identical geometry, e.g. the dark frames captured per ISO"""

    iso: int
    frames: tuple[RawFrame, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not frames:
            raise ValueError(f"FrameSet for ISO {self.iso} is empty")
        ref = frames[0]
        for f in frames:
            if f.iso != self.iso:
                raise ValueError(f"FrameSet for ISO {self.iso} holds a frame at ISO {f.iso}")
            if f.shape != ref.shape:
                raise ShapeError(f"FrameSet frames disagree in shape: {f.shape} != {ref.shape}")
            if f.black_level != ref.black_level:
                raise ValueError("FrameSet frames disagree in black level")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    @property
    def black_level(self) -> float:
        return self.frames[0].black_level

    def stack(self) -> np.ndarray:
        """``(n, height, width)`` float64 stack"""
        return np.stack([f.as_float() for f in self.frames])


def write_array(array: np.ndarray, path: str, dtype: str = "<f4") -> None:
    """Write a 1-D or 2-D array as a PNNF container; 1-D arrays are stored as one row"""
    if dtype not in CODES:
        raise ValueError(f"unsupported container dtype {dtype!r}")
    a = np.asarray(array)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"containers hold 2-D arrays, got shape {a.shape}")
    payload = np.ascontiguousarray(a, dtype=dtype)
    header = HEADER.pack(MAGIC, VERSION, CODES[dtype], 0, a.shape[0], a.shape[1], 0)
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def read_array(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise FrameFormatError(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, version, code, reserved, height, width, reserved2 = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FrameFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FrameFormatError(f"{path}: unsupported container version {version}")
    if code not in DTYPES:
        raise FrameFormatError(f"{path}: unknown dtype code {code}")
    if reserved or reserved2:
        raise FrameFormatError(f"{path}: reserved header bytes are not zero")
    dtype = DTYPES[code]
    expected = height * width * dtype.itemsize
    payload = raw[HEADER.size :]
    if len(payload) != expected:
        raise FrameLengthError(
            f"{path}: header declares {height}x{width} values ({expected} bytes), "
            f"payload holds {len(payload)} bytes"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(height, width).copy()


def sidecar_path(path: str) -> str:
    return f"{path}.yaml"


def write_frame(frame: RawFrame, path: str) -> None:
    write_array(frame.data, path, dtype="<f4")
    record = frame.metadata()
    record["container"] = os.path.basename(path)
    with open(sidecar_path(path), "w") as fh:
        yaml.safe_dump(record, fh, default_flow_style=False, sort_keys=True)


def read_frame(path: str, quantized: bool = True) -> RawFrame:
    """Read a frame container and its sidecar.

    With ``quantized=True`` (the default for captured frames) the quantized-frame invariant
    is enforced and :class:`FrameRangeError` is raised on violation.

    """
    data = read_array(path)
    side = sidecar_path(path)
    if not os.path.exists(side):
        raise FrameFormatError(f"{path}: missing metadata sidecar {side}")
    with open(side) as fh:
        record = yaml.safe_load(fh)
    if not isinstance(record, dict):
        raise FrameFormatError(f"{side}: expected mapping at top level")
    record = frame_sidecar_schema.validate(record)
    if data.dtype != np.dtype("<f4"):
        raise FrameFormatError(f"{path}: frames must be stored as f32le")
    frame = RawFrame(
        data=data,
        iso=record["iso"],
        black_level=record["black_level"],
        white_level=record["white_level"],
        bit_depth=record["bit_depth"],
    )
    return frame.validate(quantized=quantized)


def write_frame_set(frames: Sequence[RawFrame], directory: str, prefix: str) -> list[str]:
    paths: list[str] = []
    for i, frame in enumerate(frames):
        path = os.path.join(directory, f"{prefix}_{i:04d}.pnnf")
        write_frame(frame, path)
        paths.append(path)
    return paths


@dataclass(frozen=True)
class FrameSetEntry:
    """One row of a frame-set manifest: the frames of one ISO at one irradiance level"""

    frame_set: FrameSet
    irradiance: float = 0.0

    @property
    def iso(self) -> int:
        return self.frame_set.iso


def write_frame_set_manifest(
    entries: Sequence[tuple[FrameSet, float, Sequence[str]]], path: str, kind: str = "dark"
) -> str:
    """Write ``darks.yaml``/``flats.yaml``; frame paths are stored relative to the manifest"""
    root = os.path.dirname(os.path.abspath(path))
    sets = []
    for frame_set, irradiance, paths in entries:
        sets.append(
            {
                "iso": int(frame_set.iso),
                "irradiance": float(irradiance),
                "frames": [os.path.relpath(os.path.abspath(p), root) for p in paths],
            }
        )
    with open(path, "w") as fh:
        yaml.safe_dump({"kind": kind, "sets": sets}, fh, default_flow_style=False, sort_keys=True)
    return path


def read_frame_set_manifest(path: str) -> tuple[str, list[FrameSetEntry]]:
    with open(path) as fh:
        record = yaml.safe_load(fh)
    if not isinstance(record, dict):
        raise FrameFormatError(f"{path}: expected mapping at top level")
    record = frame_set_manifest_schema.validate(record)
    root = os.path.dirname(os.path.abspath(path))
    entries: list[FrameSetEntry] = []
    for item in record["sets"]:
        frames = [read_frame(os.path.join(root, p)) for p in item["frames"]]
        frame_set = FrameSet(iso=item["iso"], frames=tuple(frames))
        entries.append(FrameSetEntry(frame_set, item["irradiance"]))
    logger.debug(f"{path}: read {len(entries)} {record['kind']} frame sets")
    return record["kind"], entries
