"""Silhouette sequences stored as directories of binary PGM (P5) frames."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from loguru import logger

from gaitstrip.modules.errors import SequenceError
from gaitstrip.modules.tensor import Tensor

FRAME_SIZE = (64, 44)
MAX_GRAY = 255
BINARIZE_AT = 0.5

# magic, width, height, maxval; '#' comments may sit between tokens
_HEADER_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path: str | Path) -> np.ndarray:
    """Decode one 8-bit P5 frame into a (height, width) uint8 array."""
    path = Path(path)
    data = path.read_bytes()
    tokens = []
    pos = 0
    for _ in range(4):
        match = _HEADER_TOKEN.match(data, pos)
        if match is None:
            msg = f"{path}: not a PGM file (incomplete header)"
            raise SequenceError(msg)
        tokens.append(match.group(1))
        pos = match.end()
    if tokens[0] != b"P5":
        msg = f"{path}: not a binary PGM (magic {tokens[0][:8]!r})"
        raise SequenceError(msg)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        msg = f"{path}: malformed PGM header {tokens[1:]!r}"
        raise SequenceError(msg) from e
    if not 0 < maxval <= MAX_GRAY:
        msg = f"{path}: only 8-bit PGM is supported, maxval={maxval}"
        raise SequenceError(msg)
    # exactly one whitespace byte separates the header from the raster
    raster = data[pos + 1 : pos + 1 + width * height]
    if len(raster) != width * height:
        msg = f"{path}: raster holds {len(raster)} bytes, expected {width * height}"
        raise SequenceError(msg)
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def write_pgm(path: str | Path, frame: np.ndarray) -> None:
    """Encode a (height, width) uint8 array as a P5 frame."""
    frame = np.asarray(frame)
    if frame.ndim != 2:  # noqa: PLR2004
        msg = f"frame must be 2-D, got shape {frame.shape}"
        raise SequenceError(msg)
    height, width = frame.shape
    header = f"P5\n{width} {height}\n{MAX_GRAY}\n".encode("ascii")
    Path(path).write_bytes(header + frame.astype(np.uint8).tobytes())


def load_sequence(
    directory: str | Path,
    *,
    binarize: bool = False,
    frame_size: tuple[int, int] = FRAME_SIZE,
) -> Tensor:
    """Stack the frames of a directory, in filename order, into (1, 1, T, H, W) in [0, 1]."""
    directory = Path(directory)
    if not directory.is_dir():
        msg = f"{directory} is not a directory"
        raise SequenceError(msg)
    files = sorted(p for p in directory.iterdir() if p.is_file())
    if not files:
        msg = f"{directory} holds no frames"
        raise SequenceError(msg)

    frames = []
    for path in files:
        frame = read_pgm(path)
        if frame.shape != frame_size:
            msg = f"{path}: frame is {frame.shape[0]}x{frame.shape[1]}, expected {frame_size[0]}x{frame_size[1]}"
            raise SequenceError(msg)
        frames.append(frame)

    values = np.stack(frames).astype(np.float32) / np.float32(MAX_GRAY)
    if binarize:
        values = (values >= BINARIZE_AT).astype(np.float32)
    logger.debug(f"loaded {len(frames)} frames from {directory}")
    return Tensor(values[None, None])
