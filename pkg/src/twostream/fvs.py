"""
FVS feature-video files.

Layout, all little-endian: magic b"FVS1", version u32, label u32, T u32,
h u32, w u32, K u32; T static grids then T motion grids as row-major f32;
planted-frame count u32 + indices u32; planted-cell count u32 + indices u32.
"""
import struct

from pathlib import Path

import numpy as np

from twostream.common import VideoSample
from twostream.errors import (
    BadLabelError,
    CorruptFileError,
    MissingFileError,
    UnsupportedVersionError,
)

MAGIC = b'FVS1'
VERSION = 1

_HEADER = struct.Struct('<4s6I')
_COUNT = struct.Struct('<I')
_U32_MAX = 2**32 - 1


def encode_fvs(sample: VideoSample) -> bytes:
    T, h, w, K = sample.static_frames.shape
    if sample.motion_frames.shape != (T, h, w, K):
        raise CorruptFileError(
            f'{sample.id}: motion {sample.motion_frames.shape} vs static {(T, h, w, K)}'
        )
    if not 0 <= sample.label <= _U32_MAX:
        raise BadLabelError(f'{sample.id}: label {sample.label}')
    planted = (sample.planted_frames, sample.planted_cells)
    values = (T, h, w, K, *map(len, planted), *planted[0], *planted[1])
    if not all(0 <= value <= _U32_MAX for value in values):
        raise CorruptFileError(f'{sample.id}: sizes and indices must fit in u32')
    parts = [
        _HEADER.pack(MAGIC, VERSION, sample.label, T, h, w, K),
        sample.static_frames.astype('<f4').tobytes(),
        sample.motion_frames.astype('<f4').tobytes(),
    ]
    for indices in (sample.planted_frames, sample.planted_cells):
        parts.append(_COUNT.pack(len(indices)))
        parts.append(np.asarray(indices, dtype='<u4').tobytes())
    return b''.join(parts)


def decode_fvs(data: bytes, video_id: str = '') -> VideoSample:
    if len(data) < _HEADER.size:
        raise CorruptFileError(f'{video_id}: truncated header')
    magic, version, label, T, h, w, K = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptFileError(f'{video_id}: bad magic {magic!r}')
    if version != VERSION:
        raise UnsupportedVersionError(f'{video_id}: version {version}')

    offset = _HEADER.size
    grid_count = T * h * w * K
    grids = []
    for _ in range(2):
        end = offset + 4 * grid_count
        if end > len(data):
            raise CorruptFileError(f'{video_id}: truncated activations')
        grids.append(
            np.frombuffer(data, dtype='<f4', count=grid_count, offset=offset)
            .reshape(T, h, w, K)
            .astype(np.float64)
        )
        offset = end

    index_sets = []
    for _ in range(2):
        if offset + _COUNT.size > len(data):
            raise CorruptFileError(f'{video_id}: truncated index block')
        (count,) = _COUNT.unpack_from(data, offset)
        offset += _COUNT.size
        end = offset + 4 * count
        if end > len(data):
            raise CorruptFileError(f'{video_id}: truncated index block')
        indices = (
            np.frombuffer(data, dtype='<u4', count=count, offset=offset) if count else ()
        )
        index_sets.append(tuple(int(i) for i in indices))
        offset = end
    if offset != len(data):
        raise CorruptFileError(f'{video_id}: {len(data) - offset} trailing bytes')

    return VideoSample(
        id=video_id,
        label=label,
        static_frames=grids[0],
        motion_frames=grids[1],
        planted_frames=index_sets[0],
        planted_cells=index_sets[1],
    )


def write_fvs(path: Path | str, sample: VideoSample) -> None:
    Path(path).write_bytes(encode_fvs(sample))


def read_fvs(path: Path | str, video_id: str | None = None) -> VideoSample:
    """Read one FVS file; the id defaults to the file stem."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(str(path))
    return decode_fvs(path.read_bytes(), path.stem if video_id is None else video_id)
