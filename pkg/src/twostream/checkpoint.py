"""
TCLM checkpoints.

Layout, all little-endian: magic b"TCLM", version u32, then until end of
file named blocks of (name length u32, name bytes, ndim u32, dims u32 each,
f64 payload). Model switches are stored as 0-d blocks named `meta.*`.
"""
import logging
import math
import struct

from collections.abc import Mapping
from pathlib import Path

import numpy as np

from twostream.collaborative import CollabModel, CollabPair, CollabParams
from twostream.common import STREAMS
from twostream.errors import CorruptFileError, MissingFileError, UnsupportedVersionError
from twostream.layers import LinearHead
from twostream.spatial import SpatialHead
from twostream.stream import StreamModel
from twostream.temporal import LSTMParams
from twostream.tensor import Array, Tensor

logger = logging.getLogger(__name__)

MAGIC = b'TCLM'
VERSION = 1

_U32 = struct.Struct('<I')

STREAM_FILES = {'static': 'static.tclm', 'motion': 'motion.tclm'}
COLLAB_FILE = 'collab.tclm'


def encode_checkpoint(blocks: Mapping[str, Array]) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION)]
    for name in sorted(blocks):
        value = np.asarray(blocks[name], dtype=np.float64)
        encoded = name.encode('utf-8')
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(value.ndim))
        parts.extend(_U32.pack(d) for d in value.shape)
        parts.append(value.astype('<f8').tobytes())
    return b''.join(parts)


def decode_checkpoint(data: bytes) -> dict[str, Array]:
    if len(data) < 8 or data[:4] != MAGIC:
        raise CorruptFileError('not a TCLM checkpoint')
    (version,) = _U32.unpack_from(data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f'checkpoint version {version}')

    def u32(offset: int) -> int:
        if offset + 4 > len(data):
            raise CorruptFileError('truncated checkpoint')
        return _U32.unpack_from(data, offset)[0]

    blocks: dict[str, Array] = {}
    offset = 8
    while offset < len(data):
        name_length = u32(offset)
        offset += 4
        if offset + name_length > len(data):
            raise CorruptFileError('truncated block name')
        name = data[offset:offset + name_length].decode('utf-8', errors='strict')
        if name in blocks:
            raise CorruptFileError(f'duplicate block {name}')
        offset += name_length
        ndim = u32(offset)
        offset += 4
        dims = []
        for _ in range(ndim):
            dims.append(u32(offset))
            offset += 4
        count = math.prod(dims)
        end = offset + 8 * count
        if end > len(data):
            raise CorruptFileError(f'truncated payload of {name}')
        blocks[name] = (
            np.frombuffer(data, dtype='<f8', count=count, offset=offset)
            .reshape(dims)
            .astype(np.float64)
        )
        offset = end
    return blocks


def save_checkpoint(path: Path | str, blocks: Mapping[str, Array]) -> None:
    Path(path).write_bytes(encode_checkpoint(blocks))


def load_checkpoint(path: Path | str) -> dict[str, Array]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(str(path))
    try:
        return decode_checkpoint(path.read_bytes())
    except UnicodeDecodeError as e:
        raise CorruptFileError(f'{path}: {e}') from e


def _param(blocks: Mapping[str, Array], name: str) -> Tensor:
    if name not in blocks:
        raise CorruptFileError(f'checkpoint lacks {name}')
    return Tensor(blocks[name], requires_grad=True)


def _head(blocks: Mapping[str, Array], prefix: str) -> LinearHead:
    return LinearHead(_param(blocks, f'{prefix}.weight'), _param(blocks, f'{prefix}.bias'))


def _meta(blocks: Mapping[str, Array], name: str) -> float:
    key = f'meta.{name}'
    if key not in blocks:
        raise CorruptFileError(f'checkpoint lacks {key}')
    return float(blocks[key])


def stream_blocks(model: StreamModel) -> dict[str, Array]:
    blocks = model.state()
    blocks['meta.stream'] = np.array(float(STREAMS.index(model.stream_tag)))
    blocks['meta.spatial_attention'] = np.array(float(model.spatial_attention))
    blocks['meta.temporal_attention'] = np.array(float(model.temporal_attention))
    return blocks


def stream_from_blocks(blocks: Mapping[str, Array]) -> StreamModel:
    return StreamModel(
        spatial=SpatialHead(
            cam_kernels=_param(blocks, 'spatial.cam_kernels'),
            cam_bias=_param(blocks, 'spatial.cam_bias'),
            classifier_weights=_param(blocks, 'spatial.classifier_weights'),
            classifier_bias=_param(blocks, 'spatial.classifier_bias'),
        ),
        lstm=LSTMParams(
            input_weights=_param(blocks, 'lstm.input_weights'),
            recurrent_weights=_param(blocks, 'lstm.recurrent_weights'),
            bias=_param(blocks, 'lstm.bias'),
        ),
        feature_head=_head(blocks, 'feature_head'),
        lstm_head=_head(blocks, 'lstm_head'),
        stream_tag=STREAMS[int(_meta(blocks, 'stream'))],
        spatial_attention=bool(_meta(blocks, 'spatial_attention')),
        temporal_attention=bool(_meta(blocks, 'temporal_attention')),
    )


def collab_blocks(model: CollabModel) -> dict[str, Array]:
    blocks = model.state()
    blocks['meta.rounds'] = np.array(float(model.rounds))
    blocks['meta.segments'] = np.array(float(model.segments))
    return blocks


def collab_from_blocks(blocks: Mapping[str, Array]) -> CollabModel:
    def direction(prefix: str) -> CollabParams:
        return CollabParams(
            W=_param(blocks, f'{prefix}.W'),
            W_o=_param(blocks, f'{prefix}.W_o'),
            W_h=_param(blocks, f'{prefix}.W_h'),
        )

    return CollabModel(
        pair=CollabPair(motion=direction('pair.motion'), static=direction('pair.static')),
        static_head=_head(blocks, 'static_head'),
        motion_head=_head(blocks, 'motion_head'),
        rounds=int(_meta(blocks, 'rounds')),
        segments=int(_meta(blocks, 'segments')),
    )


def save_stream_model(path: Path | str, model: StreamModel) -> None:
    save_checkpoint(path, stream_blocks(model))
    logger.info('saved %s stream checkpoint to %s', model.stream_tag, path)


def load_stream_model(path: Path | str) -> StreamModel:
    return stream_from_blocks(load_checkpoint(path))


def save_collab_model(path: Path | str, model: CollabModel) -> None:
    save_checkpoint(path, collab_blocks(model))
    logger.info('saved collaborative checkpoint to %s', path)


def load_collab_model(path: Path | str) -> CollabModel:
    return collab_from_blocks(load_checkpoint(path))
