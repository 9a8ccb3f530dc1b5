import json
import struct

import numpy as np
import pytest

from twostream.checkpoint import (
    MAGIC,
    collab_blocks,
    decode_checkpoint,
    encode_checkpoint,
    load_collab_model,
    load_stream_model,
    save_collab_model,
    save_stream_model,
    stream_blocks,
    stream_from_blocks,
)
from twostream.collaborative import CollabModel, StreamFeatures
from twostream.common import VideoSample
from twostream.errors import (
    BadLabelError,
    CorruptFileError,
    DuplicateIdError,
    ManifestNotFoundError,
    MissingFileError,
    ShapeMismatchError,
    UnsupportedVersionError,
)
from twostream.fvs import decode_fvs, encode_fvs, read_fvs, write_fvs
from twostream.manifest import (
    Manifest,
    ManifestEntry,
    load_dataset,
    read_manifest,
)
from twostream.stream import StreamModel
from twostream.tensor import Tensor, no_grad


@pytest.fixture()
def sample(rng) -> VideoSample:
    return VideoSample(
        id='clip',
        label=2,
        static_frames=rng.normal(size=(3, 2, 4, 5)),
        motion_frames=rng.normal(size=(3, 2, 4, 5)),
        planted_frames=(1, 2),
        planted_cells=(0, 5, 6),
    )


def test_fvs_round_trip_within_single_precision(tmp_path, sample):
    path = tmp_path / 'clip.fvs'
    write_fvs(path, sample)
    loaded = read_fvs(path)
    assert loaded.id == 'clip'
    assert loaded.label == 2
    assert loaded.planted_frames == (1, 2)
    assert loaded.planted_cells == (0, 5, 6)
    np.testing.assert_allclose(loaded.static_frames, sample.static_frames, rtol=1e-6)
    np.testing.assert_allclose(loaded.motion_frames, sample.motion_frames, rtol=1e-6)


def test_fvs_without_ground_truth(sample):
    bare = VideoSample('bare', 0, sample.static_frames, sample.motion_frames)
    loaded = decode_fvs(encode_fvs(bare), 'bare')
    assert loaded.planted_frames == ()
    assert loaded.planted_cells == ()


def test_fvs_header_layout(sample):
    data = encode_fvs(sample)
    assert struct.unpack_from('<4s6I', data) == (b'FVS1', 1, 2, 3, 2, 4, 5)


def test_fvs_rejects_empty_file():
    with pytest.raises(CorruptFileError):
        decode_fvs(b'')


def test_fvs_rejects_bad_magic(sample):
    data = encode_fvs(sample)
    with pytest.raises(CorruptFileError):
        decode_fvs(b'FVS9' + data[4:])


def test_fvs_rejects_other_versions(sample):
    data = bytearray(encode_fvs(sample))
    struct.pack_into('<I', data, 4, 2)
    with pytest.raises(UnsupportedVersionError):
        decode_fvs(bytes(data))


@pytest.mark.parametrize('cut', [1, 8, 40])
def test_fvs_rejects_truncation(sample, cut):
    with pytest.raises(CorruptFileError):
        decode_fvs(encode_fvs(sample)[:-cut])


def test_fvs_rejects_trailing_bytes(sample):
    with pytest.raises(CorruptFileError):
        decode_fvs(encode_fvs(sample) + b'\0')


def test_fvs_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        read_fvs(tmp_path / 'absent.fvs')


def test_dataset_round_trip(written_dataset, small_dataset):
    loaded = load_dataset(written_dataset)
    assert loaded.num_classes == small_dataset.num_classes
    for split in ('train', 'val', 'test'):
        original = sorted(small_dataset.split(split), key=lambda s: s.id)
        assert [s.id for s in loaded.split(split)] == [s.id for s in original]
        for a, b in zip(loaded.split(split), original):
            assert a.label == b.label
            assert a.planted_cells == b.planted_cells
            np.testing.assert_allclose(a.motion_frames, b.motion_frames, rtol=1e-6)


def test_manifest_entries_sorted_by_id(written_dataset):
    manifest = read_manifest(written_dataset)
    ids = [e['id'] for e in manifest.splits['train']]
    assert ids == sorted(ids)
    assert manifest.splits['val'] == []


def test_manifest_rejects_duplicate_ids():
    entry = ManifestEntry(id='a', label=0, path='videos/a.fvs')
    with pytest.raises(DuplicateIdError):
        Manifest(1, {'train': [entry], 'val': [], 'test': [dict(entry)]})  # type: ignore[list-item]


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestNotFoundError) as e:
        load_dataset(tmp_path / 'manifest.json')
    assert e.value.exit_code == 3


def test_manifest_ignores_unknown_fields(written_dataset):
    data = json.loads(written_dataset.read_text())
    data['notes'] = 'collected by hand'
    data['train'][0]['camera'] = 'left'
    written_dataset.write_text(json.dumps(data))
    assert len(load_dataset(written_dataset).train) == len(data['train'])


def test_manifest_without_test_split(written_dataset):
    data = json.loads(written_dataset.read_text())
    del data['test']
    written_dataset.write_text(json.dumps(data))
    assert load_dataset(written_dataset).test == []


def test_manifest_label_must_match_file(written_dataset):
    data = json.loads(written_dataset.read_text())
    entry = data['train'][0]
    entry['label'] = (entry['label'] + 1) % data['num_classes']
    written_dataset.write_text(json.dumps(data))
    with pytest.raises(CorruptFileError):
        load_dataset(written_dataset)


def test_manifest_missing_video(written_dataset):
    (written_dataset.parent / 'videos' / 'test-c00-0000.fvs').unlink()
    with pytest.raises(MissingFileError):
        load_dataset(written_dataset)


def test_manifest_not_json(tmp_path):
    path = tmp_path / 'manifest.json'
    path.write_text('{not json')
    with pytest.raises(CorruptFileError):
        read_manifest(path)


def test_checkpoint_round_trip_is_exact(rng):
    blocks = {'b.weight': rng.normal(size=(3, 2)), 'a': rng.normal(size=4), 'meta.x': np.array(1.0)}
    decoded = decode_checkpoint(encode_checkpoint(blocks))
    assert list(decoded) == ['a', 'b.weight', 'meta.x']
    for name, value in blocks.items():
        np.testing.assert_array_equal(decoded[name], value)
    assert decoded['meta.x'].shape == ()


def test_checkpoint_starts_with_magic_and_version():
    data = encode_checkpoint({})
    assert data == MAGIC + struct.pack('<I', 1)


def test_checkpoint_rejects_bad_magic():
    with pytest.raises(CorruptFileError):
        decode_checkpoint(b'XCLM' + struct.pack('<I', 1))


def test_checkpoint_rejects_other_versions():
    with pytest.raises(UnsupportedVersionError):
        decode_checkpoint(MAGIC + struct.pack('<I', 7))


def test_checkpoint_rejects_truncation(rng):
    data = encode_checkpoint({'w': rng.normal(size=(2, 2))})
    with pytest.raises(CorruptFileError):
        decode_checkpoint(data[:-3])


@pytest.fixture()
def stream_model(rng, quick_config) -> StreamModel:
    return StreamModel.initialize(rng, 'motion', 4, 3, quick_config)


def test_stream_blocks_carry_switches(stream_model):
    stream_model.spatial_attention = False
    blocks = stream_blocks(stream_model)
    assert float(blocks['meta.stream']) == 1.0
    assert float(blocks['meta.spatial_attention']) == 0.0
    assert float(blocks['meta.temporal_attention']) == 1.0
    restored = stream_from_blocks(blocks)
    assert restored.stream_tag == 'motion'
    assert restored.spatial_attention is False


def test_stream_blocks_need_every_parameter(stream_model):
    blocks = stream_blocks(stream_model)
    del blocks['lstm.bias']
    with pytest.raises(CorruptFileError):
        stream_from_blocks(blocks)


def test_reloaded_stream_scores_identically(tmp_path, rng, stream_model):
    path = tmp_path / 'motion.tclm'
    save_stream_model(path, stream_model)
    restored = load_stream_model(path)
    frames = Tensor(rng.normal(size=(2, 4, 3, 3, 4)))
    with no_grad():
        expected = stream_model.forward(frames).scores.data
        actual = restored.forward(frames).scores.data
    np.testing.assert_array_equal(actual, expected)


def test_reloaded_collaborative_model_scores_identically(tmp_path, rng):
    model = CollabModel.initialize(rng, 4, 4, 3, 3, rounds=3, segments=2)
    path = tmp_path / 'collab.tclm'
    save_collab_model(path, model)
    restored = load_collab_model(path)
    assert (restored.rounds, restored.segments) == (3, 2)
    assert set(collab_blocks(restored)) == set(collab_blocks(model))

    V_s = StreamFeatures(Tensor(rng.normal(size=(2, 4, 2))))
    V_m = StreamFeatures(Tensor(rng.normal(size=(2, 4, 2))))
    with no_grad():
        _, expected_s, expected_m = model.forward(V_s, V_m)
        _, actual_s, actual_m = restored.forward(V_s, V_m)
    np.testing.assert_array_equal(actual_s.data, expected_s.data)
    np.testing.assert_array_equal(actual_m.data, expected_m.data)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        load_stream_model(tmp_path / 'static.tclm')


def test_load_state_copies_parameters(rng, quick_config, stream_model):
    other = StreamModel.initialize(rng, 'motion', 4, 3, quick_config)
    other.load_state(stream_model.state())
    for name, value in stream_model.state().items():
        np.testing.assert_array_equal(other.state()[name], value)


def test_load_state_rejects_missing_and_misshapen(stream_model):
    state = stream_model.state()
    del state['lstm.bias']
    with pytest.raises(ShapeMismatchError):
        stream_model.load_state(state)
    state = stream_model.state()
    state['lstm.bias'] = np.zeros(3)
    with pytest.raises(ShapeMismatchError):
        stream_model.load_state(state)


def block(name: str, dims: list[int], payload: bytes = b'') -> bytes:
    encoded = name.encode()
    header = struct.pack(f'<I{len(encoded)}sI{len(dims)}I', len(encoded), encoded, len(dims), *dims)
    return header + payload


def test_checkpoint_rejects_overflowing_dims():
    data = MAGIC + struct.pack('<I', 1) + block('w', [2**32 - 1] * 3, b'\0' * 8)
    with pytest.raises(CorruptFileError):
        decode_checkpoint(data)


def test_checkpoint_rejects_duplicate_blocks():
    payload = struct.pack('<d', 1.0)
    data = MAGIC + struct.pack('<I', 1) + block('w', [], payload) + block('w', [], payload)
    with pytest.raises(CorruptFileError):
        decode_checkpoint(data)


@pytest.mark.parametrize('label', [-1, 2**32])
def test_fvs_rejects_label_outside_u32(sample, label):
    sample.label = label
    with pytest.raises(BadLabelError):
        encode_fvs(sample)


def test_fvs_rejects_negative_planted_index(sample):
    sample.planted_frames = (-1,)
    with pytest.raises(CorruptFileError):
        encode_fvs(sample)
