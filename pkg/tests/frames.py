import os
import struct

import numpy as np
import pytest

from darkproxy.frames import FrameFormatError
from darkproxy.frames import FrameLengthError
from darkproxy.frames import FrameRangeError
from darkproxy.frames import FrameSet
from darkproxy.frames import RawFrame
from darkproxy.frames import ShapeError
from darkproxy.frames import read_array
from darkproxy.frames import read_frame
from darkproxy.frames import read_frame_set_manifest
from darkproxy.frames import write_array
from darkproxy.frames import write_frame
from darkproxy.frames import write_frame_set
from darkproxy.frames import write_frame_set_manifest


def make_frame(data, iso=800, bit_depth=12):
    return RawFrame(
        data=np.asarray(data, dtype=float),
        iso=iso,
        black_level=64.0,
        white_level=2.0**bit_depth - 1,
        bit_depth=bit_depth,
    )


def test_frame_round_trip(tmp_path):
    frame = make_frame(np.arange(16).reshape(4, 4))
    path = str(tmp_path / "f.pnnf")
    write_frame(frame, path)
    copy = read_frame(path)
    assert copy == frame
    assert copy.data.tobytes() == frame.data.tobytes()


def test_random_frames_round_trip_bit_exactly(tmp_path):
    gen = np.random.default_rng(0)
    for i in range(20):
        h, w = gen.integers(1, 17, size=2)
        frame = make_frame(gen.integers(0, 4096, size=(h, w)))
        path = str(tmp_path / f"f{i}.pnnf")
        write_frame(frame, path)
        assert read_frame(path) == frame


def test_single_pixel_zero(tmp_path):
    path = str(tmp_path / "one.pnnf")
    write_frame(make_frame([[0.0]]), path)
    assert read_frame(path).data[0, 0] == 0.0


def test_same_content_same_bytes(tmp_path):
    a, b = str(tmp_path / "a.pnnf"), str(tmp_path / "b.pnnf")
    write_frame(make_frame(np.eye(3) * 7), a)
    write_frame(make_frame(np.eye(3) * 7), b)
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()


def test_header_layout_independent_decoder(tmp_path):
    data = np.arange(6, dtype=float).reshape(2, 3)
    path = str(tmp_path / "f.pnnf")
    write_frame(make_frame(data), path)
    with open(path, "rb") as fh:
        raw = fh.read()
    assert raw[0:4] == b"PNNF"
    assert raw[4] == 1 and raw[5] == 1
    assert raw[6:8] == b"\x00\x00"
    assert struct.unpack("<Q", raw[8:16])[0] == 2
    assert struct.unpack("<Q", raw[16:24])[0] == 3
    assert raw[24:32] == bytes(8)
    values = struct.unpack("<6f", raw[32:])
    assert list(values) == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]


def test_flipped_byte_changes_exactly_one_pixel(tmp_path):
    data = np.full((4, 4), 100.0)
    path = str(tmp_path / "f.pnnf")
    write_frame(make_frame(data), path)
    with open(path, "rb") as fh:
        raw = bytearray(fh.read())
    pixel = 5
    raw[32 + 4 * pixel + 3] ^= 0x01
    with open(path, "wb") as fh:
        fh.write(raw)
    changed = read_frame(path, quantized=False).data
    diff = np.argwhere(changed != data)
    assert diff.tolist() == [[1, 1]]


def test_truncated_payload_is_length_error(tmp_path):
    path = str(tmp_path / "f.pnnf")
    write_frame(make_frame(np.zeros((4, 4))), path)
    with open(path, "rb") as fh:
        raw = fh.read()
    with open(path, "wb") as fh:
        fh.write(raw[: 32 + 8 * 4])
    with pytest.raises(FrameLengthError):
        read_frame(path)


def test_bad_magic_is_format_error(tmp_path):
    path = str(tmp_path / "f.pnnf")
    write_array(np.zeros((2, 2)), path)
    with open(path, "r+b") as fh:
        fh.write(b"XXXX")
    with pytest.raises(FrameFormatError):
        read_array(path)


def test_short_file_is_format_error(tmp_path):
    path = tmp_path / "f.pnnf"
    path.write_bytes(b"PNNF")
    with pytest.raises(FrameFormatError):
        read_array(str(path))


def test_missing_sidecar(tmp_path):
    path = str(tmp_path / "f.pnnf")
    write_array(np.zeros((2, 2)), path)
    with pytest.raises(FrameFormatError):
        read_frame(path)


@pytest.mark.parametrize("value,ok", [(4095.0, True), (4096.0, False), (-1.0, False), (1.5, False)])
def test_quantized_range(tmp_path, value, ok):
    path = str(tmp_path / "f.pnnf")
    write_frame(make_frame([[value]]), path)
    if ok:
        assert read_frame(path).data[0, 0] == value
    else:
        with pytest.raises(FrameRangeError):
            read_frame(path)
    assert read_frame(path, quantized=False).data[0, 0] == value


def test_f64_container(tmp_path):
    path = str(tmp_path / "a.pnnf")
    value = np.array([[1.0 / 3.0, np.pi]])
    write_array(value, path, dtype="<f8")
    out = read_array(path)
    assert out.dtype == np.dtype("<f8")
    assert np.array_equal(out, value)


def test_one_dimensional_array_is_one_row(tmp_path):
    path = str(tmp_path / "a.pnnf")
    write_array(np.arange(5.0), path, dtype="<f8")
    assert read_array(path).shape == (1, 5)


def test_frame_invariants():
    with pytest.raises(ShapeError):
        RawFrame(data=np.zeros(4), iso=100, black_level=0, white_level=10, bit_depth=4)
    with pytest.raises(ValueError):
        RawFrame(data=np.zeros((2, 2)), iso=100, black_level=10, white_level=10, bit_depth=4)
    with pytest.raises(ValueError):
        RawFrame(data=np.zeros((2, 2)), iso=0, black_level=0, white_level=10, bit_depth=4)
    frame = make_frame(np.zeros((2, 2)))
    assert not frame.data.flags.writeable


def test_frame_set_invariants():
    a = make_frame(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        FrameSet(iso=800, frames=())
    with pytest.raises(ValueError):
        FrameSet(iso=800, frames=(a, make_frame(np.zeros((2, 2)), iso=1600)))
    with pytest.raises(ShapeError):
        FrameSet(iso=800, frames=(a, make_frame(np.zeros((3, 2)))))
    s = FrameSet(iso=800, frames=(a, make_frame(np.ones((2, 2)))))
    assert len(s) == 2
    assert s.stack().shape == (2, 2, 2)
    assert s.stack().dtype == np.float64


def test_frame_set_manifest(tmp_path):
    frames = [make_frame(np.full((3, 3), float(i))) for i in range(3)]
    paths = write_frame_set(frames, str(tmp_path / "darks"), "iso800")
    assert [os.path.basename(p) for p in paths] == [
        "iso800_0000.pnnf",
        "iso800_0001.pnnf",
        "iso800_0002.pnnf",
    ]
    manifest = str(tmp_path / "darks.yaml")
    write_frame_set_manifest([(FrameSet(iso=800, frames=tuple(frames)), 0.0, paths)], manifest)
    kind, entries = read_frame_set_manifest(manifest)
    assert kind == "dark"
    assert len(entries) == 1
    assert entries[0].iso == 800
    assert list(entries[0].frame_set) == frames
