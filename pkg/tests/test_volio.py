import gzip
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mskqc.core import FloatVolume, IntensityVolume, LabelVolume, VolumeGeometry
from mskqc.errors import FormatError
from mskqc.volio import decode_volume, encode_volume, read_volume, write_volume


def header(**over):
    h = {"magic": "MVOL-1", "etype": "i16", "dims": [1, 1, 2], "spacing_mm": [1.0, 1.0, 1.0], "lr_axis": 0,
         "lr_positive_is_left": False}
    h.update(over)
    return json.dumps(h).encode() + b"\n"


def test_hand_built_hu_file(tmp_path):
    raw = header() + (-30).to_bytes(2, "little", signed=True) + (30).to_bytes(2, "little", signed=True)
    path = tmp_path / "hand.mvol"
    path.write_bytes(raw)
    vol = read_volume(path)
    assert isinstance(vol, IntensityVolume)
    assert vol.data[0, 0, 0] == -30
    assert vol.data[0, 0, 1] == 30


def test_short_payload_is_rejected_with_offset():
    h = header(dims=[2, 2, 2])
    raw = h + np.arange(7, dtype="<i2").tobytes()
    with pytest.raises(FormatError) as exc:
        decode_volume(raw)
    assert exc.value.offset == len(h) + 14
    assert "7 elements" in str(exc.value)


def test_long_payload_is_rejected():
    h = header()
    with pytest.raises(FormatError) as exc:
        decode_volume(h + bytes(6))
    assert exc.value.offset == len(h) + 4


@pytest.mark.parametrize(
    "raw, needle",
    [
        (b'{"magic": "MVOL-1"', "not terminated"),
        (b"\xff\xfe\n", "UTF-8"),
        (b'{"magic": "MVOL-1", \n', "garbled"),
        (b"[1, 2]\n", "JSON object"),
        (b'{"magic": "MVOL-1"}\n', "missing keys"),
    ],
)
def test_malformed_headers(raw, needle):
    with pytest.raises(FormatError) as exc:
        decode_volume(raw)
    assert needle in str(exc.value)
    assert exc.value.offset is not None


def test_garbled_header_offset_points_into_header():
    raw = b'{"magic": "MVOL-1", "etype": i16}\n'
    with pytest.raises(FormatError) as exc:
        decode_volume(raw)
    assert exc.value.offset == raw.index(b"i16")


def test_bad_magic_and_etype_offsets():
    h = header(magic="MVOL-2")
    with pytest.raises(FormatError) as exc:
        decode_volume(h + bytes(4))
    assert exc.value.offset == h.index(b'"magic"')
    h = header(etype="f64")
    with pytest.raises(FormatError) as exc:
        decode_volume(h + bytes(4))
    assert exc.value.offset == h.index(b'"etype"')


def test_bad_geometry_in_header():
    with pytest.raises(FormatError):
        decode_volume(header(dims=[0, 1, 2]))


def test_non_finite_float_payload():
    h = header(etype="f32")
    raw = h + np.array([1.0, np.inf], dtype="<f4").tobytes()
    with pytest.raises(FormatError) as exc:
        decode_volume(raw)
    assert exc.value.offset == len(h) + 4


def test_i16_range_enforced():
    g = VolumeGeometry((1, 1, 1))
    with pytest.raises(FormatError):
        encode_volume(IntensityVolume(g, np.array([40000])))


def test_dtype_selects_kind(tmp_path):
    g = VolumeGeometry((2, 1, 1), (0.5, 0.5, 2.0), lr_axis=1, lr_positive_is_left=True)
    for vol in (
        IntensityVolume(g, [-5, 7]),
        LabelVolume(g, [0, 22]),
        FloatVolume(g, [0.25, 0.125]),
    ):
        path = tmp_path / "v.mvol"
        write_volume(vol, path)
        back = read_volume(path)
        assert type(back) is type(vol)
        assert back == vol
        assert back.geometry == g


def test_gzip_is_byte_reproducible(tmp_path):
    g = VolumeGeometry((3, 2, 2))
    vol = LabelVolume(g, np.arange(12) % 3)
    a, b = tmp_path / "a.mvol.gz", tmp_path / "b.mvol.gz"
    write_volume(vol, a)
    write_volume(vol, b)
    assert a.read_bytes() == b.read_bytes()
    assert gzip.decompress(a.read_bytes()) == encode_volume(vol)
    assert read_volume(a) == vol


def test_bad_gzip_stream(tmp_path):
    path = tmp_path / "x.mvol.gz"
    path.write_bytes(b"not gzip")
    with pytest.raises(FormatError):
        read_volume(path)


def test_read_error_names_path_and_keeps_offset(tmp_path):
    path = tmp_path / "short.mvol"
    path.write_bytes(header() + bytes(2))
    with pytest.raises(FormatError) as exc:
        read_volume(path)
    assert "short.mvol" in str(exc.value)
    assert exc.value.offset is not None


dims = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))


@settings(max_examples=40, deadline=None)
@given(dims.flatmap(lambda d: hnp.arrays(np.int16, d)))
def test_round_trip_intensity_bytes(arr):
    vol = IntensityVolume(VolumeGeometry(arr.shape, (0.7, 0.7, 2.5)), arr)
    blob = encode_volume(vol)
    assert encode_volume(decode_volume(blob)) == blob


@settings(max_examples=40, deadline=None)
@given(dims.flatmap(lambda d: hnp.arrays(np.float32, d, elements=st.floats(-1e6, 1e6, width=32))))
def test_round_trip_float_bytes(arr):
    vol = FloatVolume(VolumeGeometry(arr.shape), arr)
    blob = encode_volume(vol)
    assert encode_volume(decode_volume(blob)) == blob
