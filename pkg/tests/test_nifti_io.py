import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdx.errors import BadHeaderSize, BadMagic, NiftiError, TruncatedData, UnsupportedDatatype
from cdx.nifti_io import (
    HEADER_SIZE,
    NonFiniteData,
    Volume4D,
    decode_volume,
    encode_volume,
    load_volume,
    parse_header,
    write_volume,
)


def _hand_built_file(order="<"):
    """Minimal NIfTI-1 file assembled byte by byte, independent of the encoder."""
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into(order + "i", hdr, 0, 348)
    struct.pack_into(order + "8h", hdr, 40, 4, 2, 3, 1, 2, 1, 1, 1)
    struct.pack_into(order + "hh", hdr, 70, 16, 32)  # float32
    struct.pack_into(order + "8f", hdr, 76, 1.0, 2.0, 2.0, 3.0, 1.5, 1.0, 1.0, 1.0)
    struct.pack_into(order + "f", hdr, 108, 352.0)
    struct.pack_into(order + "ff", hdr, 112, 2.0, 10.0)  # slope, intercept
    hdr[344:348] = b"n+1\x00"
    data = np.arange(12, dtype=order + "f4")
    return bytes(hdr) + b"\x00" * 4 + data.tobytes(), data


class TestParseHeader:
    @pytest.mark.parametrize("order", ["<", ">"])
    def test_hand_built(self, order):
        raw, _ = _hand_built_file(order)
        h = parse_header(raw)
        assert h.byteorder == order
        assert h.shape == (2, 3, 1, 2)
        assert h.datatype == 16 and h.bitpix == 32
        assert h.pixdim[1:4] == (2.0, 2.0, 3.0)
        assert h.vox_offset == 352.0

    def test_affine_falls_back_to_pixdim(self):
        raw, _ = _hand_built_file()
        np.testing.assert_allclose(np.diag(parse_header(raw).affine())[:3], [2.0, 2.0, 3.0])

    def test_bad_magic(self):
        raw, _ = _hand_built_file()
        raw = raw[:344] + b"xyz\x00" + raw[348:]
        with pytest.raises(BadMagic):
            parse_header(raw)

    def test_bad_size(self):
        raw, _ = _hand_built_file()
        with pytest.raises(BadHeaderSize):
            parse_header(struct.pack("<i", 540) + raw[4:])

    def test_unsupported_datatype(self):
        raw = bytearray(_hand_built_file()[0])
        struct.pack_into("<hh", raw, 70, 2, 8)  # uint8
        with pytest.raises(UnsupportedDatatype):
            parse_header(bytes(raw))

    def test_short_buffer(self):
        with pytest.raises(TruncatedData):
            parse_header(b"\x00" * 100)


class TestDecode:
    @pytest.mark.parametrize("order", ["<", ">"])
    def test_fortran_order_and_scaling(self, order):
        raw, data = _hand_built_file(order)
        vol = decode_volume(raw)
        expected = (data.astype(float) * 2.0 + 10.0).reshape((2, 3, 1, 2), order="F")
        np.testing.assert_array_equal(vol.data, expected)
        # x varies fastest on disk
        assert vol.data[1, 0, 0, 0] == 1.0 * 2 + 10

    def test_zero_slope_means_unscaled(self):
        raw = bytearray(_hand_built_file()[0])
        struct.pack_into("<ff", raw, 112, 0.0, 5.0)
        np.testing.assert_array_equal(decode_volume(bytes(raw)).data.ravel(order="F"), np.arange(12.0))

    def test_truncated(self):
        raw, _ = _hand_built_file()
        with pytest.raises(TruncatedData):
            decode_volume(raw[:-4])

    def test_nan_rejected(self):
        raw = bytearray(_hand_built_file()[0])
        struct.pack_into("<f", raw, 352, float("nan"))
        with pytest.raises(NonFiniteData):
            decode_volume(bytes(raw))

    def test_paired_magic_rejected(self):
        raw, _ = _hand_built_file()
        with pytest.raises(NiftiError):
            decode_volume(raw[:344] + b"ni1\x00" + raw[348:])

    def test_data_read_only(self):
        vol = decode_volume(_hand_built_file()[0])
        with pytest.raises(ValueError):
            vol.data[0, 0, 0, 0] = 1.0


class TestRoundTrip:
    def test_small_volume_size(self):
        vol = Volume4D.from_array(np.ones((2, 2, 2, 2)))
        blob = encode_volume(vol)
        assert len(blob) == 352 + 16 * 4
        again = decode_volume(blob)
        assert again.header == vol.header

    @pytest.mark.parametrize("dtype", ["int16", "int32", "float32", "float64"])
    @pytest.mark.parametrize("order", ["<", ">"])
    def test_bit_exact(self, rng, dtype, order, tmp_path):
        data = rng.integers(-300, 300, size=(3, 4, 2, 5)).astype(float)
        if dtype.startswith("float"):
            data = data.astype(dtype) + rng.random(data.shape).astype(dtype)
        vol = Volume4D.from_array(data, "s", dtype=dtype, byteorder=order)
        path = tmp_path / "v.nii.gz"
        write_volume(vol, path)
        back = load_volume(path)
        assert back.subject_id == "v"
        assert back.header.byteorder == order
        assert back.data.tobytes() == vol.data.tobytes()
        assert encode_volume(back) == encode_volume(vol)

    def test_gzip_deterministic(self, tmp_path):
        vol = Volume4D.from_array(np.arange(24.0).reshape(2, 3, 4, 1))
        write_volume(vol, tmp_path / "a.nii.gz")
        write_volume(vol, tmp_path / "b.nii.gz")
        assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()
        assert gzip.decompress((tmp_path / "a.nii.gz").read_bytes()) == encode_volume(vol)

    def test_empty_axis_refused(self):
        vol = Volume4D.from_array(np.zeros((2, 2, 2, 1)))
        empty = Volume4D(vol.header, np.zeros((2, 2, 2, 0)))
        with pytest.raises(TruncatedData):
            encode_volume(empty)

    def test_int_out_of_range(self):
        vol = Volume4D.from_array(np.full((2, 2, 2, 1), 40000.0), dtype="int16")
        with pytest.raises(NiftiError):
            encode_volume(vol)

    def test_scaled_int_round_trip(self):
        data = np.arange(8.0).reshape(2, 2, 2, 1) * 0.5 + 3.0
        vol = Volume4D.from_array(data, dtype="int16", scl_slope=0.5, scl_inter=3.0)
        np.testing.assert_array_equal(decode_volume(encode_volume(vol)).data, data)

    def test_affine_preserved(self):
        aff = np.array([[-2.0, 0, 0, 90], [0, 2.0, 0, -126], [0, 0, 2.0, -72], [0, 0, 0, 1]])
        vol = Volume4D.from_array(np.zeros((2, 2, 2, 1)), affine=aff, tr=2.5)
        back = decode_volume(encode_volume(vol))
        np.testing.assert_allclose(back.affine, aff)
        assert back.tr_seconds == 2.5

    @settings(max_examples=40, deadline=None)
    @given(
        shape=st.tuples(*[st.integers(1, 4)] * 4),
        dtype=st.sampled_from(["int16", "int32", "float32", "float64"]),
        order=st.sampled_from(["<", ">"]),
        seed=st.integers(0, 2**16),
    )
    def test_property_round_trip(self, shape, dtype, order, seed):
        r = np.random.default_rng(seed)
        data = r.integers(-1000, 1000, size=shape).astype(np.dtype(dtype)).astype(float)
        vol = Volume4D.from_array(data, dtype=dtype, byteorder=order)
        back = decode_volume(encode_volume(vol))
        assert back.header == vol.header
        np.testing.assert_array_equal(back.data, vol.data)
