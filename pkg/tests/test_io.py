import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sparsedepth.errors import FormatError
from sparsedepth.io import (
    PfmRaster,
    csv_text,
    decode_pfm,
    encode_pfm,
    load_checkpoint,
    load_pairs,
    read_csv,
    read_pfm,
    save_checkpoint,
    save_pairs,
    write_csv,
    write_pfm,
)
from sparsedepth.model import ModelConfig, SmallEncDec
from sparsedepth.scene import DataConfig, generate_dataset

from _oracles import reference_pfm

f32 = st.floats(-1e6, 1e6, width=32, allow_nan=False, allow_infinity=False)


def test_single_pixel_bytes():
    blob = encode_pfm(np.array([[2.0]]))
    assert blob == b"Pf\n1 1\n-1.0\n" + struct.pack("<f", 2.0)
    assert blob[-4:] == b"\x00\x00\x00\x40"


@pytest.mark.parametrize("seed", range(5))
def test_matches_reference_writer(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 9, size=2)
    gray = rng.normal(size=(h, w)).astype(np.float32)
    color = rng.normal(size=(h, w, 3)).astype(np.float32)
    assert encode_pfm(gray) == reference_pfm(gray)
    assert encode_pfm(color) == reference_pfm(color, color=True)


def test_payload_length_and_bottom_to_top_order():
    a = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=np.float32)
    blob = encode_pfm(a)
    body = blob[len(b"Pf\n3 2\n-1.0\n") :]
    assert len(body) == 4 * 6
    assert struct.unpack("<6f", body) == (4.0, 5.0, 6.0, 1.0, 2.0, 3.0)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6), elements=f32))
def test_round_trip_gray(a):
    back = decode_pfm(encode_pfm(a))
    assert back.data.tobytes() == a.tobytes()
    assert back.scale == -1.0


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3)), elements=f32))
def test_round_trip_color(a):
    assert decode_pfm(encode_pfm(a)).data.tobytes() == a.tobytes()


def test_big_endian_scale_is_read():
    a = np.array([[1.5, -2.0]], dtype=np.float32)
    blob = b"Pf\n2 1\n1.0\n" + a.astype(">f4").tobytes()
    r = decode_pfm(blob)
    assert r.scale == 1.0
    np.testing.assert_array_equal(r.data, a)
    assert encode_pfm(r) == blob


def test_infinity_is_allowed():
    a = np.array([[np.inf, 1.0]], dtype=np.float32)
    assert np.isinf(decode_pfm(encode_pfm(a)).data[0, 0])


@pytest.mark.parametrize(
    "blob",
    [
        b"P5\n1 1\n-1.0\n\x00\x00\x00\x40",
        b"Pf\n1 1\n-1.0\n\x00\x00",
        b"Pf\n1 1\n-1.0\n\x00\x00\x00\x40\x00",
        b"Pf\n1 1\n0\n\x00\x00\x00\x40",
        b"Pf\n1 1\nabc\n\x00\x00\x00\x40",
        b"Pf\n1 1\n-1.0\n" + struct.pack("<f", float("nan")),
    ],
)
def test_malformed_files_rejected(blob):
    with pytest.raises(FormatError):
        decode_pfm(blob)


def test_nan_not_written():
    with pytest.raises(FormatError):
        encode_pfm(np.array([[np.nan]]))


def test_raster_validation():
    with pytest.raises(FormatError):
        PfmRaster(np.zeros((2, 2, 2)))


def test_file_helpers(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_pfm(tmp_path / "a.pfm", a)
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm").data, a)


# -- checkpoints -------------------------------------------------------------


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.ckpt"):
        load_checkpoint(tmp_path / "nope.ckpt")
    (tmp_path / "bad.ckpt").write_bytes(b"hello world")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.ckpt")
    m = SmallEncDec(ModelConfig(), seed=0, enc_channels=(2, 2, 2, 2), dec_channels=(2, 2, 2, 2))
    save_checkpoint(tmp_path / "m.ckpt", m)
    blob = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(blob[:-3])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "cut.ckpt")
    m2, header = load_checkpoint(tmp_path / "m.ckpt")
    assert header["kind"] == "small-encdec"
    assert all(m2.state_dict()[k].tobytes() == v.tobytes() for k, v in m.state_dict().items())


# -- CSV and datasets ----------------------------------------------------------


def test_csv_floats_round_trip(tmp_path):
    vals = [0.1, 1 / 3, 1e-300, 123456789.123456789]
    text = csv_text(["a", "b"], [[i, v] for i, v in enumerate(vals)])
    assert text.splitlines()[2] == "1,0.3333333333333333"
    write_csv(tmp_path / "x.csv", ["a", "b"], [[i, v] for i, v in enumerate(vals)])
    rows = read_csv(tmp_path / "x.csv")
    assert [float(r["b"]) for r in rows] == vals


def test_pairs_round_trip(tmp_path):
    pairs = generate_dataset(3, 2, DataConfig(width=16, height=16))
    save_pairs(tmp_path / "d", pairs, config_hash="h")
    back = load_pairs(tmp_path / "d")
    assert len(back) == 2
    for p, q in zip(pairs, back):
        np.testing.assert_array_equal(q.depth1, p.depth1.astype(np.float32))
        np.testing.assert_array_equal(q.flow12, p.flow12.astype(np.float32))
        np.testing.assert_array_equal(q.occlusion, p.occlusion)
        np.testing.assert_array_equal(q.pose.R, p.pose.R)
        assert (q.index, q.seed) == (p.index, p.seed)
    with pytest.raises(FileNotFoundError):
        load_pairs(tmp_path / "missing")
