import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convabed.tensor import (
    ElemKind,
    LayerShape,
    Tensor4D,
    deserialize,
    new_filled,
    patch_accumulate_view,
    serialize,
)

from oracles import patch_loops, use_counts


def test_new_filled_int8():
    t = new_filled((1, 1, 3, 3), ElemKind.I8, 1)
    assert t.size == 9 and (t.data == 1).all() and t.kind is ElemKind.I8


def test_new_filled_int32_negative():
    t = new_filled((2, 2, 2, 2), ElemKind.I32, -7)
    assert t.size == 16 and (t.data == -7).all()


def test_new_filled_out_of_range():
    with pytest.raises(OverflowError):
        new_filled((1, 1, 1, 1), ElemKind.I8, 200)


def test_zero_extent_rejected():
    with pytest.raises(ValueError):
        new_filled((1, 0, 1, 1), ElemKind.I8, 0)


def test_tensor_is_read_only():
    t = new_filled((1, 1, 2, 2), ElemKind.I8, 3)
    with pytest.raises(ValueError):
        t.array[0, 0, 0, 0] = 1


@given(st.tuples(*[st.integers(1, 5)] * 4), st.data())
def test_flat_index_formula(dims, data):
    t = Tensor4D(np.arange(np.prod(dims), dtype=np.int32).reshape(dims))
    a, b, c, d = (data.draw(st.integers(0, n - 1)) for n in dims)
    d0, d1, d2, d3 = dims
    idx = ((a * d1 + b) * d2 + c) * d3 + d
    assert t.flat_index(a, b, c, d) == idx
    assert t.data[idx] == t[a, b, c, d]


def test_layer_shape_derived_extents():
    s = LayerShape(1, 3, 224, 224, 64, 7, 7, 2, 2, 3, 3)
    assert (s.p, s.q) == (112, 112)
    with pytest.raises(ValueError):
        LayerShape(1, 1, 2, 2, 1, 5, 5)


def test_patch_full_window():
    shape = LayerShape(1, 1, 3, 3, 1, 3, 3)
    x = new_filled((1, 1, 3, 3), ElemKind.I8, 1)
    entries = list(patch_accumulate_view(x, shape, 0, 0, 0))
    assert len(entries) == 9 and all(v == 1 for *_, v in entries)


def test_patch_padding_halo():
    shape = LayerShape(1, 1, 3, 3, 1, 3, 3, pad_h=1, pad_w=1)
    x = new_filled((1, 1, 3, 3), ElemKind.I8, 1)
    entries = list(patch_accumulate_view(x, shape, 0, 0, 0))
    assert len(entries) == 9
    zeros = {(r, s) for _, r, s, v in entries if v == 0}
    assert zeros == {(0, 0), (0, 1), (0, 2), (1, 0), (2, 0)}


def test_patch_matches_index_oracle(rng):
    shape = LayerShape(1, 2, 4, 4, 1, 3, 3, stride_h=2, stride_w=2)
    x = Tensor4D(rng.integers(-128, 128, shape.input_dims, dtype=np.int8))
    xl = x.array.tolist()
    for p in range(shape.p):
        for q in range(shape.q):
            got = list(patch_accumulate_view(x, shape, 0, p, q))
            assert got == patch_loops(xl, 0, p, q, 3, 3, 2, 2, 0, 0)


def test_patch_out_of_bounds():
    shape = LayerShape(1, 1, 3, 3, 1, 3, 3)
    x = new_filled((1, 1, 3, 3), ElemKind.I8, 1)
    with pytest.raises(IndexError):
        list(patch_accumulate_view(x, shape, 0, 1, 0))


@pytest.mark.parametrize("h,w,r,s,sh,sw,ph,pw", [
    (5, 5, 3, 3, 1, 1, 1, 1),
    (6, 7, 3, 3, 2, 2, 1, 1),
    (4, 4, 1, 1, 2, 1, 0, 0),
    (7, 5, 3, 1, 2, 1, 0, 1),
])
def test_patch_view_touch_counts(h, w, r, s, sh, sw, ph, pw):
    shape = LayerShape(1, 1, h, w, 1, r, s, sh, sw, ph, pw)
    marker = np.arange(h * w, dtype=np.int32).reshape(1, 1, h, w) % 100 + 1
    x = Tensor4D(marker.astype(np.int8))
    counts = np.zeros((h, w), dtype=int)
    for p in range(shape.p):
        for q in range(shape.q):
            for _, rr, ss, v in patch_accumulate_view(x, shape, 0, p, q):
                hi, wi = p * sh - ph + rr, q * sw - pw + ss
                if 0 <= hi < h and 0 <= wi < w:
                    assert v == marker[0, 0, hi, wi]
                    counts[hi, wi] += 1
    assert counts.tolist() == use_counts(h, w, r, s, sh, sw, ph, pw)


def test_serialize_size():
    t = new_filled((1, 1, 1, 1), ElemKind.I8, 5)
    buf = serialize(t)
    assert len(buf) == 22
    assert buf[:4] == b"ABED"
    assert buf[-1] == 5


def test_serialize_little_endian():
    t = new_filled((1, 1, 1, 1), ElemKind.I32, 0x01020304)
    assert serialize(t)[-4:] == bytes([4, 3, 2, 1])


def test_serialize_roundtrip_corpus(rng):
    for _ in range(1000):
        dims = tuple(int(d) for d in rng.integers(1, 5, 4))
        kind = list(ElemKind)[int(rng.integers(4))]
        if kind is ElemKind.F32:
            arr = rng.standard_normal(dims).astype(np.float32)
        else:
            arr = rng.integers(kind.min, kind.max, dims, dtype=kind.dtype, endpoint=True)
        t = Tensor4D(arr, kind)
        buf = serialize(t)
        back = deserialize(buf)
        assert back.kind is kind and back.dims == dims
        assert back.array.tobytes() == t.array.tobytes()
        assert serialize(back) == buf


@settings(max_examples=50)
@given(st.binary(min_size=0, max_size=40))
def test_deserialize_rejects_garbage(blob):
    try:
        t = deserialize(blob)
    except ValueError:
        return
    assert serialize(t) == blob


@pytest.mark.parametrize("buf", [
    b"ABE",
    b"XBED" + bytes(17),
    b"ABED" + bytes([0]) + (1).to_bytes(4, "little") * 4,  # payload missing
    b"ABED" + bytes([9]) + (1).to_bytes(4, "little") * 4 + b"\x00",
])
def test_deserialize_malformed(buf):
    with pytest.raises(ValueError):
        deserialize(buf)
