import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convabed.abed import gen_input_checksum
from convabed.convolution import (
    Activation,
    ChecksumTaps,
    EpilogParams,
    Matrix,
    OutputTap,
    PrecisionError,
    conv_direct,
    conv_float,
    conv_via_gemm,
    epilog,
    exact_matmul,
    fused_conv_epilog,
    gemm,
)
from convabed.tensor import ElemKind, LayerShape, Tensor4D, new_filled

from conftest import ones_twos, random_layer, random_shape
from oracles import conv_loops, matmul_loops


def _oracle(x, f, shape):
    return conv_loops(x.array.tolist(), f.array.tolist(),
                      shape.stride_h, shape.stride_w, shape.pad_h, shape.pad_w)


def test_conv_ones_3x3():
    shape = LayerShape(1, 1, 3, 3, 1, 3, 3)
    x = new_filled(shape.input_dims, ElemKind.I8, 1)
    f = new_filled(shape.filter_dims, ElemKind.I8, 1)
    out = conv_direct(x, f, shape)
    assert out.dims == (1, 1, 1, 1) and out.kind is ElemKind.I32 and out[0, 0, 0, 0] == 9


def test_conv_padded_ones():
    shape = LayerShape(1, 1, 3, 3, 1, 3, 3, pad_h=1, pad_w=1)
    x = new_filled(shape.input_dims, ElemKind.I8, 1)
    f = new_filled(shape.filter_dims, ElemKind.I8, 1)
    out = conv_direct(x, f, shape).array[0, 0]
    assert out.tolist() == [[4, 6, 4], [6, 9, 6], [4, 6, 4]]


def test_conv_matches_seven_loop_oracle(rng):
    for _ in range(40):
        shape = random_shape(rng)
        x, f = random_layer(rng, shape)
        assert conv_direct(x, f, shape).array.tolist() == _oracle(x, f, shape)


def test_conv_via_gemm_matches_direct(rng):
    for _ in range(40):
        shape = random_shape(rng)
        x, f = random_layer(rng, shape)
        assert conv_via_gemm(x, f, shape) == conv_direct(x, f, shape)


def test_conv_extreme_products():
    shape = LayerShape(1, 64, 3, 3, 2, 3, 3)
    x = new_filled(shape.input_dims, ElemKind.I8, -128)
    f = new_filled(shape.filter_dims, ElemKind.I8, -128)
    assert conv_direct(x, f, shape).array.ravel().tolist() == [576 * 16384] * 2


def test_conv_rejects_oversized_crs():
    shape = LayerShape(1, 65537, 1, 1, 1, 1, 1)
    x = Tensor4D(np.zeros(shape.input_dims, np.int8))
    f = Tensor4D(np.zeros(shape.filter_dims, np.int8))
    with pytest.raises(PrecisionError):
        conv_direct(x, f, shape)


def test_conv_rejects_wrong_dims():
    shape = LayerShape(1, 2, 3, 3, 1, 3, 3)
    x = new_filled((1, 1, 3, 3), ElemKind.I8, 1)
    f = new_filled(shape.filter_dims, ElemKind.I8, 1)
    with pytest.raises(ValueError):
        conv_direct(x, f, shape)


def test_conv_float_matches_integer_path(rng):
    shape = LayerShape(2, 3, 5, 5, 4, 3, 3, pad_h=1, pad_w=1)
    x = Tensor4D(rng.integers(-8, 9, shape.input_dims).astype(np.float32))
    f = Tensor4D(rng.integers(-8, 9, shape.filter_dims).astype(np.float32))
    got = conv_float(x, f, shape)
    assert got.kind is ElemKind.F32
    assert got.array.tolist() == _oracle(x, f, shape)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_conv_linear_in_filters(seed):
    rng = np.random.default_rng(seed)
    shape = random_shape(rng)
    x = Tensor4D(rng.integers(-128, 128, shape.input_dims, dtype=np.int8))
    f1 = rng.integers(-64, 64, shape.filter_dims, dtype=np.int8)
    f2 = rng.integers(-64, 64, shape.filter_dims, dtype=np.int8)
    a = conv_direct(x, Tensor4D(f1), shape).array.astype(np.int64)
    b = conv_direct(x, Tensor4D(f2), shape).array.astype(np.int64)
    ab = conv_direct(x, Tensor4D(f1 + f2), shape).array.astype(np.int64)
    assert (a + b == ab).all()


def test_gemm_matches_triple_loop(rng):
    for _ in range(30):
        m, k, n = (int(v) for v in rng.integers(1, 9, 3))
        a = rng.integers(-128, 128, (m, k), dtype=np.int8)
        b = rng.integers(-128, 128, (k, n), dtype=np.int8)
        got = gemm(Matrix(a), Matrix(b))
        assert got.kind is ElemKind.I32
        assert got.array.tolist() == matmul_loops(a.tolist(), b.tolist())


def test_gemm_shape_and_precision_errors():
    with pytest.raises(ValueError):
        gemm(Matrix(np.zeros((2, 3), np.int8)), Matrix(np.zeros((2, 3), np.int8)))
    big = Matrix(np.full((1, 1), 2**20, np.int32))
    with pytest.raises(PrecisionError):
        gemm(big, big, ElemKind.I32)
    assert gemm(big, big, ElemKind.I64).array[0, 0] == 2**40


def test_exact_matmul_beyond_float_mantissa():
    a = np.array([[2**31 - 1, 2**31 - 1]], dtype=np.int64)
    b = np.array([[2**30 + 1], [2**30 - 3]], dtype=np.int64)
    expected = (2**31 - 1) * (2**30 + 1) + (2**31 - 1) * (2**30 - 3)
    assert int(exact_matmul(a, b)[0, 0]) == expected


def _single(v, scale=1.0, bias=0.0, **kw):
    t = Tensor4D(np.array([[[[v]]]], np.int32))
    return epilog(t, EpilogParams.uniform(1, scale, bias, **kw))[0, 0, 0, 0]


def test_epilog_examples():
    assert _single(9) == 9
    assert _single(-5) == 0
    assert _single(300, bias=0.5) == 127
    assert _single(-300, activation=Activation.IDENTITY) == -128
    assert _single(7, scale=0.5) == 3  # truncation, not rounding
    assert _single(-7, scale=0.5, activation=Activation.IDENTITY) == -3


def test_epilog_float_output():
    t = Tensor4D(np.array([[[[3]], [[-3]]]], np.int32))
    out = epilog(t, EpilogParams(0.5, (0.25, 0.0), output_kind=ElemKind.F32))
    assert out.kind is ElemKind.F32 and out.array.ravel().tolist() == [1.75, 0.0]


def test_epilog_rejects_bad_params():
    with pytest.raises(ValueError):
        EpilogParams(float("nan"), (0.0,))
    t = Tensor4D(np.zeros((1, 2, 1, 1), np.int32))
    with pytest.raises(ValueError):
        epilog(t, EpilogParams.uniform(3))


def test_fused_total_tap_sees_convout_not_output():
    shape, x, f = ones_twos()
    res = fused_conv_epilog(x, f, shape, EpilogParams.uniform(2, 0.0), ChecksumTaps(OutputTap.TOTAL))
    assert res.output_checksum == 27
    assert (res.output.array == 0).all()


def test_fused_channel_tap():
    shape, x, f = ones_twos()
    res = fused_conv_epilog(x, f, shape, EpilogParams.uniform(2), ChecksumTaps(OutputTap.CHANNEL))
    assert res.output_checksum.kind is ElemKind.I64
    assert res.output_checksum.array.ravel().tolist() == [27]
    assert res.output.array.ravel().tolist() == [9, 18]


def test_fused_next_layer_checksum(rng):
    shape = LayerShape(1, 3, 6, 6, 4, 3, 3, pad_h=1, pad_w=1)
    nxt = LayerShape(1, 4, 6, 6, 5, 3, 3, stride_h=2, stride_w=2, pad_h=1, pad_w=1)
    x, f = random_layer(rng, shape)
    params = EpilogParams.uniform(4, 1 / 64)
    res = fused_conv_epilog(x, f, shape, params, ChecksumTaps(next_layer=nxt))
    standalone = gen_input_checksum(epilog(conv_direct(x, f, shape), params), nxt)
    assert res.next_input_checksum.sums == standalone.sums
