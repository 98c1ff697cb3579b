import numpy as np
import pytest

from aspectedit.codec import Codec, decode, encode
from aspectedit.errors import InvalidArgumentError, ShapeError


class TestIdentityCodec:
    def test_round_trip_is_copy(self):
        img = np.random.default_rng(0).random((3, 4, 4))
        codec = Codec()
        out = decode(encode(img, codec), codec)
        assert np.array_equal(out, img)
        assert out is not img


class TestLinearCodec:
    def test_round_trip_inverts(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        codec = Codec(kind="linear", matrix=m, bias=rng.standard_normal(3))
        img = rng.random((3, 5, 5))
        assert np.allclose(decode(encode(img, codec), codec), img, atol=1e-10)

    def test_encode_matches_per_pixel_matmul(self):
        rng = np.random.default_rng(2)
        m = np.array([[2.0, 0.0], [1.0, 1.0]])
        bias = np.array([0.5, -0.5])
        codec = Codec(kind="linear", matrix=m, bias=bias)
        img = rng.random((2, 2, 2))
        out = encode(img, codec)
        for y in range(2):
            for x in range(2):
                assert np.allclose(out[:, y, x], m @ img[:, y, x] + bias)

    def test_singular_matrix_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Codec(kind="linear", matrix=np.zeros((2, 2)))

    def test_channel_mismatch_rejected(self):
        codec = Codec(kind="linear", matrix=np.eye(3))
        with pytest.raises(ShapeError):
            encode(np.zeros((2, 2, 2)), codec)

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Codec(kind="jpeg")
