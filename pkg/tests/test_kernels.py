import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastresume import _kernels, _purepy

try:
    from fastresume import _speedups
except ImportError:
    _speedups = None

needs_ext = pytest.mark.skipif(_speedups is None, reason="compiled kernels not built")
u64 = st.integers(0, (1 << 64) - 1)


def test_backend_is_reported():
    assert _kernels.BACKEND in ("cython", "python")


def test_decode_valid(kernels):
    data = struct.pack("!BB8sQH", 1, 0x10, b"\x00" * 7 + b"\x01", 9, 3) + b"abc" + b"m" * 16
    assert kernels.decode_fields(data) == (0, 0x10, b"\x00" * 7 + b"\x01", 9, b"abc", b"m" * 16)


@pytest.mark.parametrize(
    "data, status",
    [
        (b"", _purepy.ERR_SHORT),
        (b"\x01" * 35, _purepy.ERR_SHORT),
        (b"\x02\x10" + bytes(34), _purepy.ERR_VERSION),
        (b"\x01\xff" + bytes(34), _purepy.ERR_TYPE),
        (b"\x01\x10" + bytes(16) + b"\x00\x01" + bytes(16), _purepy.ERR_LENGTH),
    ],
)
def test_decode_errors(kernels, data, status):
    assert kernels.decode_fields(data)[0] == status


def test_encode_layout(kernels):
    out = kernels.encode_fields(0x02, b"\x00" * 8, 0, b"c" * 32, b"\x00" * 16)
    assert len(out) == 68
    assert out[18:20] == b"\x00\x20"


@needs_ext
@settings(max_examples=300)
@given(st.binary(max_size=120))
def test_decode_parity_arbitrary_bytes(data):
    assert _speedups.decode_fields(data) == _purepy.decode_fields(data)


@needs_ext
@settings(max_examples=300)
@given(
    st.sampled_from(sorted(_purepy.KNOWN_TYPES)),
    st.binary(min_size=8, max_size=8),
    u64,
    st.binary(max_size=300),
    st.binary(min_size=16, max_size=16),
)
def test_encode_parity(msg_type, sid, seq, payload, mac):
    assert _speedups.encode_fields(msg_type, sid, seq, payload, mac) == _purepy.encode_fields(
        msg_type, sid, seq, payload, mac
    )


@needs_ext
def test_replay_parity_random_walk():
    rng = random.Random(5)
    for _ in range(200):
        state_py = state_cy = (False, 0, 0)
        base = rng.choice([0, (1 << 64) - 200])
        for _ in range(60):
            seq = base + rng.randrange(150)
            a = _purepy.replay_accepts(*state_py, seq)
            b = _speedups.replay_accepts(*state_cy, seq)
            assert a == b
            if a:
                state_py = (True, *_purepy.replay_update(*state_py, seq))
                state_cy = (True, *_speedups.replay_update(*state_cy, seq))
                assert state_py == state_cy
