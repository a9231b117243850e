"""Pure-Python kernels: wire header codec and replay-window arithmetic.

Same signatures as the compiled ``_speedups`` module; used when the extension
is not built or when ``FASTRESUME_PURE_PYTHON`` is set.
"""

import struct

HEADER_LEN = 20
MAC_LEN = 16
OVERHEAD = HEADER_LEN + MAC_LEN
VERSION = 1
KNOWN_TYPES = frozenset((0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x10, 0x11))

OK = 0
ERR_SHORT = 1
ERR_VERSION = 2
ERR_TYPE = 3
ERR_LENGTH = 4

WINDOW = 64
_MASK = (1 << 64) - 1

_header = struct.Struct("!BB8sQH")


def decode_fields(data):
    n = len(data)
    if n < OVERHEAD:
        return (ERR_SHORT, 0, b"", 0, b"", b"")
    version, msg_type, sid, seq, plen = _header.unpack_from(data)
    if version != VERSION:
        return (ERR_VERSION, msg_type, b"", 0, b"", b"")
    if msg_type not in KNOWN_TYPES:
        return (ERR_TYPE, msg_type, b"", 0, b"", b"")
    if n != OVERHEAD + plen:
        return (ERR_LENGTH, msg_type, b"", 0, b"", b"")
    data = bytes(data)
    return (OK, msg_type, sid, seq, data[HEADER_LEN:HEADER_LEN + plen], data[n - MAC_LEN:])


def encode_fields(msg_type, session_id, seq, payload, mac):
    return _header.pack(VERSION, msg_type, session_id, seq, len(payload)) + payload + mac


def replay_accepts(started, top, bitmap, seq):
    if not started or seq > top:
        return True
    offset = top - seq
    if offset >= WINDOW:
        return False
    return not (bitmap >> offset) & 1


def replay_update(started, top, bitmap, seq):
    if not started:
        return seq, 1
    if seq > top:
        shift = seq - top
        bitmap = 1 if shift >= WINDOW else ((bitmap << shift) | 1) & _MASK
        return seq, bitmap
    return top, bitmap | (1 << (top - seq))
