"""Fixed-layout wire format for handshake and data messages.

Layout (big-endian)::

    version(1) | type(1) | session_id(8) | seq(8) | payload_len(2) | payload | mac(16)

Every message is therefore ``36 + payload_len`` bytes long.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from enum import IntEnum

from . import _kernels

VERSION = 1
HEADER_LEN = 20
MAC_LEN = 16
OVERHEAD = HEADER_LEN + MAC_LEN
MAX_PAYLOAD = 0xFFFF
SESSION_ID_LEN = 8
ZERO_SESSION_ID = bytes(SESSION_ID_LEN)
ZERO_MAC = bytes(MAC_LEN)
COOKIE_LEN = 32
NONCE_LEN = 8
REDIRECT_LEN = 6


class MessageType(IntEnum):
    CLIENT_HELLO = 0x01
    HELLO_VERIFY_REQUEST = 0x02
    SERVER_HELLO = 0x03
    HANDSHAKE_ACK = 0x04
    SERVER_FINISHED = 0x05
    ADDRESS_REDIRECT = 0x06
    DATA = 0x10
    DATA_ACK = 0x11


HANDSHAKE_TYPES = frozenset(
    {
        MessageType.CLIENT_HELLO,
        MessageType.HELLO_VERIFY_REQUEST,
        MessageType.SERVER_HELLO,
        MessageType.HANDSHAKE_ACK,
        MessageType.SERVER_FINISHED,
        MessageType.ADDRESS_REDIRECT,
    }
)


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    """Base class for all decode failures."""


class ShortBuffer(DecodeError):
    pass


class UnknownVersion(DecodeError):
    pass


class UnknownMessageType(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


_ERRORS = {
    _kernels.ERR_SHORT: (ShortBuffer, "buffer shorter than the 36-byte minimum"),
    _kernels.ERR_VERSION: (UnknownVersion, "unsupported version"),
    _kernels.ERR_TYPE: (UnknownMessageType, "unknown message type"),
    _kernels.ERR_LENGTH: (LengthMismatch, "payload_len does not match buffer size"),
}


@dataclass(frozen=True)
class WireMessage:
    msg_type: MessageType
    session_id: bytes = ZERO_SESSION_ID
    seq: int = 0
    payload: bytes = b""
    mac: bytes = ZERO_MAC
    version: int = VERSION

    def describe(self) -> str:
        """One-line rendering used in traces."""
        return (
            f"{self.msg_type.name} sid={self.session_id.hex()} "
            f"seq={self.seq} len={len(self.payload)}"
        )


def encode(msg: WireMessage) -> bytes:
    if msg.version != VERSION:
        raise EncodeError(f"unsupported version {msg.version}")
    if len(msg.payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload of {len(msg.payload)} bytes exceeds {MAX_PAYLOAD}")
    if len(msg.session_id) != SESSION_ID_LEN:
        raise EncodeError("session_id must be 8 bytes")
    if len(msg.mac) != MAC_LEN:
        raise EncodeError("mac must be 16 bytes")
    if not 0 <= msg.seq < 1 << 64:
        raise EncodeError("seq out of 64-bit range")
    return _kernels.encode_fields(
        int(msg.msg_type), bytes(msg.session_id), msg.seq, bytes(msg.payload), bytes(msg.mac)
    )


def decode(data: bytes) -> WireMessage:
    status, msg_type, sid, seq, payload, mac = _kernels.decode_fields(data)
    if status:
        exc, text = _ERRORS[status]
        if status in (_kernels.ERR_TYPE, _kernels.ERR_VERSION):
            text = f"{text} (type byte 0x{msg_type:02x})"
        raise exc(text)
    return WireMessage(MessageType(msg_type), sid, seq, payload, mac)


def mac_input(data: bytes) -> bytes:
    """Bytes covered by the MAC: the encoded message minus its trailing MAC."""
    return data[:-MAC_LEN]


def pack_cookie(cookie: bytes, nonce: bytes) -> bytes:
    if len(cookie) != COOKIE_LEN or len(nonce) != NONCE_LEN:
        raise EncodeError("cookie must be 32 bytes and nonce 8 bytes")
    return cookie + nonce


def unpack_cookie(payload: bytes) -> tuple[bytes, bytes]:
    if len(payload) != COOKIE_LEN + NONCE_LEN:
        raise LengthMismatch("cookie payload must be 40 bytes")
    return payload[:COOKIE_LEN], payload[COOKIE_LEN:]


def pack_redirect(ip: str, port: int) -> bytes:
    return socket.inet_aton(ip) + struct.pack("!H", port)


def unpack_redirect(payload: bytes) -> tuple[str, int]:
    if len(payload) != REDIRECT_LEN:
        raise LengthMismatch("redirect payload must be 6 bytes")
    return socket.inet_ntoa(payload[:4]), struct.unpack("!H", payload[4:])[0]


def try_describe(data: bytes) -> str:
    try:
        return decode(data).describe()
    except DecodeError as exc:
        return f"<undecodable: {type(exc).__name__}>"
