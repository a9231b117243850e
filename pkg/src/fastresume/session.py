"""Stateless cookies, session keys, per-message MAC and replay protection."""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from . import _kernels, wire
from .dispatch import SocketAddr

WINDOW_SIZE = 64
TAG_LEN = wire.MAC_LEN


class Rejected(Exception):
    """An incoming message failed authentication; ``reason`` says why."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class SessionNotEstablished(RuntimeError):
    pass


def server_secret(seed: int) -> bytes:
    return random.Random(f"server-secret/{seed}").randbytes(32)


def generate_cookie(secret: bytes, client: SocketAddr, nonce: bytes) -> bytes:
    if len(nonce) != wire.NONCE_LEN:
        raise ValueError("nonce must be 8 bytes")
    return hmac.new(secret, client.packed() + nonce, hashlib.sha256).digest()


def verify_cookie(secret: bytes, client: SocketAddr, nonce: bytes, cookie: bytes) -> bool:
    if len(nonce) != wire.NONCE_LEN or len(cookie) != wire.COOKIE_LEN:
        return False
    return hmac.compare_digest(generate_cookie(secret, client, nonce), cookie)


def session_id_for(cookie: bytes) -> bytes:
    return hashlib.sha256(cookie).digest()[: wire.SESSION_ID_LEN]


class ReplayWindow:
    """64-entry sliding bitmap anchored at the highest sequence seen."""

    __slots__ = ("started", "top", "bitmap")

    def __init__(self):
        self.started = False
        self.top = 0
        self.bitmap = 0

    def accepts(self, seq: int) -> bool:
        return _kernels.replay_accepts(self.started, self.top, self.bitmap, seq)

    def mark(self, seq: int) -> None:
        self.top, self.bitmap = _kernels.replay_update(self.started, self.top, self.bitmap, seq)
        self.started = True

    def check_and_mark(self, seq: int) -> bool:
        if not self.accepts(seq):
            return False
        self.mark(seq)
        return True


@dataclass
class Session:
    """Keys and counters shared by the two ends holding the same cookie.

    ``role`` is ``"client"`` or ``"server"``; it picks which directional key
    is used for sending.
    """

    cookie: bytes
    role: str = "client"
    session_id: bytes = b""
    tx_key: bytes = b""
    rx_key: bytes = b""
    next_seq: int = 0
    replay_window: ReplayWindow = field(default_factory=ReplayWindow)
    peer_addr_hint: Optional[SocketAddr] = None

    def __post_init__(self):
        if len(self.cookie) != wire.COOKIE_LEN:
            raise ValueError("cookie must be 32 bytes")
        c2s = hmac.new(self.cookie, b"c2s", hashlib.sha256).digest()
        s2c = hmac.new(self.cookie, b"s2c", hashlib.sha256).digest()
        if self.role == "client":
            self.tx_key, self.rx_key = c2s, s2c
        elif self.role == "server":
            self.tx_key, self.rx_key = s2c, c2s
        else:
            raise ValueError(f"unknown role {self.role!r}")
        self.session_id = session_id_for(self.cookie)


def _tag(key: bytes, msg: wire.WireMessage) -> bytes:
    data = wire.encode(replace(msg, mac=wire.ZERO_MAC))
    return hmac.new(key, wire.mac_input(data), hashlib.sha256).digest()[:TAG_LEN]


def protect(sess: Optional[Session], msg: wire.WireMessage) -> wire.WireMessage:
    """Stamp session id and the next sequence number, then MAC the message."""
    if sess is None:
        raise SessionNotEstablished("no session keys")
    stamped = replace(msg, session_id=sess.session_id, seq=sess.next_seq, mac=wire.ZERO_MAC)
    sess.next_seq += 1
    return replace(stamped, mac=_tag(sess.tx_key, stamped))


def unprotect(sess: Session, msg: wire.WireMessage, src: SocketAddr) -> bytes:
    """Authenticate ``msg`` from ``src`` and return its payload.

    Raises :class:`Rejected` with reason ``bad-session-id``, ``bad-mac`` or
    ``replayed``. On success the replay window and ``peer_addr_hint`` move.
    """
    if msg.session_id != sess.session_id:
        raise Rejected("bad-session-id")
    if not hmac.compare_digest(_tag(sess.rx_key, msg), msg.mac):
        raise Rejected("bad-mac")
    if not sess.replay_window.check_and_mark(msg.seq):
        raise Rejected("replayed")
    sess.peer_addr_hint = src
    return msg.payload
