"""Pieces shared by the client and server state machines."""

from __future__ import annotations

import enum
import logging
from typing import Optional

from . import wire
from .dispatch import SendError, SocketAddr, SocketEntry
from .session import Session, protect

logger = logging.getLogger("fastresume")


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    IPC = "ipc"
    TCS = "tcs"


def build(
    msg_type: wire.MessageType, payload: bytes = b"", sess: Optional[Session] = None
) -> bytes:
    msg = wire.WireMessage(msg_type, payload=payload)
    if sess is not None:
        msg = protect(sess, msg)
    return wire.encode(msg)


def send(host, sock: SocketEntry, dst: Optional[SocketAddr], data: bytes) -> bool:
    """Send and report success; a failed send is logged, never raised."""
    try:
        host.send(sock, dst, data)
    except SendError as exc:
        host.log(f"SENDFAIL {sock.id} {exc}")
        logger.debug("send failed on %s: %s", sock.id, exc)
        return False
    return True
