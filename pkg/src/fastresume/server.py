"""Server side of the baseline, IPC and TCS handshakes.

Baseline
    the per-client ComSocket is *connected* and shares the welcome port, so a
    client that changes address lands on the WelcomeSocket and must redo the
    full handshake. An idle timer tears the session down.
IPC
    after cookie verification the server opens a *non-connected* socket on a
    fresh port and answers from it.
TCS
    after cookie verification the server answers from a temporary socket
    connected to the client on the welcome port, then redirects the client to
    a non-connected socket on a fresh port, retransmitting the redirect until
    the client shows up there.
"""

from __future__ import annotations

import enum
import random
import struct
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, Optional, Set, Tuple

from . import wire
from .dispatch import HostStack, SocketAddr, SocketEntry
from .endpoint import Variant, build, send
from .session import (
    Rejected,
    Session,
    generate_cookie,
    server_secret,
    session_id_for,
    unprotect,
    verify_cookie,
)

MT = wire.MessageType


class PortRangeExhausted(RuntimeError):
    pass


class Phase(str, enum.Enum):
    AWAIT_HELLO = "await_hello"
    AWAIT_COOKIE_HELLO = "await_cookie_hello"
    AWAIT_HANDSHAKE_ACK = "await_handshake_ack"
    REDIRECTING = "redirecting"
    ESTABLISHED = "established"
    CLOSED = "closed"


@dataclass
class ServerConfig:
    welcome_addr: SocketAddr
    variant: Variant = Variant.TCS
    idle_timeout_ms: int = 1000
    redirect_retx_ms: int = 500
    port_range: Tuple[int, int] = (20000, 29999)
    seed: int = 0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.idle_timeout_ms <= 0 or self.redirect_retx_ms <= 0:
            raise ValueError("timeouts must be positive")


@dataclass(eq=False)
class ServerSessionState:
    sess: Session
    phase: Phase
    client_hint: SocketAddr
    temp: Optional[SocketEntry] = None
    com: Optional[SocketEntry] = None
    timers: Dict[str, object] = field(default_factory=dict)
    redirect_transmissions: int = 0

    @property
    def sid(self) -> str:
        return self.sess.session_id.hex()


class Server:
    def __init__(self, host: HostStack, config: ServerConfig):
        self.host = host
        self.config = config
        self.variant = config.variant
        self.secret = server_secret(config.seed)
        self._nonces = random.Random(f"nonce/{config.seed}")
        self._port_cursor = config.port_range[0]
        self.sessions: Dict[bytes, ServerSessionState] = {}
        self.welcome: Optional[SocketEntry] = None
        self.handshakes_completed = 0
        self.redirect_transmissions = 0
        self.redirect_retransmissions = 0
        self.messages_seen: Set[int] = set()
        self.dropped = 0

    def start(self) -> SocketEntry:
        self.welcome = self.host.bind(self.config.welcome_addr, self._on_welcome)
        return self.welcome

    # -- bookkeeping -------------------------------------------------------

    def _log(self, st: Optional[ServerSessionState], event: str) -> None:
        sid = st.sid if st else "-"
        self.host.log(f"SRV {self.variant.value} {sid} {event}")

    def _drop(self, why: str) -> None:
        self.dropped += 1
        self._log(None, f"drop {why}")

    def _transition(self, st: ServerSessionState, phase: Phase) -> None:
        self._log(st, f"{st.phase.value}->{phase.value}")
        st.phase = phase

    def _arm(self, st: ServerSessionState, name: str, delay: int) -> None:
        old = st.timers.pop(name, None)
        if old is not None:
            old.cancel()
        st.timers[name] = self.host.call_later(delay, self.on_timer, st, name)

    def _cancel(self, st: ServerSessionState, name: str) -> None:
        timer = st.timers.pop(name, None)
        if timer is not None:
            timer.cancel()

    def port_allocator(self) -> int:
        """Next free port in the configured range, sequentially."""
        lo, hi = self.config.port_range
        used = {s.local.port for s in self.host.sockets.values()}
        span = hi - lo + 1
        for i in range(span):
            port = lo + (self._port_cursor - lo + i) % span
            if port not in used:
                self._port_cursor = port + 1 if port < hi else lo
                return port
        raise PortRangeExhausted(f"no free port in {lo}-{hi}")

    # -- welcome socket ----------------------------------------------------

    def _on_welcome(self, sock: SocketEntry, src: SocketAddr, data: bytes) -> None:
        try:
            msg = wire.decode(data)
        except wire.DecodeError as exc:
            self._drop(f"undecodable from {src}: {type(exc).__name__}")
            return
        if msg.msg_type is not MT.CLIENT_HELLO:
            # not a handshake opener: the welcome socket has nothing to match it to
            self._drop(f"{msg.msg_type.name} from {src} on welcome socket")
            return
        self._on_hello(sock, src, msg)

    def _on_hello(self, sock: SocketEntry, src: SocketAddr, msg: wire.WireMessage) -> None:
        if not msg.payload:
            nonce = self._nonces.randbytes(wire.NONCE_LEN)
            cookie = generate_cookie(self.secret, src, nonce)
            send(self.host, sock, src, build(MT.HELLO_VERIFY_REQUEST, wire.pack_cookie(cookie, nonce)))
            self._log(None, f"hello-verify to {src}")
            return
        try:
            cookie, nonce = wire.unpack_cookie(msg.payload)
        except wire.DecodeError:
            self._drop(f"malformed cookie from {src}")
            return
        if not verify_cookie(self.secret, src, nonce, cookie):
            self._drop(f"bad cookie from {src}")
            return
        st = self.sessions.get(session_id_for(cookie))
        if st is None:
            self._create(src, cookie, msg)
            return
        try:
            unprotect(st.sess, msg, src)
        except Rejected as exc:
            self._drop(f"hello {exc.reason}")
            return
        if st.phase is Phase.AWAIT_HANDSHAKE_ACK:
            self._send_server_hello(st, src)

    def _create(self, src: SocketAddr, cookie: bytes, msg: wire.WireMessage) -> None:
        sess = Session(cookie, "server")
        try:
            unprotect(sess, msg, src)
        except Rejected as exc:
            self._drop(f"hello {exc.reason}")
            return
        st = ServerSessionState(sess, Phase.AWAIT_COOKIE_HELLO, src)
        self._log(st, f"cookie-verified client={src}")
        welcome = self.config.welcome_addr
        if self.variant is Variant.IPC:
            local = SocketAddr(welcome.ip, self.port_allocator())
            st.com = self.host.bind(local, partial(self._on_session, st))
        else:
            self._evict_connected(src)
            connected = self.host.bind_connected(welcome, src, partial(self._on_session, st))
            if self.variant is Variant.TCS:
                st.temp = connected
            else:
                st.com = connected
        self.sessions[sess.session_id] = st
        self._transition(st, Phase.AWAIT_HANDSHAKE_ACK)
        self._send_server_hello(st, src)
        if self.variant is Variant.BASELINE:
            self._arm(st, "idle", self.config.idle_timeout_ms)

    def _evict_connected(self, peer: SocketAddr) -> None:
        """A new handshake from ``peer`` supersedes a session connected to it."""
        for st in list(self.sessions.values()):
            sock = st.temp if self.variant is Variant.TCS else st.com
            if sock is not None and not sock.closed and sock.peer == peer:
                self._teardown(st, "superseded")

    def _send_server_hello(self, st: ServerSessionState, dst: SocketAddr) -> None:
        sock = st.temp if self.variant is Variant.TCS else st.com
        send(self.host, sock, dst, build(MT.SERVER_HELLO, b"", st.sess))
        self._log(st, f"server-hello from {sock.local}")

    def _send_redirect(self, st: ServerSessionState) -> None:
        final = st.com.local
        payload = wire.pack_redirect(final.ip, final.port)
        send(self.host, st.temp, None, build(MT.ADDRESS_REDIRECT, payload, st.sess))
        if st.redirect_transmissions:
            self.redirect_retransmissions += 1
        st.redirect_transmissions += 1
        self.redirect_transmissions += 1
        self._log(st, f"redirect #{st.redirect_transmissions} to {final}")
        self._arm(st, "redirect", self.config.redirect_retx_ms)

    def _teardown(self, st: ServerSessionState, why: str) -> None:
        for name in list(st.timers):
            self._cancel(st, name)
        for sock in (st.temp, st.com):
            if sock is not None and not sock.closed:
                self.host.close(sock)
        self.sessions.pop(st.sess.session_id, None)
        self._transition(st, Phase.CLOSED)
        self._log(st, f"teardown {why}")

    # -- per-session sockets -----------------------------------------------

    def on_datagram(self, sock: SocketEntry, src: SocketAddr, data: bytes) -> None:
        """Entry point for any server socket."""
        if sock is self.welcome:
            self._on_welcome(sock, src, data)
            return
        for st in self.sessions.values():
            if sock is st.temp or sock is st.com:
                self._on_session(st, sock, src, data)
                return
        self._drop(f"datagram on unknown socket {sock.id}")

    def _on_session(self, st: ServerSessionState, sock: SocketEntry, src: SocketAddr, data: bytes) -> None:
        try:
            msg = wire.decode(data)
        except wire.DecodeError as exc:
            self._drop(f"undecodable from {src}: {type(exc).__name__}")
            return
        if msg.msg_type is MT.CLIENT_HELLO:
            # a connected socket shadows the welcome socket for this peer
            self._on_hello(sock, src, msg)
            return
        if msg.session_id != st.sess.session_id:
            self._drop(f"unknown session {msg.session_id.hex()} from {src}")
            return
        try:
            payload = unprotect(st.sess, msg, src)
        except Rejected as exc:
            self._drop(f"{msg.msg_type.name} {exc.reason}")
            return
        if self.variant is Variant.BASELINE:
            self._arm(st, "idle", self.config.idle_timeout_ms)
        if msg.msg_type is MT.HANDSHAKE_ACK:
            self._on_handshake_ack(st, sock, src)
        elif msg.msg_type is MT.DATA:
            self._on_data(st, sock, src, msg, payload)
        else:
            self._drop(f"unexpected {msg.msg_type.name}")

    def _on_handshake_ack(self, st: ServerSessionState, sock: SocketEntry, src: SocketAddr) -> None:
        if st.phase is not Phase.AWAIT_HANDSHAKE_ACK:
            # our ServerFinished was lost; the redirect timer covers TCS
            send(self.host, sock, src, build(MT.SERVER_FINISHED, b"", st.sess))
            return
        send(self.host, sock, src, build(MT.SERVER_FINISHED, b"", st.sess))
        if self.variant is Variant.TCS:
            local = SocketAddr(self.config.welcome_addr.ip, self.port_allocator())
            st.com = self.host.bind(local, partial(self._on_session, st))
            self._transition(st, Phase.REDIRECTING)
            self._send_redirect(st)
        else:
            self._establish(st)

    def _establish(self, st: ServerSessionState) -> None:
        self.handshakes_completed += 1
        self._transition(st, Phase.ESTABLISHED)

    def _on_data(self, st, sock, src, msg: wire.WireMessage, payload: bytes) -> None:
        if st.phase is Phase.REDIRECTING:
            if sock is not st.com:
                self._drop("data on temporary socket")
                return
            self._cancel(st, "redirect")
            self.host.close(st.temp)
            self._log(st, f"temp socket {st.temp.id} closed")
            self._establish(st)
        if st.phase is not Phase.ESTABLISHED:
            self._drop(f"data in phase {st.phase.value}")
            return
        msg_id = payload[:8]
        self.messages_seen.add(int.from_bytes(msg_id, "big"))
        ack = struct.pack("!Q", msg.seq) + msg_id
        send(self.host, sock, src, build(MT.DATA_ACK, ack, st.sess))

    # -- timers ------------------------------------------------------------

    def on_timer(self, st: ServerSessionState, name: str) -> None:
        st.timers.pop(name, None)
        if name == "redirect" and st.phase is Phase.REDIRECTING:
            self._send_redirect(st)
        elif name == "idle" and st.phase is not Phase.CLOSED:
            self._teardown(st, "idle-timeout")
