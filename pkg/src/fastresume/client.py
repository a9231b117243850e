"""Client side: handshakes, stop-and-wait workload, handover reaction.

The workload sends ``total_messages`` application messages one at a time;
the next message leaves ``think_ms`` after the previous acknowledgment.
Each Data payload starts with an 8-byte application message id, so a
retransmission (which always carries a fresh sequence number) is still
recognised as the same message.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import wire
from .dispatch import HostStack, SocketAddr, SocketEntry
from .endpoint import Variant, build, send
from .session import Rejected, Session, unprotect

MT = wire.MessageType
PAYLOAD_FILL = bytes(range(256))


class ClientPhase(str, enum.Enum):
    IDLE = "idle"
    HANDSHAKING = "handshaking"
    ESTABLISHED = "established"


@dataclass
class ClientConfig:
    server_welcome: SocketAddr
    variant: Variant = Variant.TCS
    app_timeout_ms: int = 1000
    total_messages: int = 600
    think_ms: int = 20
    local_port: int = 1234
    fresh_port_after_handover: bool = False
    payload_size: int = 64

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.total_messages <= 0 or self.app_timeout_ms <= 0:
            raise ValueError("total_messages and app_timeout_ms must be positive")
        if self.think_ms < 0 or self.payload_size < 8:
            raise ValueError("think_ms must be >= 0 and payload_size >= 8")


@dataclass
class Inflight:
    msg_id: int
    seq: int = -1
    send_time: int = 0


@dataclass
class HandoverRecord:
    iface: int
    down_at: int
    last_ack_before: Optional[int]
    mid_session: bool
    handshake_started_at: Optional[int] = None
    recovered_at: Optional[int] = None

    @property
    def recovery_ms(self) -> Optional[int]:
        if self.recovered_at is None:
            return None
        return self.recovered_at - self.down_at


@dataclass
class ClientStats:
    handshakes_completed: int = 0
    handshake_flights_after_establish: int = 0
    retransmissions: int = 0
    data_sent: int = 0
    start_time: Optional[int] = None
    done_time: Optional[int] = None
    handovers: List[HandoverRecord] = field(default_factory=list)


class Client:
    def __init__(self, host: HostStack, config: ClientConfig):
        self.host = host
        self.cfg = config
        self.variant = config.variant
        self.phase = ClientPhase.IDLE
        self.step: Optional[str] = None
        self.sess: Optional[Session] = None
        self.server_com_addr: Optional[SocketAddr] = None
        self.acked_count = 0
        self.inflight: Optional[Inflight] = None
        self.active_iface = min(host.interfaces)
        self.sockets: Dict[int, SocketEntry] = {}
        self.ever_established = False
        self.done = False
        self.deferred = False
        self.last_ack_time: Optional[int] = None
        self.stats = ClientStats()
        self._timer = None
        self._think = None
        self._flight: Optional[tuple] = None
        self._next_port = config.local_port
        host.interface_listeners.append(self.on_interface_event)

    # -- helpers -----------------------------------------------------------

    def _log(self, event: str) -> None:
        self.host.log(f"CLI {self.variant.value} {event}")

    def _iface_up(self, iface: int) -> bool:
        return self.host.interfaces[iface].up

    def _pick_up_iface(self) -> Optional[int]:
        if self._iface_up(self.active_iface):
            return self.active_iface
        for iface in sorted(self.host.interfaces):
            if self._iface_up(iface):
                return iface
        return None

    def _cancel_timer(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    def _arm(self, kind: str) -> None:
        self._cancel_timer()
        self._timer = self.host.call_later(self.cfg.app_timeout_ms, self.on_timer, kind)

    def _close_sockets(self) -> None:
        for sock in self.sockets.values():
            if not sock.closed:
                self.host.close(sock)
        self.sockets.clear()

    def _socket(self, iface: int) -> SocketEntry:
        """The socket for ``iface``, rebinding when the interface address moved."""
        ip = self.host.interfaces[iface].ip
        sock = self.sockets.get(iface)
        if sock is not None and not sock.closed and sock.local.ip == ip:
            return sock
        if sock is not None:
            if not sock.closed:
                self.host.close(sock)
            if self.cfg.fresh_port_after_handover:
                self._next_port += 1
        local = SocketAddr(ip, self._next_port)
        if self.phase is ClientPhase.ESTABLISHED:
            sock = self.host.bind_connected(local, self.server_com_addr, self.on_datagram)
        else:
            sock = self.host.bind(local, self.on_datagram)
        self.sockets[iface] = sock
        return sock

    def _send(self, data: bytes, dst: SocketAddr) -> bool:
        return send(self.host, self._socket(self.active_iface), dst, data)

    # -- handshake ---------------------------------------------------------

    def start(self) -> None:
        self.start_handshake()

    def start_handshake(self) -> None:
        self._cancel_timer()
        self._close_sockets()
        self.sess = None
        self.server_com_addr = None
        iface = self._pick_up_iface()
        if iface is None:
            self.deferred = True
            self.phase = ClientPhase.IDLE
            self._log("handshake deferred: no interface up")
            return
        self.deferred = False
        self.active_iface = iface
        self.phase = ClientPhase.HANDSHAKING
        if self.stats.start_time is None:
            self.stats.start_time = self.host.now()
        for rec in self.stats.handovers:
            if rec.handshake_started_at is None:
                rec.handshake_started_at = self.host.now()
        self._log("handshake start")
        self.step = "hvr"
        self._flight_send(MT.CLIENT_HELLO, b"", self.cfg.server_welcome)

    def _flight_send(self, msg_type: MT, payload: bytes, dst: SocketAddr) -> None:
        self._flight = (msg_type, payload, dst)
        if self.ever_established:
            self.stats.handshake_flights_after_establish += 1
        self._send(build(msg_type, payload, self.sess), dst)
        self._arm("handshake")

    def _established(self) -> None:
        self._cancel_timer()
        self.phase = ClientPhase.ESTABLISHED
        self.step = None
        self.ever_established = True
        self.stats.handshakes_completed += 1
        sock = self.sockets.get(self.active_iface)
        if sock is not None and not sock.closed and sock.peer is None:
            self.host.connect(sock, self.server_com_addr)
        for iface in list(self.sockets):
            if iface != self.active_iface:
                self.host.close(self.sockets.pop(iface))
        self._log(f"established server={self.server_com_addr}")
        if self.inflight is not None:
            self.stats.retransmissions += 1
        self._send_data()

    # -- data --------------------------------------------------------------

    def _send_data(self, rearm: bool = True) -> None:
        self._think = None
        if self.done or self.phase is not ClientPhase.ESTABLISHED:
            return
        if self.inflight is None:
            self.inflight = Inflight(self.acked_count)
        body = struct.pack("!Q", self.inflight.msg_id)
        fill = self.cfg.payload_size - len(body)
        body += (PAYLOAD_FILL * (fill // 256 + 1))[:fill]
        data = build(MT.DATA, body, self.sess)
        self.inflight.seq = int.from_bytes(data[10:18], "big")
        self.inflight.send_time = self.host.now()
        self.stats.data_sent += 1
        if rearm:
            self._arm("data")
        self._send(data, self.server_com_addr)

    def _retransmit(self, why: str) -> None:
        self.stats.retransmissions += 1
        self._log(f"retransmit msg={self.inflight.msg_id} ({why})")
        self._send_data()

    def _on_ack(self, payload: bytes) -> None:
        if len(payload) != 16 or self.inflight is None:
            return
        msg_id = struct.unpack("!Q", payload[8:])[0]
        if msg_id != self.inflight.msg_id:
            return
        now = self.host.now()
        self._cancel_timer()
        self.inflight = None
        self.acked_count += 1
        self.last_ack_time = now
        for rec in self.stats.handovers:
            if rec.recovered_at is None:
                rec.recovered_at = now
        if self.acked_count >= self.cfg.total_messages:
            self.done = True
            self.stats.done_time = now
            self._log(f"done acked={self.acked_count}")
            return
        if self.cfg.think_ms:
            self._think = self.host.call_later(self.cfg.think_ms, self._send_data)
        else:
            self._send_data()

    # -- events ------------------------------------------------------------

    def on_datagram(self, sock: SocketEntry, src: SocketAddr, data: bytes) -> None:
        try:
            msg = wire.decode(data)
        except wire.DecodeError:
            self._log(f"drop undecodable from {src}")
            return
        mt = msg.msg_type
        if mt is MT.HELLO_VERIFY_REQUEST:
            if self.phase is ClientPhase.HANDSHAKING and self.step == "hvr":
                self._on_hello_verify(msg)
            return
        if self.sess is None:
            return
        try:
            payload = unprotect(self.sess, msg, src)
        except Rejected as exc:
            self._log(f"drop {mt.name} {exc.reason}")
            return
        if self.phase is ClientPhase.ESTABLISHED:
            if mt is MT.DATA_ACK:
                self._on_ack(payload)
            return
        if self.phase is not ClientPhase.HANDSHAKING:
            return
        if mt is MT.SERVER_HELLO and self.step == "sh":
            if self.variant is not Variant.TCS:
                self.server_com_addr = src
            self.step = "finished"
            self._flight_send(MT.HANDSHAKE_ACK, b"", src)
        elif mt is MT.SERVER_FINISHED and self.step == "finished":
            if self.variant is Variant.TCS:
                # from here the server owns liveness: it retransmits the redirect
                self.step = "redirect"
                self._cancel_timer()
            else:
                self._established()
        elif mt is MT.ADDRESS_REDIRECT and self.variant is Variant.TCS and self.step in ("finished", "redirect"):
            ip, port = wire.unpack_redirect(payload)
            self.server_com_addr = SocketAddr(ip, port)
            self._log(f"redirect to {self.server_com_addr}")
            self._established()

    def _on_hello_verify(self, msg: wire.WireMessage) -> None:
        try:
            cookie, nonce = wire.unpack_cookie(msg.payload)
        except wire.DecodeError:
            return
        self.sess = Session(cookie, "client")
        self.step = "sh"
        self._flight_send(MT.CLIENT_HELLO, wire.pack_cookie(cookie, nonce), self.cfg.server_welcome)

    def on_timer(self, kind: str) -> None:
        self._timer = None
        if kind == "handshake":
            if self.phase is ClientPhase.HANDSHAKING and self._flight is not None:
                self.stats.retransmissions += 1
                msg_type, payload, dst = self._flight
                self._log(f"handshake retransmit {msg_type.name}")
                self._flight_send(msg_type, payload, dst)
        elif kind == "data" and self.phase is ClientPhase.ESTABLISHED and self.inflight is not None:
            if self.variant is Variant.BASELINE:
                self._log("connection interrupted: app timeout")
                self.phase = ClientPhase.IDLE
                self.start_handshake()
            else:
                self._retransmit("app timeout")

    def on_interface_event(self, iface: int, up: bool, ip: str) -> None:
        now = self.host.now()
        self._log(f"iface {iface} {'up' if up else 'down'} ip={ip}")
        if not up:
            if self.ever_established and not self.done:
                self.stats.handovers.append(
                    HandoverRecord(iface, now, self.last_ack_time, self.phase is ClientPhase.ESTABLISHED)
                )
            if iface != self.active_iface or self.done:
                return
            other = self._pick_up_iface()
            if other is None:
                self._log("paused: no interface up")
                return
            self.active_iface = other
            self._log(f"failover to iface {other}")
            self._resume()
            return
        if self.deferred:
            self.start_handshake()
            return
        if self.done or self._iface_up(self.active_iface) and iface != self.active_iface:
            return
        self.active_iface = iface
        self._resume()

    def _resume(self) -> None:
        """React to the active interface changing under an open session."""
        if self.phase is ClientPhase.HANDSHAKING:
            self.start_handshake()
        elif self.phase is ClientPhase.ESTABLISHED and self.inflight is not None:
            if self.variant is Variant.BASELINE:
                # lands on the server's welcome socket; recovery waits for the timer
                self.stats.retransmissions += 1
                self._send_data(rearm=False)
            else:
                self._retransmit("handover")
