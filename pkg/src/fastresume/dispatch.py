"""Kernel-style UDP demultiplexing across connected and non-connected sockets.

A datagram arriving at a host goes to, in order of preference:

1. a connected socket whose local address matches the destination and whose
   peer equals the datagram source;
2. a non-connected socket whose local address matches the destination;
3. nowhere (dropped).

A wildcard local ip (``0.0.0.0``) matches any destination ip on the host;
within a tier an exact-ip socket beats a wildcard one.
"""

from __future__ import annotations

import itertools
import socket
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Tuple

WILDCARD = "0.0.0.0"


class AddressInUse(OSError):
    pass


class SendError(OSError):
    """Raised when a socket cannot send (interface down, socket closed)."""


class UnknownInterface(KeyError):
    pass


@dataclass(frozen=True, order=True)
class SocketAddr:
    ip: str
    port: int

    def __post_init__(self):
        socket.inet_aton(self.ip)
        if not 0 <= self.port <= 0xFFFF:
            raise ValueError(f"port out of range: {self.port}")

    def __str__(self) -> str:
        return f"{self.ip}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "SocketAddr":
        ip, _, port = text.rpartition(":")
        return cls(ip, int(port))

    def packed(self) -> bytes:
        return socket.inet_aton(self.ip) + self.port.to_bytes(2, "big")


@dataclass
class Datagram:
    src: SocketAddr
    dst: SocketAddr
    data: bytes
    inject_time: int = 0

    def __post_init__(self):
        if not self.data:
            raise ValueError("datagram payload must be non-empty")


Handler = Callable[["SocketEntry", SocketAddr, bytes], None]


@dataclass(eq=False)
class SocketEntry:
    id: str
    local: SocketAddr
    peer: Optional[SocketAddr] = None
    rx_queue: Deque[Tuple[SocketAddr, bytes]] = field(default_factory=deque)
    handler: Optional[Handler] = None
    closed: bool = False

    @property
    def connected(self) -> bool:
        return self.peer is not None

    def __repr__(self) -> str:
        peer = f" peer={self.peer}" if self.peer else ""
        return f"<SocketEntry {self.id} {self.local}{peer}>"


@dataclass
class Interface:
    id: int
    ip: str
    up: bool = True


def _local_matches(local: SocketAddr, dst: SocketAddr) -> bool:
    return local.port == dst.port and local.ip in (dst.ip, WILDCARD)


def select_socket(
    sockets: List[SocketEntry], dgram: Datagram
) -> Tuple[Optional[SocketEntry], str]:
    """Apply the dispatch rule; returns the chosen socket and the reason."""
    connected = None
    unconnected = None
    for s in sockets:
        if s.closed or not _local_matches(s.local, dgram.dst):
            continue
        exact = s.local.ip != WILDCARD
        if s.peer is not None:
            if s.peer == dgram.src and (connected is None or exact):
                connected = s
        elif unconnected is None or exact:
            unconnected = s
    if connected is not None:
        return connected, "connected-match"
    if unconnected is not None:
        return unconnected, "unconnected"
    return None, "none"


class HostStack:
    """Socket table and interfaces of one emulated host.

    When attached to a :class:`~fastresume.netsim.Network` (``net``), the
    stack also offers the transport surface the endpoints are written
    against: ``send``, ``call_later``, ``now`` and ``log``.
    """

    def __init__(self, name: str, interfaces: Optional[Dict[int, str]] = None):
        self.name = name
        self.interfaces: Dict[int, Interface] = {}
        for iface, ip in (interfaces or {}).items():
            self.add_interface(iface, ip)
        self.sockets: Dict[str, SocketEntry] = {}
        self.net = None
        self.interface_listeners: List[Callable[[int, bool, str], None]] = []
        self._ids = itertools.count(1)

    # -- interfaces --------------------------------------------------------

    def add_interface(self, iface: int, ip: str) -> Interface:
        socket.inet_aton(ip)
        entry = self.interfaces[iface] = Interface(iface, ip)
        return entry

    def set_interface(self, iface: int, up: bool, new_ip: Optional[str] = None) -> None:
        try:
            entry = self.interfaces[iface]
        except KeyError:
            raise UnknownInterface(iface) from None
        entry.up = up
        if up and new_ip is not None:
            entry.ip = new_ip
        for listener in list(self.interface_listeners):
            listener(iface, up, entry.ip)

    def owns(self, ip: str) -> bool:
        """True when an up interface currently holds ``ip``."""
        return any(i.up and i.ip == ip for i in self.interfaces.values())

    def interface_up(self, ip: str) -> bool:
        if ip == WILDCARD:
            return any(i.up for i in self.interfaces.values())
        return self.owns(ip)

    # -- socket table ------------------------------------------------------

    def _new_id(self) -> str:
        return f"{self.name}/s{next(self._ids)}"

    def _live(self):
        return (s for s in self.sockets.values() if not s.closed)

    def _unconnected_conflict(self, local: SocketAddr) -> bool:
        for s in self._live():
            if s.peer is None and s.local.port == local.port:
                if WILDCARD in (s.local.ip, local.ip) or s.local.ip == local.ip:
                    return True
        return False

    def bind(self, local: SocketAddr, handler: Optional[Handler] = None) -> SocketEntry:
        if self._unconnected_conflict(local):
            raise AddressInUse(f"{self.name}: {local} already has a non-connected socket")
        entry = SocketEntry(self._new_id(), local, handler=handler)
        self.sockets[entry.id] = entry
        return entry

    def bind_connected(
        self, local: SocketAddr, peer: SocketAddr, handler: Optional[Handler] = None
    ) -> SocketEntry:
        for s in self._live():
            if s.local == local and s.peer == peer:
                raise AddressInUse(f"{self.name}: {local} already connected to {peer}")
        entry = SocketEntry(self._new_id(), local, peer, handler=handler)
        self.sockets[entry.id] = entry
        return entry

    def connect(self, entry: SocketEntry, peer: SocketAddr) -> None:
        """Turn a non-connected socket into one connected to ``peer``."""
        for s in self._live():
            if s is not entry and s.local == entry.local and s.peer == peer:
                raise AddressInUse(f"{self.name}: {entry.local} already connected to {peer}")
        entry.peer = peer
        # a connected socket only keeps its peer's datagrams
        entry.rx_queue = deque(item for item in entry.rx_queue if item[0] == peer)

    def close(self, entry: SocketEntry) -> None:
        entry.closed = True
        self.sockets.pop(entry.id, None)

    # -- datagram path -----------------------------------------------------

    def deliver(self, dgram: Datagram) -> Optional[SocketEntry]:
        """Enqueue ``dgram`` on the socket the dispatch rule selects."""
        entry, reason = select_socket(list(self.sockets.values()), dgram)
        if self.net is not None and self.net.tracing:
            target = entry.id if entry else "DROP"
            self.log(f"DISPATCH {dgram.dst} from {dgram.src} -> {target} reason={reason}")
        if entry is not None:
            entry.rx_queue.append((dgram.src, dgram.data))
        return entry

    def drain(self, entry: SocketEntry) -> None:
        """Hand queued datagrams to the socket's handler, if it has one."""
        while entry.handler is not None and entry.rx_queue and not entry.closed:
            src, data = entry.rx_queue.popleft()
            entry.handler(entry, src, data)

    def send(self, entry: SocketEntry, dst: Optional[SocketAddr], data: bytes) -> None:
        if entry.closed:
            raise SendError(f"{entry.id} is closed")
        if dst is None:
            dst = entry.peer
        if dst is None:
            raise SendError(f"{entry.id} is not connected and no destination given")
        if entry.peer is not None and dst != entry.peer:
            raise SendError(f"{entry.id} is connected to {entry.peer}")
        src_ip = entry.local.ip
        if src_ip == WILDCARD:
            up = [i for i in self.interfaces.values() if i.up]
            if not up:
                raise SendError("no route: all interfaces down")
            src_ip = up[0].ip
        elif not self.owns(src_ip):
            raise SendError(f"no route: interface for {src_ip} is down")
        if self.net is None:
            raise SendError("host is not attached to a network")
        self.net.schedule_send(self, SocketAddr(src_ip, entry.local.port), dst, data)

    # -- transport helpers -------------------------------------------------

    def now(self) -> int:
        return self.net.now() if self.net is not None else 0

    def call_later(self, delay_ms: int, callback, *args):
        return self.net.call_later(delay_ms, callback, *args)

    def log(self, line: str) -> None:
        if self.net is not None:
            self.net.log(line)


def deliver(stack: HostStack, dgram: Datagram) -> Optional[SocketEntry]:
    return stack.deliver(dgram)


def bind(stack: HostStack, local: SocketAddr) -> SocketEntry:
    return stack.bind(local)


def bind_connected(stack: HostStack, local: SocketAddr, peer: SocketAddr) -> SocketEntry:
    return stack.bind_connected(local, peer)


def set_interface(stack: HostStack, iface: int, up: bool, new_ip: Optional[str] = None) -> None:
    stack.set_interface(iface, up, new_ip)
