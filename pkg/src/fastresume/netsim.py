"""Deterministic discrete-event network: delay, loss, NAT and handovers.

Topology is a client side (optionally behind one NAT gateway) and a public
server side. Delay is applied once per direction; NAT translation happens at
the client edge with no extra delay. All times are integer milliseconds.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple

from . import wire
from .dispatch import Datagram, HostStack, SocketAddr


@dataclass(frozen=True)
class LinkConfig:
    delay_ms: int = 0
    loss_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.delay_ms < 0:
            raise ValueError("delay_ms must be >= 0")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")


class NatMode(str, enum.Enum):
    NONE = "none"
    FULL_CONE = "full-cone"
    ADDRESS_RESTRICTED = "address-restricted"
    PORT_RESTRICTED = "port-restricted"
    SYMMETRIC = "symmetric"


@dataclass(frozen=True)
class NatPolicy:
    mode: NatMode = NatMode.NONE
    mapping_ttl_ms: int = 60_000

    def __post_init__(self):
        object.__setattr__(self, "mode", NatMode(self.mode))
        if self.mode is not NatMode.NONE and self.mapping_ttl_ms <= 0:
            raise ValueError("mapping_ttl_ms must be > 0")


@dataclass
class NatBinding:
    internal: SocketAddr
    external: SocketAddr
    permitted_peers: Set[Tuple[str, int]] = field(default_factory=set)
    last_used: int = 0
    # symmetric mode: the one destination this binding was created for
    destination: Optional[SocketAddr] = None


class Nat:
    """A NAT gateway in front of the client host."""

    def __init__(self, policy: NatPolicy, external_ip: str, port_base: int = 50000):
        if policy.mode is NatMode.NONE:
            raise ValueError("a Nat needs a translating mode")
        self.policy = policy
        self.external_ip = external_ip
        self._ports = itertools.count(port_base)
        self.bindings: Dict[int, NatBinding] = {}
        self._by_key: Dict[tuple, NatBinding] = {}

    def _expired(self, b: NatBinding, now: int) -> bool:
        return now - b.last_used > self.policy.mapping_ttl_ms

    def _drop_binding(self, key, b: NatBinding) -> None:
        self._by_key.pop(key, None)
        self.bindings.pop(b.external.port, None)

    def outbound(self, dgram: Datagram, now: int) -> Datagram:
        if self.policy.mode is NatMode.SYMMETRIC:
            key = (dgram.src, dgram.dst)
        else:
            key = (dgram.src,)
        b = self._by_key.get(key)
        if b is not None and self._expired(b, now):
            self._drop_binding(key, b)
            b = None
        if b is None:
            ext = SocketAddr(self.external_ip, next(self._ports))
            b = NatBinding(dgram.src, ext, last_used=now)
            if self.policy.mode is NatMode.SYMMETRIC:
                b.destination = dgram.dst
            self._by_key[key] = b
            self.bindings[ext.port] = b
        b.last_used = now
        b.permitted_peers.add((dgram.dst.ip, dgram.dst.port))
        return Datagram(b.external, dgram.dst, dgram.data, dgram.inject_time)

    def admits(self, b: NatBinding, src: SocketAddr) -> bool:
        mode = self.policy.mode
        if mode is NatMode.FULL_CONE:
            return True
        if mode is NatMode.ADDRESS_RESTRICTED:
            return any(ip == src.ip for ip, _ in b.permitted_peers)
        if mode is NatMode.PORT_RESTRICTED:
            return (src.ip, src.port) in b.permitted_peers
        return src == b.destination

    def inbound(self, dgram: Datagram, now: int) -> Optional[Datagram]:
        b = self.bindings.get(dgram.dst.port)
        if b is None:
            return None
        if self._expired(b, now):
            key = (b.internal, b.destination) if b.destination else (b.internal,)
            self._drop_binding(key, b)
            return None
        if not self.admits(b, dgram.src):
            return None
        b.last_used = now
        return Datagram(dgram.src, b.internal, dgram.data, dgram.inject_time)


def nat_translate(nat: Nat, dgram: Datagram, direction: str, now: int = 0) -> Optional[Datagram]:
    """Translate ``dgram`` through ``nat``; ``None`` means it was filtered."""
    if direction == "outbound":
        return nat.outbound(dgram, now)
    if direction == "inbound":
        return nat.inbound(dgram, now)
    raise ValueError(f"direction must be 'outbound' or 'inbound', not {direction!r}")


@dataclass(frozen=True)
class HandoverSchedule:
    period_ms: int = 10_000
    offset_ms: int = 0
    downtime_ms: int = 200
    renumber: bool = True

    def __post_init__(self):
        if not self.period_ms > self.downtime_ms >= 0:
            raise ValueError("need period_ms > downtime_ms >= 0")


def next_ip(ip: str) -> str:
    """Next address in the same /24, skipping .0, .1 and .255."""
    a, b, c, d = (int(x) for x in ip.split("."))
    d = d + 1 if d < 254 else 2
    return f"{a}.{b}.{c}.{d}"


class Timer:
    __slots__ = ("when", "cancelled")

    def __init__(self, when: int):
        self.when = when
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Network:
    """Virtual clock, event queue and routing between host stacks."""

    def __init__(self, link: LinkConfig = LinkConfig(), trace: bool = True):
        self.link = link
        self.rng = random.Random(link.seed)
        self.clock = 0
        self._queue: list = []
        self._counter = itertools.count()
        self.hosts: List[HostStack] = []
        self.nat: Optional[Nat] = None
        self._behind_nat: Set[int] = set()
        self.tracing = trace
        self.trace: List[str] = []
        self._drop_rules: List[list] = []
        self.datagrams_sent = 0
        self.datagrams_delivered = 0
        self.send_listeners: List[Callable[[Datagram], None]] = []

    # -- topology ----------------------------------------------------------

    def add_host(self, host: HostStack, behind_nat: bool = False) -> HostStack:
        host.net = self
        self.hosts.append(host)
        if behind_nat:
            if self.nat is None:
                raise ValueError("set_nat() before adding hosts behind it")
            self._behind_nat.add(id(host))
        return host

    def set_nat(self, nat: Nat) -> Nat:
        self.nat = nat
        return nat

    def _route(self, ip: str) -> Optional[HostStack]:
        for h in self.hosts:
            if h.owns(ip):
                return h
        return None

    # -- clock and events --------------------------------------------------

    def now(self) -> int:
        return self.clock

    def log(self, line: str) -> None:
        if self.tracing:
            self.trace.append(f"t={self.clock} {line}")

    def _push(self, when: int, fn, args) -> None:
        heapq.heappush(self._queue, (when, next(self._counter), fn, args))

    def call_later(self, delay_ms: int, callback, *args) -> Timer:
        timer = Timer(self.clock + max(0, int(delay_ms)))
        self._push(timer.when, self._fire_timer, (timer, callback, args))
        return timer

    @staticmethod
    def _fire_timer(timer: Timer, callback, args) -> None:
        if not timer.cancelled:
            callback(*args)

    def _step(self) -> None:
        when, _, fn, args = heapq.heappop(self._queue)
        self.clock = when
        fn(*args)

    def advance(self, until: int) -> List[str]:
        """Run every event up to and including ``until``; return their trace."""
        if until < self.clock:
            raise ValueError("cannot advance backwards")
        start = len(self.trace)
        while self._queue and self._queue[0][0] <= until:
            self._step()
        self.clock = until
        return self.trace[start:]

    def run(self, until: int, stop: Optional[Callable[[], bool]] = None) -> bool:
        """Process events until ``stop()`` holds or time ``until``; True if stopped."""
        while self._queue and self._queue[0][0] <= until:
            self._step()
            if stop is not None and stop():
                return True
        self.clock = max(self.clock, until)
        return bool(stop and stop())

    # -- scripted faults ---------------------------------------------------

    def add_drop_rule(self, predicate: Callable[[Datagram], bool], count: int) -> None:
        """Drop the next ``count`` sent datagrams matching ``predicate``."""
        self._drop_rules.append([predicate, count])

    def _scripted_drop(self, dgram: Datagram) -> bool:
        for rule in self._drop_rules:
            if rule[1] > 0 and rule[0](dgram):
                rule[1] -= 1
                return True
        return False

    # -- datagram path -----------------------------------------------------

    def schedule_send(self, host: HostStack, src: SocketAddr, dst: SocketAddr, data: bytes) -> None:
        dgram = Datagram(src, dst, bytes(data), self.clock)
        self.datagrams_sent += 1
        for listener in self.send_listeners:
            listener(dgram)
        if self.tracing:
            self.log(f"SEND {src} -> {dst} {wire.try_describe(dgram.data)}")
        if self.nat is not None and id(host) in self._behind_nat:
            dgram = self.nat.outbound(dgram, self.clock)
            self.log(f"NAT out {src} as {dgram.src}")
        if self._scripted_drop(dgram):
            self.log(f"DROP {dgram.src} -> {dst} reason=scripted")
            return
        if self.link.loss_rate and self.rng.random() < self.link.loss_rate:
            self.log(f"DROP {dgram.src} -> {dst} reason=loss")
            return
        self._push(self.clock + self.link.delay_ms, self._arrive, (dgram,))

    def _arrive(self, dgram: Datagram) -> None:
        if self.nat is not None and dgram.dst.ip == self.nat.external_ip:
            inner = self.nat.inbound(dgram, self.clock)
            if inner is None:
                self.log(f"DROP {dgram.src} -> {dgram.dst} reason=nat-filter")
                return
            self.log(f"NAT in {dgram.dst} to {inner.dst}")
            dgram = inner
        host = self._route(dgram.dst.ip)
        if host is None:
            self.log(f"DROP {dgram.src} -> {dgram.dst} reason=no-route")
            return
        entry = host.deliver(dgram)
        if entry is not None:
            self.datagrams_delivered += 1
            host.drain(entry)

    # -- handovers ---------------------------------------------------------

    def add_handover(self, host: HostStack, iface: int, schedule: HandoverSchedule) -> None:
        """Take ``iface`` down at offset + k*period (k >= 1) for downtime_ms."""
        first = schedule.offset_ms + schedule.period_ms
        self._push(first, self._iface_down, (host, iface, schedule))

    def _iface_down(self, host: HostStack, iface: int, schedule: HandoverSchedule) -> None:
        self.log(f"IFACE {host.name}/{iface} down ip={host.interfaces[iface].ip}")
        host.set_interface(iface, False)
        self._push(self.clock + schedule.downtime_ms, self._iface_up, (host, iface, schedule))
        self._push(self.clock + schedule.period_ms, self._iface_down, (host, iface, schedule))

    def _iface_up(self, host: HostStack, iface: int, schedule: HandoverSchedule) -> None:
        ip = host.interfaces[iface].ip
        new_ip = next_ip(ip) if schedule.renumber else ip
        self.log(f"IFACE {host.name}/{iface} up ip={new_ip}")
        host.set_interface(iface, True, new_ip)


def schedule_send(net: Network, host: HostStack, sock, dst: SocketAddr, data: bytes) -> None:
    host.send(sock, dst, data)


def advance(net: Network, until: int) -> List[str]:
    return net.advance(until)


def now(net: Network) -> int:
    return net.now()
