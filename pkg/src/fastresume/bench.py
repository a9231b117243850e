"""Scenario runner for the wall-clock-time experiment.

A scenario is one client and one server on the simulated network. The
client sends ``total_messages`` messages stop-and-wait while its interfaces
are periodically shut down; the wall-clock time (WCT) is the virtual time
from the first ClientHello to the last acknowledgment.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple

from .client import Client, ClientConfig
from .dispatch import HostStack, SocketAddr
from .endpoint import Variant
from .netsim import HandoverSchedule, LinkConfig, Nat, NatMode, NatPolicy, Network
from .server import Server, ServerConfig

SERVER_IP = "108.110.11.12"
WELCOME_PORT = 4433
NAT_EXTERNAL_IP = "184.16.1.1"
CSV_HEADER = ("delay_ms", "variant", "wct_ms", "gain_pct")

# Published gain figures, kept for side-by-side reporting only.
REFERENCE_GAINS = {
    (5, "tcs"): 8.35,
    (30, "tcs"): 13.63,
    (100, "tcs"): 15.22,
    (5, "tcs-multi"): 16.61,
    (30, "tcs-multi"): 17.48,
    (100, "tcs-multi"): 23.42,
}


class ScenarioError(RuntimeError):
    pass


class ScenarioTimeout(ScenarioError):
    """The client did not finish before the virtual-time cap."""

    def __init__(self, metrics: "RunMetrics"):
        super().__init__(
            f"{metrics.label} delay={metrics.delay_ms} seed={metrics.seed}: "
            f"not finished after {metrics.elapsed_ms} ms ({metrics.acked} acked)"
        )
        self.metrics = metrics


@dataclass
class ScenarioConfig:
    variant: str = "tcs"
    delay_ms: int = 30
    loss_rate: float = 0.0
    nat_mode: str = "none"
    nat_ttl_ms: int = 60_000
    handover_period_ms: int = 10_000
    handover_offset_ms: int = 0
    handover_downtime_ms: int = 200
    handover_renumber: bool = True
    interfaces: int = 1
    total_messages: int = 600
    app_timeout_ms: int = 1000
    think_ms: int = 20
    redirect_retx_ms: int = 500
    fresh_port_after_handover: bool = False
    seed: int = 0
    repeats: int = 5
    time_cap_ms: int = 30 * 60 * 1000

    def __post_init__(self):
        self.variant = Variant(self.variant).value
        self.nat_mode = NatMode(self.nat_mode).value
        if self.interfaces not in (1, 2):
            raise ValueError("interfaces must be 1 or 2")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.delay_ms < 0 or self.think_ms < 0:
            raise ValueError("delay_ms and think_ms must be >= 0")
        if not 0.0 <= self.loss_rate < 1.0:
            raise ValueError("loss_rate must be in [0, 1)")
        if self.total_messages < 1 or self.app_timeout_ms < 1 or self.time_cap_ms < 1:
            raise ValueError("total_messages, app_timeout_ms and time_cap_ms must be positive")
        if self.handover_period_ms:
            self.handover(0)  # validates period/downtime

    @property
    def label(self) -> str:
        return self.variant + ("-multi" if self.interfaces == 2 else "")

    def handover(self, iface: int) -> HandoverSchedule:
        """Schedule for ``iface``; multiple interfaces are evenly interleaved."""
        step = self.handover_period_ms // self.interfaces
        return HandoverSchedule(
            period_ms=self.handover_period_ms,
            offset_ms=self.handover_offset_ms + iface * step,
            downtime_ms=self.handover_downtime_ms,
            renumber=self.handover_renumber,
        )

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def parse_label(label: str) -> Tuple[str, int]:
    """``"tcs-multi"`` -> ``("tcs", 2)``."""
    if label.endswith("-multi"):
        return Variant(label[: -len("-multi")]).value, 2
    return Variant(label).value, 1


@dataclass
class RunMetrics:
    label: str
    delay_ms: int
    seed: int
    completed: bool
    wct_ms: int
    elapsed_ms: int
    acked: int
    handshakes_completed: int
    handshake_flights_after_establish: int
    datagrams_sent: int
    datagrams_received: int
    retransmissions: int
    redirect_transmissions: int
    handovers: int
    mid_session_handovers: int
    recovery_latencies_ms: List[int] = field(default_factory=list)
    trace: List[str] = field(default_factory=list, repr=False, compare=False)


class Scenario:
    """A wired-up network, server and client ready to run."""

    def __init__(self, cfg: ScenarioConfig, trace: bool = False):
        self.cfg = cfg
        self._started = False
        self.net = Network(LinkConfig(cfg.delay_ms, cfg.loss_rate, cfg.seed), trace=trace)
        welcome = SocketAddr(SERVER_IP, WELCOME_PORT)
        self.server_host = self.net.add_host(HostStack("srv", {0: SERVER_IP}))
        behind_nat = cfg.nat_mode != NatMode.NONE.value
        if behind_nat:
            self.net.set_nat(Nat(NatPolicy(NatMode(cfg.nat_mode), cfg.nat_ttl_ms), NAT_EXTERNAL_IP))
            prefix = "192.168"
        else:
            prefix = "184.16"
        ips = {i: f"{prefix}.{i + 2}.30" for i in range(cfg.interfaces)}
        self.client_host = self.net.add_host(HostStack("cli", ips), behind_nat=behind_nat)
        self.server = Server(
            self.server_host,
            ServerConfig(
                welcome,
                cfg.variant,
                idle_timeout_ms=cfg.app_timeout_ms,
                redirect_retx_ms=cfg.redirect_retx_ms,
                seed=cfg.seed,
            ),
        )
        self.client = Client(
            self.client_host,
            ClientConfig(
                welcome,
                cfg.variant,
                app_timeout_ms=cfg.app_timeout_ms,
                total_messages=cfg.total_messages,
                think_ms=cfg.think_ms,
                fresh_port_after_handover=cfg.fresh_port_after_handover,
            ),
        )
        if cfg.handover_period_ms:
            for iface in range(cfg.interfaces):
                self.net.add_handover(self.client_host, iface, cfg.handover(iface))

    def start(self) -> None:
        if not self._started:
            self._started = True
            self.server.start()
            self.client.start()

    def run(self) -> RunMetrics:
        self.start()
        self.net.run(self.cfg.time_cap_ms, stop=lambda: self.client.done)
        metrics = self.metrics()
        if not metrics.completed:
            raise ScenarioTimeout(metrics)
        return metrics

    def metrics(self) -> RunMetrics:
        c = self.client
        s = c.stats
        start = s.start_time or 0
        wct = (s.done_time - start) if c.done else 0
        return RunMetrics(
            label=self.cfg.label,
            delay_ms=self.cfg.delay_ms,
            seed=self.cfg.seed,
            completed=c.done,
            wct_ms=wct,
            elapsed_ms=self.net.now() - start,
            acked=c.acked_count,
            handshakes_completed=s.handshakes_completed,
            handshake_flights_after_establish=s.handshake_flights_after_establish,
            datagrams_sent=self.net.datagrams_sent,
            datagrams_received=self.net.datagrams_delivered,
            retransmissions=s.retransmissions + self.server.redirect_retransmissions,
            redirect_transmissions=self.server.redirect_transmissions,
            handovers=len(s.handovers),
            mid_session_handovers=sum(1 for h in s.handovers if h.mid_session),
            recovery_latencies_ms=[h.recovery_ms for h in s.handovers if h.recovery_ms is not None],
            trace=list(self.net.trace),
        )


def run_scenario(cfg: ScenarioConfig, trace: bool = False) -> RunMetrics:
    return Scenario(cfg, trace=trace).run()


@dataclass
class SweepRow:
    delay_ms: int
    variant: str
    wct_ms: float
    gain_pct: float
    runs: List[RunMetrics] = field(default_factory=list, repr=False)

    @property
    def reference_gain(self) -> Optional[float]:
        return REFERENCE_GAINS.get((self.delay_ms, self.variant))


def _run_quiet(cfg: ScenarioConfig) -> RunMetrics:
    return run_scenario(cfg)


def sweep(
    base: ScenarioConfig,
    delays: Sequence[int],
    variants: Sequence[str] = ("baseline", "tcs", "tcs-multi"),
    jobs: int = 1,
) -> List[SweepRow]:
    """Run every (delay, variant, repeat); gains are against the baseline.

    Repeat ``i`` uses seed ``base.seed + i``; each variant's gain is the mean
    over repeats of ``100 * (wct_baseline - wct_variant) / wct_baseline``.
    """
    if not delays:
        raise ValueError("sweep needs at least one delay")
    labels = list(dict.fromkeys(["baseline", *variants]))
    cfgs = []
    for delay in delays:
        for label in labels:
            variant, interfaces = parse_label(label)
            for i in range(base.repeats):
                cfgs.append(
                    base.replace(variant=variant, interfaces=interfaces, delay_ms=delay, seed=base.seed + i)
                )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_quiet, cfgs))
    else:
        results = [_run_quiet(c) for c in cfgs]

    rows = []
    it = iter(results)
    for delay in delays:
        by_label = {label: [next(it) for _ in range(base.repeats)] for label in labels}
        base_runs = by_label["baseline"]
        for label in dict.fromkeys(variants):
            runs = by_label[label]
            gains = [100.0 * (b.wct_ms - r.wct_ms) / b.wct_ms for b, r in zip(base_runs, runs)]
            rows.append(
                SweepRow(delay, label, statistics.fmean(r.wct_ms for r in runs), statistics.fmean(gains), runs)
            )
    return rows


def write_csv(rows: Iterable[SweepRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([row.delay_ms, row.variant, f"{row.wct_ms:.1f}", f"{row.gain_pct:.2f}"])


def format_table(rows: Sequence[SweepRow]) -> str:
    header = ("delay_ms", "variant", "wct_ms", "gain_pct", "reference_gain_pct")
    body = []
    for row in rows:
        ref = row.reference_gain
        body.append(
            (
                str(row.delay_ms),
                row.variant,
                f"{row.wct_ms:.1f}",
                f"{row.gain_pct:.2f}",
                "-" if ref is None else f"{ref:.2f}",
            )
        )
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header, *body]]
    return "\n".join(lines) + "\n"


def report(rows: Sequence[SweepRow], csv_path: Optional[str] = None, out: Optional[TextIO] = None) -> str:
    """Write the CSV (to ``csv_path`` if given) and print an aligned table.

    Returns the CSV text.
    """
    buf = io.StringIO()
    write_csv(rows, buf)
    text = buf.getvalue()
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            fh.write(text)
    (out or sys.stdout).write(format_table(rows))
    return text


# -- scenario files -------------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str):
    kind = type(getattr(ScenarioConfig(), name))
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into ScenarioConfig keyword arguments."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _FIELDS:
            raise ValueError(f"line {lineno}: expected '<field> = <value>', got {line!r}")
        values[key] = _coerce(key, raw.strip())
    return values


def load_config(path: str, **overrides) -> ScenarioConfig:
    with open(path) as fh:
        values = parse_config(fh.read())
    values.update(overrides)
    return ScenarioConfig(**values)


def dump_config(cfg: ScenarioConfig) -> str:
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
