"""``frbench``: run, sweep and trace resumption scenarios."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from . import bench
from .bench import ScenarioConfig, ScenarioError

# CLI flag -> ScenarioConfig field, where the names differ
_ALIASES = {
    "nat": "nat_mode",
    "messages": "total_messages",
    "downtime_ms": "handover_downtime_ms",
}


def _scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario file with 'key = value' lines")
    p.add_argument("--variant", choices=["baseline", "ipc", "tcs"])
    p.add_argument("--delay-ms", type=int)
    p.add_argument("--loss-rate", type=float)
    p.add_argument("--nat", choices=["none", "full-cone", "address-restricted", "port-restricted", "symmetric"])
    p.add_argument("--handover-period-ms", type=int, help="0 disables handovers")
    p.add_argument("--handover-offset-ms", type=int)
    p.add_argument("--downtime-ms", type=int)
    p.add_argument("--no-renumber", dest="handover_renumber", action="store_const", const=False)
    p.add_argument("--interfaces", type=int, choices=[1, 2])
    p.add_argument("--messages", type=int)
    p.add_argument("--app-timeout-ms", type=int)
    p.add_argument("--think-ms", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--time-cap-ms", type=int)


def _build_config(args: argparse.Namespace) -> ScenarioConfig:
    values = {}
    if args.config:
        with open(args.config) as fh:
            values.update(bench.parse_config(fh.read()))
    fields = set(bench._FIELDS)
    for key, value in vars(args).items():
        key = _ALIASES.get(key, key)
        if value is not None and key in fields:
            values[key] = value
    return ScenarioConfig(**values)


def _cmd_run(args) -> int:
    cfg = _build_config(args)
    try:
        m = bench.run_scenario(cfg)
    except bench.ScenarioTimeout as exc:
        m = exc.metrics
        print(f"error: {exc}", file=sys.stderr)
        status = 1
    else:
        status = 0
    for name in (
        "label", "delay_ms", "seed", "completed", "wct_ms", "acked", "handshakes_completed",
        "handshake_flights_after_establish", "datagrams_sent", "datagrams_received",
        "retransmissions", "redirect_transmissions", "handovers", "mid_session_handovers",
    ):
        print(f"{name}: {getattr(m, name)}")
    if m.recovery_latencies_ms:
        print("recovery_latencies_ms: " + ",".join(map(str, m.recovery_latencies_ms)))
    if args.out and status == 0:
        row = bench.SweepRow(cfg.delay_ms, cfg.label, float(m.wct_ms), 0.0, [m])
        with open(args.out, "w", newline="") as fh:
            bench.write_csv([row], fh)
    return status


def _cmd_sweep(args) -> int:
    cfg = _build_config(args)
    delays = [int(d) for d in args.delays.split(",") if d]
    variants = [v for v in args.variants.split(",") if v]
    try:
        rows = bench.sweep(cfg, delays, variants, jobs=args.jobs)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    bench.report(rows, args.out)
    return 0


def _cmd_trace(args) -> int:
    cfg = _build_config(args)
    status = 0
    try:
        m = bench.run_scenario(cfg, trace=True)
    except bench.ScenarioTimeout as exc:
        m = exc.metrics
        print(f"error: {exc}", file=sys.stderr)
        status = 1
    text = "\n".join(m.trace) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frbench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single scenario and print its metrics")
    _scenario_flags(run)
    run.add_argument("--out", help="also write a one-row CSV here")
    run.set_defaults(func=_cmd_run)

    sw = sub.add_parser("sweep", help="sweep delays and report gains against the baseline")
    _scenario_flags(sw)
    sw.add_argument("--delays", default="5,30,100")
    sw.add_argument("--variants", default="baseline,tcs,tcs-multi")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", help="CSV output path")
    sw.set_defaults(func=_cmd_sweep)

    tr = sub.add_parser("trace", help="emit the full event trace of one scenario")
    _scenario_flags(tr)
    tr.add_argument("--out", help="write the trace here instead of stdout")
    tr.set_defaults(func=_cmd_trace)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
