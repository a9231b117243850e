import re

from fastresume import wire
from fastresume.bench import Scenario, ScenarioConfig

SEND_RE = re.compile(r"t=(\d+) SEND (\S+) -> (\S+) (\w+) ")


def scenario(**kw):
    kw.setdefault("handover_period_ms", 0)
    kw.setdefault("total_messages", 5)
    return Scenario(ScenarioConfig(**kw), trace=True)


def sends(trace):
    """(time, src, dst, type name) for every SEND line."""
    out = []
    for line in trace:
        m = SEND_RE.match(line)
        if m:
            out.append((int(m.group(1)), m.group(2), m.group(3), m.group(4)))
    return out


def is_type(msg_type):
    def pred(dgram):
        try:
            return wire.decode(dgram.data).msg_type is msg_type
        except wire.DecodeError:
            return False

    return pred
