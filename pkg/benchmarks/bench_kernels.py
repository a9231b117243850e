"""Compare the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--number N]
"""

import argparse
import random
import timeit

from fastresume import _purepy, wire

try:
    from fastresume import _speedups
except ImportError:
    _speedups = None


def corpus(n, seed=0):
    rng = random.Random(seed)
    frames = []
    for _ in range(n):
        msg = wire.WireMessage(
            wire.MessageType.DATA,
            session_id=rng.randbytes(8),
            seq=rng.getrandbits(48),
            payload=rng.randbytes(64),
            mac=rng.randbytes(16),
        )
        frames.append(wire.encode(msg))
    return frames


def seq_stream(n, seed=0):
    rng = random.Random(seed)
    seq, out = 0, []
    for _ in range(n):
        seq += rng.randint(1, 3)
        out.append(max(0, seq - rng.randint(0, 70)) if rng.random() < 0.2 else seq)
    return out


def bench_decode(mod, frames):
    decode = mod.decode_fields
    for f in frames:
        decode(f)


def bench_encode(mod, fields):
    encode = mod.encode_fields
    for args in fields:
        encode(*args)


def bench_replay(mod, seqs):
    accepts, update = mod.replay_accepts, mod.replay_update
    started, top, bitmap = False, 0, 0
    for s in seqs:
        if accepts(started, top, bitmap, s):
            top, bitmap = update(started, top, bitmap, s)
            started = True


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--number", type=int, default=5, help="timing repetitions (best is reported)")
    ap.add_argument("--size", type=int, default=100_000)
    args = ap.parse_args()

    frames = corpus(args.size)
    fields = [_purepy.decode_fields(f)[1:] for f in frames]
    seqs = seq_stream(args.size)
    backends = [("python", _purepy)] + ([("cython", _speedups)] if _speedups else [])
    cases = [("decode", bench_decode, frames), ("encode", bench_encode, fields), ("replay", bench_replay, seqs)]

    print(f"{'kernel':<8} {'backend':<8} {'ns/op':>9} {'speedup':>8}")
    for name, fn, data in cases:
        base = None
        for label, mod in backends:
            best = min(timeit.repeat(lambda: fn(mod, data), number=1, repeat=args.number))
            ns = best / len(data) * 1e9
            base = base or ns
            print(f"{name:<8} {label:<8} {ns:>9.1f} {base / ns:>7.2f}x")
    if _speedups is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
