"""Time the compiled and pure-Python kernels on the same inputs.

    python benchmarks/bench_kernels.py [--repeats 5] [--frames 300]

Prints one row per (kernel, backend) with the best-of-N wall time and the
speedup over the Python backend. Both backends are also checked to agree.
"""

import argparse
import math
import time

import numpy as np

from msce_scr import kernels
from msce_scr.decoder import Decoder, DecoderConfig
from msce_scr.graph import build_graph
from msce_scr.lexicon import Command
from msce_scr.losses import blank_augment
from msce_scr.numerics import softmax_log


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def ctc_case(rng, frames, units, label_len):
    lp = softmax_log(rng.normal(scale=2.0, size=(frames, units)))
    label = rng.integers(0, units - 1, size=label_len)
    return lp, blank_augment(label, units - 1), units - 1


def decoder_case(rng, frames, n_commands, n_states, length):
    seqs = set()
    while len(seqs) < n_commands:
        seqs.add(tuple(int(x) for x in rng.integers(0, n_states, size=length)))
    graph = build_graph([Command(i, (str(i),), (), s) for i, s in enumerate(sorted(seqs))])
    lp = softmax_log(rng.normal(scale=2.0, size=(frames, n_states + 1)))
    return graph, lp


def run_decoder(graph, lp, backend, beam):
    cfg = DecoderConfig(beam=beam, trigger_threshold=math.inf)
    dec = Decoder(graph, cfg, backend=backend)
    trace = []
    for row in lp:
        dec.step(row)
        trace.append(dec.best_final)
    return trace


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--frames", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    backends = sorted(kernels.BACKENDS)
    print(f"backends available: {backends}; import-time default: {kernels.BACKEND}")

    lp, ext, blank = ctc_case(rng, args.frames, 43, 30)
    graph, dlp = decoder_case(rng, args.frames, 40, 42, 18)
    cases = [
        (f"ctc T={args.frames} U=43 |label|=30", lambda b: kernels.get_backend(b).ctc_forward_backward(lp, ext, blank)[0]),
        (f"decode T={args.frames} nodes={len(graph)} beam=12", lambda b: run_decoder(graph, dlp, b, 12.0)),
        (f"decode T={args.frames} nodes={len(graph)} beam=inf", lambda b: run_decoder(graph, dlp, b, math.inf)),
    ]
    print(f"{'case':<40} {'backend':<8} {'best s':>10} {'speedup':>8}")
    for name, fn in cases:
        base = None
        outs = []
        for b in ["python"] + [x for x in backends if x != "python"]:
            t, out = best_of(lambda: fn(b), args.repeats)
            outs.append(out)
            base = base or t
            print(f"{name:<40} {b:<8} {t:>10.5f} {base / t:>7.1f}x")
        if any(o != outs[0] for o in outs[1:]):
            raise SystemExit(f"backends disagree on {name}")


if __name__ == "__main__":
    main()
