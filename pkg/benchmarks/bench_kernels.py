"""Time the compiled and NumPy kernel backends on the same inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--samples 2000000] [--states 20] [--repeat 3]

Prints one row per (kernel, backend) with the best wall time over
``--repeat`` runs and the speed-up of each backend relative to ``python``.
Outputs of the two backends are checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gapmark.kernels import available_backends


def make_inputs(n_samples: int, n_states: int, n_symbols: int, n_sensors: int, seed: int):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(n_states))
    a = rng.dirichlet(np.ones(n_states), size=n_states)
    # sticky chain, like activity sequences sampled every few seconds
    a = 0.9 * np.eye(n_states) + 0.1 * a
    b = rng.dirichlet(np.full(n_symbols, 0.5), size=n_states)
    obs = rng.integers(0, n_symbols, size=n_samples).astype(np.int64)
    bits = rng.integers(0, n_sensors, size=n_samples).astype(np.int64)
    active = rng.integers(0, 2, size=n_samples).astype(np.uint8)
    return pi, a, b, obs, bits, active


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=2_000_000)
    parser.add_argument("--states", type=int, default=20)
    parser.add_argument("--symbols", type=int, default=200)
    parser.add_argument("--sensors", type=int, default=34)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    pi, a, b, obs, bits, active = make_inputs(args.samples, args.states, args.symbols, args.sensors, args.seed)
    with np.errstate(divide="ignore"):
        log_pi, log_a, log_b = np.log(pi), np.log(a), np.log(b)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend not built; timing the python backend only")

    cases = {
        "latch_codes": lambda k: k.latch_codes(bits, active),
        "viterbi": lambda k: k.viterbi(log_pi, log_a, log_b, obs),
        "forward_loglik": lambda k: k.forward_loglik(pi, a, b, obs),
    }
    ref = {name: case(backends["python"]) for name, case in cases.items()}
    for bname, mod in backends.items():
        if bname == "python":
            continue
        got = {name: case(mod) for name, case in cases.items()}
        assert np.array_equal(got["latch_codes"], ref["latch_codes"])
        assert np.array_equal(got["viterbi"][0], ref["viterbi"][0])
        assert abs(got["forward_loglik"] - ref["forward_loglik"]) <= 1e-9 * abs(ref["forward_loglik"])

    print(f"T={args.samples} N={args.states} symbols={args.symbols} sensors={args.sensors} (best of {args.repeat})")
    print(f"{'kernel':<16}{'backend':<10}{'seconds':>10}{'speed-up':>10}")
    for name, case in cases.items():
        times = {bname: best_of(lambda: case(mod), args.repeat) for bname, mod in backends.items()}
        for bname, secs in times.items():
            print(f"{name:<16}{bname:<10}{secs:>10.3f}{times['python'] / secs:>9.1f}x")


if __name__ == "__main__":
    main()
