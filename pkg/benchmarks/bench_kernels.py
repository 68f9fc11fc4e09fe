"""Compiled vs numpy kernels: CTC forward-backward and 2x2 max-pool.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``. Both backends are
imported directly, so the environment switch does not matter here. Each row
also reports whether the two backends agree on the benchmark input.
"""

import argparse
import timeit

import numpy as np

from accentrec._kernels import compiled_backend, python_backend


def ctc_case(rng, frames, vocab, length):
    logits = rng.standard_normal((frames, vocab + 1))
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    labels = rng.integers(0, vocab, length).astype(np.int64)
    return np.ascontiguousarray(logp), labels, vocab


def pool_case(rng, frames, dim, channels):
    return np.ascontiguousarray(rng.standard_normal((frames, dim, channels)))


def best_of(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled_backend is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return
    rng = np.random.default_rng(0)
    rows = []
    for T, V, L in [(40, 16, 10), (114, 16, 10), (300, 32, 40), (1200, 32, 100)]:
        logp, labels, blank = ctc_case(rng, T, V, L)
        c = lambda: compiled_backend.ctc_forward_backward(logp, labels, blank)
        p = lambda: python_backend.ctc_forward_backward(logp, labels, blank)
        (nc, gc), (np_, gp) = c(), p()
        agree = abs(nc - np_) <= 1e-10 * max(1.0, abs(nc)) and np.allclose(gc, gp, rtol=0, atol=1e-10)
        rows.append((f"ctc T'={T} |U|={V} L={L}", best_of(c, args.repeat), best_of(p, args.repeat), agree))
    for T, D, C in [(600, 20, 1), (300, 10, 16), (1200, 80, 1), (150, 20, 64)]:
        x = pool_case(rng, T, D, C)
        c = lambda: compiled_backend.maxpool2x2_forward(x)
        p = lambda: python_backend.maxpool2x2_forward(x)
        (oc, ic), (op, ip) = c(), p()
        agree = np.array_equal(oc, op) and np.array_equal(ic, ip)
        rows.append((f"maxpool fwd {T}x{D}x{C}", best_of(c, args.repeat), best_of(p, args.repeat), agree))
        g = rng.standard_normal(oc.shape)
        cb = lambda: compiled_backend.maxpool2x2_backward(g, ic, T, D)
        pb = lambda: python_backend.maxpool2x2_backward(g, ic, T, D)
        agree = np.array_equal(cb(), pb())
        rows.append((f"maxpool bwd {T}x{D}x{C}", best_of(cb, args.repeat), best_of(pb, args.repeat), agree))

    print(f"{'kernel':32s} {'compiled':>12s} {'python':>12s} {'speedup':>8s}  agree")
    for name, tc, tp, agree in rows:
        print(f"{name:32s} {tc * 1e6:10.1f}us {tp * 1e6:10.1f}us {tp / tc:7.1f}x  {agree}")


if __name__ == "__main__":
    main()
