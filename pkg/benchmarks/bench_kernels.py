#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the fused LSTM gate step (forward and backward), the fused Adam
update, and one full training step of the default-size model under each
backend.  The numba path is also what ``SEGPARSE_BACKEND=auto`` picks when
numba is importable; ``SEGPARSE_BACKEND=numpy`` forces the fallback.

    python benchmarks/bench_kernels.py [--batch 32] [--hidden 400] [--repeat 50]
"""
import argparse
import time

import numpy as np

from segparse import kernels
from segparse import tensor_core as tc
from segparse import trainer as tr
from segparse.model import ModelConfig, ModelParams
from segparse.encoder import build_vocab
from segparse.tensor_core import Graph
from segparse.treebank import char_tree_from_word_tree, gen_synth_corpus


def timeit(fn, repeat, warmup=3):
    for _ in range(warmup):
        fn()
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def bench_lstm_gates(batch, hidden, repeat, dtype=np.float32):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((batch, 4 * hidden)).astype(dtype)
    c_prev = rng.standard_normal((batch, hidden)).astype(dtype)
    mask = np.ones(batch, dtype=dtype)
    dh = rng.standard_normal((batch, hidden)).astype(dtype)
    dc = rng.standard_normal((batch, hidden)).astype(dtype)

    def forward():
        kernels.lstm_gates_forward(z, c_prev, mask)

    gates, c, tanh_c, _ = kernels.lstm_gates_forward(z, c_prev, mask)

    def backward():
        kernels.lstm_gates_backward(gates, c_prev, c, tanh_c, mask, dh, dc)

    return timeit(forward, repeat), timeit(backward, repeat)


def bench_adam(size, repeat, dtype=np.float32):
    rng = np.random.default_rng(1)
    p = rng.standard_normal(size).astype(dtype)
    g = rng.standard_normal(size).astype(dtype)
    m = np.zeros(size, dtype=dtype)
    v = np.zeros(size, dtype=dtype)

    def step():
        kernels.adam_update(p, g, m, v, 2e-3, 0.9, 0.9, 1e-8, 0.1, 0.1)

    return timeit(step, repeat)


def bench_train_step(batch_size, repeat):
    corpus = gen_synth_corpus(1, 64)
    cfg = ModelConfig()
    vocab = build_vocab(corpus, cfg.min_freq)
    model = ModelParams.build(cfg, vocab, corpus.label_set, np.random.default_rng(0))
    items = corpus.items[:batch_size]
    batch = [(s, char_tree_from_word_tree(s, wt)) for s, wt in items]
    state = tr.OptimState.for_model(model)
    train_cfg = tr.TrainConfig()
    rng = np.random.default_rng(2)
    longest = max(len(s) for s, _ in batch)

    def step():
        masks = model.sample_masks(rng, len(batch), longest)
        with Graph() as g:
            loss = tr.joint_loss(batch, model, "train", masks)
        tc.backward(g, loss)
        tr.adam_step(model.trainables(), state, train_cfg)
        model.zero_grads()

    return timeit(step, repeat, warmup=2)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--hidden", type=int, default=400)
    ap.add_argument("--adam-size", type=int, default=2_000_000)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--train-repeat", type=int, default=5)
    args = ap.parse_args()

    rows = {}
    for backend in ("numpy", "numba"):
        active = kernels.use_backend(backend)
        if active != backend:
            print(f"backend {backend} unavailable (got {active}); skipping")
            continue
        fwd, bwd = bench_lstm_gates(args.batch, args.hidden, args.repeat)
        adam = bench_adam(args.adam_size, max(args.repeat // 4, 5))
        step = bench_train_step(args.batch, args.train_repeat)
        rows[backend] = {"lstm gate fwd": fwd, "lstm gate bwd": bwd,
                         "adam update": adam, "full train step": step}
    kernels.use_backend("auto")

    names = list(next(iter(rows.values())))
    print(f"\nbatch={args.batch} hidden={args.hidden} adam_size={args.adam_size}")
    print(f"{'kernel':<18} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name in names:
        np_t = rows.get("numpy", {}).get(name)
        nb_t = rows.get("numba", {}).get(name)
        if np_t is None or nb_t is None:
            continue
        print(f"{name:<18} {np_t * 1e3:>10.3f}ms {nb_t * 1e3:>10.3f}ms {np_t / nb_t:>8.2f}x")


if __name__ == "__main__":
    main()
