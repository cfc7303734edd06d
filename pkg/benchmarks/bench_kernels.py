#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallbacks.

Usage:
    python benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python benchmarks/bench_kernels.py --train    # plus a full train-step timing

The micro-benchmarks import both implementations directly, so the results do
not depend on which backend the package selected at import.
"""

import argparse
import time

import numpy as np

from gloss2text.kernels import _np as fallback

try:
    from gloss2text.kernels import _ckernels as compiled
except ImportError:
    compiled = None


def timeit(fn, *args, repeat=30):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels():
    rng = np.random.default_rng(0)
    att = np.ascontiguousarray(rng.standard_normal((8 * 30, 30)), dtype=np.float32)
    att_g = np.ascontiguousarray(rng.standard_normal(att.shape), dtype=np.float32)
    act = np.ascontiguousarray(rng.standard_normal((64, 512)), dtype=np.float32)
    act_g = np.ascontiguousarray(rng.standard_normal(act.shape), dtype=np.float32)
    gain = np.ones(512, dtype=np.float32)
    bias = np.zeros(512, dtype=np.float32)
    n_param = 512 * 2048
    param = np.ascontiguousarray(rng.standard_normal(n_param), dtype=np.float32)
    grad = np.ascontiguousarray(rng.standard_normal(n_param), dtype=np.float32)
    lcs_a = rng.integers(0, 50, size=25).astype(np.int64)
    lcs_b = rng.integers(0, 50, size=28).astype(np.int64)

    y = fallback.softmax_rows(att)
    _, xhat, rstd = fallback.layer_norm_rows(act, gain, bias, 1e-6)

    cases = [
        ("softmax fwd [240x30]", lambda m: m.softmax_rows(att)),
        ("softmax bwd", lambda m: m.softmax_rows_backward(y, att_g)),
        ("layer_norm fwd [64x512]", lambda m: m.layer_norm_rows(act, gain, bias, 1e-6)),
        ("layer_norm bwd", lambda m: m.layer_norm_rows_backward(xhat, rstd, gain, act_g)),
        ("adam update [1M]", lambda m: m.adam_update(
            param.copy(), grad, np.zeros(n_param, np.float32), np.zeros(n_param, np.float32),
            1e-3, 0.9, 0.998, 1e-8, 0.1, 0.002)),
        ("lcs 25x28", lambda m: m.lcs_len(lcs_a, lcs_b)),
    ]
    print(f"{'kernel':26} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, fn in cases:
        t_np = timeit(fn, fallback)
        if compiled is None:
            print(f"{name:26} {t_np * 1e6:9.1f}us {'n/a':>10}")
            continue
        t_c = timeit(fn, compiled)
        print(f"{name:26} {t_np * 1e6:9.1f}us {t_c * 1e6:9.1f}us {t_np / t_c:7.1f}x")


def bench_train_step():
    """Time one optimizer step of a mid-sized model under the active backend."""
    import gloss2text.kernels as active
    from gloss2text import training as tr
    from gloss2text.corpus import SentencePair, Vocabulary, SPECIAL_TOKENS, build_vocab, ParallelCorpus
    from gloss2text.model import ModelConfig, TransformerModel

    rng = np.random.default_rng(1)
    words = [f"w{i}" for i in range(200)]
    pairs = []
    for i in range(64):
        n = int(rng.integers(6, 14))
        toks = tuple(words[j] for j in rng.integers(0, 200, n))
        pairs.append(SentencePair(tuple(t.upper() for t in toks), toks, i))
    corpus = ParallelCorpus({"train": pairs})
    sv = build_vocab(corpus, "source")
    tv = build_vocab(corpus, "target")
    examples = tr.encode_examples(pairs, sv, tv)
    batch = tr.make_batches(examples, 2048, seed=0)[0]
    cfg = ModelConfig(src_vocab_size=len(sv), tgt_vocab_size=len(tv), num_layers=2,
                      d_model=256, num_heads=8, ffn_dim=1024, dropout=0.1)
    model = TransformerModel(cfg, seed=0)
    adam = tr.Adam()
    drop = np.random.Generator(np.random.Philox(0))

    def step():
        model.zero_grads()
        loss = tr.batch_loss(model, batch, 0.1, training=True, rng=drop)
        loss.backward()
        adam.step(model.params, 1e-3)

    step()  # warm up
    t = timeit(step, repeat=5)
    print(f"\ntrain step [B={batch.src.shape[0]}, d=256] under backend "
          f"'{active.BACKEND}': {t * 1e3:.1f} ms")
    print("run with GLOSS2TEXT_PURE_PYTHON=1 to time the numpy fallback end to end")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--train", action="store_true", help="also time a full train step")
    args = parser.parse_args()
    bench_kernels()
    if args.train:
        bench_train_step()
