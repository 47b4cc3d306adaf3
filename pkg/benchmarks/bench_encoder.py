#!/usr/bin/env python3
"""Compare the compiled encoder kernel against the numpy fallback.

Times the encoder forward/backward pair at several batch sizes, plus a
complete training step (both models, all losses, gradients), and
prints the speedup.  Run from the repository root:

    python benchmarks/bench_encoder.py [--d 64] [--reps 200]
"""

import argparse
import os
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np

from pinyingender.corpus import build_vocab, generate_synthetic, overfit_synthetic_spec
from pinyingender.lexicon import bundled_lexicon
from pinyingender.neural import backend
from pinyingender.neural.model import LossSwitches, run_batch
from pinyingender.neural.params import EncoderParams, StudentModel, TeacherModel
from pinyingender.neural.training import encode_training_batch, select_trainable


def timeit(fn, reps):
    fn()
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - start) / reps * 1e3


def bench_encoder(impls, d, l_max, reps):
    print(f"\nencoder forward+backward (d={d}, T={l_max + 1})")
    print(f"{'batch':>6} {'backend':>9} {'fwd ms':>9} {'bwd ms':>9} {'total ms':>9}")
    rng = np.random.default_rng(0)
    params = EncoderParams.init(400, d, l_max, rng)
    for batch in (1, 4, 16, 128, 512):
        ids = rng.integers(0, 400, size=(batch, l_max + 1)).astype(np.int64)
        mask = np.ones((batch, l_max + 1), dtype=bool)
        d_h = rng.standard_normal((batch, l_max + 1, d))
        totals = {}
        for name, impl in impls.items():
            local_reps = max(5, reps // max(1, batch // 16))
            fwd = timeit(lambda: impl.encoder_forward(params, ids, mask), local_reps)
            _, cache = impl.encoder_forward(params, ids, mask)
            bwd = timeit(lambda: impl.encoder_backward(params, cache, d_h), local_reps)
            totals[name] = fwd + bwd
            print(f"{batch:>6} {name:>9} {fwd:>9.3f} {bwd:>9.3f} {fwd + bwd:>9.3f}")
        if len(totals) == 2:
            print(f"{'':>6} {'speedup':>9} {'':>9} {'':>9} "
                  f"{totals['python'] / totals['compiled']:>8.2f}x")


def bench_training_step(d, l_max, reps):
    lex = bundled_lexicon()
    records = generate_synthetic(overfit_synthetic_spec(400), seed=0)
    usable, _ = select_trainable(records, lex, "syllable", l_max)
    pinyin_vocab = build_vocab(usable, "syllable", 1, lex)
    hanzi_vocab = build_vocab(usable, "hanzi_char", 1)
    rng = np.random.default_rng(0)
    student = StudentModel.init(len(pinyin_vocab), len(hanzi_vocab), d, l_max, rng)
    teacher = TeacherModel.init(len(hanzi_vocab), d, l_max, rng)
    batch = encode_training_batch(usable[:128], pinyin_vocab, hanzi_vocab,
                                  lex, "syllable", l_max)
    ms = timeit(lambda: run_batch(student, teacher, batch, LossSwitches(),
                                  compute_grads=True), max(5, reps // 8))
    print(f"\nfull training step, batch 128, active backend = {backend.BACKEND}: "
          f"{ms:.2f} ms ({1000.0 / ms:.0f} steps/s)")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--d", type=int, default=64)
    parser.add_argument("--l-max", type=int, default=3)
    parser.add_argument("--reps", type=int, default=200)
    args = parser.parse_args()

    impls = backend.available_backends()
    print("available backends:", ", ".join(impls))
    if "compiled" not in impls:
        print("compiled extension not built; run "
              "`python setup.py build_ext --inplace` to compare both")
    bench_encoder(impls, args.d, args.l_max, args.reps)
    bench_training_step(args.d, args.l_max, args.reps)


if __name__ == "__main__":
    main()
