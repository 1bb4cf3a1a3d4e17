#!/usr/bin/env python3
"""Class-sorted (correlated) stream comparison, with and without prior correction."""

import argparse
import copy
import sys
import time

import numpy as np

from ttadapt.adapters import CmfAdapter, RoidAdapter, SourceAdapter, TentAdapter
from ttadapt.classifier import ZeroShotHead
from ttadapt.encoders import ToySource
from ttadapt.streams import StreamSpec, SyntheticSpec, build_stream, generate_synthetic

METHODS = {
    "source": lambda s, h: SourceAdapter(s, h),
    "tent": lambda s, h: TentAdapter(s, h, lr=1e-3),
    "roid": lambda s, h: RoidAdapter(s, h, lr=0.015, full_params=True, lambda_src=0.001,
                                     use_prior_correction=False),
    "roid+pc": lambda s, h: RoidAdapter(s, h, lr=0.015, full_params=True, lambda_src=0.001,
                                        use_prior_correction=True),
    "cmf": lambda s, h: CmfAdapter(s, h, lr=0.02, full_params=True, process_noise=0.02,
                                   use_prior_correction=False),
    "cmf+pc": lambda s, h: CmfAdapter(s, h, lr=0.02, full_params=True, process_noise=0.02,
                                      use_prior_correction=True),
}


def overall_error(bench, make, seed):
    source = ToySource(copy.deepcopy(bench.encoder), bench.dataset.inputs)
    head = ZeroShotHead(bench.prototypes, inv_temperature=10.0)
    adapter = make(source, head)
    errors = total = 0
    for batch in build_stream(bench.dataset, StreamSpec("correlated", batch_size=64, seed=seed)):
        _, preds = adapter.adapt_and_predict(batch)
        errors += int(np.sum(preds != bench.dataset.labels[batch.indices]))
        total += batch.size
    return 100.0 * errors / total


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", default="0,1,2,3,4")
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    rows = {m: [] for m in METHODS}
    for seed in seeds:
        t0 = time.time()
        bench = generate_synthetic(SyntheticSpec(seed=seed), norm="layer_norm")
        for m, make in METHODS.items():
            rows[m].append(overall_error(bench, make, seed))
        print(f"seed {seed} done in {time.time() - t0:.0f}s", file=sys.stderr)

    print(f"{'method':<10}{'mean error %':>14}")
    for m, vals in rows.items():
        print(f"{m:<10}{np.mean(vals):>14.2f}")


if __name__ == "__main__":
    main()
