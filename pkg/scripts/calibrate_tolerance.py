"""Oracle-vs-simulator error sweep over random desk-scale GRU/LSTM nets.

Prints error quantiles per compression mode; the default validation
tolerance must sit at or above twice the p99.9 of the uncompressed sweep.
"""

import argparse

import numpy as np

from rnnaccel import loadable, profiles, reference


def sweep(seeds: int, compression):
    errs = []
    for seed in range(seeds):
        m, w, x = profiles.random_small_net(seed, compression=compression)
        model = loadable.build(m, w)
        rep = reference.validate(model, reference.FloatModel(m, w), x)
        errs.append(rep.max_abs_error)
    return np.array(errs)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=1000)
    args = ap.parse_args()
    for comp in (None, 4, 2):
        e = sweep(args.seeds, comp)
        print(f"compression={comp or 'none':>4}  mean={e.mean():.5f}  p50={np.quantile(e, .5):.5f}  "
              f"p99={np.quantile(e, .99):.5f}  p99.9={np.quantile(e, .999):.5f}  max={e.max():.5f}")
    print(f"default tolerance {reference.DEFAULT_TOLERANCE}")
