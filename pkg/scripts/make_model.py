"""Write a benchmark profile as a manifest directory with float32 weight files.

    python3 scripts/make_model.py kws-gru models/kws --seed 0

The output can be fed straight to ``rnnaccel compile``.
"""

import argparse

from rnnaccel import loadable, profiles

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("profile", choices=["kws-gru", "small"])
    ap.add_argument("outdir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if args.profile == "kws-gru":
        m = profiles.kws_gru()
        w = profiles.random_weights(m, args.seed)
    else:
        m, w, _ = profiles.random_small_net(args.seed)
    path = loadable.write_model(m, w, args.outdir)
    print(f"wrote {path} ({m.n_params} parameters)")
