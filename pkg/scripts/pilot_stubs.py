"""Monte-Carlo pilot for the oracle/random evaluation floors.

Runs the oracle (sigma 0.5 px) and uniform-random matcher stubs on 50
synthetic pairs for several master seeds and prints AUC@5px per difficulty.
The floors used by the acceptance suite are recorded in
tests/calibration.json.
"""

import argparse
import json
import time

from mapglue.evaluation import OracleMatcher, RandomMatcher, evaluate, pairs_from_synth
from mapglue.training import synth_pairs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", type=int, default=50)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--data-seed", type=int, default=0)
    args = ap.parse_args()
    pairs = pairs_from_synth(synth_pairs(args.pairs, args.data_seed))
    out = {}
    for seed in args.seeds:
        for m in (OracleMatcher(), RandomMatcher()):
            t = time.time()
            rep = evaluate(pairs, m, repeats=5, seed=seed)
            out[f"{m.name}/seed{seed}"] = {r.difficulty: r.auc5 / 100 for r in rep.rows}
            print(m.name, seed, f"{time.time() - t:.1f}s", out[f"{m.name}/seed{seed}"], flush=True)
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
