"""Calibrate the synthetic-pair checks on 100 seeds.

Prints the road-mask IoU (photo roads warped into the map frame) and the
map/photo histogram chi-square distance for each seed, plus the minima.
The floors in tests/calibration.json sit below these minima.
"""

import argparse
import json

import numpy as np

from mapglue.imaging import warp
from mapglue.training import histogram_chi2, make_pair


def road_iou(pair) -> float:
    in_map, valid = warp(pair.photo_roads, pair.H, (512, 512))
    pred = (in_map >= 0.5) & valid
    truth = pair.map_roads & valid
    return float((pred & truth).sum() / max((pred | truth).sum(), 1))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    seeds = np.random.SeedSequence(args.seed).generate_state(args.n)
    ious, chis = [], []
    for s in seeds:
        p = make_pair(int(s))
        ious.append(road_iou(p))
        chis.append(histogram_chi2(p.src, p.ref))
        print(int(s), f"iou={ious[-1]:.4f}", f"chi2={chis[-1]:.4f}", flush=True)
    print(json.dumps({"iou_min": min(ious), "iou_median": float(np.median(ious)), "chi2_min": min(chis), "chi2_median": float(np.median(chis))}, indent=2))


if __name__ == "__main__":
    main()
