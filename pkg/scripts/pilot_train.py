"""Pilot toy-training run used to calibrate the learnability and ablation checks.

Trains from random initialisation on synthetic pairs, then evaluates the
checkpoint under Easy warps (graphs on) and Hard warps (graphs on and off).
Results are printed as JSON; the floors in tests/calibration.json come
from this run.
"""

import argparse
import dataclasses
import json
import logging
import time

from mapglue.evaluation import ModelMatcher, RandomMatcher, evaluate, pairs_from_synth
from mapglue.matcher import MatcherModel
from mapglue.training import TrainConfig, Trainer, TrainingPair, smoothed, synth_pairs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", required=True, help="training config JSON")
    ap.add_argument("--pairs", type=int, default=32)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--budget", type=float, default=0, help="wall-clock seconds; 0 = unlimited")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--out", default="pilot_train.mgck")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    config = TrainConfig.from_json(args.config)
    synth = synth_pairs(args.pairs, args.data_seed)
    pairs = [TrainingPair(p.src, p.ref, p.H, f"synth-{p.seed}") for p in synth]
    trainer = Trainer(config, pairs)
    steps = args.steps or config.steps
    t0 = time.time()
    while trainer.step < steps and not (args.budget and time.time() - t0 > args.budget):
        rec = trainer.train_step()
        if rec["step"] % 10 == 0:
            print(f"step {rec['step']} loss {rec['loss']:.4f} pos {rec.get('n_pos', 0):.1f} t {time.time() - t0:.0f}s", flush=True)
    train_time = time.time() - t0
    trainer.save(args.out)
    losses = [h["loss"] for h in trainer.history]
    sm = smoothed(losses)
    eval_pairs = pairs_from_synth(synth)
    model = trainer.model
    out = {"steps": trainer.step, "train_seconds": train_time, "first50_mean": sum(losses[:50]) / len(losses[:50]), "smoothed_first50": sm[min(49, len(sm) - 1)], "smoothed_end": sm[-1]}
    t1 = time.time()
    out["easy_auc5"] = evaluate(eval_pairs, ModelMatcher(model), ["easy"], args.repeats).row("easy").auc5 / 100
    out["random_easy_auc5"] = evaluate(eval_pairs, RandomMatcher(), ["easy"], args.repeats).row("easy").auc5 / 100
    out["hard_auc5_graphs"] = evaluate(eval_pairs, ModelMatcher(model), ["hard"], args.repeats).row("hard").auc5 / 100
    ablated = MatcherModel(dataclasses.replace(model.config, use_graphs=False))
    ablated.load_state_dict(model.state_dict())
    out["hard_auc5_no_graphs"] = evaluate(eval_pairs, ModelMatcher(ablated), ["hard"], args.repeats).row("hard").auc5 / 100
    out["eval_seconds"] = time.time() - t1
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
