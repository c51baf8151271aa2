"""Command-line entry points: match, eval, train, synth, extract.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import jsonio
from .detector import FeatureMap, FeatureProvider, fallback_semantic_map, fallback_structural_map, fmap_paths, saliency_map, save_fmap
from .imaging import Difficulty, load_png, resize_longside, save_png, to_grayscale, write_manifest
from .matcher import Matcher, MatcherModel

log = logging.getLogger("mapglue")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_model(weights: str | None, seed: int = 0) -> MatcherModel:
    if weights:
        return MatcherModel.load(weights)
    log.warning("no --weights given; using a randomly initialised matcher (seed %d)", seed)
    from .matcher import MatcherConfig

    return MatcherModel(MatcherConfig(seed=seed))


def _emit(payload: dict, out: str | None) -> None:
    text = jsonio.dumps(payload) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands ---------------------------------------------------------------


def cmd_match(args) -> int:
    img_src, img_ref = load_png(args.src), load_png(args.ref)
    matcher = Matcher(_load_model(args.weights, args.seed))
    prov_src = FeatureProvider.from_files(args.fmap_src) if args.fmap_src else None
    prov_ref = FeatureProvider.from_files(args.fmap_ref) if args.fmap_ref else None
    res = matcher.match(img_src, img_ref, prov_src, prov_ref)
    matches = [
        {"src": [float(a[0]), float(a[1])], "ref": [float(b[0]), float(b[1])], "confidence": float(c)}
        for a, b, c in zip(res.pts_src, res.pts_ref, res.matches.confidence)
    ]
    _emit({"matches": matches, "n_matches": len(matches), "diagnostics": res.diagnostics}, args.out_json)
    if args.out_png:
        from .evaluation import render_overlay, save_overlay

        H = np.asarray(args.homography, dtype=np.float64).reshape(3, 3) if args.homography else np.eye(3)
        save_overlay(render_overlay(img_src, img_ref, res.pts_src, res.pts_ref, H, args.threshold), args.out_png)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import ModelMatcher, OracleMatcher, RandomMatcher, evaluate, pairs_from_manifest

    difficulties = list(Difficulty) if args.difficulty == "all" else [Difficulty(args.difficulty)]
    if args.matcher == "model":
        matcher = ModelMatcher(_load_model(args.weights, args.seed))
    elif args.matcher == "oracle":
        matcher = OracleMatcher()
    else:
        matcher = RandomMatcher()
    pairs = pairs_from_manifest(args.manifest)
    report = evaluate(pairs, matcher, difficulties, args.repeats, args.seed, workers=args.workers)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    sys.stderr.write(report.table())
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import TrainConfig, Trainer, load_training_pairs, smoothed

    config = TrainConfig.from_json(args.config)
    if args.out_dir:
        config.out_dir = args.out_dir
    if args.steps is not None:
        config.steps = args.steps
    pairs = load_training_pairs(config)
    trainer = Trainer.resume(args.resume, pairs) if args.resume else Trainer(config, pairs)
    trainer.config.out_dir = config.out_dir
    history = trainer.fit(config.steps if not args.resume else max(0, config.steps - trainer.step))
    losses = [h["loss"] for h in history if np.isfinite(h["loss"])]
    sm = smoothed(losses) if losses else []
    summary = {
        "steps": trainer.step,
        "final_loss": sm[-1] if sm else None,
        "out_dir": config.out_dir,
        "history": history,
    }
    _emit(summary, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .training import make_pair

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.n)
    records = []
    for i, s in enumerate(seeds):
        pair = make_pair(int(s), Difficulty(args.difficulty))
        src_name, ref_name = f"pair{i:04d}_photo.png", f"pair{i:04d}_map.png"
        save_png(pair.src, out / src_name)
        save_png(pair.ref, out / ref_name)
        records.append({"id": f"synth-{int(s)}", "src": src_name, "ref": ref_name, "H": pair.H.reshape(-1).tolist()})
    write_manifest(out / "manifest.jsonl", records)
    _emit({"pairs": len(records), "manifest": str(out / "manifest.jsonl")}, None)
    return EXIT_OK


def cmd_extract(args) -> int:
    model = _load_model(args.weights, 0)
    small, scale = resize_longside(load_png(args.image), model.config.resize_limit)
    gray = to_grayscale(small)
    paths = fmap_paths(args.out_fmap)
    save_fmap(FeatureMap(saliency_map(gray, model.config.alpha).values[..., None].astype(np.float32), 1), paths["score"])
    save_fmap(FeatureMap(fallback_structural_map(gray), 1), paths["structural"])
    save_fmap(fallback_semantic_map(gray), paths["semantic"])
    h, w = gray.shape
    _emit({"width": w, "height": h, "scale": scale, "files": {k: str(v) for k, v in sorted(paths.items())}}, None)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mapglue", description="Multimodal map/photo matching.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    m = sub.add_parser("match", help="match two images")
    m.add_argument("src")
    m.add_argument("ref")
    m.add_argument("--weights")
    m.add_argument("--out-json")
    m.add_argument("--out-png")
    m.add_argument("--fmap-src", help="prefix of imported FMAP files for the source image")
    m.add_argument("--fmap-ref", help="prefix of imported FMAP files for the reference image")
    m.add_argument("--homography", type=float, nargs=9, help="ground truth for overlay colouring")
    m.add_argument("--threshold", type=float, default=5.0)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_match)

    e = sub.add_parser("eval", help="homography AUC over simulated warps")
    e.add_argument("--manifest", required=True)
    e.add_argument("--weights")
    e.add_argument("--matcher", choices=["model", "oracle", "random"], default="model")
    e.add_argument("--difficulty", choices=["easy", "normal", "hard", "all"], default="all")
    e.add_argument("--repeats", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume")
    t.add_argument("--steps", type=int)
    t.add_argument("--out-dir")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="write synthetic map/photo pairs and a manifest")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--difficulty", choices=["easy", "normal", "hard"], default="easy")
    s.set_defaults(func=cmd_synth)

    x = sub.add_parser("extract", help="write score/structural/semantic FMAP files")
    x.add_argument("image")
    x.add_argument("--weights")
    x.add_argument("--out-fmap", required=True)
    x.set_defaults(func=cmd_extract)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth" and args.n < 1:
        sys.stderr.write("mapglue synth: error: --n must be at least 1\n")
        return EXIT_USAGE
    if args.command == "eval" and args.repeats < 1:
        sys.stderr.write("mapglue eval: error: --repeats must be at least 1\n")
        return EXIT_USAGE
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        log.debug("runtime failure", exc_info=True)
        sys.stderr.write(f"mapglue {args.command}: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
