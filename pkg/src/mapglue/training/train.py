"""Training loop: augmentation, labelling, quadruplet loss and Adam."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..imaging import AugmentationConfig, load_png, read_manifest, sample_training_augmentation, to_grayscale, warp
from ..matcher.model import MatcherConfig, MatcherModel, extract_matches
from ..matcher.pipeline import ImageFeatures, Matcher
from ..numerics import AdamState, NonFiniteError, adam_step, load_checkpoint, ops
from .labels import TH_NEG, TH_POS, LossBreakdown, make_labels, quadruplet_loss
from .synth import synth_pairs

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 4
    steps: int = 1000
    max_keypoints: int = 512
    tau: float = 0.1
    th_pos: float = TH_POS
    th_neg: float = TH_NEG
    eps_min: float = 64.0
    alpha: float = 4.0
    r_min: float = 1.0
    r_max: float = 7.0
    seed: int = 0
    dim: int = 256
    n_layers: int = 6
    n_heads: int = 4
    manifest: str | None = None
    synthetic: int | None = None
    checkpoint_every: int = 0
    out_dir: str | None = None
    rotation: tuple[float, float] = (-180.0, 180.0)
    scale: tuple[float, float] = (0.5, 1.5)
    translation: tuple[float, float] = (0.0, 0.5)
    perspective_jitter: float = 0.02
    use_graphs: bool = True
    use_semantic: bool = True
    log_every: int = 10

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("rotation", "scale", "translation"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def matcher_config(self) -> MatcherConfig:
        return MatcherConfig(
            dim=self.dim,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            tau=self.tau,
            eps_min=self.eps_min,
            alpha=self.alpha,
            r_min=self.r_min,
            r_max=self.r_max,
            max_keypoints=self.max_keypoints,
            use_graphs=self.use_graphs,
            use_semantic=self.use_semantic,
            seed=self.seed,
        )

    def augmentation(self) -> AugmentationConfig:
        return AugmentationConfig(self.rotation, self.scale, self.translation, self.perspective_jitter)


@dataclass
class TrainingPair:
    src: np.ndarray
    ref: np.ndarray
    H: np.ndarray  # src -> ref
    pair_id: str = ""
    ref_features: ImageFeatures | None = field(default=None, repr=False)


def load_training_pairs(config: TrainConfig) -> list[TrainingPair]:
    if config.synthetic:
        return [TrainingPair(p.src, p.ref, p.H, f"synth-{p.seed}") for p in synth_pairs(config.synthetic, config.seed)]
    if config.manifest:
        return [TrainingPair(load_png(r.src), load_png(r.ref), r.homography, r.pair_id) for r in read_manifest(config.manifest)]
    raise ValueError("training config needs either 'synthetic' or 'manifest'")


def augmentation_seed(seed: int, step: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, step, index])


class Trainer:
    """Owns the model, the optimiser state and the per-pair reference-feature cache."""

    def __init__(self, config: TrainConfig, pairs: list[TrainingPair], model: MatcherModel | None = None):
        self.config = config
        self.pairs = pairs
        self.model = model or MatcherModel(config.matcher_config())
        self.matcher = Matcher(self.model)
        self.state = AdamState(lr=config.lr)
        self.history: list[dict] = []

    @property
    def step(self) -> int:
        return self.state.step

    def batch_indices(self, step: int) -> list[int]:
        """Deterministic epoch-shuffled batches."""
        n = len(self.pairs)
        bs = self.config.batch_size
        per_epoch = max(1, math.ceil(n / bs))
        epoch, k = divmod(step, per_epoch)
        order = np.random.default_rng([self.config.seed, epoch]).permutation(n)
        idx = order[k * bs : (k + 1) * bs].tolist()
        if len(idx) < bs:
            idx += order[: bs - len(idx)].tolist()
        return idx

    def prepare(self, index: int, step: int):
        """Augmented source features, reference features and the composed ground truth."""
        pair = self.pairs[index]
        h, w = pair.src.shape[:2]
        T = sample_training_augmentation(augmentation_seed(self.config.seed, step, index), w, h, self.config.augmentation())
        # the detector and both feature banks only see intensity, so warp one channel
        src_aug, _ = warp(to_grayscale(pair.src), T, (w, h))
        if pair.ref_features is None:
            pair.ref_features = self.matcher.extract(pair.ref)
        fs = self.matcher.extract(src_aug)
        H = pair.H @ np.linalg.inv(T)
        return fs, pair.ref_features, H

    def pair_loss(self, fs: ImageFeatures, fr: ImageFeatures, H: np.ndarray) -> LossBreakdown | None:
        if len(fs.keypoints) == 0 or len(fr.keypoints) == 0:
            return None
        soft = self.matcher.soft_match(fs, fr)
        # labels live in the (possibly resized) detector frames
        S_s = np.diag([fs.scale, fs.scale, 1.0])
        S_r = np.diag([fr.scale, fr.scale, 1.0])
        labels = make_labels(fs.keypoints.xy, fr.keypoints.xy, S_r @ H @ np.linalg.inv(S_s), self.config.th_pos, self.config.th_neg)
        predicted = extract_matches(soft.P.data, self.config.tau)
        return quadruplet_loss(soft.P, labels, predicted)

    def train_step(self) -> dict:
        step = self.state.step
        idx = self.batch_indices(step)
        self.model.zero_grad()
        losses = []
        for i in idx:
            fs, fr, H = self.prepare(i, step)
            lb = self.pair_loss(fs, fr, H)
            if lb is None:
                continue
            if not math.isfinite(lb.value):
                raise NonFiniteError(f"non-finite loss at step {step} on pair {self.pairs[i].pair_id}: {lb.as_dict()}")
            losses.append(lb)
        record = {"step": step, "pairs": len(losses)}
        if losses:
            total = losses[0].total
            for lb in losses[1:]:
                total = ops.add(total, lb.total)
            total = ops.affine(total, 1.0 / len(losses))
            try:
                total.backward()
            except NonFiniteError as exc:
                raise NonFiniteError(f"step {step}, pairs {[self.pairs[i].pair_id for i in idx]}: {exc}") from exc
            grads = {k: p.grad for k, p in self.model.params.items() if p.grad is not None}
            adam_step(self.model.params, grads, self.state)
            record["loss"] = total.item()
            for key in ("l_pos", "l_neg", "l_fp", "l_fn", "n_pos", "n_fp", "n_fn"):
                record[key] = float(np.mean([lb.as_dict()[key] for lb in losses]))
        else:
            self.state.step += 1
            record["loss"] = float("nan")
        self.history.append(record)
        return record

    # -- checkpoints -------------------------------------------------------

    def save(self, path) -> None:
        extra = {}
        for k in self.model.params:
            if k in self.state.m:
                extra[f"adam.m.{k}"] = self.state.m[k]
                extra[f"adam.v.{k}"] = self.state.v[k]
        # out_dir is where the file lives, not training state; keeps checkpoints path-independent
        train = {k: v for k, v in self.config.to_dict().items() if k != "out_dir"}
        meta = {"train": train, "adam": {"step": self.state.step, "lr": self.state.lr, "beta1": self.state.beta1, "beta2": self.state.beta2, "eps": self.state.eps}}
        self.model.save(path, extra=extra, meta=meta)

    @classmethod
    def resume(cls, path, pairs: list[TrainingPair]) -> "Trainer":
        tensors, cfg = load_checkpoint(path)
        config = TrainConfig.from_dict(cfg["train"])
        model = MatcherModel(MatcherConfig.from_dict(cfg["matcher"]))
        model.load_state_dict(tensors)
        trainer = cls(config, pairs, model)
        a = cfg["adam"]
        trainer.state = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=int(a["step"]))
        for k in model.params:
            if f"adam.m.{k}" in tensors:
                trainer.state.m[k] = tensors[f"adam.m.{k}"]
                trainer.state.v[k] = tensors[f"adam.v.{k}"]
        return trainer

    def fit(self, steps: int | None = None, callback=None) -> list[dict]:
        steps = self.config.steps if steps is None else steps
        out_dir = Path(self.config.out_dir) if self.config.out_dir else None
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
        target = self.state.step + steps
        while self.state.step < target:
            rec = self.train_step()
            if callback:
                callback(rec)
            if self.config.log_every and rec["step"] % self.config.log_every == 0:
                log.info("step %d loss %.4f pos %.1f", rec["step"], rec["loss"], rec.get("n_pos", 0))
            if out_dir and self.config.checkpoint_every and self.state.step % self.config.checkpoint_every == 0:
                self.save(out_dir / f"step{self.state.step:06d}.mgck")
        if out_dir:
            self.save(out_dir / "final.mgck")
        return self.history


def smoothed(values, beta: float = 0.9) -> list[float]:
    """Bias-corrected exponential moving average."""
    out, avg = [], 0.0
    for i, v in enumerate(values, 1):
        avg = beta * avg + (1 - beta) * v
        out.append(avg / (1 - beta**i))
    return out
