import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapglue.imaging import gaussian_blur, warp
from mapglue.matcher import MatchSet
from mapglue.numerics import Tensor
from mapglue.training import (
    IGNORE,
    NEG,
    POS,
    TH_NEG,
    TH_POS,
    TrainConfig,
    Trainer,
    TrainingPair,
    histogram_chi2,
    labels_from_distance,
    make_labels,
    make_pair,
    quadruplet_loss,
    smoothed,
    synth_pairs,
)

CALIBRATION = json.loads((__import__("pathlib").Path(__file__).parent / "calibration.json").read_text())


# -- labels -----------------------------------------------------------------------------


def test_threshold_defaults():
    assert (TH_POS, TH_NEG) == (3.0, 6.0)


@pytest.mark.parametrize("d, label", [(0.0, POS), (2.99, POS), (3.0, IGNORE), (4.5, IGNORE), (6.0, IGNORE), (6.01, NEG), (10.0, NEG)])
def test_label_classes(d, label):
    assert labels_from_distance(np.array([[d]])).grid[0, 0] == label


def test_make_labels_exact_correspondence():
    p = np.array([[10.0, 10.0], [50.0, 20.0]])
    H = np.array([[1.0, 0, 5], [0, 1, -2], [0, 0, 1]])
    lab = make_labels(p, p + [5, -2], H)
    assert lab.pos == {(0, 0), (1, 1)} and lab.neg == {(0, 1), (1, 0)}


def test_make_labels_uses_max_of_both_directions():
    # scaling by 2: forward error 2 px, backward error 1 px
    H = np.diag([2.0, 2.0, 1.0])
    lab = make_labels([[10.0, 10.0]], [[22.0, 20.0]], H)
    assert lab.distance[0, 0] == pytest.approx(2.0)
    lab = make_labels([[10.0, 10.0]], [[24.0, 20.0]], H)
    assert lab.distance[0, 0] == pytest.approx(4.0) and lab.grid[0, 0] == IGNORE


def test_one_to_one_pos():
    lab = make_labels([[0.0, 0.0], [1.0, 0.0]], [[0.5, 0.0]], np.eye(3))
    assert lab.pos == {(0, 0)} or lab.pos == {(1, 0)}
    assert lab.n_pos == 1


def test_degenerate_homography_rejected():
    with pytest.raises(ValueError):
        make_labels([[0.0, 0.0]], [[0.0, 0.0]], np.zeros((3, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5), st.integers(0, 10_000))
def test_labels_partition_grid(n, m, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.uniform(0, 20, (n, 2)), rng.uniform(0, 20, (m, 2))
    lab = make_labels(p, q, np.eye(3))
    assert len(lab.pos) + len(lab.neg) + len(lab.ignore) == n * m
    assert not (lab.pos & lab.neg or lab.pos & lab.ignore or lab.neg & lab.ignore)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_labels_symmetric_under_swap(seed):
    rng = np.random.default_rng(seed)
    H = np.array([[1.1, 0.05, 3.0], [-0.04, 0.95, -2.0], [1e-4, 0, 1.0]])
    p = rng.uniform(0, 60, (12, 2))
    from mapglue.imaging import project

    q = project(H, p[:8]) + rng.normal(0, 1.5, (8, 2))
    q = np.vstack([q, rng.uniform(0, 60, (4, 2))])
    fwd = make_labels(p, q, H)
    bwd = make_labels(q, p, np.linalg.inv(H))
    assert fwd.pos == {(j, i) for i, j in bwd.pos}
    assert fwd.neg == {(j, i) for i, j in bwd.neg}


# -- quadruplet loss ---------------------------------------------------------------------------


def _loss(P, grid, predicted=()):
    from mapglue.training import LabelSets

    src = np.array([a for a, _ in predicted], dtype=np.int64)
    ref = np.array([b for _, b in predicted], dtype=np.int64)
    ms = MatchSet(src, ref, np.asarray(P)[src, ref] if len(src) else np.zeros(0), *np.shape(P))
    return quadruplet_loss(Tensor(np.asarray(P, dtype=np.float64), requires_grad=True), LabelSets(np.asarray(grid, dtype=np.int8)), ms)


def test_loss_perfect_positives():
    lb = _loss(np.eye(2), [[POS, IGNORE], [IGNORE, POS]], [(0, 0), (1, 1)])
    assert lb.value == 0.0


def test_loss_single_pos_half():
    lb = _loss([[0.5]], [[POS]], [(0, 0)])
    assert lb.l_pos == pytest.approx(math.log(2), abs=1e-12) and lb.value == pytest.approx(math.log(2), abs=1e-12)


def test_loss_composite_two_ln2():
    # (0,0) Pos but not predicted -> FN; (1,1) Neg and predicted -> FP
    lb = _loss(np.full((2, 2), 0.5), [[POS, IGNORE], [IGNORE, NEG]], [(1, 1)])
    assert (lb.n_pos, lb.n_neg, lb.n_fp, lb.n_fn) == (1, 1, 1, 1)
    assert lb.value == pytest.approx(2 * math.log(2), abs=1e-9)


def test_loss_total_formula_and_nonnegative():
    rng = np.random.default_rng(0)
    P = rng.uniform(0.01, 0.99, (4, 5))
    grid = rng.choice([POS, NEG, IGNORE], size=(4, 5))
    lb = _loss(P, grid, [(0, 1), (2, 3)])
    assert min(lb.l_pos, lb.l_neg, lb.l_fp, lb.l_fn) >= 0
    assert lb.value == pytest.approx(lb.l_pos + (lb.l_neg + lb.l_fp + lb.l_fn) / 3, abs=1e-12)


def test_loss_clamps_log():
    lb = _loss([[0.0]], [[POS]], [(0, 0)])
    assert lb.value == pytest.approx(-math.log(1e-12))


def test_loss_gradient_signs():
    P = Tensor(np.full((2, 2), 0.4), requires_grad=True)
    from mapglue.training import LabelSets

    quadruplet_loss(P, LabelSets(np.array([[POS, IGNORE], [IGNORE, NEG]], dtype=np.int8)), MatchSet.empty(2, 2)).total.backward()
    assert P.grad[0, 0] < 0 and P.grad[1, 1] > 0 and P.grad[0, 1] == 0


def test_loss_uses_means_not_sums():
    a = _loss(np.full((1, 2), 0.3), [[POS, NEG]], [(0, 1)])
    b = _loss(np.full((1, 4), 0.3), [[POS, NEG, NEG, IGNORE]], [(0, 1)])
    assert a.value == pytest.approx(b.value, abs=1e-12)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        _loss(np.full((2, 2), 0.5), [[POS]])


# -- synthetic pairs -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def synth3():
    return synth_pairs(3, 11)


def test_synth_shapes_and_determinism(synth3):
    again = make_pair(synth3[0].seed)
    for p in synth3:
        assert p.src.shape == p.ref.shape == (512, 512, 3)
        assert 0 <= p.src.min() and p.src.max() <= 1 and 0 <= p.ref.min() and p.ref.max() <= 1
    assert again.src.tobytes() == synth3[0].src.tobytes() and again.H.tobytes() == synth3[0].H.tobytes()


def test_synth_road_alignment(synth3):
    for p in synth3:
        # photo roads resampled into the map frame through H
        in_map, valid = warp(p.photo_roads, p.H, (512, 512))
        pred = (in_map >= 0.5) & valid
        truth = p.map_roads & valid
        iou = (pred & truth).sum() / max((pred | truth).sum(), 1)
        assert iou >= CALIBRATION["synth"]["road_iou_floor"], (p.seed, iou)


def test_synth_modality_gap(synth3):
    for p in synth3:
        assert histogram_chi2(p.src, p.ref) > CALIBRATION["synth"]["chi2_floor"]


def test_synth_rejects_empty():
    with pytest.raises(ValueError):
        synth_pairs(0, 1)


def test_histogram_chi2_identity():
    img = np.random.default_rng(0).random((32, 32))
    assert histogram_chi2(img, img) == 0.0


# -- trainer ------------------------------------------------------------------------------------------


def _texture(seed, size=128):
    img = gaussian_blur(np.random.default_rng(seed).random((size, size)), 2.5)
    return (img - img.min()) / (img.max() - img.min())


def _toy_pairs(n=2):
    out = []
    for i in range(n):
        img = _texture(i)
        H = np.array([[1.0, 0, 3.0], [0, 1.0, -2.0], [0, 0, 1.0]])
        ref, _ = warp(img, np.linalg.inv(H), (128, 128))
        out.append(TrainingPair(img, ref, H, f"toy{i}"))
    return out


def _toy_config(**kw):
    cfg = dict(dim=16, n_layers=2, n_heads=2, max_keypoints=48, batch_size=2, lr=1e-3, seed=3, log_every=0,
               rotation=(-10.0, 10.0), scale=(0.9, 1.1), translation=(0.0, 0.05))
    cfg.update(kw)
    return TrainConfig(**cfg)


def test_zero_lr_leaves_weights_bit_identical():
    trainer = Trainer(_toy_config(lr=0.0), _toy_pairs())
    before = {k: v.data.copy() for k, v in trainer.model.params.items()}
    rec = trainer.train_step()
    assert math.isfinite(rec["loss"])
    for k, v in trainer.model.params.items():
        assert v.data.tobytes() == before[k].tobytes(), k


def test_training_is_deterministic():
    a = Trainer(_toy_config(), _toy_pairs()).fit(3)
    b = Trainer(_toy_config(), _toy_pairs()).fit(3)
    assert [r["loss"] for r in a] == [r["loss"] for r in b]


def test_resume_matches_uninterrupted_run(tmp_path):
    full = Trainer(_toy_config(), _toy_pairs())
    full.fit(4)
    part = Trainer(_toy_config(), _toy_pairs())
    part.fit(2)
    part.save(tmp_path / "mid.mgck")
    resumed = Trainer.resume(tmp_path / "mid.mgck", _toy_pairs())
    resumed.fit(2)
    assert [r["loss"] for r in full.history[2:]] == [r["loss"] for r in resumed.history]
    for k, v in full.model.params.items():
        assert v.data.tobytes() == resumed.model.params[k].data.tobytes()


def test_fixed_batch_loss_descends():
    trainer = Trainer(_toy_config(lr=3e-3, batch_size=2, rotation=(0.0, 0.0), scale=(1.0, 1.0), translation=(0.0, 0.0), perspective_jitter=0.0), _toy_pairs())
    losses = [r["loss"] for r in trainer.fit(100)]
    sm = smoothed(losses)
    assert sm[-1] < losses[0]


def test_batches_cover_every_pair_each_epoch():
    trainer = Trainer(_toy_config(batch_size=2), _toy_pairs(5))
    seen = sorted(trainer.batch_indices(0) + trainer.batch_indices(1) + trainer.batch_indices(2))
    assert set(seen) == set(range(5))


def test_config_json_round_trip(tmp_path):
    cfg = _toy_config(synthetic=4)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.from_json(path) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1})


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.batch_size, cfg.max_keypoints, cfg.tau, cfg.th_pos, cfg.th_neg) == (1e-4, 4, 512, 0.1, 3.0, 6.0)


def test_smoothed_constant_sequence():
    assert smoothed([2.0] * 5) == pytest.approx([2.0] * 5)
