import numpy as np
import pytest

from gradcheck import check_grads
from mapglue.descriptors import DescriptorBundle, FusionMLP, describe, sample_at_keypoints
from mapglue.detector import FeatureMap
from mapglue.numerics import Tensor, ops


@pytest.fixture
def fmap():
    data = np.arange(4 * 5 * 3, dtype=np.float32).reshape(4, 5, 3)
    return FeatureMap(data, 4)


def test_cell_centre_returns_cell(fmap):
    # cell (row 2, col 3) is centred on pixel (12, 8) at stride 4
    np.testing.assert_array_equal(sample_at_keypoints(fmap, [[12.0, 8.0]])[0], fmap.data[2, 3])


def test_midway_is_mean(fmap):
    out = sample_at_keypoints(fmap, [[6.0, 4.0]])[0]
    np.testing.assert_allclose(out, (fmap.data[1, 1] + fmap.data[1, 2]) / 2)


def test_corner_clamps(fmap):
    np.testing.assert_array_equal(sample_at_keypoints(fmap, [[19.0, 15.0]])[0], fmap.data[3, 4])
    np.testing.assert_array_equal(sample_at_keypoints(fmap, [[0.0, 0.0]])[0], fmap.data[0, 0])


def test_no_keypoints(fmap):
    assert sample_at_keypoints(fmap, np.zeros((0, 2))).shape == (0, 3)


def test_describe_aligns_rows(fmap):
    xy = np.array([[0.0, 0.0], [12.0, 8.0], [5.5, 3.0]])
    b = describe(xy, fmap, FeatureMap(fmap.data[..., :2].copy(), 4))
    assert isinstance(b, DescriptorBundle) and len(b) == 3
    assert b.d_str.shape == (3, 3) and b.d_sem.shape == (3, 2)


def _mlp(dtype=np.float64, seed=0):
    return FusionMLP(6, 4, 8, np.random.default_rng(seed), dtype)


def test_zero_weights_give_normalised_bias():
    mlp = _mlp()
    for k in ("fuse.w1", "fuse.b1", "fuse.w2"):
        mlp.params[k].data[:] = 0
    b = np.arange(1.0, 9.0)
    mlp.params["fuse.b2"].data[:] = b
    out = mlp(Tensor(np.random.default_rng(1).normal(size=(3, 6))), Tensor(np.random.default_rng(2).normal(size=(3, 4)))).data
    np.testing.assert_allclose(out, np.tile(b / np.linalg.norm(b), (3, 1)))


def test_output_unit_norm_and_finite():
    mlp = _mlp(np.float32)
    rng = np.random.default_rng(3)
    out = mlp(Tensor(rng.normal(size=(20, 6)).astype(np.float32)), Tensor(rng.normal(size=(20, 4)).astype(np.float32))).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-5)


def test_shape_mismatch():
    with pytest.raises(ValueError, match="6\\+4"):
        _mlp()(Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 4))))


def test_fusion_gradients_match_finite_differences():
    mlp = _mlp()
    w = np.random.default_rng(9).normal(size=(4, 8))

    def loss(s, m):
        return ops.sum(ops.mul(mlp(s, m), Tensor(w)))

    rng = np.random.default_rng(4)
    check_grads(loss, [rng.normal(size=(4, 6)), rng.normal(size=(4, 4))])


def test_permutation_equivariant_and_row_independent():
    mlp = _mlp()
    rng = np.random.default_rng(5)
    s, m = rng.normal(size=(6, 6)), rng.normal(size=(6, 4))
    out = mlp(Tensor(s), Tensor(m)).data
    perm = rng.permutation(6)
    np.testing.assert_allclose(mlp(Tensor(s[perm]), Tensor(m[perm])).data, out[perm], atol=1e-12)
    s2, m2 = s.copy(), m.copy()
    s2[1:] = 0
    m2[1:] = 0
    np.testing.assert_allclose(mlp(Tensor(s2), Tensor(m2)).data[0], out[0], atol=1e-12)


def test_checkpoint_names():
    assert sorted(_mlp().params) == ["fuse.b1", "fuse.b2", "fuse.w1", "fuse.w2"]
