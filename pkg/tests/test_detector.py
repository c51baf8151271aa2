import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapglue.detector import (
    DEFAULT_MAX_KEYPOINTS,
    DetectorConfig,
    FeatureMap,
    FeatureProvider,
    SaliencyMap,
    anms_detect,
    detect,
    fallback_semantic_map,
    fallback_structural_map,
    fmap_paths,
    load_fmap,
    local_maxima,
    radius_map,
    saliency_map,
    save_fmap,
    structural_features,
)
from mapglue.imaging import gaussian_blur, sobel_gradients


def textured(seed=0, size=64):
    img = gaussian_blur(np.random.default_rng(seed).random((size, size)), 1.5)
    return (img - img.min()) / (img.max() - img.min())


# -- saliency / radius ------------------------------------------------------------------


def test_saliency_constant_image_is_zero():
    assert np.all(saliency_map(np.full((10, 10), 0.4)).values == 0)


def test_saliency_peak_is_one():
    img = np.zeros((9, 9))
    img[4, 4] = 1.0
    sal = saliency_map(img)
    assert sal.values.max() == pytest.approx(1.0, abs=1e-6)


def test_saliency_gain_alpha():
    # raw normalised value 0.5 -> 0.5 ** 4
    img = np.zeros((5, 5))
    img[:, 3:] = 1.0
    _, _, g = sobel_gradients(img)
    target = 0.5 * g.max()
    ratio = (target - g.min()) / (g.max() - g.min() + 1e-8)
    assert ratio**4 == pytest.approx(0.0625, rel=1e-6)
    sal = saliency_map(img, alpha=4.0)
    assert sal.alpha == 4.0
    np.testing.assert_allclose(sal.values, ((g - g.min()) / (g.max() - g.min() + 1e-8)) ** 4)


def test_saliency_monotone_in_gradient():
    img = textured(1)
    _, _, g = sobel_gradients(img)
    v = saliency_map(img).values
    order = np.argsort(g, axis=None, kind="stable")
    assert np.all(np.diff(v.reshape(-1)[order]) >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.5, 0.5))
def test_saliency_shift_invariant(seed, c):
    img = np.random.default_rng(seed).random((12, 12)) * 0.5 + 0.25
    np.testing.assert_allclose(saliency_map(img).values, saliency_map(img + c * 0.5).values, atol=1e-9)


@pytest.mark.parametrize("g,r", [(0.0, 7.0), (1.0, 1.0), (0.5, 4.0)])
def test_radius_endpoints(g, r):
    assert radius_map(SaliencyMap(np.array([[g]]), 4.0))[0, 0] == pytest.approx(r)


def test_radius_rejects_inverted_range():
    with pytest.raises(ValueError):
        radius_map(SaliencyMap(np.zeros((2, 2)), 4.0), r_min=5, r_max=2)


def test_radius_range_and_antimonotone():
    sal = saliency_map(textured(2))
    R = radius_map(sal)
    assert R.min() >= 1.0 and R.max() <= 7.0
    order = np.argsort(sal.values, axis=None)
    assert np.all(np.diff(R.reshape(-1)[order]) <= 1e-12)


# -- local maxima / ANMS -------------------------------------------------------------------


def test_plateau_keeps_first_pixel():
    s = np.zeros((5, 5))
    s[2, 1:4] = 0.5
    ys, xs = np.nonzero(local_maxima(s, 1e-3))
    assert list(zip(ys, xs)) == [(2, 1)]


def _two_peaks(distance):
    s = np.zeros((30, 40))
    s[15, 10] = 0.9
    s[15, 10 + distance] = 0.8
    return s


def test_close_peaks_suppressed():
    k = anms_detect(_two_peaks(3), np.full((30, 40), 7.0))
    assert len(k) == 1 and tuple(k.xy[0]) == (10.0, 15.0)


def test_distant_peaks_survive():
    k = anms_detect(_two_peaks(10), np.full((30, 40), 7.0))
    assert len(k) == 2


def test_truncation_keeps_highest_scores():
    s = np.zeros((200, 100))
    rng = np.random.default_rng(0)
    scores = rng.permutation(5000) / 5000 + 0.01
    s[::2, ::2] = scores.reshape(100, 50)
    k = anms_detect(s, np.ones_like(s), max_kpts=2048)
    assert len(k) == 2048
    np.testing.assert_allclose(np.sort(k.scores)[::-1], np.sort(scores)[::-1][:2048])


def test_empty_candidates_give_empty_set():
    k = anms_detect(np.zeros((10, 10)), np.ones((10, 10)))
    assert len(k) == 0 and k.xy.shape == (0, 2) and k.image_size == (10, 10)


def test_ties_broken_by_row_then_column():
    s = np.zeros((20, 20))
    s[10, 12] = s[5, 15] = s[10, 3] = 0.5
    k = anms_detect(s, np.ones_like(s))
    assert [tuple(p) for p in k.xy] == [(15.0, 5.0), (3.0, 10.0), (12.0, 10.0)]


def _spacing_ok(k, R):
    for i in range(len(k)):
        x, y = k.xy[i]
        r = R[int(y), int(x)]
        for j in range(i):
            if k.scores[j] > k.scores[i]:
                assert np.hypot(*(k.xy[j] - k.xy[i])) >= r - 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_anms_spacing_property(seed):
    img = textured(seed, 48)
    sal = saliency_map(img)
    R = radius_map(sal)
    k = anms_detect(sal.values, R)
    _spacing_ok(k, R)
    assert np.all(np.diff(k.scores) <= 0)
    assert np.all((k.xy >= 0) & (k.xy < 48))


def test_count_non_increasing_in_r_max():
    img = textured(5, 96)
    sal = saliency_map(img)
    counts = [len(anms_detect(sal.values, radius_map(sal, 1.0, r))) for r in (3, 5, 7, 9)]
    assert counts == sorted(counts, reverse=True)


def test_default_cap():
    assert DEFAULT_MAX_KEYPOINTS == 2048 and DetectorConfig().max_keypoints == 2048


# -- dense maps / providers ---------------------------------------------------------------


def test_fmap_round_trip_bit_identical(tmp_path):
    fm = FeatureMap(np.random.default_rng(0).normal(size=(5, 7, 3)).astype(np.float32), 4)
    save_fmap(fm, tmp_path / "a.fmap")
    back = load_fmap(tmp_path / "a.fmap")
    assert back.stride == 4 and back.data.tobytes() == fm.data.tobytes()
    raw = (tmp_path / "a.fmap").read_bytes()
    assert raw[:4] == b"FMAP" and np.frombuffer(raw[4:24], "<u4").tolist() == [1, 5, 7, 3, 4]


def test_fmap_rejects_bad_payload(tmp_path):
    save_fmap(FeatureMap(np.zeros((2, 2, 2), np.float32), 1), tmp_path / "a.fmap")
    (tmp_path / "a.fmap").write_bytes((tmp_path / "a.fmap").read_bytes()[:-4])
    with pytest.raises(ValueError):
        load_fmap(tmp_path / "a.fmap")


def test_fallback_constant_image_gives_no_keypoints():
    score, _ = structural_features(np.full((32, 32), 0.5), FeatureProvider())
    assert np.all(score == 0)
    kpts, _, _ = detect(np.full((32, 32), 0.5), FeatureProvider())
    assert len(kpts) == 0


def test_fallback_descriptors_unit_norm():
    img = textured(3, 50)
    d = fallback_structural_map(img)
    assert d.shape == (50, 50, 24)
    np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-5)
    sem = fallback_semantic_map(img)
    assert sem.data.shape == (13, 13, 24)
    np.testing.assert_allclose(np.linalg.norm(sem.data, axis=-1), 1.0, atol=1e-5)
    flat = fallback_structural_map(np.zeros((20, 20)))
    np.testing.assert_allclose(np.linalg.norm(flat, axis=-1), 1.0, atol=1e-5)


def test_imported_provider_round_trip(tmp_path):
    img = textured(4, 40)
    gray = img
    prefix = tmp_path / "feat"
    paths = fmap_paths(prefix)
    save_fmap(FeatureMap(saliency_map(gray).values[..., None].astype(np.float32), 1), paths["score"])
    save_fmap(FeatureMap(fallback_structural_map(gray), 1), paths["structural"])
    save_fmap(fallback_semantic_map(gray), paths["semantic"])
    prov = FeatureProvider.from_files(prefix)
    k_imp, s_imp, m_imp = detect(img, prov)
    k_fb, s_fb, m_fb = detect(img, FeatureProvider())
    np.testing.assert_array_equal(k_imp.xy, k_fb.xy)
    assert s_imp.data.tobytes() == s_fb.data.tobytes() and m_imp.data.tobytes() == m_fb.data.tobytes()


def test_imported_size_mismatch_rejected():
    prov = FeatureProvider(
        "imported",
        score=FeatureMap(np.zeros((10, 10, 1), np.float32), 1),
        structural=FeatureMap(np.zeros((10, 10, 24), np.float32), 1),
        semantic=FeatureMap(np.zeros((4, 4, 24), np.float32), 4),
    )
    # a 10 px side at stride 4 needs ceil(10 / 4) = 3 cells, not 4
    with pytest.raises(ValueError, match="does not cover"):
        prov.validate(10, 10)
    prov.semantic = FeatureMap(np.zeros((3, 3, 24), np.float32), 4)
    prov.validate(10, 10)


def test_structural_bank_ignores_contrast_polarity():
    img = textured(6, 64)
    np.testing.assert_allclose(fallback_structural_map(1.0 - img), fallback_structural_map(img), atol=1e-4)
