import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.metrics import structural_similarity

from panoview.geometry import CameraIntrinsics, CameraPose, DepthMap
from panoview.metrics import (
    DegenerateGeometryError,
    FeatureDistribution,
    epipolar_distance_terms,
    feature_distribution,
    frechet_distance,
    fundamental_matrix,
    fvd,
    mtsed_pair,
    mtsed_sequence,
    mtsed_verdict,
    psnr,
    ssim,
    symmetric_epipolar_distance,
    video_feature_stack,
)
from panoview.synthetic import synthetic_correspondences
from conftest import random_unit_quats

K = CameraIntrinsics.from_fov(160, 120, math.radians(70))


def small_motion(rng, trans=0.3):
    axis = rng.normal(size=3)
    angle = rng.uniform(0.02, 0.15)
    q = np.r_[math.cos(angle / 2), math.sin(angle / 2) * axis / np.linalg.norm(axis)]
    t = rng.normal(size=3)
    return CameraPose(q, trans * t / np.linalg.norm(t))


def exact_matches(rng, n=50, rel=None):
    rel = small_motion(rng) if rel is None else rel
    depth = DepthMap(rng.uniform(2.0, 6.0, size=(K.height, K.width)))
    return synthetic_correspondences(depth, K, K, rel, n, seed=int(rng.integers(1 << 30))), rel


# PSNR / SSIM -----------------------------------------------------------------

def test_psnr_identity_and_offset(rng):
    a = rng.uniform(0.2, 0.8, size=(16, 16, 3))
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    b = rng.uniform(size=a.shape)
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, a[:3])


def test_ssim_identity_is_one(rng):
    a = rng.uniform(size=(32, 32, 3))
    assert ssim(a, a) == 1.0


def test_ssim_inverted_binary_is_negative(rng):
    a = (rng.uniform(size=(32, 32)) > 0.5).astype(np.float64)
    assert ssim(a, 1 - a) < 0


def test_ssim_flip_invariance(rng):
    a, b = rng.uniform(size=(2, 24, 30))
    assert ssim(a, b) == pytest.approx(ssim(a[::-1, ::-1], b[::-1, ::-1]), abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


@pytest.mark.parametrize("shape", [(32, 40), (20, 24, 3)])
def test_ssim_matches_reference_implementation(rng, shape):
    a = rng.uniform(size=shape)
    b = np.clip(a + rng.normal(scale=0.1, size=shape), 0, 1)
    ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, channel_axis=-1 if len(shape) == 3 else None)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-12)


def test_ssim_small_images_rejected():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 40)), np.zeros((10, 40)))


# epipolar geometry -----------------------------------------------------------

def test_exact_correspondences(rng):
    m, rel = exact_matches(rng)
    assert len(m) == 50
    assert np.max(symmetric_epipolar_distance(m, rel, K, K)) < 1e-6


def test_fundamental_matrix_oracle(rng):
    rel = small_motion(rng)
    # independent build: F from the eight-point normalised DLT on exact matches
    m, _ = exact_matches(rng, 200, rel)
    xa = np.c_[m[:, :2], np.ones(len(m))]
    xb = np.c_[m[:, 2:], np.ones(len(m))]
    A = np.einsum("ni,nj->nij", xb, xa).reshape(len(m), 9)
    F_dlt = np.linalg.svd(A)[2][-1].reshape(3, 3)
    F = fundamental_matrix(rel, K, K)
    F_dlt /= np.linalg.norm(F_dlt)
    F = F / np.linalg.norm(F)
    assert min(np.abs(F - F_dlt).max(), np.abs(F + F_dlt).max()) < 1e-6


def test_perturbation_orthogonal_to_epiline(rng):
    m, rel = exact_matches(rng)
    F = fundamental_matrix(rel, K, K)
    line = F @ np.r_[m[7, :2], 1.0]
    normal = line[:2] / np.hypot(*line[:2])
    moved = m.copy()
    moved[7, 2:] += 5.0 * normal
    d_b, d_a = epipolar_distance_terms(moved, rel, K, K)
    assert d_b[7] == pytest.approx(5.0, abs=1e-9)
    total = d_b[7] + d_a[7]
    assert 7.0 < total < 13.0
    others = np.delete(np.arange(len(m)), 7)
    assert np.max((d_a + d_b)[others]) < 1e-6


def test_pure_rotation_is_degenerate():
    rel = CameraPose(np.array([0.99, 0.1, 0.0, 0.0]) / np.linalg.norm([0.99, 0.1, 0, 0]))
    with pytest.raises(DegenerateGeometryError):
        symmetric_epipolar_distance(np.zeros((3, 4)), rel, K, K)
    assert issubclass(DegenerateGeometryError, ValueError)


def test_swap_views_with_inverse_pose(rng):
    m, rel = exact_matches(rng)
    m = m + rng.normal(scale=1.0, size=m.shape)
    swapped = np.c_[m[:, 2:], m[:, :2]]
    np.testing.assert_allclose(symmetric_epipolar_distance(m, rel, K, K),
                               symmetric_epipolar_distance(swapped, rel.inverse(), K, K), rtol=1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_exact_matches_property(seed):
    rng = np.random.default_rng(seed)
    q = random_unit_quats(rng, 1)[0]
    # keep the views overlapping: limit rotation to about 20 degrees
    q = np.r_[1.0, 0.18 * q[1:]]
    t = rng.normal(size=3)
    rel = CameraPose(q / np.linalg.norm(q), rng.uniform(0.1, 0.5) * t / np.linalg.norm(t))
    m, _ = exact_matches(rng, 30, rel)
    if len(m):
        assert np.max(symmetric_epipolar_distance(m, rel, K, K)) < 1e-6


# mTSED -----------------------------------------------------------------------

def test_mtsed_gates(rng):
    m, rel = exact_matches(rng)
    v = mtsed_verdict(m, rel, K, K)
    assert v.passed and v.median_error < 1e-6
    assert not mtsed_pair(m[:8], rel, K, K)
    assert not mtsed_verdict(m[:8], rel, K, K).count_ok
    assert not mtsed_pair(m[:10], rel, K, K)
    assert mtsed_pair(m[:11], rel, K, K)


def test_mtsed_error_gate(rng):
    m, rel = exact_matches(rng)
    F = fundamental_matrix(rel, K, K)
    lines = np.c_[m[:, :2], np.ones(len(m))] @ F.T
    normals = lines[:, :2] / np.hypot(lines[:, 0], lines[:, 1])[:, None]
    bad = m.copy()
    bad[:, 2:] += 3.0 * normals  # d_b = 3 and d_a about 3: median near 6 px
    v = mtsed_verdict(bad, rel, K, K)
    assert v.count_ok and not v.error_ok and not v.passed
    assert v.median_error > 2.5


def test_mtsed_sequence_fraction(rng):
    good, rel = exact_matches(rng)
    pairs = [(good, rel, K, K), (good[:5], rel, K, K), (good, rel, K, K), (good[:9], rel, K, K)]
    assert mtsed_sequence(pairs) == 0.5
    assert mtsed_sequence([]) == 0.0


# Fréchet distance ------------------------------------------------------------

def test_feature_distribution_hand_case():
    d = feature_distribution([[0.0, 0.0], [2.0, 0.0]])
    np.testing.assert_array_equal(d.mean, [1.0, 0.0])
    np.testing.assert_array_equal(d.cov, [[2.0, 0.0], [0.0, 0.0]])
    same = feature_distribution(np.ones((5, 3)))
    np.testing.assert_array_equal(same.cov, 0.0)
    with pytest.raises(ValueError):
        feature_distribution([[1.0, 2.0]])


def test_feature_distribution_symmetric(rng):
    d = feature_distribution(rng.normal(size=(40, 6)))
    np.testing.assert_array_equal(d.cov, d.cov.T)
    with pytest.raises(ValueError):
        FeatureDistribution(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_feature_distribution_matches_numpy_cov(rng):
    X = rng.normal(size=(30, 4))
    np.testing.assert_allclose(feature_distribution(X).cov, np.cov(X, rowvar=False), atol=1e-14)


def test_frechet_identical_is_zero(rng):
    d = feature_distribution(rng.normal(size=(50, 8)))
    assert abs(frechet_distance(d, d)) < 1e-8


def test_frechet_mean_offset():
    p = FeatureDistribution(np.zeros(4), np.eye(4))
    q = FeatureDistribution(np.array([3.0, 0, 0, 0]), np.eye(4))
    assert abs(frechet_distance(p, q) - 9.0) < 1e-9


def test_frechet_one_d_variance():
    p = FeatureDistribution(np.zeros(1), np.array([[4.0]]))
    q = FeatureDistribution(np.zeros(1), np.array([[1.0]]))
    assert frechet_distance(p, q) == pytest.approx(1.0, abs=1e-12)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_frechet_one_d_closed_form(mp, mq, sp, sq):
    p = FeatureDistribution(np.array([mp]), np.array([[sp * sp]]))
    q = FeatureDistribution(np.array([mq]), np.array([[sq * sq]]))
    assert abs(frechet_distance(p, q) - ((mp - mq) ** 2 + (sp - sq) ** 2)) < 1e-9


def test_frechet_matches_scipy_sqrtm(rng):
    from scipy.linalg import sqrtm
    A = rng.normal(size=(40, 5))
    B = rng.normal(size=(40, 5)) * 1.5 + 0.3
    p, q = feature_distribution(A), feature_distribution(B)
    ref = np.sum((p.mean - q.mean) ** 2) + np.trace(p.cov + q.cov - 2 * np.real(sqrtm(p.cov @ q.cov)))
    assert frechet_distance(p, q) == pytest.approx(ref, abs=1e-9)
    assert frechet_distance(p, q) == pytest.approx(frechet_distance(q, p), abs=1e-9)


def test_frechet_rank_deficient(rng):
    X = rng.normal(size=(3, 10))
    p = feature_distribution(X)
    assert abs(frechet_distance(p, p)) < 1e-8
    with pytest.raises(ValueError):
        frechet_distance(p, FeatureDistribution(np.zeros(2), np.eye(2)))


# video feature stack ---------------------------------------------------------

def test_stack_single_frame(rng):
    f = rng.normal(size=(1, 6))
    v = video_feature_stack([f])[0]
    np.testing.assert_allclose(v[:6], f[0])
    np.testing.assert_array_equal(v[6:], 0.0)


def test_stack_reversal_and_constant(rng):
    f = rng.normal(size=(7, 5))
    a = video_feature_stack([f])[0]
    b = video_feature_stack([f[::-1]])[0]
    np.testing.assert_allclose(b[:5], a[:5], atol=1e-15)
    np.testing.assert_allclose(b[5:], -a[5:], atol=1e-15)
    c = video_feature_stack([np.repeat(f[:1], 4, axis=0)])[0]
    np.testing.assert_array_equal(c[5:], 0.0)


def test_stack_difference_block_is_mean_adjacent_difference(rng):
    f = rng.normal(size=(6, 3))
    v, norms = video_feature_stack([f], return_norms=True)
    np.testing.assert_allclose(v[0][3:], np.diff(f, axis=0).mean(axis=0), atol=1e-14)
    assert norms[0] == pytest.approx(np.linalg.norm(v[0]))


def test_stack_rejects_ragged(rng):
    with pytest.raises(ValueError):
        video_feature_stack([rng.normal(size=(3, 4)), rng.normal(size=(3, 5))])


def test_fvd_zero_for_same_set(rng):
    vids = [rng.normal(size=(5, 4)) for _ in range(12)]
    assert abs(fvd(vids, vids)) < 1e-8
    other = [v + 1.0 for v in vids]
    assert fvd(vids, other) == pytest.approx(4.0, abs=1e-8)
