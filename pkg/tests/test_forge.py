import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import binary_dilation

from sgsf import forge
from sgsf.config import RunConfig
from sgsf.errors import ShapeError, ValidationError
from sgsf.forge import (
    adaptive_threshold, augment_auxiliary, compose, forge_sample, make_mask, mix_batch,
)


@pytest.mark.parametrize("fill,expected", [(0.0, 0.4), (1.0, 0.6), (0.5, 0.5)])
def test_threshold_values(fill, expected):
    assert adaptive_threshold(np.full((16, 16), fill), 0.4, 0.2) == pytest.approx(expected, abs=1e-15)


def test_threshold_rejects_bad_params():
    with pytest.raises(ValidationError):
        adaptive_threshold(np.ones((4, 4)), 0.9, 0.2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 0.5), st.floats(0, 0.5))
def test_threshold_bounds(seed, a, b):
    S = np.random.default_rng(seed).random((16, 16))
    mu = adaptive_threshold(S, a, b)
    assert a <= mu <= a + b


def test_mask_rejections():
    assert make_mask(np.full((8, 8), 0.5), 0.6) is None
    assert make_mask(np.full((8, 8), 0.5), 0.4) is None


def test_mask_checkerboard():
    cb = np.indices((8, 8)).sum(axis=0) % 2
    G = np.where(cb == 1, 0.7, 0.3)
    np.testing.assert_array_equal(make_mask(G, 0.5), cb)


def test_compose_empty_mask_is_identity(rng):
    A, B = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    s = compose(A, B, np.zeros((8, 8)), 0.7)
    assert s.image.tobytes() == A.tobytes()
    assert not s.label.any()


def test_compose_full_mask_opaque(rng):
    A, B = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    s = compose(A, B, np.ones((8, 8)), 1.0)
    assert s.image.tobytes() == B.tobytes()
    assert s.label.all()


def test_compose_single_pixel():
    A = np.full((4, 4, 1), 0.2)
    B = np.full((4, 4, 1), 0.8)
    M = np.zeros((4, 4))
    M[1, 2] = 1
    s = compose(A, B, M, 0.5)
    assert s.image[1, 2, 0] == pytest.approx(0.5, abs=1e-15)
    out = s.image.copy()
    out[1, 2] = 0.2
    np.testing.assert_array_equal(out, A)


def test_compose_general_label_formula():
    M = np.array([[1.0, 0.0], [0.0, 1.0]])
    yA = np.array([[0.0, 1.0], [0.0, 0.0]])
    yB = np.array([[1.0, 1.0], [0.0, 1.0]])
    s = compose(np.zeros((2, 2, 1)), np.ones((2, 2, 1)), M, 0.5, yA, yB)
    np.testing.assert_array_equal(s.label, [[1, 1], [0, 1]])


def test_compose_shape_mismatch():
    with pytest.raises(ShapeError):
        compose(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), np.zeros((4, 4)), 0.5)


def test_augment_deterministic_and_bounded():
    B = np.random.default_rng(0).random((16, 16, 3))
    a = augment_auxiliary(B, np.random.default_rng(4))
    b = augment_auxiliary(B, np.random.default_rng(4))
    np.testing.assert_array_equal(a, b)
    assert a.shape == B.shape


@pytest.mark.parametrize("op", forge.AUGMENTATIONS, ids=lambda f: f.__name__)
@pytest.mark.parametrize("C", [1, 3])
def test_each_op_preserves_shape_and_range(op, C):
    rng = np.random.default_rng(1)
    B = rng.random((12, 12, C))
    out = op(B, rng)
    assert out.shape == B.shape
    assert out.min() >= 0 and out.max() <= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_augment_range(seed):
    rng = np.random.default_rng(seed)
    out = augment_auxiliary(rng.random((16, 16, 3)), rng)
    assert out.min() >= 0 and out.max() <= 1


def _cfg(**kw):
    return RunConfig(**kw)


def test_forge_sample_label_equals_mask_and_determinism(rng):
    N = 32
    A = rng.random((N, N, 3))
    S = np.zeros((N, N))
    S[8:24, 8:24] = 1
    aux = [rng.random((N, N, 3)) for _ in range(3)]
    cfg = _cfg(N=N)
    s1 = forge_sample(A, S, aux, cfg, np.random.default_rng(99))
    s2 = forge_sample(A, S, aux, cfg, np.random.default_rng(99))
    assert s1 is not None
    np.testing.assert_array_equal(s1.label, s1.mask)
    np.testing.assert_array_equal(s1.image, s2.image)
    assert 0.1 <= s1.alpha <= 1.0
    assert s1.image.min() >= 0 and s1.image.max() <= 1
    outside = s1.mask == 0
    np.testing.assert_array_equal(s1.image[outside], A[outside])


def test_forge_texture_fallback_anywhere():
    N = 64
    A = np.full((N, N, 3), 0.5)
    aux = [np.zeros((N, N, 3))]
    cfg = _cfg(N=N)
    cover = np.zeros((N, N))
    for seed in range(40):
        s = forge_sample(A, np.zeros((N, N)), aux, cfg, np.random.default_rng(seed))
        if s is not None:
            cover += s.mask
    quads = [cover[:32, :32], cover[:32, 32:], cover[32:, :32], cover[32:, 32:]]
    assert all(q.sum() > 0 for q in quads)


def test_forge_requires_aux(rng):
    with pytest.raises(ValidationError):
        forge_sample(np.zeros((16, 16, 3)), np.ones((16, 16)), [], _cfg(N=16), rng)


def test_forge_skip_signal():
    # saliency present only between lattice points of a coarse grid: no gradient survives
    N = 64
    S = np.zeros((N, N))
    S[5, 5] = 1.0
    cfg = _cfg(N=N, mask_retries=3)
    before = forge.CALLS["skipped"]
    out = [forge_sample(np.zeros((N, N, 3)), S, [np.ones((N, N, 3))], cfg, np.random.default_rng(s))
           for s in range(5)]
    assert any(o is None for o in out)
    assert forge.CALLS["skipped"] > before


def test_saliency_containment_100_draws():
    N = 64
    S = np.zeros((N, N))
    S[:, :32] = 1.0
    A = np.random.default_rng(0).random((N, N, 3))
    aux = [np.random.default_rng(1).random((N, N, 3))]
    cfg = _cfg(N=N)
    for seed in range(100):
        s = forge_sample(A, S, aux, cfg, np.random.default_rng(seed))
        if s is None:
            continue
        cell = N // s.grid_size
        allowed = binary_dilation(S > 0, np.ones((2 * cell + 1, 2 * cell + 1), bool))
        assert np.all(allowed[s.mask > 0])


def test_mix_batch_ratio():
    normals = [np.zeros((4, 4, 1))] * 4000
    items = mix_batch(normals, _cfg(), np.random.default_rng(2024))
    frac = np.mean([it.is_forged for it in items])
    assert abs(frac - 0.75) <= 0.03


def test_mix_batch_normals_have_zero_labels(rng):
    N = 32
    normals = [rng.random((N, N, 3)) for _ in range(12)]
    sal = [np.ones((N, N))] * 12
    aux = [rng.random((N, N, 3))]
    items = mix_batch(normals, _cfg(N=N), np.random.default_rng(0), sal, aux)
    assert len(items) == 12
    for it in items:
        if not it.is_forged:
            assert not it.label.any()
            np.testing.assert_array_equal(it.image, normals[it.source])
        else:
            assert it.label.any()


def test_forged_ratio_must_be_positive():
    with pytest.raises(ValidationError):
        _cfg(forged_ratio=0)
