import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from texdistill.core import Tensor, precision
from texdistill.stat_texture import (cooc_counts, level_centers, linear_encode, quant_levels, rbf_encode,
                                     similarity_map, stat_texture)

from oracles import cooc, similarity

pytestmark = pytest.mark.usefixtures("f64")


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


def test_constant_map_similarity_is_one():
    A = np.ones((1, 3, 4, 5)) * np.array([1.0, -2.0, 0.5])[None, :, None, None]
    np.testing.assert_allclose(similarity_map(Tensor(A)).data, 1.0, atol=1e-12)


def test_zero_mean_vector_gives_zero_similarity():
    S = similarity_map(Tensor(np.array([[[[1.0, -1.0]]]])))
    np.testing.assert_array_equal(S.data, [[[0.0, 0.0]]])


def test_similarity_matches_loop(rng):
    A = rng.standard_normal((4, 6, 6))
    np.testing.assert_allclose(similarity_map(Tensor(A[None])).data[0], similarity(A), atol=1e-6)


def _S(values):
    return Tensor(np.asarray(values, dtype=np.float64)[None, None, :])


def test_level_examples():
    q = quant_levels(_S([-1.0, 0.3, 1.0]), 4)
    np.testing.assert_allclose(q.levels.data[0], [-0.5, 0.0, 0.5, 1.0])
    assert q.gamma == 0.5
    np.testing.assert_allclose(quant_levels(_S([0.0, 1.0]), 2).levels.data[0], [0.5, 1.0])


def test_constant_similarity_is_degenerate():
    S = Tensor(np.full((1, 2, 3), 0.4))
    q = quant_levels(S, 4)
    assert q.degenerate.all()
    np.testing.assert_allclose(q.levels.data, 0.4)
    np.testing.assert_allclose(rbf_encode(S, q).data, 1.0)


def test_too_few_levels():
    with pytest.raises(ValueError):
        quant_levels(_S([0.0, 1.0]), 1)


def test_rbf_examples():
    q = quant_levels(_S([-1.0, 1.0]), 4)  # levels -0.5, 0, 0.5, 1
    E = rbf_encode(_S([-1.0, 1.0]), q).data[0, :, 0]
    assert E[3, 1] == 1.0  # S equals Q_4
    assert E[1, 1] == pytest.approx(math.exp(-0.25), abs=1e-12)  # |Q_2 - S| = 1 with gamma 0.5
    assert E[1, 1] == pytest.approx(0.7788, abs=1e-4)


def test_linear_encode_is_triangular():
    q = quant_levels(_S([-1.0, 1.0]), 4)
    E = linear_encode(_S([-0.25, 1.0]), q).data[0, :, 0]
    np.testing.assert_allclose(E[:, 0], [0.5, 0.5, 0.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(E[:, 1], [0.0, 0.0, 0.0, 1.0], atol=1e-9)


def test_cooc_one_pair(rng):
    E = rng.uniform(0.1, 1.0, (1, 2, 1, 2))
    outer = np.outer(E[0, :, 0, 0], E[0, :, 0, 1])
    np.testing.assert_allclose(cooc_counts(Tensor(E)).data[0], outer / outer.sum(), atol=1e-15)


def test_cooc_matches_loop(rng):
    E = rng.uniform(0.0, 1.0, (4, 5, 7))
    np.testing.assert_allclose(cooc_counts(Tensor(E[None])).data[0], cooc(E), atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 4), st.integers(1, 3), st.integers(2, 3), st.integers(0, 10 ** 6))
def test_cooc_loop_equivalence_small(N, H, W, seed):
    E = np.random.default_rng(seed).uniform(0.01, 1.0, (N, H, W))
    np.testing.assert_allclose(cooc_counts(Tensor(E[None])).data[0], cooc(E), atol=1e-6)


def test_cooc_needs_two_columns():
    with pytest.raises(ValueError):
        cooc_counts(Tensor(np.ones((1, 2, 3, 1))))


def test_centers_pair_levels(rng):
    q = quant_levels(Tensor(rng.standard_normal((2, 3, 4))), 4)
    c = level_centers(q).data
    L = q.levels.data
    for b in range(2):
        for m in range(4):
            for n in range(4):
                np.testing.assert_array_equal(c[b, m, n], [L[b, m], L[b, n]])


maps = arrays(np.float64, (2, 3, 4, 5), elements=st.floats(-5, 5, allow_nan=False, width=64))


@settings(max_examples=40, deadline=None)
@given(maps, st.sampled_from([2, 4, 8]), st.sampled_from(["rbf", "linear"]))
def test_counts_form_a_pmf(A, N, binning):
    A = A + np.random.default_rng(0).standard_normal(A.shape) * 1e-3  # avoid all-equal maps
    tex = stat_texture(Tensor(A), N, binning)
    assert (tex.counts.data >= 0).all()
    np.testing.assert_allclose(tex.counts.data.sum(axis=(1, 2)), 1.0, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(maps, st.sampled_from([2, 4, 8]))
def test_encoding_bounds_and_level_bracketing(A, N):
    A = A + np.random.default_rng(1).standard_normal(A.shape) * 1e-3
    S = similarity_map(Tensor(A))
    q = quant_levels(S, N)
    E = rbf_encode(S, q).data
    assert (E > 0).all() and (E <= 1).all()
    for b in range(2):
        if q.degenerate[b]:
            continue
        L, s = q.levels.data[b], S.data[b]
        assert s.min() <= L[0] < L[-1]
        assert L[-1] == pytest.approx(s.max(), abs=1e-12)
        assert np.all(np.diff(L) > 0)


@settings(max_examples=25, deadline=None)
@given(maps, st.permutations(range(3)))
def test_channel_permutation_invariance(A, perm):
    a = stat_texture(Tensor(A), 4).counts.data
    b = stat_texture(Tensor(A[:, list(perm)]), 4).counts.data
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_constant_map_texture():
    tex = stat_texture(Tensor(np.ones((1, 2, 3, 4))), 4)
    assert tex.levels.degenerate.all()
    np.testing.assert_allclose(tex.counts.data, 1.0 / 16, atol=1e-12)


def test_unknown_binning():
    with pytest.raises(ValueError, match="binning"):
        stat_texture(Tensor(np.ones((1, 2, 3, 4))), 4, "kmeans")
