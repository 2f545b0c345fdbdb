import itertools

import numpy as np
import pytest

from gseg import functional as F
from gseg.audit import LAYERS, layer_equivariance, trivial_group_deviation
from gseg.gradcheck import finite_diff_check
from gseg.group import GroupSpec, StabilizerElement, act_on_offset, compose, enumerate_group, inverse
from gseg.layers import (expand_filter_g, expand_filter_z2, g_batch_norm, g_max_pool, g_projection, g_upsample,
                         gconv_g_to_g, gconv_z2_to_g, group_permutation, transform_feature_g,
                         transform_feature_z2)
from gseg.tensor import Tensor

E = StabilizerElement
P4, P4M = GroupSpec.P4, GroupSpec.P4M


def pixel_oracle(g, img):
    """Per-pixel (T_g x)(p) = x(g^-1 p) with Cartesian coordinates about the image centre."""
    n = img.shape[-1]
    c = (n - 1) / 2
    out = np.empty_like(img)
    m = np.eye(2)
    for _ in range(g.quarter_turns):
        m = np.array([[0, -1], [1, 0]]) @ m
    if g.mirror:
        m = np.array([[-1, 0], [0, 1]]) @ m
    minv = np.linalg.inv(m)
    for row, col in itertools.product(range(n), repeat=2):
        x, y = minv @ np.array([col - c, c - row])
        out[..., row, col] = img[..., int(round(c - y)), int(round(x + c))]
    return out


# transforms --------------------------------------------------------------

def test_transform_z2_examples():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert transform_feature_z2(E(0, 1), x).tolist() == [[2.0, 4.0], [1.0, 3.0]]
    assert np.array_equal(transform_feature_z2(E(0, 0), x), x)
    twice = transform_feature_z2(E(0, 2), transform_feature_z2(E(0, 2), x))
    assert np.array_equal(twice, x)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_transform_z2_matches_pixel_oracle(n, rng):
    x = rng.standard_normal((2, n, n))
    for g in enumerate_group(P4M):
        assert np.array_equal(transform_feature_z2(g, x), pixel_oracle(g, x))


def test_transform_z2_is_representation(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    for a, b in itertools.product(enumerate_group(P4M), repeat=2):
        lhs = transform_feature_z2(compose(a, b), x)
        rhs = transform_feature_z2(a, transform_feature_z2(b, x))
        assert np.array_equal(lhs, rhs)


def test_transform_z2_rejects_non_square():
    with pytest.raises(ValueError):
        transform_feature_z2(E(0, 1), np.zeros((1, 3, 4)))


def test_transform_g_examples(rng):
    x = rng.standard_normal((1, 2, 4, 5, 5))
    assert np.array_equal(transform_feature_g(E(0, 0), x), x)
    g = E(0, 1)
    assert np.array_equal(transform_feature_g(inverse(g), transform_feature_g(g, x)), x)
    # content at slot h moves to slot g*h
    elems = enumerate_group(P4)
    moved = transform_feature_g(g, x)
    for hi, h in enumerate(elems):
        dest = elems.index(compose(g, h))
        assert np.array_equal(moved[:, :, dest], transform_feature_z2(g, x[:, :, hi]))
    assert group_permutation(P4, g).tolist() == [3, 0, 1, 2]


def test_transform_g_is_representation(rng):
    x = rng.standard_normal((1, 2, 8, 3, 3))
    for a, b in itertools.product(enumerate_group(P4M), repeat=2):
        lhs = transform_feature_g(compose(a, b), x)
        assert np.array_equal(lhs, transform_feature_g(a, transform_feature_g(b, x)))


def test_transform_g_group_mismatch(rng):
    with pytest.raises(ValueError):
        transform_feature_g(E(0, 1), rng.standard_normal((1, 1, 4, 3, 3)), P4M)
    with pytest.raises(ValueError):
        transform_feature_g(E(1, 0), rng.standard_normal((1, 1, 4, 3, 3)), P4)


# filter expansion --------------------------------------------------------

def test_expand_z2(rng):
    w = rng.standard_normal((2, 3, 3, 3))
    assert np.array_equal(expand_filter_z2(Tensor(w), GroupSpec.P1).data[:, 0], w)
    exp = expand_filter_z2(Tensor(w), P4M).data
    assert exp.shape == (2, 8, 3, 3, 3)
    half = enumerate_group(P4M).index(E(0, 2))
    assert np.array_equal(exp[:, half], w[:, :, ::-1, ::-1])
    for gi, g in enumerate(enumerate_group(P4M)):
        for row, col in itertools.product(range(3), repeat=2):
            r2, c2 = act_on_offset(g, (row, col), 3)
            assert np.array_equal(exp[:, gi, :, r2, c2], w[:, :, row, col])
    assert np.allclose(exp.sum(axis=(2, 3, 4)), w.sum(axis=(1, 2, 3))[:, None])


def test_expand_g(rng):
    w = rng.standard_normal((2, 3, 4, 3, 3))
    assert np.array_equal(expand_filter_g(Tensor(w[:, :, :1]), GroupSpec.P1).data[:, 0], w[:, :, :1])
    exp = expand_filter_g(Tensor(w), P4).data
    assert exp.shape == (2, 4, 3, 4, 3, 3)
    assert np.array_equal(exp[:, 0], w)
    g = E(0, 1)
    elems = enumerate_group(P4)
    gi = elems.index(g)
    for hi, h in enumerate(elems):
        src = elems.index(compose(E(0, 3), h))
        assert np.array_equal(exp[:, gi, :, hi], np.rot90(w[:, :, src], 1, axes=(-2, -1)))


@pytest.mark.parametrize("group", [P4, P4M])
def test_expansion_preserves_value_multiset(group, rng):
    S = group.order
    wz = rng.standard_normal((2, 3, 3, 3))
    ez = expand_filter_z2(Tensor(wz), group).data
    wg = rng.standard_normal((2, 3, S, 3, 3))
    eg = expand_filter_g(Tensor(wg), group).data
    for k, c in itertools.product(range(2), range(3)):
        for s in range(S):
            assert np.array_equal(np.sort(ez[k, s, c].ravel()), np.sort(wz[k, c].ravel()))
            assert np.array_equal(np.sort(eg[k, s, c].ravel()), np.sort(wg[k, c].ravel()))


# G convolutions ----------------------------------------------------------

def test_gconv_z2_trivial_and_pointwise(rng):
    x = Tensor(rng.standard_normal((2, 3, 6, 6)))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    got = gconv_z2_to_g(x, w, GroupSpec.P1, padding=1).data[:, :, 0]
    assert np.abs(got - F.conv2d(x, w, padding=1).data).max() < 1e-12
    w1 = Tensor(rng.standard_normal((4, 3, 1, 1)))
    out = gconv_z2_to_g(x, w1, P4M).data
    assert out.shape == (2, 4, 8, 6, 6)
    assert np.abs(out - out[:, :, :1]).max() == 0


def test_gconv_g_constant_over_group(rng):
    x = np.repeat(rng.standard_normal((1, 2, 1, 5, 5)), 8, axis=2)
    w = np.repeat(rng.standard_normal((3, 2, 1, 3, 3)), 8, axis=2)
    # a constant-over-group filter must also be rotation symmetric for the slices to agree
    w = sum(transform_feature_z2(g, w) for g in enumerate_group(P4M))
    out = gconv_g_to_g(Tensor(x), Tensor(w), P4M, padding=1).data
    assert np.abs(out - out[:, :, :1]).max() < 1e-12


def test_gconv_g_group_mismatch(rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 5, 5)))
    with pytest.raises(ValueError):
        gconv_g_to_g(x, Tensor(rng.standard_normal((3, 2, 8, 3, 3))), P4M)
    with pytest.raises(ValueError):
        gconv_g_to_g(x, Tensor(rng.standard_normal((3, 2, 4, 3, 3))), P4M)


def test_gconv_weight_sharing(rng):
    # the expanded filter has |S| times the entries but no new free values
    w = rng.standard_normal((4, 2, 8, 3, 3))
    exp = expand_filter_g(Tensor(w), P4M).data
    assert exp.size == 8 * w.size
    assert len(np.unique(exp)) == len(np.unique(w))


@pytest.mark.parametrize("group", [P4, P4M])
@pytest.mark.parametrize("name", LAYERS)
def test_layer_equivariance(name, group):
    assert layer_equivariance(name, group, trials=5, seed=7) < 1e-10


@pytest.mark.parametrize("name", LAYERS)
def test_trivial_group_reduction(name):
    assert trivial_group_deviation(name, trials=5, seed=3) < 1e-12


def test_strided_gconv_breaks_exact_equivariance(rng):
    # the stride-2 lattice of an even grid is not rotation stable
    x = rng.standard_normal((1, 1, 8, 8))
    w = Tensor(rng.standard_normal((2, 1, 3, 3)))
    g = E(0, 1)
    a = gconv_z2_to_g(Tensor(transform_feature_z2(g, x)), w, P4, padding=1).data[..., ::2, ::2]
    b = transform_feature_g(g, gconv_z2_to_g(Tensor(x), w, P4, padding=1).data[..., ::2, ::2])
    assert np.abs(a - b).max() > 1e-3


# upsample / projection / pool / norm -------------------------------------

def test_g_upsample(rng):
    x = Tensor(np.full((1, 1, 8, 1, 1), 7.0))
    assert np.all(g_upsample(x, 2).data == 7.0) and g_upsample(x, 2).shape == (1, 1, 8, 2, 2)
    y = rng.standard_normal((2, 3, 4, 3, 3))
    assert g_upsample(Tensor(y), 2).shape == (2, 3, 4, 6, 6)


def test_g_projection(rng):
    x = np.zeros((1, 1, 4, 1, 1))
    x[0, 0, :, 0, 0] = [1, 2, 3, 4]
    assert g_projection(Tensor(x)).data.item() == 2.5
    c = np.full((2, 3, 8, 4, 4), -1.25)
    assert np.all(g_projection(Tensor(c)).data == -1.25)


def test_g_projection_invariance_exact(rng):
    x = rng.standard_normal((2, 3, 8, 5, 5))
    base = g_projection(Tensor(x)).data
    for g in enumerate_group(P4M):
        moved = g_projection(Tensor(transform_feature_g(g, x))).data
        assert np.abs(moved - transform_feature_z2(g, base)).max() < 1e-12


def test_g_max_pool_shapes(rng):
    x = Tensor(rng.standard_normal((1, 2, 8, 6, 6)))
    assert g_max_pool(x).shape == (1, 2, 8, 3, 3)
    with pytest.raises(ValueError):
        g_max_pool(Tensor(np.zeros((1, 1, 4, 5, 5))))


def test_g_batch_norm(rng):
    x = rng.normal(2.0, 3.0, size=(3, 2, 4, 5, 5))
    out = g_batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True).data
    assert np.allclose(out.mean(axis=(0, 2, 3, 4)), 0, atol=1e-12)
    assert np.allclose(out.var(axis=(0, 2, 3, 4)), 1, atol=1e-4)
    again = g_batch_norm(Tensor(out), Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True).data
    assert np.abs(again - out).max() < 1e-4


def test_g_layer_gradients(rng):
    S = 4
    x = Tensor(rng.standard_normal((2, 2, 5, 5)))
    wz = Tensor(rng.standard_normal((3, 2, 3, 3)))
    wg = Tensor(rng.standard_normal((2, 3, S, 3, 3)))
    gamma, beta = Tensor(rng.uniform(0.5, 1.5, 2)), Tensor(rng.standard_normal(2))
    bias = Tensor(rng.standard_normal(3))
    probe = Tensor(rng.standard_normal((2, 2, 5, 5)))

    def f():
        h = gconv_z2_to_g(x, wz, P4, padding=1, bias=bias)
        h = gconv_g_to_g(h, wg, P4, padding=1)
        h = g_batch_norm(h, gamma, beta, np.zeros(2), np.ones(2), True)
        return (g_projection(g_max_pool(g_upsample(h, 2), 2)) * probe).sum()

    assert finite_diff_check(f, [x, wz, wg, gamma, beta, bias]) < 1e-4
