from collections import OrderedDict

import numpy as np
import pytest

from gseg.audit import network_equivariance, randomize_buffers
from gseg.gradcheck import finite_diff_report
from gseg.group import GroupSpec, enumerate_group
from gseg.layers import transform_feature_z2
from gseg.segnet import SegNet, SegNetConfig, SegOutput, build, count_params, loss, predict
from gseg.tensor import Tensor, no_grad

P4, P4M = GroupSpec.P4, GroupSpec.P4M
SMALL = SegNetConfig(base_width=2)


def net_bce(logits, target):
    """Naive per-pixel binary cross-entropy oracle."""
    p = 1.0 / (1.0 + np.exp(-logits))
    return float(np.mean(-(target * np.log(p) + (1 - target) * np.log(1 - p))))


# config ------------------------------------------------------------------

def test_config_defaults():
    cfg = SegNetConfig()
    assert cfg.group is P4M and cfg.ds_weights == (0.7, 0.2, 0.1)
    assert cfg.num_stages == 4 and cfg.blocks_per_stage == 2 and cfg.downsample == "pool"
    assert cfg.stage_widths() == [8, 16, 32, 64]
    assert cfg.plain_twin().stage_widths() == [23, 45, 91, 181]


@pytest.mark.parametrize("kwargs", [
    dict(ds_weights=(0.7, 0.2, 0.2)),
    dict(ds_weights=(0.5, 0.5)),
    dict(num_stages=3),
    dict(base_width=0),
    dict(downsample="avg"),
    dict(kernel_size=4),
    dict(group="p6"),
])
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        SegNetConfig(**kwargs)


def test_ds_weights_tolerance():
    SegNetConfig(ds_weights=(0.7, 0.2, 0.1 + 1e-10))


# build -------------------------------------------------------------------

def test_build_deterministic():
    a, b = build(SMALL, seed=5), build(SMALL, seed=5)
    for (na, xa), (nb, xb) in zip(a.named_arrays(), b.named_arrays()):
        assert na == nb and np.array_equal(xa, xb)
    c = build(SMALL, seed=6)
    assert not np.array_equal(a.params["stem.weight"].data, c.params["stem.weight"].data)


def test_he_init_scale():
    net = build(SegNetConfig(base_width=8), seed=0)
    w = net.params["enc2.block1.conv1.weight"].data
    fan_in = 32 * 8 * 9
    assert abs(w.std() - np.sqrt(2 / fan_in)) < 0.05 * np.sqrt(2 / fan_in)


def test_output_shapes_and_bottleneck():
    net = build(SMALL, seed=0).eval()
    seen = []
    orig = net._block

    def spy(name, x, stride):
        out = orig(name, x, stride)
        seen.append((name, out.shape))
        return out

    net._block = spy
    with no_grad():
        out = net(np.zeros((2, 3, 64, 64)))
    assert isinstance(out, SegOutput)
    assert all(h.shape == (2, 1, 64, 64) for h in out.heads)
    assert dict(seen)["enc3.block1"] == (2, 16, 8, 8, 8)


def test_strided_variant_shapes():
    cfg = SegNetConfig(base_width=2, downsample="strided_conv")
    net = build(cfg, seed=0)
    assert "enc1.block0.proj.weight" in net.params
    with no_grad():
        out = net.eval()(np.random.default_rng(0).standard_normal((1, 3, 32, 32)))
    assert all(h.shape == (1, 1, 32, 32) for h in out.heads)


@pytest.mark.parametrize("size", [60, 63])
def test_forward_rejects_bad_size(size):
    net = build(SMALL, seed=0)
    with pytest.raises(ValueError):
        net(np.zeros((1, 3, size, size)))


def test_forward_rejects_non_square_or_gray():
    net = build(SMALL, seed=0)
    with pytest.raises(ValueError):
        net(np.zeros((1, 3, 16, 32)))
    with pytest.raises(ValueError):
        net(np.zeros((1, 1, 16, 16)))


# equivariance ------------------------------------------------------------

@pytest.mark.parametrize("group", [P4, P4M])
def test_network_equivariance_double(group):
    net = randomize_buffers(build(SegNetConfig(group=group, base_width=2), seed=1), seed=2).eval()
    assert network_equivariance(net, n_inputs=4, size=32, seed=3, batch_size=2) < 1e-8


def test_network_equivariance_training_mode():
    net = build(SMALL, seed=1).train()
    assert network_equivariance(net, n_inputs=2, size=16, seed=0, batch_size=2) < 1e-8


def test_network_equivariance_single():
    net = randomize_buffers(build(SMALL, seed=1), seed=2).eval().astype(np.float32)
    assert network_equivariance(net, n_inputs=2, size=32, seed=3) < 1e-4


def test_plain_twin_is_not_equivariant():
    net = randomize_buffers(build(SMALL.plain_twin(), seed=1), seed=2).eval()
    assert network_equivariance(net, n_inputs=2, size=32, seed=3) > 0.01


def test_strided_variant_not_exactly_equivariant():
    net = build(SegNetConfig(base_width=2, downsample="strided_conv"), seed=1).eval()
    assert network_equivariance(net, n_inputs=1, size=16, seed=0) > 1e-6


def test_predict_equivariant():
    net = randomize_buffers(build(SMALL, seed=4), seed=4).eval()
    x = np.random.default_rng(9).standard_normal((2, 3, 32, 32))
    base = predict(net, x)
    for g in enumerate_group(P4M):
        assert np.array_equal(predict(net, transform_feature_z2(g, x)), transform_feature_z2(g, base))


# heads, loss, predict ----------------------------------------------------

def test_zero_head_weights_give_bias():
    net = build(SMALL, seed=0).eval()
    for s, b in enumerate([0.3, -1.0, 2.5]):
        net.params[f"head{s}.weight"].data[...] = 0.0
        net.params[f"head{s}.bias"].data[...] = b
    with no_grad():
        out = net(np.random.default_rng(0).standard_normal((1, 3, 16, 16)))
    for h, b in zip(out.heads, [0.3, -1.0, 2.5]):
        assert np.all(h.data == b)


def _outputs(rng, shape=(2, 1, 4, 4)):
    return [rng.standard_normal(shape) for _ in range(3)]


def test_loss_examples(rng):
    heads = _outputs(rng)
    target = (rng.uniform(size=heads[0].shape) < 0.5).astype(float)
    out = SegOutput(Tensor(heads[0]), (Tensor(heads[1]), Tensor(heads[2])))
    want = sum(w * net_bce(h, target) for w, h in zip((0.7, 0.2, 0.1), heads))
    assert abs(loss(out, target).item() - want) < 1e-12
    assert abs(loss(out, target, (1, 0, 0)).item() - net_bce(heads[0], target)) < 1e-12
    same = SegOutput(Tensor(heads[0]), (Tensor(heads[0]), Tensor(heads[0])))
    assert abs(loss(same, target).item() - net_bce(heads[0], target)) < 1e-12


def test_loss_shape_mismatch(rng):
    heads = [Tensor(h) for h in _outputs(rng)]
    out = SegOutput(heads[0], (heads[1], heads[2]))
    with pytest.raises(ValueError):
        loss(out, np.zeros((2, 1, 5, 5)))


def _with_head_biases(biases, fuse=True):
    cfg = SegNetConfig(base_width=2, fuse_heads=fuse)
    net = build(cfg, seed=0).eval()
    for s, b in enumerate(biases):
        net.params[f"head{s}.weight"].data[...] = 0.0
        net.params[f"head{s}.bias"].data[...] = b
    return net


def test_predict_examples():
    x = np.zeros((1, 3, 16, 16))
    mask = predict(_with_head_biases([20.0, 20.0, 20.0]), x)
    assert mask.dtype == np.uint8 and mask.shape == (1, 1, 16, 16) and mask.all()
    assert not predict(_with_head_biases([-20.0, -20.0, -20.0]), x).any()
    # combined probability exactly 0.5 is foreground
    assert predict(_with_head_biases([0.0, 0.0, 0.0]), x).all()


def test_predict_fuses_weighted_probabilities():
    x = np.zeros((1, 3, 16, 16))
    # main head says background but the weighted probability 0.7*p0 + 0.3*1 decides
    lo, hi = np.log(0.2 / 0.8), 30.0
    assert not predict(_with_head_biases([lo, hi, hi]), x).any()
    lo = np.log(0.4 / 0.6)
    assert predict(_with_head_biases([lo, hi, hi]), x).all()
    assert not predict(_with_head_biases([lo, hi, hi], fuse=False), x).any()


# parameter counts --------------------------------------------------------

def test_count_params_single_conv():
    params = OrderedDict(w=Tensor(np.zeros((4, 2, 1, 3, 3))), b=Tensor(np.zeros(4)))
    net = SegNet(SegNetConfig(group="p1"), params, OrderedDict())
    assert count_params(net) == 4 * 2 * 3 * 3 + 4 == 76
    g = OrderedDict(w=Tensor(np.zeros((4, 2, 8, 3, 3))))
    assert count_params(SegNet(SegNetConfig(), g, OrderedDict())) == 8 * 4 * 2 * 3 * 3


@pytest.mark.parametrize("group", [P4, P4M])
@pytest.mark.parametrize("width", [2, 4, 8])
def test_parameter_parity(group, width):
    cfg = SegNetConfig(group=group, base_width=width)
    ratio = count_params(build(cfg)) / count_params(build(cfg.plain_twin()))
    assert 0.9 <= ratio <= 1.1


def test_count_params_matches_arrays():
    net = build(SMALL)
    assert count_params(net) == sum(p.data.size for p in net.parameters())


# gradients ---------------------------------------------------------------

@pytest.mark.parametrize("downsample", ["pool", "strided_conv"])
def test_network_gradcheck(downsample):
    cfg = SegNetConfig(group=P4, base_width=4, downsample=downsample)
    net = build(cfg, seed=2).train()
    rng = np.random.default_rng(0)
    image = rng.uniform(0, 1, (2, 3, 16, 16))
    target = (rng.uniform(size=(2, 1, 16, 16)) < 0.4).astype(float)
    report = finite_diff_report(lambda: loss(net.forward(image), target, cfg.ds_weights), net.parameters(),
                                n_samples=1, rng=rng, kink_tol=1e-4)
    assert report.max_error < 1e-4
    assert report.skipped <= 0.1 * (report.checked + report.skipped)


def test_head_gradient_matches_manual():
    # the bias gradient of the main head is ds_weight times mean(sigmoid - target)
    net = build(SMALL, seed=0).train()
    rng = np.random.default_rng(1)
    image = rng.uniform(0, 1, (1, 3, 16, 16))
    target = (rng.uniform(size=(1, 1, 16, 16)) < 0.5).astype(float)
    net.zero_grad()
    out = net(image)
    loss(out, target).backward()
    p = 1.0 / (1.0 + np.exp(-out.main_logits.data))
    expect = 0.7 * float(np.mean(p - target))
    assert abs(net.params["head0.bias"].grad.item() - expect) < 1e-12
