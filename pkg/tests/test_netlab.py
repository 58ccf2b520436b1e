import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nasgeom.netlab import (
    ArchParseError,
    CellSpec,
    ImageBatch,
    InitSpec,
    NetworkConfig,
    NonFiniteActivation,
    OpKind,
    avg_pool3x3,
    batch_norm,
    build_network,
    conv2d,
    format_arch_string,
    forward_features,
    kaiming_bound,
    kaiming_init,
    parse_arch_string,
    random_arch,
    sample_kaiming,
)
from nasgeom import rng
from nasgeom.synth import synth_images

MIXED = "|nor_conv_3x3~0|+|none~0|skip_connect~1|+|avg_pool_3x3~0|nor_conv_1x1~1|nor_conv_3x3~2|"
ALL_SKIP = "|skip_connect~0|+|skip_connect~0|skip_connect~1|+|skip_connect~0|skip_connect~1|skip_connect~2|"
ALL_NONE = "|none~0|+|none~0|none~1|+|none~0|none~1|none~2|"
SMALL = NetworkConfig(initial_channels=4, input_shape=(3, 16, 16))


def test_opkind_has_five_variants():
    assert {o.value for o in OpKind} == {
        "none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"}


def test_parse_mixed_example():
    cell = parse_arch_string(MIXED)
    assert cell.edges == (
        (1, 0, OpKind.CONV_3X3),
        (2, 0, OpKind.NONE),
        (2, 1, OpKind.SKIP),
        (3, 0, OpKind.AVG_POOL),
        (3, 1, OpKind.CONV_1X1),
        (3, 2, OpKind.CONV_3X3),
    )


def test_parse_all_skip():
    assert all(op is OpKind.SKIP for _, _, op in parse_arch_string(ALL_SKIP).edges)


@pytest.mark.parametrize("bad", [
    "|foo~0|+|none~0|none~1|+|none~0|none~1|none~2|",
    "",
    "|none~0|+|none~0|none~1|",
    "|none~0|+|none~0|+|none~0|none~1|none~2|",
    "none~0|+|none~0|none~1|+|none~0|none~1|none~2|",
    "|none~0|+|none~1|none~0|+|none~0|none~1|none~2|",
    "|none0|+|none~0|none~1|+|none~0|none~1|none~2|",
])
def test_parse_errors(bad):
    with pytest.raises(ArchParseError):
        parse_arch_string(bad)


def test_cellspec_rejects_bad_edges():
    with pytest.raises(ValueError):
        CellSpec(((1, 0, OpKind.NONE),), 4)
    with pytest.raises(TypeError):
        CellSpec(((1, 0, "none"),), 2)


def test_random_arch_deterministic():
    assert random_arch(0) == random_arch(0)


@given(st.integers(0, 2**63))
@settings(max_examples=200, deadline=None)
def test_random_arch_round_trip_and_edge_invariant(seed):
    cell = random_arch(seed)
    assert parse_arch_string(format_arch_string(cell)) == cell
    assert len(cell.edges) == 6 and all(s < t for t, s, _ in cell.edges)


def test_random_arch_coverage():
    distinct = {format_arch_string(random_arch(s)) for s in range(10_000)}
    assert len(distinct) > 3000


def test_config_widths_and_errors():
    assert NetworkConfig().feature_width == 64
    assert NetworkConfig(initial_channels=4).stage_channels == (4, 8, 16)
    with pytest.raises(ValueError):
        NetworkConfig(initial_channels=0)
    with pytest.raises(ValueError):
        NetworkConfig(cells_per_stage=0)


def test_kaiming_bound_examples():
    assert kaiming_bound(3, 1.0) == 1.0
    assert kaiming_bound(27) == pytest.approx(math.sqrt(6 / 27), abs=1e-15)
    assert kaiming_bound(27) == pytest.approx(0.4714045207910317, abs=1e-15)


@given(st.integers(1, 4096), st.floats(0.1, 3.0))
@settings(max_examples=50, deadline=None)
def test_kaiming_samples_inside_bound(fan_in, gain):
    b = kaiming_bound(fan_in, gain)
    w = sample_kaiming(rng.generator(fan_in), 5000, fan_in, gain)
    assert w.max() < b and w.min() > -b
    assert abs(w.mean()) < 4 * b / math.sqrt(3 * w.size)


def test_kaiming_init_deterministic_and_per_layer_bounds():
    net = build_network(parse_arch_string(MIXED), SMALL)
    a = kaiming_init(net, InitSpec(seed=7))
    b = kaiming_init(net, InitSpec(seed=7))
    c = kaiming_init(net, InitSpec(seed=8))
    for wa, wb, layer in zip(a.weights, b.weights, net.convs):
        assert np.array_equal(wa, wb)
        assert np.abs(wa).max() < kaiming_bound(layer.fan_in)
    assert not np.array_equal(a.weights[0], c.weights[0])
    assert a.convs[0].fan_in == 27


def test_no_bias_option():
    net = kaiming_init(build_network(parse_arch_string(MIXED), SMALL), InitSpec(bias=False))
    assert all(b is None for b in net.biases)


def _naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w)
    return out + (0 if b is None else b[None, :, None, None])


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0)])
def test_conv2d_matches_naive(k, stride, pad):
    g = np.random.default_rng(0)
    x = g.standard_normal((2, 3, 7, 7))
    w = g.standard_normal((4, 3, k, k))
    b = g.standard_normal(4)
    np.testing.assert_allclose(conv2d(x, w, b, stride, pad), _naive_conv(x, w, b, stride, pad), atol=1e-12)


def test_avg_pool_excludes_padding():
    out = avg_pool3x3(np.ones((1, 1, 4, 4)))
    np.testing.assert_array_equal(out, np.ones((1, 1, 4, 4)))


def test_batch_norm_zero_variance():
    out = batch_norm(np.full((4, 2, 3, 3), 5.0), 1e-5)
    np.testing.assert_array_equal(out, 0.0)


@pytest.fixture(scope="module")
def mixed_net():
    return kaiming_init(build_network(parse_arch_string(MIXED), SMALL), InitSpec(seed=1))


def test_small_network_output_shape():
    net = kaiming_init(build_network(parse_arch_string(MIXED), NetworkConfig(initial_channels=4)))
    f = forward_features(net, synth_images(8, (3, 32, 32), seed=0))
    assert f.shape == (8, 16)
    assert np.all(np.isfinite(f.values))


def test_all_none_cell_is_finite():
    net = kaiming_init(build_network(parse_arch_string(ALL_NONE), SMALL))
    f = forward_features(net, synth_images(6, SMALL.input_shape, seed=1))
    assert np.all(np.isfinite(f.values)) and f.shape == (6, 16)


def test_zero_batch_is_finite(mixed_net):
    f = forward_features(mixed_net, ImageBatch(np.zeros((4, *SMALL.input_shape))))
    assert np.all(np.isfinite(f.values))


def test_duplicate_batch_invariance(mixed_net):
    batch = synth_images(6, SMALL.input_shape, seed=2)
    once = forward_features(mixed_net, batch).values
    twice = forward_features(mixed_net, ImageBatch(np.concatenate([batch.data, batch.data]))).values
    np.testing.assert_allclose(twice[:6], once, atol=1e-10)
    np.testing.assert_allclose(twice[6:], once, atol=1e-10)


def test_permutation_equivariance(mixed_net):
    batch = synth_images(8, SMALL.input_shape, seed=3)
    perm = np.random.default_rng(0).permutation(8)
    a = forward_features(mixed_net, batch).values
    b = forward_features(mixed_net, ImageBatch(batch.data[perm], batch.labels[perm]))
    np.testing.assert_allclose(b.values, a[perm], atol=1e-10)
    np.testing.assert_array_equal(b.labels, batch.labels[perm])


def test_forward_deterministic(mixed_net):
    batch = synth_images(4, SMALL.input_shape, seed=4)
    assert np.array_equal(forward_features(mixed_net, batch).values, forward_features(mixed_net, batch).values)


def test_forward_errors(mixed_net):
    with pytest.raises(ValueError, match="shape"):
        forward_features(mixed_net, synth_images(4, (3, 8, 8), seed=0))
    with pytest.raises(ValueError):
        forward_features(build_network(parse_arch_string(MIXED), SMALL), synth_images(4, SMALL.input_shape))
    with pytest.raises(ValueError):
        ImageBatch(np.zeros((1, 3, 4, 4)))
    with pytest.raises(ValueError):
        ImageBatch(np.full((2, 3, 4, 4), np.nan))


def test_non_finite_activation_names_layer(mixed_net):
    bad = list(mixed_net.weights)
    bad[0] = bad[0] * 1e308
    from dataclasses import replace

    net = replace(mixed_net, weights=tuple(bad))
    with pytest.raises(NonFiniteActivation, match="stem"):
        forward_features(net, ImageBatch(np.full((2, *SMALL.input_shape), 1e10)))
