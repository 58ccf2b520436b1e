"""Cell architectures, network assembly, initialisation and untrained forward passes.

Cells use the NAS-Bench-201 op set and textual format::

    |nor_conv_3x3~0|+|none~0|skip_connect~1|+|avg_pool_3x3~0|nor_conv_1x1~1|nor_conv_3x3~2|

Group ``t`` (1-based) lists the incoming edges of node ``t`` as ``op~source``.
The macro skeleton is the NAS-Bench-201 one: 3x3 stem conv + BN, three stages
of ``N`` cells at ``C, 2C, 4C`` channels separated by stride-2 residual blocks,
then BN, ReLU and global average pooling. Everything runs in numpy float64.
Batch normalisation always uses the statistics of the batch being processed
since an untrained network has no running averages.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from nasgeom import rng


class ArchParseError(ValueError):
    pass


class NonFiniteActivation(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite activation after layer {layer}")
        self.layer = layer


class OpKind(str, enum.Enum):
    NONE = "none"
    SKIP = "skip_connect"
    CONV_1X1 = "nor_conv_1x1"
    CONV_3X3 = "nor_conv_3x3"
    AVG_POOL = "avg_pool_3x3"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class CellSpec:
    """A V-node DAG; ``edges`` holds ``(target, source, op)`` ordered by target then source."""

    edges: tuple[tuple[int, int, OpKind], ...]
    num_nodes: int = 4

    def __post_init__(self):
        v = self.num_nodes
        if v < 2:
            raise ValueError("a cell needs at least 2 nodes")
        expected = [(t, s) for t in range(1, v) for s in range(t)]
        got = [(t, s) for t, s, _ in self.edges]
        if got != expected:
            raise ValueError(f"cell with {v} nodes needs edges {expected}, got {got}")
        for _, _, op in self.edges:
            if not isinstance(op, OpKind):
                raise TypeError(f"edge op must be OpKind, got {op!r}")

    def incoming(self, target: int) -> list[tuple[int, OpKind]]:
        return [(s, op) for t, s, op in self.edges if t == target]


def parse_arch_string(s: str, num_nodes: int = 4) -> CellSpec:
    """Parse the ``|op~src|+|op~src|op~src|+...`` cell format."""
    if not s or not s.strip():
        raise ArchParseError("empty architecture string")
    groups = s.strip().split("+")
    if len(groups) != num_nodes - 1:
        raise ArchParseError(f"expected {num_nodes - 1} node groups, got {len(groups)}")
    edges = []
    for t, group in enumerate(groups, start=1):
        if len(group) < 2 or group[0] != "|" or group[-1] != "|":
            raise ArchParseError(f"node group {group!r} must be wrapped in '|'")
        tokens = group[1:-1].split("|")
        if len(tokens) != t:
            raise ArchParseError(f"node {t} needs {t} incoming edges, got {len(tokens)}")
        for expected_src, token in enumerate(tokens):
            name, sep, src = token.partition("~")
            if not sep or not src.isdigit():
                raise ArchParseError(f"malformed edge token {token!r}")
            try:
                op = OpKind(name)
            except ValueError:
                raise ArchParseError(f"unknown op {name!r}") from None
            if int(src) != expected_src:
                raise ArchParseError(f"node {t}: edge {token!r} out of order, expected source {expected_src}")
            edges.append((t, expected_src, op))
    return CellSpec(tuple(edges), num_nodes)


def format_arch_string(cell: CellSpec) -> str:
    groups = []
    for t in range(1, cell.num_nodes):
        groups.append("|" + "|".join(f"{op.value}~{s}" for s, op in cell.incoming(t)) + "|")
    return "+".join(groups)


def random_arch(seed: int, num_nodes: int = 4) -> CellSpec:
    """Each edge gets one of the five ops uniformly at random."""
    ops = list(OpKind)
    g = rng.generator(seed, "random-arch")
    pairs = [(t, s) for t in range(1, num_nodes) for s in range(t)]
    choice = g.integers(0, len(ops), size=len(pairs))
    return CellSpec(tuple((t, s, ops[c]) for (t, s), c in zip(pairs, choice)), num_nodes)


@dataclass(frozen=True)
class NetworkConfig:
    cells_per_stage: int = 1
    initial_channels: int = 16
    input_shape: tuple[int, int, int] = (3, 32, 32)
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        if self.cells_per_stage < 1:
            raise ValueError("cells_per_stage must be >= 1")
        if self.initial_channels < 1:
            raise ValueError("initial_channels must be >= 1")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError("input_shape must be (channels, height, width)")
        if self.bn_epsilon <= 0:
            raise ValueError("bn_epsilon must be positive")

    @property
    def stage_channels(self) -> tuple[int, int, int]:
        c = self.initial_channels
        return (c, 2 * c, 4 * c)

    @property
    def feature_width(self) -> int:
        return self.stage_channels[-1]


@dataclass(frozen=True)
class InitSpec:
    gain: float = math.sqrt(2.0)
    seed: int = 0
    bias: bool = True

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("gain must be positive")


def kaiming_bound(fan_in: int, gain: float = math.sqrt(2.0)) -> float:
    """Half-width ``g * sqrt(3 / fan_in)`` of the uniform initialisation."""
    return gain * math.sqrt(3.0 / fan_in)


def sample_kaiming(generator: np.random.Generator, shape, fan_in: int, gain: float = math.sqrt(2.0)) -> np.ndarray:
    """Draw i.i.d. ``U(-b, b)`` values with ``b = kaiming_bound(fan_in, gain)``."""
    b = kaiming_bound(fan_in, gain)
    return generator.uniform(-b, b, size=shape)


@dataclass(frozen=True)
class ConvLayer:
    index: int
    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel * self.kernel

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)


@dataclass(frozen=True)
class Network:
    """Structure plus (after :func:`kaiming_init`) one weight/bias pair per conv.

    ``plan`` is the forward program: a tuple of steps referring to conv layers
    by index.
    """

    cell: CellSpec
    config: NetworkConfig
    convs: tuple[ConvLayer, ...]
    plan: tuple
    weights: tuple[np.ndarray, ...] | None = None
    biases: tuple[np.ndarray | None, ...] | None = field(default=None)

    @property
    def feature_width(self) -> int:
        return self.config.feature_width

    @property
    def initialized(self) -> bool:
        return self.weights is not None


def build_network(cell: CellSpec, cfg: NetworkConfig | None = None) -> Network:
    cfg = cfg or NetworkConfig()
    convs: list[ConvLayer] = []

    def conv(name, cin, cout, k, stride=1, padding=0):
        convs.append(ConvLayer(len(convs), name, cin, cout, k, stride, padding))
        return len(convs) - 1

    plan: list = []
    c_in, c0 = cfg.input_shape[0], cfg.stage_channels[0]
    plan.append(("conv", conv("stem", c_in, c0, 3, 1, 1)))
    plan.append(("bn",))
    prev = c0
    for stage, ch in enumerate(cfg.stage_channels):
        if stage > 0:
            a = conv(f"reduce{stage}.conv_a", prev, ch, 3, 2, 1)
            b = conv(f"reduce{stage}.conv_b", ch, ch, 3, 1, 1)
            down = conv(f"reduce{stage}.downsample", prev, ch, 1)
            plan.append(("reduce", a, b, down))
        for n in range(cfg.cells_per_stage):
            edge_ops = []
            for t, s, op in cell.edges:
                name = f"stage{stage}.cell{n}.edge{t}{s}"
                if op is OpKind.CONV_3X3:
                    edge_ops.append((t, s, op, conv(name, ch, ch, 3, 1, 1)))
                elif op is OpKind.CONV_1X1:
                    edge_ops.append((t, s, op, conv(name, ch, ch, 1)))
                else:
                    edge_ops.append((t, s, op, None))
            plan.append(("cell", tuple(edge_ops)))
        prev = ch
    plan.append(("bn",))
    plan.append(("relu",))
    plan.append(("gap",))
    return Network(cell, cfg, tuple(convs), tuple(plan))


def kaiming_init(net: Network, spec: InitSpec | None = None) -> Network:
    """Return a copy of ``net`` with every conv drawn from ``U(-b, b)``, ``b = g sqrt(3/fan_in)``.

    Each layer has its own stream keyed by ``(seed, layer index)``, so layers
    can be sampled in any order. BN layers are affine-free (scale 1, shift 0).
    """
    spec = spec or InitSpec()
    weights, biases = [], []
    for layer in net.convs:
        g = rng.generator(spec.seed, "layer", layer.index)
        weights.append(sample_kaiming(g, layer.weight_shape, layer.fan_in, spec.gain))
        biases.append(sample_kaiming(g, layer.out_channels, layer.fan_in, spec.gain) if spec.bias else None)
    return replace(net, weights=tuple(weights), biases=tuple(biases))


@dataclass(frozen=True)
class ImageBatch:
    data: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise ValueError(f"image batch must be 4-D (batch, C, H, W), got {data.shape}")
        if data.shape[0] < 2:
            raise ValueError("batch needs at least 2 samples for batch-statistics BN")
        if not np.all(np.isfinite(data)):
            raise ValueError("image batch contains non-finite values")
        object.__setattr__(self, "data", data)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (data.shape[0],):
                raise ValueError("labels must have one entry per sample")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature rows (samples x width) with optional aligned labels."""

    values: np.ndarray
    labels: np.ndarray | None = None

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


# -- numpy layers --------------------------------------------------------------


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, padding: int = 0) -> np.ndarray:
    k = w.shape[-1]
    if k == 1 and padding == 0:
        out = np.einsum("nchw,oc->nohw", x[:, :, ::stride, ::stride], w[:, :, 0, 0], optimize=True)
    else:
        if padding:
            x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out)


def batch_norm(x: np.ndarray, eps: float) -> np.ndarray:
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def avg_pool3x3(x: np.ndarray) -> np.ndarray:
    """3x3, stride 1, pad 1; padded cells are left out of the average."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    total = sliding_window_view(xp, (3, 3), axis=(2, 3)).sum(axis=(-1, -2))
    ones = np.pad(np.ones(x.shape[2:]), 1)
    count = sliding_window_view(ones, (3, 3)).sum(axis=(-1, -2))
    return total / count


def avg_pool2x2(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    x = x[:, :, : h - h % 2, : w - w % 2]
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _check(x: np.ndarray, layer: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteActivation(layer)
    return x


def forward_features(net: Network, batch: ImageBatch) -> FeatureMatrix:
    """Global-average-pooled features of the final stage, one row per sample."""
    if not net.initialized:
        raise ValueError("network weights are not initialised; call kaiming_init first")
    if not isinstance(batch, ImageBatch):
        batch = ImageBatch(batch)
    if batch.data.shape[1:] != tuple(net.config.input_shape):
        raise ValueError(f"input shape {batch.data.shape[1:]} != configured {net.config.input_shape}")
    eps = net.config.bn_epsilon
    W, B = net.weights, net.biases

    def run_conv(x, i):
        layer = net.convs[i]
        return _check(conv2d(x, W[i], B[i], layer.stride, layer.padding), layer.name)

    def relu_conv_bn(x, i):
        return batch_norm(run_conv(relu(x), i), eps)

    x = batch.data
    for step_no, step in enumerate(net.plan):
        kind = step[0]
        if kind == "conv":
            x = run_conv(x, step[1])
        elif kind == "bn":
            x = batch_norm(x, eps)
        elif kind == "relu":
            x = relu(x)
        elif kind == "gap":
            x = x.mean(axis=(2, 3))
        elif kind == "reduce":
            _, a, b, down = step
            residual = run_conv(avg_pool2x2(x), down)
            x = residual + relu_conv_bn(relu_conv_bn(x, a), b)
        elif kind == "cell":
            nodes = [x]
            for t in range(1, net.cell.num_nodes):
                acc = np.zeros_like(x)
                for tt, s, op, conv_idx in step[1]:
                    if tt != t or op is OpKind.NONE:
                        continue
                    src = nodes[s]
                    if op is OpKind.SKIP:
                        acc = acc + src
                    elif op is OpKind.AVG_POOL:
                        acc = acc + avg_pool3x3(src)
                    else:
                        acc = acc + relu_conv_bn(src, conv_idx)
                nodes.append(acc)
            x = nodes[-1]
        _check(x, f"step {step_no} ({kind})")
    return FeatureMatrix(np.ascontiguousarray(x), batch.labels)
