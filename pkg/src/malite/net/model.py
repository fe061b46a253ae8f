"""The MALITE-MN network: stem conv, eight inverted-residual blocks, head conv, FC."""

import os
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidConfig, NumericalError, ShapeError
from . import ops

KERNEL = 3
N_BLOCKS = 8

# (output channels, stride) per bottleneck; tuned so the cost model lands on
# 0.18M parameters / 303.54M Mult-Adds for a 256x256 gray input and 10 classes
DEFAULT_BLOCKS = ((8, 1), (16, 2), (16, 1), (24, 2), (24, 1), (40, 2), (40, 1), (56, 2))


@dataclass(frozen=True)
class BottleneckSpec:
    x: int
    x_out: int
    s: int
    t: int
    k: int = KERNEL

    def __post_init__(self):
        if self.s not in (1, 2):
            raise InvalidConfig(f"stride {self.s} not in {{1, 2}}")
        if self.t < 1 or self.x < 1 or self.x_out < 1:
            raise InvalidConfig(f"bad bottleneck spec {self}")
        if self.k != KERNEL:
            raise InvalidConfig("bottleneck kernel is fixed at 3")

    @property
    def hidden(self):
        return self.t * self.x

    @property
    def residual(self):
        return self.s == 1 and self.x == self.x_out


@dataclass(frozen=True)
class NetConfig:
    input_channels: int = 1
    stem_channels: int = 16
    stem_stride: int = 1
    blocks: tuple = DEFAULT_BLOCKS
    head_channels: int = 192
    n_classes: int = 10
    expansion: int = 6
    first_expansion: int = 1

    def __post_init__(self):
        blocks = tuple(tuple(int(v) for v in b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if self.input_channels not in (1, 3):
            raise InvalidConfig("input_channels must be 1 (gray) or 3 (RGB)")
        if len(blocks) != N_BLOCKS or any(len(b) != 2 for b in blocks):
            raise InvalidConfig(f"need exactly {N_BLOCKS} (channels, stride) blocks")
        if self.stem_stride not in (1, 2):
            raise InvalidConfig("stem_stride must be 1 or 2")
        for name in ("stem_channels", "head_channels", "n_classes", "expansion",
                     "first_expansion"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        self.bottlenecks()

    def bottlenecks(self):
        specs = []
        x = self.stem_channels
        for i, (x_out, s) in enumerate(self.blocks):
            t = self.first_expansion if i == 0 else self.expansion
            specs.append(BottleneckSpec(x, x_out, s, t))
            x = x_out
        return specs

    def to_dict(self):
        d = asdict(self)
        d["blocks"] = [list(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown NetConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "blocks" in d:
            d["blocks"] = tuple(tuple(b) for b in d["blocks"])
        return cls(**d)


def _debug():
    return os.environ.get("MALITE_DEBUG", "") not in ("", "0")


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values after {name}")


def he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass(eq=False)
class ConvBN:
    """Convolution (dense or depthwise) + batch norm + optional ReLU."""

    name: str
    weight: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    stride: int = 1
    depthwise: bool = False
    act: bool = True
    grads: dict = field(default_factory=dict, repr=False)
    _caches: tuple = field(default=None, repr=False)

    @classmethod
    def create(cls, name, rng, k, cin, cout, stride=1, depthwise=False, act=True,
               dtype=np.float32):
        if depthwise:
            w = he_uniform(rng, (k, k, cout), k * k, dtype)
        else:
            w = he_uniform(rng, (k, k, cin, cout), k * k * cin, dtype)
        return cls(name, w, np.ones(cout, dtype), np.zeros(cout, dtype),
                   np.zeros(cout, dtype), np.ones(cout, dtype), stride, depthwise, act)

    @property
    def out_channels(self):
        return self.gamma.size

    def tensors(self):
        return OrderedDict([
            ("weight", self.weight), ("gamma", self.gamma), ("beta", self.beta),
            ("running_mean", self.running_mean), ("running_var", self.running_var),
        ])

    def params(self):
        return OrderedDict([("weight", self.weight), ("gamma", self.gamma), ("beta", self.beta)])

    def forward(self, x, train=False):
        conv = ops.depthwise_conv if self.depthwise else ops.conv2d
        y, c_conv = conv(x, self.weight, self.stride)
        y, c_bn = ops.batch_norm(y, self.gamma, self.beta, self.running_mean,
                                 self.running_var, train)
        mask = None
        if self.act:
            y, mask = ops.relu(y)
        if _debug():
            _check_finite(self.name, y)
        self._caches = (c_conv, c_bn, mask)
        return y

    def backward(self, dy):
        c_conv, c_bn, mask = self._caches
        if mask is not None:
            dy = ops.relu_backward(dy, mask)
        dy, dgamma, dbeta = ops.batch_norm_backward(dy, c_bn)
        back = ops.depthwise_conv_backward if self.depthwise else ops.conv2d_backward
        dx, dw = back(dy, c_conv)
        self.grads = {"weight": dw, "gamma": dgamma, "beta": dbeta}
        return dx


class Bottleneck:
    """1x1 expand + ReLU, 3x3 depthwise (stride s) + ReLU, 1x1 linear projection.

    The input is added back when the stride is 1 and channel counts match.
    """

    def __init__(self, name, spec, expand, dw, project):
        self.name = name
        self.spec = spec
        self.expand = expand
        self.dw = dw
        self.project = project

    @classmethod
    def create(cls, name, rng, spec, dtype=np.float32):
        e = spec.hidden
        return cls(
            name, spec,
            ConvBN.create(f"{name}.expand", rng, 1, spec.x, e, dtype=dtype),
            ConvBN.create(f"{name}.dw", rng, spec.k, e, e, spec.s, depthwise=True, dtype=dtype),
            ConvBN.create(f"{name}.project", rng, 1, e, spec.x_out, act=False, dtype=dtype),
        )

    def parts(self):
        return (("expand", self.expand), ("dw", self.dw), ("project", self.project))

    def forward(self, x, train=False):
        if x.shape[-1] != self.spec.x:
            raise ShapeError(f"{self.name}: expected {self.spec.x} channels, got {x.shape[-1]}")
        y = self.project.forward(self.dw.forward(self.expand.forward(x, train), train), train)
        if self.spec.residual:
            y = y + x
        return y

    def backward(self, dy):
        dx = self.expand.backward(self.dw.backward(self.project.backward(dy)))
        if self.spec.residual:
            dx = dx + dy
        return dx


class Dense:
    def __init__(self, name, weight, bias):
        self.name = name
        self.weight = weight
        self.bias = bias
        self.grads = {}
        self._cache = None

    @classmethod
    def create(cls, name, rng, cin, cout, dtype=np.float32):
        return cls(name, he_uniform(rng, (cin, cout), cin, dtype), np.zeros(cout, dtype))

    def tensors(self):
        return OrderedDict([("weight", self.weight), ("bias", self.bias)])

    params = tensors

    def forward(self, x, train=False):
        y, self._cache = ops.dense(x, self.weight, self.bias)
        return y

    def backward(self, dy):
        dx, dw, db = ops.dense_backward(dy, self._cache)
        self.grads = {"weight": dw, "bias": db}
        return dx


class MaliteMN:
    """Forward/backward container for the network described by a :class:`NetConfig`."""

    def __init__(self, config, stem, blocks, head, fc):
        self.config = config
        self.stem = stem
        self.blocks = blocks
        self.head = head
        self.fc = fc
        self._pool_shape = None

    # -- structure -----------------------------------------------------------

    def leaves(self):
        """``(prefix, layer)`` pairs for every layer owning tensors, in order."""
        out = [("stem", self.stem)]
        for i, b in enumerate(self.blocks):
            out.extend((f"blocks.{i}.{part}", layer) for part, layer in b.parts())
        out.append(("head", self.head))
        out.append(("fc", self.fc))
        return out

    def named_tensors(self):
        """All parameters and BN running statistics, keyed ``layer.tensor``."""
        named = OrderedDict()
        for prefix, layer in self.leaves():
            for k, v in layer.tensors().items():
                named[f"{prefix}.{k}"] = v
        return named

    def named_parameters(self):
        named = OrderedDict()
        for prefix, layer in self.leaves():
            for k, v in layer.params().items():
                named[f"{prefix}.{k}"] = v
        return named

    def named_grads(self):
        named = OrderedDict()
        for prefix, layer in self.leaves():
            for k in layer.params():
                named[f"{prefix}.{k}"] = layer.grads[k]
        return named

    def n_parameters(self):
        return sum(v.size for v in self.named_parameters().values())

    def load_tensors(self, named):
        mine = self.named_tensors()
        if set(mine) != set(named):
            missing = sorted(set(mine) - set(named))
            extra = sorted(set(named) - set(mine))
            raise ShapeError(f"tensor mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for key, arr in mine.items():
            src = np.asarray(named[key])
            if src.shape != arr.shape:
                raise ShapeError(f"{key}: shape {src.shape} != {arr.shape}")
            arr[...] = src

    def astype(self, dtype):
        for _, layer in self.leaves():
            for k, v in layer.tensors().items():
                setattr(layer, k, v.astype(dtype))
        return self

    # -- compute -------------------------------------------------------------

    def forward(self, x, train=False):
        """Logits for a batch ``x`` of shape (n, h, w, input_channels)."""
        if x.ndim != 4 or x.shape[-1] != self.config.input_channels:
            raise ShapeError(
                f"expected (n, h, w, {self.config.input_channels}) input, got {x.shape}"
            )
        y = self.stem.forward(x, train)
        for b in self.blocks:
            y = b.forward(y, train)
        y = self.head.forward(y, train)
        y, self._pool_shape = ops.global_avg_pool(y)
        return self.fc.forward(y, train)

    def backward(self, dlogits):
        dy = self.fc.backward(dlogits)
        dy = ops.global_avg_pool_backward(dy, self._pool_shape)
        dy = self.head.backward(dy)
        for b in reversed(self.blocks):
            dy = b.backward(dy)
        return self.stem.backward(dy)

    def predict_proba(self, x):
        return ops.softmax(self.forward(x, train=False))


def build_malite_mn(config=None, seed=0, dtype=np.float32):
    """Fresh He-uniform initialised network (BN: gamma 1, beta 0)."""
    config = NetConfig() if config is None else config
    if not isinstance(config, NetConfig):
        raise InvalidConfig("config must be a NetConfig")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4D4E]))
    stem = ConvBN.create("stem", rng, KERNEL, config.input_channels, config.stem_channels,
                         config.stem_stride, dtype=dtype)
    blocks = [Bottleneck.create(f"blocks.{i}", rng, spec, dtype)
              for i, spec in enumerate(config.bottlenecks())]
    head = ConvBN.create("head", rng, KERNEL, config.blocks[-1][0], config.head_channels,
                         dtype=dtype)
    fc = Dense.create("fc", rng, config.head_channels, config.n_classes, dtype)
    return MaliteMN(config, stem, blocks, head, fc)
