"""Analytic parameter / Mult-Add / size accounting.

Conventions: one Mult-Add per scalar multiply; biases and batch norm add no
Mult-Adds, but BN's gamma and beta count as parameters (running statistics do
not). Convolutions inside the network carry no bias; the FC head does.
"""

import json
import math
from dataclasses import dataclass, field

from .featurizer import n_patches

# Published figures for comparison, in millions / millions / MB.
REFERENCE_MODELS = {
    "MALITE-HRF": {"params_m": 0.01, "mult_adds_m": 0.13, "size_mb": 0.03},
    "MALITE-MN": {"params_m": 0.18, "mult_adds_m": 303.54, "size_mb": 0.81},
    "3C2D": {"params_m": 67.61, "mult_adds_m": 727.85, "size_mb": 276.46},
    "DTMIC": {"params_m": 17.92, "mult_adds_m": 15353.06, "size_mb": 71.74},
    "SDN-LSVM": {"params_m": 23.27, "mult_adds_m": 18724.06, "size_mb": 82.96},
    "MalConv2": {"params_m": 1.07, "mult_adds_m": 68719.51, "size_mb": 4.30},
}

MB = 1_000_000


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    mult_adds: int


@dataclass
class CostReport:
    layers: list = field(default_factory=list)
    size_bytes: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def params(self):
        return sum(layer.params for layer in self.layers)

    @property
    def mult_adds(self):
        return sum(layer.mult_adds for layer in self.layers)

    def add(self, name, params, mult_adds):
        self.layers.append(LayerCost(name, int(params), int(mult_adds)))

    def to_dict(self):
        return {
            "params": self.params,
            "mult_adds": self.mult_adds,
            "size_bytes": self.size_bytes,
            "params_m": round(self.params / 1e6, 4),
            "mult_adds_m": round(self.mult_adds / 1e6, 4),
            "size_mb": round(self.size_bytes / MB, 4),
            "notes": self.notes,
            "layers": [
                {"name": l.name, "params": l.params, "mult_adds": l.mult_adds}
                for l in self.layers
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        width = max([len(l.name) for l in self.layers] + [5])
        lines = [f"{'layer':<{width}}  {'params':>10}  {'mult_adds':>14}"]
        for l in self.layers:
            lines.append(f"{l.name:<{width}}  {l.params:>10,}  {l.mult_adds:>14,}")
        lines.append(f"{'total':<{width}}  {self.params:>10,}  {self.mult_adds:>14,}")
        lines.append(f"size: {self.size_bytes:,} bytes ({self.size_bytes / MB:.2f} MB)")
        return "\n".join(lines)


# -- per-layer formulas ------------------------------------------------------


def conv_cost(h_out, w_out, cin, cout, k, bias=False):
    params = k * k * cin * cout + (cout if bias else 0)
    return params, h_out * w_out * k * k * cin * cout


def depthwise_cost(h_out, w_out, channels, k):
    return k * k * channels, h_out * w_out * k * k * channels


def bn_params(channels):
    return 2 * channels


def dense_cost(cin, cout, bias=True):
    return cin * cout + (cout if bias else 0), cin * cout


def _out(size, stride):
    return math.ceil(size / stride)


def bottleneck_layers(h, w, spec, bn=True):
    """(name, params, mult_adds) for the expand / depthwise / project stages."""
    e = spec.hidden
    ho, wo = _out(h, spec.s), _out(w, spec.s)
    extra = bn_params if bn else (lambda c: 0)
    p, m = conv_cost(h, w, spec.x, e, 1)
    stages = [("expand", p + extra(e), m)]
    p, m = depthwise_cost(ho, wo, e, spec.k)
    stages.append(("dw", p + extra(e), m))
    p, m = conv_cost(ho, wo, e, spec.x_out, 1)
    stages.append(("project", p + extra(spec.x_out), m))
    return stages


def bottleneck_cost(h, w, spec, bn=True):
    stages = bottleneck_layers(h, w, spec, bn)
    return sum(s[1] for s in stages), sum(s[2] for s in stages)


def hist_cost(n_patches, ph, pw):
    return n_patches * ph * pw


def forest_cost(e, ht):
    """Upper bound on comparisons: ``e`` trees of height ``ht``."""
    return e * ht


def separable_ratio(channels, k=3):
    """Dense k x k conv cost over depthwise + pointwise cost, cin = cout = C."""
    return (k * k * channels) / (k * k + channels)


# -- whole models ------------------------------------------------------------


def net_report(config, side=256):
    """Layer-by-layer cost of a network built from ``config`` on a square input."""
    from .net.model import KERNEL

    rep = CostReport()
    h = w = side
    ho, wo = _out(h, config.stem_stride), _out(w, config.stem_stride)
    p, m = conv_cost(ho, wo, config.input_channels, config.stem_channels, KERNEL)
    rep.add("stem", p + bn_params(config.stem_channels), m)
    h, w = ho, wo
    for i, spec in enumerate(config.bottlenecks()):
        for stage, p, m in bottleneck_layers(h, w, spec):
            rep.add(f"blocks.{i}.{stage}", p, m)
        h, w = _out(h, spec.s), _out(w, spec.s)
    p, m = conv_cost(h, w, config.blocks[-1][0], config.head_channels, KERNEL)
    rep.add("head", p + bn_params(config.head_channels), m)
    p, m = dense_cost(config.head_channels, config.n_classes)
    rep.add("fc", p, m)
    rep.notes = {"input_side": side, "final_map": [h, w]}
    return rep


def hrf_report(model):
    """Histogram pass + forest bound for a fitted :class:`MaliteHRFClassifier`."""
    feat = model.featurizer_
    spec = feat.patch_spec
    n = n_patches(feat.image_shape_, spec)
    channels = 3 if len(feat.image_shape_) == 3 else 1
    stats = model.forest_.tree_stats()
    rep = CostReport()
    rep.add("histogram", 0, hist_cost(n, spec.ph, spec.pw * channels))
    rep.add("forest", stats["total_nodes"],
            forest_cost(stats["n_estimators"], stats["max_depth_observed"]))
    rep.notes = {
        "n_patches": n,
        "forest_params_are_nodes": True,
        "forest_bound_configured_depth": forest_cost(stats["n_estimators"],
                                                     model.forest_.max_depth),
        **stats,
    }
    return rep


def report(model, side=256):
    """Cost report for a fitted HRF/MN estimator, a raw network, or a NetConfig.

    ``size_bytes`` is the length of the model container the object would be
    saved as.
    """
    from .harness.container import save_model
    from .hrf import MaliteHRFClassifier
    from .net import MaliteMN, MaliteMNClassifier, NetConfig, build_malite_mn

    if isinstance(model, MaliteHRFClassifier):
        rep = hrf_report(model)
        rep.size_bytes = len(save_model(model))
        return rep
    if isinstance(model, NetConfig):
        est = MaliteMNClassifier.from_model(build_malite_mn(model),
                                            list(range(model.n_classes)))
    elif isinstance(model, MaliteMN):
        est = MaliteMNClassifier.from_model(model, list(range(model.config.n_classes)))
    elif isinstance(model, MaliteMNClassifier):
        est = model
    else:
        raise TypeError(f"no cost model for {type(model).__name__}")
    rep = net_report(est.model_.config, side)
    rep.size_bytes = len(save_model(est))
    return rep
