"""Fully connected regression networks with adaptive activations.

The last hidden layer is the regression layer: its outputs ``o_i`` feed a single
linear output neuron, ``y = sum_i h_i o_i + b``.  All trainable arrays live in
``Network.params`` under dotted names (``layer0.W``, ``layer1.act.w``,
``out.h`` ...); gradients use the same keys.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import Activation, ReLU, activation_from_dict, make_activation
from .errors import DataError, UsageError

FORMAT_TAG = "saaf-network/1"
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
SHARING_MODES = ("per-neuron", "layer-shared")


@dataclass
class LayerSpec:
    width: int
    activation: Activation
    sharing: str = "per-neuron"
    normalize: bool = False

    def __post_init__(self):
        if int(self.width) != self.width or self.width < 1:
            raise UsageError(f"layer width must be a positive integer, got {self.width!r}")
        if self.sharing not in SHARING_MODES:
            raise UsageError(f"sharing must be one of {SHARING_MODES}, got {self.sharing!r}")
        self.width = int(self.width)

    @property
    def units(self) -> int:
        """Number of independent activation parameter sets in the layer."""
        return self.width if self.sharing == "per-neuron" else 1

    def to_dict(self):
        return {"width": self.width, "activation": self.activation.to_dict(),
                "sharing": self.sharing, "normalize": self.normalize}

    @classmethod
    def from_dict(cls, d):
        return cls(d["width"], activation_from_dict(d["activation"]),
                   d.get("sharing", "per-neuron"), bool(d.get("normalize", False)))


def build_specs(widths, activation: str, segments: int = 22, sharing: str = "per-neuron",
                normalize: bool = False, lrelu_slope: float | None = None) -> list[LayerSpec]:
    """Layer specs for a named activation; an ``R-`` prefix puts it on the regression layer only."""
    regression_only = activation.startswith("R-")
    name = activation[2:] if regression_only else activation
    kw = {} if lrelu_slope is None else {"lrelu_slope": lrelu_slope}
    template = make_activation(name, segments, **kw)
    widths = list(widths)
    if not widths:
        raise UsageError("at least one hidden layer is required")
    specs = []
    for i, width in enumerate(widths):
        act = template if (not regression_only or i == len(widths) - 1) else ReLU()
        specs.append(LayerSpec(width, act, sharing, normalize))
    return specs


@dataclass
class Network:
    input_dim: int
    specs: list
    params: dict
    state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.specs)

    @property
    def regression_layer(self) -> int:
        return len(self.specs) - 1

    def act_params(self, layer: int) -> dict:
        prefix = f"layer{layer}.act."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def neuron_activation(self, layer: int, i: int) -> Activation:
        """The activation function applied by neuron ``i`` of ``layer``, with its current parameters."""
        spec = self.specs[layer]
        idx = i if spec.sharing == "per-neuron" else 0
        return spec.activation.with_params(**{k: v[idx] for k, v in self.act_params(layer).items()})

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def signature(self):
        return (self.input_dim,) + tuple(s.width for s in self.specs)

    def copy(self) -> "Network":
        return Network(self.input_dim, list(self.specs),
                       {k: v.copy() for k, v in self.params.items()},
                       {k: v.copy() for k, v in self.state.items()}, json.loads(json.dumps(self.meta)))

    def to_dict(self):
        return {
            "format": FORMAT_TAG,
            "input_dim": self.input_dim,
            "layers": [s.to_dict() for s in self.specs],
            "params": {k: v.tolist() for k, v in self.params.items()},
            "state": {k: v.tolist() for k, v in self.state.items()},
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d) -> "Network":
        if not isinstance(d, dict) or d.get("format") != FORMAT_TAG:
            raise DataError(f"not a network file (expected format tag {FORMAT_TAG!r})")
        try:
            specs = [LayerSpec.from_dict(s) for s in d["layers"]]
            net = init_network(specs, int(d["input_dim"]), seed=0)
            for group, target in (("params", net.params), ("state", net.state)):
                stored = d[group]
                if set(stored) != set(target):
                    raise DataError(f"{group} keys do not match layer specs: "
                                    f"missing {sorted(set(target) - set(stored))}, "
                                    f"unexpected {sorted(set(stored) - set(target))}")
                for k in target:
                    arr = np.asarray(stored[k], dtype=float)
                    if arr.shape != target[k].shape:
                        raise DataError(f"{group}.{k}: shape {arr.shape}, expected {target[k].shape}")
                    target[k] = arr
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed network file: {exc!r}") from None
        net.meta = d.get("meta", {})
        return net

    @classmethod
    def from_json(cls, text: str) -> "Network":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"network file is not valid JSON: {exc}") from None


def init_network(specs, input_dim: int, seed: int = 0) -> Network:
    """Uniform fan-in initialisation, ``U(-sqrt(3/fan_in), sqrt(3/fan_in))``, zero biases.

    Activation parameters start from each layer's template, tiled per unit.
    """
    if not specs:
        raise UsageError("at least one layer spec is required")
    if int(input_dim) != input_dim or input_dim < 1:
        raise UsageError(f"input_dim must be a positive integer, got {input_dim!r}")
    rng = np.random.default_rng(seed)
    params, state = {}, {}
    fan_in = int(input_dim)
    for l, spec in enumerate(specs):
        bound = np.sqrt(3.0 / fan_in)
        params[f"layer{l}.W"] = rng.uniform(-bound, bound, (spec.width, fan_in))
        params[f"layer{l}.b"] = np.zeros(spec.width)
        if spec.normalize:
            params[f"layer{l}.bn.gamma"] = np.ones(spec.width)
            params[f"layer{l}.bn.beta"] = np.zeros(spec.width)
            state[f"layer{l}.bn.mean"] = np.zeros(spec.width)
            state[f"layer{l}.bn.var"] = np.ones(spec.width)
        for name, p in spec.activation.params.items():
            p = np.asarray(p, dtype=float)
            params[f"layer{l}.act.{name}"] = np.tile(p[None], (spec.units,) + (1,) * p.ndim)
        fan_in = spec.width
    bound = np.sqrt(3.0 / fan_in)
    params["out.h"] = rng.uniform(-bound, bound, fan_in)
    params["out.b"] = np.zeros(1)
    return Network(int(input_dim), list(specs), params, state)


def batchnorm_forward(Z, gamma, beta, training: bool, mean=None, var=None, eps: float = BN_EPS):
    """Per-feature standardisation then ``gamma * z_hat + beta``.

    In training mode batch statistics are used (and returned in the cache for
    the running-average update); otherwise ``mean``/``var`` are used as given.
    """
    if training:
        if Z.shape[0] < 2:
            raise UsageError("batch normalisation in training mode needs a batch of at least 2")
        mean, var = Z.mean(0), Z.var(0)
    inv_std = 1.0 / np.sqrt(var + eps)
    z_hat = (Z - mean) * inv_std
    cache = {"z_hat": z_hat, "inv_std": inv_std, "gamma": gamma, "training": training,
             "mean": mean, "var": var}
    return gamma * z_hat + beta, cache


def batchnorm_backward(dout, cache):
    z_hat, inv_std, gamma = cache["z_hat"], cache["inv_std"], cache["gamma"]
    dgamma = (dout * z_hat).sum(0)
    dbeta = dout.sum(0)
    dz_hat = dout * gamma
    if not cache["training"]:
        return dz_hat * inv_std, dgamma, dbeta
    n = dout.shape[0]
    dZ = inv_std / n * (n * dz_hat - dz_hat.sum(0) - z_hat * (dz_hat * z_hat).sum(0))
    return dZ, dgamma, dbeta


@dataclass
class ForwardTrace:
    signature: tuple
    training: bool
    inputs: list = field(default_factory=list)       # layer inputs H_{l-1}
    pre_act: list = field(default_factory=list)      # activation inputs P_l
    post_act: list = field(default_factory=list)     # activation outputs O_l
    bn: list = field(default_factory=list)           # batchnorm cache or None

    @property
    def batch_size(self) -> int:
        return self.inputs[0].shape[0]

    @property
    def regression_outputs(self):
        return self.post_act[-1]


def forward(net: Network, X, training: bool = False):
    """Predictions for a batch ``X`` of shape ``(batch, input_dim)`` plus the trace."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != net.input_dim:
        raise UsageError(f"input has {X.shape[1]} features, network expects {net.input_dim}")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite values in network input")
    trace = ForwardTrace(net.signature(), training)
    H = X
    p = net.params
    for l, spec in enumerate(net.specs):
        trace.inputs.append(H)
        Z = H @ p[f"layer{l}.W"].T + p[f"layer{l}.b"]
        cache = None
        if spec.normalize:
            Z, cache = batchnorm_forward(Z, p[f"layer{l}.bn.gamma"], p[f"layer{l}.bn.beta"], training,
                                         net.state[f"layer{l}.bn.mean"], net.state[f"layer{l}.bn.var"])
        H = spec.activation.apply(net.act_params(l), Z)
        trace.bn.append(cache)
        trace.pre_act.append(Z)
        trace.post_act.append(H)
    y = H @ p["out.h"] + p["out.b"][0]
    return y, trace


def predict(net: Network, X):
    return forward(net, X, training=False)[0]


def backward(net: Network, trace: ForwardTrace, loss_grad) -> dict:
    """Parameter gradients given ``dLoss/dy`` for each sample of the traced batch.

    Per-sample contributions are summed, so passing a mean-loss gradient
    (e.g. ``2 (y - t) / batch``) yields batch-mean gradients.
    """
    dy = np.asarray(loss_grad, dtype=float).ravel()
    if trace.signature != net.signature() or dy.size != trace.batch_size:
        raise UsageError("trace does not belong to this network/batch")
    p = net.params
    grads = {}
    O = trace.regression_outputs
    grads["out.h"] = O.T @ dy
    grads["out.b"] = np.array([dy.sum()])
    dH = np.outer(dy, p["out.h"])
    for l in reversed(range(net.depth)):
        spec = net.specs[l]
        dZ, act_grads = spec.activation.backprop(net.act_params(l), trace.pre_act[l], dH)
        for k, g in act_grads.items():
            grads[f"layer{l}.act.{k}"] = g
        if spec.normalize:
            dZ, grads[f"layer{l}.bn.gamma"], grads[f"layer{l}.bn.beta"] = batchnorm_backward(dZ, trace.bn[l])
        grads[f"layer{l}.W"] = dZ.T @ trace.inputs[l]
        grads[f"layer{l}.b"] = dZ.sum(0)
        dH = dZ @ p[f"layer{l}.W"]
    return {k: grads[k] for k in p}


def update_running_stats(net: Network, trace: ForwardTrace, momentum: float = BN_MOMENTUM):
    """Fold a training-mode trace's batch statistics into the running averages."""
    if not trace.training:
        return
    for l, cache in enumerate(trace.bn):
        if cache is None:
            continue
        for stat in ("mean", "var"):
            key = f"layer{l}.bn.{stat}"
            net.state[key] = momentum * net.state[key] + (1 - momentum) * cache[stat]
