"""Small dense networks with hand-written reverse-mode gradients and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass
class DenseNet:
    """Affine layers with a hidden activation and an output ("head") activation.

    Weights are stored ``(out, in)`` so a layer computes ``x @ W.T + b``.
    ``params`` alternates ``[W0, b0, W1, b1, ...]``.
    """

    layer_dims: list[int]
    params: list[np.ndarray]
    activation: str = "relu"
    head: str = "linear"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS or self.head not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}/{self.head!r}")
        if len(self.params) != 2 * (len(self.layer_dims) - 1):
            raise ValueError("params must hold one weight and one bias per layer")
        for l, (din, dout) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            W, b = self.params[2 * l], self.params[2 * l + 1]
            if W.shape != (dout, din) or b.shape != (dout,):
                raise ValueError(f"layer {l}: expected W{(dout, din)} b{(dout,)}, got W{W.shape} b{b.shape}")

    @classmethod
    def init(cls, layer_dims, rng: np.random.Generator, activation="relu", head="linear") -> "DenseNet":
        params = []
        for din, dout in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (din + dout))
            params.append(rng.uniform(-limit, limit, size=(dout, din)))
            params.append(np.zeros(dout))
        return cls(list(layer_dims), params, activation, head)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def copy(self) -> "DenseNet":
        return DenseNet(list(self.layer_dims), [p.copy() for p in self.params], self.activation, self.head)


def _act(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    return x


def _act_grad(name, pre, post, g):
    if name == "relu":
        return g * (pre > 0)
    if name == "tanh":
        return g * (1.0 - post ** 2)
    return g


def forward(net: DenseNet, x):
    """Forward pass on a vector or a batch ``(B, in)``. Returns ``(output, cache)``."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[-1] != net.layer_dims[0]:
        raise ValueError(f"input dimension {h.shape[-1]} != network input {net.layer_dims[0]}")
    cache = [h]
    for l in range(net.n_layers):
        W, b = net.params[2 * l], net.params[2 * l + 1]
        pre = h @ W.T + b
        h = _act(net.head if l == net.n_layers - 1 else net.activation, pre)
        cache.extend([pre, h])
    out = h[0] if squeeze else h
    return out, {"acts": cache, "squeeze": squeeze}


def backward(net: DenseNet, cache, grad_out):
    """Reverse pass. Returns ``(param_grads, input_grad)``; batch gradients are summed."""
    if cache is None or "acts" not in cache:
        raise ValueError("backward needs the cache returned by forward")
    acts = cache["acts"]
    g = np.asarray(grad_out, dtype=float)
    if cache["squeeze"]:
        g = g[None, :]
    grads = [None] * len(net.params)
    for l in reversed(range(net.n_layers)):
        h_in, pre, post = acts[2 * l], acts[2 * l + 1], acts[2 * l + 2]
        name = net.head if l == net.n_layers - 1 else net.activation
        g = _act_grad(name, pre, post, g)
        grads[2 * l] = g.T @ h_in
        grads[2 * l + 1] = g.sum(axis=0)
        g = g @ net.params[2 * l]
    dx = g[0] if cache["squeeze"] else g
    return grads, dx


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params, grads):
    """In-place Adam update of ``params``; also returns them."""
    if len(params) != len(grads) or len(state.m) != len(params):
        raise ValueError("params, grads and optimizer moments must have equal length")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def central_difference(f, params, index, h=1e-5) -> float:
    """Central finite difference of scalar ``f()`` w.r.t. ``params[p][idx]``."""
    p, idx = index
    old = params[p][idx]
    params[p][idx] = old + h
    up = f()
    params[p][idx] = old - h
    down = f()
    params[p][idx] = old
    return (up - down) / (2 * h)


def relative_error(a, b, floor=1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def net_to_dict(net: DenseNet) -> dict:
    return {"layer_dims": net.layer_dims, "activation": net.activation, "head": net.head,
            "params": [p.ravel().tolist() for p in net.params]}


def net_from_dict(doc) -> DenseNet:
    dims = doc["layer_dims"]
    shapes = []
    for din, dout in zip(dims[:-1], dims[1:]):
        shapes += [(dout, din), (dout,)]
    params = [np.asarray(flat, dtype=float).reshape(s) for flat, s in zip(doc["params"], shapes)]
    return DenseNet(list(dims), params, doc["activation"], doc["head"])


def adam_to_dict(state: AdamState) -> dict:
    return {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
            "step": state.step, "m": [x.ravel().tolist() for x in state.m],
            "v": [x.ravel().tolist() for x in state.v]}


def adam_from_dict(doc, params) -> AdamState:
    m = [np.asarray(f, float).reshape(p.shape) for f, p in zip(doc["m"], params)]
    v = [np.asarray(f, float).reshape(p.shape) for f, p in zip(doc["v"], params)]
    return AdamState(doc["lr"], doc["beta1"], doc["beta2"], doc["eps"], doc["step"], m, v)
