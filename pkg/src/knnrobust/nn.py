"""Small dense networks with hand-written backprop and Adam.

Single-sample forward/backward over float64 parameters; no hidden state
besides the optimizer accumulators.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

ACTIVATIONS = ("relu", "tanh", "linear")
MLP_MAGIC = b"MLP1"


@dataclass
class Layer:
    w: np.ndarray  # (out, in) float64
    b: np.ndarray  # (out,) float64
    act: str

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.act not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.act!r}")
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ValidationError(f"bad layer shapes w={self.w.shape}, b={self.b.shape}")
        if not (np.isfinite(self.w).all() and np.isfinite(self.b).all()):
            raise ValidationError("layer parameters must be finite")


@dataclass
class Mlp:
    layers: list[Layer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValidationError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.w.shape[1] != prev.w.shape[0]:
                raise ValidationError(
                    f"layer dims do not chain: {prev.w.shape[0]} -> {nxt.w.shape[1]}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[0]


def init_mlp(dims: list[int], activations: list[str], seed: int) -> Mlp:
    """Glorot-uniform weights (+/- sqrt(6/(fan_in+fan_out))), zero biases."""
    if len(activations) != len(dims) - 1:
        raise ValidationError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims, dims[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(w=w, b=np.zeros(fan_out), act=act))
    return Mlp(layers)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return (z > 0.0).astype(np.float64)
    if act == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != net.in_dim:
        raise ValidationError(f"input dim {x.shape[0]} != network in_dim {net.in_dim}")
    for layer in net.layers:
        x = _activate(layer.w @ x + layer.b, layer.act)
    return x


def backward(net: Mlp, x: np.ndarray, upstream: np.ndarray) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Gradients of ``upstream . output`` w.r.t. every parameter and the input.

    Returns (per-layer (dW, db) in layer order, d/dx).  relu uses the zero
    subgradient at the kink.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    upstream = np.asarray(upstream, dtype=np.float64).ravel()
    if upstream.shape[0] != net.out_dim:
        raise ValidationError(f"upstream dim {upstream.shape[0]} != out_dim {net.out_dim}")
    inputs = []
    pre_acts = []
    h = x
    for layer in net.layers:
        inputs.append(h)
        z = layer.w @ h + layer.b
        pre_acts.append(z)
        h = _activate(z, layer.act)

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)  # type: ignore[list-item]
    g = upstream
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        gz = g * _activate_grad(pre_acts[i], layer.act)
        grads[i] = (np.outer(gz, inputs[i]), gz)
        g = layer.w.T @ gz
    return grads, g


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    v: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def init_adam(net: Mlp, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    zeros = lambda l: (np.zeros_like(l.w), np.zeros_like(l.b))
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0,
                     m=[zeros(l) for l in net.layers], v=[zeros(l) for l in net.layers])


def adam_step(net: Mlp, grads: list[tuple[np.ndarray, np.ndarray]], state: AdamState) -> None:
    """Bias-corrected Adam update, in place on the network and state."""
    if len(grads) != len(net.layers):
        raise ValidationError("gradient count does not match layer count")
    for dw, db in grads:
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise ValidationError("non-finite gradient (training diverged)")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for layer, (dw, db), (mw, mb), (vw, vb) in zip(net.layers, grads, state.m, state.v):
        for param, g, m, v in ((layer.w, dw, mw, vw), (layer.b, db, mb, vb)):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * (g * g)
            param -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def save_mlp(net: Mlp, path: str | Path) -> None:
    with open(path, "wb") as f:
        f.write(MLP_MAGIC)
        f.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            out_dim, in_dim = layer.w.shape
            f.write(struct.pack("<IIB", out_dim, in_dim, ACTIVATIONS.index(layer.act)))
            f.write(layer.w.astype("<f8").tobytes())
            f.write(layer.b.astype("<f8").tobytes())


def load_mlp(path: str | Path) -> Mlp:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != MLP_MAGIC:
        raise FormatError(f"{path}: malformed header (expected magic {MLP_MAGIC!r})")
    (n_layers,) = struct.unpack("<I", raw[4:8])
    offset = 8
    layers = []
    for i in range(n_layers):
        if offset + 9 > len(raw):
            raise FormatError(f"{path}: truncated at layer {i}")
        out_dim, in_dim, act_tag = struct.unpack("<IIB", raw[offset:offset + 9])
        offset += 9
        if act_tag >= len(ACTIVATIONS):
            raise FormatError(f"{path}: unknown activation tag {act_tag} in layer {i}")
        need = 8 * (out_dim * in_dim + out_dim)
        if offset + need > len(raw):
            raise FormatError(f"{path}: truncated parameters in layer {i}")
        w = np.frombuffer(raw, dtype="<f8", offset=offset, count=out_dim * in_dim).reshape(out_dim, in_dim)
        offset += 8 * out_dim * in_dim
        b = np.frombuffer(raw, dtype="<f8", offset=offset, count=out_dim)
        offset += 8 * out_dim
        layers.append(Layer(w=w.copy(), b=b.copy(), act=ACTIVATIONS[act_tag]))
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return Mlp(layers)
