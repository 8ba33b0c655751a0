"""Minimal dense networks with analytic backprop and Adam.

Two-hidden-layer perceptrons are all the agents need, so this stays a thin
list-of-arrays affair: weights[l] has shape (fan_in, fan_out), activations
are applied per layer, and gradients come from hand-written reverse mode.
Double precision throughout; the gradient checks and the quadrature oracles
in the test suite rely on it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
SCALED_TANH = "scaled_tanh"   # 40 * (tanh(z) + 1): output in (0, 80)
LINEAR = "linear"
_ACTS = (RELU, SCALED_TANH, LINEAR)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MLPParams:
    """Layer parameters plus Adam moment buffers and step counter.

    `_ws` holds reusable forward/backward buffers keyed by batch size;
    repeated gemm-sized allocations otherwise dominate the update cost.
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)
    step: int = 0
    _ws: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def widths(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MLPParams":
        return MLPParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activations=list(self.activations),
            m_w=[m.copy() for m in self.m_w],
            v_w=[v.copy() for v in self.v_w],
            m_b=[m.copy() for m in self.m_b],
            v_b=[v.copy() for v in self.v_b],
            step=self.step,
        )


def init_params(widths, activations, rng: np.random.Generator,
                output_bias: float = 0.0) -> MLPParams:
    """Uniform fan-in init for hidden layers, near-zero output layer.

    Hidden weights ~ U[-1/sqrt(f), 1/sqrt(f)] with f the layer fan-in and
    zero biases; the output layer gets U[-1e-4, 1e-4] weights and a constant
    `output_bias` applied before its activation.
    """
    if len(activations) != len(widths) - 1:
        raise ValueError("need one activation per layer")
    for act in activations:
        if act not in _ACTS:
            raise ValueError(f"unknown activation {act!r}")
    net = MLPParams(activations=list(activations))
    n_layers = len(widths) - 1
    for layer in range(n_layers):
        fan_in, fan_out = widths[layer], widths[layer + 1]
        if layer == n_layers - 1:
            w = rng.uniform(-1e-4, 1e-4, size=(fan_in, fan_out))
            b = np.full(fan_out, float(output_bias))
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
        net.weights.append(w)
        net.biases.append(b)
        net.m_w.append(np.zeros_like(w))
        net.v_w.append(np.zeros_like(w))
        net.m_b.append(np.zeros_like(b))
        net.v_b.append(np.zeros_like(b))
    return net


def _forward_ws(net: MLPParams, rows: int) -> dict:
    """Per-batch-size output/aux buffers for forward passes."""
    key = ("f", rows)
    ws = net._ws.get(key)
    if ws is None:
        outs, aux = [], []
        for w, act in zip(net.weights, net.activations):
            outs.append(np.empty((rows, w.shape[1])))
            if act == RELU:
                aux.append(np.empty((rows, w.shape[1]), dtype=bool))
            elif act == SCALED_TANH:
                aux.append(np.empty((rows, w.shape[1])))
            else:
                aux.append(None)
        ws = {"out": outs, "aux": aux}
        net._ws[key] = ws
    return ws


def _backward_ws(net: MLPParams, rows: int) -> dict:
    key = ("b", rows)
    ws = net._ws.get(key)
    if ws is None:
        ws = {
            "g": [np.empty((rows, w.shape[0])) for w in net.weights],
            "dw": [np.empty(w.shape) for w in net.weights],
            "db": [np.empty(b.shape) for b in net.biases],
        }
        net._ws[key] = ws
    return ws


def forward(net: MLPParams, x: np.ndarray):
    """Affine + activation per layer; returns (output, cache).

    Outputs and caches live in per-net reusable buffers: they stay valid
    until the next forward of the same net at the same batch size, and
    callers must copy() anything they keep.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.weights[0].shape[0]:
        raise ValueError(
            f"input width {a.shape[1]} != layer-0 fan-in "
            f"{net.weights[0].shape[0]}")
    ws = _forward_ws(net, a.shape[0])
    inputs = []
    for layer, (w, b, act) in enumerate(zip(net.weights, net.biases,
                                            net.activations)):
        inputs.append(a)
        z = ws["out"][layer]
        np.matmul(a, w, out=z)
        z += b
        if act == RELU:
            mask = ws["aux"][layer]
            np.greater(z, 0.0, out=mask)
            np.maximum(z, 0.0, out=z)
        elif act == SCALED_TANH:
            t = ws["aux"][layer]
            np.tanh(z, out=t)
            np.add(t, 1.0, out=z)
            z *= 40.0
        a = z
    cache = (inputs, ws["aux"], single)
    return (a[0] if single else a), cache


def backward(net: MLPParams, cache, output_grad: np.ndarray):
    """Exact reverse-mode gradients.

    output_grad holds dL/dy with the same shape as the forward output.
    Returns ((dW list, db list), input_grad); gradient arrays live in
    reusable buffers with the same lifetime rule as forward outputs.
    """
    inputs, aux, single = cache
    if len(inputs) != len(net.weights):
        raise ValueError("cache does not match network")
    g = np.asarray(output_grad, dtype=float)
    if single:
        g = g[None, :]
    rows = inputs[-1].shape[0]
    if g.shape != (rows, net.weights[-1].shape[1]):
        raise ValueError("output_grad shape does not match forward pass")
    ws = _backward_ws(net, rows)
    d_w, d_b = ws["dw"], ws["db"]
    top = len(net.weights) - 1
    for layer in range(top, -1, -1):
        act = net.activations[layer]
        if act == RELU:
            if layer == top:
                g = g * aux[layer]
            else:
                g *= aux[layer]
        elif act == SCALED_TANH:
            t = aux[layer]
            deriv = 40.0 * (1.0 - t * t)
            if layer == top:
                g = g * deriv
            else:
                g *= deriv
        elif layer == top:
            g = g.copy()
        np.matmul(inputs[layer].T, g, out=d_w[layer])
        np.sum(g, axis=0, out=d_b[layer])
        g_next = ws["g"][layer]
        np.matmul(g, net.weights[layer].T, out=g_next)
        g = g_next
    return (d_w, d_b), (g[0] if single else g)


def adam_step(net: MLPParams, grads, lr: float) -> None:
    """Bias-corrected Adam update, in place."""
    d_w, d_b = grads
    net.step += 1
    t = net.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for layer in range(len(net.weights)):
        for p, g, m, v in ((net.weights[layer], d_w[layer],
                            net.m_w[layer], net.v_w[layer]),
                           (net.biases[layer], d_b[layer],
                            net.m_b[layer], net.v_b[layer])):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def soft_update(target: MLPParams, online: MLPParams, omega: float) -> None:
    """target <- omega * online + (1 - omega) * target, elementwise."""
    if target.widths != online.widths:
        raise ValueError("shape mismatch between target and online nets")
    for layer in range(len(target.weights)):
        target.weights[layer] *= 1.0 - omega
        target.weights[layer] += omega * online.weights[layer]
        target.biases[layer] *= 1.0 - omega
        target.biases[layer] += omega * online.biases[layer]


def assert_finite(net: MLPParams, label: str = "net") -> None:
    """Guard against NaN/Inf creep during training."""
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise FloatingPointError(f"{label} layer {layer} has NaN/Inf")


def save_params(net: MLPParams, path) -> None:
    """Policy persistence as flat CSV rows (layer, param, row, col, value)."""
    with open(path, "w", newline="") as fh:
        fh.write("# greenstream mlp v1; widths="
                 + ",".join(str(w) for w in net.widths)
                 + "; activations=" + ",".join(net.activations) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["layer", "param", "row", "col", "value"])
        for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    writer.writerow([layer, "w", i, j, repr(float(w[i, j]))])
            for j in range(b.shape[0]):
                writer.writerow([layer, "b", 0, j, repr(float(b[j]))])


def load_params(path) -> MLPParams:
    """Inverse of save_params; moment buffers come back zeroed."""
    with open(path, newline="") as fh:
        meta = fh.readline().strip()
        if not meta.startswith("# greenstream mlp v1"):
            raise ValueError(f"{path} is not a greenstream mlp file")
        widths_part = meta.split("widths=")[1].split(";")[0]
        acts_part = meta.split("activations=")[1]
        widths = [int(x) for x in widths_part.split(",")]
        activations = acts_part.split(",")
        net = init_params(widths, activations, np.random.default_rng(0))
        reader = csv.reader(fh)
        next(reader)  # column header
        for layer_s, param, row_s, col_s, value in reader:
            layer, i, j = int(layer_s), int(row_s), int(col_s)
            if param == "w":
                net.weights[layer][i, j] = float(value)
            else:
                net.biases[layer][j] = float(value)
    for layer in range(len(net.weights)):
        net.m_w[layer][:] = 0.0
        net.v_w[layer][:] = 0.0
        net.m_b[layer][:] = 0.0
        net.v_b[layer][:] = 0.0
    net.step = 0
    return net
