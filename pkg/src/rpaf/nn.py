"""Minimal dense feed-forward networks with exact analytic gradients.

Everything runs in float64 on numpy so that gradients can be checked
against central finite differences at tight tolerances.  Hidden layers
use the rectifier; the output head is either the identity (value heads)
or a logistic squashed to the open interval (0, 1) (policy head).
"""
from __future__ import annotations

import struct

import numpy as np

RELU = "relu"
IDENTITY = "identity"
LOGISTIC = "logistic"

# Keep the logistic head strictly inside (0, 1) even when the
# pre-activation saturates in float64.
_HEAD_CLIP = 1e-9

CHECKPOINT_MAGIC = b"RPAF"
CHECKPOINT_VERSION = 1


class MalformedCheckpointError(Exception):
    """Checkpoint file is truncated or structurally invalid."""


class CheckpointVersionError(Exception):
    """Checkpoint magic or format version does not match."""


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class DenseNet:
    """Fully connected network: weights[i] has shape (dims[i], dims[i+1])."""

    def __init__(self, layer_dims, output_activation=IDENTITY, rng=None,
                 weights=None, biases=None):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or any(d <= 0 for d in layer_dims):
            raise ValueError(f"invalid layer dims {layer_dims}")
        if output_activation not in (IDENTITY, LOGISTIC):
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_dims = layer_dims
        self.output_activation = output_activation
        if weights is not None:
            self.weights = [np.array(w, dtype=np.float64) for w in weights]
            self.biases = [np.array(b, dtype=np.float64) for b in biases]
            self._check_shapes()
        else:
            if rng is None:
                rng = np.random.default_rng()
            self.weights = []
            self.biases = []
            for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
                scale = np.sqrt(2.0 / fan_in)
                self.weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
                self.biases.append(np.zeros(fan_out))

    def _check_shapes(self):
        dims = self.layer_dims
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i}: weight shape {w.shape} does not "
                                 f"match dims {dims}")

    @property
    def n_layers(self):
        return len(self.weights)

    def forward(self, x):
        """Run the net on a batch (n, d_in) or single vector (d_in,).

        Returns (output, cache); the cache holds per-layer inputs and
        pre-activations for :meth:`backward`.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.layer_dims[0]:
            raise ValueError(f"input dim {h.shape[1]} != {self.layer_dims[0]}")
        inputs = []
        pre_acts = []
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            pre_acts.append(z)
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output_activation == LOGISTIC:
                h = np.clip(sigmoid(z), _HEAD_CLIP, 1.0 - _HEAD_CLIP)
            else:
                h = z
        cache = {"inputs": inputs, "pre_acts": pre_acts, "single": single}
        return (h[0] if single else h), cache

    def backward(self, cache, grad_out):
        """Backpropagate d(loss)/d(output) through the cached forward pass.

        Returns (grads, grad_input) where grads is a list of (dW, db)
        pairs in layer order.
        """
        grad_out = np.asarray(grad_out, dtype=np.float64)
        delta = np.atleast_2d(grad_out)
        last = self.n_layers - 1
        if self.output_activation == LOGISTIC:
            s = sigmoid(cache["pre_acts"][last])
            delta = delta * s * (1.0 - s)
        grads = [None] * self.n_layers
        for i in range(last, -1, -1):
            a_in = cache["inputs"][i]
            grads[i] = (a_in.T @ delta, delta.sum(axis=0))
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * (cache["pre_acts"][i - 1] > 0.0)
        grad_input = delta[0] if cache["single"] else delta
        return grads, grad_input

    def copy(self):
        return DenseNet(self.layer_dims, self.output_activation,
                        weights=[w.copy() for w in self.weights],
                        biases=[b.copy() for b in self.biases])

    def param_arrays(self):
        """Flat list of parameter arrays, weights and biases interleaved."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def grads_as_arrays(grads):
    out = []
    for dw, db in grads:
        out.append(dw)
        out.append(db)
    return out


class AdamState:
    """First/second moment accumulators for one network."""

    def __init__(self, net, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in net.param_arrays()]
        self.v = [np.zeros_like(p) for p in net.param_arrays()]


def adam_step(net, grads, state):
    """One Adam update, in place. Raises if any parameter goes non-finite."""
    params = net.param_arrays()
    garrs = grads_as_arrays(grads)
    if len(params) != len(state.m):
        raise ValueError("Adam state does not match network")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, garrs, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if not np.all(np.isfinite(p)):
            raise ArithmeticError("non-finite parameter after Adam update")
    return net, state


def soft_update(target, online, tau):
    """target <- (1 - tau) * target + tau * online, elementwise."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    t_params = target.param_arrays()
    o_params = online.param_arrays()
    if len(t_params) != len(o_params):
        raise ValueError("network shapes differ")
    for tp, op in zip(t_params, o_params):
        if tp.shape != op.shape:
            raise ValueError("network shapes differ")
        tp *= 1.0 - tau
        tp += tau * op
    return target


def save_checkpoint(nets, path):
    """Write networks to `path`.

    Layout: magic "RPAF", uint32 version, uint32 net count, then per
    network a uint32 layer count, the layer dims as uint32, and the
    weights and biases in layer order as row-major little-endian
    float64.  Round-trips bit-exactly.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(nets)))
        for net in nets:
            dims = net.layer_dims
            fh.write(struct.pack("<I", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            for w, b in zip(net.weights, net.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path, output_activations=None):
    """Read networks written by :func:`save_checkpoint`.

    `output_activations` optionally assigns a head activation per
    network (defaults to identity).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise MalformedCheckpointError("file too short for header")
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointVersionError(f"bad magic {blob[:4]!r}")
    version, n_nets = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported version {version}")
    offset = 12
    nets = []
    for idx in range(n_nets):
        try:
            (n_dims,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = list(struct.unpack_from(f"<{n_dims}I", blob, offset))
            offset += 4 * n_dims
        except struct.error as exc:
            raise MalformedCheckpointError(f"truncated header in net {idx}") from exc
        if n_dims < 2:
            raise MalformedCheckpointError(f"net {idx} has {n_dims} dims")
        weights = []
        biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w_bytes = 8 * fan_in * fan_out
            b_bytes = 8 * fan_out
            if offset + w_bytes + b_bytes > len(blob):
                raise MalformedCheckpointError(f"truncated parameters in net {idx}")
            w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out,
                              offset=offset).reshape(fan_in, fan_out)
            offset += w_bytes
            b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
            offset += b_bytes
            weights.append(np.array(w, dtype=np.float64))
            biases.append(np.array(b, dtype=np.float64))
        act = IDENTITY
        if output_activations is not None:
            act = output_activations[idx]
        nets.append(DenseNet(dims, act, weights=weights, biases=biases))
    if offset != len(blob):
        raise MalformedCheckpointError(f"{len(blob) - offset} trailing bytes")
    return nets
