"""Dense feed-forward networks with explicit reverse-mode gradients.

Everything here is float64 and deterministic: the same spec, weights and
inputs always produce bitwise-identical outputs.  Networks are ReLU in the
hidden layers and identity at the output; downstream code composes a sampled
featurizer with a deterministic classifier head.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a dense net: layer widths input -> ... -> output."""

    layer_dims: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("need at least an input and an output dimension")
        if any(int(d) < 1 for d in self.layer_dims):
            raise ValueError(f"layer dims must be positive, got {self.layer_dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(self.n_layers))

    def to_json(self) -> dict:
        return {"dims": list(self.layer_dims), "activation": self.activation}

    @staticmethod
    def from_json(obj: dict) -> "NetworkSpec":
        return NetworkSpec(tuple(obj["dims"]), obj.get("activation", "relu"))


@dataclass
class WeightSet:
    """Concrete weights for a NetworkSpec: per-layer (W, b) pairs.

    W has shape (d_in, d_out), b has shape (d_out,).  The flat order is
    W0.ravel(), b0, W1.ravel(), b1, ... which every consumer (sampling,
    aggregation, checkpoints) relies on.
    """

    spec: NetworkSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        dims = self.spec.layer_dims
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise ValueError("layer count does not match spec")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(
                    f"layer {i}: got W{w.shape}, b{b.shape}, "
                    f"expected W{(dims[i], dims[i + 1])}, b{(dims[i + 1],)}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite parameter values")

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @staticmethod
    def from_flat(spec: NetworkSpec, flat: np.ndarray) -> "WeightSet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.param_count,):
            raise ValueError(f"expected {spec.param_count} values, got shape {flat.shape}")
        dims = spec.layer_dims
        weights, biases, k = [], [], 0
        for i in range(spec.n_layers):
            n_w = dims[i] * dims[i + 1]
            weights.append(flat[k : k + n_w].reshape(dims[i], dims[i + 1]).copy())
            k += n_w
            biases.append(flat[k : k + dims[i + 1]].copy())
            k += dims[i + 1]
        return WeightSet(spec, weights, biases)

    def copy(self) -> "WeightSet":
        return WeightSet(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> WeightSet:
    """Glorot-uniform weights, zero biases, drawn in a fixed layer order."""
    weights, biases = [], []
    dims = spec.layer_dims
    for i in range(spec.n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return WeightSet(spec, weights, biases)


@dataclass
class ForwardTape:
    """Intermediates recorded by forward() so backward() can replay them."""

    spec: NetworkSpec
    inputs: list[np.ndarray]      # input to each layer, length n_layers
    preacts: list[np.ndarray]     # pre-activation of each layer


def forward(spec: NetworkSpec, ws: WeightSet, x: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    """Run the net on a batch; returns (outputs, tape).

    x has shape (n, d_in); outputs have shape (n, d_out).  Hidden layers are
    ReLU, the last layer is linear.
    """
    x = np.asarray(x, dtype=np.float64)
    if ws.spec != spec:
        raise ValueError("weights were built for a different spec")
    if x.ndim != 2 or x.shape[1] != spec.layer_dims[0]:
        raise ValueError(f"expected input shape (n, {spec.layer_dims[0]}), got {x.shape}")
    inputs, preacts = [], []
    h = x
    for i in range(spec.n_layers):
        inputs.append(h)
        z = h @ ws.weights[i] + ws.biases[i]
        preacts.append(z)
        h = np.maximum(z, 0.0) if i < spec.n_layers - 1 else z
    return h, ForwardTape(spec, inputs, preacts)


def backward(
    spec: NetworkSpec, ws: WeightSet, tape: ForwardTape, d_out: np.ndarray
) -> tuple[WeightSet, np.ndarray]:
    """Backpropagate d_out through the recorded tape.

    Returns (gradient WeightSet, gradient w.r.t. the batch input).  The ReLU
    subgradient at exactly zero is taken as zero.
    """
    if tape.spec != spec or ws.spec != spec:
        raise ValueError("tape, weights and spec must all match")
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != tape.preacts[-1].shape:
        raise ValueError(
            f"upstream gradient shape {d_out.shape} does not match outputs "
            f"{tape.preacts[-1].shape}; stale tape?"
        )
    grad_w = [None] * spec.n_layers
    grad_b = [None] * spec.n_layers
    dz = d_out
    for i in range(spec.n_layers - 1, -1, -1):
        if i < spec.n_layers - 1:
            dz = dz * (tape.preacts[i] > 0.0)
        grad_w[i] = tape.inputs[i].T @ dz
        grad_b[i] = dz.sum(axis=0)
        dz = dz @ ws.weights[i].T
    return WeightSet(spec, grad_w, grad_b), dz


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch plus the gradient w.r.t. logits.

    Uses the log-sum-exp form so large logits do not overflow.  labels are
    integer class indices in [0, n_classes).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = float(-log_probs[np.arange(n), labels].mean())
    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    return loss, d_logits


@dataclass
class AdamState:
    """First/second moment accumulators for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    base_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def zeros(n: int, base_lr: float = 1e-3) -> "AdamState":
        return AdamState(m=np.zeros(n), v=np.zeros(n), base_lr=base_lr)


def adam_step(
    flat: np.ndarray, grad: np.ndarray, state: AdamState, effective_lr: float
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update on a flat parameter vector.

    Pure function of its inputs: returns the new vector and new state.  An
    effective_lr of exactly zero leaves the parameters bitwise unchanged.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(grad).all():
        bad = int(np.count_nonzero(~np.isfinite(grad)))
        raise TrainingDiverged(f"{bad} non-finite gradient entries at step {state.t + 1}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = flat - effective_lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.base_lr, state.beta1, state.beta2, state.eps)


def save_weights(path, ws: WeightSet) -> None:
    """Write a JSON checkpoint; floats round-trip bitwise through repr."""
    payload = {
        "spec": ws.spec.to_json(),
        "layers": [
            {"w": w.tolist(), "b": b.tolist()} for w, b in zip(ws.weights, ws.biases)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_weights(path) -> WeightSet:
    with open(path) as fh:
        payload = json.load(fh)
    spec = NetworkSpec.from_json(payload["spec"])
    weights = [np.asarray(layer["w"], dtype=np.float64) for layer in payload["layers"]]
    biases = [np.asarray(layer["b"], dtype=np.float64) for layer in payload["layers"]]
    return WeightSet(spec, weights, biases)
