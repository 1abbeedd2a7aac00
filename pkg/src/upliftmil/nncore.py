"""Minimal dense feedforward network machinery.

Everything needed to train the uplift models lives here: parameter
containers, forward pass with cached intermediates, exact reverse-mode
backpropagation, bias-corrected Adam updates, and masked binary
cross-entropy. All arithmetic is float64; batches are row-major
(batch x features) numpy arrays.

Gradient convention: `backward` consumes the gradient of the scalar loss
with respect to the final layer's PRE-activation values. Cross-entropy
hands that gradient out directly (`bce_loss` returns (p - y) / n at the
pre-logistic level, which is the numerically stable form); gradients
expressed with respect to post-activation outputs can be converted with
`output_grad_to_preact`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

# Probabilities are kept strictly inside (0, 1): logistic outputs are
# clamped to [PROB_CLIP, 1 - PROB_CLIP] and the same bound protects every
# log of a probability.
PROB_CLIP = 1e-7

_ACTIVATIONS = ("logistic", "linear", "relu")


@dataclass
class NetworkParams:
    """Weights and biases of a dense net, one (in x out) matrix per layer.

    Hidden layers use the rectifier; the final layer's activation is
    `output_activation` ("logistic" for probability outputs, "linear" for
    logit heads, "relu" for shared representation trunks).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "logistic"

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, sufficient for backward."""

    x: np.ndarray
    preacts: list[np.ndarray] = field(default_factory=list)
    activations: list[np.ndarray] = field(default_factory=list)

    @property
    def outputs(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    learning_rate: float
    beta1: float
    beta2: float
    eps: float


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def logistic(z: np.ndarray) -> np.ndarray:
    """Numerically stable sigmoid, clamped to [PROB_CLIP, 1 - PROB_CLIP]."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, PROB_CLIP, 1.0 - PROB_CLIP)


def init_network(
    layer_sizes, seed, output_activation: str = "logistic"
) -> NetworkParams:
    """Build a network with fan-in-scaled zero-mean weights and zero biases.

    Weights are drawn N(0, 2/fan_in), the standard scaling for rectifier
    units. Deterministic for a fixed seed.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigError(f"need at least 2 layer sizes, got {sizes}")
    if any(s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be positive, got {sizes}")
    if output_activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown output activation {output_activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases, output_activation)


def forward(params: NetworkParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the net on a batch; returns outputs and the backward cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected 2-D input, got shape {x.shape}")
    if x.shape[1] != params.weights[0].shape[0]:
        raise ShapeError(
            f"input has {x.shape[1]} columns, network expects "
            f"{params.weights[0].shape[0]}"
        )
    cache = ForwardCache(x=x)
    a = x
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        cache.preacts.append(z)
        if k < last:
            a = relu(z)
        elif params.output_activation == "logistic":
            a = logistic(z)
        elif params.output_activation == "relu":
            a = relu(z)
        else:
            a = z
        cache.activations.append(a)
    return a, cache


def backward(
    params: NetworkParams, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact reverse-mode gradients for a loss whose gradient with respect
    to the final layer's pre-activations is `output_grad`.

    Returns (grads, input_grad) where grads is ordered like `net_arrays`
    (W0, b0, W1, b1, ...) and input_grad is the gradient with respect to
    the batch input.
    """
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if len(cache.preacts) != params.n_layers:
        raise ShapeError("cache does not match network depth")
    if output_grad.shape != cache.preacts[-1].shape:
        raise ShapeError(
            f"output_grad shape {output_grad.shape} does not match final "
            f"pre-activation shape {cache.preacts[-1].shape}"
        )
    grads: list[np.ndarray] = [None] * (2 * params.n_layers)
    delta = output_grad
    for k in range(params.n_layers - 1, -1, -1):
        a_prev = cache.activations[k - 1] if k > 0 else cache.x
        if cache.preacts[k].shape[1] != params.weights[k].shape[1]:
            raise ShapeError("cache does not match network layer widths")
        grads[2 * k] = a_prev.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        da_prev = delta @ params.weights[k].T
        if k > 0:
            delta = da_prev * (cache.preacts[k - 1] > 0)
        else:
            input_grad = da_prev
    return grads, input_grad


def output_grad_to_preact(
    params: NetworkParams, cache: ForwardCache, grad_outputs: np.ndarray
) -> np.ndarray:
    """Convert a gradient taken w.r.t. the net's outputs into the
    pre-activation gradient `backward` expects."""
    if params.output_activation == "logistic":
        p = cache.outputs
        return grad_outputs * p * (1.0 - p)
    if params.output_activation == "relu":
        return grad_outputs * (cache.preacts[-1] > 0)
    return grad_outputs


def net_arrays(params: NetworkParams) -> list[np.ndarray]:
    """Flat parameter list (W0, b0, W1, b1, ...), the adam_step layout."""
    out: list[np.ndarray] = []
    for w, b in zip(params.weights, params.biases):
        out.append(w)
        out.append(b)
    return out


def set_net_arrays(params: NetworkParams, arrays: list[np.ndarray]) -> None:
    """Write a flat parameter list back into the network."""
    if len(arrays) != 2 * params.n_layers:
        raise ShapeError("array list does not match network depth")
    for k in range(params.n_layers):
        params.weights[k] = arrays[2 * k]
        params.biases[k] = arrays[2 * k + 1]


def init_adam(
    arrays: list[np.ndarray],
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
        raise ConfigError(f"betas must lie in (0, 1), got {beta1}, {beta2}")
    return AdamState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        step=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    arrays: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; functional, inputs untouched."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ShapeError("parameter, gradient and state lists differ in length")
    for a, g in zip(arrays, grads):
        if a.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {a.shape}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_arrays.append(a - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_arrays, AdamState(
        m=new_m,
        v=new_v,
        step=t,
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )


def bce_loss(
    probabilities: np.ndarray, labels: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over mask=1 entries.

    Returns (loss, grad) with grad taken at the pre-logistic level:
    (p - y) / n_selected on selected entries, zero elsewhere. An empty
    mask contributes zero loss and zero gradient; callers flag that case
    themselves.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if not (p.shape == y.shape == m.shape):
        raise ShapeError(
            f"length mismatch: p {p.shape}, labels {y.shape}, mask {m.shape}"
        )
    n_sel = float(m.sum())
    if n_sel == 0.0:
        return 0.0, np.zeros_like(p)
    pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    nll = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    loss = float((nll * m).sum() / n_sel)
    grad = m * (p - y) / n_sel
    return loss, grad
