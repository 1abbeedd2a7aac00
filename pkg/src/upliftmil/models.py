"""Two-model uplift architectures behind one interface.

Every model maps a feature batch to per-row treatment and control
response probabilities (p_t, p_c) and the uplift prediction p_t - p_c.
The factual-arm base loss is binary cross-entropy of p_t on treated rows
plus binary cross-entropy of p_c on control rows, each averaged within
its own arm; gradients reach a row's counterfactual arm nowhere.

Architectures:

* TM: one trunk ending in two logistic output nodes (p_c, p_t), so all
  hidden layers train on every instance.
* TARNET: shared rectifier trunk, then one-hidden-layer logistic heads
  per arm (head width = last trunk width).
* DDR: a control net on the features, and a treatment net whose input is
  the features concatenated with the control prediction. The fed-in
  control prediction is treated as a constant (stop-gradient), so
  treated rows never push gradient into the control net.
* SDR: the two arms share part of their output: a shared logit net on
  the features plus per-arm private one-hidden-layer logit heads, with
  p_arm = logistic(shared logit + private logit).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import nncore
from .errors import ConfigError, ShapeError
from .nncore import ForwardCache, NetworkParams

CHECKPOINT_VERSION = 1


class ModelKind(str, Enum):
    TM = "tm"
    TARNET = "tarnet"
    DDR = "ddr"
    SDR = "sdr"


# Fixed net ordering per kind; parameter flattening and checkpoints rely
# on it.
_NET_ORDER = {
    ModelKind.TM: ("net",),
    ModelKind.TARNET: ("trunk", "head_c", "head_t"),
    ModelKind.DDR: ("control", "treatment"),
    ModelKind.SDR: ("shared", "private_c", "private_t"),
}


@dataclass
class UpliftModel:
    kind: ModelKind
    input_dim: int
    hidden_sizes: tuple[int, ...]
    seed: int
    nets: dict[str, NetworkParams]
    scaler: tuple[np.ndarray, np.ndarray] | None = None

    def net_names(self) -> tuple[str, ...]:
        return _NET_ORDER[self.kind]

    def parameter_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for name in self.net_names():
            out.extend(nncore.net_arrays(self.nets[name]))
        return out


@dataclass
class ModelOutputs:
    """Per-row probabilities, the uplift vector, and backward caches."""

    p_t: np.ndarray
    p_c: np.ndarray
    uplift: np.ndarray
    caches: dict[str, ForwardCache]
    x_scaled: np.ndarray


def build(kind, input_dim: int, hidden_sizes, seed: int) -> UpliftModel:
    """Wire a model of the given kind; deterministic for a fixed seed."""
    try:
        kind = ModelKind(kind)
    except ValueError:
        raise ConfigError(f"unknown model kind {kind!r}")
    if input_dim < 1:
        raise ConfigError(f"input_dim must be at least 1, got {input_dim}")
    hidden = tuple(int(h) for h in hidden_sizes)
    if not hidden or any(h <= 0 for h in hidden):
        raise ConfigError(f"hidden sizes must be positive, got {hidden_sizes}")
    last = hidden[-1]
    # Per-net seeds derive from (seed, index) so nets are independent but
    # the whole model is reproducible from one integer.
    s = lambda i: [int(seed), i]

    if kind is ModelKind.TM:
        nets = {"net": nncore.init_network((input_dim, *hidden, 2), s(0))}
    elif kind is ModelKind.TARNET:
        nets = {
            "trunk": nncore.init_network((input_dim, *hidden), s(0), "relu"),
            "head_c": nncore.init_network((last, last, 1), s(1)),
            "head_t": nncore.init_network((last, last, 1), s(2)),
        }
    elif kind is ModelKind.DDR:
        nets = {
            "control": nncore.init_network((input_dim, *hidden, 1), s(0)),
            "treatment": nncore.init_network((input_dim + 1, *hidden, 1), s(1)),
        }
    else:  # SDR
        nets = {
            "shared": nncore.init_network((input_dim, *hidden, 1), s(0), "linear"),
            "private_c": nncore.init_network((input_dim, last, 1), s(1), "linear"),
            "private_t": nncore.init_network((input_dim, last, 1), s(2), "linear"),
        }
    return UpliftModel(kind, input_dim, hidden, int(seed), nets)


def _scale(model: UpliftModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(
            f"expected input of shape (n, {model.input_dim}), got {x.shape}"
        )
    if model.scaler is None:
        return x
    mean, std = model.scaler
    return (x - mean) / std


def forward_full(model: UpliftModel, x: np.ndarray) -> ModelOutputs:
    """Forward pass keeping the caches needed for backpropagation."""
    xs = _scale(model, x)
    caches: dict[str, ForwardCache] = {}
    if model.kind is ModelKind.TM:
        out, caches["net"] = nncore.forward(model.nets["net"], xs)
        p_c, p_t = out[:, 0], out[:, 1]
    elif model.kind is ModelKind.TARNET:
        rep, caches["trunk"] = nncore.forward(model.nets["trunk"], xs)
        out_c, caches["head_c"] = nncore.forward(model.nets["head_c"], rep)
        out_t, caches["head_t"] = nncore.forward(model.nets["head_t"], rep)
        p_c, p_t = out_c[:, 0], out_t[:, 0]
    elif model.kind is ModelKind.DDR:
        out_c, caches["control"] = nncore.forward(model.nets["control"], xs)
        p_c = out_c[:, 0]
        xt = np.hstack([xs, out_c])
        out_t, caches["treatment"] = nncore.forward(model.nets["treatment"], xt)
        p_t = out_t[:, 0]
    else:  # SDR
        z_s, caches["shared"] = nncore.forward(model.nets["shared"], xs)
        z_c, caches["private_c"] = nncore.forward(model.nets["private_c"], xs)
        z_t, caches["private_t"] = nncore.forward(model.nets["private_t"], xs)
        p_c = nncore.logistic(z_s[:, 0] + z_c[:, 0])
        p_t = nncore.logistic(z_s[:, 0] + z_t[:, 0])
    return ModelOutputs(p_t=p_t, p_c=p_c, uplift=p_t - p_c, caches=caches, x_scaled=xs)


def predict(model: UpliftModel, x: np.ndarray):
    """Per-row (p_t, p_c, uplift) with uplift = p_t - p_c exactly."""
    out = forward_full(model, x)
    return out.p_t, out.p_c, out.uplift


def backprop_factual(
    model: UpliftModel, out: ModelOutputs, gz_t: np.ndarray, gz_c: np.ndarray
) -> list[np.ndarray]:
    """Route per-row pre-logistic gradients through the architecture.

    gz_t[i] is the loss gradient at the treatment arm's pre-logistic
    value for row i (zero on rows whose treatment arm takes no gradient),
    gz_c likewise for the control arm. Returns gradients aligned with
    `parameter_arrays`.
    """
    gt = np.asarray(gz_t, dtype=np.float64).reshape(-1, 1)
    gc = np.asarray(gz_c, dtype=np.float64).reshape(-1, 1)
    caches = out.caches
    if model.kind is ModelKind.TM:
        grads, _ = nncore.backward(
            model.nets["net"], caches["net"], np.hstack([gc, gt])
        )
        return grads
    if model.kind is ModelKind.TARNET:
        g_head_c, din_c = nncore.backward(model.nets["head_c"], caches["head_c"], gc)
        g_head_t, din_t = nncore.backward(model.nets["head_t"], caches["head_t"], gt)
        trunk = model.nets["trunk"]
        d_rep = nncore.output_grad_to_preact(trunk, caches["trunk"], din_c + din_t)
        g_trunk, _ = nncore.backward(trunk, caches["trunk"], d_rep)
        return g_trunk + g_head_c + g_head_t
    if model.kind is ModelKind.DDR:
        g_control, _ = nncore.backward(model.nets["control"], caches["control"], gc)
        # Input gradient of the treatment net is dropped: the appended
        # control prediction is a constant input (stop-gradient).
        g_treatment, _ = nncore.backward(
            model.nets["treatment"], caches["treatment"], gt
        )
        return g_control + g_treatment
    # SDR: both arms' pre-logistic values are shared_logit + private_logit,
    # so the shared net collects each row's factual-arm gradient.
    g_shared, _ = nncore.backward(model.nets["shared"], caches["shared"], gt + gc)
    g_priv_c, _ = nncore.backward(model.nets["private_c"], caches["private_c"], gc)
    g_priv_t, _ = nncore.backward(model.nets["private_t"], caches["private_t"], gt)
    return g_shared + g_priv_c + g_priv_t


def base_loss_and_grads(model: UpliftModel, x, treatment, outcome):
    """Factual-arm cross-entropy and its parameter gradients.

    Returns (loss, grads, outputs). Each arm's cross-entropy is averaged
    over that arm's rows and the two arm losses are summed; a batch with
    an empty arm simply contributes zero for that arm.
    """
    out = forward_full(model, x)
    t = np.asarray(treatment, dtype=np.float64)
    y = np.asarray(outcome, dtype=np.float64)
    loss_t, gz_t = nncore.bce_loss(out.p_t, y, t)
    loss_c, gz_c = nncore.bce_loss(out.p_c, y, 1.0 - t)
    grads = backprop_factual(model, out, gz_t, gz_c)
    return loss_t + loss_c, grads, out


def set_parameter_arrays(model: UpliftModel, arrays: list[np.ndarray]) -> None:
    """Write a flat array list (as from `parameter_arrays`) back."""
    pos = 0
    for name in model.net_names():
        net = model.nets[name]
        k = 2 * net.n_layers
        nncore.set_net_arrays(net, arrays[pos : pos + k])
        pos += k
    if pos != len(arrays):
        raise ShapeError("array list does not match model parameter count")


def clone_parameter_arrays(model: UpliftModel) -> list[np.ndarray]:
    return [a.copy() for a in model.parameter_arrays()]


def save_checkpoint(model: UpliftModel, path) -> None:
    """Write all matrices plus a manifest to a .npz archive."""
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind.value,
        "input_dim": model.input_dim,
        "hidden_sizes": list(model.hidden_sizes),
        "seed": model.seed,
        "nets": {
            name: {
                "layer_sizes": list(model.nets[name].layer_sizes),
                "output_activation": model.nets[name].output_activation,
            }
            for name in model.net_names()
        },
        "has_scaler": model.scaler is not None,
    }
    arrays = {}
    for name in model.net_names():
        net = model.nets[name]
        for k in range(net.n_layers):
            arrays[f"{name}.w{k}"] = net.weights[k]
            arrays[f"{name}.b{k}"] = net.biases[k]
    if model.scaler is not None:
        arrays["scaler.mean"], arrays["scaler.std"] = model.scaler
    np.savez(path, manifest=np.array(json.dumps(manifest)), **arrays)


def load_checkpoint(path) -> UpliftModel:
    with np.load(path) as archive:
        manifest = json.loads(str(archive["manifest"]))
        if manifest["format_version"] != CHECKPOINT_VERSION:
            raise ConfigError(
                f"checkpoint format {manifest['format_version']} not supported"
            )
        kind = ModelKind(manifest["kind"])
        nets = {}
        for name in _NET_ORDER[kind]:
            info = manifest["nets"][name]
            n_layers = len(info["layer_sizes"]) - 1
            nets[name] = NetworkParams(
                weights=[archive[f"{name}.w{k}"] for k in range(n_layers)],
                biases=[archive[f"{name}.b{k}"] for k in range(n_layers)],
                output_activation=info["output_activation"],
            )
        scaler = None
        if manifest["has_scaler"]:
            scaler = (archive["scaler.mean"], archive["scaler.std"])
    return UpliftModel(
        kind=kind,
        input_dim=int(manifest["input_dim"]),
        hidden_sizes=tuple(manifest["hidden_sizes"]),
        seed=int(manifest["seed"]),
        nets=nets,
        scaler=scaler,
    )
