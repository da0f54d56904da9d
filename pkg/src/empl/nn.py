"""A small dense network with a monotone quantile head, written directly in numpy.

Architecture: ``[x, tau] -> (Dense -> BatchNorm -> ReLU -> Dropout) * k -> Dense -> head``.
The ``quantile`` head applies a softmax over N logits and a cumulative sum,
so every output is a normalized, non-decreasing cumulative histogram.  The
``gaussian`` head emits 2N values: a softmax/cumsum mean per bin and a
softplus standard deviation per bin (the likelihood baseline).

Parameters live in a flat ``dict`` keyed ``h{i}.W``, ``h{i}.gamma``, ... so
the optimizer, checkpointing and finite-difference checks can treat them
uniformly.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from . import losses
from .histcore import DimensionMismatch

CHECKPOINT_VERSION = 1


class StaleTrace(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class Network:
    input_dim: int
    hidden: tuple
    n_bins: int
    batch_norm: bool = True
    dropout: float = 0.0
    head: str = "quantile"
    tau_input: bool = True
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    @property
    def in_width(self) -> int:
        return self.input_dim + int(self.tau_input)

    @property
    def out_width(self) -> int:
        return self.n_bins * (2 if self.head == "gaussian" else 1)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def architecture(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "n_bins": self.n_bins,
            "batch_norm": self.batch_norm,
            "dropout": self.dropout,
            "head": self.head,
            "tau_input": self.tau_input,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
        }


def init_network(input_dim, hidden, n_bins, rng, *, batch_norm=True, dropout=0.0,
                 head="quantile", tau_input=True) -> Network:
    """He-initialized weights, zero biases, unit BN scale."""
    if head not in ("quantile", "gaussian"):
        raise ValueError(f"unknown head {head!r}")
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    net = Network(int(input_dim), tuple(int(h) for h in hidden), int(n_bins),
                  batch_norm=batch_norm, dropout=float(dropout), head=head, tau_input=tau_input)
    width = net.in_width
    for i, h in enumerate(net.hidden):
        net.params[f"h{i}.W"] = rng.normal(0.0, np.sqrt(2.0 / width), size=(width, h))
        if batch_norm:
            # a bias in front of batch norm is cancelled by the mean subtraction
            net.params[f"h{i}.gamma"] = np.ones(h)
            net.params[f"h{i}.beta"] = np.zeros(h)
            net.buffers[f"h{i}.mean"] = np.zeros(h)
            net.buffers[f"h{i}.var"] = np.ones(h)
        else:
            net.params[f"h{i}.b"] = np.zeros(h)
        width = h
    net.params["out.W"] = rng.normal(0.0, np.sqrt(1.0 / width), size=(width, net.out_width))
    net.params["out.b"] = np.zeros(net.out_width)
    return net


@dataclass
class ForwardTrace:
    mode: str
    inputs: np.ndarray
    layers: list
    logits: np.ndarray
    density: np.ndarray
    cumulative: np.ndarray
    sigma: Optional[np.ndarray] = None

    @property
    def mu(self):
        return self.cumulative


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def net_inputs(net: Network, x, tau=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if net.tau_input:
        if tau is None:
            raise ValueError("this network takes a quantile level as input")
        t = np.broadcast_to(np.asarray(tau, dtype=np.float64), (x.shape[0],))
        x = np.concatenate([x, t[:, None]], axis=1)
    if x.shape[1] != net.in_width:
        raise DimensionMismatch(f"network expects {net.in_width} input features, got {x.shape[1]}")
    return x


def forward(net: Network, x, tau=None, mode: str = "eval", rng=None) -> ForwardTrace:
    """Run the network.  ``tau`` is appended to ``x`` as the last feature."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    h = net_inputs(net, x, tau)
    inputs = h
    p = net.params
    layers = []
    for i in range(len(net.hidden)):
        cache = {"h": h}
        z = h @ p[f"h{i}.W"]
        if net.batch_norm:
            if mode == "train":
                mean = z.mean(axis=0)
                var = np.maximum(np.einsum("ij,ij->j", z, z) / z.shape[0] - mean * mean, 0.0)
            else:
                mean, var = net.buffers[f"h{i}.mean"], net.buffers[f"h{i}.var"]
            inv_std = 1.0 / np.sqrt(var + net.bn_eps)
            # normalize and scale as one affine map: y = z * scale + shift
            scale = p[f"h{i}.gamma"] * inv_std
            y = z * scale
            y += p[f"h{i}.beta"] - mean * scale
            cache.update(z=z, mean=mean, var=var, inv_std=inv_std, scale=scale)
        else:
            y = z
            y += p[f"h{i}.b"]
        cache["active"] = y > 0
        a = np.maximum(y, 0.0, out=y)
        if mode == "train" and net.dropout > 0:
            if rng is None:
                raise ValueError("train-mode forward with dropout needs an rng")
            mask = (rng.random(a.shape) >= net.dropout) / (1.0 - net.dropout)
            a *= mask
            cache["mask"] = mask
        layers.append(cache)
        h = a
    layers.append({"h": h})
    logits = h @ p["out.W"] + p["out.b"]
    n = net.n_bins
    density = _softmax(logits[:, :n])
    sigma = None
    if net.head == "gaussian":
        sigma = losses.softplus(logits[:, n:]) + losses.SIGMA_FLOOR
    # rounding in the running sum can overshoot 1 by a few ulps
    cumulative = np.minimum(np.cumsum(density, axis=1), 1.0)
    return ForwardTrace(mode, inputs, layers, logits, density, cumulative, sigma)


def backward(net: Network, trace: ForwardTrace, loss_grad) -> dict:
    """Parameter gradients given d loss / d (predicted density).

    For the gaussian head ``loss_grad`` is the pair ``(d/d mu, d/d sigma)``
    with ``mu`` the cumulative mean.
    """
    if trace.logits.shape[1] != net.out_width or len(trace.layers) != len(net.hidden) + 1:
        raise StaleTrace("trace was not produced by this network")
    n = net.n_bins
    q = trace.density
    if net.head == "gaussian":
        g_mu, g_sigma = (np.asarray(g, dtype=np.float64) for g in loss_grad)
        g_density = losses.reverse_cumsum(g_mu)
        g_raw = g_sigma * expit(trace.logits[:, n:])
    else:
        g_density = np.asarray(loss_grad, dtype=np.float64)
        g_raw = None
    if g_density.ndim == 1:
        g_density = g_density[None, :]
    if g_density.shape != q.shape:
        raise StaleTrace(f"loss gradient shape {g_density.shape} does not match trace {q.shape}")
    g_logits = q * (g_density - np.sum(g_density * q, axis=1, keepdims=True))
    if g_raw is not None:
        g_logits = np.concatenate([g_logits, g_raw], axis=1)

    p = net.params
    grads = {}
    h_last = trace.layers[-1]["h"]
    grads["out.W"] = h_last.T @ g_logits
    grads["out.b"] = g_logits.sum(axis=0)
    g = g_logits @ p["out.W"].T
    for i in reversed(range(len(net.hidden))):
        cache = trace.layers[i]
        if "mask" in cache:
            g *= cache["mask"]
        g *= cache["active"]
        if net.batch_norm:
            z, mean, inv_std, scale = cache["z"], cache["mean"], cache["inv_std"], cache["scale"]
            d_beta = g.sum(axis=0)
            # sum(g * xhat) without materializing xhat = (z - mean) * inv_std
            d_gamma = (np.einsum("ij,ij->j", g, z) - mean * d_beta) * inv_std
            grads[f"h{i}.gamma"] = d_gamma
            grads[f"h{i}.beta"] = d_beta
            g *= scale
            if trace.mode == "train":
                b = g.shape[0]
                # batch statistics: remove the mean and the xhat-projection of d xhat
                k = scale * d_gamma * inv_std / b
                g -= z * k
                g += mean * k - scale * d_beta / b
        else:
            grads[f"h{i}.b"] = g.sum(axis=0)
        grads[f"h{i}.W"] = cache["h"].T @ g
        g = g @ p[f"h{i}.W"].T
    return grads


def update_running_stats(net: Network, trace: ForwardTrace) -> None:
    if not net.batch_norm or trace.mode != "train":
        return
    m = net.bn_momentum
    for i in range(len(net.hidden)):
        cache = trace.layers[i]
        net.buffers[f"h{i}.mean"] = m * net.buffers[f"h{i}.mean"] + (1 - m) * cache["mean"]
        net.buffers[f"h{i}.var"] = m * net.buffers[f"h{i}.var"] + (1 - m) * cache["var"]


# -- Adam ----------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(net: Network, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(lr, beta1, beta2, eps, 0,
                     {k: np.zeros_like(p) for k, p in net.params.items()},
                     {k: np.zeros_like(p) for k, p in net.params.items()})


def adam_step(net: Network, grads: dict, state: AdamState):
    """One bias-corrected Adam update.  Parameters and moments are updated in place."""
    if set(grads) != set(net.params):
        raise ShapeMismatch(f"gradient keys {sorted(grads)} do not match parameters")
    for k, g in grads.items():
        if g.shape != net.params[k].shape:
            raise ShapeMismatch(f"{k}: gradient shape {g.shape} != parameter shape {net.params[k].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        net.params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


# -- training ------------------------------------------------------------------------

@dataclass(frozen=True)
class LossConfig:
    name: str = "empl"
    tau_policy: str = "uniform"
    tau: float = 0.5
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.name not in losses.TRAINING_LOSSES + ("gaussian_nll",):
            raise ValueError(f"unknown loss {self.name!r}")
        if self.tau_policy not in ("uniform", "fixed"):
            raise ValueError(f"unknown tau policy {self.tau_policy!r}")
        if self.name == "empl_smoothed" and not (self.alpha and self.alpha > 0):
            raise ValueError("empl_smoothed needs alpha > 0")


@dataclass(frozen=True)
class Schedule:
    iterations: int = 10_000
    epochs: int = 0
    batch_size: int = 2048
    learning_rate: float = 1e-3
    log_every: int = 100
    # learning rate decays exponentially to learning_rate * final_lr_factor
    final_lr_factor: float = 1.0


@dataclass
class ArrayDataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.x)

    def batches(self, rng, epochs, batch_size):
        n = len(self.x)
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                # a single-sample batch has no batch statistics
                if len(idx) < 2:
                    continue
                yield self.x[idx], self.y[idx]


def _draw_taus(loss: LossConfig, rng, batch: int) -> np.ndarray:
    if loss.tau_policy == "fixed":
        return np.full(batch, float(loss.tau))
    return np.clip(rng.random(batch), 1e-12, 1.0 - 1e-12)


def train_step(net, state, xb, yb, loss: LossConfig, rng) -> float:
    taus = _draw_taus(loss, rng, len(xb)) if net.tau_input or loss.name.startswith("empl") else None
    trace = forward(net, xb, taus if net.tau_input else None, mode="train", rng=rng)
    if loss.name == "gaussian_nll":
        value, g_mu, g_sigma = losses.gaussian_nll(yb, trace.cumulative, trace.sigma)
        grad = (g_mu, g_sigma)
    else:
        value, grad = losses.loss_and_grad(loss.name, yb, trace.density, taus, loss.alpha)
    grads = backward(net, trace, grad)
    update_running_stats(net, trace)
    adam_step(net, grads, state)
    return value


def train(net: Network, data, loss: LossConfig, schedule: Schedule, rng,
          progress: Optional[Callable[[int, float], None]] = None):
    """Train a private copy of ``net``.

    ``data`` is either a sampler ``f(rng, batch_size) -> (x, y)`` drawn
    afresh every iteration (``schedule.iterations`` steps) or an
    ``ArrayDataset`` iterated for ``schedule.epochs`` shuffled epochs.
    Returns ``(trained_net, curve)`` with ``curve`` a list of
    ``(iteration, mean batch loss over the window)``.
    """
    net = net.copy()
    state = adam_init(net, lr=schedule.learning_rate)
    if isinstance(data, ArrayDataset):
        batches = data.batches(rng, schedule.epochs, schedule.batch_size)
        per_epoch = sum(1 for s in range(0, len(data), schedule.batch_size)
                        if min(schedule.batch_size, len(data) - s) >= 2)
        total = schedule.epochs * per_epoch
    else:
        batches = (data(rng, schedule.batch_size) for _ in range(schedule.iterations))
        total = schedule.iterations
    curve = []
    window = []
    it = 0
    for xb, yb in batches:
        state.lr = schedule.learning_rate * schedule.final_lr_factor ** (it / max(total, 1))
        window.append(train_step(net, state, xb, yb, loss, rng))
        it += 1
        if it % schedule.log_every == 0:
            curve.append((it, float(np.mean(window))))
            window = []
            if progress is not None:
                progress(it, curve[-1][1])
    if window:
        curve.append((it, float(np.mean(window))))
    return net, curve


# -- prediction helpers --------------------------------------------------------------

def predict_cumulative(net: Network, x, taus) -> np.ndarray:
    """Eval-mode cumulative predictions, shape ``(n_x, n_tau, N)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    taus = np.asarray(taus, dtype=np.float64).ravel()
    xs = np.repeat(x, len(taus), axis=0)
    ts = np.tile(taus, len(x))
    out = forward(net, xs, ts, mode="eval").cumulative
    return out.reshape(len(x), len(taus), net.n_bins)


# -- checkpoints ---------------------------------------------------------------------

def save_checkpoint(path, net: Network, metadata: Optional[dict] = None) -> None:
    meta = {"format_version": CHECKPOINT_VERSION, "architecture": net.architecture(),
            "metadata": metadata or {}}
    arrays = {f"param/{k}": v for k, v in net.params.items()}
    arrays.update({f"buffer/{k}": v for k, v in net.buffers.items()})
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Returns ``(network, metadata)``."""
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            arrays = {k: data[k].copy() for k in data.files if k != "__meta__"}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format {meta.get('format_version')!r} != supported {CHECKPOINT_VERSION}")
    arch = meta["architecture"]
    net = Network(arch["input_dim"], tuple(arch["hidden"]), arch["n_bins"], arch["batch_norm"],
                  arch["dropout"], arch["head"], arch["tau_input"], arch["bn_momentum"], arch["bn_eps"])
    for k, v in arrays.items():
        kind, name = k.split("/", 1)
        (net.params if kind == "param" else net.buffers)[name] = v
    return net, meta["metadata"]


def params_digest(net: Network) -> str:
    h = hashlib.sha256()
    for k in sorted(net.params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(net.params[k]).tobytes())
    return h.hexdigest()
