"""Tied-weight twin MLP with a sigmoid distance head, trained from scratch.

One trunk (tanh hidden layers) embeds both members of a pair; the head
squashes a weighted element-wise distance between the two embeddings into a
similarity in (0, 1):

    p = sigmoid(w . dist(f(x_i), f(x_j)) + beta)

with dist either |u - v| (L1) or (u - v)^2 (element-wise squared L2).
Training minimizes binary cross-entropy over labeled pairs plus an L2
penalty on the head weights, using Adam.  Because the trunk is a single
shared copy, tied weights hold by construction and its gradient accumulates
contributions from both twin passes.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrainingDivergedError
from .seeding import make_rng

_P_EPS = 1e-12  # probability clamp inside the loss

METRICS = ("l1", "l2sq")


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Mlp:
    """Dense trunk; ``weights[l]`` has shape (fan_out, fan_in)."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float = 0.5

    @classmethod
    def init(cls, layer_sizes, rng, dropout_rate=0.5) -> "Mlp":
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and one hidden layer")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_sizes), weights, biases, dropout_rate)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, x: np.ndarray, masks=None):
        """Return (layer inputs, tanh activations); row-batched.

        ``masks`` are inverted-dropout multipliers applied after each
        hidden activation; omit them for a deterministic eval pass.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"input dim {x.shape[1]} != trunk input {self.layer_sizes[0]}"
            )
        inputs, activations = [], []
        h = x
        for layer in range(self.n_layers):
            inputs.append(h)
            a = np.tanh(h @ self.weights[layer].T + self.biases[layer])
            activations.append(a)
            h = a if masks is None else a * masks[layer]
        return inputs, activations


@dataclass
class DistanceHead:
    weights: np.ndarray
    bias: float
    metric: str = "l2sq"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)

    def distance(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        d = u - v
        return np.abs(d) if self.metric == "l1" else d * d

    def similarity(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        z = self.distance(u, v) @ self.weights + self.bias
        return sigmoid(np.atleast_1d(z))


@dataclass
class DualNetwork:
    """Twin network realized as one shared trunk plus a distance head."""

    trunk: Mlp
    head: DistanceHead

    @classmethod
    def create(cls, layer_sizes, metric="l2sq", rng_seed=0, dropout_rate=0.5):
        rng = make_rng(rng_seed)
        trunk = Mlp.init(layer_sizes, rng, dropout_rate)
        # Small positive start; training learns the sign of each component.
        head = DistanceHead(
            weights=np.full(trunk.output_dim, 0.01), bias=0.0, metric=metric
        )
        return cls(trunk=trunk, head=head)

    def clone(self) -> "DualNetwork":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class LabeledPair:
    x_i: np.ndarray
    x_j: np.ndarray
    y: int


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    lambda_reg: float = 1e-4
    epochs: int = 120
    batch_size: int = 32
    rng_seed: int = 0
    dropout_rate: float = 0.5
    regularize_trunk: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


# ---------------------------------------------------------------------------
# forward / prediction
# ---------------------------------------------------------------------------

def forward_embed(net: DualNetwork, x: np.ndarray, masks=None) -> np.ndarray:
    """Final-hidden-layer embedding f(x); eval mode unless masks are given."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    _, activations = net.trunk.forward(x, masks)
    out = activations[-1] if masks is None else activations[-1] * masks[-1]
    return out[0] if single else out


def predict_pair(net: DualNetwork, x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Pair similarity in (0, 1); dropout disabled, exactly symmetric."""
    u = forward_embed(net, x_i)
    v = forward_embed(net, x_j)
    return float(net.head.similarity(np.atleast_2d(u), np.atleast_2d(v))[0])


def _stack_pairs(batch):
    xi = np.stack([np.asarray(p.x_i, dtype=np.float64) for p in batch])
    xj = np.stack([np.asarray(p.x_j, dtype=np.float64) for p in batch])
    y = np.array([float(p.y) for p in batch])
    return xi, xj, y


def pair_loss(net: DualNetwork, batch, lambda_reg: float,
              regularize_trunk: bool = False) -> float:
    """Mean negated BCE over the batch plus lambda * |w|^2 on head weights."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    xi, xj, y = _stack_pairs(batch)
    loss, _ = _batch_loss_grads(net, xi, xj, y, lambda_reg,
                                regularize_trunk=regularize_trunk,
                                want_grads=False)
    return loss


@dataclass
class Gradients:
    trunk_weights: list[np.ndarray]
    trunk_biases: list[np.ndarray]
    head_weights: np.ndarray
    head_bias: float


def backward(net: DualNetwork, batch, lambda_reg: float,
             regularize_trunk: bool = False) -> Gradients:
    """Analytic gradients of pair_loss for every trunk and head parameter."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    xi, xj, y = _stack_pairs(batch)
    _, grads = _batch_loss_grads(net, xi, xj, y, lambda_reg,
                                 regularize_trunk=regularize_trunk)
    return grads


def _trunk_backprop(trunk, inputs, activations, upstream, masks,
                    gw, gb):
    """Accumulate trunk gradients for one twin pass."""
    g = upstream
    for layer in range(trunk.n_layers - 1, -1, -1):
        if masks is not None:
            g = g * masks[layer]
        da = g * (1.0 - activations[layer] ** 2)
        gw[layer] += da.T @ inputs[layer]
        gb[layer] += da.sum(axis=0)
        if layer:
            g = da @ trunk.weights[layer]


def _batch_loss_grads(net, xi, xj, y, lambda_reg, masks=None,
                      regularize_trunk=False, want_grads=True):
    trunk, head = net.trunk, net.head
    in_i, act_i = trunk.forward(xi, masks)
    in_j, act_j = trunk.forward(xj, masks)
    u = act_i[-1] if masks is None else act_i[-1] * masks[-1]
    v = act_j[-1] if masks is None else act_j[-1] * masks[-1]

    diff = u - v
    dvec = np.abs(diff) if head.metric == "l1" else diff * diff
    z = dvec @ head.weights + head.bias
    p = sigmoid(z)
    pc = np.clip(p, _P_EPS, 1.0 - _P_EPS)
    bce = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    loss = float(bce.mean()) + lambda_reg * float(head.weights @ head.weights)
    if regularize_trunk:
        loss += lambda_reg * sum(float((w * w).sum()) for w in trunk.weights)
    if not want_grads:
        return loss, None

    n = len(y)
    # d(loss)/dz = (p - y)/n where the clamp is inactive, 0 where it clipped.
    gz = np.where(p == pc, p - y, 0.0) / n

    g_head_w = dvec.T @ gz + 2.0 * lambda_reg * head.weights
    g_head_b = float(gz.sum())

    g_dvec = gz[:, None] * head.weights[None, :]
    if head.metric == "l1":
        g_u = g_dvec * np.sign(diff)
    else:
        g_u = g_dvec * 2.0 * diff
    g_v = -g_u

    gw = [np.zeros_like(w) for w in trunk.weights]
    gb = [np.zeros_like(b) for b in trunk.biases]
    _trunk_backprop(trunk, in_i, act_i, g_u, masks, gw, gb)
    _trunk_backprop(trunk, in_j, act_j, g_v, masks, gw, gb)
    if regularize_trunk:
        for layer, w in enumerate(trunk.weights):
            gw[layer] += 2.0 * lambda_reg * w

    return loss, Gradients(gw, gb, g_head_w, g_head_b)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class _Adam:
    def __init__(self, shapes, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        scale_m = 1.0 - cfg.adam_beta1 ** self.t
        scale_v = 1.0 - cfg.adam_beta2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1.0 - cfg.adam_beta1) * g
            self.v[i] = cfg.adam_beta2 * self.v[i] + (1.0 - cfg.adam_beta2) * g * g
            m_hat = self.m[i] / scale_m
            v_hat = self.v[i] / scale_v
            out.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon))
        return out


def train(net: DualNetwork, pairs, cfg: TrainConfig):
    """Adam over shuffled mini-batches; returns (trained copy, epoch losses)."""
    if not pairs:
        raise ValueError("no training pairs")
    labels = {p.y for p in pairs}
    if labels != {0, 1}:
        raise ValueError(f"both labels must be present, got {sorted(labels)}")

    net = net.clone()
    net.trunk.dropout_rate = cfg.dropout_rate
    trunk, head = net.trunk, net.head
    xi_all, xj_all, y_all = _stack_pairs(pairs)
    rng = make_rng(cfg.rng_seed)

    params = list(trunk.weights) + list(trunk.biases) + [head.weights, np.array([head.bias])]
    adam = _Adam([p.shape for p in params], cfg)
    n_layers = trunk.n_layers
    keep = 1.0 - cfg.dropout_rate

    history = []
    n = len(pairs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            sel = order[start:start + cfg.batch_size]
            xi, xj, y = xi_all[sel], xj_all[sel], y_all[sel]
            if cfg.dropout_rate > 0.0:
                # One mask per layer, shared by both twin passes of the pair.
                masks = [
                    (rng.random((len(sel), size)) < keep) / keep
                    for size in trunk.layer_sizes[1:]
                ]
            else:
                masks = None
            loss, grads = _batch_loss_grads(
                net, xi, xj, y, cfg.lambda_reg, masks=masks,
                regularize_trunk=cfg.regularize_trunk,
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, batch_no, loss)
            flat_grads = (list(grads.trunk_weights) + list(grads.trunk_biases)
                          + [grads.head_weights, np.array([grads.head_bias])])
            params = adam.step(params, flat_grads)
            trunk.weights = params[:n_layers]
            trunk.biases = params[n_layers:2 * n_layers]
            head.weights = params[2 * n_layers]
            head.bias = float(params[2 * n_layers + 1][0])
            epoch_loss += loss * len(sel)
        history.append(epoch_loss / n)
    return net, history


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def gradcheck(layer_sizes, metric: str, rng_seed: int = 0, n_pairs: int = 10,
              h: float = 1e-5, lambda_reg: float = 1e-3) -> float:
    """Max relative error between backward() and central finite differences.

    For the L1 head, pairs are resampled until every embedding-difference
    component is bounded away from zero, avoiding the |.| kink.
    """
    net = DualNetwork.create(layer_sizes, metric=metric, rng_seed=rng_seed,
                             dropout_rate=0.0)
    rng = make_rng(rng_seed + 1)
    net.head.weights = rng.normal(0.0, 0.5, net.trunk.output_dim)
    net.head.bias = float(rng.normal(0.0, 0.5))

    pairs = []
    attempts = 0
    while len(pairs) < n_pairs:
        attempts += 1
        if attempts > 1000 * n_pairs:
            raise RuntimeError("could not sample pairs away from the L1 kink")
        x_i = rng.normal(0.0, 1.0, layer_sizes[0])
        x_j = rng.normal(0.0, 1.0, layer_sizes[0])
        if metric == "l1":
            u = forward_embed(net, x_i)
            v = forward_embed(net, x_j)
            if np.min(np.abs(u - v)) < 1e-3:
                continue
        pairs.append(LabeledPair(x_i, x_j, int(rng.integers(0, 2))))

    analytic = backward(net, pairs, lambda_reg)
    blocks = (
        [(w, g) for w, g in zip(net.trunk.weights, analytic.trunk_weights)]
        + [(b, g) for b, g in zip(net.trunk.biases, analytic.trunk_biases)]
        + [(net.head.weights, analytic.head_weights)]
    )

    worst = 0.0
    for param, grad in blocks:
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + h
            up = pair_loss(net, pairs, lambda_reg)
            flat_p[k] = orig - h
            down = pair_loss(net, pairs, lambda_reg)
            flat_p[k] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, _rel_err(flat_g[k], numeric))

    orig = net.head.bias
    net.head.bias = orig + h
    up = pair_loss(net, pairs, lambda_reg)
    net.head.bias = orig - h
    down = pair_loss(net, pairs, lambda_reg)
    net.head.bias = orig
    numeric = (up - down) / (2.0 * h)
    worst = max(worst, _rel_err(analytic.head_bias, numeric))
    return worst


def _rel_err(a: float, b: float) -> float:
    denom = max(abs(a), abs(b))
    if denom < 1e-12:
        return 0.0
    return abs(a - b) / denom


# ---------------------------------------------------------------------------
# parameter (de)serialization helpers; the full model document lives in matcher
# ---------------------------------------------------------------------------

def network_to_dict(net: DualNetwork) -> dict:
    return {
        "metric": net.head.metric,
        "layer_sizes": [int(s) for s in net.trunk.layer_sizes],
        "trunk_weights": [w.tolist() for w in net.trunk.weights],
        "trunk_biases": [b.tolist() for b in net.trunk.biases],
        "head_weights": net.head.weights.tolist(),
        "head_bias": float(net.head.bias),
    }


def network_from_dict(doc: dict) -> DualNetwork:
    trunk = Mlp(
        layer_sizes=[int(s) for s in doc["layer_sizes"]],
        weights=[np.array(w, dtype=np.float64) for w in doc["trunk_weights"]],
        biases=[np.array(b, dtype=np.float64) for b in doc["trunk_biases"]],
    )
    head = DistanceHead(
        weights=np.array(doc["head_weights"], dtype=np.float64),
        bias=float(doc["head_bias"]),
        metric=doc["metric"],
    )
    return DualNetwork(trunk=trunk, head=head)
