"""Small feed-forward projection network with hand-rolled backprop.

The network maps base image embeddings into the personalized similarity
space. Training minimizes one of the separating-cluster losses (see
`losses`) with analytic gradients through the cosine similarities and the
dense layers; no autograd framework is involved. 64-bit arithmetic
throughout.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import losses
from .losses import ZERO_NORM_EPS

ACTIVATIONS = ("relu", "identity")


class BatchTooSmallError(ValueError):
    """Raised when a training batch cannot form the required pairs.

    The engine treats this as "skip the update", never as a session failure.
    """


@dataclass
class Layer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class ProjectionNet:
    layers: list[Layer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def copy(self) -> "ProjectionNet":
        return ProjectionNet(
            [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 1e-3
    tau: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class OptimizerState:
    method: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    timestep: int = 0
    moment1: list = field(default_factory=list)  # per layer: (mW, mb)
    moment2: list = field(default_factory=list)


def init_optimizer(net: ProjectionNet, method: str = "adam",
                   learning_rate: float = 1e-3) -> OptimizerState:
    if method not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {method!r}")
    if learning_rate < 0:
        raise ValueError("learning_rate must be nonnegative")
    opt = OptimizerState(method=method, learning_rate=learning_rate)
    if method == "adam":
        for layer in net.layers:
            opt.moment1.append((np.zeros_like(layer.weights), np.zeros_like(layer.bias)))
            opt.moment2.append((np.zeros_like(layer.weights), np.zeros_like(layer.bias)))
    return opt


def init_net(input_dim: int, hidden_dims, output_dim: int, seed: int = 0) -> ProjectionNet:
    """He-uniform weights, zero biases, relu on hidden layers, linear output."""
    dims = [input_dim, *hidden_dims, output_dim]
    if any(d < 1 for d in dims):
        raise ValueError(f"all dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / fan_in)
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        activation = "relu" if i < len(dims) - 2 else "identity"
        layers.append(Layer(weights, np.zeros(fan_out), activation))
    return ProjectionNet(layers)


def identity_net(dim: int) -> ProjectionNet:
    """Single linear layer that outputs its input unchanged."""
    return ProjectionNet([Layer(np.eye(dim), np.zeros(dim), "identity")])


def cosine_sim(a, b) -> float:
    """Cosine similarity in [-1, 1]; 0 if either norm is below 1e-12."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < ZERO_NORM_EPS or nb < ZERO_NORM_EPS:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def forward_batch(net: ProjectionNet, x: np.ndarray) -> np.ndarray:
    """Project a batch of row vectors; returns (n, output_dim)."""
    h = np.asarray(x, dtype=np.float64)
    squeeze = h.ndim == 1
    if squeeze:
        h = h[None, :]
    if h.shape[1] != net.input_dim:
        raise ValueError(f"input dim {h.shape[1]} != network input dim {net.input_dim}")
    for layer in net.layers:
        h = _activate(h @ layer.weights.T + layer.bias, layer.activation)
    return h[0] if squeeze else h


def forward(net: ProjectionNet, x) -> np.ndarray:
    """Project one vector."""
    return forward_batch(net, np.asarray(x, dtype=np.float64))


def _forward_caches(net: ProjectionNet, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    activations = [np.asarray(x, dtype=np.float64)]
    pre_activations = []
    h = activations[0]
    for layer in net.layers:
        z = h @ layer.weights.T + layer.bias
        pre_activations.append(z)
        h = _activate(z, layer.activation)
        activations.append(h)
    return pre_activations, activations


def _backward(net: ProjectionNet, pre_activations, activations, d_out):
    """Backprop d(loss)/d(output) into per-layer (dW, db) gradients."""
    grads = [None] * len(net.layers)
    delta = d_out
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        delta = delta * _activation_grad(pre_activations[i], layer.activation)
        grads[i] = (delta.T @ activations[i], delta.sum(axis=0))
        if i > 0:
            delta = delta @ layer.weights
    return grads


def _unit_rows(m: np.ndarray):
    """Row-normalized matrix plus 1/norm with zero-norm rows zeroed."""
    norms = np.linalg.norm(m, axis=1)
    inv = np.where(norms < ZERO_NORM_EPS, 0.0, 1.0 / np.where(norms == 0, 1.0, norms))
    return m * inv[:, None], inv


def _cosine_coefficient_grads(a: np.ndarray, b: np.ndarray, coeff: np.ndarray):
    """Gradients of sum_{x,k} coeff[x,k] * cos(a[x], b[k]) w.r.t. a and b.

    Zero-norm rows receive (and transmit) zero gradient, matching the
    similarity convention.
    """
    a_hat, inv_a = _unit_rows(a)
    b_hat, inv_b = _unit_rows(b)
    sims = a_hat @ b_hat.T
    weighted = coeff * sims
    d_a = inv_a[:, None] * (coeff @ b_hat - weighted.sum(axis=1, keepdims=True) * a_hat)
    d_b = inv_b[:, None] * (coeff.T @ a_hat - weighted.sum(axis=0)[:, None] * b_hat)
    return d_a, d_b


def _scloss_projection_grads(z_s: np.ndarray, z_d: np.ndarray, tau: float,
                             weight: float = 1.0):
    """d(scloss)/dZ for both projection blocks, scaled by `weight`."""
    n = z_s.shape[0]
    scale = weight / (n * (n - 1))
    s_hat, _ = _unit_rows(z_s)
    d_hat, _ = _unit_rows(z_d)
    logits = (s_hat @ d_hat.T) / tau
    soft = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    # each anchor's log-sum-exp appears once per partner, i.e. n-1 times
    coeff_sd = scale * (n - 1) / tau * soft
    coeff_ss = np.full((n, n), -scale / tau)
    np.fill_diagonal(coeff_ss, 0.0)
    d_s_a, d_s_b = _cosine_coefficient_grads(z_s, z_s, coeff_ss)
    d_s_neg, d_d = _cosine_coefficient_grads(z_s, z_d, coeff_sd)
    return d_s_a + d_s_b + d_s_neg, d_d


def loss_projection_grads(z_s: np.ndarray, z_d: np.ndarray, loss_kind: str, tau: float):
    """Analytic d(loss)/d(projected embeddings) for either loss variant."""
    if loss_kind == "scloss":
        return _scloss_projection_grads(z_s, z_d, tau)
    if loss_kind == "scloss_alt":
        d_s1, d_d1 = _scloss_projection_grads(z_s, z_d, tau, weight=0.5)
        d_d2, d_s2 = _scloss_projection_grads(z_d, z_s, tau, weight=0.5)
        return d_s1 + d_s2, d_d1 + d_d2
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def evaluate_loss(loss_kind: str, z_s: np.ndarray, z_d: np.ndarray, tau: float) -> float:
    if loss_kind == "scloss":
        return losses.scloss(z_s, z_d, tau)
    if loss_kind == "scloss_alt":
        return losses.scloss_alt(z_s, z_d, tau)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def check_batch_sizes(n_similar: int, n_dissimilar: int, loss_kind: str) -> bool:
    """Whether a batch can train the given loss."""
    if loss_kind == "scloss":
        return n_similar >= 2 and n_dissimilar >= 1
    if loss_kind == "scloss_alt":
        return n_similar >= 2 and n_dissimilar >= 2
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def apply_gradients(net: ProjectionNet, grads, opt: OptimizerState) -> None:
    """One optimizer step in place."""
    if opt.method == "sgd":
        for layer, (d_w, d_b) in zip(net.layers, grads):
            layer.weights -= opt.learning_rate * d_w
            layer.bias -= opt.learning_rate * d_b
        return
    opt.timestep += 1
    t = opt.timestep
    b1, b2 = opt.beta1, opt.beta2
    for i, (layer, (d_w, d_b)) in enumerate(zip(net.layers, grads)):
        m_w, m_b = opt.moment1[i]
        v_w, v_b = opt.moment2[i]
        m_w += (1 - b1) * (d_w - m_w)
        m_b += (1 - b1) * (d_b - m_b)
        v_w += (1 - b2) * (d_w**2 - v_w)
        v_b += (1 - b2) * (d_b**2 - v_b)
        correction1 = 1 - b1**t
        correction2 = 1 - b2**t
        layer.weights -= opt.learning_rate * (m_w / correction1) / (
            np.sqrt(v_w / correction2) + opt.eps)
        layer.bias -= opt.learning_rate * (m_b / correction1) / (
            np.sqrt(v_b / correction2) + opt.eps)


def train_step(net: ProjectionNet, similar_batch, dissimilar_batch,
               cfg: TrainConfig, loss_kind: str, opt: OptimizerState) -> float:
    """One optimizer step on the selected loss; returns the pre-step loss."""
    x_s = np.atleast_2d(np.asarray(similar_batch, dtype=np.float64))
    x_d = np.atleast_2d(np.asarray(dissimilar_batch, dtype=np.float64))
    if not check_batch_sizes(x_s.shape[0], x_d.shape[0], loss_kind):
        raise BatchTooSmallError(
            f"{loss_kind} needs >=2 similar and >={2 if loss_kind == 'scloss_alt' else 1} "
            f"dissimilar, got {x_s.shape[0]} and {x_d.shape[0]}")
    pre_s, act_s = _forward_caches(net, x_s)
    pre_d, act_d = _forward_caches(net, x_d)
    z_s, z_d = act_s[-1], act_d[-1]
    loss_value = evaluate_loss(loss_kind, z_s, z_d, cfg.tau)
    d_zs, d_zd = loss_projection_grads(z_s, z_d, loss_kind, cfg.tau)
    grads_s = _backward(net, pre_s, act_s, d_zs)
    grads_d = _backward(net, pre_d, act_d, d_zd)
    grads = [(gw_s + gw_d, gb_s + gb_d)
             for (gw_s, gb_s), (gw_d, gb_d) in zip(grads_s, grads_d)]
    apply_gradients(net, grads, opt)
    return loss_value


def ntxent_loss(projections: np.ndarray, tau: float,
                include_positive_in_denominator: bool = True) -> float:
    """Noise-pair contrastive loss over 2B rows where row i pairs with i+B.

    Mean over all 2B anchors of the per-pair contrastive term against the
    rest of the batch.
    """
    value, _ = _ntxent_loss_and_coeffs(projections, tau, include_positive_in_denominator)
    return value


def _ntxent_loss_and_coeffs(z: np.ndarray, tau: float, include_positive: bool):
    total = z.shape[0]
    if total < 4 or total % 2 != 0:
        raise ValueError("need an even batch of at least 4 projections")
    half = total // 2
    partner = np.concatenate([np.arange(half, total), np.arange(half)])
    z_hat, _ = _unit_rows(z)
    logits = (z_hat @ z_hat.T) / tau
    allowed = ~np.eye(total, dtype=bool)
    if not include_positive:
        allowed[np.arange(total), partner] = False
    masked = np.where(allowed, logits, -np.inf)
    lse = logsumexp(masked, axis=1)
    pos_logits = logits[np.arange(total), partner]
    value = float(np.mean(lse - pos_logits))
    weight = 1.0 / total
    soft = np.exp(masked - lse[:, None])
    coeff = weight / tau * soft
    coeff[np.arange(total), partner] -= weight / tau
    return value, coeff


def pretrain(net: ProjectionNet, corpus_view, cfg: TrainConfig,
             noise_sigma: float = 0.1, batch_size: int = 32, steps: int = 500,
             weight_decay: float = 0.0,
             include_positive_in_denominator: bool = True) -> ProjectionNet:
    """Contrastive warm-up: positives are two noise perturbations of one row.

    Trains in place against the rest of the batch as negatives and returns
    the same network. steps=0 is a no-op.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps and batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    matrix = np.asarray(getattr(corpus_view, "matrix", corpus_view), dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    opt = init_optimizer(net, "adam", cfg.learning_rate)
    for _ in range(steps):
        rows = rng.choice(matrix.shape[0], size=min(batch_size, matrix.shape[0]),
                          replace=matrix.shape[0] < batch_size)
        base = matrix[rows]
        views = np.vstack([
            base + rng.normal(0.0, noise_sigma, size=base.shape),
            base + rng.normal(0.0, noise_sigma, size=base.shape),
        ])
        pre, act = _forward_caches(net, views)
        _, coeff = _ntxent_loss_and_coeffs(act[-1], cfg.tau,
                                           include_positive_in_denominator)
        d_z, d_z_b = _cosine_coefficient_grads(act[-1], act[-1], coeff)
        grads = _backward(net, pre, act, d_z + d_z_b)
        if weight_decay:
            grads = [(gw + weight_decay * layer.weights, gb)
                     for (gw, gb), layer in zip(grads, net.layers)]
        apply_gradients(net, grads, opt)
    return net


def save_checkpoint(net: ProjectionNet, path) -> None:
    """Layer shapes as JSON, parameters as base64 float64 little-endian."""
    payload = {
        "format": "projection-net-v1",
        "layers": [
            {
                "activation": layer.activation,
                "shape": list(layer.weights.shape),
                "weights": base64.b64encode(
                    layer.weights.astype("<f8").tobytes()).decode("ascii"),
                "bias": base64.b64encode(
                    layer.bias.astype("<f8").tobytes()).decode("ascii"),
            }
            for layer in net.layers
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_checkpoint(path) -> ProjectionNet:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "projection-net-v1":
        raise ValueError(f"not a projection-net checkpoint: {path}")
    layers = []
    for spec in payload["layers"]:
        out_dim, in_dim = spec["shape"]
        weights = np.frombuffer(base64.b64decode(spec["weights"]), dtype="<f8")
        bias = np.frombuffer(base64.b64decode(spec["bias"]), dtype="<f8")
        layers.append(Layer(weights.reshape(out_dim, in_dim).copy(),
                            bias.copy(), spec["activation"]))
    return ProjectionNet(layers)
