"""Feedforward network with logistic activations, trained by backprop.

Full-batch gradient descent on the mean squared error with momentum and an
adaptive learning rate: steps that raise the MSE beyond a small relative
threshold are rejected (learning rate shrinks, momentum resets), all other
steps are kept (learning rate grows, capped).  The returned history carries
the snapshot with the smallest testing-set MSE, which is the network the
experiments actually deploy.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .quantum import NumericError, ValidationError
from .seeding import substream


class TrainingError(NumericError):
    pass


def sigmoid(x):
    """Logistic 1/(1+exp(-x)), overflow-safe on both tails."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Normalizer:
    """Per-element affine map onto [-1, 1] using training-set extrema.

    Inputs outside the fitted range extrapolate linearly; constant elements
    map to 0 (with a warning at fit time).
    """

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalizer":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValidationError("normalizer needs a (N>=2, d) training matrix")
        lo = x.min(axis=0)
        hi = x.max(axis=0)
        flat = hi <= lo
        if np.any(flat):
            warnings.warn(
                f"normalizer: constant input element(s) {np.nonzero(flat)[0].tolist()} map to 0"
            )
        return cls(lo, hi)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = self.hi - self.lo
        out = np.zeros_like(x)
        ok = span > 0
        out[..., ok] = 2.0 * (x[..., ok] - self.lo[ok]) / span[ok] - 1.0
        return out

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


@dataclass
class MlpNetwork:
    """Weights/biases per neuron layer; sigmoid at every layer incl. output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def mlp_init(layer_sizes, rng_seed: int) -> MlpNetwork:
    """Uniform [-0.5, 0.5] weights, zero biases, deterministic per seed."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValidationError(f"invalid layer sizes {sizes}")
    rng = substream(rng_seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.uniform(-0.5, 0.5, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpNetwork(weights, biases)


def mlp_forward(net: MlpNetwork, x: np.ndarray) -> np.ndarray:
    """Network output for one pre-normalized input vector (or a batch)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.layer_sizes[0]:
        raise ValidationError(
            f"input length {a.shape[1]} != input layer size {net.layer_sizes[0]}")
    for w, b in zip(net.weights, net.biases):
        a = sigmoid(a @ w + b)
    return a[0] if single else a


def _forward_all(net: MlpNetwork, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    for w, b in zip(net.weights, net.biases):
        acts.append(sigmoid(acts[-1] @ w + b))
    return acts


def mse(net: MlpNetwork, x: np.ndarray, y: np.ndarray, normalizer: Normalizer) -> float:
    """(1/N) sum_k ||net(x_k) - y_k||^2 over raw (unnormalized) inputs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise ValidationError("sample set is empty")
    out = mlp_forward(net, normalizer.apply(x))
    diff = out - y
    return float(np.sum(diff * diff) / x.shape[0])


def _gradients(net: MlpNetwork, xn: np.ndarray, y: np.ndarray):
    """Full-batch MSE gradients; returns (grad_w, grad_b, mse_value)."""
    n_samples = xn.shape[0]
    acts = _forward_all(net, xn)
    diff = acts[-1] - y
    mse_val = float(np.sum(diff * diff) / n_samples)
    delta = (2.0 / n_samples) * diff * acts[-1] * (1.0 - acts[-1])
    grad_w = [np.empty(0)] * len(net.weights)
    grad_b = [np.empty(0)] * len(net.biases)
    for layer in range(len(net.weights) - 1, -1, -1):
        grad_w[layer] = acts[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer].T) * acts[layer] * (1.0 - acts[layer])
    return grad_w, grad_b, mse_val


def classify(net: MlpNetwork, x: np.ndarray, normalizer: Normalizer) -> int:
    """1-based argmax of the output vector; ties go to the lowest index."""
    out = mlp_forward(net, normalizer.apply(np.asarray(x, dtype=float)))
    return int(np.argmax(out)) + 1


def classify_batch(net: MlpNetwork, x: np.ndarray, normalizer: Normalizer) -> np.ndarray:
    out = mlp_forward(net, normalizer.apply(np.asarray(x, dtype=float)))
    return np.argmax(out, axis=1) + 1


def success_rate(net: MlpNetwork, x: np.ndarray, y: np.ndarray,
                 normalizer: Normalizer) -> float:
    """Fraction of samples whose predicted choice matches the target one-hot."""
    pred = classify_batch(net, x, normalizer)
    truth = np.argmax(np.asarray(y, dtype=float), axis=1) + 1
    return float(np.mean(pred == truth))


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    lr_up: float = 1.05
    lr_down: float = 0.7
    lr_max: float = 10.0
    max_rise: float = 0.04
    max_iters: int = 10_000
    eval_every: int = 10

    def __post_init__(self):
        if not (self.lr_up > 1.0 > self.lr_down > 0.0):
            raise ValidationError("need lr_up > 1 > lr_down > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.lr0 <= 0 or self.max_iters < 1 or self.eval_every < 1:
            raise ValidationError("invalid training configuration")


@dataclass
class TrainHistory:
    """Learning curves at eval points plus the best-on-test snapshot."""

    iterations: np.ndarray
    train_mse: np.ndarray
    test_mse: np.ndarray
    train_rate: np.ndarray
    test_rate: np.ndarray
    best_iteration: int
    best_test_mse: float
    best_net: MlpNetwork
    normalizer: Normalizer
    final_lr: float = field(default=0.0)


def mlp_train(net: MlpNetwork, train_set, test_set, cfg: TrainConfig) -> TrainHistory:
    """Full-batch adaptive-rate momentum training on the MSE.

    ``train_set``/``test_set`` are (X, Y) pairs with raw inputs; the
    normalizer is fitted on the training inputs only.  The network is
    trained in place; the history's ``best_net`` is the testing-set-MSE
    minimizer over the evaluation grid.
    """
    x_train, y_train = (np.asarray(a, dtype=float) for a in train_set)
    x_test, y_test = (np.asarray(a, dtype=float) for a in test_set)
    if x_train.shape[0] == 0 or x_test.shape[0] == 0:
        raise ValidationError("training and testing sets must be non-empty")
    if x_train.shape[0] == 1:
        # degenerate but legal: a lone sample pins every input element to 0
        normalizer = Normalizer(x_train[0].copy(), x_train[0].copy())
    else:
        normalizer = Normalizer.fit(x_train)
    xn_train = normalizer.apply(x_train)
    xn_test = normalizer.apply(x_test)

    lr = cfg.lr0
    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    grad_w, grad_b, current_mse = _gradients(net, xn_train, y_train)

    its, tr_mse, te_mse, tr_rate, te_rate = [], [], [], [], []
    best_net = net.copy()
    best_test = np.inf
    best_iter = 0

    def evaluate(iteration: int):
        nonlocal best_net, best_test, best_iter
        out_tr = net_forward_cached(xn_train)
        out_te = net_forward_cached(xn_test)
        m_tr = float(np.sum((out_tr - y_train) ** 2) / xn_train.shape[0])
        m_te = float(np.sum((out_te - y_test) ** 2) / xn_test.shape[0])
        its.append(iteration)
        tr_mse.append(m_tr)
        te_mse.append(m_te)
        tr_rate.append(float(np.mean(
            np.argmax(out_tr, axis=1) == np.argmax(y_train, axis=1))))
        te_rate.append(float(np.mean(
            np.argmax(out_te, axis=1) == np.argmax(y_test, axis=1))))
        if m_te < best_test:
            best_test = m_te
            best_iter = iteration
            best_net = net.copy()

    def net_forward_cached(xn):
        a = xn
        for w, b in zip(net.weights, net.biases):
            a = sigmoid(a @ w + b)
        return a

    evaluate(0)
    for iteration in range(1, cfg.max_iters + 1):
        for w, v, g in zip(net.weights, vel_w, grad_w):
            v *= cfg.momentum
            v -= lr * g
            w += v
        for b, v, g in zip(net.biases, vel_b, grad_b):
            v *= cfg.momentum
            v -= lr * g
            b += v
        new_grad_w, new_grad_b, new_mse = _gradients(net, xn_train, y_train)
        if not np.isfinite(new_mse):
            raise TrainingError(f"training diverged at iteration {iteration}")
        if new_mse > current_mse * (1.0 + cfg.max_rise):
            # reject: undo the step, cool the rate, drop the momentum memory
            for w, v in zip(net.weights, vel_w):
                w -= v
            for b, v in zip(net.biases, vel_b):
                b -= v
            for v in vel_w + vel_b:
                v[...] = 0.0
            lr *= cfg.lr_down
        else:
            grad_w, grad_b, current_mse = new_grad_w, new_grad_b, new_mse
            lr = min(lr * cfg.lr_up, cfg.lr_max)
        if iteration % cfg.eval_every == 0 or iteration == cfg.max_iters:
            evaluate(iteration)

    return TrainHistory(
        iterations=np.asarray(its), train_mse=np.asarray(tr_mse),
        test_mse=np.asarray(te_mse), train_rate=np.asarray(tr_rate),
        test_rate=np.asarray(te_rate), best_iteration=best_iter,
        best_test_mse=float(best_test), best_net=best_net,
        normalizer=normalizer, final_lr=lr,
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_MLP_FORMAT = "qlyap-mlp"
_FORMAT_VERSION = 1


def save_mlp(path, net: MlpNetwork, normalizer: Normalizer) -> None:
    doc = {
        "format": _MLP_FORMAT,
        "version": _FORMAT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "normalizer": normalizer.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_mlp(path) -> tuple[MlpNetwork, Normalizer]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _MLP_FORMAT or doc.get("version") != _FORMAT_VERSION:
        raise ValidationError(f"not a {_MLP_FORMAT} v{_FORMAT_VERSION} document: {path}")
    net = MlpNetwork([np.asarray(w, dtype=float) for w in doc["weights"]],
                     [np.asarray(b, dtype=float) for b in doc["biases"]])
    if list(net.layer_sizes) != doc["layer_sizes"]:
        raise ValidationError("stored layer sizes do not match the weight shapes")
    return net, Normalizer.from_dict(doc["normalizer"])
