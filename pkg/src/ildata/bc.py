"""Behavioral cloning with a from-scratch tanh MLP trained by minibatch Adam.

The policy is deterministic and fit by mean squared error, which is the
negative log-likelihood of a fixed-variance Gaussian action model up to
constants.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-8


@dataclass
class MlpPolicy:
    layer_sizes: list[int]
    weights: list[np.ndarray]  # weights[i] has shape (layer_sizes[i], layer_sizes[i + 1])
    biases: list[np.ndarray]
    input_mean: np.ndarray
    input_std: np.ndarray

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(n < 1 for n in self.layer_sizes):
            raise ValueError("layer_sizes needs input and output sizes, all positive")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias vector per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {i}: expected weight {shape}, got {w.shape} / bias {b.shape}")
        self.input_mean = np.asarray(self.input_mean, dtype=np.float64)
        self.input_std = np.maximum(np.asarray(self.input_std, dtype=np.float64), STD_FLOOR)

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator, input_mean=None, input_std=None) -> MlpPolicy:
        """Glorot-uniform weights, zero biases."""
        layer_sizes = [int(n) for n in layer_sizes]
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        d = layer_sizes[0]
        return cls(
            layer_sizes, weights, biases,
            np.zeros(d) if input_mean is None else input_mean,
            np.ones(d) if input_std is None else input_std,
        )

    @property
    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def __call__(self, state) -> np.ndarray:
        return predict(self, state)


def _forward(policy: MlpPolicy, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, starting with the normalized input."""
    h = (x - policy.input_mean) / policy.input_std
    acts = [h]
    last = len(policy.weights) - 1
    for i, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def predict(policy: MlpPolicy, state) -> np.ndarray:
    """Action for one state (1-D input) or a batch of states (2-D input)."""
    x = np.asarray(state, dtype=np.float64)
    if x.shape[-1] != policy.layer_sizes[0] or x.ndim not in (1, 2):
        raise ValueError(f"state shape {x.shape} does not match input size {policy.layer_sizes[0]}")
    return _forward(policy, x)[-1]


def loss_and_gradient(policy: MlpPolicy, states, actions) -> tuple[float, list[np.ndarray]]:
    """MSE over batch and action dimensions, and its gradient.

    The gradient list is ordered like :attr:`MlpPolicy.params`
    (w0, b0, w1, b1, ...).
    """
    x = np.asarray(states, dtype=np.float64)
    y = np.asarray(actions, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or len(x) != len(y) or len(x) == 0:
        raise ValueError("states and actions must be nonempty 2-D arrays of equal length")
    if x.shape[1] != policy.layer_sizes[0] or y.shape[1] != policy.layer_sizes[-1]:
        raise ValueError("batch dimensions do not match the network")
    acts = _forward(policy, x)
    err = acts[-1] - y
    loss = float(np.mean(err * err))
    delta = 2.0 * err / err.size
    grads: list[np.ndarray] = []
    for i in range(len(policy.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[i].T @ delta)
        if i > 0:
            delta = (delta @ policy.weights[i].T) * (1.0 - acts[i] ** 2)
    grads.reverse()
    return loss, grads


@dataclass
class TrainConfig:
    hidden_sizes: list[int] = field(default_factory=lambda: [64, 64])
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 256
    seed: int = 0
    # extend training past ``epochs`` until at least this many updates ran
    min_updates: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        if self.min_updates < 0:
            raise ValueError("min_updates must be nonnegative")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_arrays(states: np.ndarray, actions: np.ndarray, config: TrainConfig,
                 history: list | None = None) -> MlpPolicy:
    """Fit a policy on stacked (state, action) pairs.

    If ``history`` is given, the full-data loss before training and after
    every epoch is appended to it.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    sizes = [states.shape[1], *config.hidden_sizes, actions.shape[1]]
    policy = MlpPolicy.init(sizes, rng, states.mean(axis=0), states.std(axis=0))
    opt = Adam(policy.params, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    n = len(states)
    batches_per_epoch = math.ceil(n / config.batch_size)
    epochs = max(config.epochs, math.ceil(config.min_updates / batches_per_epoch))
    if history is not None:
        history.append(loss_and_gradient(policy, states, actions)[0])
    for epoch in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            _, grads = loss_and_gradient(policy, states[idx], actions[idx])
            opt.step(grads)
        if history is not None:
            history.append(loss_and_gradient(policy, states, actions)[0])
    log.debug("trained on %d pairs for %d epochs", n, epochs)
    return policy


def train(dataset: Dataset, config: TrainConfig, history: list | None = None) -> MlpPolicy:
    dataset.validate()
    states, actions, _ = dataset.flat()
    return train_arrays(states, actions, config, history)


def save_policy(policy: MlpPolicy, path) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "activation": "tanh",
        "layer_sizes": policy.layer_sizes,
        "weights": [w.tolist() for w in policy.weights],
        "biases": [b.tolist() for b in policy.biases],
        "input_mean": policy.input_mean.tolist(),
        "input_std": policy.input_std.tolist(),
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_policy(path) -> MlpPolicy:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    return MlpPolicy(
        [int(n) for n in doc["layer_sizes"]],
        [np.array(w, dtype=np.float64).reshape(a, b)
         for w, a, b in zip(doc["weights"], doc["layer_sizes"][:-1], doc["layer_sizes"][1:])],
        [np.array(b, dtype=np.float64) for b in doc["biases"]],
        np.array(doc["input_mean"], dtype=np.float64),
        np.array(doc["input_std"], dtype=np.float64),
    )
