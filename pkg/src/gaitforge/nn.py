"""Dense networks with reverse-mode gradients, Adam, and policy heads.

Everything runs in 64-bit floats; networks are small enough that exactness
beats speed, and it removes tolerance ambiguity from the gradient checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


@dataclass
class MlpParams:
    """Fully connected network: tanh hidden layers, linear output."""

    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def create(cls, sizes: list[int], rng: np.random.Generator,
               final_scale: float = 1.0) -> "MlpParams":
        """Scaled-uniform fan-in init; the last layer can be shrunk so initial
        policy outputs hug zero."""
        weights, biases = [], []
        for li in range(len(sizes) - 1):
            fan_in = sizes[li]
            bound = math.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, sizes[li + 1]))
            b = np.zeros(sizes[li + 1])
            if li == len(sizes) - 2:
                w *= final_scale
            weights.append(w)
            biases.append(b)
        return cls(list(sizes), weights, biases)

    def flat_params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.flat_params()]


def forward(p: MlpParams, x: np.ndarray, return_cache: bool = False):
    """Evaluate the network; x may be a vector or a (batch, in) matrix."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != p.sizes[0]:
        raise ValueError(f"input size {h.shape[1]} != expected {p.sizes[0]}")
    cache = [h]
    n_layers = len(p.weights)
    for li in range(n_layers):
        z = h @ p.weights[li] + p.biases[li]
        h = np.tanh(z) if li < n_layers - 1 else z
        cache.append(h)
    out = h[0] if squeeze else h
    if return_cache:
        return out, cache
    return out


def backward(p: MlpParams, cache: list[np.ndarray], grad_out: np.ndarray):
    """Exact reverse-mode gradients given the forward cache.

    Returns ([dW0, db0, dW1, db1, ...], grad_input).
    """
    g = np.asarray(grad_out, dtype=float)
    squeeze = g.ndim == 1
    if squeeze:
        g = g[None, :]
    grads = []
    n_layers = len(p.weights)
    for li in reversed(range(n_layers)):
        h_in = cache[li]
        if li < n_layers - 1:
            # cache[li+1] holds tanh(z); d tanh = 1 - tanh^2
            g = g * (1.0 - cache[li + 1] ** 2)
        grads.append(np.sum(g, axis=0))        # bias
        grads.append(h_in.T @ g)               # weight
        g = g @ p.weights[li].T
    grads.reverse()
    grad_in = g[0] if squeeze else g
    return grads, grad_in


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian with a state-independent learnable log std."""

    mean_net: MlpParams
    log_std: np.ndarray

    @classmethod
    def create(cls, sizes: list[int], rng: np.random.Generator,
               init_log_std: float = -1.0) -> "GaussianPolicy":
        net = MlpParams.create(sizes, rng, final_scale=0.01)
        return cls(net, np.full(sizes[-1], init_log_std))

    def clamp_log_std(self):
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def sample(self, state: np.ndarray, rng: np.random.Generator):
        """Draw an action and its exact log density (pre-clamp)."""
        mean = forward(self.mean_net, state)
        std = np.exp(self.log_std)
        z = rng.standard_normal(mean.shape[-1])
        action = mean + std * z
        return action, self.log_prob(mean, action)

    def log_prob(self, mean: np.ndarray, action: np.ndarray) -> float:
        std = np.exp(self.log_std)
        z = (action - mean) / std
        return float(-0.5 * np.sum(z**2) - np.sum(self.log_std)
                     - 0.5 * len(std) * math.log(2.0 * math.pi))

    def log_prob_batch(self, means: np.ndarray, actions: np.ndarray) -> np.ndarray:
        std = np.exp(self.log_std)
        z = (actions - means) / std
        return (-0.5 * np.sum(z**2, axis=1) - np.sum(self.log_std)
                - 0.5 * means.shape[1] * math.log(2.0 * math.pi))

    def entropy(self) -> float:
        return float(np.sum(self.log_std) +
                     0.5 * len(self.log_std) * (1.0 + math.log(2.0 * math.pi)))


def log_prob_and_sample(policy: GaussianPolicy, state: np.ndarray,
                        rng: np.random.Generator):
    return policy.sample(state, rng)


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for one parameter list."""

    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_update(params: list[np.ndarray], grads: list[np.ndarray],
                state: AdamState, lr: float) -> None:
    """One in-place Adam step (gradient-descent direction)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
