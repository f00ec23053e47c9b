"""Regularization network: a small MLP with analytic gradients.

Architecture: input -> hidden1 -> hidden2 -> scalar head, ReLU on the
hidden layers, softplus on the head scaled by alpha_scale so the output
is a strictly positive regularization parameter:

    alpha = alpha_scale * softplus(w3 . relu(W2 relu(W1 x + b1) + b2) + b3)

Inputs are projected-pattern moduli divided by u_scale.  Gradients are
exact reverse-mode; the ReLU subgradient at exactly zero preactivation
is taken as 0.  The optimizer is Adam (beta1=0.9, beta2=0.999, eps=1e-8).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, NumericalFailure

__all__ = [
    "RegNet",
    "Grads",
    "OptimState",
    "init",
    "forward",
    "forward_batch",
    "backward",
    "backward_batch",
    "step",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class RegNet:
    """MLP parameters plus the input/output scaling constants."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: float
    alpha_scale: float
    u_scale: float
    rng_seed: int

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dims(self) -> tuple[int, int]:
        return self.W1.shape[0], self.W2.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2, self.w3, np.atleast_1d(self.b3)]

    def copy(self) -> "RegNet":
        return replace(
            self,
            W1=self.W1.copy(),
            b1=self.b1.copy(),
            W2=self.W2.copy(),
            b2=self.b2.copy(),
            w3=self.w3.copy(),
        )


@dataclass
class Grads:
    """Parameter gradients matching RegNet's layout."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: float

    def as_list(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2, self.w3, np.atleast_1d(self.b3)]


def init(input_dim: int, hidden: tuple[int, int], alpha_scale: float, seed: int,
         u_scale: float = 1.0) -> RegNet:
    """He-initialized network; biases zero; deterministic per seed (Philox)."""
    h1, h2 = hidden
    if min(input_dim, h1, h2) < 1:
        raise ValueError("all layer dimensions must be >= 1")
    if alpha_scale <= 0 or u_scale <= 0:
        raise ValueError("scales must be > 0")
    rng = np.random.Generator(np.random.Philox(seed))
    w1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), (h1, input_dim))
    w2 = rng.normal(0.0, np.sqrt(2.0 / h1), (h2, h1))
    w3 = rng.normal(0.0, np.sqrt(2.0 / h2), h2)
    return RegNet(
        W1=w1, b1=np.zeros(h1),
        W2=w2, b2=np.zeros(h2),
        w3=w3, b3=0.0,
        alpha_scale=alpha_scale, u_scale=u_scale, rng_seed=seed,
    )


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(np.asarray(z, dtype=float))
    z = np.asarray(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_batch(net: RegNet, x: np.ndarray):
    """Forward pass over a batch, x shape (n, input_dim).

    Returns (alphas (n,), cache) with strictly positive alphas.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionMismatch(f"input has shape {x.shape}, expected (n, {net.input_dim})")
    z1 = x @ net.W1.T + net.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ net.W2.T + net.b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ net.w3 + net.b3
    alphas = net.alpha_scale * _softplus(z3)
    cache = (x, z1, a1, z2, a2, z3)
    return alphas, cache


def forward(net: RegNet, x: np.ndarray):
    """Single-pattern forward pass; returns (alpha, cache)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise DimensionMismatch(f"input has shape {x.shape}, expected ({net.input_dim},)")
    alphas, cache = forward_batch(net, x[None, :])
    return float(alphas[0]), cache


def backward_batch(net: RegNet, cache, dL_dalpha: np.ndarray) -> Grads:
    """Exact gradients of sum_i dL_dalpha[i] * alpha_i w.r.t. parameters."""
    x, z1, a1, z2, a2, z3 = cache
    dL_dalpha = np.asarray(dL_dalpha, dtype=float)
    dz3 = dL_dalpha * net.alpha_scale * _sigmoid(z3)
    dw3 = dz3 @ a2
    db3 = float(np.sum(dz3))
    da2 = np.outer(dz3, net.w3)
    dz2 = da2 * (z2 > 0.0)
    dW2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ net.W2
    dz1 = da1 * (z1 > 0.0)
    dW1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return Grads(W1=dW1, b1=db1, W2=dW2, b2=db2, w3=dw3, b3=db3)


def backward(net: RegNet, cache, dL_dalpha: float) -> Grads:
    """Gradients for a single-pattern forward cache."""
    return backward_batch(net, cache, np.asarray([dL_dalpha], dtype=float))


@dataclass
class OptimState:
    """Adam moment accumulators, one pair per parameter tensor."""

    lr: float
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_net(cls, net: RegNet, lr: float) -> "OptimState":
        state = cls(lr=lr)
        for p in net.params():
            state.m.append(np.zeros_like(np.asarray(p, dtype=float)))
            state.v.append(np.zeros_like(np.asarray(p, dtype=float)))
        return state


def step(net: RegNet, optim: OptimState, grads: Grads) -> RegNet:
    """One Adam update, in place; returns the net for chaining.

    Raises NumericalFailure on non-finite gradients.
    """
    glist = grads.as_list()
    for g in glist:
        if not np.all(np.isfinite(g)):
            raise NumericalFailure("non-finite gradient")
    optim.step_count += 1
    t = optim.step_count
    bc1 = 1.0 - optim.beta1 ** t
    bc2 = 1.0 - optim.beta2 ** t
    updates = []
    for i, g in enumerate(glist):
        optim.m[i] = optim.beta1 * optim.m[i] + (1.0 - optim.beta1) * g
        optim.v[i] = optim.beta2 * optim.v[i] + (1.0 - optim.beta2) * g * g
        m_hat = optim.m[i] / bc1
        v_hat = optim.v[i] / bc2
        updates.append(optim.lr * m_hat / (np.sqrt(v_hat) + optim.eps))
    net.W1 -= updates[0]
    net.b1 -= updates[1]
    net.W2 -= updates[2]
    net.b2 -= updates[3]
    net.w3 -= updates[4]
    net.b3 -= float(updates[5][0])
    return net
