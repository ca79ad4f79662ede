"""Residual network with a smoothed ReLU and adjoint gradients.

Layer recursion (columns of ``Y`` are samples)::

    y_1 = tau * sigma(K_0 y_0 + b_0)
    y_l = y_{l-1} + tau * sigma(K_{l-1} y_{l-1} + b_{l-1}),   1 < l <= L-1
    y_L = K_{L-1} y_{L-1}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ScalerParams, apply_scalers, invert_scalers
from .errors import NumericError, ShapeError

L1_SMOOTHING = 1e-8


def smooth_relu(x, eps=0.1):
    """ReLU with the kink replaced by a quadratic on ``|x| <= eps``."""
    x = np.asarray(x, dtype=float)
    inner = x * x / (4.0 * eps) + 0.5 * x + 0.25 * eps
    return np.where(np.abs(x) <= eps, inner, np.maximum(x, 0.0))


def smooth_relu_prime(x, eps=0.1):
    x = np.asarray(x, dtype=float)
    inner = x / (2.0 * eps) + 0.5
    return np.where(np.abs(x) <= eps, inner, (x > 0).astype(float))


def default_tau(depth, convention="layers"):
    """Skip parameter ``2 / (L - 1)``.

    ``convention="layers"`` reads ``L`` as the recursion's layer count;
    ``"hidden"`` reads it as the number of hidden layers (``depth - 1``).
    """
    L = depth if convention == "layers" else depth - 1
    if L <= 1:
        return 1.0
    return 2.0 / (L - 1)


@dataclass
class ResNetParams:
    weights: list[np.ndarray]  # K_0 .. K_{L-1}
    biases: list[np.ndarray]  # b_0 .. b_{L-2}
    tau: float
    eps: float = 0.1

    def __post_init__(self):
        self.weights = [np.atleast_2d(np.asarray(K, dtype=float)) for K in self.weights]
        self.biases = [np.atleast_1d(np.asarray(b, dtype=float)) for b in self.biases]
        if len(self.weights) < 2:
            raise ShapeError("a network needs at least two layers")
        if len(self.biases) != len(self.weights) - 1:
            raise ShapeError("need one bias per layer except the output layer")
        for l, (K, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (K.shape[0],):
                raise ShapeError(f"bias {l} has shape {b.shape}, expected ({K.shape[0]},)")
        for l in range(1, len(self.weights)):
            if self.weights[l].shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(f"weight {l} does not chain with weight {l - 1}")
        for l in range(1, len(self.weights) - 1):
            if self.weights[l].shape[0] != self.weights[l].shape[1]:
                raise ShapeError("hidden layers must keep their width")
        if not self.tau > 0 or not self.eps > 0:
            raise ValueError("tau and eps must be positive")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [K.shape[0] for K in self.weights]

    @property
    def n_params(self) -> int:
        return sum(K.size for K in self.weights) + sum(b.size for b in self.biases)

    def flatten(self) -> np.ndarray:
        parts = []
        for l, K in enumerate(self.weights):
            parts.append(K.ravel())
            if l < len(self.biases):
                parts.append(self.biases[l])
        return np.concatenate(parts)

    def with_flat(self, theta) -> ResNetParams:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {theta.size}")
        weights, biases, pos = [], [], 0
        for l, K in enumerate(self.weights):
            weights.append(theta[pos : pos + K.size].reshape(K.shape))
            pos += K.size
            if l < len(self.biases):
                n = self.biases[l].size
                biases.append(theta[pos : pos + n])
                pos += n
        return ResNetParams(weights, biases, self.tau, self.eps)

    @classmethod
    def initialize(cls, widths, tau=None, eps=0.1, seed=0):
        """Uniform weights in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, zero biases."""
        widths = list(widths)
        if len(widths) < 3:
            raise ShapeError("widths must list input, at least one hidden, and output sizes")
        rng = np.random.default_rng(seed)
        weights = []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            r = 1.0 / np.sqrt(n_in)
            weights.append(rng.uniform(-r, r, size=(n_out, n_in)))
        biases = [np.zeros(n) for n in widths[1:-1]]
        depth = len(widths) - 1
        return cls(weights, biases, default_tau(depth) if tau is None else tau, eps)

    def to_dict(self) -> dict:
        return {
            "widths": self.widths,
            "depth": self.depth,
            "hidden_layers": self.depth - 1,
            "tau": self.tau,
            "eps": self.eps,
            "weights": [K.ravel().tolist() for K in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d) -> ResNetParams:
        widths = d["widths"]
        weights = [np.array(w, dtype=float).reshape(widths[l + 1], widths[l]) for l, w in enumerate(d["weights"])]
        biases = [np.array(b, dtype=float) for b in d["biases"]]
        return cls(weights, biases, float(d["tau"]), float(d["eps"]))


def _forward_states(params: ResNetParams, Y0):
    """All layer states and pre-activations for a batch ``Y0`` of shape (n_0, N)."""
    if Y0.shape[0] != params.widths[0]:
        raise ShapeError(f"input has {Y0.shape[0]} rows, network expects {params.widths[0]}")
    L = params.depth
    Ys, Zs = [Y0], []
    for l in range(L - 1):
        Z = params.weights[l] @ Ys[-1] + params.biases[l][:, None]
        Zs.append(Z)
        step = params.tau * smooth_relu(Z, params.eps)
        Ys.append(step if l == 0 else Ys[-1] + step)
        if not np.all(np.isfinite(Ys[-1])):
            raise NumericError("non-finite activations", layer=l + 1)
    Ys.append(params.weights[-1] @ Ys[-1])
    if not np.all(np.isfinite(Ys[-1])):
        raise NumericError("non-finite network output", layer=L)
    return Ys, Zs


def forward(params: ResNetParams, y0):
    """Network output for one input vector or a batch of rows.

    A 1-D ``y0`` returns a 1-D output; a 2-D ``(N, n_0)`` array returns
    ``(N, n_L)``.
    """
    y0 = np.asarray(y0, dtype=float)
    single = y0.ndim == 1
    Y0 = y0[:, None] if single else y0.T
    Ys, _ = _forward_states(params, Y0)
    out = Ys[-1]
    return out[:, 0] if single else out.T


def regularization(theta, lam, l1=True):
    """``(lam/2)(sum sqrt(theta^2 + mu^2) - mu + |theta|^2)`` and its gradient."""
    if lam == 0:
        return 0.0, np.zeros_like(theta)
    value = np.dot(theta, theta)
    grad = 2.0 * theta
    if l1:
        root = np.sqrt(theta * theta + L1_SMOOTHING**2)
        value += np.sum(root - L1_SMOOTHING)
        grad = grad + theta / root
    return 0.5 * lam * value, 0.5 * lam * grad


def loss_and_gradient(params: ResNetParams, inputs, targets, lam=0.0, l1=True):
    """Regularized least-squares loss and its gradient by reverse accumulation.

    ``inputs`` is (N, n_0) and ``targets`` is (N, n_L) or (N,) for scalar
    outputs.  The gradient is returned flattened in ``params.flatten()`` order.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    T = np.asarray(targets, dtype=float).reshape(X.shape[0], -1)
    N = X.shape[0]
    if N == 0:
        raise ValueError("empty batch")
    Ys, Zs = _forward_states(params, X.T)
    R = Ys[-1] - T.T
    J = 0.5 * np.sum(R * R) / N

    L = params.depth
    gK = [None] * L
    gb = [None] * (L - 1)
    G = R / N
    gK[L - 1] = G @ Ys[L - 1].T
    P = params.weights[L - 1].T @ G
    for l in range(L - 2, -1, -1):
        D = params.tau * smooth_relu_prime(Zs[l], params.eps) * P
        gK[l] = D @ Ys[l].T
        gb[l] = D.sum(axis=1)
        back = params.weights[l].T @ D
        P = back if l == 0 else P + back

    parts = []
    for l in range(L):
        parts.append(gK[l].ravel())
        if l < L - 1:
            parts.append(gb[l])
    grad = np.concatenate(parts)
    reg, reg_grad = regularization(params.flatten(), lam, l1)
    if not np.isfinite(J):
        raise NumericError("non-finite loss")
    return J + reg, grad + reg_grad


def mse(params, inputs, targets) -> float:
    out = forward(params, np.atleast_2d(inputs))
    T = np.asarray(targets, dtype=float).reshape(out.shape)
    return float(np.mean((out - T) ** 2))


@dataclass
class ParallelSurrogate:
    """One scalar-output network per state channel, sharing input scalers.

    Inputs carry the full state plus dt; ``networks`` may cover a subset of
    the state channels, but only a complete set can be time-marched.
    """

    networks: list[ResNetParams]
    input_scalers: tuple[ScalerParams, ...]
    target_scalers: tuple[ScalerParams, ...]
    approach: str
    dt: float
    channels: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.networks) != len(self.target_scalers):
            raise ShapeError("one network per target channel is required")
        for net in self.networks:
            if net.widths[0] != len(self.input_scalers) or net.widths[-1] != 1:
                raise ShapeError("every network maps the full input to one output")

    @property
    def n_channels(self) -> int:
        return len(self.networks)

    def predict_scaled(self, x_hat):
        x_hat = np.atleast_2d(x_hat)
        return np.column_stack([forward(net, x_hat)[:, 0] for net in self.networks])

    def predict(self, u, dt=None):
        """Physical-unit network output for physical states ``u`` (one or many)."""
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        U = np.atleast_2d(u)
        dt = self.dt if dt is None else dt
        X = np.column_stack([U, np.full(U.shape[0], dt)])
        out = invert_scalers(self.target_scalers, self.predict_scaled(apply_scalers(self.input_scalers, X)))
        return out[0] if single else out
