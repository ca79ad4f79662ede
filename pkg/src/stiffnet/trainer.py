"""BFGS training of the per-channel ResNets with validation patience."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.linalg import blas

from . import resnet
from .errors import NumericError, OptimizationError, TrainingError

THREADS_ENV = "STIFFNET_THREADS"


@dataclass(frozen=True)
class BFGSConfig:
    max_iters: int = 2000
    gtol: float = 1e-10
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    # dense inverse Hessian up to this many parameters, limited memory above
    lbfgs_threshold: int = 5000
    lbfgs_memory: int = 20

    def __post_init__(self):
        if not 0 < self.c1 < 1:
            raise ValueError("Armijo constant c1 must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass(frozen=True)
class TrainConfig(BFGSConfig):
    depth: int | tuple[int, ...] = 4
    width: int | tuple[int, ...] = 10
    lam: float = 1e-7
    l1: bool = True
    patience: int = 400
    init_seed: int = 0
    tau: float | None = None
    tau_convention: str = "layers"
    eps: float = 0.1

    def __post_init__(self):
        super().__post_init__()
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if self.tau_convention not in ("layers", "hidden"):
            raise ValueError("tau_convention must be 'layers' or 'hidden'")

    def channel_value(self, name, channel):
        value = getattr(self, name)
        if isinstance(value, (list, tuple)):
            return int(value[channel])
        return int(value)

    @classmethod
    def from_dict(cls, d) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training option(s): {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    step: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    stop_reason: str = ""
    resets: int = 0
    best_index: int | None = None

    def record(self, f, g_norm, step, val=float("nan")):
        self.train_loss.append(float(f))
        self.grad_norm.append(float(g_norm))
        self.step.append(float(step))
        self.val_loss.append(float(val))

    def __len__(self):
        return len(self.train_loss)

    def rows(self):
        return zip(range(len(self)), self.train_loss, self.val_loss, self.step, self.grad_norm)


class _DenseInverseHessian:
    """Symmetric inverse Hessian; only the upper triangle is stored and updated in place."""

    def __init__(self, n, H0=None):
        self.H = np.eye(n, order="F") if H0 is None else np.array(H0, dtype=float, order="F")
        self.identity = H0 is None

    def _apply(self, v):
        return blas.dsymv(1.0, self.H, v)

    def direction(self, g):
        return -self._apply(g)

    def reset(self):
        self.H = np.eye(self.H.shape[0], order="F")
        self.identity = True

    def update(self, s, y, sy):
        if self.identity:
            # scale the initial matrix to the observed curvature before the first update
            self.H *= sy / (y @ y)
            self.identity = False
        Hy = self._apply(y)
        yHy = y @ Hy
        self.H = blas.dsyr((sy + yHy) / sy**2, s, a=self.H, overwrite_a=1)
        self.H = blas.dsyr2(-1.0 / sy, Hy, s, a=self.H, overwrite_a=1)


class _LimitedInverseHessian:
    def __init__(self, memory):
        self.memory = memory
        self.pairs = []

    @property
    def identity(self):
        return not self.pairs

    def direction(self, g):
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if self.pairs:
            s, y, rho = self.pairs[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q

    def reset(self):
        self.pairs = []

    def update(self, s, y, sy):
        self.pairs.append((s, y, 1.0 / sy))
        if len(self.pairs) > self.memory:
            self.pairs.pop(0)


def _evaluate(objective, x):
    try:
        f, g = objective(x)
    except (NumericError, FloatingPointError, OverflowError):
        return np.inf, None
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return np.inf, None
    return float(f), np.asarray(g, dtype=float)


def bfgs_minimize(objective, x0, config: BFGSConfig = BFGSConfig(), callback=None, H0=None):
    """Minimize ``objective(x) -> (value, gradient)`` by BFGS with Armijo backtracking.

    ``callback(k, x, f, g)`` runs after every accepted iterate (``k = 0`` is
    the start point); a truthy return stops the run and becomes the stop
    reason.  ``H0`` seeds the dense inverse Hessian.

    Returns
    -------
    x : ndarray
        The last accepted iterate.
    history : TrainHistory
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = _evaluate(objective, x)
    if g is None:
        raise OptimizationError("objective is not finite at the start point")
    n = x.size
    if H0 is not None or n <= config.lbfgs_threshold:
        H = _DenseInverseHessian(n, H0)
    else:
        H = _LimitedInverseHessian(config.lbfgs_memory)
    history = TrainHistory()
    history.record(f, np.linalg.norm(g), 0.0)
    if callback is not None:
        stop = callback(0, x, f, g)
        if stop:
            history.stop_reason = stop if isinstance(stop, str) else "callback"
            return x, history

    for k in range(1, config.max_iters + 1):
        if np.linalg.norm(g) <= config.gtol:
            history.stop_reason = "gradient tolerance"
            return x, history
        p = H.direction(g)
        slope = g @ p
        if not slope < 0:
            H.reset()
            history.resets += 1
            p = -g
            slope = -(g @ g)

        accepted = False
        for attempt in range(2):
            alpha, finite_seen = 1.0, False
            for _ in range(config.max_backtracks + 1):
                x_new = x + alpha * p
                f_new, g_new = _evaluate(objective, x_new)
                finite_seen |= g_new is not None
                if g_new is not None and f_new <= f + config.c1 * alpha * slope:
                    accepted = True
                    break
                alpha *= config.backtrack
            if accepted:
                break
            if not finite_seen:
                raise OptimizationError(f"objective non-finite along the whole line search at iteration {k}")
            if H.identity or attempt == 1:
                break
            # stale curvature gave a useless direction: retry along -g
            H.reset()
            history.resets += 1
            p = -g
            slope = -(g @ g)
        if not accepted:
            history.stop_reason = "line search"
            return x, history

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            H.update(s, y, sy)
        elif isinstance(H, _LimitedInverseHessian):
            # stale pairs would keep reproducing the same direction
            H.reset()
            history.resets += 1
        x, f, g = x_new, f_new, g_new
        history.record(f, np.linalg.norm(g), alpha * np.linalg.norm(p))
        if callback is not None:
            stop = callback(k, x, f, g)
            if stop:
                history.stop_reason = stop if isinstance(stop, str) else "callback"
                return x, history

    history.stop_reason = "max_iters"
    return x, history


class PatienceMonitor:
    """Early stopping on a validation sequence.

    Every new minimum resets the counter; the run stops once the counter
    reaches ``patience`` non-improving evaluations (at least one).
    """

    def __init__(self, patience):
        if patience < 0:
            raise ValueError("patience must be non-negative")
        self.patience = patience
        self.best = np.inf
        self.best_index = None
        self.best_payload = None
        self.counter = 0

    def update(self, value, index, payload=None) -> bool:
        if value < self.best:
            self.best = value
            self.best_index = index
            self.best_payload = payload
            self.counter = 0
            return False
        self.counter += 1
        return self.counter >= max(self.patience, 1)


def train_network(train_set, val_set, config: TrainConfig = TrainConfig(), channel=0):
    """Train the network for target ``channel`` and keep the best-validation iterate."""
    X = train_set.scaled_inputs
    y = train_set.scaled_targets[:, channel]
    Xv = val_set.scaled_inputs
    yv = val_set.scaled_targets[:, channel]
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ValueError("training and validation sets must be nonempty")

    depth = config.channel_value("depth", channel)
    width = config.channel_value("width", channel)
    widths = [X.shape[1]] + [width] * (depth - 1) + [1]
    tau = config.tau if config.tau is not None else resnet.default_tau(depth, config.tau_convention)
    params = resnet.ResNetParams.initialize(widths, tau, config.eps, seed=[config.init_seed, channel])

    def objective(theta):
        return resnet.loss_and_gradient(params.with_flat(theta), X, y, config.lam, config.l1)

    monitor = PatienceMonitor(config.patience)
    val_losses = []

    def callback(k, theta, f, g):
        val = resnet.mse(params.with_flat(theta), Xv, yv)
        val_losses.append(val)
        if monitor.update(val, k, theta.copy()):
            return "patience"
        return None

    _, history = bfgs_minimize(objective, params.flatten(), config, callback)
    history.val_loss = val_losses
    history.best_index = monitor.best_index
    return params.with_flat(monitor.best_payload), history


def _train_channel(args):
    train_set, val_set, config, channel = args
    return train_network(train_set, val_set, config, channel)


def worker_count(n_jobs, workers=None):
    if workers is None:
        env = os.environ.get(THREADS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(workers), n_jobs))


def train_parallel(train_set, val_set, config: TrainConfig = TrainConfig(), workers=None, channels=None):
    """Train one network per target channel.

    Channel ``i`` is seeded by ``(init_seed, i)``, so results do not depend on
    scheduling.  Returns the surrogate and the per-channel histories.
    """
    n_channels = train_set.targets.shape[1]
    channels = list(range(n_channels)) if channels is None else list(channels)
    jobs = [(train_set, val_set, config, c) for c in channels]
    results, failures = {}, {}
    n_workers = worker_count(len(jobs), workers)
    if n_workers == 1:
        for job in jobs:
            try:
                results[job[3]] = _train_channel(job)
            except Exception as exc:  # collected and re-raised per channel
                failures[job[3]] = exc
    else:
        with ProcessPoolExecutor(n_workers) as pool:
            futures = {c: pool.submit(_train_channel, job) for c, job in zip(channels, jobs)}
            for c, fut in futures.items():
                try:
                    results[c] = fut.result()
                except Exception as exc:
                    failures[c] = exc
    if failures:
        raise TrainingError(failures)
    nets = [results[c][0] for c in channels]
    histories = [results[c][1] for c in channels]
    surrogate = resnet.ParallelSurrogate(
        nets,
        train_set.input_scalers,
        tuple(train_set.target_scalers[c] for c in channels),
        train_set.approach,
        train_set.dt,
        tuple(train_set.channels[c] for c in channels) if train_set.channels else (),
    )
    surrogate.metadata["config"] = config.to_dict()
    return surrogate, histories
