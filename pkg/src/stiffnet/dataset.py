"""Training pairs, two-stage channel scaling, fuel grouping and replication."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, EmptyDatasetError, ShapeError

APPROACHES = ("derivative", "solution")
SCALING_MODES = ("linear", "log")


@dataclass(frozen=True)
class ScalerParams:
    """Standardize, then min-max the standardized values onto [0, 1].

    A degenerate channel (zero spread) maps to 0.5 and inverts to ``mean``
    (``exp(mean)`` in log mode).
    """

    mode: str
    mean: float
    std: float
    z_min: float
    z_max: float

    @property
    def degenerate(self) -> bool:
        return self.std == 0.0 or self.z_max == self.z_min

    def to_dict(self) -> dict:
        return {"mode": self.mode, "mean": self.mean, "std": self.std, "z_min": self.z_min, "z_max": self.z_max}

    @classmethod
    def from_dict(cls, d) -> ScalerParams:
        return cls(d["mode"], float(d["mean"]), float(d["std"]), float(d["z_min"]), float(d["z_max"]))


def _forward_log(x, mode):
    x = np.asarray(x, dtype=float)
    if mode == "log":
        if np.any(x <= 0):
            raise DomainError("log scaling requires strictly positive values")
        return np.log(x)
    if mode != "linear":
        raise ValueError(f"unknown scaling mode {mode!r}")
    return x


def fit_scaler(values, mode="linear") -> ScalerParams:
    """Fit mean, population standard deviation and standardized extrema."""
    x = _forward_log(values, mode).ravel()
    if x.size == 0:
        raise EmptyDatasetError("cannot fit a scaler to an empty set")
    if x.max() == x.min():
        return ScalerParams(mode, float(x[0]), 0.0, 0.0, 0.0)
    mean = float(x.mean())
    d = x - mean
    # population std, rescaled first so tiny spreads do not underflow when squared
    peak = np.max(np.abs(d))
    std = float(peak * np.sqrt(np.mean((d / peak) ** 2))) if peak > 0 else 0.0
    z = d / std if std > 0 else np.zeros_like(d)
    if not std > 0 or not np.all(np.isfinite(z)) or z.max() == z.min():
        return ScalerParams(mode, mean, 0.0, 0.0, 0.0)
    return ScalerParams(mode, mean, std, float(z.min()), float(z.max()))


def apply_scaler(params: ScalerParams, x):
    x = _forward_log(x, params.mode)
    if params.degenerate:
        return np.full_like(x, 0.5)
    z = (x - params.mean) / params.std
    return (z - params.z_min) / (params.z_max - params.z_min)


def invert_scaler(params: ScalerParams, x_hat):
    x_hat = np.asarray(x_hat, dtype=float)
    if params.degenerate:
        x = np.full_like(x_hat, params.mean)
    else:
        z = x_hat * (params.z_max - params.z_min) + params.z_min
        x = z * params.std + params.mean
    return np.exp(x) if params.mode == "log" else x


def apply_scalers(scalers, X):
    X = np.atleast_2d(X)
    if X.shape[1] != len(scalers):
        raise ShapeError(f"expected {len(scalers)} channels, got {X.shape[1]}")
    return np.column_stack([apply_scaler(s, X[:, i]) for i, s in enumerate(scalers)])


def invert_scalers(scalers, X_hat):
    X_hat = np.atleast_2d(X_hat)
    if X_hat.shape[1] != len(scalers):
        raise ShapeError(f"expected {len(scalers)} channels, got {X_hat.shape[1]}")
    return np.column_stack([invert_scaler(s, X_hat[:, i]) for i, s in enumerate(scalers)])


def build_pairs(trajectory, approach, dt=None):
    """Raw ``(inputs, targets)`` from consecutive samples.

    Inputs are ``[u^{n-1}, dt]``; targets are ``(u^n - u^{n-1}) / dt`` for the
    derivative approach and ``u^n`` for the solution approach.
    """
    if approach not in APPROACHES:
        raise ValueError(f"unknown approach {approach!r}")
    U = np.atleast_2d(np.asarray(trajectory.values, dtype=float))
    if U.shape[0] < 2:
        raise EmptyDatasetError("need at least two states to build pairs")
    dt = trajectory.sample_dt if dt is None else dt
    if not np.isclose(dt, trajectory.sample_dt, rtol=1e-12, atol=0.0):
        raise ValueError(f"pair dt {dt} differs from trajectory sample_dt {trajectory.sample_dt}")
    prev, nxt = U[:-1], U[1:]
    inputs = np.column_stack([prev, np.full(prev.shape[0], dt)])
    targets = (nxt - prev) / dt if approach == "derivative" else nxt.copy()
    return inputs, targets


def classify_fuel(phi) -> str:
    if not phi > 0:
        raise DomainError("equivalence ratio must be positive")
    if phi <= 0.1:
        return "lean"
    if phi <= 2:
        return "balanced"
    return "rich"


@dataclass(frozen=True)
class PairSet:
    """Raw pairs from one trajectory plus its descriptor (set id, phi, T0, ...)."""

    inputs: np.ndarray
    targets: np.ndarray
    descriptor: dict = field(default_factory=dict)

    @classmethod
    def from_trajectory(cls, trajectory, approach, set_id=None):
        inputs, targets = build_pairs(trajectory, approach)
        desc = {k: trajectory.metadata[k] for k in ("phi", "T0", "n_points") if k in trajectory.metadata}
        desc.setdefault("n_points", len(trajectory))
        desc["set_id"] = set_id if set_id is not None else trajectory.metadata.get("set_id")
        return cls(inputs, targets, desc)

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # raw, (N, M+2)
    targets: np.ndarray  # raw, (N, M+1)
    input_scalers: tuple[ScalerParams, ...]
    target_scalers: tuple[ScalerParams, ...]
    approach: str
    dt: float
    sources: np.ndarray  # (N, 2): set index, step index
    sets: tuple[dict, ...] = ()
    channels: tuple[str, ...] = ()

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def scaled_inputs(self) -> np.ndarray:
        return apply_scalers(self.input_scalers, self.inputs)

    @property
    def scaled_targets(self) -> np.ndarray:
        return apply_scalers(self.target_scalers, self.targets)

    def subset(self, index) -> Dataset:
        index = np.asarray(index)
        return replace(self, inputs=self.inputs[index], targets=self.targets[index], sources=self.sources[index])


def fit_scalers(values, modes):
    values = np.atleast_2d(values)
    if isinstance(modes, str):
        modes = [modes] * values.shape[1]
    return tuple(fit_scaler(values[:, i], m) for i, m in enumerate(modes))


def balance_by_replication(sets, multiplicities=None, approach="derivative", dt=None, input_modes="linear", target_modes="linear", channels=()):
    """Concatenate pair sets, each repeated by its multiplicity, and fit scalers.

    Scalers see the replicated multiset, so copies weigh into mean and spread.
    """
    sets = list(sets)
    if not sets:
        raise EmptyDatasetError("no pair sets given")
    multiplicities = [1] * len(sets) if multiplicities is None else list(multiplicities)
    if len(multiplicities) != len(sets):
        raise ValueError("one multiplicity per set is required")
    if any(int(m) != m or m < 1 for m in multiplicities):
        raise ValueError("multiplicities must be positive integers")
    if approach not in APPROACHES:
        raise ValueError(f"unknown approach {approach!r}")

    inputs, targets, sources = [], [], []
    for s_idx, (s, mult) in enumerate(zip(sets, multiplicities)):
        if len(s) == 0:
            raise EmptyDatasetError(f"pair set {s_idx} is empty")
        src = np.column_stack([np.full(len(s), s_idx), np.arange(len(s))])
        for _ in range(int(mult)):
            inputs.append(s.inputs)
            targets.append(s.targets)
            sources.append(src)
    inputs = np.vstack(inputs)
    targets = np.vstack(targets)
    if inputs.shape[1] != targets.shape[1] + 1:
        raise ShapeError("inputs must carry one more channel (dt) than targets")
    if dt is None:
        dt = float(inputs[0, -1])
    descriptors = tuple(dict(s.descriptor, multiplicity=int(m)) for s, m in zip(sets, multiplicities))
    return Dataset(
        inputs,
        targets,
        fit_scalers(inputs, input_modes),
        fit_scalers(targets, target_modes),
        approach,
        float(dt),
        np.vstack(sources),
        descriptors,
        tuple(channels),
    )


def split_validation(dataset: Dataset, fraction=0.1, seed=0):
    """Random disjoint split by sample; both parts keep the full-set scalers."""
    if not 0 < fraction < 1:
        raise ValueError("validation fraction must lie in (0, 1)")
    n = len(dataset)
    n_val = int(round(fraction * n))
    if n_val == 0 or n_val == n:
        raise EmptyDatasetError(f"fraction {fraction} of {n} samples leaves an empty split")
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return dataset.subset(train_idx), dataset.subset(val_idx)
