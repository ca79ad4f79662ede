"""Time marching with trained surrogates and error metrics against references.

Any object with ``approach``, ``dt``, ``n_channels`` and ``predict(u, dt)``
works as a surrogate, which is how tests inject exact maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EnforcementError, RolloutError, ShapeError
from .integrator import Trajectory


@dataclass
class FunctionSurrogate:
    """Surrogate backed by a plain function ``fn(u) -> output``."""

    fn: object
    approach: str
    dt: float
    n_channels: int = 1

    def predict(self, u, dt=None):
        return np.asarray(self.fn(np.asarray(u, dtype=float)), dtype=float)


@dataclass
class MarchStats:
    clip_counts: list[int] = field(default_factory=list)

    @property
    def total_clips(self) -> int:
        return int(sum(self.clip_counts))


def enforce_mass(prev_state, raw_state):
    """Rescale densities (channels 1..M) so their sum matches ``prev_state``."""
    prev = np.asarray(prev_state, dtype=float)
    raw = np.asarray(raw_state, dtype=float).copy()
    raw_sum = raw[1:].sum()
    if not raw_sum > 0:
        raise EnforcementError("species densities must have a positive sum")
    raw[1:] *= prev[1:].sum() / raw_sum
    return raw


def _check(u, step):
    if not np.all(np.isfinite(u)):
        raise RolloutError("non-finite state", step=step)


def _clip_densities(u):
    neg = u[1:] < 0
    count = int(neg.sum())
    if count:
        u[1:][neg] = 0.0
    return count


def _march(update, surrogate, u0, n_steps, conserve_mass, channels, t0):
    u = np.asarray(u0, dtype=float).copy()
    if u.size != surrogate.n_channels:
        raise ShapeError(f"state has {u.size} channels, surrogate predicts {surrogate.n_channels}")
    out = np.empty((n_steps + 1, u.size))
    out[0] = u
    stats = MarchStats()
    for n in range(1, n_steps + 1):
        new = update(u)
        _check(new, n)
        stats.clip_counts.append(_clip_densities(new))
        if conserve_mass and u.size > 1:
            new = enforce_mass(u, new)
        out[n] = new
        u = new
    if channels is None:
        channels = getattr(surrogate, "channels", None) or None
    traj = Trajectory.from_vectors(out, surrogate.dt, channels, t0)
    traj.metadata["clip_counts"] = stats.clip_counts
    traj.metadata["total_clips"] = stats.total_clips
    return traj


def march_derivative(surrogate, u0, dt=None, n_steps=1, conserve_mass=False, channels=None, t0=0.0) -> Trajectory:
    """Explicit Euler ``u^n = u^{n-1} + dt * S(u^{n-1})`` with a learned ``S``."""
    if surrogate.approach != "derivative":
        raise ValueError("march_derivative needs a derivative-approach surrogate")
    dt = surrogate.dt if dt is None else dt
    return _march(lambda u: u + dt * surrogate.predict(u, dt), surrogate, u0, n_steps, conserve_mass, channels, t0)


def march_solution(surrogate, u0, n_steps=1, conserve_mass=False, channels=None, t0=0.0) -> Trajectory:
    """Iterate the learned one-step map ``u^n = S(u^{n-1})``."""
    if surrogate.approach != "solution":
        raise ValueError("march_solution needs a solution-approach surrogate")
    return _march(lambda u: surrogate.predict(u, surrogate.dt), surrogate, u0, n_steps, conserve_mass, channels, t0)


def march(surrogate, u0, n_steps, conserve_mass=False, channels=None, t0=0.0) -> Trajectory:
    if surrogate.approach == "derivative":
        return march_derivative(surrogate, u0, surrogate.dt, n_steps, conserve_mass, channels, t0)
    return march_solution(surrogate, u0, n_steps, conserve_mass, channels, t0)


def single_step_predictions(surrogate, reference: Trajectory) -> np.ndarray:
    """One-step predictions from every reference state except the last."""
    U = reference.values[:-1]
    if not np.isclose(reference.sample_dt, surrogate.dt, rtol=1e-12, atol=0.0):
        raise ValueError("reference sample_dt differs from the surrogate's dt")
    out = surrogate.predict(U, surrogate.dt)
    out = np.atleast_2d(out).reshape(U.shape)
    if surrogate.approach == "derivative":
        out = U + surrogate.dt * out
    _check(out, None)
    return out


def ignition_delay(trajectory: Trajectory) -> float:
    """Time from the first sample to the steepest temperature rise."""
    T = trajectory.values[:, 0]
    dT = np.gradient(T, trajectory.times)
    return float(trajectory.times[int(np.argmax(dT))] - trajectory.times[0])


def relative_l2(pred, ref) -> np.ndarray:
    pred = np.atleast_2d(pred)
    ref = np.atleast_2d(ref)
    diff = np.linalg.norm(pred - ref, axis=0)
    norm = np.linalg.norm(ref, axis=0)
    # all-zero reference channels fall back to the absolute norm
    return np.where(norm > 0, diff / np.where(norm > 0, norm, 1.0), diff)


def trajectory_error(pred: Trajectory, reference: Trajectory) -> dict:
    """Per-channel relative L2, ignition delays and final-temperature error."""
    if pred.values.shape != reference.values.shape:
        raise ShapeError(f"prediction {pred.values.shape} and reference {reference.values.shape} differ")
    if not np.allclose(pred.times, reference.times, rtol=1e-9, atol=1e-300):
        raise ShapeError("prediction and reference use different time grids")
    rel = relative_l2(pred.values, reference.values)
    tau_ref = ignition_delay(reference)
    tau_pred = ignition_delay(pred)
    T_ref = float(reference.values[-1, 0])
    T_pred = float(pred.values[-1, 0])
    return {
        "channels": list(reference.channels),
        "relative_l2": rel.tolist(),
        "ignition_delay_reference": tau_ref,
        "ignition_delay_predicted": tau_pred,
        "ignition_delay_error": abs(tau_pred - tau_ref) / tau_ref if tau_ref > 0 else abs(tau_pred - tau_ref),
        "final_temperature_reference": T_ref,
        "final_temperature_predicted": T_pred,
        "final_temperature_error": abs(T_pred - T_ref) / abs(T_ref) if T_ref else abs(T_pred),
    }


@dataclass
class RolloutResult:
    predicted: Trajectory
    metrics: dict
    single_step: np.ndarray
    single_step_error: np.ndarray  # per step, max over channels of |err| / channel range


def evaluate_rollout(surrogate, reference: Trajectory, conserve_mass=False) -> RolloutResult:
    """March from the reference's first state across its horizon and score it."""
    pred = march(surrogate, reference.values[0], len(reference) - 1, conserve_mass, reference.channels, reference.times[0])
    metrics = trajectory_error(pred, reference)
    metrics["total_clips"] = pred.metadata["total_clips"]
    one = single_step_predictions(surrogate, reference)
    span = np.ptp(reference.values, axis=0)
    span = np.where(span > 0, span, 1.0)
    step_err = np.max(np.abs(one - reference.values[1:]) / span, axis=1)
    metrics["single_step_relative_l2"] = relative_l2(one, reference.values[1:]).tolist()
    return RolloutResult(pred, metrics, one, step_err)
