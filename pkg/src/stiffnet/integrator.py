"""Reference stiff integrator built on backward Euler.

Each step runs an extrapolation table of backward Euler solutions with
1, 2, ..., ``levels`` substeps; the two highest-order entries give the local
error estimate.  ``levels=2`` reduces to step doubling.  Substeps are forced
to land on the uniform sample grid, so reported states are integrator
solutions rather than interpolants.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from . import mechanism as mech
from .errors import DomainError, IntegrationError, StepFailure


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-6
    abs_tol: float = 1e-12
    max_newton_iters: int = 10
    initial_substep: float | None = None
    min_substep: float = 1e-18
    # Newton residual target, as a fraction of the local error weight
    newton_tol: float = 1e-2
    # extrapolation table depth; 2 is step doubling with Richardson extrapolation
    levels: int = 4

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise DomainError("integrator tolerances must be positive")
        if self.levels < 1:
            raise DomainError("levels must be at least 1")

    def weights(self, *vectors):
        scale = np.max(np.abs(np.vstack(vectors)), axis=0)
        return self.abs_tol + self.rel_tol * scale


@dataclass
class Trajectory:
    """Uniformly sampled time series, one row per sample.

    ``values[:, 0]`` is the temperature channel and ``values[:, 1:]`` hold
    species densities when the trajectory comes from a mechanism.
    """

    times: np.ndarray
    values: np.ndarray
    channels: list[str]
    sample_dt: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.times.size:
            raise ValueError("times and values disagree in length")
        if len(self.channels) != self.values.shape[1]:
            raise ValueError("channel names disagree with value columns")
        if self.times.size < 2:
            raise ValueError("a trajectory needs at least two states")
        spacing = np.diff(self.times)
        if not np.allclose(spacing, self.sample_dt, rtol=1e-9, atol=0.0):
            raise ValueError("trajectory samples are not uniformly spaced at sample_dt")

    def __len__(self):
        return self.times.size

    @property
    def states(self) -> list[mech.State]:
        return [mech.State.from_vector(u, t) for u, t in zip(self.values, self.times)]

    @classmethod
    def from_vectors(cls, vectors, sample_dt, channels=None, t0=0.0, metadata=None):
        values = np.atleast_2d(np.asarray(vectors, dtype=float))
        if values.shape[0] == 1 and np.ndim(vectors) == 1:
            values = values.T
        if channels is None:
            channels = ["temperature"] + [f"rho_{i}" for i in range(1, values.shape[1])]
        times = t0 + sample_dt * np.arange(values.shape[0])
        return cls(times, values, list(channels), sample_dt, dict(metadata or {}))


def backward_euler_step(f, jac, u, h, config: IntegratorConfig = IntegratorConfig()):
    """Solve ``v - u - h f(v) = 0`` by Newton iteration, starting from ``v = u``.

    Raises
    ------
    StepFailure
        If the weighted residual does not drop below ``config.newton_tol``
        within ``config.max_newton_iters`` iterations.
    """
    if not h > 0:
        raise DomainError("step size must be positive")
    u = np.asarray(u, dtype=float)
    v = u.copy()
    eye = np.eye(u.size)
    for _ in range(config.max_newton_iters):
        try:
            residual = v - u - h * f(v)
            weights = config.weights(u, v)
            if np.max(np.abs(residual) / weights) <= config.newton_tol:
                return v
            delta = np.linalg.solve(eye - h * jac(v), -residual)
        except (np.linalg.LinAlgError, DomainError, FloatingPointError) as exc:
            raise StepFailure(f"Newton iteration failed: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise StepFailure("Newton update is not finite")
        v = v + delta
        # Newton stalls at roundoff level long before the residual test
        if np.max(np.abs(delta) / config.weights(u, v)) <= 1e-3 * config.newton_tol:
            return v
    raise StepFailure(f"Newton did not converge in {config.max_newton_iters} iterations")


def _clip(v, nonnegative_from):
    if nonnegative_from is not None:
        v[nonnegative_from:] = np.maximum(v[nonnegative_from:], 0.0)
    return v


def _substeps(f, u, h, n, lu, config):
    """``n`` backward Euler substeps of size ``h/n`` by simplified Newton."""
    hs = h / n
    v = u
    for _ in range(n):
        w = v.copy()
        for _ in range(config.max_newton_iters):
            try:
                residual = w - v - hs * f(w)
            except DomainError as exc:
                raise StepFailure(str(exc)) from exc
            weights = config.weights(v, w)
            if not np.all(np.isfinite(residual)):
                raise StepFailure("non-finite residual")
            if np.max(np.abs(residual) / weights) <= config.newton_tol:
                break
            delta = scipy.linalg.lu_solve(lu, -residual)
            w = w + delta
            if np.max(np.abs(delta) / weights) <= 1e-3 * config.newton_tol:
                break
        else:
            raise StepFailure(f"simplified Newton did not converge in {config.max_newton_iters} iterations")
        v = w
    return v


def _extrapolated_step(f, jac, u, h, config):
    """Implicit Euler extrapolation over one step of size ``h``.

    Row ``j`` of the table uses ``j + 1`` substeps.  With two levels this is
    step doubling plus Richardson extrapolation.  Returns the extrapolated
    value and the difference between the two highest-order entries.
    """
    try:
        J = jac(u)
    except DomainError as exc:
        raise StepFailure(str(exc)) from exc
    eye = np.eye(u.size)
    table = []
    for j in range(config.levels):
        n = j + 1
        lu = scipy.linalg.lu_factor(eye - (h / n) * J, check_finite=False)
        row = [_substeps(f, u, h, n, lu, config)]
        for i in range(j):
            ratio = n / (n - i - 1)
            row.append(row[i] + (row[i] - table[j - 1][i]) / (ratio - 1.0))
        table.append(row)
    best = table[-1][-1]
    if config.levels == 1:
        return best, np.zeros_like(best)
    return best, best - table[-1][-2]


def integrate_ode(f, jac, u0, t_end, sample_dt, config=IntegratorConfig(), nonnegative_from=None, t0=0.0):
    """Adaptive implicit Euler extrapolation returning ``(values, error_estimate)``.

    ``values`` has one row per sample time ``t0 + n sample_dt``.  The error
    estimate accumulates the absolute local error estimates per channel.
    """
    if not t_end > 0 or not sample_dt > 0:
        raise DomainError("t_end and sample_dt must be positive")
    n_int = int(round(t_end / sample_dt))
    if n_int < 1 or abs(n_int * sample_dt - t_end) > 1e-9 * t_end:
        raise DomainError("sample_dt must divide t_end")

    u = np.asarray(u0, dtype=float).copy()
    out = np.empty((n_int + 1, u.size))
    out[0] = u
    err_sum = np.zeros(u.size)
    h = config.initial_substep or sample_dt
    exponent = 1.0 / config.levels
    for n in range(n_int):
        t = t0 + n * sample_dt
        target = t0 + (n + 1) * sample_dt
        while True:
            remaining = target - t
            landing = h >= remaining * (1 - 1e-12)
            h_try = remaining if landing else h
            try:
                new, diff = _extrapolated_step(f, jac, u, h_try, config)
            except StepFailure:
                h = 0.5 * h_try
                if h < config.min_substep:
                    raise IntegrationError("repeated step failure below minimum substep", t) from None
                continue
            weights = config.weights(u, new)
            err = np.max(np.abs(diff) / weights)
            if nonnegative_from is not None and np.any(new[nonnegative_from:] < -weights[nonnegative_from:]):
                err = max(err, 2.0)
            if err <= 1.0:
                u = _clip(new, nonnegative_from)
                err_sum += np.abs(diff)
                grow = 4.0 if err == 0 else min(4.0, max(0.2, 0.9 * err**-exponent))
                h_next = h_try * grow
                # a shortened landing step must not shrink the next interval's step
                h = max(h, h_next) if landing else h_next
                if landing:
                    break
                t += h_try
            else:
                h = h_try * max(0.2, 0.9 * err**-exponent)
                if h < config.min_substep:
                    raise IntegrationError("step size fell below minimum substep", t)
        out[n + 1] = u
    return out, err_sum


def step_implicit(mechanism: mech.Mechanism, state, h, config=IntegratorConfig()) -> mech.State:
    """One backward Euler step of the kinetics ODE."""
    u = mech._vector(state)
    v = backward_euler_step(
        lambda x: mech.rhs(mechanism, x), lambda x: mech.jacobian(mechanism, x), u, h, config
    )
    t = state.time + h if isinstance(state, mech.State) else h
    return mech.State.from_vector(_clip(v, 1), t)


def integrate(mechanism: mech.Mechanism, state0, t_end, sample_dt, config=IntegratorConfig(), metadata=None) -> Trajectory:
    """Ground-truth trajectory sampled every ``sample_dt`` up to ``t_end``."""
    u0 = mech._vector(state0)
    t0 = state0.time if isinstance(state0, mech.State) else 0.0
    values, err = integrate_ode(
        lambda x: mech.rhs(mechanism, x),
        lambda x: mech.jacobian(mechanism, x),
        u0,
        t_end,
        sample_dt,
        config,
        nonnegative_from=1,
        t0=t0,
    )
    meta = {
        "mechanism_id": mech.mechanism_id(mechanism),
        "sample_dt": sample_dt,
        "tolerances": asdict(config),
        "error_estimate": err.tolist(),
    }
    meta.update(metadata or {})
    times = t0 + sample_dt * np.arange(values.shape[0])
    return Trajectory(times, values, mechanism.channel_names, sample_dt, meta)


def ignition_trajectory(mechanism, phi, T0, n_points, sample_dt, config=IntegratorConfig(), pressure=mech.ONE_ATMOSPHERE, total_density=None):
    """Trajectory of ``n_points`` samples from a fuel/air mixture at ``phi``."""
    if total_density is None:
        state0 = mech.ignition_mixture(mechanism, phi, T0, pressure)
    else:
        state0 = mech.initial_state_from_phi(mechanism, phi, T0, total_density)
    meta = {"phi": phi, "T0": T0, "n_points": n_points}
    return integrate(mechanism, state0, (n_points - 1) * sample_dt, sample_dt, config, meta)
