"""Benchmark vector field, fixed-step RK4, trajectory errors, gain bound.

The benchmark is a 3-state nonlinear system with a stable equilibrium
at the origin; learned fields are validated by integrating both fields
from shared initial conditions and comparing the state curves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Domain
from .errors import BlowUpError, ContractError

Array = np.ndarray
Field = Callable[[Array], Array]


def benchmark_field(x: Array) -> Array:
    """[-x1 + x3, x1^2/2 - x1 x3 + x3 - x2, -x1 - x3]; accepts (3,) or (B, 3)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    x1, x2, x3 = pts[:, 0], pts[:, 1], pts[:, 2]
    out = np.stack([-x1 + x3,
                    0.5 * x1 ** 2 - x1 * x3 + x3 - x2,
                    -x1 - x3], axis=1)
    return out[0] if single else out


def field_from_net(net) -> Field:
    return lambda x: net.predict(np.asarray(x, dtype=np.float64))


def field_from_extension(ext) -> Field:
    return lambda x: ext(np.asarray(x, dtype=np.float64))


@dataclass
class Trajectory:
    times: Array           # (T+1,), uniform grid
    states: Array          # (T+1, n)
    exited_domain: bool = False
    exit_time: float | None = None

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w") as fh:
            fh.write("t," + ",".join(f"x{i + 1}" for i in range(n)) + "\n")
            for t, row in zip(self.times, self.states):
                fh.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")


def _rk4_step(field: Field, x: Array, dt: float) -> Array:
    k1 = field(x)
    k2 = field(x + 0.5 * dt * k1)
    k3 = field(x + 0.5 * dt * k2)
    k4 = field(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(field: Field, x0: Array, dt: float, horizon: float,
              domain: Domain | None = None) -> Trajectory:
    """Classic fixed-step RK4 from a single initial state.

    A supplied domain is monitored, not enforced: the first exit is
    flagged (it invalidates forward-invariance assumptions downstream)
    and integration continues. Non-finite states abort with the
    truncated trajectory attached.
    """
    if dt <= 0 or horizon < dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    x = np.asarray(x0, dtype=np.float64).copy()
    steps = int(round(horizon / dt))
    times = np.arange(steps + 1) * dt
    states = np.empty((steps + 1, x.size))
    states[0] = x
    exited, exit_time = False, None
    if domain is not None and not bool(domain.contains(x[None, :])[0]):
        exited, exit_time = True, 0.0
    for k in range(1, steps + 1):
        x = _rk4_step(field, x, dt)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(
                f"state became non-finite at t={k * dt:.6g}",
                trajectory=Trajectory(times[:k], states[:k], exited, exit_time))
        states[k] = x
        if not exited and domain is not None and not bool(domain.contains(x[None, :])[0]):
            exited, exit_time = True, float(k * dt)
    return Trajectory(times, states, exited, exit_time)


def integrate_batch(field: Field, x0: Array, dt: float, horizon: float,
                    domain: Domain | None = None):
    """Vectorized RK4 over a batch of initial conditions.

    Returns (times (T+1,), states (T+1, B, n), exited mask (B,)).
    """
    if dt <= 0 or horizon < dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64)).copy()
    steps = int(round(horizon / dt))
    times = np.arange(steps + 1) * dt
    states = np.empty((steps + 1,) + x.shape)
    states[0] = x
    exited = np.zeros(x.shape[0], dtype=bool)
    if domain is not None:
        exited |= ~domain.contains(x)
    for k in range(1, steps + 1):
        x = _rk4_step(field, x, dt)
        if not np.all(np.isfinite(x)):
            raise BlowUpError(f"batch state became non-finite at t={k * dt:.6g}",
                              trajectory=states[:k])
        states[k] = x
        if domain is not None:
            exited |= ~domain.contains(x)
    return times, states, exited


def trajectory_error(f_field: Field, g_field: Field, x0: Array, dt: float,
                     horizon: float):
    """Integrate both fields on the same grid from one initial state.

    Returns (sup over time of the state distance, per-time squared error).
    """
    tf = integrate(f_field, x0, dt, horizon)
    tg = integrate(g_field, x0, dt, horizon)
    dist = np.linalg.norm(tf.states - tg.states, axis=1)
    return float(np.max(dist)), dist ** 2


def trajectory_error_batch(f_field: Field, g_field: Field, x0: Array, dt: float,
                           horizon: float, domain: Domain | None = None):
    """Batched comparison; the per-time curve averages squared errors over
    initial conditions (fixed summation order for reproducibility).

    Returns (times, mse_curve, sup_error, exited mask of the f-trajectories).
    """
    times, sf, exited = integrate_batch(f_field, x0, dt, horizon, domain)
    _, sg, _ = integrate_batch(g_field, x0, dt, horizon, domain=None)
    sq = np.sum((sf - sg) ** 2, axis=2)      # (T+1, B)
    mse_curve = np.mean(sq, axis=1)
    sup_error = float(np.sqrt(np.max(sq)))
    return times, mse_curve, sup_error, exited


def error_curve_to_csv(times: Array, mse_curve: Array, path) -> None:
    with open(path, "w") as fh:
        fh.write("t,mse\n")
        for t, v in zip(times, mse_curve):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def simulation_error_bound(gamma: Callable[[float], float], fit_bound: float,
                           probe_points: int = 64) -> float:
    """delta = gamma(fit bound) for a class-K gain gamma.

    gamma is probed on [0, fit_bound] for gamma(0) = 0 and monotonicity;
    violations mean the caller's gain is not class-K.
    """
    if fit_bound < 0:
        raise ValueError("fit_bound must be nonnegative")
    g0 = float(gamma(0.0))
    if abs(g0) > 1e-12:
        raise ContractError(f"gamma(0) = {g0}, expected 0 for a class-K function")
    probes = np.linspace(0.0, fit_bound, probe_points) if fit_bound > 0 else [0.0]
    vals = [float(gamma(float(s))) for s in probes]
    for a, b in zip(vals, vals[1:]):
        if b < a - 1e-12:
            raise ContractError("gamma is not nondecreasing on [0, fit_bound]")
    return float(gamma(float(fit_bound)))
