"""Fixed-step integration of a vector field at a sorted list of times.

The solver is unrolled on the autodiff graph, so gradients w.r.t. the initial
state and field parameters follow the exact forward discretization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import MlpSpec, ParamStore, Tensor, as_tensor, concat, init_mlp, mlp_forward

METHODS = ("euler", "rk4")


@dataclass
class SolveConfig:
    method: str = "euler"
    substeps_per_interval: int = 5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; expected one of {METHODS}")
        if self.substeps_per_interval < 1:
            raise ValueError("substeps_per_interval must be >= 1")


class OdeFunc:
    """Two-layer perceptron approximating dh/dt.

    With ``include_time`` the (already scaled) time is appended to the state
    as an extra input column.
    """

    def __init__(self, dim, rng, store: ParamStore, prefix="ode", hidden=None,
                 include_time=False, hidden_activation="tanh", init_scale=1.0):
        self.dim = dim
        self.include_time = include_time
        hidden = hidden or dim
        d_in = dim + 1 if include_time else dim
        self.spec = MlpSpec([d_in, hidden, dim], [hidden_activation, "identity"], init_scale)
        self.params = init_mlp(self.spec, rng, store, prefix)

    def __call__(self, h, t):
        if self.include_time:
            h = as_tensor(h)
            tcol = np.broadcast_to(np.asarray(t, dtype=np.float64), h.shape[:-1])[..., None]
            h = concat([h, Tensor(tcol)], axis=-1)
        return mlp_forward(self.spec, self.params, h)


def _check_finite(h, where):
    if not np.all(np.isfinite(h.data)):
        raise FloatingPointError(f"non-finite ODE state at {where}")


def _step(field, h, t, dt, method):
    # dt is a scalar or an (n, 1) column for per-row grids
    if method == "euler":
        return h + field(h, t) * dt
    half = dt * 0.5
    t_half = t + np.squeeze(half, -1) if np.ndim(half) else t + half
    t_full = t + np.squeeze(dt, -1) if np.ndim(dt) else t + dt
    k1 = field(h, t)
    k2 = field(h + k1 * half, t_half)
    k3 = field(h + k2 * half, t_half)
    k4 = field(h + k3 * dt, t_full)
    return h + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)


def ode_solve(field, h0, times, cfg: SolveConfig | None = None, t0=0.0):
    """States at each requested time, integrating from ``t0`` where h = h0.

    ``times`` is either 1-D (shared by every row of h0) or 2-D of shape
    (n_rows, n_times) giving a separate ascending grid per row of h0. Each
    interval between consecutive times gets ``substeps_per_interval`` equal
    steps; a zero-width interval returns the previous state unchanged.
    """
    cfg = cfg or SolveConfig()
    h = as_tensor(h0)
    times = np.asarray(times, dtype=np.float64)
    per_row = times.ndim == 2
    if times.ndim not in (1, 2):
        raise ValueError("times must be 1-D or 2-D")
    if per_row and times.shape[0] != h.shape[0]:
        raise ValueError(f"per-row times need {h.shape[0]} rows, got {times.shape[0]}")
    if times.size and np.any(times < t0):
        raise ValueError(f"times must be >= start time {t0}")
    if times.size and np.any(np.diff(times, axis=-1) < 0):
        raise ValueError("times must be sorted ascending")

    n_sub = cfg.substeps_per_interval
    n_times = times.shape[-1]
    states = []
    prev = np.full(times.shape[0], t0) if per_row else np.float64(t0)
    for k in range(n_times):
        cur = times[:, k] if per_row else times[k]
        width = cur - prev
        if not per_row and width == 0:
            states.append(h)
            continue
        if per_row and not np.any(width):
            states.append(h)
            prev = cur
            continue
        dt = (width / n_sub)[:, None] if per_row else width / n_sub
        t = prev
        for s in range(n_sub):
            h = _step(field, h, t, dt, cfg.method)
            _check_finite(h, f"interval {k}, substep {s}")
            t = prev + (s + 1) * (width / n_sub)
        states.append(h)
        prev = cur
    return states


# closed-form kernels: each is an ODE with a known solution


@dataclass
class ExponentialKernel:
    """dh/dt = -rate * h."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be > 0")

    def field(self, h, t):
        return as_tensor(h) * (-self.rate)

    def solution(self, h0, t):
        return np.asarray(h0) * np.exp(-self.rate * np.asarray(t, dtype=np.float64))


@dataclass
class GaussianKernel:
    """dh/dt = -((t - mean) / std^2) * h."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("gaussian std must be > 0")

    def field(self, h, t):
        coef = -(np.asarray(t, dtype=np.float64) - self.mean) / self.std ** 2
        if np.ndim(coef):
            coef = coef[..., None]
        return as_tensor(h) * coef

    def solution(self, h0, t):
        t = np.asarray(t, dtype=np.float64)
        return np.asarray(h0) * np.exp(-((t - self.mean) ** 2 - self.mean ** 2) / (2 * self.std ** 2))


def solve_error(kernel, h0, t_end, method, substeps):
    cfg = SolveConfig(method, substeps)
    (h,) = ode_solve(kernel.field, np.asarray(h0, dtype=np.float64), [t_end], cfg)
    return float(np.max(np.abs(h.data - kernel.solution(h0, t_end))))


def convergence_order(kernel, h0, t_end, method, base_substeps=4, levels=4):
    """Slope of log(error) against log(step size) over repeated halvings.

    Returns None when any error is exactly zero (order not defined).
    """
    steps, errors = [], []
    for k in range(levels):
        n = base_substeps * 2 ** k
        err = solve_error(kernel, h0, t_end, method, n)
        if err == 0.0:
            return None
        steps.append(t_end / n)
        errors.append(err)
    slope, _ = np.polyfit(np.log(steps), np.log(errors), 1)
    return float(slope)
