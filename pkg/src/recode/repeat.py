"""Repeat intention: historical gaps -> encoder -> ODE states -> summed decoder.

Gaps are measured in units of ``time_scale_days`` and listed ascending, so
the most recent prior consumption is the first point the solver reaches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SECONDS_PER_DAY
from .numerics import (MlpSpec, ParamStore, Tensor, as_tensor, concat, init_mlp, mlp_forward,
                       scatter_rows, stack, take_rows)
from .odesolve import ExponentialKernel, GaussianKernel, OdeFunc, SolveConfig, ode_solve


def extract_gaps(history, item_id, t_target, time_scale_days=30.0, max_repeats=20):
    """Ascending gaps to the ``max_repeats`` most recent consumptions of
    ``item_id`` strictly before ``t_target``."""
    times = history.timestamps[(history.items == item_id) & (history.timestamps < t_target)]
    return _gaps_from_times(np.sort(times), t_target, time_scale_days, max_repeats)


def _gaps_from_times(prior_sorted, t_target, time_scale_days, max_repeats):
    prior = prior_sorted[-max_repeats:] if max_repeats else prior_sorted[:0]
    return (t_target - prior[::-1]).astype(np.float64) / (SECONDS_PER_DAY * time_scale_days)


class GapIndex:
    """Per-user map item -> sorted consumption times, for fast gap lookup."""

    def __init__(self, histories, time_scale_days=30.0, max_repeats=20):
        self.time_scale_days = time_scale_days
        self.max_repeats = max_repeats
        self.by_user = []
        for h in histories:
            order = np.argsort(h.items, kind="stable")
            items, times = h.items[order], h.timestamps[order]
            bounds = np.flatnonzero(np.diff(items)) + 1
            per_item = {}
            for chunk_items, chunk_times in zip(np.split(items, bounds), np.split(times, bounds)):
                if len(chunk_items):
                    per_item[int(chunk_items[0])] = np.sort(chunk_times)
            self.by_user.append(per_item)

    def gaps(self, user, item, t_target):
        times = self.by_user[user].get(int(item))
        if times is None:
            return np.empty(0)
        k = np.searchsorted(times, t_target, side="left")
        return _gaps_from_times(times[:k], t_target, self.time_scale_days, self.max_repeats)

    def prior_items(self, user, t_target):
        """Items the user consumed strictly before t_target."""
        return [i for i, times in self.by_user[user].items() if times[0] < t_target]

    def batch(self, users, items, times):
        return pad_gaps([self.gaps(u, i, t) for u, i, t in zip(users, items, times)])


def pad_gaps(gap_lists):
    """Stack ragged ascending gap arrays into (n, n_max), padding each row with
    its last gap so padded intervals have zero width."""
    counts = np.array([len(g) for g in gap_lists], dtype=np.int64)
    n_max = int(counts.max()) if len(counts) else 0
    out = np.zeros((len(gap_lists), n_max))
    for r, g in enumerate(gap_lists):
        if len(g):
            out[r, : len(g)] = g
            out[r, len(g):] = g[-1]
    return out, counts


@dataclass
class RepeatConfig:
    time_scale_days: float = 30.0
    max_repeats: int = 20
    d_ode: int | None = None  # defaults to the embedding dim
    include_time: bool = False
    method: str = "euler"
    substeps: int = 5

    def __post_init__(self):
        if not self.time_scale_days > 0:
            raise ValueError("time_scale_days must be > 0")
        if self.max_repeats < 1:
            raise ValueError("max_repeats must be >= 1")
        SolveConfig(self.method, self.substeps)

    @property
    def solve(self):
        return SolveConfig(self.method, self.substeps)


class NeuralRepeat:
    def __init__(self, dim, cfg: RepeatConfig, rng, store: ParamStore):
        self.cfg = cfg
        d_ode = cfg.d_ode or dim
        self.encoder_spec = MlpSpec([2 * dim, 2 * dim, d_ode], ["tanh", "identity"])
        self.encoder = init_mlp(self.encoder_spec, rng, store, "rep.enc")
        self.ode = OdeFunc(d_ode, rng, store, "rep.ode", include_time=cfg.include_time)
        self.decoder_spec = MlpSpec([d_ode, d_ode, 1], ["tanh", "identity"])
        self.decoder = init_mlp(self.decoder_spec, rng, store, "rep.dec")

    def initial_state(self, e_u, e_i):
        return mlp_forward(self.encoder_spec, self.encoder, concat([e_u, e_i], axis=-1))

    def decode(self, h):
        return mlp_forward(self.decoder_spec, self.decoder, h)

    def score(self, e_u, e_i, gaps, counts):
        """R_rep per row of a batch; rows with no gaps score exactly 0."""
        e_u, e_i = as_tensor(e_u), as_tensor(e_i)
        n = e_u.shape[0]
        rows = np.flatnonzero(counts)
        if rows.size == 0:
            return Tensor(np.zeros(n))
        n_max = int(counts[rows].max())
        h0 = self.initial_state(take_rows(e_u, rows), take_rows(e_i, rows))
        states = ode_solve(self.ode, h0, gaps[rows, :n_max], self.cfg.solve)
        traj = stack(states, axis=1)  # (rows, n_max, d_ode)
        d_ode = traj.shape[-1]
        dec = self.decode(traj.reshape(len(rows) * n_max, d_ode)).reshape(len(rows), n_max)
        mask = np.arange(n_max)[None, :] < counts[rows][:, None]
        return scatter_rows((dec * mask).sum(axis=1), rows, n)


def repeat_score(e_u, e_i, gaps, module: NeuralRepeat):
    """R_rep for a single (user, item) pair given its ascending gaps."""
    gaps = np.asarray(gaps, dtype=np.float64)
    e_u, e_i = as_tensor(e_u), as_tensor(e_i)
    if gaps.size == 0:
        return Tensor(0.0)
    out = module.score(e_u.reshape(1, -1), e_i.reshape(1, -1), gaps[None, :], np.array([gaps.size]))
    return out.reshape(())


# fixed-form baselines built from closed-form kernel solutions


def kernel_response(gaps, kernel):
    """Closed-form solution from unit initial state at each gap."""
    return kernel.solution(1.0, np.asarray(gaps, dtype=np.float64))


def parametric_repeat_score(gaps, kernel, alpha=1.0):
    if not isinstance(kernel, (ExponentialKernel, GaussianKernel)):
        raise ValueError(f"unsupported kernel {kernel!r}")
    return float(alpha * kernel_response(gaps, kernel).sum())


class ParametricRepeat:
    """Learnable global amplitude and kernel parameters (log-parameterized
    where positivity is required)."""

    def __init__(self, kind, store: ParamStore):
        if kind not in ("exponential", "gaussian"):
            raise ValueError(f"unknown parametric kernel {kind!r}")
        self.kind = kind
        self.alpha = store.add("par.alpha", np.zeros(1))
        if kind == "exponential":
            self.log_rate = store.add("par.log_rate", np.zeros(1))
        else:
            self.mean = store.add("par.mean", np.ones(1))
            self.log_std = store.add("par.log_std", np.zeros(1))

    def kernel(self):
        if self.kind == "exponential":
            return ExponentialKernel(float(np.exp(self.log_rate.data[0])))
        return GaussianKernel(float(self.mean.data[0]), float(np.exp(self.log_std.data[0])))

    def score(self, e_u, e_i, gaps, counts):
        n = len(counts)
        rows = np.flatnonzero(counts)
        if rows.size == 0:
            return Tensor(np.zeros(n))
        g = Tensor(gaps[rows])
        mask = np.arange(gaps.shape[1])[None, :] < counts[rows][:, None]
        if self.kind == "exponential":
            expo = g * (-self.log_rate.exp())
        else:
            inv_var = (self.log_std * -2.0).exp()
            centred = g - self.mean
            expo = (centred * centred - self.mean * self.mean) * inv_var * -0.5
        resp = (expo.exp() * mask).sum(axis=1) * self.alpha
        return scatter_rows(resp, rows, n)
