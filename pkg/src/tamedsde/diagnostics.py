"""Empirical versions of the ingredients of the perturbation estimate.

Three families of quantities are provided:

* the monotonicity-excess weight ``eta`` between a reference path ``X`` and
  an approximation ``Y``;
* the exponential-integrability statistic built from a model's Lyapunov
  pair ``(U0, U1)``;
* the SITEM defect integrals ``int ||f(Y_floor(s)) - a(s)||^2`` and
  ``int ||g(Y_s) - b(s)||^2`` together with the coupled error they control.

All time integrals use the left-endpoint rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .brownian import coarsen_increments, generate_paths, partial_sums
from .harness import CapabilityError, fit_rate, map_chunks
from .models import SdeModel
from .schemes import NEVER, StoppedTamedEuler, sitem_coefficients, trajectories
from .taming import TamingParams, psi


@dataclass(frozen=True)
class EtaParams:
    z: float = 2.0
    epsilon: float = 0.1

    def __post_init__(self):
        if not self.z >= 2:
            raise ValueError(f"eta exponent z must be >= 2, got {self.z}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def eta_values(x, y, model: SdeModel, params: EtaParams = EtaParams()) -> np.ndarray:
    """Pointwise ``eta`` for states ``x`` and ``y`` of shape ``(..., d)``.

    Where ``x == y`` the weight is defined to be 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    diff = x - y
    dist2 = np.sum(diff * diff, axis=-1)
    df = model.drift(x) - model.drift(y)
    dg = model.diffusion(x) - model.diffusion(y)
    bracket = (np.sum(diff * df, axis=-1)
               + 0.5 * (params.z - 1) * (1 + params.epsilon) * np.sum(dg * dg, axis=(-2, -1)))
    safe = np.where(dist2 > 0, dist2, 1.0)
    return np.where(dist2 > 0, params.z * np.maximum(bracket, 0.0) / safe, 0.0)


def _active_mask(n_points: int, stop_index, lead_shape) -> np.ndarray:
    """``r <= tau`` on grid indices, with ``tau = stop_index * h`` (never stopped: all)."""
    idx = np.arange(n_points)
    if stop_index is None:
        return np.ones(lead_shape + (n_points,), dtype=bool)
    stop = np.asarray(stop_index)
    stop = np.where(stop == NEVER, n_points, stop)
    return idx <= stop[..., None]


def eta_path(x_traj, y_traj, model: SdeModel, params: EtaParams = EtaParams(), h: float = 1.0,
             stop_index=None):
    """Per-point ``eta`` along two trajectories and its running integral.

    ``x_traj`` and ``y_traj`` have shape ``(..., N + 1, d)`` on a common grid
    of step ``h``.  Returns ``(eta, integral)``, both ``(..., N + 1)``, with
    ``integral[k] = h * sum(eta[:k])``.
    """
    x = np.asarray(x_traj, dtype=np.float64)
    y = np.asarray(y_traj, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"trajectories live on different grids: {x.shape} vs {y.shape}")
    eta = eta_values(x, y, model, params)
    eta = np.where(_active_mask(x.shape[-2], stop_index, x.shape[:-2]), eta, 0.0)
    zero = np.zeros(eta.shape[:-1] + (1,))
    integral = np.concatenate([zero, np.cumsum(eta[..., :-1], axis=-1) * h], axis=-1)
    return eta, integral


def exp_integrability_statistic(y_traj, model: SdeModel, h: float, stop_index=None,
                                log: bool = False):
    """``max_t exp(U0(Y_t) e^(-alpha t) + int_0^(t ^ tau) U1(Y_u) e^(-alpha u) du)``.

    ``y_traj`` is ``(..., N + 1, d)``; the result has the leading shape.  With
    ``log=True`` the exponent is returned instead, which never overflows.
    """
    if not model.has_lyapunov:
        raise CapabilityError(f"model {model.name!r} carries no Lyapunov pair (U0, U1, alpha)")
    y = np.asarray(y_traj, dtype=np.float64)
    t = np.arange(y.shape[-2]) * h
    decay = np.exp(-model.alpha * t)
    u1 = model.lyapunov_u1(y) * decay
    u1 = np.where(_active_mask(y.shape[-2], stop_index, y.shape[:-2]), u1, 0.0)
    # the indicator r <= tau already freezes the integral after the stop index
    zero = np.zeros(u1.shape[:-1] + (1,))
    integral = np.concatenate([zero, np.cumsum(u1[..., :-1], axis=-1) * h], axis=-1)
    exponent = np.max(model.lyapunov_u0(y) * decay + integral, axis=-1)
    return exponent if log else np.exp(exponent)


@dataclass
class DefectReport:
    level: int
    h: float
    drift_defect: float
    diffusion_defect: float
    exp_weight_log: float
    lhs: float
    implied_constant: float

    def row(self) -> dict:
        return dict(level=self.level, h=self.h, drift_defect=self.drift_defect,
                    diffusion_defect=self.diffusion_defect, exp_weight_log=self.exp_weight_log,
                    lhs=self.lhs, implied_constant=self.implied_constant)


@dataclass
class DefectStudy:
    model: str
    fine_level: int
    reports: list
    drift_slope: float
    diffusion_slope: float
    p: float
    q: float
    v: float
    paths: int
    excluded: int = 0
    delta: float = 3.0
    T: float = 1.0
    note: str = field(default="defects sampled at fine grid points; eta and sup on coarse points")

    def rows(self):
        for rep in self.reports:
            yield rep.row()

    @property
    def implied_constant_max(self) -> float:
        return max(r.implied_constant for r in self.reports)


def _slope(levels, values, T) -> float:
    """Fitted order of ``values``; NaN when some defect vanishes exactly."""
    if min(values) <= 0:
        return math.nan
    return fit_rate(levels, values, T)[0]


def defect_integrals(model: SdeModel, fine_level: int, levels: Sequence[int], paths: int,
                     params: TamingParams = TamingParams(), seed: int = 0, T: float = 1.0,
                     p: float = 4.0, q: float = 4.0, epsilon: float = 0.1,
                     threads: int = 1) -> DefectStudy:
    """Defect integrals of SITEM along its continuous interpolant.

    For every coarse level the interpolant is evaluated at the points of the
    level-``fine_level`` grid, which also carries the SITEM reference ``X``.
    The pathwise-uniform error is measured in ``L^v`` with ``1/v = 1/p + 1/q``.
    """
    levels = list(levels)
    if not levels or max(levels) >= fine_level:
        raise ValueError("every coarse level must be below the fine level")
    if not (p >= 2 and q >= 1):
        raise ValueError("need p >= 2 and q >= 1")
    params = params if isinstance(params, TamingParams) else TamingParams(float(params))
    v = 1.0 / (1.0 / p + 1.0 / q)
    runner = StoppedTamedEuler(model, params)
    h_f = T / 2**fine_level
    n_f = 2**fine_level
    eta_params = EtaParams(2.0, epsilon)

    def chunk(ids):
        inc = generate_paths(seed, ids, model.m, T, fine_level)
        ref = trajectories(runner, inc, h_f)
        W = partial_sums(inc)
        out = []
        for lv in levels:
            by = fine_level - lv
            k = 2**by
            h = T / 2**lv
            ens = trajectories(runner, coarsen_increments(inc, by), h)
            good = ~(ens.diverged | ref.diverged)
            j = np.arange(n_f)
            n = j // k
            y_n = ens.states[:, n]
            stop = np.where(ens.stop_index == NEVER, 2**lv, ens.stop_index)
            active = n[None, :] < stop[:, None]
            z, a, b = sitem_coefficients(model, y_n, (j % k) * h_f, W[:, j] - W[:, n * k], params)
            y_s = y_n + np.where(active[..., None], psi(z, params), 0.0)
            drift_err = np.sqrt(np.sum((model.drift(y_n) - a) ** 2, axis=-1))
            diff_err = np.sqrt(np.sum((model.diffusion(y_s) - b) ** 2, axis=(-2, -1)))
            drift_err = np.where(active, drift_err, 0.0)[good]
            diff_err = np.where(active, diff_err, 0.0)[good]

            x_c = ref.states[:, ::k]
            idx = np.arange(2**lv + 1)
            upto = idx[None, :] <= stop[:, None]
            dist = np.sqrt(np.sum((x_c - ens.states) ** 2, axis=-1))
            sup = np.max(np.where(upto, dist, 0.0), axis=-1)[good]
            _, integral = eta_path(x_c, ens.states, model, eta_params, h, ens.stop_index)
            log_weight = 0.5 * integral[:, -1][good]
            out.append((np.sum(drift_err**p, axis=0), np.sum(diff_err**p, axis=0),
                        sup, log_weight, int(np.count_nonzero(good))))
        return out

    parts = map_chunks(chunk, paths, threads)
    reports = []
    excluded = 0
    for i, lv in enumerate(levels):
        drift_sum = parts[0][i][0].copy()
        diff_sum = parts[0][i][1].copy()
        for part in parts[1:]:
            drift_sum += part[i][0]
            diff_sum += part[i][1]
        sup = np.concatenate([part[i][2] for part in parts])
        log_weight = np.concatenate([part[i][3] for part in parts])
        count = sum(part[i][4] for part in parts)
        excluded = max(excluded, paths - count)
        if count == 0:
            raise RuntimeError(f"every path diverged at level {lv}")
        h = T / 2**lv
        drift = float(np.sum((drift_sum / count) ** (2.0 / p)) * h_f)
        diffusion = float(np.sum((diff_sum / count) ** (2.0 / p)) * h_f)
        lhs = float(np.mean(sup**v) ** (1.0 / v))
        exp_log = float((logsumexp(q * log_weight) - math.log(count)) / q)
        aggregate = h**2 + drift + diffusion
        reports.append(DefectReport(lv, h, drift, diffusion, exp_log, lhs,
                                    lhs / math.sqrt(aggregate)))
    drift_slope = _slope(levels, [r.drift_defect for r in reports], T)
    diffusion_slope = _slope(levels, [r.diffusion_defect for r in reports], T)
    return DefectStudy(model.name, fine_level, reports, drift_slope, diffusion_slope, p, q, v,
                       paths, excluded, params.delta, T)
