"""Time-stepping schemes driven by pre-generated Brownian increments.

Schemes advance a batch of paths at once: states are ``(P, d)`` and the
increments for one step are ``(P, m)``.  ``trajectories`` records every grid
point, ``evolve`` streams through a block of increments and only keeps the
final state, which is what the long-time studies need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .brownian import IncrementGrid, partial_sums
from .models import LvCoefficients, SdeModel
from .taming import TamingParams, psi, psi1_matrix, psi2_apply

NEVER = -1
SCHEME_NAMES = ("em", "tamed_em", "sitem", "lv_milstein")


class SchemeError(RuntimeError):
    pass


class ConfigurationError(SchemeError, ValueError):
    """Scheme parameters are incompatible with the requested step size."""


class DivergenceError(SchemeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


class StepSizeError(ConfigurationError):
    def __init__(self, h: float, h_max: float):
        super().__init__(f"stepsize h={h!r} exceeds the admissible maximum h_max={h_max!r}")
        self.h = h
        self.h_max = h_max


@dataclass
class PathStatus:
    """Per-path bookkeeping shared by all schemes."""

    diverged_at: np.ndarray
    stop_index: np.ndarray
    h: float
    max_pivot_inverse: float = 0.0

    @classmethod
    def fresh(cls, paths: int, h: float) -> "PathStatus":
        return cls(np.full(paths, NEVER), np.full(paths, NEVER), h)

    @property
    def diverged(self) -> np.ndarray:
        return self.diverged_at != NEVER


def _apply_noise(g: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """``g @ dw`` per path as an explicit sum over noise channels (fixed order)."""
    out = g[..., 0] * dw[..., None, 0]
    for j in range(1, g.shape[-1]):
        out = out + g[..., j] * dw[..., None, j]
    return out


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def _mark_divergence(y: np.ndarray, status: PathStatus, index: int) -> np.ndarray:
    bad = ~np.all(np.isfinite(y), axis=-1)
    fresh = bad & (status.diverged_at == NEVER)
    if np.any(fresh):
        status.diverged_at[fresh] = index
    if np.any(bad):
        y = y.copy()
        y[bad] = np.nan
    return y


@dataclass(frozen=True)
class EulerMaruyama:
    model: SdeModel
    name: str = field(default="em", init=False)

    def step(self, y, dw, h, n, status):
        with np.errstate(over="ignore", invalid="ignore"):
            y_new = y + self.model.drift(y) * h + _apply_noise(self.model.diffusion(y), dw)
        return _mark_divergence(y_new, status, n + 1)

    def finish(self, y, n, status):
        pass


@dataclass(frozen=True)
class TamedEulerMaruyama:
    """Increment-tamed Euler-Maruyama without the stopping rule."""

    model: SdeModel
    params: TamingParams = TamingParams()
    name: str = field(default="tamed_em", init=False)

    def step(self, y, dw, h, n, status):
        inc = self.model.drift(y) * h + _apply_noise(self.model.diffusion(y), dw)
        return _mark_divergence(y + psi(inc, self.params), status, n + 1)

    def finish(self, y, n, status):
        pass


def sitem_threshold(h: float) -> float:
    if not h < 1:
        raise ConfigurationError(f"SITEM needs h < 1 so that |ln h| > 0, got h={h!r}")
    return float(np.exp(np.sqrt(abs(np.log(h)))))


@dataclass(frozen=True)
class StoppedTamedEuler:
    """SITEM: tamed whole increment, frozen once ``|Y| >= exp(|ln h|^(1/2))``."""

    model: SdeModel
    params: TamingParams = TamingParams()
    name: str = field(default="sitem", init=False)

    def _active(self, y, h, n, status):
        active = _norm(y) < sitem_threshold(h)
        newly = ~active & (status.stop_index == NEVER)
        status.stop_index[newly] = n
        return active

    def step(self, y, dw, h, n, status):
        active = self._active(y, h, n, status)
        inc = self.model.drift(y) * h + _apply_noise(self.model.diffusion(y), dw)
        y_new = np.where(active[:, None], y + psi(inc, self.params), y)
        return _mark_divergence(y_new, status, n + 1)

    def finish(self, y, n, status):
        self._active(y, status.h, n, status)


@dataclass(frozen=True)
class LvStepGuard:
    gamma: float
    h_max: float

    @classmethod
    def for_coefficients(cls, coeffs: LvCoefficients, T: float, gamma: float = 2.0) -> "LvStepGuard":
        if not gamma > 1:
            raise ConfigurationError(f"pivot margin gamma must exceed 1, got {gamma!r}")
        excess = coeffs.b - 0.5 * np.sum(coeffs.sigma**2, axis=1)
        with np.errstate(divide="ignore"):
            limits = np.where(excess > 0, 1.0 / (gamma * np.maximum(excess, 1e-300)), np.inf)
        return cls(gamma=gamma, h_max=float(min(np.min(limits), T)))

    @property
    def pivot_inverse_bound(self) -> float:
        return self.gamma / (self.gamma - 1.0)

    def check(self, h: float) -> None:
        if h > self.h_max * (1 + 1e-12):
            raise StepSizeError(h, self.h_max)


@dataclass(frozen=True)
class LinearImplicitMilstein:
    """Positivity-preserving linear-implicit Milstein step for Lotka-Volterra."""

    coeffs: LvCoefficients
    guard: LvStepGuard
    name: str = field(default="lv_milstein", init=False)

    def step(self, y, dw, h, n, status):
        c = self.coeffs
        q = 1.0 - c.b * h + h * (y @ c.A.T) + 0.5 * h * np.sum(c.sigma**2, axis=1)
        if np.any(q <= 0):
            raise SchemeError(f"internal invariant violated: non-positive pivot at step {n}")
        status.max_pivot_inverse = max(status.max_pivot_inverse, float(np.max(1.0 / q)))
        s = _apply_noise(np.broadcast_to(c.sigma, y.shape[:-1] + c.sigma.shape), dw)
        y_new = y * (1.0 + s + 0.5 * s * s) / q
        return _mark_divergence(y_new, status, n + 1)

    def finish(self, y, n, status):
        pass


def make_scheme(name: str, model: SdeModel, *, delta: float = 3.0, gamma: float = 2.0,
                T: Optional[float] = None):
    if name == "em":
        return EulerMaruyama(model)
    if name == "tamed_em":
        return TamedEulerMaruyama(model, TamingParams(delta))
    if name == "sitem":
        return StoppedTamedEuler(model, TamingParams(delta))
    if name == "lv_milstein":
        coeffs = model.params.get("coeffs")
        if coeffs is None:
            raise ConfigurationError("lv_milstein applies only to the lotka_volterra model")
        if T is None:
            raise ConfigurationError("lv_milstein needs the horizon T to size its step guard")
        return LinearImplicitMilstein(coeffs, LvStepGuard.for_coefficients(coeffs, T, gamma))
    raise ConfigurationError(f"unknown scheme {name!r}; valid schemes: {', '.join(SCHEME_NAMES)}")


@dataclass
class Ensemble:
    """Grid-point states of a batch of paths plus per-path diagnostics."""

    scheme: str
    h: float
    states: np.ndarray
    diverged_at: np.ndarray
    stop_index: np.ndarray
    max_pivot_inverse: float = 0.0

    @property
    def diverged(self) -> np.ndarray:
        return self.diverged_at != NEVER


def start(scheme, paths: int, h: float) -> PathStatus:
    """Validate ``h`` for ``scheme`` and return fresh bookkeeping for ``paths`` paths."""
    if isinstance(scheme, LinearImplicitMilstein):
        scheme.guard.check(h)
    if isinstance(scheme, StoppedTamedEuler):
        sitem_threshold(h)
    return PathStatus.fresh(paths, h)


def initial_state(scheme, paths: int, x0) -> np.ndarray:
    if x0 is None:
        x0 = scheme.coeffs.x0 if isinstance(scheme, LinearImplicitMilstein) else scheme.model.x0
    x0 = np.asarray(x0, dtype=np.float64)
    return np.broadcast_to(x0, (paths, x0.shape[-1])).copy()


def evolve(scheme, y: np.ndarray, increments: np.ndarray, h: float, status: PathStatus,
           n0: int = 0, observe: Optional[Callable[[int, np.ndarray], None]] = None) -> np.ndarray:
    """Advance ``y`` through ``increments`` ``(P, K, m)`` starting at step ``n0``.

    ``observe(n, y)`` is called after every step with the new grid index.
    """
    for k in range(increments.shape[1]):
        y = scheme.step(y, increments[:, k, :], h, n0 + k, status)
        if observe is not None:
            observe(n0 + k + 1, y)
    return y


def trajectories(scheme, increments: np.ndarray, h: float, x0=None) -> Ensemble:
    """Run ``scheme`` on stacked increments ``(P, N, m)``; returns all grid-point states."""
    increments = np.asarray(increments, dtype=np.float64)
    if increments.ndim == 2:
        increments = increments[None]
    P, N, _ = increments.shape
    status = start(scheme, P, h)
    y = initial_state(scheme, P, x0)
    states = np.empty((P, N + 1, y.shape[-1]))
    states[:, 0] = y

    def record(n, y_n):
        states[:, n] = y_n

    y = evolve(scheme, y, increments, h, status, observe=record)
    scheme.finish(y, N, status)
    return Ensemble(scheme.name, h, states, status.diverged_at, status.stop_index,
                    status.max_pivot_inverse)


# ---------------------------------------------------------------------------
# single-path entry points


@dataclass(frozen=True)
class SitemState:
    y: np.ndarray
    stopped: bool
    stop_index: Optional[int]


def em_trajectory(model: SdeModel, grid: IncrementGrid) -> np.ndarray:
    ens = trajectories(EulerMaruyama(model), grid.increments, grid.h)
    if ens.diverged[0]:
        raise DivergenceError(int(ens.diverged_at[0]))
    return ens.states[0]


def tamed_em_trajectory(model: SdeModel, grid: IncrementGrid, params: TamingParams) -> np.ndarray:
    return trajectories(TamedEulerMaruyama(model, params), grid.increments, grid.h).states[0]


def sitem_trajectory(model: SdeModel, grid: IncrementGrid, params: TamingParams):
    ens = trajectories(StoppedTamedEuler(model, params), grid.increments, grid.h)
    idx = int(ens.stop_index[0])
    stop = None if idx == NEVER else idx
    return ens.states[0], SitemState(ens.states[0, -1].copy(), stop is not None, stop)


def lv_milstein_trajectory(coeffs: LvCoefficients, grid: IncrementGrid,
                           guard: Optional[LvStepGuard] = None) -> np.ndarray:
    guard = guard or LvStepGuard.for_coefficients(coeffs, grid.T)
    ens = trajectories(LinearImplicitMilstein(coeffs, guard), grid.increments, grid.h)
    return ens.states[0]


# ---------------------------------------------------------------------------
# continuous SITEM interpolant


def sitem_coefficients(model: SdeModel, y_n: np.ndarray, elapsed, dw_partial: np.ndarray,
                       params: TamingParams):
    """In-step quantities of the continuous SITEM interpolant.

    ``y_n`` is the state at the start of the step, ``elapsed = s - t_n`` and
    ``dw_partial = W_s - W_{t_n}``; all broadcast over leading axes.  Returns
    ``(Z_s, a(s), b(s))``.
    """
    f = model.drift(y_n)
    g = model.diffusion(y_n)
    z = f * np.asarray(elapsed)[..., None] + _apply_noise(g, dw_partial)
    jac = psi1_matrix(z, params)
    a = np.einsum("...ij,...j->...i", jac, f)
    for j in range(g.shape[-1]):
        a = a + 0.5 * psi2_apply(z, g[..., j], params)
    b = np.einsum("...ij,...jm->...im", jac, g)
    return z, a, b


def sitem_defects(model: SdeModel, grid: IncrementGrid, params: TamingParams, level: int,
                  n: int, s: float, states: Optional[np.ndarray] = None):
    """``(a(s), b(s))`` for SITEM run at ``level`` on the coarsening of ``grid``.

    ``s`` must be a grid point of the fine ``grid`` lying in ``[t_n, t_{n+1}]``.
    """
    from .brownian import coarsen

    if level > grid.level:
        raise ValueError("coarse level must not exceed the grid level")
    h = grid.T / 2**level
    if not (n * h - 1e-12 * grid.T <= s <= (n + 1) * h + 1e-12 * grid.T):
        raise ValueError(f"s={s!r} lies outside [t_n, t_n+1] = [{n * h!r}, {(n + 1) * h!r}]")
    k = round(s / grid.h)
    if abs(k * grid.h - s) > 1e-9 * grid.h:
        raise ValueError(f"s={s!r} is not a point of the level-{grid.level} grid")
    if states is None:
        states, _ = sitem_trajectory(model, coarsen(grid, grid.level - level), params)
    W = partial_sums(grid.increments)
    k0 = n * 2 ** (grid.level - level)
    _, a, b = sitem_coefficients(model, states[n], s - n * h, W[k] - W[k0], params)
    return a, b
