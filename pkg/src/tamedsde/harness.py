"""Coupled-path Monte Carlo measurements.

Paths are processed in fixed chunks of :data:`PATH_CHUNK` consecutive path
ids.  Chunk boundaries never depend on the worker count and chunk results are
reduced in chunk order, so every report is bit-identical for any ``threads``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .brownian import coarsen_increments, generate_paths, partial_sums
from .models import SdeModel
from .schemes import (
    evolve,
    initial_state,
    make_scheme,
    start,
    trajectories,
)

PATH_CHUNK = 256
STEP_CHUNK = 4096


class RateUndefinedError(RuntimeError):
    """Fewer than two levels carry usable error estimates."""


class CapabilityError(ValueError):
    """The requested analysis is not available for this model."""


def map_chunks(fn: Callable[[np.ndarray], object], paths: int, threads: int = 1) -> list:
    """Apply ``fn`` to each fixed chunk of path ids; results come back in chunk order."""
    chunks = [np.arange(lo, min(lo + PATH_CHUNK, paths)) for lo in range(0, paths, PATH_CHUNK)]
    if threads <= 1 or len(chunks) == 1:
        return [fn(ids) for ids in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def resolve_scheme(scheme, model: SdeModel, T: float, delta: float = 3.0, gamma: float = 2.0):
    if isinstance(scheme, str):
        return make_scheme(scheme, model, delta=delta, gamma=gamma, T=T)
    return scheme


def lr_norm(samples, r: float) -> float:
    """``(mean |x|^r)^(1/r)`` over a one-dimensional sample."""
    x = np.abs(np.asarray(samples, dtype=np.float64))
    return float(np.mean(x**r) ** (1.0 / r))


def fit_rate(levels: Sequence[int], errors: Sequence[float], T: float = 1.0):
    """Least-squares slope of ``log2(error)`` against ``log2(h)``, ``h = T 2^-level``.

    Returns ``(slope, residual)`` where ``residual`` is the largest absolute
    deviation of the ``log2`` errors from the fitted line.
    """
    levels = np.asarray(levels, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if levels.size < 2 or levels.size != errors.size:
        raise RateUndefinedError("need at least two (level, error) pairs")
    if np.any(~(errors > 0)):
        raise ValueError("errors must be strictly positive to fit a log-log slope")
    x = np.log2(T) - levels
    y = np.log2(errors)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.max(np.abs(y - (slope * x + intercept))))
    return float(slope), residual


def exact_reference_gbm(mu: float, sigma: float, x0: float, increments, T: float) -> np.ndarray:
    """Closed-form GBM on the grid of ``increments`` (``(N, m)`` or ``(P, N, m)``)."""
    W = partial_sums(increments)[..., :1]
    t = np.arange(W.shape[-2])[:, None] * (T / (W.shape[-2] - 1))
    return x0 * np.exp((mu - 0.5 * sigma**2) * t + sigma * W)


def sup_errors(reference: np.ndarray, coarse: np.ndarray, by: int) -> np.ndarray:
    """Max over coarse grid points of ``|X_ref - Y|`` per path."""
    ref = reference[:, :: 2**by]
    return np.max(np.sqrt(np.sum((ref - coarse) ** 2, axis=-1)), axis=-1)


@dataclass
class ErrorSample:
    path_id: int
    sup_error: Optional[float]
    diverged: bool


@dataclass
class RateReport:
    scheme: str
    model: str
    r: float
    levels: list
    errors: list
    slope: float
    residual: float
    paths: int
    diverged: list
    T: float = 1.0
    samples: np.ndarray = field(default=None, repr=False)
    stderr: list = field(default_factory=list)
    note: str = "sup taken over coarse grid points only"

    @property
    def hs(self) -> list:
        return [self.T / 2**lv for lv in self.levels]

    def error_samples(self, level: int) -> list:
        k = self.levels.index(level)
        out = []
        for p in range(self.paths):
            e = self.samples[p, k]
            bad = not np.isfinite(e)
            out.append(ErrorSample(p, None if bad else float(e), bad))
        return out

    def rows(self):
        for lv, h, e, dv in zip(self.levels, self.hs, self.errors, self.diverged):
            yield dict(scheme=self.scheme, model=self.model, level=lv, h=h, error_Lr=e,
                       r=self.r, paths=self.paths, diverged=dv)


def strong_error(model: SdeModel, scheme, ref_level: int, levels: Sequence[int], paths: int,
                 r: float = 2.0, seed: int = 0, T: float = 1.0, threads: int = 1,
                 reference: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 delta: float = 3.0, gamma: float = 2.0) -> RateReport:
    """Pathwise-uniform ``L^r`` errors of ``scheme`` at each coarse level.

    Each path draws its increments once at ``ref_level``.  The reference is the
    same scheme on the full grid unless ``reference(increments)`` supplies
    reference states; coarse runs use exact coarsenings of the same noise.
    """
    levels = list(levels)
    if not ref_level > max(levels) + 1:
        raise ValueError("ref_level must exceed max(levels) + 1")
    if not r > 0:
        raise ValueError("r must be positive")
    runner = resolve_scheme(scheme, model, T, delta, gamma)
    h_ref = T / 2**ref_level

    def chunk(ids):
        inc = generate_paths(seed, ids, model.m, T, ref_level)
        if reference is None:
            ref = trajectories(runner, inc, h_ref)
            ref_states, ref_bad = ref.states, ref.diverged
        else:
            ref_states = reference(inc)
            ref_bad = ~np.all(np.isfinite(ref_states), axis=(-2, -1))
        sup = np.full((len(ids), len(levels)), np.nan)
        for k, lv in enumerate(levels):
            by = ref_level - lv
            ens = trajectories(runner, coarsen_increments(inc, by), T / 2**lv)
            ok = ~(ens.diverged | ref_bad)
            sup[ok, k] = sup_errors(ref_states[ok], ens.states[ok], by)
        return sup

    samples = np.concatenate(map_chunks(chunk, paths, threads), axis=0)
    errors, diverged, stderr = [], [], []
    for k in range(len(levels)):
        col = samples[:, k]
        good = col[np.isfinite(col)]
        diverged.append(int(paths - good.size))
        if good.size == 0:
            errors.append(math.nan)
            stderr.append(math.nan)
            continue
        errors.append(lr_norm(good, r))
        stderr.append(float(np.std(good**r) / np.sqrt(good.size)))
    usable = [k for k, e in enumerate(errors) if np.isfinite(e) and e > 0]
    if len(usable) < len(levels):
        warnings.warn(f"{len(levels) - len(usable)} level(s) excluded: no usable paths",
                      RuntimeWarning, stacklevel=2)
    if len(usable) < 2:
        raise RateUndefinedError("fewer than two levels with usable paths")
    slope, residual = fit_rate([levels[k] for k in usable], [errors[k] for k in usable], T)
    return RateReport(scheme=runner.name, model=model.name, r=r, levels=levels, errors=errors,
                      slope=slope, residual=residual, paths=paths, diverged=diverged, T=T,
                      samples=samples, stderr=stderr)


# ---------------------------------------------------------------------------
# long-time behaviour


def streaming_level(T: float, h: float) -> tuple[int, int, float]:
    """``(level, steps, grid_T)`` such that ``grid_T / 2**level == h`` covers ``[0, T]``."""
    steps = T / h
    n = int(round(steps))
    if n < 1 or abs(n - steps) > 1e-9 * max(1.0, steps):
        raise ValueError(f"T={T!r} is not an integer multiple of h={h!r}")
    level = max(0, math.ceil(math.log2(n)))
    return level, n, h * 2**level


def _stream(runner, model: SdeModel, ids, seed: int, h: float, T: float, observe):
    level, n, grid_T = streaming_level(T, h)
    status = start(runner, len(ids), h)
    y = initial_state(runner, len(ids), None)
    observe(0, y)
    for lo in range(0, n, STEP_CHUNK):
        hi = min(lo + STEP_CHUNK, n)
        inc = generate_paths(seed, ids, model.m, grid_T, level, lo, hi)
        y = evolve(runner, y, inc, h, status, n0=lo, observe=observe)
    return y, status


@dataclass
class MomentSeries:
    times: np.ndarray
    orders: list
    moments: dict
    running_second: np.ndarray
    lost: np.ndarray
    terminal_norms: np.ndarray
    paths: int

    def rows(self):
        for p in self.orders:
            for t, v in zip(self.times, self.moments[p]):
                yield dict(t=t, p=p, moment=v)

    def value_at(self, p: float, t: float) -> float:
        k = int(np.argmin(np.abs(self.times - t)))
        return float(self.moments[p][k])


def longtime_moments(model: SdeModel, scheme, h: float, T: float, paths: int,
                     orders: Sequence[float] = (1, 2), seed: int = 0, threads: int = 1,
                     stride: int = 1, delta: float = 3.0, gamma: float = 2.0) -> MomentSeries:
    """Monte Carlo curves ``E|Y_t|^p`` on ``[0, T]``, recorded every ``stride`` steps."""
    orders = list(orders)
    runner = resolve_scheme(scheme, model, T, delta, gamma)
    _, n, _ = streaming_level(T, h)
    rec = np.arange(0, n + 1, stride)
    if rec[-1] != n:
        rec = np.append(rec, n)
    slot = {int(k): i for i, k in enumerate(rec)}

    def chunk(ids):
        sums = np.zeros((len(orders), rec.size))
        alive = np.zeros(rec.size, dtype=np.int64)

        def observe(k, y):
            i = slot.get(k)
            if i is None:
                return
            norm = np.sqrt(np.sum(y * y, axis=-1))
            ok = np.isfinite(norm)
            alive[i] = int(np.count_nonzero(ok))
            for j, p in enumerate(orders):
                sums[j, i] = np.sum(norm[ok] ** p)

        y, _ = _stream(runner, model, ids, seed, h, T, observe)
        return sums, alive, np.sqrt(np.sum(y * y, axis=-1))

    parts = map_chunks(chunk, paths, threads)
    sums = parts[0][0].copy()
    alive = parts[0][1].copy()
    for s, a, _ in parts[1:]:
        sums += s
        alive += a
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / alive
    moments = {p: means[j] for j, p in enumerate(orders)}
    times = rec * h
    if 2 in orders:
        second = moments[2]
    else:
        second = np.full(rec.size, np.nan)
    # running time average by the left-endpoint rule
    dt = np.diff(times)
    integral = np.concatenate([[0.0], np.cumsum(second[:-1] * dt)])
    with np.errstate(invalid="ignore", divide="ignore"):
        running = np.where(times > 0, integral / np.where(times > 0, times, 1.0), second)
    terminal = np.concatenate([p[2] for p in parts])
    return MomentSeries(times, orders, moments, running, paths - alive, terminal, paths)


# ---------------------------------------------------------------------------
# stationary densities


def _langevin_log_density(model: SdeModel):
    from .models import double_well

    if model.params.get("potential") != "double_well" or model.d != 2:
        raise CapabilityError("density check supports the one-dimensional double-well Langevin model")
    V = double_well()
    scale = 2.0 * model.params["gamma"] / model.params["beta"]
    return lambda x1: -scale * V.value(np.asarray(x1)[..., None])


def _vdp_log_density(model: SdeModel, nodes: np.ndarray):
    phi = model.params.get("phi", "")
    if not phi.startswith("const") or model.m != 1:
        raise CapabilityError("density check supports van der Pol with scalar additive noise only")
    theta2 = float(phi.split()[1]) ** 2
    alpha = model.params["alpha"]

    def log_marginal(x1):
        x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
        out = np.empty(x1.shape)
        for lo in range(0, x1.size, 512):
            rho = x1[lo:lo + 512, None] ** 2 + nodes[None, :] ** 2
            logp = -alpha / (8.0 * theta2) * (rho**2 - 8.0 * rho)
            top = np.max(logp, axis=1, keepdims=True)
            out[lo:lo + 512] = top[:, 0] + np.log(np.trapezoid(np.exp(logp - top), nodes, axis=1))
        return out

    return log_marginal


def analytic_marginal(model: SdeModel, L: float = 6.0, nodes: int = 4096):
    """Normalised stationary density of the first coordinate.

    Returns ``(density, grid, values)`` where ``density(x)`` evaluates the
    normalised marginal and ``values`` are its values on the quadrature grid.
    """
    grid = np.linspace(-L, L, nodes)
    if model.name == "langevin":
        log_marginal = _langevin_log_density(model)
    elif model.name == "van_der_pol":
        log_marginal = _vdp_log_density(model, grid)
    else:
        raise CapabilityError(f"no analytic stationary density for model {model.name!r}")
    logs = log_marginal(grid)
    top = float(np.max(logs))
    norm = float(np.trapezoid(np.exp(logs - top), grid))

    def density(x):
        return np.exp(log_marginal(x) - top) / norm

    return density, grid, np.exp(logs - top) / norm


@dataclass
class DensityReport:
    bin_centers: np.ndarray
    empirical: np.ndarray
    analytic: np.ndarray
    l1: float
    samples: int

    def rows(self):
        for c, e, a in zip(self.bin_centers, self.empirical, self.analytic):
            yield dict(bin_center=c, empirical=e, analytic=a)


def stationary_samples(model: SdeModel, scheme, h: float, T: float, paths: int,
                       T_burn: float = 100.0, every: float = 1.0, seed: int = 0,
                       threads: int = 1, delta: float = 3.0, gamma: float = 2.0) -> np.ndarray:
    """First-coordinate samples at times ``T_burn, T_burn + every, ..., T`` of each path."""
    runner = resolve_scheme(scheme, model, T, delta, gamma)
    stride = int(round(every / h))
    first = int(round(T_burn / h))
    if stride < 1 or abs(stride * h - every) > 1e-9 * every:
        raise ValueError("subsampling interval must be a positive multiple of h")

    def chunk(ids):
        out = []

        def observe(k, y):
            if k >= first and (k - first) % stride == 0:
                out.append(y[:, 0].copy())

        _stream(runner, model, ids, seed, h, T, observe)
        return np.stack(out, axis=1)

    return np.concatenate(map_chunks(chunk, paths, threads), axis=0).ravel()


def density_distance(samples: np.ndarray, model: SdeModel, bins: int = 64, L: float = 6.0,
                     nodes: int = 4096) -> DensityReport:
    """Histogram of ``samples`` on ``[-L, L]`` against the analytic marginal, in L1."""
    samples = np.asarray(samples)
    samples = samples[np.isfinite(samples)]
    density, _, _ = analytic_marginal(model, L, nodes)
    counts, edges = np.histogram(samples, bins=bins, range=(-L, L))
    width = edges[1] - edges[0]
    empirical = counts / (samples.size * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    analytic = density(centers)
    l1 = float(np.sum(np.abs(empirical - analytic)) * width)
    return DensityReport(centers, empirical, analytic, l1, int(samples.size))


def stationary_density_check(model: SdeModel, scheme, h: float, T_burn: float, T_sample: float,
                             bins: int, paths: int, seed: int = 0, threads: int = 1,
                             every: float = 1.0, L: float = 6.0, delta: float = 3.0) -> DensityReport:
    """Run to ``T_burn + T_sample`` and compare post-burn-in samples with the analytic marginal."""
    analytic_marginal(model, L, 16)  # capability check before the expensive run
    samples = stationary_samples(model, scheme, h, T_burn + T_sample, paths, T_burn, every,
                                 seed, threads, delta)
    return density_distance(samples, model, bins, L)
