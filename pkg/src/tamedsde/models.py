"""Model zoo: drift/diffusion evaluators, Lyapunov data and domain per SDE.

Evaluators are vectorised: ``drift`` maps ``(..., d) -> (..., d)`` and
``diffusion`` maps ``(..., d) -> (..., d, m)``.  Jacobians follow the same
convention with the differentiation index last: ``drift_jacobian`` returns
``(..., d, d)`` and ``diffusion_jacobian`` returns ``(..., d, m, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

REAL = "real"
POSITIVE = "positive"

Array = np.ndarray
Field = Callable[[Array], Array]


class AssumptionError(ValueError):
    """Coefficients violate a structural assumption of the model."""


@dataclass(frozen=True, eq=False)
class SdeModel:
    name: str
    d: int
    m: int
    drift: Field
    diffusion: Field
    x0: Array
    domain: str = REAL
    drift_jacobian: Optional[Field] = None
    diffusion_jacobian: Optional[Field] = None
    lyapunov_u0: Optional[Field] = None
    lyapunov_u1: Optional[Field] = None
    u0_grad: Optional[Field] = None
    u0_hess: Optional[Field] = None
    alpha: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.float64).reshape(self.d)
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        if self.domain not in (REAL, POSITIVE):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.domain == POSITIVE and np.any(x0 <= 0):
            raise AssumptionError("initial state must be strictly positive")

    @property
    def has_lyapunov(self) -> bool:
        return self.lyapunov_u0 is not None

    def sample_points(self, n: int, rng: np.random.Generator) -> Array:
        x = rng.standard_normal((n, self.d))
        if self.domain == POSITIVE:
            x = np.abs(x) + 0.1
        return x


@dataclass(frozen=True)
class LvCoefficients:
    b: Array
    A: Array
    sigma: Array
    x0: Array

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64).ravel()
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        x0 = np.asarray(self.x0, dtype=np.float64).ravel()
        d = b.size
        if A.shape != (d, d) or sigma.shape[0] != d or x0.size != d:
            raise ValueError("inconsistent Lotka-Volterra coefficient shapes")
        for name, val in (("b", b), ("A", A), ("sigma", sigma), ("x0", x0)):
            object.__setattr__(self, name, val)
        neg = np.argwhere(A < 0)
        if neg.size:
            i, j = neg[0]
            raise AssumptionError(f"A[{i},{j}] = {A[i, j]} is negative; A must be entrywise non-negative")
        diag = np.diag(A)
        if not np.all(diag > 0):
            i = int(np.argmin(diag))
            raise AssumptionError(f"A[{i},{i}] = {diag[i]} must be strictly positive")
        if np.any(x0 <= 0):
            raise AssumptionError("x0 must be strictly positive componentwise")

    @property
    def d(self) -> int:
        return self.b.size

    @property
    def m(self) -> int:
        return self.sigma.shape[1]

    def scaled_noise(self, factor: float) -> "LvCoefficients":
        return LvCoefficients(self.b, self.A, factor * self.sigma, self.x0)


# ---------------------------------------------------------------------------
# potentials and noise loadings


@dataclass(frozen=True)
class Potential:
    """A confining potential with gradient and Hessian, vectorised over ``(..., k)``."""

    name: str
    value: Field
    grad: Field
    hess: Field


def double_well() -> Potential:
    """``V(x) = (|x|^2 - 1)^2 / 4``, i.e. ``x^4/4 - x^2/2`` shifted to be non-negative."""

    def value(x):
        s = np.sum(x * x, axis=-1)
        return 0.25 * (s - 1.0) ** 2

    def grad(x):
        s = np.sum(x * x, axis=-1, keepdims=True)
        return (s - 1.0) * x

    def hess(x):
        s = np.sum(x * x, axis=-1)[..., None, None]
        k = x.shape[-1]
        return (s - 1.0) * np.eye(k) + 2.0 * x[..., :, None] * x[..., None, :]

    return Potential("double_well", value, grad, hess)


@dataclass(frozen=True)
class Phi:
    """Scalar-argument noise loading ``phi: R -> R^{1 x m}`` of the oscillators.

    ``kind`` is ``"const"`` (``phi(x) = c``) or ``"linear"`` (``phi(x) = c x``);
    ``coef`` has one entry per noise channel.
    """

    kind: str
    coef: tuple

    def __post_init__(self):
        if self.kind not in ("const", "linear"):
            raise ValueError(f"unknown phi kind {self.kind!r}")
        object.__setattr__(self, "coef", tuple(float(c) for c in np.atleast_1d(self.coef)))

    @property
    def m(self) -> int:
        return len(self.coef)

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.coef)) if self.kind == "linear" else 0.0

    def __call__(self, x1):
        c = np.asarray(self.coef)
        x1 = np.asarray(x1, dtype=np.float64)[..., None]
        return c * x1 if self.kind == "linear" else c * np.ones_like(x1)

    def prime(self, x1):
        c = np.asarray(self.coef)
        x1 = np.asarray(x1, dtype=np.float64)[..., None]
        return c * np.ones_like(x1) if self.kind == "linear" else np.zeros_like(c * x1)

    def label(self) -> str:
        return f"{self.kind} " + ",".join(repr(c) for c in self.coef)


def _const_diffusion(G: Array, d: int, m: int) -> tuple[Field, Field]:
    def diffusion(x):
        return np.broadcast_to(G, x.shape[:-1] + (d, m)).copy()

    def diffusion_jacobian(x):
        return np.zeros(x.shape[:-1] + (d, m, d))

    return diffusion, diffusion_jacobian


def _second_order_diffusion(phi: Phi) -> tuple[Field, Field]:
    """``g(x) u = (0, phi(x_1) u)`` for two-dimensional oscillators."""
    m = phi.m

    def diffusion(x):
        g = np.zeros(x.shape[:-1] + (2, m))
        g[..., 1, :] = phi(x[..., 0])
        return g

    def diffusion_jacobian(x):
        dg = np.zeros(x.shape[:-1] + (2, m, 2))
        dg[..., 1, :, 0] = phi.prime(x[..., 0])
        return dg

    return diffusion, diffusion_jacobian


def _quadratic_u0(scale: float) -> tuple[Field, Field, Field]:
    """``U0(x) = scale * |x|^2`` with analytic gradient and Hessian."""

    def u0(x):
        return scale * np.sum(x * x, axis=-1)

    def grad(x):
        return 2.0 * scale * x

    def hess(x):
        return np.broadcast_to(2.0 * scale * np.eye(x.shape[-1]), x.shape + (x.shape[-1],))

    return u0, grad, hess


def _zero_scalar(x):
    return np.zeros(np.shape(x)[:-1])


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# zoo


def lorenz_additive(a1: float, a2: float, a3: float, noise, x0) -> SdeModel:
    """Stochastic Lorenz system driven by the constant noise matrix ``noise`` (3 x m)."""
    _require(min(a1, a2, a3) >= 0, "Lorenz rates a1, a2, a3 must be non-negative")
    G = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    _require(G.shape[0] == 3, "Lorenz noise matrix must have three rows")
    m = G.shape[1]

    def drift(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([a1 * (x2 - x1), a2 * x1 - x2 - x1 * x3, x1 * x2 - a3 * x3], axis=-1)

    def drift_jacobian(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 0, 0] = -a1
        J[..., 0, 1] = a1
        J[..., 1, 0] = a2 - x3
        J[..., 1, 1] = -1.0
        J[..., 1, 2] = -x1
        J[..., 2, 0] = x2
        J[..., 2, 1] = x1
        J[..., 2, 2] = -a3
        return J

    diffusion, diffusion_jacobian = _const_diffusion(G, 3, m)
    u0, grad, hess = _quadratic_u0(1.0)
    # <x, f(x)> <= (a1 + a2)/2 |x|^2 and |g^T grad U0|^2 / 2 = 2 |G^T x|^2
    alpha = 0.5 * (a1 + a2) * 2.0 + 2.0 * float(np.linalg.norm(G, 2)) ** 2
    return SdeModel(
        name="lorenz", d=3, m=m, drift=drift, diffusion=diffusion, x0=x0,
        drift_jacobian=drift_jacobian, diffusion_jacobian=diffusion_jacobian,
        lyapunov_u0=u0, lyapunov_u1=_zero_scalar, u0_grad=grad, u0_hess=hess,
        alpha=alpha, params=dict(a1=a1, a2=a2, a3=a3, noise=G.tolist()),
    )


def _potential_or_default(potential):
    return double_well() if potential is None else potential


def langevin(potential: Potential | None, gamma: float, beta: float, x0) -> SdeModel:
    """Underdamped Langevin dynamics in ``R^{2m}`` with state ``(position, velocity)``."""
    _require(gamma > 0, "Langevin friction gamma must be positive")
    _require(beta > 0, "Langevin noise intensity beta must be positive")
    V = _potential_or_default(potential)
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    _require(x0.size % 2 == 0, "Langevin state dimension must be even")
    k = x0.size // 2
    sb = np.sqrt(beta)

    def drift(x):
        q, p = x[..., :k], x[..., k:]
        return np.concatenate([p, -V.grad(q) - gamma * p], axis=-1)

    def drift_jacobian(x):
        q = x[..., :k]
        J = np.zeros(x.shape[:-1] + (2 * k, 2 * k))
        J[..., :k, k:] = np.eye(k)
        J[..., k:, :k] = -V.hess(q)
        J[..., k:, k:] = -gamma * np.eye(k)
        return J

    G = np.vstack([np.zeros((k, k)), sb * np.eye(k)])
    diffusion, diffusion_jacobian = _const_diffusion(G, 2 * k, k)
    v = gamma / beta

    def u0(x):
        return 0.5 * v * np.sum(x * x, axis=-1) + v * V.value(x[..., :k])

    def grad(x):
        out = v * x.copy()
        out[..., :k] += v * V.grad(x[..., :k])
        return out

    return SdeModel(
        name="langevin", d=2 * k, m=k, drift=drift, diffusion=diffusion, x0=x0,
        drift_jacobian=drift_jacobian, diffusion_jacobian=diffusion_jacobian,
        lyapunov_u0=u0, lyapunov_u1=_zero_scalar, u0_grad=grad, alpha=1.0,
        params=dict(potential=V.name, gamma=gamma, beta=beta),
    )


def brownian_dynamics(potential: Potential | None, beta: float, x0) -> SdeModel:
    """Overdamped Langevin dynamics ``dX = -grad V(X) dt + sqrt(beta) dW``."""
    _require(beta > 0, "Brownian dynamics noise intensity beta must be positive")
    V = _potential_or_default(potential)
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    d = x0.size

    def drift(x):
        return -V.grad(x)

    def drift_jacobian(x):
        return -V.hess(x)

    diffusion, diffusion_jacobian = _const_diffusion(np.sqrt(beta) * np.eye(d), d, d)
    # theta = 0 and v at the midpoint of (0, 2/beta)
    v = 1.0 / beta

    def u0(x):
        return v * V.value(x)

    def u1(x):
        return v * (1.0 - 0.5 * beta * v) * np.sum(V.grad(x) ** 2, axis=-1)

    def grad(x):
        return v * V.grad(x)

    def hess(x):
        return v * V.hess(x)

    # Laplacian of the double well is bounded by 6 (1 + V); the residual is beta v/2 Lap V
    alpha = 3.0
    return SdeModel(
        name="brownian_dynamics", d=d, m=d, drift=drift, diffusion=diffusion, x0=x0,
        drift_jacobian=drift_jacobian, diffusion_jacobian=diffusion_jacobian,
        lyapunov_u0=u0, lyapunov_u1=u1, u0_grad=grad, u0_hess=hess, alpha=alpha,
        params=dict(potential=V.name, beta=beta),
    )


def van_der_pol(gamma: float, alpha: float, beta: float, phi: Phi, x0, c: float = 1.0) -> SdeModel:
    """Stochastic van der Pol oscillator with noise ``(0, phi(x_1) dW)``."""
    _require(alpha > 0, "van der Pol alpha must be positive")
    _require(gamma >= 0 and beta >= 0, "van der Pol gamma and beta must be non-negative")

    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2, (gamma - alpha * x1**2) * x2 - beta * x1], axis=-1)

    def drift_jacobian(x):
        x1, x2 = x[..., 0], x[..., 1]
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -2.0 * alpha * x1 * x2 - beta
        J[..., 1, 1] = gamma - alpha * x1**2
        return J

    diffusion, diffusion_jacobian = _second_order_diffusion(phi)
    v = alpha / (4.0 * c)
    u0, grad, hess = _quadratic_u0(0.5 * v)

    def u1(x):
        return v * (alpha - 2.0 * c * v) * (x[..., 0] * x[..., 1]) ** 2

    growth = 2.0 * (abs(1.0 - beta) / 2.0 + gamma) + 1.0
    return SdeModel(
        name="van_der_pol", d=2, m=phi.m, drift=drift, diffusion=diffusion, x0=x0,
        drift_jacobian=drift_jacobian, diffusion_jacobian=diffusion_jacobian,
        lyapunov_u0=u0, lyapunov_u1=u1, u0_grad=grad, u0_hess=hess, alpha=growth,
        params=dict(gamma=gamma, alpha=alpha, beta=beta, phi=phi.label()),
    )


def duffing_van_der_pol(a1: float, a2: float, a3: float, phi: Phi, x0, c: float = 1.0) -> SdeModel:
    """Stochastic Duffing-van der Pol oscillator with noise ``(0, phi(x_1) dW)``."""
    _require(a3 > 0, "Duffing-van der Pol a3 must be positive")

    def drift(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x2, a2 * x2 - a1 * x1 - a3 * x1**2 * x2 - x1**3], axis=-1)

    def drift_jacobian(x):
        x1, x2 = x[..., 0], x[..., 1]
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -a1 - 2.0 * a3 * x1 * x2 - 3.0 * x1**2
        J[..., 1, 1] = a2 - a3 * x1**2
        return J

    diffusion, diffusion_jacobian = _second_order_diffusion(phi)
    v = a3 / (2.0 * c)

    def u0(x):
        return 0.5 * v * (0.5 * x[..., 0] ** 4 + x[..., 1] ** 2)

    def u1(x):
        return v * (a3 - c * v) * (x[..., 0] * x[..., 1]) ** 2

    def grad(x):
        return np.stack([v * x[..., 0] ** 3, v * x[..., 1]], axis=-1)

    growth = 2.0 * (abs(a2) + abs(a1) + 1.0) + 1.0
    return SdeModel(
        name="duffing_vdp", d=2, m=phi.m, drift=drift, diffusion=diffusion, x0=x0,
        drift_jacobian=drift_jacobian, diffusion_jacobian=diffusion_jacobian,
        lyapunov_u0=u0, lyapunov_u1=u1, u0_grad=grad, alpha=growth,
        params=dict(a1=a1, a2=a2, a3=a3, phi=phi.label()),
    )


def lv_lyapunov_constants(coeffs: LvCoefficients) -> tuple[float, float]:
    """``(v, alpha)`` for the Lotka-Volterra pair ``U0 = v sqrt(1 + |x|^2)``."""
    d, m = coeffs.d, coeffs.m
    a_low = float(np.min(np.diag(coeffs.A)))
    s_bar = float(np.max(np.abs(coeffs.sigma)))
    b_bar = max(float(np.max(coeffs.b)), 0.0)
    if s_bar == 0:
        v = 0.5
    else:
        v = 0.5 * min(1.0, a_low / (np.sqrt(d) * m * s_bar**2))
    return v, b_bar + m * s_bar**2 + 1.0


def lotka_volterra(coeffs: LvCoefficients) -> SdeModel:
    """Stochastic Lotka-Volterra competition model on the positive orthant."""
    b, A, sigma = coeffs.b, coeffs.A, coeffs.sigma
    d, m = coeffs.d, coeffs.m
    v, alpha = lv_lyapunov_constants(coeffs)
    a_low = float(np.min(np.diag(A)))
    s_bar = float(np.max(np.abs(sigma)))
    k1 = a_low / np.sqrt(d) - 0.5 * v * m * s_bar**2

    def drift(x):
        return x * (b - x @ A.T)

    def drift_jacobian(x):
        r = b - x @ A.T
        return r[..., :, None] * np.eye(d) - x[..., :, None] * A

    def diffusion(x):
        return x[..., :, None] * sigma

    def diffusion_jacobian(x):
        dg = np.zeros(x.shape[:-1] + (d, m, d))
        for i in range(d):
            dg[..., i, :, i] = sigma[i]
        return dg

    def u0(x):
        return v * np.sqrt(1.0 + np.sum(x * x, axis=-1))

    def u1(x):
        s = np.sum(x * x, axis=-1)
        return v * k1 * s**1.5 / np.sqrt(1.0 + s) + v * np.sqrt(1.0 + s)

    def grad(x):
        s = np.sum(x * x, axis=-1, keepdims=True)
        return v * x / np.sqrt(1.0 + s)

    def hess(x):
        s = np.sum(x * x, axis=-1)[..., None, None]
        outer = x[..., :, None] * x[..., None, :]
        return v * (np.eye(d) / np.sqrt(1.0 + s) - outer / (1.0 + s) ** 1.5)

    return SdeModel(
        name="lotka_volterra", d=d, m=m, drift=drift, diffusion=diffusion, x0=coeffs.x0,
        domain=POSITIVE, drift_jacobian=drift_jacobian, diffusion_jacobian=diffusion_jacobian,
        lyapunov_u0=u0, lyapunov_u1=u1, u0_grad=grad, u0_hess=hess, alpha=alpha,
        params=dict(b=b.tolist(), A=A.tolist(), sigma=sigma.tolist(), coeffs=coeffs),
    )


def geometric_brownian_motion(mu: float, sigma: float, x0: float = 1.0) -> SdeModel:
    """Scalar ``dX = mu X dt + sigma X dW``; the calibration model with a closed form."""

    def drift(x):
        return mu * x

    def diffusion(x):
        return sigma * x[..., None]

    def drift_jacobian(x):
        return np.full(x.shape + (1,), mu)

    def diffusion_jacobian(x):
        return np.full(x.shape[:-1] + (1, 1, 1), sigma)

    return SdeModel(
        name="gbm", d=1, m=1, drift=drift, diffusion=diffusion, x0=[x0],
        drift_jacobian=drift_jacobian, diffusion_jacobian=diffusion_jacobian,
        params=dict(mu=mu, sigma=sigma),
    )


def linear_scalar(rate: float, sigma: float = 0.0, x0: float = 1.0) -> SdeModel:
    """``dX = rate X dt + sigma dW`` (additive noise)."""

    def drift(x):
        return rate * x

    diffusion, diffusion_jacobian = _const_diffusion(np.array([[sigma]]), 1, 1)
    return SdeModel(
        name="linear", d=1, m=1, drift=drift, diffusion=diffusion, x0=[x0],
        drift_jacobian=lambda x: np.full(x.shape + (1,), rate),
        diffusion_jacobian=diffusion_jacobian, params=dict(rate=rate, sigma=sigma),
    )


BENCHMARK_LV = dict(b=[1.0, 0.5], A=[[1.0, 0.5], [0.0, 0.5]], sigma=[[1.0, 0.0], [0.0, 0.75]], x0=[1.0, 3.0])


def benchmark_lv_coefficients(noise_factor: float = 1.0) -> LvCoefficients:
    c = LvCoefficients(**BENCHMARK_LV)
    return c if noise_factor == 1.0 else c.scaled_noise(noise_factor)


# ---------------------------------------------------------------------------
# checks


def central_jacobian(fn: Field, x: Array, eps: float = 1e-6) -> Array:
    """Central finite-difference Jacobian of ``fn`` at a single point; index of x last."""
    x = np.asarray(x, dtype=np.float64)
    step = eps * (1.0 + np.linalg.norm(x))
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((fn(x + e) - fn(x - e)) / (2 * step))
    return np.stack(cols, axis=-1)


@dataclass
class CommutativityReport:
    passed: bool
    worst: float
    worst_point: Array
    samples: int

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"{status}: max violation {self.worst:.3e} at x={np.array2string(self.worst_point, precision=4)}"


def commutator(model: SdeModel, x: Array) -> Array:
    """``C[k2, j1, j2] = sum_k1 dg[k2, j2]/dx[k1] * g[k1, j1]`` at a single point."""
    x = np.asarray(x, dtype=np.float64)
    if model.diffusion_jacobian is not None:
        dg = model.diffusion_jacobian(x)
    else:
        dg = central_jacobian(model.diffusion, x)
    g = model.diffusion(x)
    return np.einsum("bjk,ki->bij", dg, g)


def check_commutativity(model: SdeModel, samples: int = 100, tol: float = 1e-8,
                        seed: int = 0, finite_differences: bool = False) -> CommutativityReport:
    rng = np.random.default_rng(seed)
    pts = model.sample_points(samples, rng)
    if finite_differences and model.diffusion_jacobian is not None:
        model = _without_diffusion_jacobian(model)
    worst, worst_x = 0.0, pts[0]
    for x in pts:
        c = float(np.max(np.abs(commutator(model, x))))
        if c > worst:
            worst, worst_x = c, x
    return CommutativityReport(worst <= tol, worst, worst_x, samples)


def _without_diffusion_jacobian(model: SdeModel) -> SdeModel:
    from dataclasses import replace

    return replace(model, diffusion_jacobian=None)


def lyapunov_residual(model: SdeModel, x: Array, c: float = 0.0) -> Array:
    """``(A U0)(x) + |g^T grad U0|^2 / 2 + U1(x) - c - alpha U0(x)`` evaluated at ``x``.

    ``A`` is the generator ``grad U0 . f + tr(g g^T Hess U0) / 2``.  The Hessian
    falls back to central differences of the gradient when not supplied.
    """
    if not model.has_lyapunov or model.u0_grad is None:
        raise ValueError(f"model {model.name!r} carries no Lyapunov gradient")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    grad = model.u0_grad(x)
    if model.u0_hess is not None:
        hess = model.u0_hess(x)
    else:
        hess = np.stack([central_jacobian(model.u0_grad, xi) for xi in x])
    f = model.drift(x)
    g = model.diffusion(x)
    gen = np.sum(grad * f, axis=-1) + 0.5 * np.einsum("nim,njm,nij->n", g, g, hess)
    gtg = np.einsum("nim,ni->nm", g, grad)
    u1 = model.lyapunov_u1(x) if model.lyapunov_u1 is not None else 0.0
    return gen + 0.5 * np.sum(gtg**2, axis=-1) + u1 - c - model.alpha * model.lyapunov_u0(x)


ZOO = ("lorenz", "brownian_dynamics", "langevin", "van_der_pol", "duffing_vdp", "lotka_volterra")
