"""Increment-taming map ``psi(x) = x / (1 + |x|**delta)`` and its derivatives.

All functions broadcast over leading axes; the last axis is the state
dimension.  Powers of ``|z|`` are taken as ``exp(k * log|z|)`` so that
non-integer exponents work, with the ``z == 0`` branch handled explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TamingParams:
    delta: float = 3.0

    def __post_init__(self):
        if not self.delta >= 2:
            raise ValueError(f"taming exponent must satisfy delta >= 2, got {self.delta}")

    @property
    def order_one(self) -> bool:
        """Whether ``delta`` is large enough for first-order strong convergence."""
        return self.delta >= 3


def _delta(params) -> float:
    return params.delta if isinstance(params, TamingParams) else float(params)


def _norm_pow(r: np.ndarray, k: float) -> np.ndarray:
    """``r**k`` for ``r > 0``, and 0 where ``r == 0`` (callers mask that branch)."""
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, np.exp(k * np.log(safe)), 0.0)


def psi(x, params) -> np.ndarray:
    delta = _delta(params)
    x = np.asarray(x, dtype=np.float64)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / (1.0 + _norm_pow(r, delta))


def psi1_apply(z, u, params) -> np.ndarray:
    """First derivative of ``psi`` at ``z`` applied to the direction ``u``."""
    delta = _delta(params)
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    r = np.linalg.norm(z, axis=-1, keepdims=True)
    rd = _norm_pow(r, delta)
    denom = 1.0 + rd
    zu = np.sum(z * u, axis=-1, keepdims=True)
    out = u / denom - delta * z * _norm_pow(r, delta - 2) * zu / denom**2
    return np.where(r > 0, out, u)


def psi1_matrix(z, params) -> np.ndarray:
    """Jacobian of ``psi`` at ``z``; shape ``(..., d, d)``."""
    delta = _delta(params)
    z = np.asarray(z, dtype=np.float64)
    d = z.shape[-1]
    r = np.linalg.norm(z, axis=-1, keepdims=True)[..., None]
    rd = _norm_pow(r, delta)
    eye = np.eye(d)
    outer = z[..., :, None] * z[..., None, :]
    jac = eye / (1.0 + rd) - delta * _norm_pow(r, delta - 2) * outer / (1.0 + rd) ** 2
    return np.where(r > 0, jac, eye)


def psi2_apply(z, u, params) -> np.ndarray:
    """Second derivative of ``psi`` at ``z`` evaluated on the pair ``(u, u)``."""
    delta = _delta(params)
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    r = np.linalg.norm(z, axis=-1, keepdims=True)
    denom = 1.0 + _norm_pow(r, delta)
    zu = np.sum(z * u, axis=-1, keepdims=True)
    uu = np.sum(u * u, axis=-1, keepdims=True)
    term1 = 2 * delta**2 * _norm_pow(r, 2 * (delta - 2)) * z * zu**2 / denom**3
    term2 = delta * _norm_pow(r, delta - 2) * (2 * u * zu + z * uu) / denom**2
    # delta == 2 kills the last term; skip it so r**-2 never multiplies a zero
    if delta == 2:
        term3 = 0.0
    else:
        term3 = delta * (delta - 2) * _norm_pow(r, delta - 4) * z * zu**2 / denom**2
    return np.where(r > 0, term1 - term2 - term3, 0.0)
