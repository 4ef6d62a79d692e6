"""Green and Biot-Savart kernels, their heat-kernel regularisations, Riesz
potentials and lattice Sobolev norms.

G(x) = -(1/2pi) log|x|,  K = grad-perp G with perp(x1, x2) = (x2, -x1),
G^d(x) = int_d^{1/d} p_s(x) ds with p_s the heat kernel (4 pi s)^{-1} e^{-|x|^2/4s}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn

from .containers import ParticleEnsemble, SpectralField

EULER_GAMMA = 0.57721566490153286061


# --- exponential integral -----------------------------------------------------------

_SERIES_TERMS = 40
_CF_DEPTH = 120


def _e1_series_tail(x: np.ndarray) -> np.ndarray:
    """sum_{k>=1} (-x)^k / (k k!); used for x <= 1."""
    term = np.ones_like(x)
    acc = np.zeros_like(x)
    for k in range(1, _SERIES_TERMS + 1):
        term = term * (-x) / k
        acc = acc + term / k
    return acc


def _e1_contfrac(x: np.ndarray) -> np.ndarray:
    """e^{-x}/(x+1- 1/(x+3- 4/(x+5- ...))) by modified Lentz; x > 1."""
    tiny = 1e-300
    b = x + 1.0
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _CF_DEPTH + 1):
        a = -float(i * i)
        b = b + 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        h = h * (c * d)
    return h * np.exp(-x)


def exp1(x) -> np.ndarray:
    """Exponential integral E1(x) for x > 0 (inf at 0)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x <= 1.0
    xs = x[small]
    with np.errstate(divide="ignore"):
        out[small] = -EULER_GAMMA - np.log(xs) - _e1_series_tail(xs)
    out[~small] = _e1_contfrac(x[~small])
    return out if out.ndim else float(out)


def _e1_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """E1(a) - E1(b) for 0 <= a <= b, keeping the log cancellation exact when both are small."""
    out = np.empty_like(a)
    both_small = b <= 1.0
    aa, bb = a[both_small], b[both_small]
    with np.errstate(divide="ignore", invalid="ignore"):
        out[both_small] = np.log(bb / aa) - _e1_series_tail(aa) + _e1_series_tail(bb)
    rest = ~both_small
    out[rest] = exp1(a[rest]) - exp1(b[rest])
    return out


# --- Green kernels ------------------------------------------------------------------

def green(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -np.log(np.hypot(x[..., 0], x[..., 1])) / (2 * math.pi)


def green_regularized(x, delta: float):
    """G^d(x) in closed form; finite at x = 0 where it equals log(1/d)/(2 pi)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    r2 = np.atleast_1d(x[..., 0] ** 2 + x[..., 1] ** 2)
    out = np.empty_like(r2)
    zero = r2 == 0
    out[zero] = math.log(1.0 / delta) / (2 * math.pi)
    nz = ~zero
    out[nz] = _e1_difference(r2[nz] * delta / 4, r2[nz] / (4 * delta)) / (4 * math.pi)
    return out.reshape(x.shape[:-1]) if x.ndim > 1 else float(out[0])


def _gauss_gap(r2, delta):
    return np.exp(-r2 * delta / 4) - np.exp(-r2 / (4 * delta))


def grad_green_regularized(x, delta: float) -> np.ndarray:
    """grad G^d(x) = -(x / 2 pi |x|^2)(e^{-|x|^2 d/4} - e^{-|x|^2/(4d)}); zero at x = 0."""
    x = np.asarray(x, dtype=float)
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2
    safe = np.where(r2 > 0, r2, 1.0)
    coef = np.where(r2 > 0, -_gauss_gap(r2, delta) / (2 * math.pi * safe), 0.0)
    return x * coef[..., None]


def biot_savart_regularized(x, delta: float) -> np.ndarray:
    """K^d(x) = grad-perp G^d(x)."""
    g = grad_green_regularized(x, delta)
    return np.stack([g[..., 1], -g[..., 0]], axis=-1)


def hessian_green_regularized(x, delta: float) -> np.ndarray:
    """D^2 G^d(x) for x != 0, shape (..., 2, 2)."""
    x = np.asarray(x, dtype=float)
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2
    xx = x[..., :, None] * x[..., None, :]
    eye = np.eye(2)
    r2e = r2[..., None, None]
    e1 = np.exp(-r2 * delta / 4)[..., None, None]
    e2 = np.exp(-r2 / (4 * delta))[..., None, None]
    base = -eye + 2 * xx / r2e
    return ((base + delta * xx / 2) * e1 - (base + xx / (2 * delta)) * e2) / (2 * math.pi * r2e)


def green_hessian(x) -> np.ndarray:
    """D^2 G(x) = -(1/2pi)|x|^{-2}(I - 2xx^T/|x|^2), shape (..., 2, 2)."""
    x = np.asarray(x, dtype=float)
    r2 = (x[..., 0] ** 2 + x[..., 1] ** 2)[..., None, None]
    xx = x[..., :, None] * x[..., None, :]
    return -(np.eye(2) - 2 * xx / r2) / (2 * math.pi * r2)


# --- Fourier multipliers ------------------------------------------------------------

def regularization_ratio(n2, delta: float) -> np.ndarray:
    """Fourier ratio Ghat^d / Ghat = e^{-4pi^2 d|n|^2} - e^{-4pi^2|n|^2/d}."""
    q = 4 * math.pi ** 2 * np.asarray(n2, dtype=float)
    return np.exp(-q * delta) - np.exp(-q / delta)


def green_regularized_hat(n2, delta: float) -> np.ndarray:
    """Ghat^d as a function of |n|^2; the n = 0 value is the limit 1/d - d."""
    n2 = np.asarray(n2, dtype=float)
    safe = np.where(n2 > 0, n2, 1.0)
    val = regularization_ratio(n2, delta) / (4 * math.pi ** 2 * safe)
    return np.where(n2 > 0, val, 1.0 / delta - delta)


def biot_savart_multiplier(n, delta: float | None = None) -> np.ndarray:
    """Khat(n) = i n_perp / (2 pi |n|^2), optionally times the regularisation ratio."""
    n = np.asarray(n, dtype=float)
    n2 = n[..., 0] ** 2 + n[..., 1] ** 2
    if np.any(n2 == 0):
        raise ValueError("Biot-Savart multiplier is undefined at n = 0")
    perp = np.stack([n[..., 1], -n[..., 0]], axis=-1)
    out = 1j * perp / (2 * math.pi * n2[..., None])
    if delta is not None:
        out = out * regularization_ratio(n2, delta)[..., None]
    return out


# --- Riesz potentials ---------------------------------------------------------------

def riesz_constant(beta: float) -> float:
    """gamma_{2b} = pi 2^{2b} Gamma(b) / Gamma(1-b)."""
    return math.pi * 2 ** (2 * beta) * gamma_fn(beta) / gamma_fn(1 - beta)


def riesz_kernel(r, beta: float):
    return np.asarray(r, dtype=float) ** (-2 + 2 * beta) / riesz_constant(beta)


# --- norms ----------------------------------------------------------------------------

FLAVORS = ("homogeneous", "inhomogeneous", "tilde_minus4", "riesz_pairing")


@dataclass(frozen=True)
class NormSpec:
    exponent: float = 0.0
    flavor: str = "inhomogeneous"

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown norm flavor {self.flavor!r}")

    def weight(self, n2: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            if self.flavor == "inhomogeneous":
                return (1.0 + n2) ** self.exponent
            if self.flavor == "homogeneous":
                if self.exponent == 0:
                    return np.ones_like(n2)
                w = np.where(n2 > 0, n2, 1.0) ** self.exponent
                return np.where(n2 > 0, w, 0.0)
            if self.flavor == "tilde_minus4":
                return np.where(n2 > 0, (1.0 + n2) ** -3.0 / np.where(n2 > 0, n2, 1.0), 0.0)
        raise ValueError("riesz_pairing has no plain weight")


class ZeroMeanError(ValueError):
    pass


def sobolev_norm(field: SpectralField, spec: NormSpec, mean_tol: float = 1e-12) -> float:
    """Lattice Sobolev norm by the discrete Plancherel sum (square-rooted)."""
    k1, k2 = field.wavenumbers()
    n2 = k1 * k1 + k2 * k2
    needs_zero_mean = spec.flavor in ("tilde_minus4", "riesz_pairing") or (
        spec.flavor == "homogeneous" and spec.exponent < 0)
    if needs_zero_mean:
        scale = max(float(np.max(np.abs(field.coeffs))), 1e-300)
        if abs(field.mean_mode()) > mean_tol * scale:
            raise ZeroMeanError("homogeneous negative norm needs a zero-mean field")
    if spec.flavor == "riesz_pairing":
        beta = -spec.exponent
        if not 0 < beta < 1:
            raise ValueError("riesz_pairing needs exponent in (-1, 0)")
        # G_beta * f through its Fourier multiplier, then a real-space inner product
        safe = np.where(n2 > 0, n2, 1.0)
        ghat = np.where(n2 > 0, (2 * math.pi) ** (-2 * beta) * safe ** (-beta), 0.0)
        conv = SpectralField(field.coeffs * ghat, field.box_len).to_real()
        h2 = (field.box_len / field.n_grid) ** 2
        pairing = float(np.sum(field.to_real() * conv)) * h2
        return math.sqrt(max((2 * math.pi) ** (2 * beta) * pairing, 0.0))
    return math.sqrt(field.mode_sum(spec.weight(n2)))


def _pair_blocks(positions: np.ndarray, weights: np.ndarray, kernel, block: int = 2048):
    """sum_{i != j} w_i w_j kernel(|x_i - x_j|) in fixed-order blocks; coincident pairs skipped."""
    n = positions.shape[0]
    total = 0.0
    skipped = 0
    for s in range(0, n, block):
        p = positions[s:s + block]
        wp = weights[s:s + block]
        partial = np.zeros(p.shape[0])
        for t in range(0, n, block):
            q = positions[t:t + block]
            d = np.hypot(p[:, None, 0] - q[None, :, 0], p[:, None, 1] - q[None, :, 1])
            mask = d > 0
            if s == t:
                # the diagonal is excluded by definition, not counted as a coincidence
                idx = np.arange(p.shape[0])
                mask[idx, idx] = False
                skipped += int(np.sum(d == 0)) - p.shape[0]
            else:
                skipped += int(np.sum(d == 0))
            kd = np.zeros_like(d)
            kd[mask] = kernel(d[mask])
            partial += kd @ weights[t:t + block]
        total += float(np.dot(wp, partial))
    return total, skipped // 2


def riesz_pairing(ensemble: ParticleEnsemble, beta: float, log_variant: bool = False):
    """Pairwise particle form of ||mu||^2_{H^-beta}.

    Returns (value, coincident_pair_count).  With log_variant the kernel is
    log|x|^{-1} and no prefactor is applied.
    """
    if ensemble.size < 2:
        raise ValueError("need at least two particles")
    if log_variant:
        return _pair_blocks(ensemble.positions, ensemble.weights, lambda d: -np.log(d))
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    val, skipped = _pair_blocks(ensemble.positions, ensemble.weights,
                                lambda d: d ** (-2 + 2 * beta))
    return (2 * math.pi) ** (2 * beta) * val / riesz_constant(beta), skipped
