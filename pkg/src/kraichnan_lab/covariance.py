"""Kraichnan covariance: spectral density, structure functions, small-scale
constants, remainder and the anomalous dissipation multiplier.

The isotropic covariance is Q(x) = B_L(|x|) xx^T/|x|^2 + B_N(|x|)(I - xx^T/|x|^2)
with spectral density <n>^{-(2+2a)} (I - nn^T/|n|^2).
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import beta as beta_fn

from .quadrature import QuadratureError, adaptive, oscillatory_tail

SELECTORS = ("longitudinal", "transverse")


@dataclass(frozen=True)
class KraichnanParams:
    alpha: float
    delta: float = 0.05
    box_len: float = 2 * math.pi * 10
    grid_n: int = 256

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.box_len <= 0:
            raise ValueError(f"box_len must be positive, got {self.box_len}")
        if self.grid_n < 8 or self.grid_n % 2:
            raise ValueError(f"grid_n must be even and >= 8, got {self.grid_n}")

    @property
    def nyquist(self) -> float:
        return self.grid_n / (2.0 * self.box_len)

    @property
    def cutoff(self) -> float:
        """Radius of the sharp spectral cutoff, 1/delta."""
        return 1.0 / self.delta

    def check_resolution(self) -> bool:
        ok = self.nyquist > 2.0 / self.delta
        if not ok:
            warnings.warn(
                f"Nyquist wavenumber {self.nyquist:.3g} does not exceed 2/delta={2 / self.delta:.3g}",
                stacklevel=2,
            )
        return ok


@dataclass(frozen=True)
class StructureFunctionTable:
    alpha: float
    radii: np.ndarray
    b_longitudinal: np.ndarray
    b_transverse: np.ndarray
    beta_l: float
    beta_n: float
    beta_bar: float
    quad_err: np.ndarray = field(repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["R", "B_L", "B_N", "err_L", "err_N"])
            for r, bl, bn, (el, en) in zip(self.radii, self.b_longitudinal,
                                           self.b_transverse, self.quad_err):
                w.writerow([repr(float(r)), repr(float(bl)), repr(float(bn)),
                            repr(float(el)), repr(float(en))])

    def constants(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta_bar": self.beta_bar,
            "beta_l": self.beta_l,
            "beta_n": self.beta_n,
            "q0_diag": math.pi / (2 * self.alpha),
        }

    def constants_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.constants(), fh, indent=2, sort_keys=True)


def spectral_density(n, alpha: float) -> np.ndarray:
    """<n>^{-(2+2a)} times the projector onto n-perp."""
    n = np.asarray(n, dtype=float)
    nn = float(n @ n)
    if nn == 0.0:
        raise ValueError("spectral density is undefined at n = 0")
    proj = np.eye(2) - np.outer(n, n) / nn
    return (1.0 + nn) ** (-(1.0 + alpha)) * proj


# --- u-integrals with the (1-u^2)^{-1/2} weight, by Gauss-Chebyshev -----------------

def _profile(u: np.ndarray, selector: str) -> np.ndarray:
    if selector == "longitudinal":
        return 1.0 - u * u
    if selector == "transverse":
        return u * u
    raise ValueError(f"unknown selector {selector!r}; use one of {SELECTORS}")


def _chebyshev_nodes(a_max: float) -> tuple[np.ndarray, float]:
    # positive half of an M-point rule; exact well past the Bessel cutoff of cos(a u)
    m = int(math.ceil(0.6 * a_max + 5 * a_max ** (1 / 3) + 40))
    m += m % 2
    k = np.arange(1, m // 2 + 1)
    return np.cos((2 * k - 1) * math.pi / (2 * m)), math.pi / m


def cos_moment(a, selector: str) -> np.ndarray:
    """int_0^1 cos(a u) f(u) (1-u^2)^{-1/2} du for an array of frequencies a."""
    a = np.asarray(a, dtype=float)
    u, w = _chebyshev_nodes(float(np.max(np.abs(a), initial=0.0)))
    fu = _profile(u, selector)
    return w * (np.cos(np.multiply.outer(a, u)) @ fu)


def one_minus_cos_moment(a, selector: str) -> np.ndarray:
    """int_0^1 (1 - cos(a u)) f(u) (1-u^2)^{-1/2} du, evaluated without cancellation."""
    a = np.asarray(a, dtype=float)
    u, w = _chebyshev_nodes(float(np.max(np.abs(a), initial=0.0)))
    fu = _profile(u, selector)
    s = np.sin(0.5 * np.multiply.outer(a, u))
    return w * ((2.0 * s * s) @ fu)


# --- radial integrals ---------------------------------------------------------------

def _radial_weight(rho, alpha):
    return rho * (1.0 + rho * rho) ** (-(1.0 + alpha))


def _radial_mass_tail(rho0: float, alpha: float, tol: float) -> tuple[float, float]:
    """int_{rho0}^inf rho <rho>^{-2-2a} drho after the substitution rho = rho0 v^{-1/(2a)}."""
    g = lambda v: (1.0 + rho0 ** -2 * v ** (1.0 / alpha)) ** (-(1.0 + alpha))
    val, err = adaptive(g, 0.0, 1.0, tol=tol * 2 * alpha * rho0 ** (2 * alpha))
    scale = rho0 ** (-2 * alpha) / (2 * alpha)
    return scale * val, scale * err


def _structure_at_zero(alpha: float, tol: float) -> tuple[float, float]:
    """F_f(0): the same value for both selectors."""
    head, e1 = adaptive(lambda r: _radial_weight(r, alpha), 0.0, 1.0, tol=tol / 8)
    tail, e2 = _radial_mass_tail(1.0, alpha, tol / 8)
    u, w = _chebyshev_nodes(0.0)
    angular = w * float(np.sum(_profile(u, "transverse")))  # = pi/4 for either selector
    return 4 * angular * (head + tail), 4 * angular * (e1 + e2)


def structure_increment(R: float, selector: str, alpha: float, tol: float = 1e-10):
    """F_f(0) - F_f(R), integrated directly so small R loses no digits.

    Returns (value, error_estimate).
    """
    if R < 0:
        raise ValueError("R must be nonnegative")
    if R == 0:
        return 0.0, 0.0
    k = 2 * math.pi * R
    rho0 = max(1.0, 1.0 / R)
    # head: smooth part on [0, rho0], seeded with log-spaced breakpoints
    bps = np.geomspace(min(1e-3, 0.1 / R), rho0, 24)[:-1]
    head_f = lambda r: _radial_weight(r, alpha) * one_minus_cos_moment(k * r, selector)
    head, e_head = adaptive(head_f, 0.0, rho0, tol=tol / 4, breakpoints=bps, max_panels=20000)
    # tail: (pi/4) * mass - oscillatory part
    u, w = _chebyshev_nodes(0.0)
    angular = w * float(np.sum(_profile(u, selector)))
    mass, e_mass = _radial_mass_tail(rho0, alpha, tol / 4)
    osc_f = lambda r: _radial_weight(r, alpha) * cos_moment(k * r, selector)
    osc, e_osc = oscillatory_tail(osc_f, rho0, 0.5 / R, tol=tol / 4, max_terms=600)
    value = 4 * (head + angular * mass - osc)
    err = 4 * (e_head + angular * e_mass + e_osc)
    return value, err


def structure_functions(R: float, alpha: float, tol: float = 1e-8):
    """(B_L(R), B_N(R), err) from the u-substituted double integral.

    err is the larger of the two absolute error estimates.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if R < 0:
        raise ValueError("R must be nonnegative")
    f0, e0 = _structure_at_zero(alpha, tol / 4)
    if R == 0:
        if e0 > tol:
            raise QuadratureError("B(0) quadrature missed tolerance", f0, e0)
        return f0, f0, e0
    dl, el = structure_increment(R, "longitudinal", alpha, tol / 4)
    dn, en = structure_increment(R, "transverse", alpha, tol / 4)
    err = e0 + max(el, en)
    return f0 - dl, f0 - dn, err


def tabulate(radii, alpha: float, tol: float = 1e-8) -> StructureFunctionTable:
    radii = np.sort(np.asarray(radii, dtype=float))
    f0, e0 = _structure_at_zero(alpha, tol / 4)
    bl, bn, errs = [], [], []
    for r in radii:
        dl, el = structure_increment(r, "longitudinal", alpha, tol / 4)
        dn, en = structure_increment(r, "transverse", alpha, tol / 4)
        bl.append(f0 - dl)
        bn.append(f0 - dn)
        errs.append((e0 + el, e0 + en))
    bbar, b_l, b_n, _ = beta_constants(alpha, tol)
    return StructureFunctionTable(alpha, radii, np.array(bl), np.array(bn),
                                  b_l, b_n, bbar, np.array(errs))


def beta_constants(alpha: float, tol: float = 1e-10):
    """(beta_bar, beta_l, beta_n, err).

    beta_bar = 4 int_0^inf rho^{-1-2a} (1 - cos 2 pi rho) drho; the split constants
    are beta_bar times int_0^1 u^{2a} f(u) (1-u^2)^{-1/2} du, written with the
    Beta function.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    head_f = lambda r: r ** (-1 - 2 * alpha) * 2.0 * np.sin(math.pi * r) ** 2
    head, e1 = adaptive(head_f, 0.0, 1.0, tol=tol / 8, breakpoints=[1e-4, 1e-2, 0.1, 0.5])
    osc, e2 = oscillatory_tail(lambda r: r ** (-1 - 2 * alpha) * np.cos(2 * math.pi * r),
                               1.0, 0.5, tol=tol / 8)
    bbar = 4 * (head + 1.0 / (2 * alpha) - osc)
    err = 4 * (e1 + e2)
    if err > tol * max(1.0, abs(bbar)):
        raise QuadratureError("beta_bar tail did not converge", bbar, err)
    # int_0^1 u^{2a}(1-u^2)^{1/2} du = B(a+1/2, 3/2)/2 ; int_0^1 u^{2a+2}(1-u^2)^{-1/2} du = B(a+3/2, 1/2)/2
    beta_l = bbar * 0.5 * beta_fn(alpha + 0.5, 1.5)
    beta_n = bbar * 0.5 * beta_fn(alpha + 1.5, 0.5)
    return bbar, beta_l, beta_n, err


def _inner_remainder(s: float, alpha: float, tol: float) -> tuple[float, float]:
    """int_0^inf [(s^2+rho^2)^{-1-a} - rho^{-2-2a}] rho (1 - cos 2 pi rho) drho."""
    if s == 0:
        return 0.0, 0.0

    def bracket(r):
        return r ** (-2 - 2 * alpha) * np.expm1(-(1 + alpha) * np.log1p((s / r) ** 2))

    rc = max(4.0, 4.0 * s)
    rc = math.ceil(rc)
    body = lambda r: bracket(r) * r * 2.0 * np.sin(math.pi * r) ** 2
    bps = sorted({*np.geomspace(1e-6 * min(s, 1.0), rc, 30)[:-1], s})
    head, e1 = adaptive(body, 0.0, rc, tol=tol / 4, breakpoints=bps, max_panels=20000)
    # tail: smooth part in closed form, oscillatory part accelerated
    smooth = ((s * s + rc * rc) ** (-alpha) - rc ** (-2 * alpha)) / (2 * alpha)
    osc, e2 = oscillatory_tail(lambda r: bracket(r) * r * np.cos(2 * math.pi * r),
                               rc, 0.5, tol=tol / 4)
    return head + smooth - osc, e1 + e2


def remainder_eval(R: float, f_selector: str, alpha: float, tol: float = 1e-10):
    """Rem_f(R) from its double-integral representation. Returns (Rem, err).

    The u-integral is taken in theta with u = sin(theta), which absorbs the
    (1-u^2)^{-1/2} weight.
    """
    if R < 0:
        raise ValueError("R must be nonnegative")
    _profile(np.zeros(1), f_selector)
    if R == 0:
        return 0.0, 0.0
    scale = 4 * R ** (2 * alpha)
    inner_tol = tol / scale / 8

    def outer(theta):
        u = np.sin(theta)
        vals = np.array([_inner_remainder(R * ui, alpha, inner_tol)[0] for ui in u])
        return u ** (2 * alpha) * _profile(u, f_selector) * vals

    val, err = adaptive(outer, 0.0, math.pi / 2, tol=tol / scale / 2,
                        breakpoints=[1e-3, 0.05, 0.3, 0.8], max_panels=400)
    return scale * val, scale * err + tol / 8


def covariance_eval(x, alpha: float, tol: float = 1e-8) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = float(np.hypot(x[0], x[1]))
    if r == 0.0:
        return (math.pi / (2 * alpha)) * np.eye(2)
    bl, bn, _ = structure_functions(r, alpha, tol)
    xx = np.outer(x, x) / (r * r)
    return bl * xx + bn * (np.eye(2) - xx)


def covariance_increment(x, alpha: float, tol: float = 1e-10) -> np.ndarray:
    """Q(0) - Q(x), assembled from directly integrated increments."""
    x = np.asarray(x, dtype=float)
    r = float(np.hypot(x[0], x[1]))
    if r == 0.0:
        return np.zeros((2, 2))
    dl, _ = structure_increment(r, "longitudinal", alpha, tol)
    dn, _ = structure_increment(r, "transverse", alpha, tol)
    xx = np.outer(x, x) / (r * r)
    return dl * xx + dn * (np.eye(2) - xx)


def green_hessian(x) -> np.ndarray:
    """Pointwise Hessian of -(1/2pi) log|x|."""
    x = np.asarray(x, dtype=float)
    r2 = float(x @ x)
    return -(1.0 / (2 * math.pi * r2)) * (np.eye(2) - 2.0 * np.outer(x, x) / r2)


def dissipation_multiplier(x, alpha: float, tol: float = 1e-10) -> float:
    """tr[(Q(0) - Q(x)) D^2 G(x)] = -(1/2pi)(B_L - B_N)(|x|)/|x|^2."""
    x = np.asarray(x, dtype=float)
    r = float(np.hypot(x[0], x[1]))
    if r == 0.0:
        raise ValueError("the dissipation multiplier is singular at x = 0")
    dl, _ = structure_increment(r, "longitudinal", alpha, tol)
    dn, _ = structure_increment(r, "transverse", alpha, tol)
    # B_L - B_N = (B(0) - B_N) - (B(0) - B_L)
    return -(dn - dl) / (2 * math.pi * r * r)


def fit_holder_constant(radii, alpha: float, tol: float = 1e-8) -> float:
    """Smallest C with |Q(0) - Q(x)| <= C (|x|^{2a} ^ 1) on the sampled radii (spectral norm)."""
    c = 0.0
    for r in np.asarray(radii, dtype=float):
        d = covariance_increment(np.array([r, 0.0]), alpha, tol)
        c = max(c, float(np.linalg.norm(d, 2)) / min(r ** (2 * alpha), 1.0))
    return c


def structure_increment_regularized(R: float, selector: str, alpha: float, delta: float,
                                    tol: float = 1e-11):
    """B^d_f(0) - B^d_f(R) for the sharp spectral cutoff |n| <= 1/d.  Returns (value, err)."""
    if R == 0:
        return 0.0, 0.0
    kmax = 1.0 / delta
    k = 2 * math.pi * R
    f = lambda r: _radial_weight(r, alpha) * one_minus_cos_moment(k * r, selector)
    # one breakpoint per oscillation keeps the panels resolved
    n_osc = int(min(2000, max(8, 2 * R * kmax)))
    bps = np.linspace(0.0, kmax, n_osc + 1)[1:-1]
    val, err = adaptive(f, 0.0, kmax, tol=tol / 4, breakpoints=bps, max_panels=40000)
    return 4 * val, 4 * err


def _bessel_moments(a: np.ndarray):
    """int_0^1 (1 - cos(a u)) f(u) (1-u^2)^{-1/2} du for both selectors, through J0 and J1."""
    from scipy.special import j0, j1

    safe = np.where(a > 0, a, 1.0)
    j1a = np.where(a > 0, j1(safe) / safe, 0.5)
    lon = math.pi / 4 - (math.pi / 2) * j1a
    return lon, lon - (math.pi / 2) * (j0(a) - 2 * j1a)


def regularized_increments_bessel(radii, alpha: float, delta: float, block: int = 128):
    """(D_L, D_N) with the sharp cutoff for many radii at once.

    Composite Gauss-Legendre in rho over [0, 1/d] with one panel per oscillation of the
    largest radius; the u-integral is in closed form.  Meant for R >~ 1 where the
    J0/J1 differences do not cancel.
    """
    radii = np.asarray(radii, dtype=float)
    kmax = 1.0 / delta
    panels = int(math.ceil(kmax * max(float(radii.max()), 1.0))) + 64
    x, w = np.polynomial.legendre.leggauss(12)
    edges = np.linspace(0.0, kmax, panels + 1)
    half = 0.5 * np.diff(edges)
    rho = ((edges[:-1] + edges[1:]) / 2)[:, None] + half[:, None] * x[None, :]
    wts = (half[:, None] * w[None, :]).ravel()
    rho = rho.ravel()
    weight = 4.0 * wts * _radial_weight(rho, alpha)
    out = np.empty((2, radii.size))
    for s in range(0, radii.size, block):
        a = 2 * math.pi * np.multiply.outer(radii[s:s + block], rho)
        for i, m in enumerate(_bessel_moments(a)):
            out[i, s:s + block] = m @ weight
    return out[0], out[1]


def regularized_q0(alpha: float, delta: float) -> float:
    """B^d(0) with the sharp cutoff, in closed form: (pi/(2a))(1 - (1 + d^-2)^{-a})."""
    return math.pi / (2 * alpha) * (1.0 - (1.0 + delta ** -2) ** (-alpha))


class IncrementTable:
    """Spline interpolant of R -> (B_L(0)-B_L(R), B_N(0)-B_N(R)), optionally regularised.

    The table is built from structure_increment / structure_increment_regularized on
    log-spaced radii and interpolated in log-log coordinates.  Below the first radius
    the small-R power law (R^{2a}, or R^2 with a cutoff) is used.  With a cutoff the
    increments ring with period ~d in R, so above R = d the radii are spaced d/8 apart
    and evaluated through the Bessel form.
    """

    def __init__(self, alpha: float, delta: float | None = None, r_min: float = 1e-5,
                 r_max: float = 50.0, n: int = 160, tol: float = 1e-11):
        from scipy.interpolate import CubicSpline

        self.alpha = alpha
        self.delta = delta
        self.r_min, self.r_max = r_min, r_max
        if delta is None:
            radii = np.geomspace(r_min, r_max, n)
            vals = np.array([[structure_increment(r, sel, alpha, tol)[0] for r in radii] for sel in SELECTORS])
        else:
            split = min(delta, r_max)
            small = np.geomspace(r_min, split, n)
            vals = np.array([[structure_increment_regularized(r, sel, alpha, delta, tol)[0] for r in small]
                             for sel in SELECTORS])
            if r_max > split:
                large = np.arange(split, r_max + delta / 8, delta / 8)[1:]
                vals = np.concatenate([vals, np.array(regularized_increments_bessel(large, alpha, delta))], axis=1)
                small = np.concatenate([small, large])
            radii = small
        self.radii = radii
        self.values = vals
        self._splines = [CubicSpline(np.log(radii), np.log(v)) for v in vals]
        self._power = 2.0 if delta is not None else 2 * alpha
        self.q0 = regularized_q0(alpha, delta) if delta is not None else math.pi / (2 * alpha)

    def __call__(self, R):
        R = np.asarray(R, dtype=float)
        out = np.empty((2,) + R.shape)
        lo = R < self.r_min
        hi = R > self.r_max
        mid = ~(lo | hi)
        lr = np.log(np.clip(R, self.r_min, self.r_max))
        for i, s in enumerate(self._splines):
            v = np.exp(s(lr))
            v = np.where(lo, self.values[i, 0] * (np.maximum(R, 0) / self.r_min) ** self._power, v)
            v = np.where(hi, self.values[i, -1], v)
            out[i] = v
        return out[0], out[1]

    def covariance_increment(self, z) -> np.ndarray:
        """Q(0) - Q(z) for an array of separations, shape (..., 2, 2)."""
        z = np.asarray(z, dtype=float)
        r = np.hypot(z[..., 0], z[..., 1])
        dl, dn = self(r)
        safe = np.where(r > 0, r, 1.0)[..., None]
        zh = z / safe
        zz = zh[..., :, None] * zh[..., None, :]
        eye = np.eye(2)
        return dl[..., None, None] * zz + dn[..., None, None] * (eye - zz)
