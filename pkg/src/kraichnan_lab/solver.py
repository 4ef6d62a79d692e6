"""Pseudospectral Euler-Maruyama integrator for the regularised stochastic
Euler vorticity equation in Ito form, on a periodic box.

One step, conservative form, 2/3-rule dealiased products:
    w' = w - dt D[div(u w)] - D[div(V w)],    w_new = S w',
with u = K^d * w, V the noise increment and S = exp(-dt (c/2) 4 pi^2 |n|^2).
Switching the nonlinearity off gives the Kraichnan passive scalar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .containers import SpectralField, grid_points, half_weights, wavenumbers
from .covariance import KraichnanParams
from .kernels import NormSpec, green_regularized_hat, regularization_ratio, sobolev_norm
from .noise import NoiseIncrement, cutoff_profile, ito_correction, sample_increment

TWO_PI = 2 * math.pi


class SolverError(RuntimeError):
    pass


class CFLError(SolverError):
    pass


class SolverAbort(SolverError):
    """Raised by run(); carries the partial trajectory."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class SolverConfig:
    params: KraichnanParams
    dt: float | None = None
    T: float = 0.01
    nonlinearity: bool = True
    noise: bool = True
    seed: int = 0
    snapshot_every: int = 0
    taper: bool = False
    ledger: bool = True
    diffusion: bool = True

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class SolverState:
    omega: SpectralField
    t: float
    step_index: int
    config: SolverConfig

    def copy(self) -> "SolverState":
        return SolverState(self.omega.copy(), self.t, self.step_index, self.config)


@dataclass(frozen=True)
class InitialDataSpec:
    kind: str = "curl_of_bump"
    parameters: dict = field(default_factory=dict)
    delta: float = 0.05


# --- lattice helpers --------------------------------------------------------------

@lru_cache(maxsize=16)
def _lattice(n_grid: int, box_len: float):
    k1, k2 = wavenumbers(n_grid, box_len)
    n2 = k1 * k1 + k2 * k2
    band = np.sqrt(n2) < n_grid / (3.0 * box_len)
    return k1, k2, n2, band.astype(float)


def dealias_mask(n_grid: int, box_len: float) -> np.ndarray:
    return _lattice(n_grid, box_len)[3]


def _to_real(coeffs, n, box_len):
    return np.fft.irfft2(coeffs, s=(n, n), axes=(-2, -1)) * (n / box_len) ** 2


def _to_hat(values, box_len):
    n = values.shape[-1]
    return np.fft.rfft2(values, axes=(-2, -1)) * (box_len / n) ** 2


def biot_savart(omega: SpectralField, regularized: bool = True, delta: float | None = None):
    """Velocity (u1, u2) as SpectralFields; the mean mode is zero."""
    k1, k2, n2, _ = _lattice(omega.n_grid, omega.box_len)
    safe = np.where(n2 > 0, n2, 1.0)
    mult = np.where(n2 > 0, 1.0 / (TWO_PI * safe), 0.0)
    if regularized:
        if delta is None:
            raise ValueError("regularized Biot-Savart needs delta")
        mult = mult * regularization_ratio(n2, delta)
    # Khat = i n_perp / (2 pi |n|^2), n_perp = (n2, -n1)
    u1 = 1j * k2 * mult * omega.coeffs
    u2 = -1j * k1 * mult * omega.coeffs
    return SpectralField(u1, omega.box_len), SpectralField(u2, omega.box_len)


def curl(u1: SpectralField, u2: SpectralField) -> SpectralField:
    k1, k2, _, _ = _lattice(u1.n_grid, u1.box_len)
    return SpectralField(TWO_PI * 1j * (k1 * u2.coeffs - k2 * u1.coeffs), u1.box_len)


def _flux_divergence(vel_real, omega_real, k1, k2, band, box_len):
    """D[div(v w)] in Fourier for real-space velocity (2, N, N) and scalar w."""
    prod = _to_hat(vel_real * omega_real[None], box_len)
    return TWO_PI * 1j * (k1 * prod[0] + k2 * prod[1]) * band


def diffusion_factor(params: KraichnanParams, dt: float, c: float) -> np.ndarray:
    _, _, n2, _ = _lattice(params.grid_n, params.box_len)
    return np.exp(-dt * 0.5 * c * 4 * math.pi ** 2 * n2)


def stable_dt(params: KraichnanParams, c: float, umax: float = 0.0, margin: float = 0.25) -> float:
    dx = params.box_len / params.grid_n
    bounds = [dx * dx / (2 * math.pi ** 2 * c)]
    if umax > 0:
        bounds.append(dx / umax)
    return margin * min(bounds)


def check_cfl(params: KraichnanParams, dt: float, c: float, umax: float) -> None:
    dx = params.box_len / params.grid_n
    if umax > 0 and dt > dx / umax:
        raise CFLError(f"advective bound violated: dt={dt:.3g} > dx/|u|_inf={dx / umax:.3g}")
    if c > 0 and dt > dx * dx / (2 * math.pi ** 2 * c):
        raise CFLError(f"diffusive bound violated: dt={dt:.3g} > dx^2/(2 pi^2 c)="
                       f"{dx * dx / (2 * math.pi ** 2 * c):.3g}")


@lru_cache(maxsize=8)
def _full_covariance_hat(n_grid: int, box_len: float, alpha: float, delta: float, taper: bool):
    """Real FFTs of Qhat^d_ij laid out on the full N x N lattice (numpy FFT ordering)."""
    k = np.fft.fftfreq(n_grid, d=box_len / n_grid)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    kk = np.hypot(k1, k2)
    s = (1.0 + kk * kk) ** (-(1.0 + alpha)) * cutoff_profile(kk, delta, taper)
    s[0, 0] = 0.0
    safe = np.where(kk > 0, kk, 1.0)
    e1, e2 = k2 / safe, -k1 / safe
    q = (s * e1 * e1, s * e1 * e2, s * e2 * e2)
    return tuple(np.fft.rfft2(a) for a in q)


def _unfold_half(half: np.ndarray, n: int) -> np.ndarray:
    """Full N x N array of an even real function stored on the half lattice."""
    full = np.empty((n, n))
    m = n // 2 + 1
    full[:, :m] = half
    # columns m..n-1 hold -k2; evenness maps them to (-k1, k2)
    rows = (-np.arange(n)) % n
    full[:, m:] = half[rows][:, n - np.arange(m, n)]
    return full


def expected_noise_square(omega_hat_half: np.ndarray, params: KraichnanParams, dt: float,
                          taper: bool = False) -> np.ndarray:
    """E|D[div(V w)]^(n)|^2 given w, on the half lattice.

    Equals D(n) 4 pi^2 dt L^{-2} sum_m n^T Qhat^d(m) n |what(n-m)|^2, computed as
    circular convolutions (exact inside the dealiased band).
    """
    n = params.grid_n
    L = params.box_len
    power = _unfold_half(np.abs(omega_hat_half) ** 2, n)
    pf = np.fft.rfft2(power)
    q11, q12, q22 = _full_covariance_hat(n, L, params.alpha, params.delta, taper)
    m = n // 2 + 1
    c11, c12, c22 = (np.fft.irfft2(pf * q, s=(n, n))[:, :m] for q in (q11, q12, q22))
    k1, k2, _, band = _lattice(n, L)
    quad = k1 * k1 * c11 + 2 * k1 * k2 * c12 + k2 * k2 * c22
    return band * 4 * math.pi ** 2 * dt * quad / L ** 2


# --- stepping ----------------------------------------------------------------------

class Stepper:
    """Holds the per-configuration constants and advances states."""

    def __init__(self, config: SolverConfig):
        p = config.params
        self.config = config
        self.params = p
        self.c = ito_correction(p, config.taper).c_delta_lattice if config.noise else 0.0
        if config.dt is None:
            raise ValueError("config.dt must be set (see stable_dt)")
        c_diff = self.c if config.diffusion else 0.0
        self.S = diffusion_factor(p, config.dt, c_diff)
        self.S2 = self.S * self.S
        k1, k2, n2, band = _lattice(p.grid_n, p.box_len)
        self.k1, self.k2, self.n2, self.band = k1, k2, n2, band
        self.ghat = green_regularized_hat(n2, p.delta)
        self.ghat[0, 0] = 0.0
        self.w = half_weights(p.grid_n)
        self.h_malpha_w = (1.0 + n2) ** (-p.alpha)
        self.h_m1_w = np.where(n2 > 0, 1.0 / np.where(n2 > 0, n2, 1.0), 0.0)

    def _pair(self, a, b, weight):
        return float(np.sum((a.conj() * b).real * weight * self.w)) / self.params.box_len ** 2

    def increment(self, step_index: int) -> NoiseIncrement | None:
        cfg = self.config
        if not cfg.noise:
            return None
        return sample_increment(self.params, cfg.dt, (cfg.seed, step_index), cfg.taper)

    def step(self, state: SolverState, noise_inc: NoiseIncrement | None, ledger: bool = False):
        p = self.params
        cfg = self.config
        dt = cfg.dt
        L = p.box_len
        n = p.grid_n
        a = state.omega.coeffs
        w_real = _to_real(a, n, L)
        A = np.zeros_like(a)
        umax = 0.0
        if cfg.nonlinearity:
            u1, u2 = biot_savart(state.omega, True, p.delta)
            u = _to_real(np.stack([u1.coeffs, u2.coeffs]), n, L)
            umax = float(np.max(np.hypot(u[0], u[1])))
            A = -dt * _flux_divergence(u, w_real, self.k1, self.k2, self.band, L)
        check_cfl(p, dt, self.c if cfg.diffusion else 0.0, umax)
        B = np.zeros_like(a)
        if noise_inc is not None:
            B = -_flux_divergence(noise_inc.to_real(), w_real, self.k1, self.k2, self.band, L)
        new = self.S * (a + A + B)
        new[0, 0] = 0.0
        if not np.all(np.isfinite(new)):
            raise SolverError(f"non-finite vorticity at step {state.step_index + 1}")
        nxt = SolverState(SpectralField(new, L), (state.step_index + 1) * dt,
                          state.step_index + 1, cfg)
        if not ledger:
            return nxt, None
        row = self._ledger_row(state, nxt, a, A, B, w_real)
        return nxt, row

    def _ledger_row(self, state, nxt, a, A, B, w_real):
        p = self.params
        dt = self.config.dt
        g, gs = self.ghat, self.S2 * self.ghat
        e_old = self._pair(a, a, g)
        e_new = self._pair(nxt.omega.coeffs, nxt.omega.coeffs, g)
        flux = self._pair(a, A, g) / dt if self.config.nonlinearity else 0.0
        if self.config.noise:
            eb2 = expected_noise_square(a, p, dt, self.config.taper)
            quad = self._pair(a, a, gs) - e_old + float(np.sum(eb2 * gs * self.w)) / p.box_len ** 2
            mart = 2.0 * self._pair(a, B, gs)
        else:
            quad = self._pair(a, a, gs) - e_old
            mart = 0.0
        residual = (e_new - e_old) - (quad + 2.0 * flux * dt + mart)
        h2 = (p.box_len / p.grid_n) ** 2
        return {
            "t": state.t,
            "e_gdelta": e_old,
            "h_m1": self._pair(a, a, self.h_m1_w),
            "h_malpha": self._pair(a, a, self.h_malpha_w),
            "nonlinear_flux": flux,
            "noise_quadratic": quad,
            "martingale_increment": mart,
            "l1": float(np.sum(np.abs(w_real)) * h2),
            "lp": float(math.sqrt(np.sum(w_real * w_real) * h2)),
            "linf": float(np.max(np.abs(w_real))),
            "residual": residual,
        }


def step(state: SolverState, noise_inc: NoiseIncrement | None) -> SolverState:
    return Stepper(state.config).step(state, noise_inc)[0]


def final_row(stepper: Stepper, state: SolverState) -> dict:
    """Ledger row for a terminal state (no increments)."""
    a = state.omega.coeffs
    p = stepper.params
    w_real = state.omega.to_real()
    h2 = (p.box_len / p.grid_n) ** 2
    return {
        "t": state.t,
        "e_gdelta": stepper._pair(a, a, stepper.ghat),
        "h_m1": stepper._pair(a, a, stepper.h_m1_w),
        "h_malpha": stepper._pair(a, a, stepper.h_malpha_w),
        "nonlinear_flux": 0.0, "noise_quadratic": 0.0, "martingale_increment": 0.0,
        "l1": float(np.sum(np.abs(w_real)) * h2),
        "lp": float(math.sqrt(np.sum(w_real * w_real) * h2)),
        "linf": float(np.max(np.abs(w_real))),
        "residual": 0.0,
    }


@dataclass
class Trajectory:
    config: SolverConfig
    ledger: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final: SolverState | None = None


def iterate(config: SolverConfig, omega0: SpectralField):
    """Stream ("ledger", row) and ("snapshot", state) events until time T."""
    stepper = Stepper(config)
    state = SolverState(omega0.copy(), 0.0, 0, config)
    if config.snapshot_every:
        yield "snapshot", state.copy()
    for _ in range(config.n_steps):
        inc = stepper.increment(state.step_index)
        state, row = stepper.step(state, inc, ledger=config.ledger)
        if row is not None:
            yield "ledger", row
        if config.snapshot_every and state.step_index % config.snapshot_every == 0:
            yield "snapshot", state.copy()
    if config.ledger:
        yield "ledger", final_row(stepper, state)
    yield "final", state


def run(config: SolverConfig, omega0: SpectralField) -> Trajectory:
    traj = Trajectory(config)
    try:
        for kind, item in iterate(config, omega0):
            if kind == "ledger":
                traj.ledger.append(item)
            elif kind == "snapshot":
                traj.snapshots.append(item)
            else:
                traj.final = item
    except SolverError as exc:
        raise SolverAbort(str(exc), traj) from exc
    return traj


def write_snapshot(state: SolverState, path) -> None:
    """Binary: header (N int64, L float64, t float64), then the real grid row-major, little-endian."""
    grid = state.omega.to_real()
    with open(path, "wb") as fh:
        fh.write(np.array([grid.shape[0]], dtype="<i8").tobytes())
        fh.write(np.array([state.omega.box_len, state.t], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(grid, dtype="<f8").tobytes())


def read_snapshot(path):
    with open(path, "rb") as fh:
        n = int(np.frombuffer(fh.read(8), dtype="<i8")[0])
        box_len, t = np.frombuffer(fh.read(16), dtype="<f8")
        grid = np.frombuffer(fh.read(), dtype="<f8").reshape(n, n)
    return grid, float(box_len), float(t)


# --- initial data ------------------------------------------------------------------

def _centered_coords(n, L):
    x, y = grid_points(n, L)
    return x - L / 2, y - L / 2


def make_initial_vorticity(spec: InitialDataSpec, params: KraichnanParams) -> tuple[SpectralField, dict]:
    """Zero-mean, band-limited initial vorticity and a report of its norms."""
    n, L = params.grid_n, params.box_len
    k1, k2, n2, band = _lattice(n, L)
    mollifier = np.exp(-2 * math.pi ** 2 * spec.delta ** 2 * n2) * band
    kw = dict(spec.parameters)
    X, Y = _centered_coords(n, L)
    u0 = None
    if spec.kind == "curl_of_bump":
        # stream function made of Gaussian bumps; u0 = grad-perp psi, w0 = curl u0
        width = kw.get("width", L / 12)
        centers = kw.get("centers", [(-L / 10, 0.0), (L / 10, 0.0)])
        amps = kw.get("amplitudes", [1.0, -1.0])
        psi = sum(a * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * width ** 2))
                  for a, (cx, cy) in zip(amps, centers))
        psi_hat = _to_hat(psi, L) * mollifier
        u1 = SpectralField(TWO_PI * 1j * k2 * psi_hat, L)
        u2 = SpectralField(-TWO_PI * 1j * k1 * psi_hat, L)
        omega = curl(u1, u2)
        u0 = (u1, u2)
    elif spec.kind == "random_band":
        rng = np.random.Generator(np.random.PCG64(kw.get("seed", 0)))
        k_lo, k_hi = kw.get("k_lo", 1.0 / L), kw.get("k_hi", 4.0 / L)
        kk = np.sqrt(n2)
        ring = ((kk >= k_lo) & (kk <= k_hi)).astype(float)
        coeffs = (rng.standard_normal(n2.shape) + 1j * rng.standard_normal(n2.shape)) * ring
        real = _to_real(coeffs, n, L)  # enforce Hermitian symmetry by round trip
        omega = SpectralField(_to_hat(real, L) * mollifier, L)
    elif spec.kind == "vortex_patch_mollified":
        radius = kw.get("radius", L / 10)
        r = np.hypot(X, Y)
        patch = (r <= radius).astype(float) - ((r > radius) & (r <= radius * math.sqrt(2))).astype(float)
        omega = SpectralField(_to_hat(patch, L) * mollifier, L)
    else:
        raise ValueError(f"unknown initial data kind {spec.kind!r}")
    omega.coeffs[0, 0] = 0.0
    scale = kw.get("scale")
    if scale is not None:
        factor = scale / max(omega.lp_norm(np.inf), 1e-300)
        omega.coeffs *= factor
        if u0 is not None:
            u0 = (SpectralField(u0[0].coeffs * factor, L), SpectralField(u0[1].coeffs * factor, L))
    grid = omega.to_real()
    h2 = (L / n) ** 2
    report = {
        "mean": float(np.sum(grid) * h2),
        "l1": omega.lp_norm(1),
        "l2": omega.lp_norm(2),
        "linf": omega.lp_norm(np.inf),
        "h_minus1": sobolev_norm(omega, NormSpec(-1.0, "homogeneous")),
        "moment2": float(np.sum((X ** 2 + Y ** 2) * np.abs(grid)) * h2),
    }
    if u0 is not None:
        report["velocity_l2"] = math.sqrt(u0[0].mode_sum(1.0) + u0[1].mode_sum(1.0))
    return omega, report
