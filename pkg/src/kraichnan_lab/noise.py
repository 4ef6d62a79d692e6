"""White-in-time Kraichnan velocity increments on the periodic lattice.

Each independent mode pair {n, -n} with 0 < |n| within the cutoff carries
    vhat(n) = sqrt(dt L^2 <n>^{-(2+2a)} chi(n)) xi_n e_perp(n),
with xi_n a unit complex Gaussian, so E[vhat vhat^*] = dt L^2 Qhat^d(n).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .containers import half_weights, wavenumbers
from .covariance import KraichnanParams

_DUMP_MAGIC = b"KVINC001"


def cutoff_profile(k: np.ndarray, delta: float, taper: bool = False) -> np.ndarray:
    """Squared cutoff chi(|n|): sharp indicator of |n| <= 1/d, or the square of a
    cosine taper that falls from 1 at 1/d to 0 at 2/d."""
    k = np.asarray(k, dtype=float)
    if not taper:
        return (k <= 1.0 / delta).astype(float)
    s = np.clip(k * delta - 1.0, 0.0, 1.0)
    rho = 0.5 * (1.0 + np.cos(math.pi * s))
    return rho * rho


def cutoff_radius(delta: float, taper: bool = False) -> float:
    return (2.0 if taper else 1.0) / delta


@lru_cache(maxsize=16)
def _mode_tables(n_grid: int, box_len: float, alpha: float, delta: float, taper: bool):
    k1, k2 = wavenumbers(n_grid, box_len)
    kk = np.hypot(k1, k2)
    spec = (1.0 + kk * kk) ** (-(1.0 + alpha)) * cutoff_profile(kk, delta, taper)
    spec[0, 0] = 0.0
    safe = np.where(kk > 0, kk, 1.0)
    eperp = np.stack([k2 / safe, -k1 / safe])
    eperp[:, 0, 0] = 0.0
    amp = np.sqrt(spec)
    active = np.nonzero(spec > 0)
    for a in (spec, eperp, amp):
        a.setflags(write=False)
    return spec, eperp, amp, active


@dataclass(frozen=True)
class NoiseIncrement:
    vhat: np.ndarray  # shape (2, N, N//2+1), Fourier coefficients of the increment
    dt: float
    seed_path: tuple
    params: KraichnanParams
    taper: bool = False

    def to_real(self) -> np.ndarray:
        n = self.params.grid_n
        return np.fft.irfft2(self.vhat, s=(n, n), axes=(-2, -1)) * (n / self.params.box_len) ** 2

    def dump(self, path) -> None:
        p = self.params
        seed, step = self.seed_path[:2]
        with open(path, "wb") as fh:
            fh.write(_DUMP_MAGIC)
            fh.write(struct.pack("<dqddd", p.box_len, p.grid_n, self.dt, p.alpha, p.delta))
            fh.write(struct.pack("<QQ", int(seed), int(step)))
            pairs = np.stack([self.vhat.real, self.vhat.imag], axis=-1)
            fh.write(np.ascontiguousarray(pairs, dtype="<f8").tobytes())

    @staticmethod
    def load(path) -> "NoiseIncrement":
        with open(path, "rb") as fh:
            if fh.read(8) != _DUMP_MAGIC:
                raise ValueError("not a noise increment dump")
            box_len, n, dt, alpha, delta = struct.unpack("<dqddd", fh.read(40))
            seed, step = struct.unpack("<QQ", fh.read(16))
            raw = np.frombuffer(fh.read(), dtype="<f8").reshape(2, n, n // 2 + 1, 2)
        vhat = raw[..., 0] + 1j * raw[..., 1]
        return NoiseIncrement(vhat, dt, (seed, step), KraichnanParams(alpha, delta, box_len, n))


def rng_for(seed: int, step: int, stream: int = 0) -> np.random.Generator:
    """One named stream per (seed, step); `stream` separates independent uses."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream), int(step)])))


def sample_increment(params: KraichnanParams, dt: float, rng_state, taper: bool = False) -> NoiseIncrement:
    """Draw one increment. rng_state is (seed, step) or (seed, step, stream)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = params.grid_n
    if cutoff_radius(params.delta, taper) >= n / (2.0 * params.box_len):
        raise ValueError("noise cutoff is not below the lattice Nyquist wavenumber")
    spec, eperp, amp, _ = _mode_tables(n, params.box_len, params.alpha, params.delta, taper)
    rng = rng_for(*rng_state)
    shape = spec.shape
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    # modes on the k2 = 0 and Nyquist columns pair with rows of the same column
    for col in (0, shape[1] - 1):
        # e_perp is odd in n, so the paired scalar carries a sign
        z[n // 2 + 1:, col] = -np.conj(z[1:n // 2, col][::-1])
        z[0, col] = z[0, col].real * math.sqrt(2.0)
        z[n // 2, col] = z[n // 2, col].real * math.sqrt(2.0)
    scal = math.sqrt(dt) * params.box_len * amp * z
    vhat = eperp * scal[None]
    return NoiseIncrement(vhat, dt, tuple(rng_state), params, taper)


@dataclass(frozen=True)
class ItoCorrection:
    c_delta_lattice: float


def ito_correction(params: KraichnanParams, taper: bool = False) -> ItoCorrection:
    """c = (1/(2L^2)) sum_{n != 0} <n>^{-(2+2a)} chi(n)."""
    spec, *_ = _mode_tables(params.grid_n, params.box_len, params.alpha, params.delta, taper)
    total = float(np.sum(spec * half_weights(params.grid_n)))
    return ItoCorrection(total / (2.0 * params.box_len ** 2))


def lattice_ito_sum(alpha: float, delta: float, box_len: float, taper: bool = False) -> float:
    """Same constant as ito_correction but summed on the lattice directly,
    without going through a grid size (any grid wide enough to hold the cutoff)."""
    kmax = int(math.ceil(cutoff_radius(delta, taper) * box_len))
    m = np.arange(-kmax, kmax + 1) / box_len
    k1, k2 = np.meshgrid(m, m, indexing="ij")
    kk = np.hypot(k1, k2)
    s = (1.0 + kk * kk) ** (-(1.0 + alpha)) * cutoff_profile(kk, delta, taper)
    s[kmax, kmax] = 0.0
    return float(np.sum(s)) / (2.0 * box_len ** 2)


def evaluate_at_points(inc: NoiseIncrement, points) -> np.ndarray:
    """V(x) = L^{-2} sum_n vhat(n) e^{2 pi i n.x} by direct summation over active modes."""
    p = inc.params
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    *_, active = _mode_tables(p.grid_n, p.box_len, p.alpha, p.delta, inc.taper)
    k1, k2 = wavenumbers(p.grid_n, p.box_len)
    rows, cols = active
    w = half_weights(p.grid_n)[rows, cols]
    kx, ky = k1[rows, cols], k2[rows, cols]
    v = inc.vhat[:, rows, cols] * w[None]
    out = np.empty((pts.shape[0], 2))
    block = 512
    for s in range(0, pts.shape[0], block):
        q = pts[s:s + block]
        phase = np.exp(2j * math.pi * (np.outer(q[:, 0], kx) + np.outer(q[:, 1], ky)))
        # conjugate-pair modes in the k2 = 0 column are stored twice with weight 1,
        # other columns once with weight 2; the real part completes the pairing
        out[s:s + block] = (phase @ v.T).real
    return out / p.box_len ** 2
