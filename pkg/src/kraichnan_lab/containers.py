"""Shared data carriers: lattice fields and weighted particle ensembles.

Fourier convention on a periodic box of side L with N points per side:
    fhat(n) = (L/N)^2 sum_x f(x) exp(-2 pi i x.n),   n in Z^2 / L,
so that ||f||_{L^2}^2 = L^{-2} sum_n |fhat(n)|^2.  Coefficients are stored in
the real-FFT half layout, shape (N, N//2 + 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def wavenumbers(n_grid: int, box_len: float):
    """(n1, n2) arrays in the half layout, in units of cycles per length."""
    n1 = np.fft.fftfreq(n_grid, d=box_len / n_grid)
    n2 = np.fft.rfftfreq(n_grid, d=box_len / n_grid)
    k1, k2 = np.meshgrid(n1, n2, indexing="ij")
    k1.setflags(write=False)
    k2.setflags(write=False)
    return k1, k2


@lru_cache(maxsize=32)
def half_weights(n_grid: int) -> np.ndarray:
    """Multiplicity of each stored mode in a full-lattice sum."""
    w = np.full((n_grid, n_grid // 2 + 1), 2.0)
    w[:, 0] = 1.0
    w[:, -1] = 1.0
    w.setflags(write=False)
    return w


@lru_cache(maxsize=32)
def grid_points(n_grid: int, box_len: float):
    x = np.arange(n_grid) * (box_len / n_grid)
    return np.meshgrid(x, x, indexing="ij")


@dataclass
class SpectralField:
    """Real scalar field on the periodic lattice, held by its Fourier coefficients."""

    coeffs: np.ndarray
    box_len: float

    @property
    def n_grid(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def from_real(cls, values: np.ndarray, box_len: float) -> "SpectralField":
        n = values.shape[0]
        return cls(np.fft.rfft2(values) * (box_len / n) ** 2, box_len)

    def to_real(self) -> np.ndarray:
        n = self.n_grid
        return np.fft.irfft2(self.coeffs, s=(n, n)) * (n / self.box_len) ** 2

    def wavenumbers(self):
        return wavenumbers(self.n_grid, self.box_len)

    def mode_sum(self, weight) -> float:
        """L^{-2} sum_n weight(n) |fhat(n)|^2 over the full lattice."""
        w = half_weights(self.n_grid)
        a = np.abs(self.coeffs) ** 2 * weight * w
        return float(np.sum(a)) / self.box_len ** 2

    def mean_mode(self) -> complex:
        return complex(self.coeffs[0, 0])

    def copy(self) -> "SpectralField":
        return SpectralField(self.coeffs.copy(), self.box_len)

    def lp_norm(self, p: float) -> float:
        f = self.to_real()
        h2 = (self.box_len / self.n_grid) ** 2
        if np.isinf(p):
            return float(np.max(np.abs(f)))
        return float((np.sum(np.abs(f) ** p) * h2) ** (1.0 / p))


@dataclass
class ParticleEnsemble:
    """Weighted point masses. Weights are signed (vorticity mass)."""

    positions: np.ndarray
    weights: np.ndarray
    total_variation_cap: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.positions.shape[0] != self.weights.shape[0]:
            raise ValueError("positions and weights differ in length")
        if self.total_variation_cap is not None and self.total_variation > self.total_variation_cap * (1 + 1e-12):
            raise ValueError("total variation exceeds the cap")

    @property
    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def moved(self, positions) -> "ParticleEnsemble":
        return ParticleEnsemble(positions, self.weights, self.total_variation_cap, dict(self.meta))

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.positions, self.weights]), delimiter=",",
                   header="x,y,w", comments="", fmt="%.17g")
