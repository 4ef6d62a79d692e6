"""Lagrangian side: two-point motion, the reduced distance process, Bessel
dimension estimates, particle pushforward under a shared noise realisation,
the Picard iteration for the particle fixed point and a sliced
bounded-Lipschitz distance between weighted ensembles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .containers import ParticleEnsemble
from .covariance import IncrementTable, KraichnanParams, beta_constants
from .kernels import _pair_blocks, biot_savart_regularized
from .noise import NoiseIncrement, evaluate_at_points, sample_increment


class LagrangianError(RuntimeError):
    pass


@dataclass
class TwoPointPath:
    times: np.ndarray
    distances: np.ndarray
    mode: str  # "lattice_field" (4D pair motion) or "idealized_local" (1D distance chain)
    positions: np.ndarray | None = None  # (records, paths, 2, 2) when tracked


# --- two-point motion -------------------------------------------------------------

def _split_factors(z: np.ndarray, dl: np.ndarray, dn: np.ndarray, q0: float, dt: float):
    """Square roots of the two blocks of dt [[Q0, Qz], [Qz, Q0]] after the sum/difference rotation.

    D = dX - dY has covariance 2 dt (Q0 - Qz) and U = (dX + dY)/2 has dt (Q0 + Qz)/2,
    independent of D.  Both are diagonal in the frame (z_hat, z_perp), so the factors are
    closed form; a coincident pair gets D = 0 exactly.
    """
    lam = np.stack([2 * dl, 2 * dn, (2 * q0 - dl) / 2, (2 * q0 - dn) / 2], axis=-1) * dt
    tr = 2 * q0 * dt
    if np.any(lam < -1e-12 * tr):
        raise LagrangianError("two-point covariance is not positive semidefinite")
    root = np.sqrt(np.clip(lam, 0.0, None))
    r = np.hypot(z[:, 0], z[:, 1])
    safe = np.where(r > 0, r, 1.0)
    e = np.where((r > 0)[:, None], z / safe[:, None], np.array([1.0, 0.0]))
    zz = e[:, :, None] * e[:, None, :]
    perp = np.eye(2) - zz
    d_root = root[:, 0, None, None] * zz + root[:, 1, None, None] * perp
    u_root = root[:, 2, None, None] * zz + root[:, 3, None, None] * perp
    return d_root, u_root


def two_point_step(x, y, dt: float, alpha: float, delta: float | None, rng: np.random.Generator,
                   mode: str = "cholesky", table: IncrementTable | None = None,
                   lattice: KraichnanParams | None = None):
    """Advance pairs (x, y) by one step of the Kraichnan flow.

    x and y have shape (2,) or (P, 2).  In "cholesky" mode the 4x4 Gaussian
    increment is drawn from the exact (optionally regularised) covariance through its
    sum/difference factorisation; in
    "lattice" mode both points read the same sampled lattice field.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = x.ndim == 1
    X, Y = np.atleast_2d(x), np.atleast_2d(y)
    if mode == "cholesky":
        if table is None:
            table = IncrementTable(alpha, delta)
        z = X - Y
        dl, dn = table(np.hypot(z[:, 0], z[:, 1]))
        d_root, u_root = _split_factors(z, dl, dn, table.q0, dt)
        xi = rng.standard_normal((X.shape[0], 4))
        D = np.einsum("pij,pj->pi", d_root, xi[:, :2])
        U = np.einsum("pij,pj->pi", u_root, xi[:, 2:])
        Xn, Yn = X + U + D / 2, Y + U - D / 2
    elif mode == "lattice":
        if lattice is None:
            raise ValueError("lattice mode needs KraichnanParams for the field")
        Xn, Yn = np.empty_like(X), np.empty_like(Y)
        seeds = rng.integers(0, 2 ** 63, size=X.shape[0])
        for i in range(X.shape[0]):
            field_inc = sample_increment(lattice, dt, (int(seeds[i]), 0))
            v = evaluate_at_points(field_inc, np.stack([X[i], Y[i]]))
            Xn[i], Yn[i] = X[i] + v[0], Y[i] + v[1]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if single:
        return Xn[0], Yn[0]
    return Xn, Yn


# --- reduced distance process -----------------------------------------------------

@dataclass(frozen=True)
class IdealizedCoefficients:
    alpha: float
    beta_l: float
    beta_n: float

    @classmethod
    def from_quadrature(cls, alpha: float) -> "IdealizedCoefficients":
        _, bl, bn, _ = beta_constants(alpha)
        return cls(alpha, bl, bn)

    @property
    def sigma_z2(self) -> float:
        """Diffusion coefficient of Z = R^{1-a}: 2(1-a)^2 beta_L."""
        return 2 * (1 - self.alpha) ** 2 * self.beta_l

    @property
    def dimension(self) -> float:
        """Dimension of the Bessel process Z read off the Ito drift of Z = R^{1-a}."""
        a = self.alpha
        return 1.0 + (self.beta_n - a * self.beta_l) / ((1 - a) * self.beta_l)


def distance_sde_step(r, dt: float, alpha: float, rng: np.random.Generator,
                      covariance_mode: str = "idealized", table: IncrementTable | None = None,
                      coeffs: IdealizedCoefficients | None = None, scheme: str = "euler"):
    """One step of dR = b(R) dt + sigma(R) dB with reflection at 0.

    sigma^2 = 2(B_L(0) - B_L(R)), b = (B_N(0) - B_N(R))/R.  The idealized mode
    uses beta_L R^{2a}, beta_N R^{2a} for the two increments.  scheme="euler" is
    Euler-Maruyama; scheme="bessel" (idealized only) samples the exact
    transition of Z = R^{1-a} as a scaled squared Bessel process whose
    dimension comes from the coefficients above.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    r = np.asarray(r, dtype=float)
    if covariance_mode == "idealized":
        if coeffs is None:
            coeffs = IdealizedCoefficients.from_quadrature(alpha)
        if scheme == "bessel":
            s2 = coeffs.sigma_z2
            y = r ** (2 * (1 - alpha)) / (s2 * dt)
            y_new = rng.noncentral_chisquare(coeffs.dimension, y, size=r.shape)
            return (y_new * s2 * dt) ** (1.0 / (2 * (1 - alpha)))
        r2a = r ** (2 * alpha)
        dl, dn = coeffs.beta_l * r2a, coeffs.beta_n * r2a
    elif covariance_mode == "exact":
        if table is None:
            raise ValueError("exact mode needs an IncrementTable")
        dl, dn = table(r)
    else:
        raise ValueError(f"unknown covariance mode {covariance_mode!r}")
    safe = np.where(r > 0, r, 1.0)
    drift = np.where(r > 0, dn / safe, 0.0)
    sigma = np.sqrt(2.0 * np.maximum(dl, 0.0))
    return np.abs(r + drift * dt + sigma * math.sqrt(dt) * rng.standard_normal(r.shape))


def simulate_distance(r0, times_steps: int, dt: float, alpha: float, rng, record_every: int = 1, **kw):
    """Run distance_sde_step for many paths. Returns TwoPointPath with distances (records, paths)."""
    r = np.array(r0, dtype=float)
    recs, ts = [r.copy()], [0.0]
    for k in range(1, times_steps + 1):
        r = distance_sde_step(r, dt, alpha, rng, **kw)
        if k % record_every == 0:
            recs.append(r.copy())
            ts.append(k * dt)
    return TwoPointPath(np.array(ts), np.array(recs), "idealized_local")


def simulate_two_point(separations, n_steps: int, dt: float, alpha: float, rng, table: IncrementTable,
                       record_every: int = 1):
    """Full two-point motion started from pairs (0, s e_1); returns distances over time."""
    s = np.asarray(separations, dtype=float)
    X = np.zeros((s.size, 2))
    Y = np.column_stack([s, np.zeros_like(s)])
    recs, ts = [np.hypot(*(X - Y).T)], [0.0]
    for k in range(1, n_steps + 1):
        X, Y = two_point_step(X, Y, dt, alpha, table.delta, rng, "cholesky", table)
        if k % record_every == 0:
            recs.append(np.hypot(*(X - Y).T))
            ts.append(k * dt)
    return TwoPointPath(np.array(ts), np.array(recs), "lattice_field")


@dataclass(frozen=True)
class DimensionEstimate:
    d_eff: float
    stderr: float
    n_paths: int


def bessel_dimension_estimate(path: TwoPointPath, alpha: float, beta_l: float) -> DimensionEstimate:
    """d_eff from E[Z_t^2] = Z_0^2 + d sigma_Z^2 t with Z = R^{1-a}.

    Each path gives a least-squares slope of Z_t^2 - Z_0^2 against t through the
    origin; the estimate is their mean and the error their standard error.
    """
    R = path.distances
    if R.shape[1] < 1000:
        raise LagrangianError("need at least 1000 paths for a dimension estimate")
    t = path.times
    z2 = R ** (2 * (1 - alpha))
    y = z2 - z2[0]
    slopes = (t @ y) / (t @ t)
    s2 = 2 * (1 - alpha) ** 2 * beta_l
    d = slopes / s2
    return DimensionEstimate(float(np.mean(d)), float(np.std(d, ddof=1) / math.sqrt(d.size)), d.size)


def path_statistics_csv(path: TwoPointPath, alpha: float, beta_l: float, out) -> None:
    R = path.distances
    z2 = R ** (2 * (1 - alpha))
    with open(out, "w") as fh:
        fh.write("t,mean_R,mean_R^{2-2a},survival_fraction,d_eff_estimate\n")
        s2 = 2 * (1 - alpha) ** 2 * beta_l
        for i, t in enumerate(path.times):
            d = (np.mean(z2[i]) - np.mean(z2[0])) / (s2 * t) if t > 0 else float("nan")
            row = (t, np.mean(R[i]), np.mean(z2[i]), np.mean(R[i] > 0), d)
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# --- pairwise energies ------------------------------------------------------------

class LagrangianEnergy(NamedTuple):
    log_energy: float
    riesz_energy: float
    coincident: int


def lagrangian_energy(ensemble: ParticleEnsemble, alpha: float) -> LagrangianEnergy:
    """Pairwise sums over i != j of w_i w_j log|x_i - x_j|^{-1} and w_i w_j |x_i - x_j|^{-2+2a}.

    Coincident pairs are left out of both sums and counted.
    """
    if ensemble.size < 2:
        raise ValueError("need at least two particles")
    log_e, skipped = _pair_blocks(ensemble.positions, ensemble.weights, lambda d: -np.log(d))
    riesz_e, _ = _pair_blocks(ensemble.positions, ensemble.weights, lambda d: d ** (-2 + 2 * alpha))
    return LagrangianEnergy(float(log_e), float(riesz_e), int(skipped))


# --- shared noise and pushforward ---------------------------------------------------

@dataclass
class NoiseRealization:
    """A fixed noise path: increment k is a pure function of (seed, k)."""

    params: KraichnanParams
    dt: float
    seed: int
    scale: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    def increment(self, k: int) -> NoiseIncrement:
        inc = self._cache.get(k)
        if inc is None:
            inc = sample_increment(self.params, self.dt, (self.seed, k, 7))
            self._cache[k] = inc
        return inc

    def velocity(self, k: int, points: np.ndarray) -> np.ndarray:
        if self.scale == 0.0:
            return np.zeros_like(points)
        return self.scale * evaluate_at_points(self.increment(k), points)


def flow_pushforward(drift, ensemble: ParticleEnsemble, noise: NoiseRealization | None,
                     dt: float, n_steps: int, guard: float | None = None, record: bool = True):
    """Euler-Maruyama transport of every particle under the same noise realisation.

    drift(k, positions) -> velocities at step k.  Weights are carried unchanged.
    Returns the list of ensembles at steps 0..n_steps (or only the last one).
    """
    pos = ensemble.positions.copy()
    frames = [ensemble.moved(pos.copy())] if record else []
    half = None if guard is None else guard / 2
    for k in range(n_steps):
        v = np.zeros_like(pos) if drift is None else drift(k, pos)
        move = v * dt
        if noise is not None:
            move = move + noise.velocity(k, pos)
        pos = pos + move
        if half is not None and np.any(np.abs(pos) > half):
            raise LagrangianError(f"particle left the guard box at step {k + 1}")
        if record:
            frames.append(ensemble.moved(pos.copy()))
    if not record:
        frames.append(ensemble.moved(pos))
    return frames


def kernel_drift(frames, delta: float, block: int = 1024):
    """Drift field K^d * mu_k evaluated by direct summation over the particles of frame k."""

    def drift(k, points):
        src = frames[min(k, len(frames) - 1)]
        out = np.zeros_like(points)
        for s in range(0, points.shape[0], block):
            p = points[s:s + block]
            diff = p[:, None, :] - src.positions[None, :, :]
            out[s:s + block] = np.einsum("pqi,q->pi", biot_savart_regularized(diff, delta), src.weights)
        return out

    return drift


def picard_iterate(omega0: ParticleEnsemble, iterations: int, T: float, dt: float, seed: int,
                   params: KraichnanParams, directions: int = 8, gap_stride: int = 1,
                   noise_scale: float = 1.0):
    """Iterate mu -> pushforward of omega0 by the flow with drift K^d * mu, under a fixed noise path.

    Returns a list of (frames, w1_gap) where w1_gap is the sup over sampled times of the
    sliced bounded-Lipschitz distance to the previous iterate (None for the first).
    """
    if iterations < 2:
        raise ValueError("need at least two iterations")
    n_steps = int(round(T / dt))
    noise = NoiseRealization(params, dt, seed, noise_scale)
    prev = [omega0] * (n_steps + 1)
    out = []
    for m in range(iterations):
        frames = flow_pushforward(kernel_drift(prev, params.delta), omega0, noise, dt, n_steps,
                                  guard=10 * params.box_len)
        gap = max(w1_distance(frames[k], prev[k], directions)
                  for k in range(0, n_steps + 1, gap_stride))
        out.append((frames, gap))
        prev = frames
    return out


# --- bounded-Lipschitz distance -------------------------------------------------------

def bl_dual_1d(points: np.ndarray, masses: np.ndarray) -> float:
    """sup sum_i m_i phi(p_i) over ||phi||_inf + Lip(phi) <= 1 on the line, solved as an LP.

    Variables are the values phi_i at the sorted points plus the Lipschitz bound s;
    |phi_i| <= 1 - s and |phi_{i+1} - phi_i| <= s (p_{i+1} - p_i).
    """
    order = np.argsort(points, kind="stable")
    p = points[order]
    m = masses[order]
    K = p.size
    if K == 1:
        return abs(float(m[0]))
    g = np.diff(p)
    D = sp.diags([-np.ones(K - 1), np.ones(K - 1)], [0, 1], shape=(K - 1, K))
    gcol = sp.csr_matrix(-g[:, None])
    eye = sp.identity(K, format="csr")
    ones = sp.csr_matrix(np.ones((K, 1)))
    A = sp.vstack([sp.hstack([D, gcol]), sp.hstack([-D, gcol]),
                   sp.hstack([eye, ones]), sp.hstack([-eye, ones])]).tocsr()
    b = np.concatenate([np.zeros(2 * (K - 1)), np.ones(2 * K)])
    c = np.concatenate([-m, [0.0]])
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * K + [(0.0, 1.0)], method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise LagrangianError(f"1D dual LP failed: {res.message}")
    return float(-res.fun)


def slice_directions(directions: int) -> np.ndarray:
    theta = math.pi * np.arange(directions) / directions
    return np.column_stack([np.cos(theta), np.sin(theta)])


def w1_distance(a: ParticleEnsemble, b: ParticleEnsemble, directions: int = 8) -> float:
    """Sliced lower bound on the bounded-Lipschitz distance between two signed ensembles.

    Uses a fixed, evenly spaced set of directions so the estimator is deterministic.
    """
    if a.size == 0 or b.size == 0:
        raise ValueError("empty ensemble")
    pts = np.concatenate([a.positions, b.positions])
    mass = np.concatenate([a.weights, -b.weights])
    best = 0.0
    for e in slice_directions(directions):
        best = max(best, bl_dual_1d(pts @ e, mass))
    return best
