"""Energy-budget ledgers, the Fourier dissipation multiplier and its fitted bound,
Monte Carlo budget reports, same-noise coupling runs and a product-norm ratio study.

Normalisations follow the solver: pairings are L^{-2} sum over lattice modes,
e_gdelta = <w, G^d * w>, h_m1 uses |n|^{-2} and h_malpha uses <n>^{-2a}.
The multiplier psi_hat is such that one step of the energy changes in mean by
dt L^{-2} sum_n psi_hat(n) |w_hat(n)|^2.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .containers import SpectralField, half_weights, wavenumbers
from .covariance import IncrementTable, KraichnanParams, spectral_density
from .kernels import NormSpec, green_regularized_hat, hessian_green_regularized, sobolev_norm
from .noise import cutoff_profile, ito_correction
from .solver import SolverConfig, Stepper, SolverState, make_initial_vorticity, InitialDataSpec

COLUMNS = ("t", "e_gdelta", "h_m1", "h_malpha", "nonlinear_flux", "noise_quadratic",
           "martingale_increment", "l1", "lp", "linf", "residual")


class DiagnosticsError(RuntimeError):
    pass


# --- ledger -------------------------------------------------------------------------

@dataclass
class EnergyLedger:
    rows: list
    config_key: str = ""
    seed: int = 0

    @classmethod
    def from_rows(cls, rows, config: SolverConfig | None = None) -> "EnergyLedger":
        key = config_key(config) if config is not None else ""
        return cls(list(rows), key, config.seed if config is not None else 0)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def dt(self) -> float:
        t = self.column("t")
        return float(t[1] - t[0]) if t.size > 1 else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([repr(float(r[c])) for c in COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "EnergyLedger":
        with open(path) as fh:
            rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]
        return cls(rows)

    def gdelta_gap(self) -> np.ndarray:
        """|4 pi^2 e_gdelta - h_m1| per row; vanishes only as d -> 0."""
        return np.abs(4 * math.pi ** 2 * self.column("e_gdelta") - self.column("h_m1"))


def config_key(config: SolverConfig) -> str:
    """Everything in the config except the seed, as a stable string."""
    d = asdict(config)
    d.pop("seed")
    return json.dumps(d, sort_keys=True, default=str)


def realization_seeds(base_seed: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(int(base_seed))
    return [int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(count)]


def _one_realization(args):
    config, omega0 = args
    from .solver import iterate

    rows = [item for kind, item in iterate(config, omega0) if kind == "ledger"]
    return EnergyLedger.from_rows(rows, config)


def run_realizations(config: SolverConfig, omega0: SpectralField, count: int, base_seed: int,
                     threads: int = 1) -> list[EnergyLedger]:
    """Independent realisations with per-realisation seeds; results are in seed order
    whatever the worker count."""
    from dataclasses import replace

    jobs = [(replace(config, seed=s), omega0) for s in realization_seeds(base_seed, count)]
    if threads <= 1:
        return [_one_realization(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_one_realization, jobs))


# --- dissipation multiplier ---------------------------------------------------------

@dataclass
class MultiplierProfile:
    n_abs: np.ndarray  # |n| of each lattice mode in the half layout, n != 0
    psi_hat: np.ndarray
    c: float
    C: float
    alpha: float
    crossover: float
    lead_prefactor: float
    lead_reference: float
    params: KraichnanParams | None = None

    def bound(self, n_abs=None) -> np.ndarray:
        k = self.n_abs if n_abs is None else np.asarray(n_abs, dtype=float)
        return -self.c * (1 + k * k) ** (-self.alpha) + self.C / (k * k)

    def violation(self) -> float:
        """max over modes of psi_hat - bound (<= 0 when the bound holds)."""
        return float(np.max(self.psi_hat - self.bound()))

    def to_csv(self, path) -> None:
        order = np.lexsort((self.psi_hat, self.n_abs))
        b = self.bound()
        with open(path, "w") as fh:
            fh.write("n_abs,psi_hat,bound_value\n")
            for i in order:
                fh.write(f"{float(self.n_abs[i])!r},{float(self.psi_hat[i])!r},{float(b[i])!r}\n")


def required_grid(params: KraichnanParams) -> int:
    n = int(math.ceil(params.box_len / math.sqrt(params.delta)))
    return n + (n % 2)


def _centred_grid(n: int, box_len: float):
    j = np.arange(n)
    x = (box_len / n) * np.where(j < n // 2, j, j - n)
    return np.meshgrid(x, x, indexing="ij")


def multiplier_field(params: KraichnanParams, table: IncrementTable | None = None) -> np.ndarray:
    """psi(x) = tr[(Q^d(0) - Q^d(x)) D^2 G^d(x)] on the grid, origin at index (0, 0)."""
    n, L = params.grid_n, params.box_len
    if L / n > math.sqrt(params.delta):
        raise DiagnosticsError(
            f"grid spacing {L / n:.4g} does not resolve the sqrt(delta) scale of D^2 G^d; "
            f"need grid_n >= {required_grid(params)}")
    if table is None:
        table = IncrementTable(params.alpha, params.delta, r_max=L / math.sqrt(2) + L / n)
    X, Y = _centred_grid(n, L)
    z = np.stack([X, Y], axis=-1)
    dq = table.covariance_increment(z)
    with np.errstate(invalid="ignore", divide="ignore"):
        H = hessian_green_regularized(z, params.delta)
    psi = np.einsum("...ij,...ij->...", dq, H)
    psi[0, 0] = 0.0
    return psi


def multiplier_hat(params: KraichnanParams, table: IncrementTable | None = None) -> np.ndarray:
    """psi_hat on the half layout, (L/N)^2 rfft2 of the real-space field."""
    psi = multiplier_field(params, table)
    h = params.box_len / params.grid_n
    return (h * h * np.fft.rfft2(psi)).real


def multiplier_lattice_sum(params: KraichnanParams, modes, taper: bool = False) -> np.ndarray:
    """Independent route: psi_hat(m) = 4 pi^2 [L^-2 sum_n Ghat^d(n) n.Qhat^d(n - m).n - c |m|^2 Ghat^d(m)],
    with the lattice noise covariance and direct summation over n - m in the noise support."""
    L, a, d = params.box_len, params.alpha, params.delta
    kmax = int(math.ceil((2.0 if taper else 1.0) / d * L))
    j = np.arange(-kmax, kmax + 1) / L
    p1, p2 = np.meshgrid(j, j, indexing="ij")
    pk = np.hypot(p1, p2)
    spec = (1 + pk * pk) ** (-(1 + a)) * cutoff_profile(pk, d, taper)
    spec[kmax, kmax] = 0.0
    sel = spec > 0
    p1, p2, spec = p1[sel], p2[sel], spec[sel]
    pk2 = p1 * p1 + p2 * p2
    c = float(np.sum(spec)) / (2 * L * L)
    out = []
    for m in np.atleast_2d(np.asarray(modes, dtype=float)):
        n1, n2 = m[0] + p1, m[1] + p2
        nn = n1 * n1 + n2 * n2
        # n.Qhat(p).n with Qhat(p) = spec (I - p p^T/|p|^2)
        ndotp = n1 * p1 + n2 * p2
        quad = spec * (nn - ndotp * ndotp / pk2)
        g = np.where(nn > 0, green_regularized_hat(nn, d), 0.0)
        m2 = m[0] ** 2 + m[1] ** 2
        out.append(4 * math.pi ** 2 * (float(np.sum(g * quad)) / (L * L) - c * m2 * float(green_regularized_hat(m2, d))))
    return np.array(out)


def lead_reference(alpha: float, beta_l: float) -> float:
    """alpha beta_L gamma_{2a} / (4 pi (2 pi)^{2a}), the lower bound quoted for the leading prefactor."""
    from .kernels import riesz_constant

    return alpha * beta_l * riesz_constant(alpha) / (4 * math.pi * (2 * math.pi) ** (2 * alpha))


def fit_multiplier(n_abs: np.ndarray, psi_hat: np.ndarray, alpha: float):
    """Least squares of psi_hat on (-<n>^{-2a}, |n|^{-2}) for c, then the smallest C
    making the bound hold on every mode."""
    basis = np.column_stack([-(1 + n_abs ** 2) ** (-alpha), n_abs ** -2.0])
    coef, *_ = np.linalg.lstsq(basis, psi_hat, rcond=None)
    c = float(coef[0])
    C = float(np.max((psi_hat + c * (1 + n_abs ** 2) ** (-alpha)) * n_abs ** 2))
    return c, C


def energy_multiplier(params: KraichnanParams, table: IncrementTable | None = None) -> MultiplierProfile:
    from .covariance import beta_constants

    k1, k2 = wavenumbers(params.grid_n, params.box_len)
    kk = np.hypot(k1, k2)
    ph = multiplier_hat(params, table)
    # the Nyquist row and column of a real-space sample are not true modes
    n = params.grid_n
    keep = kk > 0
    keep[n // 2, :] = False
    keep[:, -1] = False
    n_abs, psi = kk[keep], ph[keep]
    c, C = fit_multiplier(n_abs, psi, params.alpha)
    neg = np.sort(n_abs[psi >= 0])
    crossover = float(neg[-1]) if neg.size else 0.0
    top = n_abs >= 0.75 * n_abs.max()
    lead = float(np.median(-psi[top] * (1 + n_abs[top] ** 2) ** params.alpha))
    _, bl, _, _ = beta_constants(params.alpha)
    return MultiplierProfile(n_abs, psi, c, C, params.alpha, crossover, lead,
                             lead_reference(params.alpha, bl), params)


# --- Monte Carlo energy budget ------------------------------------------------------

@dataclass
class BudgetReport:
    realizations: int
    residual_mean: float
    residual_stderr: float
    residual_z: float
    residual_ok: bool
    h_m1_initial: float
    h_m1_final_mean: float
    h_m1_final_stderr: float
    energy_drop: float
    dissipation_integral: float
    c_hat: float
    lhs: float
    bound_factor: float
    bound_ok: bool
    max_rel_flux: float
    dissipation_curve: list = field(default_factory=list)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)


def _pairwise_mean(values: np.ndarray) -> float:
    """Order-fixed pairwise reduction, independent of how realisations were scheduled."""
    v = np.asarray(values, dtype=float)
    while v.size > 1:
        if v.size % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0]) / len(values) if len(values) else float("nan")


def energy_budget(ledgers: list[EnergyLedger], c_hat: float, bound_factor: float = 1.1) -> BudgetReport:
    """Check the mean-zero residual and E h_m1(T) + c_hat int E h_malpha <= factor h_m1(0).

    c_hat is expressed in h_m1 units (4 pi^2 times the multiplier constant).
    """
    M = len(ledgers)
    if M < 2:
        raise DiagnosticsError("need at least two realisations")
    keys = {lg.config_key for lg in ledgers}
    if len(keys) > 1:
        raise DiagnosticsError("ledgers come from different configurations")
    if len({len(lg.rows) for lg in ledgers}) > 1:
        raise DiagnosticsError("ledgers have different lengths")
    dt = ledgers[0].dt
    res = np.array([np.sum(lg.column("residual")) for lg in ledgers])
    res_mean = _pairwise_mean(res)
    res_se = float(np.std(res, ddof=1) / math.sqrt(M))
    z = res_mean / res_se if res_se > 0 else (0.0 if res_mean == 0 else math.inf)
    h0 = float(ledgers[0].column("h_m1")[0])
    hT = np.array([lg.column("h_m1")[-1] for lg in ledgers])
    ha = np.array([lg.column("h_malpha") for lg in ledgers])
    mean_ha = np.array([_pairwise_mean(ha[:, k]) for k in range(ha.shape[1])])
    # left-point sum, matching the explicit step
    curve = np.concatenate([[0.0], np.cumsum(mean_ha[:-1] * dt)])
    diss = float(curve[-1])
    hT_mean = _pairwise_mean(hT)
    lhs = hT_mean + c_hat * diss
    flux = max(float(np.max(np.abs(lg.column("nonlinear_flux")) / np.maximum(lg.column("e_gdelta"), 1e-300)))
               for lg in ledgers)
    return BudgetReport(
        realizations=M, residual_mean=res_mean, residual_stderr=res_se, residual_z=z,
        residual_ok=abs(res_mean) <= 3 * res_se, h_m1_initial=h0, h_m1_final_mean=hT_mean,
        h_m1_final_stderr=float(np.std(hT, ddof=1) / math.sqrt(M)), energy_drop=1 - hT_mean / h0,
        dissipation_integral=diss, c_hat=c_hat, lhs=lhs, bound_factor=bound_factor,
        bound_ok=lhs <= bound_factor * h0, max_rel_flux=flux, dissipation_curve=curve.tolist())


# --- same-noise coupling ------------------------------------------------------------

@dataclass
class CouplingTrajectory:
    eps: float
    times: np.ndarray
    dist_h1: np.ndarray
    dist_halpha: np.ndarray
    bitwise_identical: bool

    def sup_ratio(self) -> float:
        return float(np.max(self.dist_h1) / self.eps) if self.eps > 0 else 0.0

    def regression(self):
        """Least squares of the one-step change of dist^2 on (dist^2, |dw|^2_{H^-a}) dt.

        Returns (coefficient of dist^2, coefficient of the H^-a term)."""
        return coupling_regression([self])

    def design(self):
        d2 = self.dist_h1 ** 2
        a2 = self.dist_halpha ** 2
        dt = float(self.times[1] - self.times[0])
        return np.column_stack([d2[:-1] * dt, a2[:-1] * dt]), np.diff(d2)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,dist_h_minus1,dist_h_minus_alpha\n")
            for t, a, b in zip(self.times, self.dist_h1, self.dist_halpha):
                fh.write(f"{float(t)!r},{float(a)!r},{float(b)!r}\n")


def perturbation_field(params: KraichnanParams, seed: int = 11, delta: float | None = None,
                       band: tuple = (1.0, 6.0)) -> SpectralField:
    """Smooth zero-mean field with unit H^-1 norm used to separate coupled runs.

    band gives the ring of lattice indices |n| L the field occupies."""
    spec = InitialDataSpec("random_band", {"seed": seed, "k_lo": band[0] / params.box_len,
                                            "k_hi": band[1] / params.box_len},
                           delta if delta is not None else params.delta)
    eta, _ = make_initial_vorticity(spec, params)
    eta.coeffs /= sobolev_norm(eta, NormSpec(-1.0, "homogeneous"))
    return eta


def coupling_experiment(config: SolverConfig, omega0: SpectralField, eps: float,
                        eta: SpectralField | None = None) -> CouplingTrajectory:
    """Run omega0 and omega0 + eps eta under identical noise increments."""
    p = config.params
    if eta is None:
        eta = perturbation_field(p)
    stepper = Stepper(config)
    s1 = SolverState(omega0.copy(), 0.0, 0, config)
    s2 = SolverState(SpectralField(omega0.coeffs + eps * eta.coeffs, p.box_len), 0.0, 0, config)
    h1 = NormSpec(-1.0, "homogeneous")
    ha = NormSpec(-p.alpha, "inhomogeneous")
    times, d1, da = [], [], []
    identical = True

    def record(a, b):
        diff = SpectralField(a.omega.coeffs - b.omega.coeffs, p.box_len)
        times.append(a.t)
        d1.append(sobolev_norm(diff, h1))
        da.append(sobolev_norm(diff, ha))

    record(s1, s2)
    for _ in range(config.n_steps):
        inc = stepper.increment(s1.step_index)
        s1, _ = stepper.step(s1, inc)
        s2, _ = stepper.step(s2, inc)
        if eps == 0.0:
            identical = identical and np.array_equal(s1.omega.coeffs, s2.omega.coeffs)
        record(s1, s2)
    if eps == 0.0 and not identical:
        raise DiagnosticsError("coupled runs with equal data diverged")
    return CouplingTrajectory(eps, np.array(times), np.array(d1), np.array(da), eps == 0.0 and identical)


def coupling_regression(trajectories) -> tuple[float, float]:
    """Pooled least squares of the one-step change of dist^2 on (dist^2, |dw|^2_{H^-a}) dt.

    Each trajectory is normalised by its initial dist^2 so runs with different eps
    carry equal weight.  Pooling perturbations of different spectral content is what
    separates the two regressors; a single run leaves them nearly collinear.
    Returns (coefficient of dist^2, coefficient of the H^-a term).
    """
    xs, ys = [], []
    for tr in trajectories:
        X, y = tr.design()
        s = tr.dist_h1[0] ** 2
        xs.append(X / s)
        ys.append(y / s)
    coef, *_ = np.linalg.lstsq(np.concatenate(xs), np.concatenate(ys), rcond=None)
    return float(coef[0]), float(coef[1])


# --- product inequality -------------------------------------------------------------

@dataclass
class ProductReport:
    alpha: float
    n_grid: int
    ratios: np.ndarray

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))


def product_ratio(f: SpectralField, g: SpectralField, alpha: float) -> float:
    """|fg|_{H^a} / (|f|_{H^{1-a}} |g|_{H^{2a}}), homogeneous norms, product formed in real space."""
    fg = SpectralField.from_real(f.to_real() * g.to_real(), f.box_len)
    num = sobolev_norm(fg, NormSpec(alpha, "homogeneous"))
    den = sobolev_norm(f, NormSpec(1 - alpha, "homogeneous")) * sobolev_norm(g, NormSpec(2 * alpha, "homogeneous"))
    return num / den


def random_band_field(n_grid: int, box_len: float, band: int, rng: np.random.Generator) -> SpectralField:
    """Zero-mean field whose lattice modes satisfy max(|j1|, |j2|) <= band, with random coefficients."""
    j = np.fft.fftfreq(n_grid, 1.0 / n_grid)
    jr = np.arange(n_grid // 2 + 1)
    J1, J2 = np.meshgrid(j, jr, indexing="ij")
    mask = (np.abs(J1) <= band) & (J2 <= band)
    mask[0, 0] = False
    coeffs = (rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)) * mask
    real = np.fft.irfft2(coeffs, s=(n_grid, n_grid))
    return SpectralField.from_real(real, box_len)


def product_inequality_check(alpha: float, samples: int = 1000, n_grid: int = 32, box_len: float = 1.0,
                             band: int | None = None, seed: int = 0) -> ProductReport:
    """Ratios on random band-limited pairs; band <= n_grid/4 keeps the product alias-free."""
    if not 0 < alpha < 0.5:
        raise DiagnosticsError("the product estimate needs 1-a < 1 and 2a < 1, i.e. a in (0, 1/2)")
    band = n_grid // 4 if band is None else band
    if band > n_grid // 4:
        raise ValueError("band too wide for an alias-free product")
    rng = np.random.Generator(np.random.PCG64(seed))
    ratios = np.array([product_ratio(random_band_field(n_grid, box_len, band, rng),
                                     random_band_field(n_grid, box_len, band, rng), alpha)
                       for _ in range(samples)])
    return ProductReport(alpha, n_grid, ratios)
