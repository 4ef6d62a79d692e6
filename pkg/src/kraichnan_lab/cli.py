"""Experiment runner: named experiments, JSON configs with --key=value overrides,
seeded reproducibility and CSV/JSON outputs under one directory.

    python -m kraichnan_lab --experiment two_point --alpha=0.25 --out runs/tp
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np

EXPERIMENTS = ("covariance_validate", "multiplier_profile", "energy_budget", "two_point",
               "coupling", "picard", "product_check")

COMMON = {"alpha": 0.5, "delta": 0.05, "box_len": 2 * math.pi * 10, "grid_n": 256}

DEFAULTS = {
    "covariance_validate": {"radii": [1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 5.0], "tol": 1e-8},
    "multiplier_profile": {"delta": 0.05, "grid_n": 512},
    "energy_budget": {"delta": 0.1, "box_len": 8.0, "grid_n": 256, "steps": 1000, "width": 0.4,
                      "nonlinearity": False, "c_hat": None, "bound_factor": 1.1,
                      "multiplier_delta": 0.05, "multiplier_box_len": 2 * math.pi * 10,
                      "multiplier_grid_n": 512},
    "two_point": {"alpha": 0.25, "paths": 10000, "dt": 1e-5, "t_final": 0.01, "r0": 1e-3,
                  "scheme": "euler", "covariance_mode": "idealized", "record_every": 50},
    "coupling": {"delta": 0.1, "box_len": 4.0, "grid_n": 128, "steps": 300, "width": 0.3,
                 "scale": 5.0, "eps": [0.0, 1e-3, 1e-4], "bands": [[1.0, 6.0], [6.0, 12.0], [12.0, 20.0]]},
    "picard": {"delta": 0.5, "box_len": 2 * math.pi, "grid_n": 32, "particles": 1000,
               "iterations": 5, "T": 0.5, "dt": 0.01, "spread": 0.5, "total_variation": 10.0,
               "directions": 8, "gap_stride": 5},
    "product_check": {"alpha": 0.3, "samples": 1000, "grid_n": 32, "product_box_len": 1.0},
}


class UsageError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    realizations: int = 1
    output_dir: str = "out"
    threads: int = 1
    fields: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        d = dict(COMMON)
        d.update(DEFAULTS[self.experiment])
        d.update(self.fields)
        return d

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "realizations": self.realizations,
                "output_dir": self.output_dir, "threads": self.threads, "fields": self.resolved()}


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def build_config(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    exp = raw.pop("experiment", None)
    if exp not in EXPERIMENTS:
        raise UsageError(f"field 'experiment': expected one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    top = {}
    for key, kind in (("seed", int), ("realizations", int), ("threads", int)):
        if key in raw:
            try:
                top[key] = kind(raw.pop(key))
            except (TypeError, ValueError):
                raise UsageError(f"field {key!r}: expected an integer") from None
    if top.get("seed", 0) < 0 or top.get("seed", 0) >= 2 ** 64:
        raise UsageError("field 'seed': must be an unsigned 64-bit integer")
    if top.get("realizations", 1) < 1:
        raise UsageError("field 'realizations': must be positive")
    if top.get("threads", 1) < 1:
        raise UsageError("field 'threads': must be positive")
    out = raw.pop("output_dir", raw.pop("out", "out"))
    known = set(COMMON) | set(DEFAULTS[exp])
    for key in raw:
        if key not in known:
            raise UsageError(f"field {key!r}: not a setting of experiment {exp!r}")
    cfg = ExperimentConfig(exp, output_dir=str(out), fields=raw, **top)
    f = cfg.resolved()
    if not 0 < f["alpha"] < 1:
        raise UsageError("field 'alpha': must lie in (0, 1)")
    if not 0 < f["delta"] < 1:
        raise UsageError("field 'delta': must lie in (0, 1)")
    return cfg


def _params(f, prefix=""):
    from .covariance import KraichnanParams

    return KraichnanParams(float(f["alpha"]), float(f[prefix + "delta"]), float(f[prefix + "box_len"]),
                           int(f[prefix + "grid_n"]))


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _write_json(path, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    os.replace(tmp, path)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


# --- experiments ----------------------------------------------------------------------

def _covariance_validate(cfg, f, out):
    from .covariance import remainder_eval, structure_functions, tabulate

    alpha = float(f["alpha"])
    table = tabulate(np.array(f["radii"], dtype=float), alpha, float(f["tol"]))
    table.to_csv(os.path.join(out, "structure_functions.csv"))
    consts = table.constants()
    bl0, bn0, _ = structure_functions(0.0, alpha)
    consts.update({"b_l_at_zero": bl0, "b_n_at_zero": bn0, "ratio_n_over_l": consts["beta_n"] / consts["beta_l"]})
    rem = {sel: remainder_eval(1e-3, sel, alpha)[0] / 1e-6 for sel in ("longitudinal", "transverse")}
    consts["remainder_over_r2_at_1e-3"] = rem
    _write_json(os.path.join(out, "constants.json"), consts)
    return consts


def _multiplier_profile(cfg, f, out):
    from .diagnostics import energy_multiplier

    prof = energy_multiplier(_params(f))
    prof.to_csv(os.path.join(out, "multiplier.csv"))
    summary = {"c": prof.c, "C": prof.C, "violation": prof.violation(), "crossover": prof.crossover,
               "lead_prefactor": prof.lead_prefactor, "lead_reference": prof.lead_reference}
    _write_json(os.path.join(out, "multiplier_fit.json"), summary)
    return summary


def _budget_initial(f, p):
    from .solver import InitialDataSpec, make_initial_vorticity

    w = float(f["width"])
    spec = InitialDataSpec("curl_of_bump", {"width": w, "centers": [(-2.5 * w, 0.0), (2.5 * w, 0.0)],
                                            **({"scale": float(f["scale"])} if "scale" in f else {})},
                           p.delta)
    return make_initial_vorticity(spec, p)


def _energy_budget(cfg, f, out, seeds):
    from .diagnostics import energy_budget, energy_multiplier, run_realizations
    from .noise import ito_correction
    from .solver import SolverConfig, stable_dt

    p = _params(f)
    c_hat = f["c_hat"]
    if c_hat is None:
        prof = energy_multiplier(_params(f, "multiplier_"))
        c_hat = 4 * math.pi ** 2 * prof.c
    omega0, _ = _budget_initial(f, p)
    dt = stable_dt(p, ito_correction(p).c_delta_lattice, margin=1.0)
    sc = SolverConfig(p, dt=dt, T=dt * int(f["steps"]), nonlinearity=bool(f["nonlinearity"]))
    ledgers = run_realizations(sc, omega0, cfg.realizations, cfg.seed, cfg.threads)
    for i, lg in enumerate(ledgers):
        lg.to_csv(os.path.join(out, f"ledger_{i:04d}.csv"))
    rep = energy_budget(ledgers, c_hat, float(f["bound_factor"]))
    rep.to_json(os.path.join(out, "budget.json"))
    return {"residual_z": rep.residual_z, "energy_drop": rep.energy_drop, "bound_ok": rep.bound_ok,
            "residual_ok": rep.residual_ok, "c_hat": c_hat}


def _two_point(cfg, f, out, seeds):
    from .covariance import IncrementTable
    from .lagrangian import (IdealizedCoefficients, bessel_dimension_estimate, path_statistics_csv,
                             simulate_distance)

    alpha = float(f["alpha"])
    coeffs = IdealizedCoefficients.from_quadrature(alpha)
    rng = np.random.Generator(np.random.PCG64(seeds[0]))
    steps = int(round(float(f["t_final"]) / float(f["dt"])))
    kw = {"covariance_mode": f["covariance_mode"], "scheme": f["scheme"], "coeffs": coeffs}
    if f["covariance_mode"] == "exact":
        kw["table"] = IncrementTable(alpha, None)
    path = simulate_distance(np.full(int(f["paths"]), float(f["r0"])), steps, float(f["dt"]), alpha, rng,
                             record_every=int(f["record_every"]), **kw)
    path_statistics_csv(path, alpha, coeffs.beta_l, os.path.join(out, "path_statistics.csv"))
    est = bessel_dimension_estimate(path, alpha, coeffs.beta_l)
    res = {"d_eff": est.d_eff, "stderr": est.stderr, "paths": est.n_paths, "target": 2 / (1 - alpha),
           "survival_fraction": float(np.mean(path.distances[-1] > 0))}
    _write_json(os.path.join(out, "bessel_dimension.json"), res)
    return res


def _coupling(cfg, f, out, seeds):
    from .diagnostics import coupling_experiment, coupling_regression, perturbation_field
    from .noise import ito_correction
    from .solver import SolverConfig, stable_dt

    p = _params(f)
    omega0, _ = _budget_initial(f, p)
    dt = stable_dt(p, ito_correction(p).c_delta_lattice, margin=1.0)
    sc = SolverConfig(p, dt=dt, T=dt * int(f["steps"]), nonlinearity=True, seed=seeds[0])
    summary = {"runs": []}
    for eps in f["eps"]:
        tr = coupling_experiment(sc, omega0, float(eps))
        tr.to_csv(os.path.join(out, f"coupling_eps_{float(eps):.0e}.csv"))
        summary["runs"].append({"eps": eps, "sup_ratio": tr.sup_ratio(), "bitwise_identical": tr.bitwise_identical})
    pooled = [coupling_experiment(sc, omega0, 1e-3, perturbation_field(p, band=tuple(b))) for b in f["bands"]]
    summary["regression"] = dict(zip(("dist2_coef", "h_malpha_coef"), coupling_regression(pooled)))
    _write_json(os.path.join(out, "coupling.json"), summary)
    return summary


def picard_initial(particles: int, spread: float, total_variation: float, seed: int):
    from .containers import ParticleEnsemble

    rng = np.random.Generator(np.random.PCG64(seed))
    pos = rng.normal(0.0, spread, (particles, 2))
    sign = np.where(rng.random(particles) < 0.5, -1.0, 1.0)
    return ParticleEnsemble(pos, sign * total_variation / particles)


def _picard(cfg, f, out, seeds):
    from .lagrangian import picard_iterate

    p = _params(f)
    omega0 = picard_initial(int(f["particles"]), float(f["spread"]), float(f["total_variation"]), seeds[0])
    res = picard_iterate(omega0, int(f["iterations"]), float(f["T"]), float(f["dt"]), seeds[0], p,
                         int(f["directions"]), int(f["gap_stride"]))
    gaps = [g for _, g in res]
    with open(os.path.join(out, "picard_gaps.csv"), "w") as fh:
        fh.write("iteration,w1_gap,total_variation\n")
        for m, (frames, g) in enumerate(res):
            fh.write(f"{m},{float(g)!r},{float(frames[-1].total_variation)!r}\n")
    res[-1][0][-1].to_csv(os.path.join(out, "final_ensemble.csv"))
    summary = {"gaps": gaps, "ratios": [gaps[i + 1] / gaps[i] for i in range(len(gaps) - 1)]}
    _write_json(os.path.join(out, "picard.json"), summary)
    return summary


def _product_check(cfg, f, out, seeds):
    from .diagnostics import product_inequality_check

    rep = product_inequality_check(float(f["alpha"]), int(f["samples"]), int(f["grid_n"]),
                                   float(f["product_box_len"]), seed=seeds[0])
    np.savetxt(os.path.join(out, "product_ratios.csv"), rep.ratios, header="ratio", comments="", fmt="%.17g")
    summary = {"max_ratio": rep.max_ratio, "samples": int(rep.ratios.size), "grid_n": rep.n_grid}
    _write_json(os.path.join(out, "product_check.json"), summary)
    return summary


RUNNERS = {
    "covariance_validate": lambda c, f, o, s: _covariance_validate(c, f, o),
    "multiplier_profile": lambda c, f, o, s: _multiplier_profile(c, f, o),
    "energy_budget": _energy_budget,
    "two_point": _two_point,
    "coupling": _coupling,
    "picard": _picard,
    "product_check": _product_check,
}


def run_experiment(config) -> int:
    """Run one experiment; writes manifest.json first, then the artifacts. Returns an exit status."""
    from .diagnostics import realization_seeds

    cfg = config if isinstance(config, ExperimentConfig) else build_config(config)
    out = cfg.output_dir
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"field 'output_dir': {exc}") from None
    seeds = realization_seeds(cfg.seed, cfg.realizations)
    manifest = {"config": cfg.to_dict(), "code_version": _version(), "seeds": seeds, "status": "running"}
    mpath = os.path.join(out, "manifest.json")
    _write_json(mpath, manifest)
    try:
        result = RUNNERS[cfg.experiment](cfg, cfg.resolved(), out, seeds)
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        _write_json(mpath, manifest)
        raise ExperimentError(f"experiment {cfg.experiment!r} failed: {exc}") from exc
    manifest["status"] = "complete"
    manifest["summary"] = result
    _write_json(mpath, manifest)
    return 0


def parse_args(argv=None) -> ExperimentConfig:
    ap = argparse.ArgumentParser(prog="kraichnan-lab", description=__doc__.splitlines()[0],
                                 epilog="Any experiment setting can be given as --key=value (JSON values).")
    ap.add_argument("--config", help="JSON file with settings")
    ap.add_argument("--experiment", choices=EXPERIMENTS)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--realizations", type=int)
    ap.add_argument("--out", dest="output_dir")
    ap.add_argument("--threads", type=int)
    args, extra = ap.parse_known_args(argv)
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw.update(json.load(fh))
    for key in ("experiment", "seed", "realizations", "output_dir", "threads"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            ap.error(f"unrecognised argument {item!r}; overrides take the form --key=value")
        key, value = item[2:].split("=", 1)
        raw[key.replace("-", "_")] = _coerce(value)
    try:
        return build_config(raw)
    except UsageError as exc:
        ap.error(str(exc))


def main(argv=None) -> int:
    cfg = parse_args(argv)
    try:
        status = run_experiment(cfg)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(os.path.join(cfg.output_dir, "manifest.json"))
    return status


if __name__ == "__main__":
    sys.exit(main())
