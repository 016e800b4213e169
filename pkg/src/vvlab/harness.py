"""Sweep orchestration: diffusivity ladders, rate fits, energy budgets,
conserved-functional checks, and diffusivity-stability couplings.

Rate constants are never asserted against theory: fits are reported, and
the assertable checks are one-sided (a fitted envelope dominating the
measurements) or monotonicity statements.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .config import ExperimentRecord, SweepConfig
from .errors import ContractViolation
from .fields import FieldSpec, VelocityField, make_field
from .flows import ParticleCloud, integrate_flow, lagrangian_solution
from .spectral import EnergyLedger, SolveResult, solve_ade
from .stochastic import (
    NoiseSpec,
    flow_stability_metric,
    integrate_paired_flows,
    integrate_stochastic_flow,
)
from .torus import GridSpec, ScalarField, grid_norm, l1_field_distance, save_field

NOISE_FLOOR = 1e-10


# ---------------------------------------------------------- initial data

def make_initial_data(spec: dict, grid: GridSpec, master_seed: int) -> ScalarField:
    """Named initial-data catalogue: a Fourier mode, a smoothed disc
    indicator, or a seeded random field with square-summable gradient."""
    name = spec["name"]
    params = spec.get("params", {})
    mesh = grid.meshgrid()
    if name == "fourier_mode":
        modes = params.get("mode", [1] + [0] * (grid.dim - 1))
        amp = float(params.get("amplitude", 1.0))
        phase = np.zeros(grid.shape)
        for axis, k in enumerate(modes):
            phase = phase + 2.0 * np.pi * k * mesh[axis]
        return ScalarField(grid, amp * np.sin(phase), name="fourier_mode")
    if name == "smoothed_indicator":
        center = np.asarray(params.get("center", (0.5,) * grid.dim))
        radius = float(params.get("radius", 0.3))
        width = float(params.get("width", 0.1))
        from .torus import geodesic_distance

        pts = np.stack(mesh, axis=-1)
        dist = geodesic_distance(pts, center)
        u = np.clip((radius - dist) / width, 0.0, 1.0)
        vals = u**3 * (10.0 - 15.0 * u + 6.0 * u**2)
        return ScalarField(grid, vals, name="smoothed_indicator")
    if name == "H1_random":
        decay = float(params.get("decay", 2.5))
        kmax = int(params.get("kmax", grid.n // 4))
        rng = np.random.default_rng((master_seed, 0xDA7A))
        k = np.fft.fftfreq(grid.n) * grid.n
        ksq = np.zeros(grid.shape)
        for axis in range(grid.dim):
            shape = [1] * grid.dim
            shape[axis] = grid.n
            ksq = ksq + k.reshape(shape) ** 2
        spectrum = np.where((ksq > 0) & (ksq <= kmax**2),
                            (1.0 + ksq) ** (-decay / 2.0), 0.0)
        coeffs = spectrum * (rng.standard_normal(grid.shape)
                             + 1j * rng.standard_normal(grid.shape))
        vals = np.real(np.fft.ifftn(coeffs)) * grid.size
        vals /= max(np.abs(vals).max(), 1e-30)
        return ScalarField(grid, vals, name="H1_random")
    raise ContractViolation(f"unknown initial data {name!r}")


def mollify_field(u: ScalarField, sigma: float) -> ScalarField:
    """Gaussian mollification at scale sigma via the heat multiplier."""
    if sigma <= 0.0:
        return u
    k = np.fft.fftfreq(u.grid.n) * u.grid.n
    ksq = np.zeros(u.grid.shape)
    for axis in range(u.grid.dim):
        shape = [1] * u.grid.dim
        shape[axis] = u.grid.n
        ksq = ksq + k.reshape(shape) ** 2
    mult = np.exp(-0.5 * (2.0 * np.pi * sigma) ** 2 * ksq)
    vals = np.real(np.fft.ifftn(np.fft.fftn(u.values) * mult))
    return ScalarField(u.grid, vals, name=f"mollified[{u.name}]", time=u.time)


# ------------------------------------------------------------- rate fits

_SHAPES = {
    "inv_sqrt_log": lambda eps: 1.0 / np.sqrt(np.abs(np.log(eps))),
    "inv_log": lambda eps: 1.0 / np.abs(np.log(eps)),
}
_COMPOSITE_SHAPES = (
    lambda eps: eps**0.25,
    lambda eps: 1.0 / np.abs(np.log(eps)),
)


@dataclass(frozen=True)
class RateFit:
    model: str
    constants: dict
    residual: float
    epsilons: tuple
    errors: tuple
    envelope: bool
    dominates: bool
    inconclusive: bool = False

    def predict(self, eps) -> np.ndarray:
        eps = np.asarray(eps, dtype=float)
        if self.model == "power":
            return self.constants["C"] * eps ** self.constants["alpha"]
        if self.model == "composite":
            return (self.constants["c1"] * _COMPOSITE_SHAPES[0](eps)
                    + self.constants["c2"] * _COMPOSITE_SHAPES[1](eps))
        return self.constants["C"] * _SHAPES[self.model](eps)


def _log_residual(errors: np.ndarray, predicted: np.ndarray) -> float:
    keep = (errors > 0) & (predicted > 0)
    if not keep.any():
        return float("inf")
    return float(np.sqrt(np.mean(np.log(errors[keep] / predicted[keep]) ** 2)))


def fit_rate(epsilons: Sequence[float], errors: Sequence[float], model: str,
             envelope: bool = False) -> RateFit:
    """Fit a decay model to measured errors over a diffusivity ladder.

    envelope=False: least squares on the logarithms.
    envelope=True: the minimal nonnegative constants whose model dominates
    every measured point (a linear program for multi-constant models).
    Errors at the solver noise floor mark the fit inconclusive.
    """
    eps = np.asarray(list(epsilons), dtype=float)
    err = np.asarray(list(errors), dtype=float)
    if eps.size < 4:
        raise ContractViolation(f"need at least 4 ladder points, got {eps.size}")
    if eps.size != err.size:
        raise ContractViolation("ladder and error arrays differ in length")
    if np.any(err < NOISE_FLOOR):
        return RateFit(model, {}, float("nan"), tuple(eps), tuple(err),
                       envelope, False, inconclusive=True)

    if model == "power":
        alpha, logc = np.polyfit(np.log(eps), np.log(err), 1)
        c = float(np.exp(logc))
        if envelope:
            shape = eps**alpha
            c = float(np.max(err / shape))
        constants = {"C": c, "alpha": float(alpha)}
    elif model in _SHAPES:
        shape = _SHAPES[model](eps)
        if envelope:
            c = float(np.max(err / shape))
        else:
            c = float(np.exp(np.mean(np.log(err) - np.log(shape))))
        constants = {"C": c}
    elif model == "composite":
        design = np.stack([s(eps) for s in _COMPOSITE_SHAPES], axis=1)
        if envelope:
            # minimise the summed envelope subject to domination, c >= 0
            res = linprog(c=design.sum(axis=0), A_ub=-design, b_ub=-err,
                          bounds=[(0, None), (0, None)], method="highs")
            if not res.success:
                raise ContractViolation(f"envelope fit failed: {res.message}")
            c1, c2 = res.x
        else:
            sol, *_ = np.linalg.lstsq(design, err, rcond=None)
            c1, c2 = np.maximum(sol, 0.0)
        constants = {"c1": float(c1), "c2": float(c2)}
    else:
        raise ContractViolation(
            f"unknown model {model!r}; choose from inv_sqrt_log, inv_log, "
            "power, composite"
        )

    fit = RateFit(model, constants, 0.0, tuple(eps), tuple(err), envelope, False)
    predicted = fit.predict(eps)
    dominates = bool(np.all(predicted >= err * (1.0 - 1e-9)))
    return RateFit(model, constants, _log_residual(err, predicted),
                   tuple(eps), tuple(err), envelope, dominates)


# -------------------------------------------------------- modulus estimate

@dataclass(frozen=True)
class ModulusEstimate:
    """Translation continuity profile h -> ||u0(.+h) - u0||_L1."""

    h_values: np.ndarray
    raw: np.ndarray
    envelope: np.ndarray  # monotone nondecreasing

    def __call__(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return np.interp(h, np.concatenate(([0.0], self.h_values)),
                         np.concatenate(([0.0], self.envelope)))


def estimate_modulus(u0: ScalarField, h_ladder: Sequence[float]) -> ModulusEstimate:
    """Measure exact grid translations along each axis (h snapped to node
    multiples), taking the worst axis, then apply a monotone envelope."""
    spacing = u0.grid.spacing
    hs = np.asarray(sorted(set(float(h) for h in h_ladder)))
    if hs.size == 0:
        raise ContractViolation("translation ladder must be nonempty")
    if np.any(hs < spacing * (1.0 - 1e-9)):
        raise ContractViolation(
            f"translations below the grid spacing {spacing:g} are not measurable"
        )
    if np.any(hs > 0.25 + 1e-12):
        raise ContractViolation("translation ladder must stay within (0, 1/4]")
    shifts = np.maximum(np.round(hs / spacing).astype(int), 1)
    actual = shifts * spacing
    raw = np.empty(hs.size)
    for i, sh in enumerate(shifts):
        worst = 0.0
        for axis in range(u0.grid.dim):
            diff = np.abs(np.roll(u0.values, -int(sh), axis=axis) - u0.values)
            worst = max(worst, float(diff.mean()))
        raw[i] = worst
    return ModulusEstimate(h_values=actual, raw=raw,
                           envelope=np.maximum.accumulate(raw))


# ------------------------------------------------------ selection sweeps

@dataclass
class SweepRecord:
    """In-memory results of a diffusivity ladder against the transported
    solution, plus everything needed to re-derive them."""

    config: SweepConfig
    epsilons: tuple
    snapshot_times: tuple
    errors: np.ndarray            # (n_eps, n_snapshots) L^1 gaps
    sup_errors: np.ndarray        # (n_eps,)
    dissipation: np.ndarray       # (n_eps,) terminal cumulative
    lagrangian_snapshots: list    # [(t, ScalarField)]
    viscous_snapshots: dict       # eps -> [(t, ScalarField)]
    ledgers: dict                 # eps -> EnergyLedger
    norm_reports: dict            # eps -> dict
    initial_data: ScalarField
    record: ExperimentRecord


def _build(cfg: SweepConfig):
    b = make_field(FieldSpec(cfg.field["name"], cfg.field["params"]))
    grid = GridSpec(cfg.dim, cfg.grid_n)
    u0 = make_initial_data(cfg.initial_data, grid, cfg.master_seed)
    return b, grid, u0


def _viscous_initial(cfg: SweepConfig, u0: ScalarField, eps: float) -> ScalarField:
    if cfg.v0_mollify_scale is None:
        return u0
    return mollify_field(u0, cfg.v0_mollify_scale * eps**0.25)


def run_selection_sweep(cfg: SweepConfig, keep_fields: bool = True,
                        persist: bool = True) -> SweepRecord:
    """Solve the diffusive problem for every ladder point and measure the
    L^1 gap to the transported solution at each snapshot time."""
    started = time.monotonic()
    b, grid, u0 = _build(cfg)
    record = ExperimentRecord.start(cfg)

    lagrangian = [
        (t, lagrangian_solution(b, u0, t, grid, cfg.dt))
        for t in cfg.snapshot_times
    ]

    def solve_one(eps: float) -> SolveResult:
        return solve_ade(b, _viscous_initial(cfg, u0, eps), eps, cfg.t_final,
                         grid, cfg.dt, snapshot_times=cfg.snapshot_times)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(solve_one, cfg.epsilon_ladder))
    else:
        results = [solve_one(eps) for eps in cfg.epsilon_ladder]

    n_eps = len(cfg.epsilon_ladder)
    n_t = len(cfg.snapshot_times)
    errors = np.empty((n_eps, n_t))
    dissipation = np.empty(n_eps)
    viscous_snapshots = {}
    ledgers = {}
    norm_reports = {}
    for i, (eps, res) in enumerate(zip(cfg.epsilon_ladder, results)):
        snaps = {round(t, 12): f for t, f in res.snapshots}
        for j, (t, ul) in enumerate(lagrangian):
            errors[i, j] = l1_field_distance(snaps[round(t, 12)], ul)
        dissipation[i] = res.ledger.cumulative_dissipation[-1]
        ledgers[eps] = res.ledger
        norm_reports[eps] = res.norm_report
        if keep_fields:
            viscous_snapshots[eps] = res.snapshots

    rec = SweepRecord(
        config=cfg,
        epsilons=cfg.epsilon_ladder,
        snapshot_times=cfg.snapshot_times,
        errors=errors,
        sup_errors=errors.max(axis=1),
        dissipation=dissipation,
        lagrangian_snapshots=lagrangian if keep_fields else [],
        viscous_snapshots=viscous_snapshots,
        ledgers=ledgers,
        norm_reports=norm_reports,
        initial_data=u0,
        record=record,
    )
    record.finish(started)
    if persist:
        persist_sweep(rec)
    return rec


def persist_sweep(rec: SweepRecord) -> Path:
    """Write per-run JSON, the aggregate CSV, plot data, and field dumps."""
    outdir = Path(rec.config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    agg = outdir / "selection_sweep.csv"
    with agg.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "error_L1_sup", "dissipation"]
                        + [f"error_L1_t{t:g}" for t in rec.snapshot_times])
        for i, eps in enumerate(rec.epsilons):
            writer.writerow([repr(eps), repr(float(rec.sup_errors[i])),
                             repr(float(rec.dissipation[i]))]
                            + [repr(float(e)) for e in rec.errors[i]])
    plot = outdir / "selection_sweep_plot.csv"
    with plot.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "curve"])
        for i, eps in enumerate(rec.epsilons):
            writer.writerow([repr(eps), repr(float(rec.sup_errors[i])), "sup_error"])
            writer.writerow([repr(eps), repr(float(rec.dissipation[i])), "dissipation"])
    for i, eps in enumerate(rec.epsilons):
        run = {
            "epsilon": eps,
            "errors": {f"{t:g}": float(e)
                       for t, e in zip(rec.snapshot_times, rec.errors[i])},
            "sup_error": float(rec.sup_errors[i]),
            "dissipation": float(rec.dissipation[i]),
            "norm_report": rec.norm_reports[eps],
            "master_seed": rec.config.master_seed,
        }
        (outdir / f"run_eps{eps:.3e}.json").write_text(json.dumps(run, indent=2))
        rec.record.outputs.append(str(outdir / f"run_eps{eps:.3e}.json"))
    for t, f in rec.lagrangian_snapshots:
        save_field(f, outdir / f"lagrangian_t{t:g}")
    rec.record.outputs.extend([str(agg), str(plot)])
    rec.record.save(outdir / "experiment.json")
    return agg


# ---------------------------------------------------------- dissipation

def dissipation_sweep(cfg: SweepConfig, record: Optional[SweepRecord] = None):
    """Diffusive energy budget per ladder point; reuses a sweep record
    when given.  Returns (table, power-law fit or None, decreasing flag)."""
    if record is None:
        record = run_selection_sweep(cfg, keep_fields=False, persist=False)
    table = [(eps, float(d)) for eps, d in zip(record.epsilons, record.dissipation)]
    decreasing = all(table[i][1] > table[i + 1][1] for i in range(len(table) - 1))
    fit = None
    if len(table) >= 4 and all(d > NOISE_FLOOR for _, d in table):
        fit = fit_rate([e for e, _ in table], [d for _, d in table], "power")
    return table, fit, decreasing


# ------------------------------------------------------------- casimirs

CASIMIR_FUNCTIONS = {
    "abs": np.abs,
    "square": np.square,
    "min_square_1": lambda v: np.minimum(v**2, 1.0),
}


def casimir_check(record: SweepRecord, names: Sequence[str] = ("abs", "square", "min_square_1")):
    """Relative drift of integral functionals of the solution.

    Returns {name: {"lagrangian": {t: defect}, "viscous": {eps: {t: defect}}}}.
    """
    out = {}
    u0 = record.initial_data
    for name in names:
        if name not in CASIMIR_FUNCTIONS:
            raise ContractViolation(f"unknown functional {name!r}")
        fn = CASIMIR_FUNCTIONS[name]
        ref = float(fn(u0.values).mean())
        scale = abs(ref) if ref != 0.0 else 1.0
        lagr = {
            t: abs(float(fn(f.values).mean()) - ref) / scale
            for t, f in record.lagrangian_snapshots
        }
        visc = {}
        for eps, snaps in record.viscous_snapshots.items():
            visc[eps] = {
                t: abs(float(fn(f.values).mean()) - ref) / scale
                for t, f in snaps
            }
        out[name] = {"lagrangian": lagr, "viscous": visc}
    return out


# ------------------------------------------------- viscosity stability

def viscosity_stability_sweep(cfg: SweepConfig, epsilon1: float,
                              eps2_ladder: Optional[Sequence[float]] = None,
                              paired: bool = True):
    """Couple twin stochastic flows at diffusivities eps1 vs eps2 and
    measure both the mean flow gap and the L^1 gap of the diffusive
    solutions, for an eps2 ladder closing on eps1.

    Returns rows of (|eps1-eps2|, flow_metric, flow_stderr, solution_l1).
    """
    if epsilon1 <= 0.0:
        raise ContractViolation(f"epsilon1 must be > 0, got {epsilon1}")
    if eps2_ladder is None:
        eps2_ladder = cfg.eps2_ladder or tuple(
            epsilon1 * (1.0 + f) for f in (1.0, 0.3, 0.1, 0.03)
        )
    b, grid, u0 = _build(cfg)
    cloud = ParticleCloud.uniform_random(
        cfg.cloud_particles, cfg.dim, cfg.master_seed,
        exclusion_centers=b.singularities, exclusion_radius=1e-3,
    )
    t = cfg.t_final
    base = solve_ade(b, u0, epsilon1, t, grid, cfg.dt)
    rows = []
    for eps2 in eps2_ladder:
        if paired:
            m1, m2 = integrate_paired_flows(b, t, 0.0, cloud, epsilon1, eps2,
                                            cfg.master_seed, cfg.mc_samples, cfg.dt)
        else:
            m1 = integrate_stochastic_flow(b, t, 0.0, cloud,
                                           NoiseSpec(epsilon1, cfg.master_seed,
                                                     cfg.mc_samples), cfg.dt)
            m2 = integrate_stochastic_flow(b, t, 0.0, cloud,
                                           NoiseSpec(eps2, cfg.master_seed,
                                                     cfg.mc_samples), cfg.dt,
                                           seed_tag=1)
        from .torus import geodesic_distance

        dist = geodesic_distance(m1.realizations, m2.realizations)
        metric = float(dist.mean())
        stderr = float(dist.std(ddof=1) / math.sqrt(dist.size))
        other = solve_ade(b, u0, eps2, t, grid, cfg.dt)
        l1 = l1_field_distance(base.terminal, other.terminal)
        rows.append((abs(epsilon1 - eps2), metric, stderr, l1))
    return rows
