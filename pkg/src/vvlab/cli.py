"""Command-line interface.

Structured logs go to stderr, numeric outputs to files in the configured
output directory.  Exit codes: 0 success, 1 precondition or configuration
failure, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentRecord, SweepConfig, parse_config, validate_config
from .errors import ConfigError, ContractViolation, NumericalAbort

log = logging.getLogger("vvlab")

ENV_PREFIX = "VVLAB_"


class _UsageError(ContractViolation):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _load_config(args) -> SweepConfig:
    raw = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
    for key, value in sorted(os.environ.items()):
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            try:
                raw[name] = json.loads(value)
            except json.JSONDecodeError as exc:
                raise ConfigError(name, f"environment override is not JSON: {exc}")
    if args.out:
        raw["output_dir"] = args.out
    if args.threads:
        raw["threads"] = args.threads
    if args.seed is not None:
        raw["master_seed"] = args.seed
    return validate_config(raw)


def _outdir(cfg: SweepConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: SweepConfig, out: Path):
    (out / "config.canonical.json").write_text(cfg.canonical_json())


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


# ------------------------------------------------------------- commands

def _cmd_field(cfg: SweepConfig, args) -> int:
    from .fields import FieldSpec, catalogue_names, divergence_check, make_field
    from .torus import GridSpec

    if args.action == "list":
        for name in catalogue_names():
            b = make_field(FieldSpec(name))
            print(f"{name:20s} dim={b.dim}  regularity={b.regularity}")
        return 0
    out = _outdir(cfg)
    b = make_field(FieldSpec(cfg.field["name"], cfg.field["params"]))
    grid = GridSpec(cfg.dim, cfg.grid_n)
    rel, tol, band = divergence_check(b, 0.0, grid)
    from .fields import sample_on_grid
    from .torus import save_field

    for comp in sample_on_grid(b, 0.0, grid):
        save_field(comp, out / comp.name.replace("[", "_").replace("]", ""))
    _write_json(out / "field_report.json", {
        "name": b.name,
        "regularity": str(b.regularity),
        "divergence_rel": rel,
        "divergence_band": band,
        "divergence_tolerance": tol,
        "passes": rel <= tol,
    })
    log.info("field %s: relative divergence %.3e on band %s", b.name, rel, band)
    return 0


def _cmd_flow(cfg: SweepConfig, args) -> int:
    from .fields import FieldSpec, make_field
    from .flows import (ParticleCloud, export_flowmap_csv, flowmap_metadata,
                        integrate_flow, measure_preservation_defect)

    out = _outdir(cfg)
    b = make_field(FieldSpec(cfg.field["name"], cfg.field["params"]))
    cloud = ParticleCloud.uniform_random(
        cfg.cloud_particles, cfg.dim, cfg.master_seed,
        exclusion_centers=b.singularities, exclusion_radius=1e-3)
    fm = integrate_flow(b, args.t0, args.t1, cloud, cfg.dt)
    export_flowmap_csv(fm, out / "flowmap.csv")
    meta = flowmap_metadata(fm, b, cloud)
    if cfg.cloud_particles >= 100 * cfg.bins_per_axis**cfg.dim:
        meta["measure_preservation_defect"] = measure_preservation_defect(
            fm, cfg.bins_per_axis)
    _write_json(out / "flowmap.json", meta)
    log.info("flow %s: %d particles, t=%g -> %g", b.name, cloud.count,
             args.t0, args.t1)
    return 0


def _cmd_solve(cfg: SweepConfig, args) -> int:
    from .fields import FieldSpec, make_field
    from .harness import make_initial_data
    from .spectral import energy_identity_residual, solve_ade
    from .torus import GridSpec, grid_norm, save_field

    out = _outdir(cfg)
    b = make_field(FieldSpec(cfg.field["name"], cfg.field["params"]))
    grid = GridSpec(cfg.dim, cfg.grid_n)
    v0 = make_initial_data(cfg.initial_data, grid, cfg.master_seed)
    eps = args.epsilon if args.epsilon is not None else cfg.epsilon_ladder[0]
    res = solve_ade(b, v0, eps, cfg.t_final, grid, cfg.dt,
                    snapshot_times=cfg.snapshot_times)
    for t, f in res.snapshots:
        save_field(f, out / f"snapshot_t{t:g}")
    res.ledger.export_csv(out / "energy_ledger.csv")
    _write_json(out / "solve_report.json", {
        "epsilon": eps,
        "norm_report": res.norm_report,
        "energy_identity_residual": energy_identity_residual(
            res.ledger, grid_norm(v0, 2.0) ** 2),
    })
    log.info("solve eps=%g done, %d snapshots", eps, len(res.snapshots))
    return 0


def _cmd_fk(cfg: SweepConfig, args) -> int:
    from .fields import FieldSpec, make_field
    from .flows import ParticleCloud
    from .harness import make_initial_data
    from .stochastic import NoiseSpec, feynman_kac_solution
    from .torus import GridSpec

    out = _outdir(cfg)
    b = make_field(FieldSpec(cfg.field["name"], cfg.field["params"]))
    grid = GridSpec(cfg.dim, cfg.grid_n)
    v0 = make_initial_data(cfg.initial_data, grid, cfg.master_seed)
    stride = max(1, grid.n // max(1, int(round(cfg.fk_probes ** (1.0 / cfg.dim)))))
    nodes = grid.nodes().reshape(grid.shape + (cfg.dim,))
    sel = nodes[(slice(None, None, stride),) * cfg.dim].reshape(-1, cfg.dim)
    probes = ParticleCloud(sel[: cfg.fk_probes], provenance=f"grid_stride({stride})")
    noise = NoiseSpec(args.epsilon if args.epsilon is not None
                      else cfg.epsilon_ladder[0], cfg.master_seed, cfg.mc_samples)
    t = args.t if args.t is not None else cfg.t_final
    values = feynman_kac_solution(b, v0, t, probes, noise, cfg.dt)
    _write_json(out / "feynman_kac.json", {
        "epsilon": noise.epsilon,
        "t": t,
        "samples": noise.samples,
        "points": [list(map(float, p)) for p in probes.points],
        "values": [v for v, _ in values],
        "std_errors": [s for _, s in values],
    })
    log.info("feynman-kac at %d probes, M=%d", probes.count, noise.samples)
    return 0


def _cmd_converge(cfg: SweepConfig, args) -> int:
    from .harness import fit_rate, run_selection_sweep

    out = _outdir(cfg)
    rec = run_selection_sweep(cfg)
    fits = {}
    if len(rec.epsilons) >= 4 and not np.any(rec.sup_errors < 1e-10):
        for model in ("inv_sqrt_log", "power"):
            fit = fit_rate(rec.epsilons, rec.sup_errors, model)
            fits[model] = {"constants": fit.constants, "residual": fit.residual}
        env = fit_rate(rec.epsilons, rec.sup_errors, "inv_sqrt_log", envelope=True)
        fits["inv_sqrt_log_envelope"] = {
            "constants": env.constants,
            "dominates": env.dominates,
        }
    _write_json(out / "rate_fits.json", fits)
    log.info("selection sweep over %d ladder points done", len(rec.epsilons))
    return 0


def _cmd_dissipation(cfg: SweepConfig, args) -> int:
    from .harness import dissipation_sweep

    out = _outdir(cfg)
    table, fit, decreasing = dissipation_sweep(cfg)
    payload = {
        "table": [{"epsilon": e, "dissipation": d} for e, d in table],
        "decreasing": decreasing,
    }
    if fit is not None and not fit.inconclusive:
        payload["power_fit"] = fit.constants
    _write_json(out / "dissipation.json", payload)
    with open(out / "dissipation.csv", "w") as fh:
        fh.write("epsilon,dissipation\n")
        for e, d in table:
            fh.write(f"{e!r},{d!r}\n")
    log.info("dissipation sweep done (decreasing=%s)", decreasing)
    return 0


def _cmd_stability(cfg: SweepConfig, args) -> int:
    from .harness import viscosity_stability_sweep

    out = _outdir(cfg)
    rows = viscosity_stability_sweep(cfg, args.eps1, paired=not args.independent)
    _write_json(out / "viscosity_stability.json", {
        "eps1": args.eps1,
        "paired": not args.independent,
        "rows": [{"gap": g, "flow_metric": m, "flow_stderr": s, "solution_l1": l}
                 for g, m, s, l in rows],
    })
    log.info("viscosity stability sweep done (%d points)", len(rows))
    return 0


def _cmd_casimir(cfg: SweepConfig, args) -> int:
    from .harness import casimir_check, run_selection_sweep

    out = _outdir(cfg)
    rec = run_selection_sweep(cfg)
    table = casimir_check(rec)
    payload = {
        name: {
            "lagrangian": {f"{t:g}": d for t, d in entry["lagrangian"].items()},
            "viscous": {f"{eps:g}": {f"{t:g}": d for t, d in per_t.items()}
                        for eps, per_t in entry["viscous"].items()},
        }
        for name, entry in table.items()
    }
    _write_json(out / "casimir.json", payload)
    log.info("casimir check done")
    return 0


def _cmd_duality(cfg: SweepConfig, args) -> int:
    from .duality import duhamel_defect, make_chi, pairing_identity
    from .fields import FieldSpec, make_field
    from .flows import ParticleCloud
    from .harness import make_initial_data
    from .torus import GridSpec

    out = _outdir(cfg)
    b = make_field(FieldSpec(cfg.field["name"], cfg.field["params"]))
    grid = GridSpec(cfg.dim, cfg.grid_n)
    u0 = make_initial_data(cfg.initial_data, grid, cfg.master_seed)
    chi = make_chi(cfg.chi, cfg.t_final)
    rep = pairing_identity(b, u0, chi, grid, cfg.dt, cfg.epsilon_proxy,
                           cfg.t_final, chi_name=cfg.chi["name"])
    cloud = ParticleCloud.uniform_random(
        min(cfg.cloud_particles, 2048), cfg.dim, cfg.master_seed,
        exclusion_centers=b.singularities, exclusion_radius=1e-3)
    duh = duhamel_defect(b, chi, cloud, cfg.dt, cfg.epsilon_proxy, grid,
                         cfg.t_final)
    _write_json(out / "duality.json", {
        "chi": cfg.chi,
        "pairing_lhs": rep.pairing_lhs,
        "pairing_rhs": rep.pairing_rhs,
        "residual": rep.residual,
        "duhamel_defects": {f"{t:g}": d for t, d in duh.defects.items()},
        "epsilon_proxy": cfg.epsilon_proxy,
    })
    log.info("duality residual %.3e", rep.residual)
    return 0


def _cmd_analysis(cfg: SweepConfig, args) -> int:
    from .analysis import (default_radius_ladder, equi_decompose,
                           interpolation_bound_check, maximal_function,
                           vallee_poussin_diagnostic, weak_11_bound_check,
                           weak_norm)
    from .torus import GridSpec, ScalarField, grid_norm

    if args.action != "selftest":
        raise _UsageError("analysis supports the 'selftest' action")
    out = _outdir(cfg)
    rng = np.random.default_rng(cfg.master_seed)
    grid = GridSpec(2, 32)
    checks = {"weak_le_strong": 0, "interpolation": 0, "decompose": 0,
              "weak11": 0, "maximal_monotone": 0}
    trials = 1000
    ladder = default_radius_ladder(grid)
    for i in range(trials):
        f = ScalarField(grid, rng.standard_normal(grid.shape))
        for p in (1.0, 2.0):
            if weak_norm(f, p).value <= grid_norm(f, p) + 1e-12:
                checks["weak_le_strong"] += 1
        nonneg = ScalarField(grid, np.abs(f.values))
        lhs, rhs, ok = interpolation_bound_check(nonneg, 2.0)
        checks["interpolation"] += bool(ok)
        dec = equi_decompose(f, 0.1, 2.0)
        checks["decompose"] += bool(
            np.array_equal(dec.g1.values + dec.g2.values, f.values))
        if i < 100:
            _, _, ok11 = weak_11_bound_check(f, ladder)
            checks["weak11"] += bool(ok11)
            mf = maximal_function(nonneg, ladder)
            mg = maximal_function(
                ScalarField(grid, nonneg.values + 1.0), ladder)
            checks["maximal_monotone"] += bool(
                np.all(mf.values <= mg.values + 1e-12))
    family = [ScalarField(grid, rng.uniform(-1, 1, grid.shape)) for _ in range(8)]
    cert = vallee_poussin_diagnostic(family)
    summary = {
        "trials": trials,
        "weak_le_strong": checks["weak_le_strong"] == 2 * trials,
        "interpolation": checks["interpolation"] == trials,
        "decompose_bitwise": checks["decompose"] == trials,
        "weak11": checks["weak11"] == 100,
        "maximal_monotone": checks["maximal_monotone"] == 100,
        "superlinear_sup_integral": cert.sup_integral,
    }
    _write_json(out / "analysis_selftest.json", summary)
    failed = [k for k, v in summary.items()
              if isinstance(v, bool) and not v]
    for key, value in summary.items():
        log.info("selftest %s: %s", key, value)
    if failed:
        log.error("selftest failures: %s", failed)
        return 2
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="vvlab", description=__doc__)
    parser.add_argument("--config", help="JSON config path")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--threads", type=int, help="worker pool size")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_field = sub.add_parser("field", help="catalogue listing / sampling")
    p_field.add_argument("action", choices=["list", "sample"])

    p_flow = sub.add_parser("flow", help="deterministic particle flow")
    p_flow.add_argument("--t0", type=float, default=0.0)
    p_flow.add_argument("--t1", type=float, default=1.0)

    p_solve = sub.add_parser("solve", help="single diffusive solve")
    p_solve.add_argument("--epsilon", type=float)

    p_fk = sub.add_parser("fk", help="Monte Carlo expectation solution")
    p_fk.add_argument("--epsilon", type=float)
    p_fk.add_argument("--t", type=float)

    sub.add_parser("converge", help="diffusivity ladder vs transported solution")
    sub.add_parser("dissipation", help="diffusive energy budget sweep")

    p_stab = sub.add_parser("stability", help="diffusivity stability coupling")
    p_stab.add_argument("--eps1", type=float, required=True)
    p_stab.add_argument("--independent", action="store_true",
                        help="independent noise instead of shared paths")

    sub.add_parser("casimir", help="conserved-functional defects")
    sub.add_parser("duality", help="pairing and pathwise duality checks")

    p_analysis = sub.add_parser("analysis", help="diagnostics property suite")
    p_analysis.add_argument("action", choices=["selftest"])

    return parser


_COMMANDS = {
    "field": _cmd_field,
    "flow": _cmd_flow,
    "solve": _cmd_solve,
    "fk": _cmd_fk,
    "converge": _cmd_converge,
    "dissipation": _cmd_dissipation,
    "stability": _cmd_stability,
    "casimir": _cmd_casimir,
    "duality": _cmd_duality,
    "analysis": _cmd_analysis,
}


def run_command(argv) -> int:
    """Entry point returning the exit status (0 ok, 1 precondition, 2 numeric)."""
    logging.basicConfig(
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
        cfg = _load_config(args)
        started = time.monotonic()
        out = _outdir(cfg)
        _echo_config(cfg, out)
        record = ExperimentRecord.start(cfg)
        status = _COMMANDS[args.command](cfg, args)
        record.finish(started)
        record.outputs = sorted(str(p) for p in out.iterdir())
        record.save(out / "experiment.json")
        return status
    except (_UsageError, ConfigError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
