"""Configuration schema, validation, and reproducibility metadata.

Configs are JSON; validation resolves defaults and echoes a canonical
form that re-parses to the identical config.  Unknown keys and
out-of-range values are rejected with path-qualified messages.
"""

from __future__ import annotations

import json
import platform
import secrets
import time
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import ConfigError

_DEFAULT_SNAPSHOT_FRACTIONS = (0.25, 0.5, 1.0)

_KNOWN_KEYS = {
    "field", "initial_data", "epsilon_ladder", "grid_n", "dim", "t_final",
    "dt", "snapshot_times", "mc_samples", "cloud_particles", "master_seed",
    "threads", "output_dir", "v0_mollify_scale", "epsilon_proxy", "chi",
    "eps2_ladder", "fk_probes", "bins_per_axis",
}

_INITIAL_DATA_NAMES = {"fourier_mode", "smoothed_indicator", "H1_random"}
_CHI_NAMES = {"windowed_mode", "steady_mode", "time_only"}


@dataclass(frozen=True)
class SweepConfig:
    field: dict
    initial_data: dict
    epsilon_ladder: tuple
    grid_n: int
    dim: int
    t_final: float
    dt: float
    snapshot_times: tuple
    mc_samples: int
    cloud_particles: int
    master_seed: int
    threads: int
    output_dir: str
    v0_mollify_scale: float | None
    epsilon_proxy: float
    chi: dict
    eps2_ladder: tuple | None
    fk_probes: int
    bins_per_axis: int

    def canonical_dict(self) -> dict:
        out = asdict(self)
        out["epsilon_ladder"] = list(self.epsilon_ladder)
        out["snapshot_times"] = list(self.snapshot_times)
        out["eps2_ladder"] = None if self.eps2_ladder is None else list(self.eps2_ladder)
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.canonical_dict(), indent=2, sort_keys=True)


def _require(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def _check_named(entry, path, known=None):
    _require(isinstance(entry, dict), path, "must be an object with 'name'/'params'")
    extra = set(entry) - {"name", "params"}
    _require(not extra, path, f"unknown keys: {sorted(extra)}")
    _require(isinstance(entry.get("name"), str), f"{path}.name", "must be a string")
    params = entry.get("params", {})
    _require(isinstance(params, dict), f"{path}.params", "must be an object")
    if known is not None:
        _require(entry["name"] in known, f"{path}.name",
                 f"unknown name {entry['name']!r}; choose from {sorted(known)}")
    return {"name": entry["name"], "params": dict(params)}


def parse_config(text: str) -> SweepConfig:
    """Parse and validate a JSON config, resolving all defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
    return validate_config(raw)


def validate_config(raw: dict) -> SweepConfig:
    _require(isinstance(raw, dict), "<root>", "config must be a JSON object")
    unknown = set(raw) - _KNOWN_KEYS
    _require(not unknown, "<root>", f"unknown keys: {sorted(unknown)}")

    from .fields import catalogue_names

    field_spec = _check_named(raw.get("field", {"name": "cellular"}), "field",
                              known=set(catalogue_names()))
    init_spec = _check_named(raw.get("initial_data", {"name": "fourier_mode"}),
                             "initial_data", known=_INITIAL_DATA_NAMES)
    chi_spec = _check_named(raw.get("chi", {"name": "windowed_mode"}), "chi",
                            known=_CHI_NAMES)

    ladder = raw.get("epsilon_ladder", [1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
    _require(isinstance(ladder, (list, tuple)) and len(ladder) >= 1,
             "epsilon_ladder", "must be a nonempty list")
    for i, eps in enumerate(ladder):
        _require(isinstance(eps, (int, float)) and eps > 0,
                 f"epsilon_ladder[{i}]", f"must be > 0, got {eps!r}")
    for i in range(len(ladder) - 1):
        _require(ladder[i] > ladder[i + 1], f"epsilon_ladder[{i + 1}]",
                 "ladder must be strictly decreasing")

    grid_n = raw.get("grid_n", 128)
    _require(isinstance(grid_n, int) and grid_n >= 8 and grid_n % 2 == 0,
             "grid_n", f"must be an even integer >= 8, got {grid_n!r}")
    dim = raw.get("dim", 2)
    _require(dim in (1, 2, 3), "dim", f"must be 1, 2, or 3, got {dim!r}")
    t_final = raw.get("t_final", 1.0)
    _require(isinstance(t_final, (int, float)) and t_final > 0,
             "t_final", f"must be > 0, got {t_final!r}")
    dt = raw.get("dt", 1e-3)
    _require(isinstance(dt, (int, float)) and 0 < dt <= t_final,
             "dt", f"must lie in (0, t_final], got {dt!r}")

    snaps = raw.get("snapshot_times")
    if snaps is None:
        snaps = [f * t_final for f in _DEFAULT_SNAPSHOT_FRACTIONS]
    _require(isinstance(snaps, (list, tuple)) and snaps, "snapshot_times",
             "must be a nonempty list")
    for i, t in enumerate(snaps):
        _require(isinstance(t, (int, float)) and 0 < t <= t_final,
                 f"snapshot_times[{i}]", f"must lie in (0, t_final], got {t!r}")
    snaps = sorted(float(t) for t in snaps)

    mc_samples = raw.get("mc_samples", 1000)
    _require(isinstance(mc_samples, int) and mc_samples >= 2,
             "mc_samples", f"must be an integer >= 2, got {mc_samples!r}")
    cloud_particles = raw.get("cloud_particles", 1024)
    _require(isinstance(cloud_particles, int) and cloud_particles >= 1,
             "cloud_particles", f"must be an integer >= 1, got {cloud_particles!r}")

    master_seed = raw.get("master_seed")
    if master_seed is None:
        master_seed = secrets.randbits(63)
    _require(isinstance(master_seed, int) and master_seed >= 0,
             "master_seed", f"must be a nonnegative integer, got {master_seed!r}")

    threads = raw.get("threads", 1)
    _require(isinstance(threads, int) and threads >= 1,
             "threads", f"must be an integer >= 1, got {threads!r}")

    output_dir = raw.get("output_dir", "out")
    _require(isinstance(output_dir, str) and output_dir,
             "output_dir", "must be a nonempty string")

    mollify = raw.get("v0_mollify_scale")
    if mollify is not None:
        _require(isinstance(mollify, (int, float)) and mollify >= 0,
                 "v0_mollify_scale", f"must be >= 0, got {mollify!r}")
        mollify = float(mollify)

    eps_proxy = raw.get("epsilon_proxy", 1e-5)
    _require(isinstance(eps_proxy, (int, float)) and eps_proxy > 0,
             "epsilon_proxy", f"must be > 0, got {eps_proxy!r}")

    eps2 = raw.get("eps2_ladder")
    if eps2 is not None:
        _require(isinstance(eps2, (list, tuple)) and eps2, "eps2_ladder",
                 "must be a nonempty list")
        for i, eps in enumerate(eps2):
            _require(isinstance(eps, (int, float)) and eps > 0,
                     f"eps2_ladder[{i}]", f"must be > 0, got {eps!r}")
        eps2 = tuple(float(e) for e in eps2)

    fk_probes = raw.get("fk_probes", 16)
    _require(isinstance(fk_probes, int) and fk_probes >= 1,
             "fk_probes", f"must be an integer >= 1, got {fk_probes!r}")
    bins = raw.get("bins_per_axis", 16)
    _require(isinstance(bins, int) and bins >= 2,
             "bins_per_axis", f"must be an integer >= 2, got {bins!r}")

    return SweepConfig(
        field=field_spec,
        initial_data=init_spec,
        epsilon_ladder=tuple(float(e) for e in ladder),
        grid_n=grid_n,
        dim=dim,
        t_final=float(t_final),
        dt=float(dt),
        snapshot_times=tuple(snaps),
        mc_samples=mc_samples,
        cloud_particles=cloud_particles,
        master_seed=master_seed,
        threads=threads,
        output_dir=output_dir,
        v0_mollify_scale=mollify,
        epsilon_proxy=float(eps_proxy),
        chi=chi_spec,
        eps2_ladder=eps2,
        fk_probes=fk_probes,
        bins_per_axis=bins,
    )


@dataclass
class ExperimentRecord:
    """Reproducibility envelope persisted next to every command's outputs."""

    config: dict
    code_version: str
    outputs: list = dc_field(default_factory=list)
    wall_clock_s: float = 0.0
    master_seed: int | None = None
    environment: dict = dc_field(default_factory=dict)

    @staticmethod
    def start(cfg: SweepConfig) -> "ExperimentRecord":
        from . import __version__

        return ExperimentRecord(
            config=cfg.canonical_dict(),
            code_version=__version__,
            master_seed=cfg.master_seed,
            environment={
                "python": platform.python_version(),
                "numpy": np.__version__,
                "platform": platform.platform(),
            },
        )

    def finish(self, started_at: float):
        self.wall_clock_s = time.monotonic() - started_at

    def save(self, path):
        Path(path).write_text(json.dumps({
            "config": self.config,
            "code_version": self.code_version,
            "outputs": [str(p) for p in self.outputs],
            "wall_clock_s": self.wall_clock_s,
            "master_seed": self.master_seed,
            "environment": self.environment,
        }, indent=2, sort_keys=True))
