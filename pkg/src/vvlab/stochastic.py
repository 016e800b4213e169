"""Monte Carlo stochastic particle flows and their expectation solutions.

The backward stochastic flow runs from a terminal time t down to s <= t:
per step the drift advances through the same 4th-order one-step map used
by the deterministic integrator (so the zero-noise ensemble reproduces the
deterministic flow bit for bit at equal dt), followed by an additive
Gaussian increment with per-coordinate standard deviation sqrt(2 eps dt).
The Gaussian term makes the scheme Euler-Maruyama in the noise, weak order
one overall.

Reproducibility contract
------------------------
Every realization owns a counter-derived stream: Philox keyed by
(master_seed, realization_index), drawing its increments as a single
(steps, particles, dim) block.  Results are therefore bit-identical for
any chunking or worker partitioning by realization, and reductions use
numpy's fixed-order pairwise summation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BudgetError, ContractViolation, NumericalAbort
from .fields import VelocityField
from .flows import FlowMap, ParticleCloud, _step_sizes, advance_drift
from .torus import ScalarField, geodesic_distance, periodic_linear_interp, wrap

# cap on total Gaussian draws (M * particles * steps * dim) per ensemble
MAX_NOISE_DRAWS = 2**34
# target bytes of pre-generated noise per realization chunk
CHUNK_BYTES = 6e8


@dataclass(frozen=True)
class NoiseSpec:
    """Diffusivity, master seed, and ensemble size for a stochastic run."""

    epsilon: float
    master_seed: int
    samples: int

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ContractViolation(f"diffusivity must be >= 0, got {self.epsilon}")
        if self.samples < 1:
            raise ContractViolation(f"ensemble size must be >= 1, got {self.samples}")


@dataclass(frozen=True)
class EnsembleFlowMap:
    """Endpoints of M noise realizations started from a common cloud.

    ``realizations`` holds wrapped endpoints of shape (M, n, d);
    ``displacements`` the corresponding unwrapped cumulative increments.
    """

    t: float
    s: float
    base_cloud: ParticleCloud
    realizations: np.ndarray
    displacements: np.ndarray
    noise: NoiseSpec
    dt: float

    def __post_init__(self):
        m, n, d = self.realizations.shape
        if m != self.noise.samples or n != self.base_cloud.count:
            raise ContractViolation("ensemble shape does not match cloud/noise spec")


def _realization_generator(master_seed: int, realization: int, tag: int = 0):
    key = (int(master_seed), int(realization)) if tag == 0 else (
        int(master_seed), int(realization), int(tag))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def _auto_chunk(samples: int, steps: int, n: int, d: int) -> int:
    per_real = max(1, steps * n * d * 8)
    return int(min(samples, max(1, CHUNK_BYTES // per_real)))


def integrate_stochastic_flow(b: VelocityField, t: float, s: float,
                              cloud: ParticleCloud, noise: NoiseSpec, dt: float,
                              chunk_size: int | None = None,
                              seed_tag: int = 0) -> EnsembleFlowMap:
    """Run the backward ensemble from time t down to s.

    Parameters
    ----------
    b : drift field
    t, s : terminal and final times, 0 <= s <= t
    cloud : common starting positions (the terminal condition)
    noise : diffusivity / seed / ensemble size
    dt : outer step size; the last step is shortened
    chunk_size : realizations integrated per batch (results do not depend
        on it); None picks a memory-based default
    seed_tag : extra key component, used to decorrelate auxiliary ensembles
    """
    if not (0.0 <= s <= t):
        raise ContractViolation(f"need 0 <= s <= t, got s={s}, t={t}")
    if cloud.dim != b.dim:
        raise ContractViolation(f"cloud dim {cloud.dim} does not match field dim {b.dim}")
    sizes = _step_sizes(t, s, dt)
    m, n, d = noise.samples, cloud.count, cloud.dim
    draws = m * n * max(1, sizes.size) * d
    if draws > MAX_NOISE_DRAWS:
        raise BudgetError(
            f"ensemble would need {draws:.3g} Gaussian draws "
            f"(cap {MAX_NOISE_DRAWS:.3g}); reduce samples, particles, or steps"
        )
    if chunk_size is None:
        chunk_size = _auto_chunk(m, sizes.size, n, d)

    endpoints = np.empty((m, n, d))
    displacements = np.empty((m, n, d))
    amplitudes = np.sqrt(2.0 * noise.epsilon * sizes)
    for start in range(0, m, chunk_size):
        stop = min(m, start + chunk_size)
        k = stop - start
        if noise.epsilon > 0.0 and sizes.size:
            block = np.empty((k, sizes.size, n, d))
            for j in range(k):
                gen = _realization_generator(noise.master_seed, start + j, seed_tag)
                block[j] = gen.standard_normal((sizes.size, n, d))
        else:
            block = None
        x = np.broadcast_to(cloud.points, (k, n, d)).copy()
        disp = np.zeros((k, n, d))
        tau = t
        for i, h_abs in enumerate(sizes):
            inc = advance_drift(b, x, tau, -h_abs)
            if block is not None:
                inc = inc + amplitudes[i] * block[:, i]
            if not np.all(np.isfinite(inc)):
                raise NumericalAbort(
                    f"non-finite drift in realization block [{start},{stop}) "
                    f"at time {tau:.6g}"
                )
            x = wrap(x + inc)
            disp += inc
            tau -= h_abs
        endpoints[start:stop] = x
        displacements[start:stop] = disp
    return EnsembleFlowMap(t=t, s=s, base_cloud=cloud, realizations=endpoints,
                           displacements=displacements, noise=noise, dt=dt)


def integrate_paired_flows(b: VelocityField, t: float, s: float,
                           cloud: ParticleCloud, eps1: float, eps2: float,
                           master_seed: int, samples: int, dt: float,
                           chunk_size: int | None = None):
    """Twin ensembles driven by the SAME Brownian paths with amplitudes
    sqrt(2 eps1) and sqrt(2 eps2); the coupling isolates the diffusivity
    difference from the noise sampling."""
    if not (0.0 <= s <= t):
        raise ContractViolation(f"need 0 <= s <= t, got s={s}, t={t}")
    sizes = _step_sizes(t, s, dt)
    m, n, d = samples, cloud.count, cloud.dim
    if 2 * m * n * max(1, sizes.size) * d > MAX_NOISE_DRAWS:
        raise BudgetError("paired ensemble exceeds the noise draw budget")
    if chunk_size is None:
        chunk_size = _auto_chunk(m, sizes.size, n, d)

    out = []
    for eps in (eps1, eps2):
        out.append({
            "end": np.empty((m, n, d)),
            "disp": np.empty((m, n, d)),
            "amp": np.sqrt(2.0 * eps * sizes),
        })
    for start in range(0, m, chunk_size):
        stop = min(m, start + chunk_size)
        k = stop - start
        block = np.empty((k, sizes.size, n, d))
        for j in range(k):
            gen = _realization_generator(master_seed, start + j)
            block[j] = gen.standard_normal((sizes.size, n, d))
        states = [np.broadcast_to(cloud.points, (k, n, d)).copy() for _ in out]
        disps = [np.zeros((k, n, d)) for _ in out]
        tau = t
        for i, h_abs in enumerate(sizes):
            for which, rec in enumerate(out):
                inc = advance_drift(b, states[which], tau, -h_abs)
                inc = inc + rec["amp"][i] * block[:, i]
                if not np.all(np.isfinite(inc)):
                    raise NumericalAbort(
                        f"non-finite drift in paired block [{start},{stop})"
                    )
                states[which] = wrap(states[which] + inc)
                disps[which] += inc
            tau -= h_abs
        for which, rec in enumerate(out):
            rec["end"][start:stop] = states[which]
            rec["disp"][start:stop] = disps[which]

    maps = []
    for eps, rec in zip((eps1, eps2), out):
        spec = NoiseSpec(eps, master_seed, samples)
        maps.append(EnsembleFlowMap(t=t, s=s, base_cloud=cloud,
                                    realizations=rec["end"],
                                    displacements=rec["disp"],
                                    noise=spec, dt=dt))
    return maps[0], maps[1]


def feynman_kac_solution(b: VelocityField, v0: ScalarField, t: float,
                         eval_points: ParticleCloud, noise: NoiseSpec, dt: float,
                         chunk_size: int | None = None):
    """Expectation solution at time t: per evaluation point, the Monte
    Carlo mean of v0 at the backward stochastic endpoints.

    v0 is sampled by periodic bilinear interpolation.  Returns a list of
    (value, standard_error) pairs, one per evaluation point.
    """
    if noise.samples < 2:
        raise ContractViolation("need at least 2 realizations for a standard error")
    ens = integrate_stochastic_flow(b, t, 0.0, eval_points, noise, dt,
                                    chunk_size=chunk_size)
    samples = periodic_linear_interp(v0, ens.realizations)  # (M, n)
    means = samples.mean(axis=0)
    stderr = samples.std(axis=0, ddof=1) / math.sqrt(noise.samples)
    return [(float(mu), float(se)) for mu, se in zip(means, stderr)]


def _check_comparable(det: FlowMap, ens: EnsembleFlowMap):
    if det.particles_in.shape != ens.base_cloud.points.shape or not np.array_equal(
        det.particles_in, ens.base_cloud.points
    ):
        raise ContractViolation("deterministic and stochastic runs use different clouds")
    if (det.t, det.s) != (ens.t, ens.s):
        raise ContractViolation(
            f"time windows differ: ({det.t},{det.s}) vs ({ens.t},{ens.s})"
        )


def pathwise_distances(det: FlowMap, ens: EnsembleFlowMap) -> np.ndarray:
    """Geodesic endpoint discrepancies, shape (M, n)."""
    _check_comparable(det, ens)
    return geodesic_distance(ens.realizations, det.particles_out[None, :, :])


def flow_stability_metric(det: FlowMap, ens: EnsembleFlowMap,
                          with_stderr: bool = False):
    """Mean over particles and realizations of the geodesic gap between
    stochastic and deterministic endpoints."""
    dist = pathwise_distances(det, ens)
    mean = float(dist.mean())
    if with_stderr:
        se = float(dist.std(ddof=1) / math.sqrt(dist.size))
        return mean, se
    return mean


def log_functional_Q(det: FlowMap, ens: EnsembleFlowMap, delta: float) -> float:
    """Empirical mean of ln(1 + gap^2 / delta^2) over the ensemble."""
    if delta <= 0.0:
        raise ContractViolation(f"delta must be > 0, got {delta}")
    dist = pathwise_distances(det, ens)
    return float(np.log1p((dist / delta) ** 2).mean())


def exceedance_measure_A(det: FlowMap, ens: EnsembleFlowMap, delta: float) -> float:
    """Empirical probability that the endpoint gap exceeds sqrt(delta)."""
    if not (0.0 < delta < 1.0):
        raise ContractViolation(f"delta must lie in (0,1), got {delta}")
    dist = pathwise_distances(det, ens)
    return float((dist > math.sqrt(delta)).mean())


def ensemble_summary(det: FlowMap, ens: EnsembleFlowMap, deltas) -> dict:
    """JSON-ready summary of stability metrics over a delta grid."""
    metric, se = flow_stability_metric(det, ens, with_stderr=True)
    return {
        "epsilon": ens.noise.epsilon,
        "samples": ens.noise.samples,
        "dt": ens.dt,
        "t": ens.t,
        "s": ens.s,
        "stability_metric": metric,
        "stability_stderr": se,
        "Q": {repr(d): log_functional_Q(det, ens, d) for d in deltas},
        "A": {repr(d): exceedance_measure_A(det, ens, d) for d in deltas},
        "master_seed": ens.noise.master_seed,
    }
