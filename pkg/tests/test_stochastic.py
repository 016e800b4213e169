import math

import numpy as np
import pytest

from vvlab.errors import BudgetError, ContractViolation
from vvlab.fields import FieldSpec, make_field
from vvlab.flows import ParticleCloud, integrate_flow
from vvlab.stochastic import (
    EnsembleFlowMap,
    NoiseSpec,
    exceedance_measure_A,
    feynman_kac_solution,
    flow_stability_metric,
    integrate_paired_flows,
    integrate_stochastic_flow,
    log_functional_Q,
)
from vvlab.torus import GridSpec, ScalarField, geodesic_distance


def _cloud(n=64, seed=0):
    return ParticleCloud.uniform_random(n, 2, seed)


def test_zero_noise_reduces_to_deterministic_flow():
    b = make_field(FieldSpec("cellular"))
    cloud = _cloud(128, seed=1)
    det = integrate_flow(b, 1.0, 0.0, cloud, 1e-2)
    ens = integrate_stochastic_flow(b, 1.0, 0.0, cloud, NoiseSpec(0.0, 7, 3), 1e-2)
    for m in range(3):
        assert geodesic_distance(ens.realizations[m], det.particles_out).max() <= 1e-12


def test_brownian_variance_oracle():
    """Pure noise: unwrapped displacement variance per coordinate is 2 eps t."""
    b = make_field(FieldSpec("zero"))
    cloud = ParticleCloud(np.full((4, 2), 0.5), provenance="manual")
    eps, t, m = 1e-3, 1.0, 10_000
    ens = integrate_stochastic_flow(b, t, 0.0, cloud, NoiseSpec(eps, 11, m), 1e-2)
    disp = ens.displacements.reshape(-1, 2)
    target = 2 * eps * t
    for axis in range(2):
        var = disp[:, axis].var(ddof=1)
        # variance of the sample variance of Gaussians: 2 sigma^4 / (n-1)
        se = math.sqrt(2.0 / (disp.shape[0] - 1)) * target
        assert abs(var - target) <= 3 * se
        mean_se = math.sqrt(target / disp.shape[0])
        assert abs(disp[:, axis].mean()) <= 3 * mean_se


def test_reproducible_across_chunk_sizes():
    b = make_field(FieldSpec("cellular"))
    cloud = _cloud(16, seed=2)
    spec = NoiseSpec(1e-4, 1234, 40)
    a = integrate_stochastic_flow(b, 0.5, 0.0, cloud, spec, 1e-2, chunk_size=None)
    c = integrate_stochastic_flow(b, 0.5, 0.0, cloud, spec, 1e-2, chunk_size=7)
    d = integrate_stochastic_flow(b, 0.5, 0.0, cloud, spec, 1e-2, chunk_size=1)
    assert np.array_equal(a.realizations, c.realizations)
    assert np.array_equal(a.realizations, d.realizations)
    assert np.array_equal(a.displacements, c.displacements)


def test_budget_guard():
    b = make_field(FieldSpec("zero"))
    cloud = _cloud(10_000, seed=3)
    with pytest.raises(BudgetError):
        integrate_stochastic_flow(b, 1.0, 0.0, cloud, NoiseSpec(1e-3, 1, 10_000), 1e-4)


def test_time_window_contract():
    b = make_field(FieldSpec("zero"))
    with pytest.raises(ContractViolation):
        integrate_stochastic_flow(b, 0.5, 0.7, _cloud(), NoiseSpec(1e-3, 1, 2), 1e-2)


# ------------------------------------------------------------ Feynman-Kac

def test_fk_zero_noise_matches_composition():
    grid = GridSpec(2, 64)
    xg, _ = grid.meshgrid()
    v0 = ScalarField(grid, np.sin(2 * np.pi * xg))
    b = make_field(FieldSpec("cellular"))
    probes = _cloud(16, seed=4)
    vals = feynman_kac_solution(b, v0, 0.5, probes, NoiseSpec(0.0, 5, 2), 1e-2)
    from vvlab.torus import periodic_linear_interp

    det = integrate_flow(b, 0.5, 0.0, probes, 1e-2)
    expected = periodic_linear_interp(v0, det.particles_out)
    for (mu, se), ref in zip(vals, expected):
        assert abs(mu - ref) <= 1e-12
        assert se == 0.0


def test_fk_heat_mode_oracle():
    """No drift: the mean of a Fourier mode under Gaussian spreading decays
    by exp(-4 pi^2 eps t)."""
    grid = GridSpec(2, 128)
    xg, _ = grid.meshgrid()
    v0 = ScalarField(grid, np.sin(2 * np.pi * xg))
    b = make_field(FieldSpec("zero"))
    probes = ParticleCloud(np.array([[i / 8 + 1 / 16, 0.5] for i in range(8)]),
                           provenance="manual")
    eps, t, m = 1e-2, 0.5, 20_000
    vals = feynman_kac_solution(b, v0, t, probes, NoiseSpec(eps, 21, m), 1e-2)
    decay = math.exp(-4 * math.pi**2 * eps * t)
    for (mu, se), x in zip(vals, probes.points[:, 0]):
        target = decay * math.sin(2 * math.pi * x)
        assert abs(mu - target) <= 4 * se + 5e-4  # bilinear sampling floor


def test_fk_constant_data_exact():
    grid = GridSpec(2, 16)
    v0 = ScalarField(grid, np.full(grid.shape, 3.25))
    b = make_field(FieldSpec("cellular"))
    vals = feynman_kac_solution(b, v0, 0.3, _cloud(8, seed=6),
                                NoiseSpec(1e-3, 3, 50), 1e-2)
    for mu, se in vals:
        # no sampling variance: deviations are bilinear-weight rounding only
        assert mu == pytest.approx(3.25, abs=1e-14)
        assert se <= 1e-15


def test_fk_needs_two_realizations():
    grid = GridSpec(2, 16)
    v0 = ScalarField(grid, np.zeros(grid.shape))
    with pytest.raises(ContractViolation):
        feynman_kac_solution(make_field(FieldSpec("zero")), v0, 0.5, _cloud(),
                             NoiseSpec(1e-3, 1, 1), 1e-2)


def test_fk_maximum_principle_of_the_mean():
    grid = GridSpec(2, 64)
    xg, yg = grid.meshgrid()
    v0 = ScalarField(grid, np.sin(2 * np.pi * xg) * np.cos(4 * np.pi * yg))
    b = make_field(FieldSpec("cellular"))
    vals = feynman_kac_solution(b, v0, 0.7, _cloud(32, seed=8),
                                NoiseSpec(1e-3, 9, 200), 1e-2)
    lo, hi = float(v0.values.min()), float(v0.values.max())
    for mu, _ in vals:
        assert lo <= mu <= hi


# ------------------------------------------------------- stability metrics

def test_stability_metric_zero_noise():
    b = make_field(FieldSpec("cellular"))
    cloud = _cloud(64, seed=10)
    det = integrate_flow(b, 0.5, 0.0, cloud, 1e-2)
    ens = integrate_stochastic_flow(b, 0.5, 0.0, cloud, NoiseSpec(0.0, 2, 4), 1e-2)
    assert flow_stability_metric(det, ens) <= 1e-12


def test_stability_metric_gaussian_oracle():
    """No drift, t = 1: the gap is |sqrt(2 eps) W_1|, whose mean for a 2D
    Gaussian is sqrt(pi eps); cross-checked by direct sampling."""
    b = make_field(FieldSpec("zero"))
    cloud = ParticleCloud(np.full((4, 2), 0.25), provenance="manual")
    eps, m = 1e-3, 10_000
    det = integrate_flow(b, 1.0, 0.0, cloud, 1e-2)
    ens = integrate_stochastic_flow(b, 1.0, 0.0, cloud, NoiseSpec(eps, 31, m), 1e-2)
    metric, se = flow_stability_metric(det, ens, with_stderr=True)

    closed_form = math.sqrt(math.pi * eps)
    rng = np.random.default_rng(99)
    direct = np.linalg.norm(rng.normal(0.0, math.sqrt(2 * eps), size=(200_000, 2)), axis=1)
    oracle = direct.mean()
    oracle_se = direct.std(ddof=1) / math.sqrt(direct.size)
    assert abs(oracle - closed_form) <= 4 * oracle_se
    assert abs(metric - closed_form) <= 3 * se


def test_stability_metric_monotone_in_eps():
    b = make_field(FieldSpec("cellular"))
    cloud = _cloud(128, seed=12)
    det = integrate_flow(b, 0.5, 0.0, cloud, 1e-2)
    vals = {}
    for eps in (1e-5, 1e-3):
        ens = integrate_stochastic_flow(b, 0.5, 0.0, cloud, NoiseSpec(eps, 13, 1000), 1e-2)
        vals[eps] = flow_stability_metric(det, ens)
    assert vals[1e-3] > vals[1e-5]


def test_stability_monotone_every_catalogue_field():
    """Small-noise consistency across the whole catalogue: the stability
    metric decreases along eps in {1e-3, 1e-4, 1e-5} within 2 SE."""
    from vvlab.fields import catalogue_names

    for name in catalogue_names():
        b = make_field(FieldSpec(name))
        cloud = ParticleCloud.uniform_random(
            100, 2, 27, exclusion_centers=b.singularities, exclusion_radius=1e-3
        ) if b.dim == 2 else _cloud(100, seed=27)
        det = integrate_flow(b, 0.25, 0.0, cloud, 5e-3)
        results = []
        for eps in (1e-3, 1e-4, 1e-5):
            ens = integrate_stochastic_flow(b, 0.25, 0.0, cloud,
                                            NoiseSpec(eps, 29, 100), 5e-3)
            results.append(flow_stability_metric(det, ens, with_stderr=True))
        for (hi, hi_se), (lo, lo_se) in zip(results[:-1], results[1:]):
            assert hi - lo > -2.0 * math.hypot(hi_se, lo_se), name


def test_stability_metric_cloud_mismatch():
    b = make_field(FieldSpec("zero"))
    det = integrate_flow(b, 0.5, 0.0, _cloud(16, seed=1), 1e-2)
    ens = integrate_stochastic_flow(b, 0.5, 0.0, _cloud(16, seed=2),
                                    NoiseSpec(1e-3, 1, 2), 1e-2)
    with pytest.raises(ContractViolation):
        flow_stability_metric(det, ens)


# ----------------------------------------------- Q functional / exceedance

def _manual_ensemble(det, offsets, eps=1e-3):
    """Build an ensemble whose endpoints sit at prescribed offsets from the
    deterministic endpoints."""
    ends = det.particles_out[None, :, :] + offsets
    from vvlab.torus import wrap

    cloud = ParticleCloud(det.particles_in, provenance="manual")
    return EnsembleFlowMap(
        t=det.t, s=det.s, base_cloud=cloud, realizations=wrap(ends),
        displacements=np.asarray(offsets) * np.ones_like(ends),
        noise=NoiseSpec(eps, 0, ends.shape[0]), dt=1e-2,
    )


def test_log_functional_trivials():
    b = make_field(FieldSpec("zero"))
    cloud = _cloud(32, seed=14)
    det = integrate_flow(b, 0.5, 0.0, cloud, 1e-2)
    same = _manual_ensemble(det, np.zeros((3, cloud.count, 2)))
    assert log_functional_Q(det, same, 0.05) == 0.0

    delta = 0.07
    shifted = _manual_ensemble(det, np.full((3, cloud.count, 2), delta / math.sqrt(2)))
    assert abs(log_functional_Q(det, shifted, delta) - math.log(2.0)) < 1e-12


def test_log_functional_rejects_bad_delta():
    b = make_field(FieldSpec("zero"))
    det = integrate_flow(b, 0.5, 0.0, _cloud(8, seed=15), 1e-2)
    ens = _manual_ensemble(det, np.zeros((2, 8, 2)))
    with pytest.raises(ContractViolation):
        log_functional_Q(det, ens, 0.0)


def test_exceedance_trivials_markov_and_split():
    b = make_field(FieldSpec("cellular"))
    cloud = _cloud(64, seed=16)
    det = integrate_flow(b, 0.5, 0.0, cloud, 1e-2)
    ens0 = integrate_stochastic_flow(b, 0.5, 0.0, cloud, NoiseSpec(0.0, 3, 2), 1e-2)
    assert exceedance_measure_A(det, ens0, 0.01) == 0.0

    ens = integrate_stochastic_flow(b, 0.5, 0.0, cloud, NoiseSpec(1e-3, 17, 200), 1e-2)
    metric = flow_stability_metric(det, ens)
    for delta in (1e-4, 1e-3, 1e-2, 1e-1):
        a = exceedance_measure_A(det, ens, delta)
        q = log_functional_Q(det, ens, delta)
        # Chebyshev on the log functional, exact per run
        assert a <= q / math.log1p(1.0 / delta) + 1e-15
        # endpoint-splitting inequality, exact per run on the 2-torus
        assert metric <= math.sqrt(delta) + a + 1e-15


def test_exceedance_gaussian_tail_oracle():
    b = make_field(FieldSpec("zero"))
    cloud = ParticleCloud(np.full((8, 2), 0.5), provenance="manual")
    eps, t, m = 1e-4, 1.0, 10_000
    det = integrate_flow(b, t, 0.0, cloud, 1e-2)
    ens = integrate_stochastic_flow(b, t, 0.0, cloud, NoiseSpec(eps, 19, m), 1e-2)
    # |gap|^2 / (2 eps t) is chi-squared with 2 dof: P(gap > r) = exp(-r^2/(4 eps t))
    for delta in (0.01, 1e-4):
        exact = math.exp(-delta / (4 * eps * t))
        a = exceedance_measure_A(det, ens, delta)
        se = math.sqrt(max(exact * (1 - exact), 1e-12) / (m * cloud.count))
        assert abs(a - exact) <= 4 * se + 1e-12


def test_exceedance_rejects_bad_delta():
    b = make_field(FieldSpec("zero"))
    det = integrate_flow(b, 0.5, 0.0, _cloud(8, seed=20), 1e-2)
    ens = _manual_ensemble(det, np.zeros((2, 8, 2)))
    for delta in (0.0, 1.0, 2.0):
        with pytest.raises(ContractViolation):
            exceedance_measure_A(det, ens, delta)


def test_log_functional_bounded_over_eps_sweep():
    """Q at delta = sqrt(eps) stays uniformly bounded relative to the
    drift's gradient budget across two decades of diffusivity."""
    from vvlab.fields import sobolev_seminorm

    b = make_field(FieldSpec("cellular"))
    cloud = _cloud(128, seed=22)
    t = 0.5
    det = integrate_flow(b, t, 0.0, cloud, 1e-2)
    grad_budget = t * sobolev_seminorm(b, 0.0, 2.0, GridSpec(2, 64))
    for eps in (1e-5, 1e-4, 1e-3):
        ens = integrate_stochastic_flow(b, t, 0.0, cloud, NoiseSpec(eps, 23, 400), 1e-2)
        q = log_functional_Q(det, ens, math.sqrt(eps))
        assert q <= 20.0 * (1.0 + grad_budget)


# ------------------------------------------------------------ paired noise

def test_paired_flows_equal_eps_coincide():
    b = make_field(FieldSpec("cellular"))
    cloud = _cloud(32, seed=24)
    e1, e2 = integrate_paired_flows(b, 0.5, 0.0, cloud, 1e-3, 1e-3, 77, 20, 1e-2)
    assert np.array_equal(e1.realizations, e2.realizations)


def test_paired_flows_gaussian_difference_oracle():
    """No drift: the paired gap is |sqrt(2 e1) - sqrt(2 e2)| |W_t| with the
    same W, so its mean is the folded-Gaussian value."""
    b = make_field(FieldSpec("zero"))
    cloud = ParticleCloud(np.full((8, 2), 0.5), provenance="manual")
    e1, e2, t, m = 1e-3, 4e-3, 1.0, 5000
    m1, m2 = integrate_paired_flows(b, t, 0.0, cloud, e1, e2, 41, m, 1e-2)
    gap = np.sqrt(((m1.displacements - m2.displacements) ** 2).sum(axis=-1))
    mean = gap.mean()
    se = gap.std(ddof=1) / math.sqrt(gap.size)
    expected = abs(math.sqrt(2 * e1) - math.sqrt(2 * e2)) * math.sqrt(t) * math.sqrt(math.pi / 2)
    assert abs(mean - expected) <= 3 * se


def test_paired_flows_share_noise_not_streams():
    """Same master seed: the shared-path coupling must beat independent draws."""
    b = make_field(FieldSpec("cellular"))
    cloud = _cloud(32, seed=26)
    e1, e2 = 1e-3, 1.2e-3
    m1, m2 = integrate_paired_flows(b, 0.5, 0.0, cloud, e1, e2, 55, 100, 1e-2)
    paired_gap = geodesic_distance(m1.realizations, m2.realizations).mean()
    ind1 = integrate_stochastic_flow(b, 0.5, 0.0, cloud, NoiseSpec(e1, 55, 100), 1e-2)
    ind2 = integrate_stochastic_flow(b, 0.5, 0.0, cloud, NoiseSpec(e2, 56, 100), 1e-2)
    independent_gap = geodesic_distance(ind1.realizations, ind2.realizations).mean()
    assert paired_gap < 0.2 * independent_gap
