"""Executable functional-analysis diagnostics on grid fields.

Weak Lebesgue quasinorms, the L^1 interpolation bound between weak spaces,
discrete Hardy-Littlewood maximal functions over a radius ladder,
threshold decompositions into a small-L^1 part plus an L^r-bounded part,
and a superlinear-integrand certificate of equi-integrability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation
from .torus import GridSpec, ScalarField

# weak (1,1) constant for the maximal operator, pre-calibrated on point
# masses (the extremizers) for d <= 3
WEAK_11_CONSTANT = 100.0


@dataclass(frozen=True)
class WeakNormReport:
    p: float
    value: float
    argmax_lambda: float


def weak_norm(u: ScalarField, p: float) -> WeakNormReport:
    """Weak-L^p quasinorm: sup over lambda of lambda^p * measure{|u| > lambda}.

    On a grid the sup of the piecewise function is attained as lambda
    approaches one of the sorted distinct |values| from below, so it is
    evaluated exactly there.
    """
    if not (1.0 <= p < math.inf):
        raise ContractViolation(f"weak norm exponent must be finite and >= 1, got {p}")
    vals = np.sort(np.abs(u.values).ravel())[::-1]
    n = vals.size
    if vals[0] == 0.0:
        return WeakNormReport(p, 0.0, 0.0)
    # measure{|u| > lambda} for lambda just below vals[i] is (i+1)/n with
    # ties resolved by taking the last occurrence
    ranks = np.arange(1, n + 1) / n
    candidates = vals**p * ranks
    best = int(np.argmax(candidates))
    return WeakNormReport(p, float(candidates[best] ** (1.0 / p)), float(vals[best]))


def interpolation_bound_check(u: ScalarField, p: float):
    """Check ||u||_L1 against the weak-space interpolation bound.

    For finite p > 1 the bound is p/(p-1) * W1 * (1 + ln+(Wp / W1)) with
    W1, Wp the weak quasinorms; for p = inf the prefactor is 1 and Wp is
    replaced by the sup norm.  The positive part of the log guards ratios
    below one.  Returns (lhs, rhs, satisfied).
    """
    if np.any(u.values < 0.0):
        raise ContractViolation("interpolation bound requires a nonnegative field")
    if not (p > 1.0):
        raise ContractViolation(f"interpolation exponent must satisfy p > 1, got {p}")
    lhs = float(np.abs(u.values).mean())
    w1 = weak_norm(u, 1.0).value
    if w1 == 0.0:
        return lhs, 0.0, lhs <= 0.0
    if math.isinf(p):
        top = float(np.abs(u.values).max())
        rhs = w1 * (1.0 + max(0.0, math.log(top / w1)))
    else:
        wp = weak_norm(u, p).value
        rhs = p / (p - 1.0) * w1 * (1.0 + max(0.0, math.log(wp / w1)))
    return lhs, rhs, lhs <= rhs * (1.0 + 1e-12)


def default_radius_ladder(grid: GridSpec, count: int = 16) -> np.ndarray:
    """Geometric radius ladder from 1.5 grid spacings up to 1/2."""
    lo = 1.5 * grid.spacing
    if lo >= 0.5:
        raise ContractViolation(f"grid too coarse for a radius ladder (N={grid.n})")
    return np.geomspace(lo, 0.5, count)


def _ball_kernels(grid: GridSpec, radii: Sequence[float]):
    mesh = grid.meshgrid()
    dist_sq = np.zeros(grid.shape)
    for m in mesh:
        per_axis = np.minimum(m, 1.0 - m)
        dist_sq = dist_sq + per_axis**2
    dist = np.sqrt(dist_sq)
    for r in radii:
        kernel = (dist <= r + 1e-12).astype(float)
        yield kernel, float(kernel.sum())


def maximal_function(f: ScalarField, radii: Sequence[float]) -> ScalarField:
    """Discrete maximal function: max over the radius ladder of the
    average of |f| over the geodesic ball.

    A lower bound for the continuum maximal function; exact in the limit
    of a dense ladder.  Ball averages are computed by FFT convolution with
    the (symmetric) ball indicator.
    """
    radii = np.asarray(list(radii), dtype=float)
    if radii.size == 0:
        raise ContractViolation("radius ladder must be nonempty")
    if np.any(radii <= f.grid.spacing) or np.any(radii > 0.5 + 1e-12):
        raise ContractViolation(
            "radii must lie in (spacing, 1/2]; got "
            f"[{radii.min():g}, {radii.max():g}] at spacing {f.grid.spacing:g}"
        )
    absf_hat = np.fft.fftn(np.abs(f.values))
    out = np.zeros(f.grid.shape)
    for kernel, count in _ball_kernels(f.grid, radii):
        avg = np.real(np.fft.ifftn(absf_hat * np.fft.fftn(kernel))) / count
        np.maximum(out, avg, out=out)
    return ScalarField(f.grid, np.maximum(out, 0.0), name=f"M[{f.name}]", time=f.time)


def weak_11_bound_check(f: ScalarField, radii: Sequence[float] | None = None):
    """Weak (1,1) estimate for the maximal operator with pre-calibrated C_d.

    Returns (lhs, rhs, satisfied) where lhs is the weak-L^1 quasinorm of
    Mf and rhs = C_d * ||f||_L1.
    """
    if radii is None:
        radii = default_radius_ladder(f.grid)
    mf = maximal_function(f, radii)
    lhs = weak_norm(mf, 1.0).value
    rhs = WEAK_11_CONSTANT * float(np.abs(f.values).mean())
    return lhs, rhs, lhs <= rhs


@dataclass(frozen=True)
class Decomposition:
    """Split f = g1 + g2 with ||g1||_L1 <= gamma and g2 bounded in L^r."""

    g1: ScalarField
    g2: ScalarField
    gamma: float
    r: float
    threshold: float
    c_gamma: float


def equi_decompose(f: ScalarField, gamma: float, r: float) -> Decomposition:
    """Threshold split: g1 keeps values above the smallest grid threshold
    whose tail mass fits the gamma budget, g2 keeps the rest.

    If gamma is at least the whole L^1 mass, the trivial split g1 = 0 is
    returned.  The achieved L^r bound on g2 never exceeds the threshold.
    """
    if gamma <= 0.0:
        raise ContractViolation(f"budget gamma must be > 0, got {gamma}")
    if not (r >= 1.0):
        raise ContractViolation(f"integrability exponent must satisfy r >= 1, got {r}")

    absvals = np.abs(f.values)
    total = float(absvals.mean())
    if gamma >= total:
        theta = float(absvals.max())
        mask = np.zeros(f.grid.shape, dtype=bool)
    else:
        uvals = np.unique(absvals)  # ascending
        flat = np.sort(absvals.ravel())  # ascending
        csum = np.cumsum(flat)
        n = flat.size
        # tail(theta) = mean of values strictly above theta
        pos = np.searchsorted(flat, uvals, side="right")
        tails = (csum[-1] - csum[pos - 1]) / n
        ok = np.nonzero(tails <= gamma)[0]
        theta = float(uvals[ok[0]])
        mask = absvals > theta

    g1_vals = np.where(mask, f.values, 0.0)
    g2_vals = np.where(mask, 0.0, f.values)
    g2 = ScalarField(f.grid, g2_vals, name="g2", time=f.time)
    if math.isinf(r):
        c_gamma = float(np.abs(g2_vals).max())
    else:
        c_gamma = float((np.abs(g2_vals) ** r).mean() ** (1.0 / r))
    return Decomposition(
        g1=ScalarField(f.grid, g1_vals, name="g1", time=f.time),
        g2=g2,
        gamma=gamma,
        r=r,
        threshold=theta,
        c_gamma=c_gamma,
    )


@dataclass(frozen=True)
class SuperlinearCertificate:
    """Piecewise-linear convex Psi with increasing slopes, plus the
    supremum over the input family of the grid integrals of Psi(|f|)."""

    breakpoints: np.ndarray
    slopes: np.ndarray
    sup_integral: float
    per_field: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        lo = 0.0
        for bp, slope in zip(self.breakpoints, self.slopes):
            out = out + slope * (np.clip(t, lo, bp) - lo)
            lo = bp
        out = out + (self.slopes[-1] + 1.0) * np.maximum(t - lo, 0.0)
        return out


def vallee_poussin_diagnostic(fields: Sequence[ScalarField]) -> SuperlinearCertificate:
    """Build a convex, superlinearly growing Psi adapted to the family's
    tails and report sup_i of the grid integral of Psi(|f_i|).

    Breakpoints are chosen so the tail mass of every field above the k-th
    breakpoint is at most 2^-k of the largest L^1 norm; slopes increase by
    one per segment, so Psi(t)/t grows without bound.
    """
    fields = list(fields)
    if not fields:
        raise ContractViolation("superlinear diagnostic needs a nonempty family")
    absvals = [np.abs(f.values).ravel() for f in fields]
    l1max = max(float(v.mean()) for v in absvals)
    if l1max == 0.0:
        bps = np.array([1.0, 2.0, 4.0])
        return SuperlinearCertificate(bps, np.arange(1.0, 4.0), 0.0, np.zeros(len(fields)))

    def tail(v, lam):
        sel = v > lam
        return float(v[sel].sum()) / v.size if sel.any() else 0.0

    breakpoints = []
    level = 1
    lam = 0.0
    vmax = max(float(v.max()) for v in absvals)
    while lam < vmax and level <= 60:
        target = l1max * 2.0 ** (-level)
        # smallest grid magnitude above which every field's tail fits
        cands = []
        for v in absvals:
            if tail(v, lam) <= target:
                cands.append(lam)
                continue
            uv = np.unique(v[v > lam])
            lo_idx, hi_idx = 0, uv.size - 1
            while lo_idx < hi_idx:
                mid = (lo_idx + hi_idx) // 2
                if tail(v, uv[mid]) <= target:
                    hi_idx = mid
                else:
                    lo_idx = mid + 1
            cands.append(float(uv[lo_idx]))
        lam = max(max(cands), lam * (1.0 + 1e-12))
        breakpoints.append(lam)
        level += 1
    # extend past the data with doubling breakpoints so the slope keeps growing
    top = breakpoints[-1] if breakpoints else 1.0
    for extra in range(1, 9):
        breakpoints.append(top * 2.0**extra)
    bps = np.asarray(breakpoints)
    slopes = np.arange(1.0, bps.size + 1.0)

    cert = SuperlinearCertificate(bps, slopes, 0.0, np.zeros(len(fields)))
    integrals = np.array([float(cert(v).mean()) for v in absvals])
    return SuperlinearCertificate(bps, slopes, float(integrals.max()), integrals)
