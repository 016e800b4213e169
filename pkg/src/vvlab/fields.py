"""Catalogue of divergence-free velocity fields on the 2D torus.

Every planar field is built as the perpendicular gradient of a stream
function, so incompressibility holds by construction rather than by
numerical projection.  Each field carries a declared regularity tag; the
tag is metadata validated by refinement studies, not something a finite
grid can prove.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import ContractViolation
from .torus import GridSpec, ScalarField, wrap


@dataclass(frozen=True)
class Regularity:
    """Declared smoothness class of a velocity field.

    kind: "smooth", "sobolev_p" (W^{1,p} with the given exponent), or
    "sobolev_1_lq" (W^{1,1} intersected with L^q).
    """

    kind: str
    exponent: Optional[float] = None

    def __str__(self):
        if self.exponent is None:
            return self.kind
        return f"{self.kind}({self.exponent:g})"


@dataclass(frozen=True)
class FieldSpec:
    """Named catalogue entry plus its parameter map."""

    name: str
    params: dict = dc_field(default_factory=dict)


@dataclass(frozen=True)
class VelocityField:
    """Time-dependent velocity field, evaluable at arbitrary (t, x).

    ``eval_fn`` receives a float time and an array of points of shape
    (..., d) and returns velocities of the same shape.  Evaluation is pure
    and deterministic; instances are immutable and safe to share between
    workers.
    """

    dim: int
    name: str
    regularity: Regularity
    eval_fn: Callable[[float, np.ndarray], np.ndarray]
    params: dict = dc_field(default_factory=dict)
    time_dependent: bool = False
    singularities: tuple = ()

    def eval(self, t: float, points: np.ndarray) -> np.ndarray:
        pts = wrap(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.dim:
            raise ContractViolation(
                f"field '{self.name}' is {self.dim}-dimensional, "
                f"got points of dimension {pts.shape[-1]}"
            )
        return self.eval_fn(float(t), pts)

    def max_speed(self, times=(0.0,), n: int = 64) -> float:
        """Max |b| sampled on an n^d grid at the given times."""
        pts = GridSpec(self.dim, n).nodes()
        best = 0.0
        for t in times:
            v = self.eval(t, pts)
            best = max(best, float(np.sqrt((v**2).sum(axis=-1)).max()))
        return best


# ----------------------------------------------------------------------
# catalogue constructors


def _zero_field(params):
    dim = int(params.get("dim", 2))

    def ev(t, pts):
        return np.zeros_like(pts)

    return VelocityField(dim, "zero", Regularity("smooth"), ev, dict(params))


def _constant_field(params):
    velocity = np.asarray(params.get("velocity", (0.25, 0.1)), dtype=float)
    dim = velocity.size

    def ev(t, pts):
        return np.broadcast_to(velocity, pts.shape).copy()

    return VelocityField(dim, "constant", Regularity("smooth"), ev,
                         {"velocity": tuple(velocity)})


def _shear_field(params):
    amp = float(params.get("amplitude", 1.0))

    def ev(t, pts):
        out = np.zeros_like(pts)
        out[..., 0] = amp * np.sin(2.0 * np.pi * pts[..., 1])
        return out

    return VelocityField(2, "shear", Regularity("smooth"), ev, {"amplitude": amp})


def _cellular_field(params):
    """Perpendicular gradient of psi = A sin(2 pi x) sin(2 pi y) / (2 pi)."""
    amp = float(params.get("amplitude", 1.0))

    def ev(t, pts):
        x = 2.0 * np.pi * pts[..., 0]
        y = 2.0 * np.pi * pts[..., 1]
        out = np.empty_like(pts)
        out[..., 0] = -amp * np.sin(x) * np.cos(y)
        out[..., 1] = amp * np.cos(x) * np.sin(y)
        return out

    return VelocityField(2, "cellular", Regularity("smooth"), ev, {"amplitude": amp})


def _alternating_shear_field(params):
    """Two orthogonal shears with smooth time envelopes of period tau."""
    amp = float(params.get("amplitude", 1.0))
    tau = float(params.get("period", 1.0))
    if tau <= 0:
        raise ContractViolation(f"alternating shear period must be > 0, got {tau}")

    def ev(t, pts):
        phase = 2.0 * np.pi * t / tau
        out = np.empty_like(pts)
        out[..., 0] = amp * math.cos(phase) * np.sin(2.0 * np.pi * pts[..., 1])
        out[..., 1] = amp * math.sin(phase) * np.sin(2.0 * np.pi * pts[..., 0])
        return out

    return VelocityField(2, "alternating_shear", Regularity("smooth"), ev,
                         {"amplitude": amp, "period": tau}, time_dependent=True)


_CUT_INNER = 0.05
_CUT_OUTER = 0.4


def _bump(r):
    """C^2 cutoff: 1 on r <= 0.05, quintic smoothstep down to 0 at r = 0.4."""
    u = np.clip((r - _CUT_INNER) / (_CUT_OUTER - _CUT_INNER), 0.0, 1.0)
    return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def _bump_prime(r):
    u = np.clip((r - _CUT_INNER) / (_CUT_OUTER - _CUT_INNER), 0.0, 1.0)
    return -(30.0 * u**2 - 60.0 * u**3 + 30.0 * u**4) / (_CUT_OUTER - _CUT_INNER)


def _rough_field(params):
    """Radial-stream vortex psi = r^beta * cutoff(r) around a centre.

    The gradient blows up like r^(beta-2) at the centre, so the field lies
    in W^{1,p} exactly for p < 2/(2-beta) while staying bounded (hence in
    every L^q).  The cutoff keeps the stream function supported in a disc
    of radius 0.4, well inside the periodic cell.
    """
    beta = float(params.get("beta", 0.5))
    if not (0.0 < beta < 1.0):
        raise ContractViolation(f"rough field exponent beta must lie in (0,1), got {beta}")
    amp = float(params.get("amplitude", 1.0))
    center = np.asarray(params.get("center", (0.5, 0.5)), dtype=float)
    if center.shape != (2,):
        raise ContractViolation("rough field centre must be a 2-vector")

    def ev(t, pts):
        rel = pts - center
        rel -= np.round(rel)  # minimal image; support is inside r < 0.4
        r = np.sqrt((rel**2).sum(axis=-1))
        rsafe = np.where(r > 0.0, r, 1.0)
        # d(psi)/dr with psi = amp * r^beta * bump(r)
        dpsi = amp * (beta * rsafe ** (beta - 1.0) * _bump(r)
                      + rsafe**beta * _bump_prime(r))
        scale = np.where(r > 0.0, dpsi / rsafe, 0.0)
        out = np.empty_like(pts)
        out[..., 0] = -scale * rel[..., 1]
        out[..., 1] = scale * rel[..., 0]
        return out

    p_crit = 2.0 / (2.0 - beta)
    return VelocityField(
        2,
        "rough",
        Regularity("sobolev_p", p_crit),
        ev,
        {"beta": beta, "amplitude": amp, "center": tuple(center)},
        singularities=(tuple(center),),
    )


_CATALOGUE = {
    "zero": _zero_field,
    "constant": _constant_field,
    "shear": _shear_field,
    "cellular": _cellular_field,
    "alternating_shear": _alternating_shear_field,
    "rough": _rough_field,
}


def catalogue_names():
    return sorted(_CATALOGUE)


def make_field(spec: FieldSpec) -> VelocityField:
    """Instantiate a catalogue field; rejects unknown names and bad parameters."""
    if spec.name not in _CATALOGUE:
        raise ContractViolation(
            f"unknown field '{spec.name}'; catalogue: {', '.join(catalogue_names())}"
        )
    return _CATALOGUE[spec.name](spec.params)


# ----------------------------------------------------------------------
# grid diagnostics


def sample_on_grid(b: VelocityField, t: float, grid: GridSpec):
    """Nodal evaluation, one ScalarField per component."""
    if grid.dim != b.dim:
        raise ContractViolation(
            f"grid dim {grid.dim} does not match field dim {b.dim}"
        )
    mesh = grid.meshgrid()
    pts = np.stack(mesh, axis=-1)
    vel = b.eval(t, pts)
    return tuple(
        ScalarField(grid, vel[..., a], name=f"{b.name}[{a}]", time=t)
        for a in range(b.dim)
    )


def spectral_divergence(b: VelocityField, t: float, grid: GridSpec,
                        max_mode: Optional[int] = None) -> float:
    """Relative L^2 norm of the spectral divergence of the sampled field.

    Returns ||div b||_2 / ||b||_2 on the grid (0 for a zero field).  When
    ``max_mode`` is given, the divergence is measured only on modes with
    |k|_inf <= max_mode: pointwise samples of a field with an integrable
    gradient singularity alias the unresolved core across the whole
    spectrum, so only the resolved band certifies incompressibility.
    """
    comps = sample_on_grid(b, t, grid)
    k = np.fft.fftfreq(grid.n) * grid.n
    div_hat = np.zeros(grid.shape, dtype=complex)
    energy = 0.0
    for axis, comp in enumerate(comps):
        chat = np.fft.fftn(comp.values)
        kshape = [1] * grid.dim
        kshape[axis] = grid.n
        div_hat += 2j * np.pi * k.reshape(kshape) * chat
        energy += float((np.abs(chat) ** 2).sum())
    if energy == 0.0:
        return 0.0
    if max_mode is not None:
        mask = np.ones(grid.shape, dtype=bool)
        for axis in range(grid.dim):
            kshape = [1] * grid.dim
            kshape[axis] = grid.n
            mask &= np.abs(k.reshape(kshape)) <= max_mode
        div_hat = np.where(mask, div_hat, 0.0)
    return float(np.sqrt((np.abs(div_hat) ** 2).sum() / energy))


def divergence_check(b: VelocityField, t: float, grid: GridSpec):
    """Tag-aware incompressibility diagnostic.

    Smooth fields are checked across the full spectrum; fields with a
    gradient singularity are checked on the resolved band |k| <= N/8.
    Returns (relative divergence, tolerance, band description).
    """
    if b.singularities:
        band = grid.n // 8
        return spectral_divergence(b, t, grid, max_mode=band), 1e-2, f"|k|<={band}"
    return spectral_divergence(b, t, grid), 1e-6, "full"


def gradient_magnitude(b: VelocityField, t: float, grid: GridSpec) -> ScalarField:
    """Pointwise Frobenius norm of the centred-difference Jacobian."""
    comps = sample_on_grid(b, t, grid)
    h = grid.spacing
    total = np.zeros(grid.shape)
    for comp in comps:
        for axis in range(grid.dim):
            deriv = (np.roll(comp.values, -1, axis=axis)
                     - np.roll(comp.values, 1, axis=axis)) / (2.0 * h)
            total += deriv**2
    return ScalarField(grid, np.sqrt(total), name=f"|grad {b.name}|", time=t)


def sobolev_seminorm(b: VelocityField, t: float, p: float, grid: GridSpec) -> float:
    """Grid L^p norm of the finite-difference gradient magnitude."""
    if not (p >= 1.0):
        raise ContractViolation(f"Sobolev exponent must satisfy p >= 1, got {p}")
    from .torus import grid_norm

    return grid_norm(gradient_magnitude(b, t, grid), p)
