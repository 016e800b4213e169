"""Periodic geometry of the flat torus [0,1)^d: canonical coordinates,
geodesic distance, uniform grids and grid-quadrature norms."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation


def wrap(x: np.ndarray) -> np.ndarray:
    """Map coordinates to the canonical representative in [0,1).

    Floor-subtraction, with a guard for the rounding case where
    ``x - floor(x)`` lands exactly on 1.0 (tiny negative inputs).
    """
    x = np.asarray(x, dtype=float)
    y = x - np.floor(x)
    return np.where(y >= 1.0, y - 1.0, y)


def geodesic_distance(x, y) -> np.ndarray:
    """Geodesic distance on the torus, min over integer shifts of |x - y - k|.

    Accepts arrays of shape (..., d); broadcasting applies.  For canonical
    representatives the per-axis minimal displacement is min(|dx|, 1-|dx|),
    which realises the minimum over the shift window.
    """
    x = wrap(np.asarray(x, dtype=float))
    y = wrap(np.asarray(y, dtype=float))
    if x.shape[-1] != y.shape[-1]:
        raise ContractViolation(
            f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}"
        )
    diff = np.abs(x - y)
    per_axis = np.minimum(diff, 1.0 - diff)
    return np.sqrt(np.sum(per_axis**2, axis=-1))


@dataclass(frozen=True)
class TorusPoint:
    """A point on the torus, stored as the canonical representative."""

    coords: tuple

    def __init__(self, coords):
        arr = wrap(np.atleast_1d(np.asarray(coords, dtype=float)))
        object.__setattr__(self, "coords", tuple(float(c) for c in arr))

    @property
    def dim(self) -> int:
        return len(self.coords)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


@dataclass(frozen=True)
class GridSpec:
    """Uniform N^d grid on the torus; node i maps to coordinate i/N."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim < 1:
            raise ContractViolation(f"dim must be >= 1, got {self.dim}")
        if self.n < 2:
            raise ContractViolation(f"points_per_axis must be >= 2, got {self.n}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    def meshgrid(self):
        """Node coordinates, one array per axis, `ij` indexing."""
        ax = self.axis_coords()
        return np.meshgrid(*([ax] * self.dim), indexing="ij")

    def nodes(self) -> np.ndarray:
        """All node coordinates as a flat (N^d, d) array, row-major order."""
        mesh = self.meshgrid()
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class ScalarField:
    """A scalar sampled on a uniform torus grid."""

    grid: GridSpec
    values: np.ndarray
    name: str = ""
    time: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ContractViolation(
                f"value shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def with_values(self, values, name=None, time=None) -> "ScalarField":
        return ScalarField(
            self.grid,
            values,
            self.name if name is None else name,
            self.time if time is None else time,
        )


def grid_norm(f: ScalarField, s: float) -> float:
    """Discrete L^s norm with uniform quadrature weight N^{-d}.

    ``s`` may be any real >= 1 or ``math.inf``.
    """
    if not (s >= 1.0):
        raise ContractViolation(f"norm exponent must satisfy s >= 1, got {s}")
    a = np.abs(f.values)
    if math.isinf(s):
        return float(a.max())
    if s == 1.0:
        return float(a.mean())
    return float((a**s).mean() ** (1.0 / s))


def l1_field_distance(f: ScalarField, g: ScalarField) -> float:
    """Grid L^1 distance between two fields on the same grid."""
    if f.grid != g.grid:
        raise ContractViolation(f"grid mismatch: {f.grid} vs {g.grid}")
    return float(np.abs(f.values - g.values).mean())


def periodic_linear_interp(f: ScalarField, points: np.ndarray) -> np.ndarray:
    """Periodic d-linear interpolation of a grid field at arbitrary points.

    ``points`` has shape (..., d); returns values of shape (...).
    """
    pts = wrap(np.asarray(points, dtype=float))
    if pts.shape[-1] != f.grid.dim:
        raise ContractViolation(
            f"point dimension {pts.shape[-1]} does not match grid dim {f.grid.dim}"
        )
    n = f.grid.n
    scaled = pts * n
    base = np.floor(scaled).astype(np.int64)
    frac = scaled - base
    base %= n

    out = np.zeros(pts.shape[:-1])
    d = f.grid.dim
    for corner in range(2**d):
        idx = []
        weight = np.ones(pts.shape[:-1])
        for axis in range(d):
            hi = (corner >> axis) & 1
            idx.append((base[..., axis] + hi) % n)
            weight = weight * (frac[..., axis] if hi else 1.0 - frac[..., axis])
        out += weight * f.values[tuple(idx)]
    return out


# --- persistence: raw float64 binary + JSON sidecar, plus CSV export ---

def save_field(f: ScalarField, path) -> None:
    """Write row-major little-endian float64 binary with a JSON sidecar."""
    path = Path(path)
    path.with_suffix(".bin").write_bytes(f.values.astype("<f8").tobytes(order="C"))
    sidecar = {"dim": f.grid.dim, "N": f.grid.n, "time": f.time, "name": f.name}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_field(path) -> ScalarField:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = GridSpec(meta["dim"], meta["N"])
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    values = raw.reshape(grid.shape)
    return ScalarField(grid, values, name=meta.get("name", ""), time=meta.get("time", 0.0))


def export_field_csv(f: ScalarField, path) -> None:
    """CSV export with one index column per axis and a value column."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"i{a}" for a in range(f.grid.dim)] + ["value"])
        for idx in np.ndindex(f.grid.shape):
            writer.writerow(list(idx) + [repr(f.values[idx])])
