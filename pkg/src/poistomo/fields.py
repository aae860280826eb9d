"""Pixel grids on the unit square and the discrete calculus used everywhere else.

Fields are stored as (nx, ny) arrays; axis 0 is the first spatial coordinate.
All inner products and norms carry the cell-area quadrature weight, so sums
approximate integrals over the domain.  Field objects are immutable: the
wrapped arrays are marked read-only and every operation returns a new object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "gradient",
    "divergence",
    "field_dot",
    "vector_dot",
    "field_norm",
    "vector_norm",
    "tv_seminorm",
    "psnr",
    "write_pgm",
    "read_pgm",
    "write_field_csv",
    "read_field_csv",
]


@dataclass(frozen=True)
class Grid:
    """Uniform pixel grid on the unit square.

    Pixel (i, j) has its center at ((i + 1/2) * hx, (j + 1/2) * hy).
    """

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def h(self) -> float:
        """Spacing along the first axis; equals hy on square grids."""
        return self.hx

    @property
    def cell(self) -> float:
        """Pixel area, the quadrature weight of the discrete L2 inner product."""
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def npix(self) -> int:
        return self.nx * self.ny

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-center coordinates as 1d arrays (x along axis 0, y along axis 1)."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return x, y


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _conform(values, grid: Grid) -> np.ndarray:
    """Accept (nx, ny) arrays or flat length-npix vectors; reject the rest."""
    v = np.array(values, dtype=float)
    if v.ndim == 1:
        if v.size != grid.npix:
            raise ValueError(
                f"flat values have length {v.size}, grid needs {grid.npix}")
        return v.reshape(grid.shape)
    if v.shape != grid.shape:
        raise ValueError(f"values shaped {v.shape} do not fit grid {grid.shape}")
    return v


@dataclass(frozen=True)
class ScalarField:
    """Real-valued function sampled at pixel centers."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _conform(self.values, self.grid)
        object.__setattr__(self, "values", _freeze(v))

    def ravel(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.values.reshape(-1)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True)
class VectorField:
    """Two-component field; comp1/comp2 pair with the two spatial axes."""

    grid: Grid
    comp1: np.ndarray = field(repr=False)
    comp2: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "comp1", _freeze(_conform(self.comp1, self.grid)))
        object.__setattr__(self, "comp2", _freeze(_conform(self.comp2, self.grid)))


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


# Raw-array kernels; the samplers and the splitting solver call these in hot
# loops without paying for field-object construction.

def grad_arrays(vals: np.ndarray, hx: float, hy: float) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with replicate boundary (last difference is zero)."""
    g1 = np.zeros_like(vals)
    g2 = np.zeros_like(vals)
    g1[:-1, :] = (vals[1:, :] - vals[:-1, :]) / hx
    g2[:, :-1] = (vals[:, 1:] - vals[:, :-1]) / hy
    return g1, g2


def div_arrays(c1: np.ndarray, c2: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Exact negative adjoint of grad_arrays under the uniform-weight L2 pairing.

    Backward differences in the interior; the boundary rows carry the
    one-sided terms that make the adjoint identity exact.
    """
    out = np.zeros_like(c1)
    out[0, :] += c1[0, :] / hx
    out[1:-1, :] += (c1[1:-1, :] - c1[:-2, :]) / hx
    out[-1, :] -= c1[-2, :] / hx
    out[:, 0] += c2[:, 0] / hy
    out[:, 1:-1] += (c2[:, 1:-1] - c2[:, :-2]) / hy
    out[:, -1] -= c2[:, -2] / hy
    return out


def gradient(f: ScalarField) -> VectorField:
    """Discrete gradient: forward differences scaled by the grid spacing.

    The replicate (Neumann) boundary zeroes the last difference along each
    axis, so constant fields map to the zero vector field exactly.
    """
    g1, g2 = grad_arrays(f.values, f.grid.hx, f.grid.hy)
    return VectorField(f.grid, g1, g2)


def divergence(v: VectorField) -> ScalarField:
    """Discrete divergence, defined as the exact negative adjoint of gradient.

    Satisfies <gradient(f), v> + <f, divergence(v)> = 0 for every pair, with
    the cell-weighted inner products of this module.
    """
    out = div_arrays(v.comp1, v.comp2, v.grid.hx, v.grid.hy)
    return ScalarField(v.grid, out)


def field_dot(f: ScalarField, g: ScalarField) -> float:
    _check_same_grid(f, g)
    return float(np.vdot(f.values, g.values)) * f.grid.cell


def vector_dot(v: VectorField, w: VectorField) -> float:
    _check_same_grid(v, w)
    s = np.vdot(v.comp1, w.comp1) + np.vdot(v.comp2, w.comp2)
    return float(s) * v.grid.cell


def field_norm(f: ScalarField) -> float:
    return math.sqrt(max(field_dot(f, f), 0.0))


def vector_norm(v: VectorField) -> float:
    return math.sqrt(max(vector_dot(v, v), 0.0))


def tv_arrays(vals: np.ndarray, hx: float, hy: float) -> float:
    g1, g2 = grad_arrays(vals, hx, hy)
    return float(np.sum(np.hypot(g1, g2))) * hx * hy


def tv_seminorm(f: ScalarField) -> float:
    """Isotropic total variation: cell * sum of pointwise gradient magnitudes.

    One-homogeneous, satisfies the triangle inequality and is invariant under
    constant shifts.  On a unit ramp it returns 1 - 1/nx (the replicate
    boundary drops the last column of differences).
    """
    return tv_arrays(f.values, f.grid.hx, f.grid.hy)


def psnr(f: ScalarField, ref: ScalarField) -> float:
    """Peak signal-to-noise ratio in dB against a reference field.

    The peak is the maximum of the reference.  Identical fields return
    math.inf as the degenerate-MSE marker.
    """
    _check_same_grid(f, ref)
    diff = f.values - ref.values
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    peak = float(np.max(ref.values))
    if peak <= 0.0:
        raise ValueError("reference peak must be positive for psnr")
    return 10.0 * math.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# file formats


def write_pgm(f: ScalarField, path, vmax: float | None = None) -> None:
    """Write a 16-bit binary PGM (P5, maxval 65535, big-endian samples).

    Values are clipped to [0, vmax] and scaled so vmax maps to 65535; vmax
    defaults to the field maximum.  Rows of the file run along axis 0.
    """
    vals = f.values
    if vmax is None:
        vmax = float(np.max(vals))
        if vmax <= 0.0:
            vmax = 1.0
    scaled = np.clip(vals / vmax, 0.0, 1.0)
    samples = np.round(scaled * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{f.grid.ny} {f.grid.nx}\n65535\n".encode("ascii"))
        fh.write(samples.tobytes())


def _read_pgm_tokens(fh, count):
    toks = []
    while len(toks) < count:
        line = fh.readline()
        if not line:
            raise ValueError("truncated PGM header")
        body = line.split(b"#", 1)[0]
        toks.extend(body.split())
    return toks


def read_pgm(path, vmax: float = 1.0) -> ScalarField:
    """Read a binary PGM into a field with values scaled to [0, vmax]."""
    with open(path, "rb") as fh:
        magic = fh.readline().split()
        if not magic or magic[0] != b"P5":
            raise ValueError(f"{path}: not a binary PGM (P5)")
        toks = magic[1:]
        toks.extend(_read_pgm_tokens(fh, 3 - len(toks)))
        width, height, maxval = (int(t) for t in toks[:3])
        if maxval <= 0 or maxval > 65535:
            raise ValueError(f"{path}: unsupported maxval {maxval}")
        dtype = ">u2" if maxval > 255 else "u1"
        raw = fh.read()
    data = np.frombuffer(raw, dtype=dtype, count=width * height)
    vals = data.astype(float).reshape(height, width) * (vmax / maxval)
    return ScalarField(Grid(height, width), vals)


def write_field_csv(f: ScalarField, path) -> None:
    """Flat CSV, one value per line in row-major order."""
    np.savetxt(path, f.ravel(), fmt="%.17g")


def read_field_csv(path, grid: Grid) -> ScalarField:
    vals = np.loadtxt(path, dtype=float).reshape(-1)
    if vals.size != grid.npix:
        raise ValueError(f"{path}: expected {grid.npix} values, found {vals.size}")
    return ScalarField(grid, vals)
