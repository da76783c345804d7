"""Uniform periodic grids on the unit d-torus (d in {1, 2}) with discrete calculus.

The torus has side length 1 per axis.  Samples live at the lattice points
x_i = i*h, each the center of the cell [i*h - h/2, i*h + h/2) modulo 1.  Flat
storage order is axis-1-fastest: flat index k = i1 + n*i2.

Discrete operators: second-order central differences for gradient and
(cell-placed) divergence.  With periodic wrap these are exactly adjoint to
each other under the midpoint quadrature, and the quadrature itself is
spectrally accurate for smooth periodic integrands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

__all__ = [
    "TorusGrid",
    "Field",
    "VectorField",
    "Trajectory",
    "gradient",
    "divergence",
    "integrate",
    "sup_norm",
    "sup_norm_traj",
    "torus_distance",
    "save_field_csv",
    "load_field_csv",
]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on [0,1)^dim with n_per_axis cells per axis."""

    dim: int
    n_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n_per_axis < 8:
            raise ValueError(f"n_per_axis must be >= 8, got {self.n_per_axis}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_per_axis

    @property
    def n_cells(self) -> int:
        return self.n_per_axis**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        # numpy shape of the unflattened value array; the LAST numpy axis is
        # spatial axis 1 (it varies fastest in the flat order)
        return (self.n_per_axis,) * self.dim

    def numpy_axis(self, axis: int) -> int:
        """Numpy axis of spatial axis ``axis`` (0-based) in ``shape`` order."""
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis {axis} out of range for dim {self.dim}")
        return self.dim - 1 - axis

    def coords1d(self) -> np.ndarray:
        """Sample coordinates i*h along one axis."""
        return np.arange(self.n_per_axis) * self.h

    def meshgrid(self) -> list[np.ndarray]:
        """Flat coordinate arrays [x1, ..., xd], each of length n_cells."""
        x = self.coords1d()
        if self.dim == 1:
            return [x]
        x2, x1 = np.meshgrid(x, x, indexing="ij")
        return [x1.ravel(), x2.ravel()]

    def unflatten(self, values: np.ndarray) -> np.ndarray:
        return values.reshape(self.shape)

    def point(self, flat_index: int) -> tuple[float, ...]:
        """Coordinates of the cell with the given flat index."""
        n = self.n_per_axis
        if self.dim == 1:
            return (flat_index * self.h,)
        i2, i1 = divmod(flat_index, n)
        return (i1 * self.h, i2 * self.h)


def torus_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Wrapped distance on the unit torus, min(|x-y|, 1-|x-y|) per axis."""
    d = np.abs(np.asarray(p) - np.asarray(q))
    d = np.minimum(d, 1.0 - d)
    if d.ndim == 0:
        return d
    return np.sqrt(np.sum(d * d, axis=-1)) if d.shape[-1] > 1 else d[..., 0]


def _as_readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar samples on a TorusGrid, flat storage (axis-1-fastest)."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_readonly(self.values).ravel())
        if self.values.size != self.grid.n_cells:
            raise ValueError(
                f"field has {self.values.size} values, grid has {self.grid.n_cells} cells"
            )
        if not np.all(np.isfinite(self.values)):
            bad = int(np.flatnonzero(~np.isfinite(self.values))[0])
            raise ValueError(f"non-finite field value at flat index {bad}")

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "Field":
        """Sample fn(x1[, x2]) on the grid; fn must accept arrays."""
        return cls(grid, np.asarray(fn(*grid.meshgrid()), dtype=float) * np.ones(grid.n_cells))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "Field":
        return cls(grid, np.full(grid.n_cells, float(value)))


@dataclass(frozen=True, eq=False)
class VectorField:
    """Per-axis component samples; placement is 'cell' or 'face'.

    A face-placed component for axis a lives at the faces i + e_a/2.
    """

    grid: TorusGrid
    components: tuple
    placement: str = "cell"

    def __post_init__(self):
        comps = tuple(_as_readonly(c).ravel() for c in self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != self.grid.dim:
            raise ValueError(f"expected {self.grid.dim} components, got {len(comps)}")
        for c in comps:
            if c.size != self.grid.n_cells:
                raise ValueError("component length does not match grid")
            if not np.all(np.isfinite(c)):
                raise ValueError("non-finite vector field component")
        if self.placement not in ("cell", "face"):
            raise ValueError(f"placement must be 'cell' or 'face', got {self.placement!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-indexed sequence of Fields on a common grid, times start at 0."""

    grid: TorusGrid
    times: np.ndarray
    frames: list = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "times", _as_readonly(self.times).ravel())
        if len(self.frames) != self.times.size:
            raise ValueError("frames and times length mismatch")
        if self.times.size == 0 or abs(self.times[0]) > 0:
            raise ValueError("times must start at 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for fr in self.frames:
            if fr.grid != self.grid:
                raise ValueError("all frames must live on the trajectory grid")

    def values_matrix(self) -> np.ndarray:
        """(n_times, n_cells) copy of all frame values."""
        return np.stack([fr.values for fr in self.frames])


def _roll(values: np.ndarray, grid: TorusGrid, shift: int, axis: int) -> np.ndarray:
    v = grid.unflatten(values)
    return np.roll(v, shift, axis=grid.numpy_axis(axis)).ravel()


def gradient(f: Field) -> VectorField:
    """Central-difference gradient, (grad f)_i = (f_{i+1} - f_{i-1}) / (2h) per axis."""
    g = f.grid
    comps = []
    for a in range(g.dim):
        comps.append((_roll(f.values, g, -1, a) - _roll(f.values, g, 1, a)) / (2.0 * g.h))
    return VectorField(g, tuple(comps), placement="cell")


def divergence(g: VectorField) -> Field:
    """Adjoint-consistent divergence.

    Cell placement: central difference per component (exactly adjoint to
    ``gradient`` under the midpoint quadrature).  Face placement: backward
    difference, (div g)_i = (g_{i} - g_{i-1}) / h per axis (component at face
    i + 1/2 stored at index i).  Either way the total integral telescopes to
    zero exactly.
    """
    gr = g.grid
    out = np.zeros(gr.n_cells)
    for a, comp in enumerate(g.components):
        if g.placement == "cell":
            out += (_roll(comp, gr, -1, a) - _roll(comp, gr, 1, a)) / (2.0 * gr.h)
        else:
            out += (comp - _roll(comp, gr, 1, a)) / gr.h
    return Field(gr, out)


def integrate(f: Field) -> float:
    """Midpoint quadrature, h^dim * sum of cell values."""
    return float(f.grid.h**f.grid.dim * np.sum(f.values))


def sup_norm(f: Field) -> float:
    return float(np.max(np.abs(f.values)))


def sup_norm_traj(tr: Trajectory) -> float:
    return max(sup_norm(fr) for fr in tr.frames)


# Field snapshot files: CSV with header "x1[,x2],value", one row per cell in
# flat (axis-1-fastest) order, 17 significant digits.

def save_field_csv(f: Field, path, header_comment: str | None = None) -> None:
    g = f.grid
    coords = g.meshgrid()
    cols = "x1,value" if g.dim == 1 else "x1,x2,value"
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(cols + "\n")
        for k in range(g.n_cells):
            xs = ",".join(f"{c[k]:.17g}" for c in coords)
            fh.write(f"{xs},{f.values[k]:.17g}\n")


def load_field_csv(path, grid: TorusGrid | None = None) -> Field:
    """Load a snapshot CSV; infers the grid when none is given."""
    rows = []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line
                continue
            rows.append([float(tok) for tok in line.split(",")])
    if header is None or not rows:
        raise UsageError(f"empty or headerless field file: {path}")
    ncols = len(rows[0])
    if ncols not in (2, 3):
        raise UsageError(f"field file must have 2 or 3 columns, got {ncols}")
    dim = ncols - 1
    data = np.asarray(rows)
    if grid is None:
        n = round(len(rows) ** (1.0 / dim))
        if n**dim != len(rows):
            raise UsageError(f"row count {len(rows)} is not a {dim}-dim lattice size")
        grid = TorusGrid(dim, n)
    if grid.dim != dim or grid.n_cells != len(rows):
        raise UsageError("field file does not match the requested grid")
    expected = grid.meshgrid()
    for a in range(dim):
        if not np.allclose(data[:, a], expected[a], atol=1e-12):
            raise UsageError(f"coordinate column x{a + 1} does not match the grid lattice")
    return Field(grid, data[:, dim])
