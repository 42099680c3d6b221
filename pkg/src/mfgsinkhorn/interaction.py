"""Pairwise interaction kernels and their action on mass fields.

An interaction kernel is a nonnegative function ``V(z)`` of the displacement
between two locations.  Its action on a mass field,

    (V * rho)(x) = sum_y V(x - y) rho(y),

is a discrete convolution over the cell-center lattice.  For small grids it is
summed densely through a cached (M, M) matrix; above ``DENSE_CELL_LIMIT``
cells it switches to zero-padded FFT convolution of the displacement table.
Both paths agree to roundoff and are deterministic.

Kernels between specific population pairs are collected in an
:class:`InteractionMatrix`; the diagonal is always the zero kernel, as a
population carries no pairwise cost against itself here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .grids import GridSpec, MassField, ScalarField

#: largest cell count still handled by dense summation
DENSE_CELL_LIMIT = 4096


class InteractionKernel:
    """Base class: displacement-dependent nonnegative weight."""

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Evaluate at displacement rows ``z`` of shape (..., d)."""
        raise NotImplementedError

    def __call__(self, z) -> np.ndarray:
        return self.evaluate(np.asarray(z, dtype=float))


@dataclass(frozen=True)
class ZeroKernel(InteractionKernel):
    def evaluate(self, z):
        return np.zeros(z.shape[:-1])


@dataclass(frozen=True)
class BallKernel(InteractionKernel):
    """Flat penalty ``strength`` inside the open ball ``|z| < radius``."""

    strength: float
    radius: float

    def __post_init__(self):
        if self.strength < 0 or self.radius <= 0:
            raise ValueError("BallKernel needs strength >= 0 and radius > 0")

    def evaluate(self, z):
        d2 = np.sum(z**2, axis=-1)
        return np.where(d2 < self.radius**2, self.strength, 0.0)


@dataclass(frozen=True)
class CoulombKernel(InteractionKernel):
    """Capped inverse distance ``min(cap, 1/|z|)``; the origin takes the cap."""

    cap: float

    def __post_init__(self):
        if self.cap <= 0:
            raise ValueError("CoulombKernel needs cap > 0")

    def evaluate(self, z):
        dist = np.sqrt(np.sum(z**2, axis=-1))
        with np.errstate(divide="ignore"):
            inv = np.where(dist > 0, 1.0 / np.where(dist > 0, dist, 1.0), np.inf)
        return np.minimum(self.cap, inv)


@dataclass(frozen=True, eq=False)
class TabulatedKernel(InteractionKernel):
    """Kernel given by a table: radial profile or full displacement lattice.

    Radial mode interpolates ``values`` linearly over ``radii`` and clamps
    outside the tabulated range.  Full mode holds one value per integer cell
    displacement on a ``(2 n_1 - 1) x ... x (2 n_d - 1)`` lattice tied to a
    specific grid; arbitrary displacements snap to the nearest lattice point.
    """

    radii: np.ndarray = None
    values: np.ndarray = None
    table: np.ndarray = None
    grid: GridSpec = None

    def __post_init__(self):
        radial = self.radii is not None and self.values is not None
        full = self.table is not None and self.grid is not None
        if radial == full:
            raise ValueError(
                "TabulatedKernel needs either (radii, values) or (table, grid)"
            )
        if radial:
            r = np.asarray(self.radii, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if r.ndim != 1 or r.shape != v.shape or r.size < 2:
                raise ValueError("radii and values must be matching 1-d arrays")
            if np.any(np.diff(r) <= 0) or r[0] < 0:
                raise ValueError("radii must be nonnegative and increasing")
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError("tabulated values must be finite and nonnegative")
            object.__setattr__(self, "radii", r)
            object.__setattr__(self, "values", v)
        else:
            t = np.asarray(self.table, dtype=float)
            want = tuple(2 * n - 1 for n in self.grid.points_per_axis)
            if t.shape != want:
                raise ValueError(
                    f"table shape {t.shape} does not match displacement lattice {want}"
                )
            if np.any(t < 0) or not np.all(np.isfinite(t)):
                raise ValueError("tabulated values must be finite and nonnegative")
            object.__setattr__(self, "table", t)

    def evaluate(self, z):
        if self.radii is not None:
            dist = np.sqrt(np.sum(z**2, axis=-1))
            return np.interp(dist, self.radii, self.values)
        idx = []
        for a, h in enumerate(self.grid.spacing):
            n = self.grid.points_per_axis[a]
            steps = np.clip(np.rint(z[..., a] / h).astype(int), 1 - n, n - 1)
            idx.append(steps + n - 1)
        return self.table[tuple(idx)]


ZERO_KERNEL = ZeroKernel()


def load_tabulated_kernel(path, grid: GridSpec) -> TabulatedKernel:
    """Read a full displacement table from little-endian float64 bytes.

    The file must hold exactly ``prod(2 n_a - 1)`` values in row-major order
    over the displacement lattice.
    """
    raw = np.fromfile(path, dtype="<f8")
    shape = tuple(2 * n - 1 for n in grid.points_per_axis)
    want = int(np.prod(shape))
    if raw.size != want:
        raise ValueError(
            f"{path}: expected {want} float64 values for lattice {shape}, got {raw.size}"
        )
    return TabulatedKernel(table=raw.reshape(shape), grid=grid)


def displacement_table(kernel: InteractionKernel, grid: GridSpec) -> np.ndarray:
    """Kernel values on the displacement lattice, shape (2 n_1 - 1, ...)."""
    if isinstance(kernel, TabulatedKernel) and kernel.table is not None:
        if kernel.grid.points_per_axis != grid.points_per_axis:
            raise ValueError("tabulated kernel is tied to a different grid shape")
        return kernel.table
    offsets = [
        np.arange(1 - n, n) * h for n, h in zip(grid.points_per_axis, grid.spacing)
    ]
    mesh = np.meshgrid(*offsets, indexing="ij")
    z = np.stack(mesh, axis=-1)
    return kernel.evaluate(z)


class _ConvCache:
    """Per (kernel, grid geometry) cache of tables and dense matrices."""

    def __init__(self):
        self._tables: dict = {}
        self._dense: dict = {}

    @staticmethod
    def _key(kernel, grid):
        return (id(kernel), grid.points_per_axis, grid.extent_per_axis)

    def table(self, kernel, grid):
        key = self._key(kernel, grid)
        if key not in self._tables:
            self._tables[key] = displacement_table(kernel, grid)
        return self._tables[key]

    def dense(self, kernel, grid):
        key = self._key(kernel, grid)
        if key not in self._dense:
            table = self.table(kernel, grid)
            shape = grid.points_per_axis
            idx = np.indices(shape).reshape(grid.dims, -1)
            flat_disp = np.zeros((grid.size, grid.size), dtype=np.intp)
            stride = 1
            for a in range(grid.dims - 1, -1, -1):
                d = idx[a][:, None] - idx[a][None, :] + shape[a] - 1
                flat_disp += d * stride
                stride *= 2 * shape[a] - 1
            self._dense[key] = table.ravel()[flat_disp]
        return self._dense[key]


_CACHE = _ConvCache()


def convolve_masses(kernel: InteractionKernel, masses: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Convolve raw per-cell masses with the kernel; returns a flat array."""
    if isinstance(kernel, ZeroKernel):
        return np.zeros(grid.size)
    if grid.size <= DENSE_CELL_LIMIT:
        return _CACHE.dense(kernel, grid) @ np.asarray(masses, dtype=float).ravel()
    table = _CACHE.table(kernel, grid)
    out = fftconvolve(grid.reshape(masses), table, mode="valid")
    return out.ravel()


def convolve_density(kernel: InteractionKernel, rho: MassField) -> ScalarField:
    """Field ``x -> sum_y V(x - y) rho(y)`` over the grid."""
    return ScalarField(convolve_masses(kernel, rho.values, rho.grid), rho.grid)


class InteractionMatrix:
    """Square table of pairwise kernels with a zero diagonal."""

    def __init__(self, kernels):
        n = len(kernels)
        rows = []
        for i, row in enumerate(kernels):
            if len(row) != n:
                raise ValueError("interaction table must be square")
            rows.append(tuple(row))
        for i in range(n):
            if not isinstance(rows[i][i], ZeroKernel):
                raise ValueError(f"diagonal entry ({i}, {i}) must be the zero kernel")
        self.kernels = tuple(rows)
        self.n_populations = n

    @classmethod
    def uniform(cls, n_populations: int, kernel: InteractionKernel) -> "InteractionMatrix":
        """Same kernel for every ordered pair of distinct populations."""
        rows = [
            [kernel if i != j else ZERO_KERNEL for j in range(n_populations)]
            for i in range(n_populations)
        ]
        return cls(rows)

    @classmethod
    def none(cls, n_populations: int) -> "InteractionMatrix":
        return cls.uniform(n_populations, ZERO_KERNEL)

    def pair(self, i: int, j: int) -> InteractionKernel:
        return self.kernels[i][j]


def assemble_linearized_potential(
    pop: int,
    time_index: int,
    matrix: InteractionMatrix,
    marginal_masses,
    grid: GridSpec,
    *,
    weight: float = 1.0,
    symmetrize: bool = False,
) -> np.ndarray:
    """Interaction field seen by one population given the others' marginals.

    Sums ``V[pop, j] * rho_j`` over all other populations ``j`` at the given
    time index and scales by ``weight`` (the time quadrature factor in the
    solver).  With ``symmetrize`` the reverse kernel ``V[j, pop]`` is added to
    the forward one before convolving.

    ``marginal_masses`` is indexed as ``marginal_masses[j][time_index]`` and
    holds flat mass arrays.
    """
    out = np.zeros(grid.size)
    for j in range(matrix.n_populations):
        if j == pop:
            continue
        rho_j = np.asarray(marginal_masses[j][time_index], dtype=float).ravel()
        out += convolve_masses(matrix.pair(pop, j), rho_j, grid)
        if symmetrize:
            out += convolve_masses(matrix.pair(j, pop), rho_j, grid)
    return weight * out
