"""Uniform cell-centred grids on boxes, the affine weight and discrete norms.

All integrals use the midpoint rule on cell centres, which is exact for the
affine weight ``w(x) = c0 - sum(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box split into ``cells[i]`` equal cells along axis ``i``.

    Cell ordering is row-major over the axes, so a field on a 2-D grid has
    shape ``(cells[0], cells[1])`` and ``values.ravel()[j]`` is cell ``j``.
    """

    dim: int
    extents: tuple[tuple[float, float], ...]
    cells: tuple[int, ...]

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple((b - a) / n for (a, b), n in zip(self.extents, self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def kernel_shape(self) -> tuple[int, int]:
        """Shape used by the compiled kernels: 1-D grids get a trailing axis of 1."""
        return (self.cells[0], self.cells[1] if self.dim == 2 else 1)

    def axis_centers(self, axis: int) -> np.ndarray:
        (a, b), n = self.extents[axis], self.cells[axis]
        return a + (np.arange(n) + 0.5) * (b - a) / n

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates, one array of shape ``self.shape`` per axis."""
        axes = [self.axis_centers(i) for i in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def first_axis_unit(self) -> np.ndarray:
        """Centres of axis 0 rescaled to (0, 1)."""
        a, b = self.extents[0]
        return (self.axis_centers(0) - a) / (b - a)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def field(self, func) -> "Field":
        """Sample ``func(*coords)`` at cell centres."""
        vals = np.asarray(func(*self.coordinates()), dtype=float)
        return Field(self, np.broadcast_to(vals, self.shape).copy())


@dataclass(frozen=True)
class Field:
    """Cell averages of the state on a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(
                f"field shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self.grid, other.grid)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self.grid, other.grid)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, alpha: float) -> "Field":
        return Field(self.grid, alpha * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class WeightField:
    grid: Grid
    c0: float
    values: np.ndarray = field(repr=False)


def make_grid(dim: int, extents, cells) -> Grid:
    """Build a uniform grid.

    ``extents`` is ``(a, b)`` or a sequence of such pairs; ``cells`` an int or
    a sequence of ints, one per axis.

    >>> make_grid(1, (0, 1), 100).dx
    (0.01,)
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if dim == 1 and len(extents) == 2 and np.isscalar(extents[0]):
        extents = (extents,)
    ext = tuple((float(a), float(b)) for a, b in extents)
    if isinstance(cells, (int, np.integer)):
        cells = (int(cells),) * dim
    cells = tuple(int(n) for n in cells)
    if len(ext) != dim or len(cells) != dim:
        raise ValueError("extents and cells must have one entry per axis")
    for (a, b), n in zip(ext, cells):
        if not b > a:
            raise ValueError(f"degenerate extent ({a}, {b})")
        if n < 2:
            raise ValueError(f"need at least 2 cells per axis, got {n}")
    return Grid(dim, ext, cells)


def make_weight(grid: Grid, c0: float | None = None) -> WeightField:
    """Weight ``w(x) = c0 - sum_i x_i`` at the cell centres.

    The default ``c0`` is ``sum_i b_i + 1``, which gives ``min w = 1`` on the
    unit box.
    """
    if c0 is None:
        c0 = sum(b for _, b in grid.extents) + 1.0
    vals = c0 - sum(grid.coordinates())
    if np.min(vals) <= 0:
        raise ValueError(
            f"c0={c0} does not keep the weight positive (min w = {np.min(vals):.4g})"
        )
    return WeightField(grid, float(c0), vals)


def unit_weight(grid: Grid) -> WeightField:
    """Constant weight 1, turning the weighted norms into plain L1."""
    return WeightField(grid, float("nan"), np.ones(grid.shape))


def _check_same_grid(g1: Grid, g2: Grid):
    if g1 != g2:
        raise ValueError("fields live on different grids")


def _values(obj) -> np.ndarray:
    return obj.values if isinstance(obj, (Field, WeightField)) else np.asarray(obj)


def norm_l1w(field: Field, weight: WeightField) -> float:
    """Weighted L1 norm ``sum |u_j| w_j dV``."""
    _check_same_grid(field.grid, weight.grid)
    return float(np.sum(np.abs(field.values) * weight.values) * field.grid.cell_volume)


def norm_l1(field: Field) -> float:
    return float(np.sum(np.abs(field.values)) * field.grid.cell_volume)


def norm_lp(field: Field, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float(
        (np.sum(np.abs(field.values) ** p) * field.grid.cell_volume) ** (1.0 / p)
    )


def batch_l1w(values: np.ndarray, weight: WeightField) -> np.ndarray:
    """Weighted L1 norms of a stack of fields (leading axes are batch axes)."""
    grid = weight.grid
    axes = tuple(range(-grid.dim, 0))
    return np.sum(np.abs(values) * weight.values, axis=axes) * grid.cell_volume


def l1w_distance(a: Field | np.ndarray, b: Field | np.ndarray, weight: WeightField) -> float:
    return float(
        np.sum(np.abs(_values(a) - _values(b)) * weight.values) * weight.grid.cell_volume
    )


def integrate(values: np.ndarray, grid: Grid) -> float:
    """Midpoint-rule integral of cell values."""
    return float(np.sum(values) * grid.cell_volume)


def refine(grid: Grid, factor: int = 2) -> Grid:
    return Grid(grid.dim, grid.extents, tuple(n * factor for n in grid.cells))


def unit_box(dim: int, cells: int | Sequence[int]) -> Grid:
    return make_grid(dim, [(0.0, 1.0)] * dim, cells)
