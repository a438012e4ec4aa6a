"""Gridded seafloor heightfields: sampling, synthetic terrain, ASCII I/O.

Heights are node-centered on a regular grid: heights[iy, ix] is the seafloor
elevation (z up, negative below the surface) at (x0 + ix*cell, y0 + iy*cell).
Row 0 is the southern edge in memory; the ASCII file format stores the
northernmost row first and readers/writers flip accordingly. Cells own their
lower-left corner half-open, [x_i, x_{i+1}) x [y_j, y_{j+1}), so the patch
gradient is single-valued on interior cell boundaries; the top/right extent
boundary belongs to the last cell. Missing data is held as NaN in memory and
as the nodata sentinel on disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class GridFormatError(ValueError):
    """Raised for malformed grid files; message carries the offending line."""


@dataclass
class HeightField:
    x0: float
    y0: float
    cell: float
    heights: np.ndarray  # (ny, nx), z up, NaN where nodata
    nodata_value: float = -99999.0

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise ValueError("heightfield needs at least a 2x2 grid")
        if self.cell <= 0.0:
            raise ValueError("cell size must be positive")
        self.heights = h

    @property
    def nx(self) -> int:
        return self.heights.shape[1]

    @property
    def ny(self) -> int:
        return self.heights.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) spanned by the outer grid nodes."""
        return (
            self.x0,
            self.x0 + (self.nx - 1) * self.cell,
            self.y0,
            self.y0 + (self.ny - 1) * self.cell,
        )

    def contains(self, x, y) -> np.ndarray:
        x0, x1, y0, y1 = self.extent
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def _cell_coords(field: HeightField, x, y):
    """Cell indices and in-cell fractions for query points (validated)."""
    fx = (np.asarray(x, dtype=float) - field.x0) / field.cell
    fy = (np.asarray(y, dtype=float) - field.y0) / field.cell
    ix = np.clip(np.floor(fx).astype(int), 0, field.nx - 2)
    iy = np.clip(np.floor(fy).astype(int), 0, field.ny - 2)
    return ix, iy, fx - ix, fy - iy


def _check_extent(field: HeightField, x, y):
    inside = field.contains(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if not np.all(inside):
        raise ValueError(f"query point outside grid extent {field.extent}")


def sample_height(field: HeightField, x, y):
    """Bilinear height at (x, y); scalars or broadcastable arrays.

    Returns NaN where any corner of the owning cell is nodata. Raises
    ValueError for queries outside the grid extent.
    """
    _check_extent(field, x, y)
    return sample_height_unchecked(field, x, y)


def sample_height_unchecked(field: HeightField, x, y):
    ix, iy, tx, ty = _cell_coords(field, x, y)
    h = field.heights
    z00 = h[iy, ix]
    z10 = h[iy, ix + 1]
    z01 = h[iy + 1, ix]
    z11 = h[iy + 1, ix + 1]
    return (
        z00 * (1 - tx) * (1 - ty)
        + z10 * tx * (1 - ty)
        + z01 * (1 - tx) * ty
        + z11 * tx * ty
    )


def sample_height_masked(field: HeightField, x, y):
    """Like sample_height but yields NaN (not an error) outside the extent."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = field.contains(x, y)
    out = np.full(np.broadcast(x, y).shape, np.nan)
    if np.any(inside):
        xi = np.broadcast_to(x, out.shape)[inside]
        yi = np.broadcast_to(y, out.shape)[inside]
        out[inside] = sample_height_unchecked(field, xi, yi)
    return out


def sample_gradient(field: HeightField, x, y):
    """Analytic (dz/dx, dz/dy) of the bilinear patch owning (x, y).

    Exact for planar data everywhere including cell boundaries thanks to the
    half-open cell ownership. Returns a pair of arrays shaped like the inputs.
    """
    _check_extent(field, x, y)
    ix, iy, tx, ty = _cell_coords(field, x, y)
    h = field.heights
    z00 = h[iy, ix]
    z10 = h[iy, ix + 1]
    z01 = h[iy + 1, ix]
    z11 = h[iy + 1, ix + 1]
    gx = ((z10 - z00) * (1 - ty) + (z11 - z01) * ty) / field.cell
    gy = ((z01 - z00) * (1 - tx) + (z11 - z10) * tx) / field.cell
    return gx, gy


@dataclass
class TerrainSpec:
    """Recipe for a synthetic seafloor.

    hills are (cx, cy, radius, amplitude) Gaussian bumps where radius is the
    Gaussian sigma in meters; ridges are (x1, y1, x2, y2, width, height)
    Gaussian-profile walls along a segment. Rocks are rock_count random bumps
    with radius/height drawn uniformly from the given ranges. smoothness is a
    Gaussian blur sigma in meters applied to the composed relief (0 = off).
    """

    nx: int = 128
    ny: int = 128
    cell: float = 0.5
    x0: float = 0.0
    y0: float = 0.0
    base_depth: float = 12.0
    hills: list = field(default_factory=list)
    rock_count: int = 0
    rock_radius: tuple = (0.8, 2.0)
    rock_height: tuple = (0.2, 0.6)
    ridges: list = field(default_factory=list)
    smoothness: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("terrain grid needs at least 2x2 nodes")
        if self.cell <= 0.0:
            raise ValueError("cell size must be positive")
        if self.base_depth <= 0.0:
            raise ValueError("base depth must be positive meters below the surface")
        if self.rock_count < 0:
            raise ValueError("rock count must be nonnegative")


def _bump(xx, yy, cx, cy, sigma, amplitude):
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    return amplitude * np.exp(-0.5 * d2 / (sigma * sigma))


def _ridge(xx, yy, x1, y1, x2, y2, width, height):
    # distance from each node to the segment
    vx, vy = x2 - x1, y2 - y1
    seg2 = vx * vx + vy * vy
    if seg2 == 0.0:
        return _bump(xx, yy, x1, y1, width, height)
    t = np.clip(((xx - x1) * vx + (yy - y1) * vy) / seg2, 0.0, 1.0)
    dx = xx - (x1 + t * vx)
    dy = yy - (y1 + t * vy)
    return height * np.exp(-0.5 * (dx * dx + dy * dy) / (width * width))


def generate_terrain(spec: TerrainSpec) -> HeightField:
    """Deterministic synthetic seafloor from a TerrainSpec.

    The same spec (including seed) always produces a bit-identical field.
    """
    xs = spec.x0 + spec.cell * np.arange(spec.nx)
    ys = spec.y0 + spec.cell * np.arange(spec.ny)
    xx, yy = np.meshgrid(xs, ys)
    relief = np.zeros((spec.ny, spec.nx))

    for cx, cy, radius, amplitude in spec.hills:
        relief += _bump(xx, yy, cx, cy, radius, amplitude)
    for x1, y1, x2, y2, width, height in spec.ridges:
        relief += _ridge(xx, yy, x1, y1, x2, y2, width, height)

    rng = np.random.default_rng(spec.seed)
    r_lo, r_hi = spec.rock_radius
    h_lo, h_hi = spec.rock_height
    for _ in range(spec.rock_count):
        margin = r_hi
        cx = rng.uniform(xs[0] + margin, xs[-1] - margin)
        cy = rng.uniform(ys[0] + margin, ys[-1] - margin)
        radius = rng.uniform(r_lo, r_hi)
        height = rng.uniform(h_lo, h_hi)
        relief += _bump(xx, yy, cx, cy, radius, height)

    if spec.smoothness > 0.0:
        relief = ndimage.gaussian_filter(relief, sigma=spec.smoothness / spec.cell, mode="nearest")

    return HeightField(spec.x0, spec.y0, spec.cell, relief - spec.base_depth)


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def write_grid(field: HeightField, path) -> None:
    """Write the field as an ASCII grid, northernmost row first."""
    with open(path, "w", newline="\n") as f:
        f.write(f"ncols {field.nx}\n")
        f.write(f"nrows {field.ny}\n")
        f.write(f"xllcorner {field.x0:.17g}\n")
        f.write(f"yllcorner {field.y0:.17g}\n")
        f.write(f"cellsize {field.cell:.17g}\n")
        f.write(f"nodata_value {field.nodata_value:.17g}\n")
        h = np.where(np.isnan(field.heights), field.nodata_value, field.heights)
        for row in h[::-1]:
            f.write(" ".join(f"{v:.17g}" for v in row))
            f.write("\n")


def read_grid(path) -> HeightField:
    """Read an ASCII grid written by write_grid.

    Raises GridFormatError (with the 1-based line number) for malformed
    headers, non-numeric values, or row/column count mismatches.
    """
    with open(path) as f:
        lines = f.read().splitlines()

    header = {}
    for i, key in enumerate(_HEADER_KEYS):
        if i >= len(lines):
            raise GridFormatError(f"line {i + 1}: missing header line {key!r}")
        parts = lines[i].split()
        if len(parts) != 2 or parts[0].lower() != key:
            raise GridFormatError(f"line {i + 1}: expected '{key} <value>', got {lines[i]!r}")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise GridFormatError(f"line {i + 1}: non-numeric value for {key}") from None

    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols != header["ncols"] or nrows != header["nrows"] or ncols < 2 or nrows < 2:
        raise GridFormatError("line 1: grid shape must be integers >= 2")

    rows = []
    for j in range(nrows):
        ln = len(_HEADER_KEYS) + j
        if ln >= len(lines):
            raise GridFormatError(f"line {ln + 1}: missing data row {j + 1} of {nrows}")
        parts = lines[ln].split()
        if len(parts) != ncols:
            raise GridFormatError(
                f"line {ln + 1}: expected {ncols} values, got {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise GridFormatError(f"line {ln + 1}: non-numeric height value") from None

    tail = len(_HEADER_KEYS) + nrows
    if any(s.strip() for s in lines[tail:]):
        raise GridFormatError(f"line {tail + 1}: trailing content after {nrows} rows")

    heights = np.array(rows)[::-1]  # file is north-first; memory is south-first
    nodata = header["nodata_value"]
    heights = np.where(heights == nodata, np.nan, heights)
    return HeightField(
        header["xllcorner"], header["yllcorner"], header["cellsize"], heights, nodata
    )
