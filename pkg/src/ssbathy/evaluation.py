"""Quantitative comparison of normal estimates and reconstructed maps.

Normal errors are dimensionless (components of unit normals); map errors are
meters. Relative error and threshold accuracy are computed on +1-shifted
values so they stay defined for sign-crossing normals, mirroring the shift
used by the training loss weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .heightfield import HeightField

_DELTA_BASE = 1.05
_GRAD_EPS = 1e-8


@dataclass
class NormalMetrics:
    mae: float
    rel: float
    rmse: float
    acc1: float  # percent under 1.05
    acc2: float  # percent under 1.05^2
    acc3: float  # percent under 1.05^3


@dataclass
class MapMetrics:
    mae: float
    std: float
    cs: float  # NaN when undefined
    cs_defined: bool
    bin_edges: np.ndarray
    densities: np.ndarray


def normal_metrics(pred, gt, mask=None) -> NormalMetrics:
    """Error and threshold-accuracy statistics for normal estimates.

    Only finite masked entries count; accuracy thresholds test the shifted
    ratio max((p+1)/(g+1), (g+1)/(p+1)) against 1.05^i.
    """
    p = np.asarray(pred, dtype=float).ravel()
    g = np.asarray(gt, dtype=float).ravel()
    if p.shape != g.shape:
        raise ValueError("prediction and ground truth shapes differ")
    keep = np.isfinite(p) & np.isfinite(g)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool).ravel()
    if not np.any(keep):
        raise ValueError("no valid entries to evaluate")
    p = p[keep]
    g = g[keep]
    g1 = g + 1.0
    if np.any(g1 <= 0.0):
        raise ValueError("shifted ground truth must be positive")
    e = p - g
    ae = np.abs(e)
    p1 = p + 1.0
    with np.errstate(divide="ignore"):
        delta = np.where(p1 > 0.0, np.maximum(p1 / g1, g1 / p1), np.inf)
    acc = [100.0 * float(np.mean(delta < _DELTA_BASE**i)) for i in (1, 2, 3)]
    return NormalMetrics(
        mae=float(np.mean(ae)),
        rel=float(np.mean(ae / g1)),
        rmse=float(np.sqrt(np.mean(e * e))),
        acc1=acc[0],
        acc2=acc[1],
        acc3=acc[2],
    )


def _check_registration(recon: HeightField, gt: HeightField) -> None:
    dx = gt.x0 - recon.x0
    dy = gt.y0 - recon.y0
    if (
        abs(dx) > 1e-9
        or abs(dy) > 1e-9
        or abs(gt.cell - recon.cell) > 1e-12
        or gt.heights.shape != recon.heights.shape
    ):
        raise ValueError(
            f"grids are not co-registered: origin offset ({dx:g}, {dy:g}), "
            f"cells {recon.cell:g} vs {gt.cell:g}, "
            f"shapes {recon.heights.shape} vs {gt.heights.shape}"
        )


def _masked_errors(recon: HeightField, gt: HeightField, mask) -> np.ndarray:
    _check_registration(recon, gt)
    keep = np.isfinite(recon.heights) & np.isfinite(gt.heights)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != keep.shape:
            raise ValueError("region mask shape does not match the grids")
        keep &= m
    if not np.any(keep):
        raise ValueError("grids share no valid cells")
    return (recon.heights - gt.heights)[keep]


def _error_histogram(e: np.ndarray, nbins: int):
    if nbins < 1:
        raise ValueError("need at least one histogram bin")
    lo, hi = float(e.min()), float(e.max())
    # near-constant errors need an explicit range or the bins degenerate
    if hi - lo < max(1e-12, 1e-9 * max(abs(lo), abs(hi))):
        mid = 0.5 * (lo + hi)
        lo, hi = mid - 0.5, mid + 0.5
    densities, edges = np.histogram(e, bins=nbins, range=(lo, hi), density=True)
    return edges, densities


def error_pdf(recon: HeightField, gt: HeightField, nbins: int = 50, mask=None):
    """Normalized histogram (edges, densities) of signed map errors."""
    return _error_histogram(_masked_errors(recon, gt, mask), nbins)


def map_metrics(
    recon: HeightField, gt: HeightField, mask=None, nbins: int = 50
) -> MapMetrics:
    """Signed-error statistics and gradient agreement on co-registered grids.

    Gradient cosine similarity uses central differences (one-sided at grid
    edges) on both surfaces; cells where either gradient is shorter than
    1e-8 or touches a non-finite neighbor are excluded. With no usable cell
    the similarity is reported as NaN with cs_defined False.
    """
    e = _masked_errors(recon, gt, mask)
    edges, densities = _error_histogram(e, nbins)

    keep = np.isfinite(recon.heights) & np.isfinite(gt.heights)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    with np.errstate(invalid="ignore"):
        ry, rx = np.gradient(recon.heights, recon.cell)
        gy, gx = np.gradient(gt.heights, gt.cell)
        n_r = np.hypot(rx, ry)
        n_g = np.hypot(gx, gy)
        ok = keep & (n_r >= _GRAD_EPS) & (n_g >= _GRAD_EPS)
        ok &= np.isfinite(n_r) & np.isfinite(n_g)
        cs_vals = (rx * gx + ry * gy)[ok] / (n_r[ok] * n_g[ok])
    defined = bool(cs_vals.size)
    return MapMetrics(
        mae=float(np.mean(np.abs(e))),
        std=float(np.std(e)),
        cs=float(np.mean(cs_vals)) if defined else float("nan"),
        cs_defined=defined,
        bin_edges=edges,
        densities=densities,
    )


def coverage_mask(
    grid: HeightField, points_xy, close_cells: int = 2, erode_cells: int = 2
) -> np.ndarray:
    """Surveyed-interior mask from observation footprints.

    Cells containing at least one observation are closed with a disk of
    close_cells radius (bridging gaps between adjacent swaths), then eroded
    by erode_cells to drop the uncertain rim.
    """
    pts = np.asarray(points_xy, dtype=float).reshape(-1, 2)
    ny, nx = grid.heights.shape
    occ = np.zeros((ny, nx), dtype=bool)
    ix = np.rint((pts[:, 0] - grid.x0) / grid.cell).astype(int)
    iy = np.rint((pts[:, 1] - grid.y0) / grid.cell).astype(int)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    occ[iy[inside], ix[inside]] = True

    def disk(radius):
        if radius < 1:
            return None
        span = np.arange(-radius, radius + 1)
        yy, xx = np.meshgrid(span, span, indexing="ij")
        return xx * xx + yy * yy <= radius * radius

    d_close = disk(close_cells)
    if d_close is not None:
        occ = ndimage.binary_closing(occ, structure=d_close)
    d_erode = disk(erode_cells)
    if d_erode is not None:
        occ = ndimage.binary_erosion(occ, structure=d_erode)
    return occ


# ---------------------------------------------------------------------------
# report plumbing

def normal_metrics_rows(m: NormalMetrics):
    return [
        ("normal_mae", m.mae),
        ("normal_rel", m.rel),
        ("normal_rmse", m.rmse),
        ("accuracy_1.05", m.acc1),
        ("accuracy_1.05^2", m.acc2),
        ("accuracy_1.05^3", m.acc3),
    ]


def map_metrics_rows(m: MapMetrics):
    return [
        ("map_mae_m", m.mae),
        ("map_std_m", m.std),
        ("gradient_cs", m.cs),
        ("gradient_cs_defined", 1.0 if m.cs_defined else 0.0),
    ]


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        f.write("metric,value\n")
        for name, value in rows:
            f.write(f"{name},{value:.17g}\n")


def write_histogram_csv(path, edges, densities) -> None:
    with open(path, "w", newline="") as f:
        f.write("bin_left,bin_right,density\n")
        for left, right, dens in zip(edges[:-1], edges[1:], densities):
            f.write(f"{left:.17g},{right:.17g},{dens:.17g}\n")


def format_summary(rows) -> str:
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {value:.6g}" for name, value in rows]
    return "\n".join(lines) + "\n"
