"""Stage-2 bathymetry fitting.

Fits the sine-network heightfield to per-bin projected normals and altimeter
heights. Each sidescan bin constrains the surface along its isotemporal arc:
a short fixed-step gradient descent locates where the arc crosses the current
surface, and the network's analytic slope at that point, rotated into the
sonar plane, is compared against the estimated 2-D normal. The crossing angle
is held constant during backpropagation; only the surface values and slopes
carry parameter gradients.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .geometry import Pose, SonarGeometry, side_sign
from .heightfield import HeightField
from .nn import (
    AdamState,
    DomainScale,
    NumericalFailure,
    SirenModel,
    Tensor,
    init_siren,
    scale_from_bounds,
)

_NORM_EPS = 1e-14
_DOMAIN_TOL = 1e-6


@dataclass
class ReconConfig:
    """Knobs for the stage-2 optimization.

    crossing_rate is the descent step for the arc search; the effective
    angular step is scaled by 1/r so it is uniform across ranges. w_height
    balances the altimeter term against the normal term; zero disables it,
    which leaves the vertical offset of the surface unconstrained.
    """

    w_height: float = 10.0
    epochs: int = 300
    batch_pings: int = 64
    altimeter_batch: int = 2000
    crossing_steps: int = 10
    crossing_rate: float = 0.05
    lr: float = 2e-4
    lr_decay: float = 0.995
    depth: int = 5
    width: int = 64
    w0: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.w_height < 0.0:
            raise ValueError("height-loss weight must be non-negative")
        if self.crossing_steps < 1:
            raise ValueError("crossing search needs at least one step")
        if self.epochs < 1 or self.batch_pings < 1 or self.altimeter_batch < 1:
            raise ValueError("epochs and batch sizes must be positive")


@dataclass
class CrossingResult:
    theta: float
    point: np.ndarray
    valid: bool


@dataclass
class PingConstraint:
    """One ping's normal constraints, packed for the optimizer.

    target holds sonar-plane normals in the body frame (lateral, up
    components); rows where valid is false are ignored.
    """

    pose: Pose
    geom: SonarGeometry
    target: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        n = self.geom.nbins
        self.target = np.asarray(self.target, dtype=float).reshape(n, 2)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(n)


def signed_vertical_distance(model: SirenModel, p) -> np.ndarray:
    """Surface height minus point height, meters; positive below the surface."""
    p = np.asarray(p, dtype=float)
    return model.predict_height(p[..., 0], p[..., 1]) - p[..., 2]


def _arc_axes(pose: Pose, geom: SonarGeometry):
    rot = pose.rotation()
    return side_sign(geom.side) * rot[:, 1], rot[:, 2]


def _domain_ok(scale: DomainScale, xy: np.ndarray) -> np.ndarray:
    xy_n = scale.normalize_xy(xy)
    return np.all(np.abs(xy_n) <= 1.0 + _DOMAIN_TOL, axis=-1)


def _descend(model: SirenModel, pos, jv, kv, r, theta0, cfg: ReconConfig):
    """Shared fixed-step descent on the squared vertical distance.

    All inputs are flat per-bin arrays; pos/jv/kv are (n, 3). Tape-free: the
    returned angles carry no parameter gradients.
    """
    theta = np.array(theta0, dtype=float, copy=True)
    fx, fy = model.scale.gradient_factors()
    for _ in range(cfg.crossing_steps):
        ct = np.cos(theta)[:, None]
        st = np.sin(theta)[:, None]
        p = pos + r[:, None] * (ct * jv - st * kv)
        z_n, gx_n, gy_n = model.forward_gradient_np(model.scale.normalize_xy(p[:, :2]))
        delta = model.scale.denormalize_z(z_n) - p[:, 2]
        dp = r[:, None] * (-st * jv - ct * kv)
        ddelta = gx_n * fx * dp[:, 0] + gy_n * fy * dp[:, 1] - dp[:, 2]
        theta = theta - (cfg.crossing_rate / r) * 2.0 * delta * ddelta
        theta = np.clip(theta, 0.0, math.pi / 2.0)
    points = pos + r[:, None] * (np.cos(theta)[:, None] * jv - np.sin(theta)[:, None] * kv)
    return theta, points


def find_crossings(
    model: SirenModel,
    pose: Pose,
    geom: SonarGeometry,
    ranges,
    cfg: ReconConfig,
):
    """Locate where each bin's isotemporal arc crosses the fitted surface.

    Returns (theta, points, valid); valid bins lie inside the beam gate and
    inside the model's normalized domain.
    """
    r = np.atleast_1d(np.asarray(ranges, dtype=float))
    if np.any(r <= 0.0):
        raise ValueError("slant ranges must be positive")
    jv, kv = _arc_axes(pose, geom)
    n = r.shape[0]
    theta, points = _descend(
        model,
        np.broadcast_to(pose.position, (n, 3)),
        np.broadcast_to(jv, (n, 3)),
        np.broadcast_to(kv, (n, 3)),
        r,
        np.full(n, geom.tilt),
        cfg,
    )
    in_gate = (theta >= geom.grazing_min) & (theta <= geom.grazing_max)
    valid = in_gate & _domain_ok(model.scale, points[:, :2])
    return theta, points, valid


def find_crossing(
    model: SirenModel, pose: Pose, geom: SonarGeometry, r: float, cfg: ReconConfig
) -> CrossingResult:
    theta, points, valid = find_crossings(model, pose, geom, [float(r)], cfg)
    return CrossingResult(float(theta[0]), points[0], bool(valid[0]))


def height_loss(model: SirenModel, points) -> Tensor:
    """Mean absolute vertical distance to a batch of seafloor points."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if p.shape[0] == 0:
        raise ValueError("altimeter batch is empty")
    z_n = model.forward(model.scale.normalize_xy(p[:, :2]))
    z = z_n * model.scale.z_scale + model.scale.z_offset
    return (z - Tensor(p[:, 2])).abs().mean()


def _projected_normal_terms(model, xy, ay, az, target) -> Tensor:
    """Per-bin distances between fitted and target sonar-plane normals.

    xy are crossing locations (n, 2); ay/az the body lateral/up axes in world
    coordinates (n, 3); target the estimated 2-D normals (n, 2). The fitted
    world normal is (-dz/dx, -dz/dy, 1), projected onto the two axes and
    renormalized in the plane.
    """
    _, gx_n, gy_n = model.forward_with_gradient(model.scale.normalize_xy(xy))
    fx, fy = model.scale.gradient_factors()
    gx = gx_n * fx
    gy = gy_n * fy
    ny = gx * (-ay[:, 0]) + gy * (-ay[:, 1]) + ay[:, 2]
    nz = gx * (-az[:, 0]) + gy * (-az[:, 1]) + az[:, 2]
    norm = (ny * ny + nz * nz + _NORM_EPS).sqrt()
    dy = ny / norm - Tensor(target[:, 0])
    dz = nz / norm - Tensor(target[:, 1])
    return (dy * dy + dz * dz + _NORM_EPS).sqrt()


def normal_loss(model: SirenModel, constraints, crossing_points, crossing_valid) -> Tensor:
    """Mean projected-normal error over the valid crossings of many pings.

    constraints, crossing_points and crossing_valid run in parallel: one
    PingConstraint with its find_crossings output per entry. Bins must pass
    both the constraint's own validity and the crossing validity.
    """
    xs, ays, azs, ts = [], [], [], []
    for con, pts, ok in zip(constraints, crossing_points, crossing_valid):
        keep = con.valid & ok
        if not np.any(keep):
            continue
        rot = con.pose.rotation()
        n = int(np.count_nonzero(keep))
        xs.append(pts[keep, :2])
        ays.append(np.broadcast_to(rot[:, 1], (n, 3)))
        azs.append(np.broadcast_to(rot[:, 2], (n, 3)))
        ts.append(con.target[keep])
    if not xs:
        raise ValueError("no valid crossings in batch")
    return _projected_normal_terms(
        model,
        np.concatenate(xs),
        np.concatenate(ays),
        np.concatenate(azs),
        np.concatenate(ts),
    ).mean()


# ---------------------------------------------------------------------------
# constraint assembly

@dataclass
class _FlatConstraints:
    """All valid bins of a survey flattened for fast batch slicing."""

    pos: np.ndarray  # (n, 3) sensor positions
    jv: np.ndarray  # (n, 3) side-folded lateral axes (arc sweep)
    ay: np.ndarray  # (n, 3) body lateral axes (normal projection)
    az: np.ndarray  # (n, 3) body up axes
    r: np.ndarray  # (n,) slant ranges
    tilt: np.ndarray  # (n,) beam-center angles
    gate: np.ndarray  # (n, 2) grazing gate bounds
    target: np.ndarray  # (n, 2)
    ping_id: np.ndarray  # (n,) index into the ping list
    n_pings: int


def flatten_constraints(constraints) -> _FlatConstraints:
    rows = [[] for _ in range(9)]
    for pid, con in enumerate(constraints):
        keep = con.valid & np.all(np.isfinite(con.target), axis=1)
        m = int(np.count_nonzero(keep))
        if m == 0:
            continue
        rot = con.pose.rotation()
        jv = side_sign(con.geom.side) * rot[:, 1]
        ranges = con.geom.bin_ranges()[keep]
        for dst, value in zip(
            rows,
            (
                np.broadcast_to(con.pose.position, (m, 3)),
                np.broadcast_to(jv, (m, 3)),
                np.broadcast_to(rot[:, 1], (m, 3)),
                np.broadcast_to(rot[:, 2], (m, 3)),
                ranges,
                np.full(m, con.geom.tilt),
                np.broadcast_to([con.geom.grazing_min, con.geom.grazing_max], (m, 2)),
                con.target[keep],
                np.full(m, pid),
            ),
        ):
            dst.append(value)
    if not rows[0]:
        raise ValueError("survey has no usable normal constraints")
    packed = [np.concatenate(r) for r in rows]
    return _FlatConstraints(*packed, n_pings=len(constraints))


def _batch_crossings(model: SirenModel, fc: _FlatConstraints, sel, cfg: ReconConfig):
    """Crossing search over the selected flattened bins."""
    theta, points = _descend(
        model, fc.pos[sel], fc.jv[sel], fc.az[sel], fc.r[sel], fc.tilt[sel], cfg
    )
    gate = fc.gate[sel]
    valid = (theta >= gate[:, 0]) & (theta <= gate[:, 1])
    valid &= _domain_ok(model.scale, points[:, :2])
    return points, valid


def altimeter_ground_points(lines) -> np.ndarray:
    """Stack every altimeter seafloor point of a survey into one (n, 3) array."""
    pts = [a.point for line in lines for a in line.altimeter]
    if not pts:
        return np.zeros((0, 3))
    return np.stack(pts)


def scale_for_survey(constraints, altimeter_points) -> DomainScale:
    """Domain scale covering sensor tracks, swaths and altimeter points."""
    fc = flatten_constraints(constraints)
    far = fc.pos[:, :2] + fc.r[:, None] * fc.jv[:, :2]
    xy = np.concatenate([fc.pos[:, :2], far])
    z_lo = fc.pos[:, 2] - fc.r
    zs = [z_lo, fc.pos[:, 2]]
    alt = np.asarray(altimeter_points, dtype=float).reshape(-1, 3)
    if alt.shape[0]:
        xy = np.concatenate([xy, alt[:, :2]])
        zs.append(alt[:, 2])
    z_all = np.concatenate(zs)
    if not (np.all(np.isfinite(xy)) and np.all(np.isfinite(z_all))):
        raise ValueError("survey bounds contain non-finite coordinates")
    return scale_from_bounds(
        xy.min(axis=0), xy.max(axis=0), float(z_all.min()), float(z_all.max())
    )


# ---------------------------------------------------------------------------
# training loop

def optimize(constraints, altimeter_points, cfg: ReconConfig | None = None,
             model: SirenModel | None = None):
    """Fit the surface to normal and altimeter constraints.

    Returns (model, log) where log is a list of per-epoch dict rows. Batches
    whose crossing search finds no valid bin are skipped with a warning. A
    non-finite loss aborts with NumericalFailure carrying the last finite
    parameter snapshot in .last_state.
    """
    cfg = cfg or ReconConfig()
    fc = flatten_constraints(constraints)
    alt = np.asarray(altimeter_points, dtype=float).reshape(-1, 3)
    use_height = cfg.w_height > 0.0 and alt.shape[0] > 0
    if model is None:
        scale = scale_for_survey(constraints, alt)
        model = init_siren(
            depth=cfg.depth,
            width=cfg.width,
            w0_first=cfg.w0,
            w0_hidden=1.0,
            scale=scale,
            seed=cfg.seed,
        )
    adam = AdamState(model.params, lr=cfg.lr, lr_decay=cfg.lr_decay)
    rng = np.random.default_rng(cfg.seed)
    order_of = np.arange(fc.n_pings)
    log = []
    snapshot = [p.data.copy() for p in model.params]

    def fail(reason: str):
        err = NumericalFailure(f"optimization aborted: {reason}")
        err.last_state = snapshot
        return err

    for epoch in range(cfg.epochs):
        lr = adam.start_epoch(epoch)
        perm = rng.permutation(order_of)
        sums = np.zeros(3)
        n_batches = 0
        bins_seen = 0
        bins_valid = 0
        for lo in range(0, fc.n_pings, cfg.batch_pings):
            pids = perm[lo : lo + cfg.batch_pings]
            sel = np.isin(fc.ping_id, pids)
            if alt.shape[0]:
                take = min(cfg.altimeter_batch, alt.shape[0])
                alt_sel = rng.choice(alt.shape[0], size=take, replace=False)
            if not np.any(sel):
                continue
            points, ok = _batch_crossings(model, fc, sel, cfg)
            bins_seen += int(np.count_nonzero(sel))
            bins_valid += int(np.count_nonzero(ok))
            if not np.any(ok):
                warnings.warn("batch skipped: no valid crossings")
                continue
            adam.zero_grad()
            terms = _projected_normal_terms(
                model,
                points[ok, :2],
                fc.ay[sel][ok],
                fc.az[sel][ok],
                fc.target[sel][ok],
            )
            l_normal = terms.mean()
            if use_height:
                l_height = height_loss(model, alt[alt_sel])
                total = l_normal + l_height * cfg.w_height
            else:
                l_height = Tensor(np.float64(0.0))
                total = l_normal
            if not np.isfinite(total.data):
                raise fail("non-finite loss")
            total.backward()
            try:
                adam.step()
            except NumericalFailure as e:
                raise fail(str(e)) from None
            sums += (float(total.data), float(l_normal.data), float(l_height.data))
            n_batches += 1
        snapshot = [p.data.copy() for p in model.params]
        denom = max(n_batches, 1)
        log.append(
            {
                "epoch": epoch,
                "loss_total": sums[0] / denom,
                "loss_normal": sums[1] / denom,
                "loss_height": sums[2] / denom,
                "lr": lr,
                "valid_bin_fraction": bins_valid / max(bins_seen, 1),
            }
        )
    return model, log


_LOG_COLUMNS = ("epoch", "loss_total", "loss_normal", "loss_height", "lr",
                "valid_bin_fraction")


def write_training_log(path, log) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(_LOG_COLUMNS) + "\n")
        for row in log:
            f.write(",".join(f"{row[c]:.17g}" if c != "epoch" else str(row[c])
                             for c in _LOG_COLUMNS) + "\n")


def export_bathymetry(model: SirenModel, extent, cell_size: float) -> HeightField:
    """Sample the fitted surface onto a regular grid.

    extent is (x_min, y_min, x_max, y_max) and must lie inside the model's
    normalized domain; nodes land on origin + i * cell_size.
    """
    x0, y0, x1, y1 = (float(v) for v in extent)
    if cell_size <= 0.0 or x1 <= x0 or y1 <= y0:
        raise ValueError("extent must be non-empty with positive cell size")
    corners = np.array([[x0, y0], [x1, y1]])
    if not np.all(_domain_ok(model.scale, corners)):
        raise ValueError("export extent lies outside the fitted domain")
    nx = int(math.floor((x1 - x0) / cell_size + 1e-9)) + 1
    ny = int(math.floor((y1 - y0) / cell_size + 1e-9)) + 1
    xs = x0 + np.arange(nx) * cell_size
    ys = y0 + np.arange(ny) * cell_size
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    heights = model.predict_height(gx, gy)
    return HeightField(x0, y0, cell_size, heights)
