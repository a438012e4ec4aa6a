"""Sidescan survey simulation over a reference heightfield.

For every range bin the simulator intersects the bin's equal-range arc with
the seafloor, picking the sign change of the vertical clearance nearest the
beam center and refining it by bisection. Echo strength follows a
square-cosine law in the incidence angle (projected into the sonar's
lateral/vertical plane), occlusion is decided by a horizon sweep along the
swath profile, and everything below the noise floor or outside the vertical
beam gate is flagged invalid. The recorded intensity keeps in-water and
nadir-gap returns so first-bottom-return detection works on the raw ping.

The same arc tracer is reused by the draping stage to georeference recorded
pings against a reference surface; the model-based crossing search used by
the reconstruction optimizer is an independent code path on purpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .geometry import (
    PORT,
    STARBOARD,
    Pose,
    SonarGeometry,
    side_sign,
)
from .heightfield import (
    HeightField,
    sample_gradient,
    sample_height_masked,
    sample_height_unchecked,
)


class SurveyFormatError(ValueError):
    """Raised for malformed survey files; message carries the line number."""


@dataclass
class SurveyConfig:
    """Acquisition parameters for a simulated lawnmower survey."""

    line_spacing: float = 10.5
    heading: float = 0.0  # direction of the first line set, radians CCW from east
    ping_spacing: float = 0.75
    num_lines: int | None = None  # total cap; None fills the extent
    crossing: bool = True  # add a perpendicular line set
    max_range: float = 24.0
    bin_resolution: float = 0.5
    first_range: float | None = None  # defaults to one bin
    tilt: float = math.radians(45.0)
    aperture: float = math.radians(60.0)
    sensor_z: float = 0.0
    gain: float = 1.0
    noise_floor: float = 0.01  # fraction of gain
    intensity_noise: float = 0.0  # multiplicative sigma
    altimeter_noise: float = 0.0  # additive sigma, meters
    seed: int = 0

    def __post_init__(self):
        if self.line_spacing <= 0 or self.ping_spacing <= 0:
            raise ValueError("spacings must be positive")
        if self.max_range <= 0 or self.bin_resolution <= 0:
            raise ValueError("range settings must be positive")
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if self.first_range is None:
            self.first_range = self.bin_resolution
        if not 0.0 <= self.noise_floor < 1.0:
            raise ValueError("noise floor is a fraction of the gain in [0, 1)")
        if self.intensity_noise < 0 or self.altimeter_noise < 0:
            raise ValueError("noise levels must be nonnegative")

    def geometry(self, side: str) -> SonarGeometry:
        nbins = int(round((self.max_range - self.first_range) / self.bin_resolution)) + 1
        return SonarGeometry(
            side=side,
            tilt=self.tilt,
            aperture=self.aperture,
            resolution=self.bin_resolution,
            nbins=max(nbins, 1),
            first_range=self.first_range,
        )


@dataclass
class Bin:
    slant_range: float
    intensity: float
    valid: bool


@dataclass
class Ping:
    """One recorded side of one sonar pose."""

    index: int  # pose index within its survey line, 0-based
    pose: Pose
    geom: SonarGeometry
    intensity: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.intensity.shape != (self.geom.nbins,) or self.valid.shape != (self.geom.nbins,):
            raise ValueError("per-bin arrays must match the geometry bin count")

    def bins(self) -> list[Bin]:
        rs = self.geom.bin_ranges()
        return [
            Bin(float(rs[i]), float(self.intensity[i]), bool(self.valid[i]))
            for i in range(self.geom.nbins)
        ]


@dataclass
class AltimeterReading:
    point: np.ndarray  # (3,) seafloor point directly below the sensor

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)


@dataclass
class SurveyLine:
    pings: list = dataclass_field(default_factory=list)
    altimeter: list = dataclass_field(default_factory=list)


# ---------------------------------------------------------------------------
# arc / seafloor intersection

_SWEEP_STEP = math.radians(0.05)
_BISECT_ITERS = 40
_SHADOW_TOL = 1e-7  # radians of horizon clearance


@dataclass
class ArcTrace:
    """Seafloor crossings of each bin's equal-range arc for one ping side."""

    ranges: np.ndarray
    grazing: np.ndarray  # crossing angle, NaN without a crossing
    hit: np.ndarray  # (n, 3) world points, NaN rows without a crossing
    has_crossing: np.ndarray
    visible: np.ndarray  # crossing not occluded by nearer terrain
    in_gate: np.ndarray
    cos_incidence: np.ndarray  # 2-D projected incidence cosine, clipped to >= 0
    normal2d: np.ndarray  # (n, 2) projected sonar-frame normal at the hit


def _attitude_is_level(rot: np.ndarray) -> bool:
    return abs(rot[0, 2]) < 1e-12 and abs(rot[1, 2]) < 1e-12


def _incidence_and_normal(field, rot, lateral_sign, hit, grazing):
    """Projected normal and incidence cosine at crossing points."""
    x_min, x_max, y_min, y_max = field.extent
    hx = np.clip(hit[:, 0], x_min, x_max)
    hy = np.clip(hit[:, 1], y_min, y_max)
    gx, gy = sample_gradient(field, hx, hy)
    n_world = np.stack([-gx, -gy, np.ones_like(gx)], axis=1)
    n_world /= np.linalg.norm(n_world, axis=1, keepdims=True)
    n_sonar = n_world @ rot  # row-wise R^T n
    yz = n_sonar[:, 1:3]
    norm = np.linalg.norm(yz, axis=1)
    n2d = yz / np.maximum(norm, 1e-12)[:, None]
    # unit direction from the seafloor back toward the sensor, projected
    v2d = np.stack([-lateral_sign * np.cos(grazing), np.sin(grazing)], axis=1)
    cos_inc = np.clip(np.sum(n2d * v2d, axis=1), 0.0, 1.0)
    return n2d, cos_inc


def trace_arcs(field: HeightField, pose: Pose, geom: SonarGeometry) -> ArcTrace:
    """Intersect every bin arc of one ping side with the reference field."""
    rot = pose.rotation()
    if _attitude_is_level(rot):
        return _trace_arcs_level(field, pose, geom, rot)
    return _trace_arcs_general(field, pose, geom, rot)


def _trace_arcs_level(field, pose, geom, rot) -> ArcTrace:
    """Fast path for level attitude: the whole fan lives in a vertical plane.

    The swath profile is sampled once at quarter-cell steps; bin crossings are
    bracketed on that profile (profile nodes are exact field samples) and
    refined by bisection against the exact bilinear surface. Occlusion uses
    the running horizon angle of the same profile.
    """
    s = pose.position
    lat = side_sign(geom.side)
    jxy = lat * rot[:2, 1]
    ranges = geom.bin_ranges()
    n = len(ranges)

    du = field.cell / 4.0
    r_max = float(ranges[-1])
    u = np.arange(0.0, r_max + 2 * du, du)
    prof_z = sample_height_masked(field, s[0] + u * jxy[0], s[1] + u * jxy[1])
    elev = np.arctan2(prof_z - s[2], u)
    horizon = np.maximum.accumulate(np.where(np.isnan(elev), -np.inf, elev))

    # vertical clearance of each (bin, profile sample) arc point
    under = u[None, :] < ranges[:, None]
    dz = np.sqrt(np.maximum(ranges[:, None] ** 2 - u[None, :] ** 2, 0.0))
    clearance = np.where(under, prof_z[None, :] - s[2] + dz, np.nan)

    # sign changes scanning from shallow (large u) toward steep grazing
    before = clearance[:, 1:]
    after = clearance[:, :-1]
    seg = (before < 0.0) & (after >= 0.0)

    grazing = np.full(n, np.nan)
    hit = np.full((n, 3), np.nan)
    has = np.zeros(n, dtype=bool)
    visible = np.zeros(n, dtype=bool)

    if np.any(seg):
        # grazing angle at each candidate segment midpoint
        u_mid = 0.5 * (u[:-1] + u[1:])[None, :]
        with np.errstate(invalid="ignore"):
            g_mid = np.arccos(np.clip(u_mid / ranges[:, None], 0.0, 1.0))
        cost = np.where(seg, np.abs(g_mid - geom.tilt), np.inf)
        pick = np.argmin(cost, axis=1)
        has = np.any(seg, axis=1)

        idx = np.nonzero(has)[0]
        k = pick[idx]
        u_lo = u[k]  # clearance >= 0 side (steeper)
        u_hi = u[k + 1]  # clearance < 0 side (shallower)
        r_sel = ranges[idx]
        sx = s[0] + 0.0  # keep scalars out of the loop
        for _ in range(_BISECT_ITERS):
            m = 0.5 * (u_lo + u_hi)
            zm = sample_height_unchecked(field, sx + m * jxy[0], s[1] + m * jxy[1])
            fm = zm - s[2] + np.sqrt(np.maximum(r_sel**2 - m * m, 0.0))
            ge = fm >= 0.0
            u_lo = np.where(ge, m, u_lo)
            u_hi = np.where(ge, u_hi, m)
        u_star = 0.5 * (u_lo + u_hi)
        dz_star = np.sqrt(np.maximum(r_sel**2 - u_star**2, 0.0))
        grazing[idx] = np.arctan2(dz_star, u_star)
        hit[idx, 0] = s[0] + u_star * jxy[0]
        hit[idx, 1] = s[1] + u_star * jxy[1]
        hit[idx, 2] = s[2] - dz_star

        # occlusion: a nearer profile sample subtending a higher angle shadows
        e_star = np.arctan2(hit[idx, 2] - s[2], u_star)
        k_star = np.minimum((u_star / du).astype(int), len(horizon) - 1)
        visible[idx] = horizon[k_star] <= e_star + _SHADOW_TOL

    in_gate = has & (grazing >= geom.grazing_min - 1e-12) & (grazing <= geom.grazing_max + 1e-12)
    n2d = np.full((n, 2), np.nan)
    cos_inc = np.zeros(n)
    if np.any(has):
        idx = np.nonzero(has)[0]
        n2d[idx], cos_inc[idx] = _incidence_and_normal(
            field, rot, side_sign(geom.side), hit[idx], grazing[idx]
        )
    return ArcTrace(ranges, grazing, hit, has, visible, in_gate, cos_inc, n2d)


def _trace_arcs_general(field, pose, geom, rot) -> ArcTrace:
    """Dense angular sweep for arbitrary attitude (one plane per ping side)."""
    s = pose.position
    lat = side_sign(geom.side)
    jvec = lat * rot[:, 1]
    kvec = rot[:, 2]
    ranges = geom.bin_ranges()
    n = len(ranges)

    z_vals = field.heights[np.isfinite(field.heights)]
    z_min = float(z_vals.min()) if z_vals.size else -np.inf
    z_max = float(z_vals.max()) if z_vals.size else np.inf

    # p_z(g) = s_z + r*(cos(g)*j_z - sin(g)*k_z) = s_z - r*A*sin(g - phi)
    amp = math.hypot(jvec[2], kvec[2])
    phi = math.atan2(jvec[2], kvec[2])
    with np.errstate(invalid="ignore"):
        lo = phi + np.arcsin(np.clip((s[2] - z_max) / (ranges * amp), -1.0, 1.0))
        hi = phi + np.arcsin(np.clip((s[2] - z_min) / (ranges * amp), -1.0, 1.0))
    lo = np.clip(lo - 2 * _SWEEP_STEP, 1e-4, math.pi / 2)
    hi = np.clip(hi + 2 * _SWEEP_STEP, 1e-4, math.pi / 2)
    feasible = (s[2] - z_max) / ranges <= amp  # arc dips below the highest terrain
    width = np.where(feasible, hi - lo, 0.0)
    steps = int(np.ceil(width.max() / _SWEEP_STEP)) + 1 if np.any(feasible) else 0

    grazing = np.full(n, np.nan)
    hit = np.full((n, 3), np.nan)
    has = np.zeros(n, dtype=bool)
    visible = np.zeros(n, dtype=bool)

    if steps > 1:
        t = np.linspace(0.0, 1.0, steps)
        g = lo[:, None] + t[None, :] * width[:, None]
        px = s[0] + ranges[:, None] * (np.cos(g) * jvec[0] - np.sin(g) * kvec[0])
        py = s[1] + ranges[:, None] * (np.cos(g) * jvec[1] - np.sin(g) * kvec[1])
        pz = s[2] + ranges[:, None] * (np.cos(g) * jvec[2] - np.sin(g) * kvec[2])
        clearance = sample_height_masked(field, px, py) - pz
        seg = (clearance[:, :-1] < 0.0) & (clearance[:, 1:] >= 0.0)
        seg &= feasible[:, None]

        if np.any(seg):
            g_mid = 0.5 * (g[:, :-1] + g[:, 1:])
            cost = np.where(seg, np.abs(g_mid - geom.tilt), np.inf)
            pick = np.argmin(cost, axis=1)
            has = np.any(seg, axis=1)
            idx = np.nonzero(has)[0]
            g_lo = g[idx, pick[idx]]
            g_hi = g[idx, pick[idx] + 1]
            r_sel = ranges[idx]
            for _ in range(_BISECT_ITERS):
                m = 0.5 * (g_lo + g_hi)
                pm = (
                    s
                    + r_sel[:, None]
                    * (np.cos(m)[:, None] * jvec - np.sin(m)[:, None] * kvec)
                )
                fm = sample_height_masked(field, pm[:, 0], pm[:, 1]) - pm[:, 2]
                lt = ~(fm >= 0.0)  # NaN treated as still-above, shrink from below
                g_lo = np.where(lt, m, g_lo)
                g_hi = np.where(lt, g_hi, m)
            g_star = 0.5 * (g_lo + g_hi)
            grazing[idx] = g_star
            hit[idx] = s + r_sel[:, None] * (
                np.cos(g_star)[:, None] * jvec - np.sin(g_star)[:, None] * kvec
            )
            visible[idx] = _visible_by_ray_march(field, s, hit[idx], r_sel)

    in_gate = has & (grazing >= geom.grazing_min - 1e-12) & (grazing <= geom.grazing_max + 1e-12)
    n2d = np.full((n, 2), np.nan)
    cos_inc = np.zeros(n)
    if np.any(has):
        idx = np.nonzero(has)[0]
        n2d[idx], cos_inc[idx] = _incidence_and_normal(
            field, rot, side_sign(geom.side), hit[idx], grazing[idx]
        )
    return ArcTrace(ranges, grazing, hit, has, visible, in_gate, cos_inc, n2d)


def _visible_by_ray_march(field, sensor, hits, ranges):
    """March each sensor->hit segment; occluded when terrain rises above it."""
    margin = 1.5 * field.cell
    out = np.ones(len(hits), dtype=bool)
    steps = max(int(np.ceil(ranges.max() / (field.cell / 2.0))), 2)
    t = np.linspace(0.0, 1.0, steps)[None, :]
    seg = hits - sensor
    pts = sensor + t[:, :, None] * seg[:, None, :]
    along = t * ranges[:, None]
    z_terrain = sample_height_masked(field, pts[:, :, 0], pts[:, :, 1])
    above = z_terrain > pts[:, :, 2] + 1e-9
    near_hit = along > (ranges[:, None] - margin)
    blocked = np.any(above & ~near_hit & ~np.isnan(z_terrain), axis=1)
    out[blocked] = False
    return out


# ---------------------------------------------------------------------------
# forward intensity model

def simulate_ping(
    field: HeightField,
    pose: Pose,
    geom: SonarGeometry,
    cfg: SurveyConfig,
    rng: np.random.Generator | None = None,
    index: int = 0,
) -> Ping:
    """Simulate one recorded ping side over the reference field.

    Echo level is gain * cos^2(projected incidence) at each bin's arc
    crossing; occluded, in-water, and off-field bins sit at the noise floor.
    Validity additionally requires the crossing grazing angle inside the
    vertical beam gate and an ideal echo above the noise floor, and is
    independent of the multiplicative noise draw.
    """
    trace = trace_arcs(field, pose, geom)
    floor = cfg.noise_floor * cfg.gain
    lit = trace.has_crossing & trace.visible
    ideal = np.where(lit, cfg.gain * trace.cos_incidence**2, floor)
    ideal = np.maximum(ideal, floor)
    valid = lit & trace.in_gate & (ideal > floor)

    intensity = ideal
    if cfg.intensity_noise > 0.0:
        if rng is None:
            raise ValueError("noisy simulation needs a random generator")
        intensity = ideal * (1.0 + cfg.intensity_noise * rng.standard_normal(len(ideal)))
        intensity = np.maximum(intensity, 0.0)
    return Ping(index=index, pose=pose, geom=geom, intensity=intensity, valid=valid)


def simulate_altimeter(
    field: HeightField,
    pose: Pose,
    cfg: SurveyConfig,
    rng: np.random.Generator | None = None,
) -> AltimeterReading | None:
    """Seafloor point straight below the sensor, or None off the grid."""
    z = sample_height_masked(field, pose.position[0], pose.position[1])
    if np.isnan(z):
        return None
    z = float(z)
    if cfg.altimeter_noise > 0.0:
        if rng is None:
            raise ValueError("noisy simulation needs a random generator")
        z += cfg.altimeter_noise * float(rng.standard_normal())
    return AltimeterReading(np.array([pose.position[0], pose.position[1], z]))


# ---------------------------------------------------------------------------
# survey planning and simulation

def plan_lawnmower(cfg: SurveyConfig, extent) -> list[list[Pose]]:
    """Boustrophedon line plan covering a rectangular extent.

    Returns ordered lists of poses, one per line; alternate lines run in
    opposite directions. With cfg.crossing a second, perpendicular set
    follows. cfg.num_lines caps the total (split evenly across the two sets).
    """
    x_min, x_max, y_min, y_max = extent
    if x_max <= x_min or y_max <= y_min:
        raise ValueError("degenerate survey extent")

    budgets: list[int | None] = [None]
    headings = [cfg.heading]
    if cfg.crossing:
        headings.append(cfg.heading + math.pi / 2.0)
        if cfg.num_lines is not None:
            budgets = [(cfg.num_lines + 1) // 2, cfg.num_lines // 2]
        else:
            budgets = [None, None]
    elif cfg.num_lines is not None:
        budgets = [cfg.num_lines]

    corners = np.array(
        [[x_min, y_min], [x_min, y_max], [x_max, y_min], [x_max, y_max]]
    )
    lines: list[list[Pose]] = []
    for heading, budget in zip(headings, budgets):
        d = np.array([math.cos(heading), math.sin(heading)])
        p = np.array([-d[1], d[0]])
        span_d = corners @ d
        span_p = corners @ p
        n_fit = int(math.floor((span_p.max() - span_p.min()) / cfg.line_spacing))
        n_lines = n_fit if budget is None else min(n_fit, budget)
        n_pings = int(math.floor((span_d.max() - span_d.min()) / cfg.ping_spacing))
        for i in range(n_lines):
            off = span_p.min() + (i + 0.5) * cfg.line_spacing
            stations = span_d.min() + (np.arange(n_pings) + 0.5) * cfg.ping_spacing
            if i % 2 == 1:
                stations = stations[::-1]
            yaw = heading if i % 2 == 0 else heading + math.pi
            poses = []
            for sdist in stations:
                xy = sdist * d + off * p
                if not (x_min <= xy[0] <= x_max and y_min <= xy[1] <= y_max):
                    continue
                poses.append(
                    Pose.from_yaw_pitch_roll(
                        [xy[0], xy[1], cfg.sensor_z], yaw
                    )
                )
            if poses:
                lines.append(poses)
    return lines


def simulate_survey(field: HeightField, cfg: SurveyConfig) -> list[SurveyLine]:
    """Plan and simulate a full survey; deterministic for a fixed seed."""
    rng = np.random.default_rng(cfg.seed)
    geoms = {side: cfg.geometry(side) for side in (STARBOARD, PORT)}
    out = []
    for poses in plan_lawnmower(cfg, field.extent):
        line = SurveyLine()
        for k, pose in enumerate(poses):
            for side in (STARBOARD, PORT):
                line.pings.append(
                    simulate_ping(field, pose, geoms[side], cfg, rng, index=k)
                )
            alt = simulate_altimeter(field, pose, cfg, rng)
            if alt is not None:
                line.altimeter.append(alt)
        out.append(line)
    return out


# ---------------------------------------------------------------------------
# survey file I/O

def write_survey(lines: list[SurveyLine], path) -> None:
    """Line-oriented text dump of a survey.

    Per ping: a PING header, an intensity row, and a validity row; altimeter
    readings interleave as ALT records. Line boundaries are implied by the
    per-line ping index restarting at zero.
    """
    with open(path, "w", newline="\n") as f:
        for line in lines:
            alts = iter(line.altimeter)
            last_index = None
            for ping in line.pings:
                if last_index is not None and ping.index != last_index:
                    _write_alt(f, alts, 1)
                last_index = ping.index
                p = ping.pose.position
                q = ping.pose.quaternion
                g = ping.geom
                f.write(
                    f"PING {ping.index} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} "
                    f"{q[0]:.17g} {q[1]:.17g} {q[2]:.17g} {q[3]:.17g} "
                    f"{g.side} {g.first_range:.17g} {g.resolution:.17g} {g.nbins}\n"
                )
                f.write(" ".join(f"{v:.17g}" for v in ping.intensity) + "\n")
                f.write(" ".join("1" if v else "0" for v in ping.valid) + "\n")
            _write_alt(f, alts, None)


def _write_alt(f, alts, limit):
    n = 0
    for alt in alts:
        p = alt.point
        f.write(f"ALT {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        n += 1
        if limit is not None and n >= limit:
            break


def read_survey(path, tilt: float | None = None, aperture: float | None = None) -> list[SurveyLine]:
    """Parse a survey file back into lines of pings and altimeter readings.

    The file format does not carry beam tilt/aperture, so callers supply them
    (defaults match SonarGeometry). A new survey line starts whenever the ping
    index decreases or a (index, side) pair repeats.
    """
    with open(path) as f:
        return parse_survey_rows(f.read().splitlines(), tilt, aperture)


def parse_survey_rows(
    raw: list[str],
    tilt: float | None = None,
    aperture: float | None = None,
    line_numbers: list[int] | None = None,
) -> list[SurveyLine]:
    """Survey parser over raw text rows; line_numbers maps rows back to the
    originating file lines when the caller pre-filtered an extended format."""

    def ln(j: int) -> int:
        return line_numbers[j] + 1 if line_numbers is not None else j + 1

    kw = {}
    if tilt is not None:
        kw["tilt"] = tilt
    if aperture is not None:
        kw["aperture"] = aperture

    lines: list[SurveyLine] = []
    current: SurveyLine | None = None
    seen: set[tuple[int, str]] = set()
    last_index = -1

    i = 0
    while i < len(raw):
        parts = raw[i].split()
        if not parts:
            i += 1
            continue
        tag = parts[0]
        if tag == "PING":
            if len(parts) != 13:
                raise SurveyFormatError(f"line {ln(i)}: PING record needs 12 fields")
            try:
                k = int(parts[1])
                nums = [float(v) for v in parts[2:9]]
                first_range = float(parts[10])
                resolution = float(parts[11])
                nbins = int(parts[12])
            except ValueError:
                raise SurveyFormatError(f"line {ln(i)}: non-numeric PING field") from None
            side = parts[9]
            if side not in (PORT, STARBOARD):
                raise SurveyFormatError(f"line {ln(i)}: unknown side {side!r}")
            if i + 2 >= len(raw):
                raise SurveyFormatError(f"line {ln(i)}: missing intensity/validity rows")
            try:
                intensity = np.array([float(v) for v in raw[i + 1].split()])
            except ValueError:
                raise SurveyFormatError(f"line {ln(i + 1)}: non-numeric intensity") from None
            vparts = raw[i + 2].split()
            if not set(vparts) <= {"0", "1"}:
                raise SurveyFormatError(f"line {ln(i + 2)}: validity row must be 0/1 flags")
            valid = np.array([v == "1" for v in vparts])
            if len(intensity) != nbins or len(valid) != nbins:
                raise SurveyFormatError(
                    f"line {ln(i + 1)}: expected {nbins} per-bin values, "
                    f"got {len(intensity)}/{len(valid)}"
                )
            if current is None or k < last_index or (k, side) in seen:
                current = SurveyLine()
                lines.append(current)
                seen = set()
            seen.add((k, side))
            last_index = k
            geom = SonarGeometry(
                side=side,
                resolution=resolution,
                nbins=nbins,
                first_range=first_range,
                **kw,
            )
            pose = Pose(np.array(nums[0:3]), np.array(nums[3:7]))
            current.pings.append(
                Ping(index=k, pose=pose, geom=geom, intensity=intensity, valid=valid)
            )
            i += 3
        elif tag == "ALT":
            if len(parts) != 4:
                raise SurveyFormatError(f"line {ln(i)}: ALT record needs 3 fields")
            try:
                pt = np.array([float(v) for v in parts[1:4]])
            except ValueError:
                raise SurveyFormatError(f"line {ln(i)}: non-numeric ALT field") from None
            if current is None:
                current = SurveyLine()
                lines.append(current)
            current.altimeter.append(AltimeterReading(pt))
            i += 1
        else:
            raise SurveyFormatError(f"line {ln(i)}: unknown record {tag!r}")
    return lines
