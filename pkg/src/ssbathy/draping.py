"""Draping recorded pings onto a reference surface.

Draping reruns the arc tracer against a reference heightfield to attach a
georeferenced hit point, the projected sonar-frame surface normal, and the
crossing grazing angle to every bin of a recorded ping. The result is the
supervised dataset for normal estimation: network inputs come from the
recording (intensity, flat-floor grazing prior from the first bottom
return), targets from the reference surface.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import PORT, STARBOARD, side_sign
from .heightfield import HeightField
from .survey import (
    Ping,
    SurveyFormatError,
    SurveyLine,
    parse_survey_rows,
    trace_arcs,
)


@dataclass
class DrapedBin:
    slant_range: float
    intensity: float
    valid: bool
    hit: np.ndarray  # (3,) world point, NaN without a crossing
    normal2d: np.ndarray  # (2,) projected sonar-frame surface normal
    grazing: float


@dataclass
class DrapedPing:
    """A recorded ping with per-bin georeferencing from a reference surface."""

    ping: Ping
    hit: np.ndarray
    normal2d: np.ndarray
    grazing: np.ndarray
    valid: np.ndarray

    @property
    def index(self):
        return self.ping.index

    @property
    def pose(self):
        return self.ping.pose

    @property
    def geom(self):
        return self.ping.geom

    @property
    def intensity(self):
        return self.ping.intensity

    def bins(self) -> list[DrapedBin]:
        rs = self.geom.bin_ranges()
        return [
            DrapedBin(
                float(rs[i]),
                float(self.intensity[i]),
                bool(self.valid[i]),
                self.hit[i].copy(),
                self.normal2d[i].copy(),
                float(self.grazing[i]),
            )
            for i in range(self.geom.nbins)
        ]


@dataclass
class DrapedLine:
    pings: list
    altimeter: list


def drape_ping(ping: Ping, field: HeightField) -> DrapedPing:
    """Georeference one ping against the reference field.

    Validity intersects the recorded flag with the reference geometry: the
    arc must cross the surface, unoccluded, inside the beam gate.
    """
    trace = trace_arcs(field, ping.pose, ping.geom)
    valid = ping.valid & trace.has_crossing & trace.visible & trace.in_gate
    hit = trace.hit.copy()
    n2d = trace.normal2d.copy()
    grazing = trace.grazing.copy()
    bad = ~valid
    hit[bad] = np.nan
    n2d[bad] = np.nan
    grazing[bad] = np.nan
    return DrapedPing(ping=ping, hit=hit, normal2d=n2d, grazing=grazing, valid=valid)


def drape_survey(lines: list[SurveyLine], field: HeightField) -> list[DrapedLine]:
    return [
        DrapedLine(
            pings=[drape_ping(p, field) for p in line.pings],
            altimeter=list(line.altimeter),
        )
        for line in lines
    ]


def predict_intensity(draped: DrapedPing, gain: float) -> np.ndarray:
    """Forward echo level from draped normals; NaN where invalid.

    Closes the loop with the simulator: on a noiseless recording this
    reproduces the recorded intensity of every valid bin.
    """
    lat = side_sign(draped.geom.side)
    g = draped.grazing
    v = np.stack([-lat * np.cos(g), np.sin(g)], axis=1)
    cos_inc = np.clip(np.sum(draped.normal2d * v, axis=1), 0.0, 1.0)
    out = gain * cos_inc**2
    out[~draped.valid] = np.nan
    return out


# ---------------------------------------------------------------------------
# first bottom return

def detect_first_bottom_return(
    ping: Ping, noise_bins: int = 10, threshold: float = 3.0
) -> int:
    """Index of the first bin whose echo exceeds the leading-noise estimate.

    The noise level is the mean of the first noise_bins bins (water column at
    any sane altitude); detection is strictly above threshold * noise. A zero
    threshold degenerates to the first strictly positive bin. Raises
    ValueError when nothing exceeds the threshold (all-water ping).
    """
    if noise_bins < 1:
        raise ValueError("need at least one leading bin for the noise estimate")
    if threshold < 0:
        raise ValueError("threshold multiplier must be nonnegative")
    level = float(np.mean(ping.intensity[:noise_bins]))
    above = ping.intensity > threshold * level
    if not np.any(above):
        raise ValueError("no bottom return above the detection threshold")
    return int(np.argmax(above))


def estimate_altitude(ping: Ping, noise_bins: int = 10, threshold: float = 3.0) -> float:
    """Sensor altitude from the first bottom return's slant range."""
    idx = detect_first_bottom_return(ping, noise_bins, threshold)
    return float(ping.geom.bin_ranges()[idx])


def flat_prior_grazing(ranges: np.ndarray, altitude: float) -> np.ndarray:
    """Grazing angle each bin would have over a flat floor at this altitude."""
    return np.arcsin(np.clip(altitude / np.asarray(ranges, dtype=float), 0.0, 1.0))


# ---------------------------------------------------------------------------
# training windows

@dataclass
class TrainingWindow:
    """One estimator training sample: pings_per_window rows of one side.

    target is the side-local lateral normal component: the sonar-frame
    n2d lateral entry times the side sign, so a surface falling away from
    the track is positive on both sides and an along-track flip only has to
    swap the side label.
    """

    intensity: np.ndarray  # (H, W) raw recorded echo
    grazing_prior: np.ndarray  # (H, W) flat-floor grazing from the FBR altitude
    target: np.ndarray  # (H, W) side-local lateral normal
    mask: np.ndarray  # (H, W) usable supervised pixels
    side: str
    line_index: int
    start: int  # first ping row within its side sequence
    flipped: bool = False


def _flip(win: TrainingWindow) -> TrainingWindow:
    other = PORT if win.side == STARBOARD else STARBOARD
    return TrainingWindow(
        intensity=win.intensity[::-1].copy(),
        grazing_prior=win.grazing_prior[::-1].copy(),
        target=win.target[::-1].copy(),
        mask=win.mask[::-1].copy(),
        side=other,
        line_index=win.line_index,
        start=win.start,
        flipped=True,
    )


def make_training_windows(
    draped_lines: list[DrapedLine],
    pings_per_window: int = 32,
    overlap: float = 0.75,
    augment: bool = True,
    noise_bins: int = 10,
    threshold: float = 3.0,
) -> list[TrainingWindow]:
    """Cut draped lines into overlapping fixed-height windows per side.

    Stride is pings_per_window * (1 - overlap); lines shorter than one
    window are skipped with a warning. With augment each window also
    appears flipped along the ping axis (side label swapped, targets
    unchanged by the side-local convention).
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    if pings_per_window < 1:
        raise ValueError("window height must be positive")
    stride = max(1, int(round(pings_per_window * (1.0 - overlap))))

    out: list[TrainingWindow] = []
    for li, line in enumerate(draped_lines):
        for side in (PORT, STARBOARD):
            rows = [p for p in line.pings if p.geom.side == side]
            if not rows:
                continue
            n = len(rows)
            if n < pings_per_window:
                warnings.warn(
                    f"line {li} {side}: {n} pings shorter than window "
                    f"height {pings_per_window}; skipped"
                )
                continue
            nbins = {p.geom.nbins for p in rows}
            if len(nbins) != 1:
                raise ValueError(f"line {li} {side}: mixed bin counts")
            lat = side_sign(side)

            intensity = np.stack([p.intensity for p in rows])
            target = np.stack([lat * p.normal2d[:, 0] for p in rows])
            mask = np.stack([p.valid for p in rows])
            prior = np.empty_like(intensity)
            for i, p in enumerate(rows):
                try:
                    alt = estimate_altitude(p.ping, noise_bins, threshold)
                except ValueError:
                    prior[i] = 0.0
                    mask[i] = False
                    continue
                prior[i] = flat_prior_grazing(p.geom.bin_ranges(), alt)
            mask &= np.isfinite(target)
            target = np.where(mask, target, 0.0)

            for start in range(0, n - pings_per_window + 1, stride):
                sl = slice(start, start + pings_per_window)
                win = TrainingWindow(
                    intensity=intensity[sl].copy(),
                    grazing_prior=prior[sl].copy(),
                    target=target[sl].copy(),
                    mask=mask[sl].copy(),
                    side=side,
                    line_index=li,
                    start=start,
                )
                out.append(win)
                if augment:
                    out.append(_flip(win))
    return out


# ---------------------------------------------------------------------------
# draped dataset I/O

def write_draped(lines: list[DrapedLine], path) -> None:
    """Survey text format extended with per-ping hit and n2d rows."""
    with open(path, "w", newline="\n") as f:
        for line in lines:
            alts = iter(line.altimeter)
            last_index = None
            for dp in line.pings:
                if last_index is not None and dp.index != last_index:
                    _write_alt(f, alts, 1)
                last_index = dp.index
                p = dp.pose.position
                q = dp.pose.quaternion
                g = dp.geom
                f.write(
                    f"PING {dp.index} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} "
                    f"{q[0]:.17g} {q[1]:.17g} {q[2]:.17g} {q[3]:.17g} "
                    f"{g.side} {g.first_range:.17g} {g.resolution:.17g} {g.nbins}\n"
                )
                f.write(" ".join(f"{v:.17g}" for v in dp.intensity) + "\n")
                f.write(" ".join("1" if v else "0" for v in dp.valid) + "\n")
                f.write("hit " + " ".join(f"{v:.17g}" for v in dp.hit.ravel()) + "\n")
                f.write("n2d " + " ".join(f"{v:.17g}" for v in dp.normal2d.ravel()) + "\n")
            _write_alt(f, alts, None)


def _write_alt(f, alts, limit):
    n = 0
    for alt in alts:
        p = alt.point
        f.write(f"ALT {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        n += 1
        if limit is not None and n >= limit:
            break


def read_draped(path, tilt: float | None = None, aperture: float | None = None) -> list[DrapedLine]:
    """Parse a draped dataset; grazing angles are rebuilt from the hits."""
    with open(path) as f:
        raw = f.read().splitlines()

    # strip the draped extension rows, keep a map from ping order to them
    survey_rows: list[str] = []
    row_numbers: list[int] = []
    extras: list[tuple[np.ndarray, np.ndarray]] = []
    i = 0
    while i < len(raw):
        parts = raw[i].split()
        if parts and parts[0] == "PING":
            if i + 4 >= len(raw):
                raise SurveyFormatError(f"line {i + 1}: truncated draped record")
            survey_rows.extend(raw[i : i + 3])
            row_numbers.extend([i, i + 1, i + 2])
            hrow = raw[i + 3].split()
            nrow = raw[i + 4].split()
            if not hrow or hrow[0] != "hit":
                raise SurveyFormatError(f"line {i + 4}: expected hit row")
            if not nrow or nrow[0] != "n2d":
                raise SurveyFormatError(f"line {i + 5}: expected n2d row")
            try:
                nbins = int(parts[12]) if len(parts) == 13 else -1
                hit = np.array([float(v) for v in hrow[1:]]).reshape(nbins, 3)
                n2d = np.array([float(v) for v in nrow[1:]]).reshape(nbins, 2)
            except ValueError:
                raise SurveyFormatError(
                    f"line {i + 4}: malformed hit/n2d rows"
                ) from None
            extras.append((hit, n2d))
            i += 5
        else:
            survey_rows.append(raw[i])
            row_numbers.append(i)
            i += 1

    lines = parse_survey_rows(survey_rows, tilt, aperture, line_numbers=row_numbers)

    out: list[DrapedLine] = []
    k = 0
    for line in lines:
        dl = DrapedLine(pings=[], altimeter=list(line.altimeter))
        for ping in line.pings:
            hit, n2d = extras[k]
            k += 1
            # body-frame hit direction recovers the grazing angle exactly
            rot = ping.pose.rotation()
            d = (hit - ping.pose.position) @ rot
            lat = side_sign(ping.geom.side)
            grazing = np.arctan2(-d[:, 2], lat * d[:, 1])
            grazing[~np.isfinite(hit[:, 0])] = np.nan
            valid = ping.valid & np.isfinite(hit[:, 0])
            dl.pings.append(
                DrapedPing(ping=ping, hit=hit, normal2d=n2d, grazing=grazing, valid=valid)
            )
        out.append(dl)
    return out
