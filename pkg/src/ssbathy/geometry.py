"""Frames, poses and normal-vector transforms for the sonar pipeline.

Conventions used across the package:

* World frame is ENU: x east, y north, z up. Seafloor heights are negative
  below the sea surface.
* The sonar body frame has x forward, y to starboard, z up. With an identity
  attitude the body axes coincide with the world axes.
* Attitude is carried as a unit quaternion (w, x, y, z); yaw/pitch/roll enter
  only at the I/O boundary and are intrinsic Z-Y-X angles in radians, yaw
  counterclockwise about +z from +x (east).
* A sensing direction at grazing angle g below the horizontal, slant range r,
  is r * R @ [0, +-cos(g), -sin(g)] with + for starboard and - for port.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PORT = "port"
STARBOARD = "starboard"

_UNIT_TOL = 1e-9


def side_sign(side: str) -> float:
    """Lateral sign of a sonar side: +1 for starboard, -1 for port."""
    if side == STARBOARD:
        return 1.0
    if side == PORT:
        return -1.0
    raise ValueError(f"unknown sonar side {side!r}")


def quat_from_yaw_pitch_roll(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for intrinsic Z-Y-X yaw/pitch/roll."""
    cy, sy = math.cos(yaw / 2.0), math.sin(yaw / 2.0)
    cp, sp = math.cos(pitch / 2.0), math.sin(pitch / 2.0)
    cr, sr = math.cos(roll / 2.0), math.sin(roll / 2.0)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix (body -> world) for a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Rigid sensor pose: position in the world frame plus attitude quaternion."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"attitude quaternion norm {n} is not unit")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "quaternion", q / n)

    @classmethod
    def from_yaw_pitch_roll(
        cls, position, yaw: float, pitch: float = 0.0, roll: float = 0.0
    ) -> "Pose":
        return cls(np.asarray(position, dtype=float), quat_from_yaw_pitch_roll(yaw, pitch, roll))

    def rotation(self) -> np.ndarray:
        """Body-to-world rotation matrix; orthonormal with det +1."""
        r = quat_to_matrix(self.quaternion)
        # Quaternion is normalized on construction, so this only guards bugs.
        if abs(np.linalg.det(r) - 1.0) > _UNIT_TOL * 1e3:
            raise ValueError("attitude does not define a proper rotation")
        return r


@dataclass(frozen=True)
class SonarGeometry:
    """Per-side sidescan geometry.

    tilt is the depression angle of the beam center below the horizontal and
    aperture the full vertical beam width, both radians. arc_ambiguity records
    the unresolved position angle along the ensonified arc; the forward model
    collapses it to the vertical plane and it is carried only as metadata.
    """

    side: str
    tilt: float = math.radians(45.0)
    aperture: float = math.radians(60.0)
    resolution: float = 0.25
    nbins: int = 100
    first_range: float = 0.25
    arc_ambiguity: float = 0.0

    def __post_init__(self):
        side_sign(self.side)
        if not 0.0 < self.tilt < math.pi / 2.0 + 1e-12:
            raise ValueError("beam tilt must lie in (0, pi/2]")
        if not 0.0 < self.aperture < math.pi:
            raise ValueError("beam aperture must lie in (0, pi)")
        if self.resolution <= 0.0 or self.first_range <= 0.0:
            raise ValueError("ranges must be positive")
        if self.nbins < 1:
            raise ValueError("need at least one range bin")

    @property
    def grazing_min(self) -> float:
        return self.tilt - self.aperture / 2.0

    @property
    def grazing_max(self) -> float:
        return self.tilt + self.aperture / 2.0

    def bin_ranges(self) -> np.ndarray:
        """Slant range of every bin: first_range + i * resolution."""
        return self.first_range + self.resolution * np.arange(self.nbins)


@dataclass(frozen=True)
class Normal3:
    """Unit surface normal with its reference frame ("world" or "sonar")."""

    vec: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=float).reshape(3)
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("normal is not unit length")
        if self.frame not in ("world", "sonar"):
            raise ValueError(f"unknown frame {self.frame!r}")
        object.__setattr__(self, "vec", v)


@dataclass(frozen=True)
class Normal2:
    """Unit normal projected into the sonar lateral/vertical (y-z) plane."""

    vec: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=float).reshape(2)
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("projected normal is not unit length")
        object.__setattr__(self, "vec", v)


def normal_from_gradient(gx: float, gy: float) -> Normal3:
    """World-frame unit normal of a heightfield with slopes (gx, gy).

    The unnormalized normal is (-gx, -gy, 1); the upward component stays
    positive for any finite slope.
    """
    v = np.array([-gx, -gy, 1.0])
    return Normal3(v / np.linalg.norm(v), frame="world")


def world_to_sonar_normal(normal: Normal3, pose: Pose) -> Normal3:
    """Rotate a world-frame normal into the sonar body frame (R^T n)."""
    if normal.frame != "world":
        raise ValueError("expected a world-frame normal")
    r = pose.rotation()
    return Normal3(r.T @ normal.vec, frame="sonar")


def project_normal_2d(normal: Normal3) -> Normal2:
    """Project a sonar-frame normal onto the y-z plane and renormalize.

    Raises ValueError when the normal is aligned with the sonar x axis and the
    projection is degenerate.
    """
    if normal.frame != "sonar":
        raise ValueError("expected a sonar-frame normal")
    ny, nz = normal.vec[1], normal.vec[2]
    n = math.hypot(ny, nz)
    if n < 1e-9:
        raise ValueError("normal lies along the sonar axis; 2-D projection undefined")
    return Normal2(np.array([ny / n, nz / n]))


def project_normals_2d(normals: np.ndarray) -> np.ndarray:
    """Vector form of project_normal_2d for an (n, 3) sonar-frame array."""
    yz = normals[:, 1:3]
    n = np.linalg.norm(yz, axis=1)
    if np.any(n < 1e-9):
        raise ValueError("normal lies along the sonar axis; 2-D projection undefined")
    return yz / n[:, None]


def isotemporal_point(pose: Pose, geom: SonarGeometry, slant_range: float, grazing: float) -> np.ndarray:
    """World point at a given slant range and grazing angle on one side.

    All points of equal slant range form an arc; collapsing to the vertical
    plane leaves position + r * R @ [0, +-cos(g), -sin(g)].
    """
    if slant_range <= 0.0:
        raise ValueError("slant range must be positive")
    s = side_sign(geom.side)
    d = np.array([0.0, s * math.cos(grazing), -math.sin(grazing)])
    return pose.position + slant_range * (pose.rotation() @ d)


def isotemporal_points(
    position: np.ndarray,
    rotation: np.ndarray,
    lateral_sign: float,
    slant_range: np.ndarray,
    grazing: np.ndarray,
) -> np.ndarray:
    """Broadcast isotemporal_point over arrays of ranges and angles.

    slant_range and grazing must broadcast against each other; returns an
    array of shape broadcast_shape + (3,).
    """
    r = np.asarray(slant_range, dtype=float)
    g = np.asarray(grazing, dtype=float)
    lat = lateral_sign * np.cos(g)
    up = -np.sin(g)
    # direction = lat * R[:,1] + up * R[:,2], broadcast over the grid
    d = lat[..., None] * rotation[:, 1] + up[..., None] * rotation[:, 2]
    return position + r[..., None] * d
