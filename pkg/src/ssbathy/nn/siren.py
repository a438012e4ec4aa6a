"""Sine-activation coordinate MLP for continuous bathymetry.

The network maps normalized (x, y) in [-1, 1]^2 to a normalized height; a
DomainScale carries the affine maps between metric survey coordinates and the
normalized domain. The spatial gradient is computed analytically by a cosine
companion pass built from the same primitive ops, so differentiating the
gradient with respect to the weights is plain reverse-mode on that graph.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

_MAGIC = b"SRN1"


class CheckpointFormatError(ValueError):
    """Raised for unreadable model checkpoint files."""


@dataclass
class DomainScale:
    """Affine maps between metric coordinates/heights and the unit domain."""

    xy_center: np.ndarray  # (2,)
    xy_halfwidth: np.ndarray  # (2,), positive
    z_offset: float
    z_scale: float  # positive

    def __post_init__(self):
        self.xy_center = np.asarray(self.xy_center, dtype=float).reshape(2)
        self.xy_halfwidth = np.asarray(self.xy_halfwidth, dtype=float).reshape(2)
        if np.any(self.xy_halfwidth <= 0.0) or self.z_scale <= 0.0:
            raise ValueError("scale half-widths must be positive")

    def normalize_xy(self, xy: np.ndarray) -> np.ndarray:
        return (np.asarray(xy, dtype=float) - self.xy_center) / self.xy_halfwidth

    def denormalize_xy(self, xy_n: np.ndarray) -> np.ndarray:
        return np.asarray(xy_n, dtype=float) * self.xy_halfwidth + self.xy_center

    def normalize_z(self, z):
        return (np.asarray(z, dtype=float) - self.z_offset) / self.z_scale

    def denormalize_z(self, z_n):
        return np.asarray(z_n, dtype=float) * self.z_scale + self.z_offset

    def gradient_factors(self) -> np.ndarray:
        """d(metric z)/d(metric xy) = factors * d(unit z)/d(unit xy)."""
        return self.z_scale / self.xy_halfwidth


def scale_from_bounds(xy_min, xy_max, z_min, z_max, margin: float = 1.25,
                      min_half_range: float = 0.5) -> DomainScale:
    """DomainScale covering observed bounds with headroom on the height axis.

    The height half-range gets a multiplicative margin and an absolute floor
    so a perfectly flat seafloor still yields a usable scale.
    """
    xy_min = np.asarray(xy_min, dtype=float)
    xy_max = np.asarray(xy_max, dtype=float)
    center = 0.5 * (xy_min + xy_max)
    half = np.maximum(0.5 * (xy_max - xy_min), 1e-6)
    z_off = 0.5 * (z_min + z_max)
    z_half = max(0.5 * (z_max - z_min) * margin, min_half_range)
    return DomainScale(center, half, z_off, z_half)


class SirenModel:
    """Stack of sine layers plus a final affine head, with domain scaling.

    depth counts the sine (hidden) layers; weights[i] has shape (out, in) and
    the activation of layer i is sin(w0_i * (x W^T + b)). w0 is w0_first on
    the input layer and w0_hidden elsewhere; the head applies no sine.
    """

    def __init__(self, weights, biases, w0_first: float, w0_hidden: float, scale: DomainScale):
        if len(weights) != len(biases) or len(weights) < 2:
            raise ValueError("need matching weight/bias lists with >= 2 layers")
        self.weights = [w if isinstance(w, Tensor) else Tensor(w, requires_grad=True) for w in weights]
        self.biases = [b if isinstance(b, Tensor) else Tensor(b, requires_grad=True) for b in biases]
        self.w0_first = float(w0_first)
        self.w0_hidden = float(w0_hidden)
        self.scale = scale

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def width(self) -> int:
        return self.weights[0].data.shape[0]

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def _layer_w0(self, i: int) -> float:
        return self.w0_first if i == 0 else self.w0_hidden

    # -- tape-building passes ---------------------------------------------

    def forward(self, xy_n: np.ndarray) -> Tensor:
        """Normalized heights (batch,) for normalized coordinates (batch, 2)."""
        z = Tensor(np.asarray(xy_n, dtype=float))
        for i in range(self.depth):
            pre = z @ self.weights[i].T + self.biases[i]
            z = (pre * self._layer_w0(i)).sin()
        out = z @ self.weights[-1].T + self.biases[-1]
        return out.reshape(-1)

    def forward_with_gradient(self, xy_n: np.ndarray):
        """Tape pass returning (z, dz/dx, dz/dy), all (batch,) Tensors.

        The derivative channels reuse the shared pre-activations through a
        cosine companion pass, so weight gradients of dz/dx are exact.
        """
        x = Tensor(np.asarray(xy_n, dtype=float))
        batch = x.data.shape[0]
        z = x
        ones = np.ones((batch, 1))
        dx = Tensor(np.concatenate([ones, np.zeros((batch, 1))], axis=1))
        dy = Tensor(np.concatenate([np.zeros((batch, 1)), ones], axis=1))
        for i in range(self.depth):
            w0 = self._layer_w0(i)
            pre = z @ self.weights[i].T + self.biases[i]
            scaled = pre * w0
            z = scaled.sin()
            gain = scaled.cos() * w0
            dx = gain * (dx @ self.weights[i].T)
            dy = gain * (dy @ self.weights[i].T)
        wt = self.weights[-1].T
        z_out = (z @ wt + self.biases[-1]).reshape(-1)
        return z_out, (dx @ wt).reshape(-1), (dy @ wt).reshape(-1)

    # -- fast tape-free passes --------------------------------------------

    def forward_np(self, xy_n: np.ndarray) -> np.ndarray:
        z = np.asarray(xy_n, dtype=float)
        for i in range(self.depth):
            z = np.sin(self._layer_w0(i) * (z @ self.weights[i].data.T + self.biases[i].data))
        return (z @ self.weights[-1].data.T + self.biases[-1].data)[:, 0]

    def forward_gradient_np(self, xy_n: np.ndarray):
        """Numpy-only (z, dz/dx, dz/dy); used by the detached crossing search."""
        z = np.asarray(xy_n, dtype=float)
        batch = z.shape[0]
        dx = np.zeros((batch, 2))
        dx[:, 0] = 1.0
        dy = np.zeros((batch, 2))
        dy[:, 1] = 1.0
        for i in range(self.depth):
            w0 = self._layer_w0(i)
            wt = self.weights[i].data.T
            pre = w0 * (z @ wt + self.biases[i].data)
            z = np.sin(pre)
            gain = w0 * np.cos(pre)
            dx = gain * (dx @ wt)
            dy = gain * (dy @ wt)
        wt = self.weights[-1].data.T
        return (
            (z @ wt + self.biases[-1].data)[:, 0],
            (dx @ wt)[:, 0],
            (dy @ wt)[:, 0],
        )

    # -- metric-space conveniences ----------------------------------------

    def predict_height(self, x, y) -> np.ndarray:
        """Metric heights at metric coordinates (no gradient tracking)."""
        xy = np.stack([np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()], axis=1)
        z_n = self.forward_np(self.scale.normalize_xy(xy))
        return self.scale.denormalize_z(z_n).reshape(np.shape(x))

    def predict_height_gradient(self, x, y):
        """Metric (z, dz/dx, dz/dy) at metric coordinates, tape-free."""
        shape = np.shape(x)
        xy = np.stack([np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()], axis=1)
        z_n, gx_n, gy_n = self.forward_gradient_np(self.scale.normalize_xy(xy))
        fx, fy = self.scale.gradient_factors()
        return (
            self.scale.denormalize_z(z_n).reshape(shape),
            (gx_n * fx).reshape(shape),
            (gy_n * fy).reshape(shape),
        )


def init_siren(
    depth: int = 5,
    width: int = 128,
    w0_first: float = 30.0,
    w0_hidden: float = 1.0,
    scale: DomainScale | None = None,
    seed: int = 0,
    in_dim: int = 2,
) -> SirenModel:
    """Randomly initialized model with the standard sine-net scheme.

    First layer weights are U(-1/in, 1/in); later sine layers U(+-sqrt(6/fan_in)
    / w0) for their own w0 so pre-activation variance is preserved; the affine
    head uses U(+-1/sqrt(fan_in)). Deterministic for a fixed seed.
    """
    if depth < 1 or width < 1:
        raise ValueError("depth and width must be positive")
    rng = np.random.default_rng(seed)
    if scale is None:
        scale = DomainScale(np.zeros(2), np.ones(2), 0.0, 1.0)
    weights, biases = [], []
    fan_in = in_dim
    for i in range(depth):
        if i == 0:
            bound = 1.0 / fan_in
        else:
            bound = np.sqrt(6.0 / fan_in) / w0_hidden
        weights.append(Tensor(rng.uniform(-bound, bound, size=(width, fan_in)), requires_grad=True))
        biases.append(Tensor(rng.uniform(-1.0, 1.0, size=width) / np.sqrt(fan_in), requires_grad=True))
        fan_in = width
    head_bound = 1.0 / np.sqrt(fan_in)
    weights.append(Tensor(rng.uniform(-head_bound, head_bound, size=(1, fan_in)), requires_grad=True))
    biases.append(Tensor(rng.uniform(-head_bound, head_bound, size=1), requires_grad=True))
    return SirenModel(weights, biases, w0_first, w0_hidden, scale)


def save_checkpoint(model: SirenModel, path) -> None:
    """Binary checkpoint: magic, shape/scale header, then raw float64 blocks."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", model.depth, model.width))
        f.write(struct.pack("<dd", model.w0_first, model.w0_hidden))
        s = model.scale
        f.write(
            struct.pack(
                "<6d",
                s.xy_center[0],
                s.xy_center[1],
                s.xy_halfwidth[0],
                s.xy_halfwidth[1],
                s.z_offset,
                s.z_scale,
            )
        )
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w.data, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> SirenModel:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r}; not a model checkpoint")
    off = 4
    try:
        depth, width = struct.unpack_from("<II", blob, off)
        off += 8
        w0_first, w0_hidden = struct.unpack_from("<dd", blob, off)
        off += 16
        cx, cy, hx, hy, z_off, z_scale = struct.unpack_from("<6d", blob, off)
        off += 48
    except struct.error as e:
        raise CheckpointFormatError(f"truncated checkpoint header: {e}") from None
    if depth < 1 or width < 1 or depth > 64 or width > 65536:
        raise CheckpointFormatError(f"implausible model shape {depth}x{width}")
    scale = DomainScale(np.array([cx, cy]), np.array([hx, hy]), z_off, z_scale)

    shapes = [(width, 2)] + [(width, width)] * (depth - 1) + [(1, width)]
    weights, biases = [], []
    for out_dim, in_dim in shapes:
        need = (out_dim * in_dim + out_dim) * 8
        if off + need > len(blob):
            raise CheckpointFormatError("truncated checkpoint parameter block")
        w = np.frombuffer(blob, dtype="<f8", count=out_dim * in_dim, offset=off).reshape(out_dim, in_dim)
        off += out_dim * in_dim * 8
        b = np.frombuffer(blob, dtype="<f8", count=out_dim, offset=off)
        off += out_dim * 8
        weights.append(Tensor(w.copy(), requires_grad=True))
        biases.append(Tensor(b.copy(), requires_grad=True))
    if off != len(blob):
        raise CheckpointFormatError("trailing bytes after checkpoint parameters")
    return SirenModel(weights, biases, w0_first, w0_hidden, scale)
