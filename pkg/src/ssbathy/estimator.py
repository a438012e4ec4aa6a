"""Per-bin surface normal estimation from sidescan intensity.

Two inverse sensor models share one contract: given a window of recorded
intensities, a flat-floor grazing prior per bin (from the first bottom
return), and a validity mask, produce the lateral component of the projected
surface normal per bin. The component is side-local: positive means the
surface tilts away from the sonar, so port and starboard share one sign
convention and an along-track flip of a window only has to swap its side
label. Multiply by the side sign to land in the body frame.

The closed-form model inverts the square-cosine echo law under a Lambertian
assumption; the learned model is a small 1-D convolutional stack over the
bin axis trained with a normal-aware loss plus total-variation smoothing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .draping import TrainingWindow, estimate_altitude, flat_prior_grazing
from .evaluation import normal_metrics
from .geometry import side_sign
from .nn import (
    AdamState,
    NumericalFailure,
    Tensor,
    conv1d,
    maximum,
    minimum,
    smooth_l1,
)
from .survey import Ping


# ---------------------------------------------------------------------------
# closed-form Lambertian inversion

def lambertian_invert(intensity, gain: float, grazing):
    """Invert the square-cosine echo law for the lateral normal component.

    Returns (nhat, low_confidence). The incidence angle follows from
    arccos(sqrt(intensity/gain)); of the two surface tilts consistent with
    it, the smaller-magnitude one wins (flat-floor prior). nhat is the sine
    of that tilt, positive tilting away from the sonar. Bins brighter than
    the gain clip to normal incidence and raise the low-confidence flag.
    """
    intensity = np.asarray(intensity, dtype=float)
    grazing = np.asarray(grazing, dtype=float)
    if gain <= 0:
        raise ValueError("gain must be positive")
    if np.any(intensity < 0):
        raise ValueError("intensity must be nonnegative")
    if np.any((grazing <= 0) | (grazing >= np.pi / 2)):
        raise ValueError("grazing angle must lie strictly inside (0, pi/2)")
    ratio = intensity / gain
    low_confidence = ratio > 1.0
    incidence = np.arccos(np.sqrt(np.minimum(ratio, 1.0)))
    toward = grazing - np.pi / 2 + incidence
    away = grazing - np.pi / 2 - incidence
    tilt = np.where(np.abs(toward) <= np.abs(away), toward, away)
    return np.sin(tilt), low_confidence


# ---------------------------------------------------------------------------
# losses

@dataclass
class LossConfig:
    """Normal-aware loss shape: smooth-l1 transition and TV weights.

    The per-pixel weight is alpha + lambda with alpha = |gt| (steep truth
    weighs more) and lambda = 1 - min(pred+1, gt+1)/max(pred+1, gt+1)
    (relative disagreement keeps gradients alive on easy flat regions).
    """

    beta: float = 1.0
    tv_across: float = 1e-3
    tv_along: float = 1e-3

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("smooth-l1 transition must be positive")
        if self.tv_across < 0 or self.tv_along < 0:
            raise ValueError("TV weights must be nonnegative")


def normal_aware_loss(pred: Tensor, gt, mask, beta: float = 1.0) -> Tensor:
    """Weighted smooth-l1 between predicted and true lateral normals.

    Mean over valid pixels of (alpha + lambda) * smooth_l1(pred - gt).
    """
    gt = np.asarray(gt, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise ValueError("normal-aware loss needs at least one valid pixel")
    m = mask.astype(float)
    alpha = np.abs(gt) * m
    p1 = pred + 1.0
    g1 = Tensor(gt + 1.0)
    lam = -(minimum(p1, g1) / maximum(p1, g1)) + 1.0
    weight = lam * m + alpha
    return (weight * smooth_l1(pred - Tensor(gt), beta)).sum() / count


def tv_penalty(pred: Tensor, mask, axis: int) -> Tensor:
    """Mean absolute difference of adjacent valid pixels along one axis."""
    mask = np.asarray(mask, dtype=bool)
    ndim = len(pred.data.shape)
    axis = axis % ndim
    lo = tuple(
        slice(None) if a != axis else slice(None, -1) for a in range(ndim)
    )
    hi = tuple(slice(None) if a != axis else slice(1, None) for a in range(ndim))
    pair = mask[lo] & mask[hi]
    count = int(np.count_nonzero(pair))
    if count == 0:
        return Tensor(0.0)
    d = (pred[hi] - pred[lo]).abs()
    return (d * pair.astype(float)).sum() / count


# ---------------------------------------------------------------------------
# learned estimator

class EstimatorFormatError(ValueError):
    """Raised for malformed estimator parameter files."""


_MAGIC = b"BSN1"


class LearnedEstimator:
    """Two 7-tap conv layers over the bin axis plus a pointwise head.

    Inputs are two channels per bin: normalized intensity and the flat-floor
    grazing prior. Output is the side-local lateral normal per bin. The
    whole stack stays around 2k parameters.
    """

    def __init__(self, weights, biases, norm_mean: float, norm_std: float):
        if len(weights) != 3 or len(biases) != 3:
            raise ValueError("estimator stack has exactly three layers")
        self.w = [t if isinstance(t, Tensor) else Tensor(t, requires_grad=True) for t in weights]
        self.b = [t if isinstance(t, Tensor) else Tensor(t, requires_grad=True) for t in biases]
        self.norm_mean = float(norm_mean)
        self.norm_std = float(norm_std)

    @property
    def hidden(self) -> int:
        return self.w[0].data.shape[0]

    @property
    def taps(self) -> int:
        return self.w[0].data.shape[2]

    @property
    def params(self) -> list:
        return [*self.w, *self.b]

    @property
    def param_count(self) -> int:
        return sum(p.data.size for p in self.params)

    def features(self, intensity, grazing_prior) -> np.ndarray:
        """(rows, 2, bins) input stack from raw per-bin arrays."""
        i = (np.asarray(intensity, dtype=float) - self.norm_mean) / self.norm_std
        g = np.asarray(grazing_prior, dtype=float)
        return np.stack([i, g], axis=-2)

    def forward(self, x: Tensor) -> Tensor:
        """(rows, 2, bins) features to (rows, bins) lateral normals."""
        h = conv1d(x, self.w[0], self.b[0]).relu()
        h = conv1d(h, self.w[1], self.b[1]).relu()
        out = conv1d(h, self.w[2], self.b[2])
        rows, _, bins = out.data.shape
        return out.reshape((rows, bins))

    def predict(self, intensity, grazing_prior, valid):
        """Inference on one window or ping block; returns (nhat, valid)."""
        intensity = np.atleast_2d(np.asarray(intensity, dtype=float))
        grazing = np.atleast_2d(np.asarray(grazing_prior, dtype=float))
        valid = np.atleast_2d(np.asarray(valid, dtype=bool))
        x = Tensor(self.features(intensity, grazing))
        nhat = self.forward(x).data
        return nhat, valid & np.isfinite(nhat)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<II", self.hidden, self.taps))
            f.write(struct.pack("<dd", self.norm_mean, self.norm_std))
            for p in self.params:
                f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "LearnedEstimator":
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != _MAGIC:
            raise EstimatorFormatError("bad magic; not an estimator parameter file")
        if len(blob) < 4 + 8 + 16:
            raise EstimatorFormatError("truncated estimator header")
        hidden, taps = struct.unpack_from("<II", blob, 4)
        if not 1 <= hidden <= 4096 or not 1 <= taps <= 255 or taps % 2 == 0:
            raise EstimatorFormatError(f"implausible layer shape ({hidden}, {taps})")
        mean, std = struct.unpack_from("<dd", blob, 12)
        shapes = [
            (hidden, 2, taps),
            (hidden, hidden, taps),
            (1, hidden, 1),
            (hidden,),
            (hidden,),
            (1,),
        ]
        need = 28 + 8 * sum(int(np.prod(s)) for s in shapes)
        if len(blob) != need:
            raise EstimatorFormatError(
                f"parameter block is {len(blob)} bytes, expected {need}"
            )
        off = 28
        arrays = []
        for s in shapes:
            n = int(np.prod(s))
            arrays.append(
                np.frombuffer(blob, dtype="<f8", count=n, offset=off)
                .reshape(s)
                .astype(float)
            )
            off += 8 * n
        return cls(arrays[:3], arrays[3:], mean, std)


def init_learned_estimator(
    seed: int = 0, hidden: int = 16, taps: int = 7,
    norm_mean: float = 0.0, norm_std: float = 1.0,
) -> LearnedEstimator:
    rng = np.random.default_rng(seed)

    def layer(cout, cin, k):
        return rng.normal(0.0, np.sqrt(2.0 / (cin * k)), size=(cout, cin, k))

    weights = [layer(hidden, 2, taps), layer(hidden, hidden, taps), layer(1, hidden, 1)]
    biases = [np.zeros(hidden), np.zeros(hidden), np.zeros(1)]
    return LearnedEstimator(weights, biases, norm_mean, norm_std)


# ---------------------------------------------------------------------------
# training

@dataclass
class EstimatorTrainConfig:
    epochs: int = 60
    batch_windows: int = 64
    lr: float = 2e-4
    val_fraction: float = 0.2
    seed: int = 0
    hidden: int = 16
    taps: int = 7

    def __post_init__(self):
        if self.epochs < 1 or self.batch_windows < 1:
            raise ValueError("epochs and batch size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def _window_group(w: TrainingWindow):
    """Split key that keeps a window and its flipped twin together."""
    origin = w.side
    if w.flipped:
        origin = "port" if origin == "starboard" else "starboard"
    return (w.line_index, origin, w.start)


def _batch_loss(est, batch, loss_cfg, with_tv):
    x = Tensor(np.concatenate([est.features(w.intensity, w.grazing_prior) for w in batch]))
    gt = np.concatenate([w.target for w in batch])
    mask = np.concatenate([w.mask for w in batch])
    pred = est.forward(x)
    loss = normal_aware_loss(pred, gt, mask, loss_cfg.beta)
    if with_tv:
        # regroup rows by window so along-track pairs never span windows
        height = batch[0].intensity.shape[0]
        shape = (len(batch), height, pred.data.shape[1])
        pred3 = pred.reshape(shape)
        mask3 = mask.reshape(shape)
        if loss_cfg.tv_along > 0:
            loss = loss + tv_penalty(pred3, mask3, axis=1) * loss_cfg.tv_along
        if loss_cfg.tv_across > 0:
            loss = loss + tv_penalty(pred3, mask3, axis=2) * loss_cfg.tv_across
    return pred, gt, mask, loss


def train_learned_estimator(
    windows: list[TrainingWindow],
    loss_cfg: LossConfig | None = None,
    train_cfg: EstimatorTrainConfig | None = None,
    estimator: "LearnedEstimator | None" = None,
    on_epoch=None,
):
    """Fit the conv stack on draped training windows.

    Adam with a linearly decayed learning rate; loss is the normal-aware
    term plus TV along both axes, normalized per batch of valid pixels.
    Returns (estimator, history); history rows carry train/validation loss
    plus validation error statistics (MAE, shifted relative error, RMSE and
    the three threshold accuracies) per epoch. Pass an existing estimator to
    continue training from its weights instead of a fresh initialization
    (its stored normalization is kept; cfg.hidden/taps are ignored), and
    on_epoch to receive each history row as soon as it is complete.
    Divergence raises NumericalFailure with the last finite parameter state
    attached as .last_state.
    """
    loss_cfg = loss_cfg or LossConfig()
    cfg = train_cfg or EstimatorTrainConfig()
    windows = [w for w in windows if np.any(w.mask)]
    if not windows:
        raise ValueError("no training windows with any valid pixel")

    rng = np.random.default_rng(cfg.seed)
    groups = sorted({_window_group(w) for w in windows})
    order = rng.permutation(len(groups))
    n_val = int(round(cfg.val_fraction * len(groups)))
    val_groups = {groups[i] for i in order[:n_val]}
    train = [w for w in windows if _window_group(w) not in val_groups]
    val = [w for w in windows if _window_group(w) in val_groups]
    if not train:
        raise ValueError("validation split swallowed every window")

    if estimator is None:
        pixels = np.concatenate([w.intensity[w.mask] for w in train])
        mean = float(pixels.mean())
        std = float(max(pixels.std(), 1e-6))
        est = init_learned_estimator(cfg.seed, cfg.hidden, cfg.taps, mean, std)
    else:
        est = estimator
    adam = AdamState(est.params, lr=cfg.lr)

    snapshot = [p.data.copy() for p in est.params]
    history = []
    for epoch in range(cfg.epochs):
        adam.lr = cfg.lr * (1.0 - epoch / cfg.epochs)
        order = rng.permutation(len(train))
        total = 0.0
        seen = 0
        for s in range(0, len(order), cfg.batch_windows):
            batch = [train[i] for i in order[s : s + cfg.batch_windows]]
            _, _, _, loss = _batch_loss(est, batch, loss_cfg, with_tv=True)
            value = float(loss.data)
            if not np.isfinite(value):
                err = NumericalFailure(
                    f"training loss became non-finite at epoch {epoch}"
                )
                err.last_state = snapshot
                raise err
            snapshot = [p.data.copy() for p in est.params]
            adam.zero_grad()
            loss.backward()
            try:
                adam.step()
            except NumericalFailure as raw:
                err = NumericalFailure(str(raw))
                err.last_state = snapshot
                raise err from None
            total += value * len(batch)
            seen += len(batch)

        row = {
            "epoch": epoch,
            "train_loss": total / max(seen, 1),
            "val_loss": float("nan"),
            "val_mae": float("nan"),
            "val_rel": float("nan"),
            "val_rmse": float("nan"),
            "val_acc1": float("nan"),
            "val_acc2": float("nan"),
            "val_acc3": float("nan"),
            "lr": adam.lr,
        }
        if val:
            pred, gt, mask, vloss = _batch_loss(est, val, loss_cfg, with_tv=False)
            row["val_loss"] = float(vloss.data)
            err = np.abs(pred.data - gt)[mask]
            row["val_mae"] = float(err.mean()) if err.size else float("nan")
            try:
                m = normal_metrics(pred.data, gt, mask)
            except ValueError:
                m = None
            if m is not None:
                row["val_rel"] = m.rel
                row["val_rmse"] = m.rmse
                row["val_acc1"] = m.acc1
                row["val_acc2"] = m.acc2
                row["val_acc3"] = m.acc3
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return est, history


# ---------------------------------------------------------------------------
# shared prediction contract

def predict(estimator, intensity, grazing_prior, valid):
    """Full 2-D normals from any estimator implementing .predict.

    Clamps the lateral component to [-1, 1], completes the upward
    hemisphere, and propagates invalidity: invalid bins carry NaN normals.
    """
    nhat, ok = estimator.predict(intensity, grazing_prior, valid)
    nhat = np.clip(nhat, -1.0, 1.0)
    n2d = np.stack([nhat, np.sqrt(1.0 - nhat**2)], axis=-1)
    n2d[~ok] = np.nan
    return n2d, ok


class LambertianEstimator:
    """Closed-form inversion behind the shared estimator contract."""

    def __init__(self, gain: float, trust_bright: bool = False):
        if gain <= 0:
            raise ValueError("gain must be positive")
        self.gain = gain
        self.trust_bright = trust_bright

    def predict(self, intensity, grazing_prior, valid):
        intensity = np.atleast_2d(np.asarray(intensity, dtype=float))
        grazing = np.atleast_2d(np.asarray(grazing_prior, dtype=float))
        valid = np.atleast_2d(np.asarray(valid, dtype=bool))
        eps = 1e-9
        safe = (grazing > eps) & (grazing < np.pi / 2 - eps)
        g = np.where(safe, grazing, np.pi / 4)
        nhat, low_conf = lambertian_invert(np.maximum(intensity, 0.0), self.gain, g)
        ok = valid & safe & np.isfinite(nhat)
        if not self.trust_bright:
            ok &= ~low_conf
        return nhat, ok


# ---------------------------------------------------------------------------
# per-ping normal sources for reconstruction

def normals_gt_ping(draped_ping):
    """Reference-surface normals straight from draping (body frame)."""
    return draped_ping.normal2d.copy(), draped_ping.valid.copy()


def _ping_prior(ping: Ping, noise_bins: int, threshold: float):
    alt = estimate_altitude(ping, noise_bins, threshold)
    return flat_prior_grazing(ping.geom.bin_ranges(), alt)


def normals_estimated_ping(
    estimator, ping: Ping, noise_bins: int = 10, threshold: float = 3.0
):
    """Body-frame normals for one recorded ping through any estimator.

    The grazing prior comes from the ping's own first bottom return; a ping
    with no detectable return yields all-invalid output.
    """
    n = ping.geom.nbins
    try:
        prior = _ping_prior(ping, noise_bins, threshold)
    except ValueError:
        return np.full((n, 2), np.nan), np.zeros(n, dtype=bool)
    n2d, ok = predict(
        estimator, ping.intensity[None, :], prior[None, :], ping.valid[None, :]
    )
    n2d = n2d[0]
    ok = ok[0]
    n2d[:, 0] *= side_sign(ping.geom.side)  # side-local back to body frame
    return n2d, ok
