"""Window extraction, time-based splits, and the Adam training loop."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .affinity import ModelParams, WindowBatch, forward_batch, loss_and_grads, PARAM_FIELDS
from .features import FeatureScaler, SequenceFeaturizer, N_CHANNELS, PAD_VALUE, _DIST_CHANNEL, pair_labels
from .scene import SceneSequence


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass(frozen=True)
class TrainConfig:
    hidden_size: int = 64
    seq_len: int = 10
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    clip_norm: float = 5.0
    window_stride: int = 1

    def validate(self) -> None:
        if min(self.hidden_size, self.seq_len, self.epochs, self.batch_size,
               self.window_stride) <= 0:
            raise ValueError("hidden_size, seq_len, epochs, batch_size, stride must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "seq_len": self.seq_len,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
            "window_stride": self.window_stride,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


# ---------------------------------------------------------------------------
# Window enumeration and batch assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowRef:
    """Locates one training/evaluation window inside a corpus."""

    seq_index: int
    focal_id: int
    end: int            # index of the final timestep of the window


def window_ends(n_steps: int, seq_len: int, stride: int = 1,
                lo: Optional[int] = None, hi: Optional[int] = None) -> list[int]:
    """Final-step indices of full windows, optionally restricted to [lo, hi)."""
    first = seq_len - 1
    lo = first if lo is None else max(lo, first)
    hi = n_steps if hi is None else min(hi, n_steps)
    return [e for e in range(first, n_steps)
            if lo <= e < hi and (e - first) % stride == 0]


def time_split_bounds(n_steps: int, train_frac: float = 0.7,
                      val_frac: float = 0.1) -> tuple[int, int]:
    """Chronological boundaries: ends < q1 train, [q1, q2) validation, >= q2 test.

    Validation sits between training and test so the two stay maximally
    separated in time.
    """
    if not 0 < train_frac < 1 or val_frac < 0 or train_frac + val_frac >= 1:
        raise ValueError("need 0 < train_frac, 0 <= val_frac, train_frac + val_frac < 1")
    q1 = int(np.floor(n_steps * train_frac + 1e-9))
    q2 = int(np.floor(n_steps * (train_frac + val_frac) + 1e-9))
    return q1, q2


def collect_windows(
    seqs: Sequence[SceneSequence],
    seq_len: int,
    stride: int = 1,
    lo: Optional[int] = None,
    hi: Optional[int] = None,
    require_labels: bool = True,
) -> list[WindowRef]:
    """All (scene, focal, end) windows whose focal is present at the end."""
    refs: list[WindowRef] = []
    for s_idx, seq in enumerate(seqs):
        for end in window_ends(len(seq.timesteps), seq_len, stride, lo, hi):
            if require_labels and seq.partition_at(end) is None:
                continue
            for focal in seq.present_ids(end):
                refs.append(WindowRef(s_idx, focal, end))
    return refs


def build_batch(
    seqs: Sequence[SceneSequence],
    refs: Sequence[WindowRef],
    seq_len: int,
    scaler: Optional[FeatureScaler] = None,
    n_slots: Optional[int] = None,
) -> WindowBatch:
    """Stack windows into one padded batch (slot count = max scene n - 1)."""
    if not refs:
        raise ValueError("no windows to build")
    if n_slots is None:
        n_slots = max(seqs[r.seq_index].n for r in refs) - 1
    featurizers: dict[int, SequenceFeaturizer] = {}

    b = len(refs)
    features = np.full((b, seq_len, n_slots, N_CHANNELS), PAD_VALUE, dtype=np.float64)
    mask = np.zeros((b, seq_len, n_slots), dtype=bool)
    targets = np.zeros((b, n_slots), dtype=np.float64)
    valid = np.zeros((b, n_slots), dtype=bool)

    for row, ref in enumerate(refs):
        seq = seqs[ref.seq_index]
        fz = featurizers.get(ref.seq_index)
        if fz is None:
            fz = featurizers[ref.seq_index] = SequenceFeaturizer(seq, scaler)
        tensor, pmask = fz.build(ref.focal_id, ref.end - seq_len + 1, seq_len)
        m = tensor.values.shape[1]
        if m > n_slots:
            raise ValueError(f"scene needs {m} slots but batch has {n_slots}")
        features[row, :, :m] = tensor.values
        mask[row, :, :m] = pmask.values
        y, v = pair_labels(seq, ref.focal_id, ref.end)
        targets[row, :m] = y
        valid[row, :m] = v & pmask.values[-1]
    return WindowBatch(features, mask, targets, valid)


def fit_scaler_on_batch(batch: WindowBatch) -> FeatureScaler:
    """Min-max bounds of the raw distance channel over observed slots."""
    dist = batch.features[:, :, :, _DIST_CHANNEL]
    observed = dist[batch.mask]
    if observed.size == 0:
        raise ValueError("cannot fit scaler: no observed pairs")
    return FeatureScaler(dist_min=float(observed.min()), dist_max=float(observed.max()))


def apply_scaler(batch: WindowBatch, scaler: FeatureScaler) -> WindowBatch:
    """Scale the raw distance channel in place (pads stay at -1)."""
    dist = batch.features[:, :, :, _DIST_CHANNEL]
    scaled = np.where(batch.mask, scaler.scale_distance(dist), PAD_VALUE)
    batch.features[:, :, :, _DIST_CHANNEL] = scaled
    return batch


# ---------------------------------------------------------------------------
# Optimizer and training loop
# ---------------------------------------------------------------------------


class Adam:
    """Per-parameter adaptive steps; state keyed by PARAM_FIELDS."""

    def __init__(self, params: ModelParams, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(getattr(params, k)) for k in PARAM_FIELDS}
        self.v = {k: np.zeros_like(getattr(params, k)) for k in PARAM_FIELDS}

    def step(self, params: ModelParams, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k in PARAM_FIELDS:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / b1c
            v_hat = self.v[k] / b2c
            arr = getattr(params, k)
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def evaluate_loss(params: ModelParams, batch: WindowBatch, chunk: int = 1024) -> float:
    """Mean spec loss per window over a batch."""
    total = 0.0
    n = len(batch)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        preds, _ = forward_batch(params, batch.features[sl], batch.mask[sl])
        resid = np.where(batch.valid[sl], preds - batch.targets[sl], 0.0)
        total += float(np.sum(resid ** 2))
    return total / n


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")


def train(train_batch: WindowBatch, val_batch: Optional[WindowBatch],
          cfg: TrainConfig) -> TrainResult:
    """Fit the affinity model; returns the epoch snapshot with best val loss.

    Deterministic for a fixed config: init, shuffling, and reductions all
    derive from cfg.seed.
    """
    cfg.validate()
    params = ModelParams.init(cfg.hidden_size, train_batch.features.shape[3],
                              seed=np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    opt = Adam(params, lr=cfg.learning_rate)
    result = TrainResult(params=params.copy())

    n = len(train_batch)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            mini = train_batch.take(idx)
            loss, grads = loss_and_grads(params, mini)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}"
                )
            epoch_loss += loss
            for k in grads:
                grads[k] = grads[k] / len(idx)
            clip_gradients(grads, cfg.clip_norm)
            opt.step(params, grads)
        if not params.check_finite():
            raise TrainingDivergedError(f"non-finite parameters after epoch {epoch}")

        train_loss = epoch_loss / n
        val_loss = evaluate_loss(params, val_batch) if val_batch is not None else train_loss
        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            result.params = params.copy()
    return result
