"""Joint recurrent affinity model with masked context pooling.

One shared LSTM cell rolls out over every (focal, other) slot in parallel.
At each step the slot hidden states are masked by presence, averaged into a
scene context vector, and blended back into each slot through a learnable
mixing weight before being concatenated with the next input features. After
the last step a linear head plus sigmoid turns each slot's hidden state into
a pairwise affinity in (0, 1).

Everything is plain numpy in float64; gradients are computed by hand with
backpropagation through time and verified against central finite differences
(see ``grad_check``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .features import N_CHANNELS


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic, dtype-preserving."""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

PARAM_FIELDS = (
    "w_forget", "b_forget",
    "w_input", "b_input",
    "w_output", "b_output",
    "w_cell", "b_cell",
    "w_head", "b_head",
    "mix_logit",
)


@dataclass
class ModelParams:
    """All trainable weights. Gate matrices act on [features; context; hidden]."""

    hidden_size: int
    n_features: int
    w_forget: np.ndarray
    b_forget: np.ndarray
    w_input: np.ndarray
    b_input: np.ndarray
    w_output: np.ndarray
    b_output: np.ndarray
    w_cell: np.ndarray
    b_cell: np.ndarray
    w_head: np.ndarray      # (H,)
    b_head: np.ndarray      # scalar stored as shape-()
    mix_logit: np.ndarray   # scalar stored as shape-()

    @property
    def gate_input_size(self) -> int:
        return self.n_features + 2 * self.hidden_size

    @property
    def context_mix(self) -> float:
        """Blend weight between scene context and own slot state, in (0, 1)."""
        return float(sigmoid(self.mix_logit))

    @classmethod
    def init(cls, hidden_size: int, n_features: int = N_CHANNELS,
             seed: int | np.random.SeedSequence = 0) -> "ModelParams":
        """Uniform +-1/sqrt(fan_in) gate weights, forget bias 1, zero head."""
        rng = np.random.default_rng(seed)
        fan_in = n_features + 2 * hidden_size
        bound = 1.0 / np.sqrt(fan_in)

        def gate():
            return rng.uniform(-bound, bound, size=(hidden_size, fan_in))

        head_bound = 1.0 / np.sqrt(hidden_size)
        return cls(
            hidden_size=hidden_size,
            n_features=n_features,
            w_forget=gate(),
            b_forget=np.ones(hidden_size),
            w_input=gate(),
            b_input=np.zeros(hidden_size),
            w_output=gate(),
            b_output=np.zeros(hidden_size),
            w_cell=gate(),
            b_cell=np.zeros(hidden_size),
            w_head=rng.uniform(-head_bound, head_bound, size=hidden_size),
            b_head=np.zeros(()),
            mix_logit=np.zeros(()),
        )

    def copy(self) -> "ModelParams":
        kwargs = {name: getattr(self, name).copy() for name in PARAM_FIELDS}
        return ModelParams(hidden_size=self.hidden_size, n_features=self.n_features, **kwargs)

    def check_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, name))) for name in PARAM_FIELDS)

    def to_dict(self) -> dict:
        out = {"hidden_size": self.hidden_size, "n_features": self.n_features}
        for name in PARAM_FIELDS:
            out[name] = getattr(self, name).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        kwargs = {name: np.asarray(d[name], dtype=np.float64) for name in PARAM_FIELDS}
        return cls(hidden_size=int(d["hidden_size"]), n_features=int(d["n_features"]), **kwargs)

    @classmethod
    def random(cls, hidden_size: int, n_features: int = N_CHANNELS,
               seed: int | np.random.SeedSequence = 0, scale: float = 0.4) -> "ModelParams":
        """Dense random weights; used by gradient checking, not training."""
        rng = np.random.default_rng(seed)
        params = cls.init(hidden_size, n_features, seed=seed)
        for name in ("w_forget", "w_input", "w_output", "w_cell"):
            setattr(params, name, rng.normal(0.0, scale, getattr(params, name).shape))
        params.w_head = rng.normal(0.0, scale, params.w_head.shape)
        params.b_head = np.asarray(rng.normal(0.0, scale))
        params.mix_logit = np.asarray(rng.normal(0.0, 1.0))
        return params


@dataclass
class WindowBatch:
    """Stacked training windows: features (B,T,m,N), mask (B,T,m), labels (B,m)."""

    features: np.ndarray
    mask: np.ndarray
    targets: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        b, t, m, n = self.features.shape
        if self.mask.shape != (b, t, m):
            raise ValueError(f"mask shape {self.mask.shape} != {(b, t, m)}")
        if self.targets.shape != (b, m) or self.valid.shape != (b, m):
            raise ValueError("targets/valid must have shape (batch, slots)")

    def __len__(self) -> int:
        return self.features.shape[0]

    def take(self, idx: np.ndarray) -> "WindowBatch":
        return WindowBatch(self.features[idx], self.mask[idx], self.targets[idx], self.valid[idx])


@dataclass
class AffinityOutput:
    """Per-slot affinities with validity flags (False = absent at final step)."""

    values: np.ndarray
    valid: np.ndarray


def _check_shapes(params: ModelParams, features: np.ndarray, mask: np.ndarray) -> None:
    if features.ndim != 4:
        raise ValueError(f"expected features of rank 4 (B,T,m,N), got shape {features.shape}")
    b, t, m, n = features.shape
    if n != params.n_features:
        raise ValueError(f"feature dim {n} does not match model n_features {params.n_features}")
    if mask.shape != (b, t, m):
        raise ValueError(f"mask shape {mask.shape} does not match features {(b, t, m)}")
    if t < 1:
        raise ValueError("window must contain at least one timestep")


def _rollout(params: ModelParams, features: np.ndarray, mask: np.ndarray,
             keep_cache: bool, dtype=np.float64):
    """Shared forward pass. Returns (affinities, valid, final hidden, cache).

    ``dtype`` exists so the finite-difference oracle in grad_check can run in
    extended precision; normal use stays float64.
    """
    b, t, m, n = features.shape
    h_size = params.hidden_size
    feats = features.astype(dtype, copy=False)
    mask_f = mask.astype(dtype)
    weights = {name: getattr(params, name).astype(dtype, copy=False) for name in PARAM_FIELDS}
    lam = sigmoid(weights["mix_logit"])

    h = np.zeros((b, m, h_size), dtype=dtype)
    c = np.zeros((b, m, h_size), dtype=dtype)
    cache = [] if keep_cache else None

    for w in range(t):
        # Pooling uses the presence paired with the current hidden state,
        # i.e. the previous record's mask; at w=0 the hidden state is zero
        # and the context contribution vanishes identically.
        pool = mask_f[:, w - 1] if w > 0 else np.zeros((b, m), dtype=dtype)
        g = pool[:, :, None] * h
        denom = pool.sum(axis=1)
        safe = np.maximum(denom, 1.0)
        context = g.sum(axis=1) / safe[:, None]
        o = lam * context[:, None, :] + (1.0 - lam) * g

        x = np.concatenate([feats[:, w], o, h], axis=2)
        f_gate = sigmoid(x @ weights["w_forget"].T + weights["b_forget"])
        i_gate = sigmoid(x @ weights["w_input"].T + weights["b_input"])
        o_gate = sigmoid(x @ weights["w_output"].T + weights["b_output"])
        c_cand = np.tanh(x @ weights["w_cell"].T + weights["b_cell"])
        c_new = f_gate * c + i_gate * c_cand
        tanh_c = np.tanh(c_new)
        h_new = o_gate * tanh_c
        if keep_cache:
            cache.append((x, f_gate, i_gate, o_gate, c_cand, tanh_c, c, pool, safe))
        h, c = h_new, c_new

    logits = h @ weights["w_head"] + weights["b_head"]
    affinities = sigmoid(logits)
    valid = mask[:, t - 1].astype(bool)
    return affinities, valid, h, cache


def forward(params: ModelParams, features: np.ndarray, mask: np.ndarray) -> AffinityOutput:
    """Predict affinities for one window: features (T, m, N), mask (T, m)."""
    if features.ndim != 3:
        raise ValueError(f"expected a single window of rank 3, got shape {features.shape}")
    feats = features[None]
    msk = np.asarray(mask, dtype=bool)[None]
    _check_shapes(params, feats, msk)
    affinities, valid, _, _ = _rollout(params, feats, msk, keep_cache=False)
    return AffinityOutput(values=affinities[0], valid=valid[0])


def forward_batch(params: ModelParams, features: np.ndarray,
                  mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched affinity prediction: features (B, T, m, N) -> (B, m) affinities."""
    mask = np.asarray(mask, dtype=bool)
    _check_shapes(params, features, mask)
    affinities, valid, _, _ = _rollout(params, features, mask, keep_cache=False)
    return affinities, valid


def mse_loss(predicted: np.ndarray, targets: np.ndarray,
             valid: Optional[np.ndarray] = None) -> float:
    """Sum of squared errors over valid pairs across the whole batch."""
    predicted = np.asarray(predicted, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predicted.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {targets.shape}")
    if predicted.size == 0:
        raise ValueError("empty batch")
    sq = (predicted - targets) ** 2
    if valid is not None:
        sq = sq[np.asarray(valid, dtype=bool)]
    return float(np.sum(sq))


def loss_and_grads(params: ModelParams, batch: WindowBatch) -> tuple[float, dict]:
    """Loss plus analytic gradients for every entry of PARAM_FIELDS."""
    features = batch.features
    mask = np.asarray(batch.mask, dtype=bool)
    _check_shapes(params, features, mask)
    b, t, m, n = features.shape
    h_size = params.hidden_size
    lam = params.context_mix

    affinities, _, h_final, cache = _rollout(params, features, mask, keep_cache=True)
    valid = np.asarray(batch.valid, dtype=bool)
    resid = np.where(valid, affinities - batch.targets, 0.0)
    loss = float(np.sum(resid ** 2))

    grads = {name: np.zeros_like(getattr(params, name)) for name in PARAM_FIELDS}

    d_logit = 2.0 * resid * affinities * (1.0 - affinities)
    grads["w_head"] += np.einsum("bm,bmh->h", d_logit, h_final)
    grads["b_head"] += np.sum(d_logit)
    dh = d_logit[:, :, None] * params.w_head[None, None, :]
    dc = np.zeros((b, m, h_size))
    d_lam = 0.0

    for w in reversed(range(t)):
        x, f_gate, i_gate, o_gate, c_cand, tanh_c, c_prev, pool, safe = cache[w]

        d_o_gate = dh * tanh_c
        dc_total = dc + dh * o_gate * (1.0 - tanh_c ** 2)
        d_f_gate = dc_total * c_prev
        d_i_gate = dc_total * c_cand
        d_c_cand = dc_total * i_gate
        dc = dc_total * f_gate

        dz_f = d_f_gate * f_gate * (1.0 - f_gate)
        dz_i = d_i_gate * i_gate * (1.0 - i_gate)
        dz_o = d_o_gate * o_gate * (1.0 - o_gate)
        dz_c = d_c_cand * (1.0 - c_cand ** 2)

        grads["w_forget"] += np.einsum("bmh,bmf->hf", dz_f, x)
        grads["w_input"] += np.einsum("bmh,bmf->hf", dz_i, x)
        grads["w_output"] += np.einsum("bmh,bmf->hf", dz_o, x)
        grads["w_cell"] += np.einsum("bmh,bmf->hf", dz_c, x)
        grads["b_forget"] += dz_f.sum(axis=(0, 1))
        grads["b_input"] += dz_i.sum(axis=(0, 1))
        grads["b_output"] += dz_o.sum(axis=(0, 1))
        grads["b_cell"] += dz_c.sum(axis=(0, 1))

        dx = (dz_f @ params.w_forget + dz_i @ params.w_input
              + dz_o @ params.w_output + dz_c @ params.w_cell)
        d_mix = dx[:, :, n:n + h_size]
        dh_direct = dx[:, :, n + h_size:]

        h_prev = x[:, :, n + h_size:]
        g = pool[:, :, None] * h_prev
        context = g.sum(axis=1) / safe[:, None]
        d_lam += float(np.sum(d_mix * (context[:, None, :] - g)))
        dg = (1.0 - lam) * d_mix + (lam / safe)[:, None, None] * d_mix.sum(axis=1, keepdims=True)
        dh = dh_direct + pool[:, :, None] * dg

    grads["mix_logit"] += d_lam * lam * (1.0 - lam)
    return loss, grads


def grad_check(params: ModelParams, batch: WindowBatch, fd_step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The difference quotient is evaluated in extended precision (longdouble)
    so that cancellation noise in the oracle stays well below the analytic
    gradient's own float64 accuracy; the model under test remains float64.
    """
    _, analytic = loss_and_grads(params, batch)
    mask = np.asarray(batch.mask, dtype=bool)
    fd_dtype = np.longdouble
    targets = batch.targets.astype(fd_dtype)

    def loss_at(p: ModelParams) -> np.longdouble:
        affinities, _, _, _ = _rollout(p, batch.features, mask, keep_cache=False, dtype=fd_dtype)
        resid = np.where(batch.valid, affinities - targets, fd_dtype(0.0))
        return np.sum(resid ** 2)

    worst = 0.0
    probe = params.copy()
    for name in PARAM_FIELDS:
        arr = getattr(probe, name)
        flat = arr.reshape(-1)
        ana = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + fd_step
            hi = loss_at(probe)
            flat[k] = orig - fd_step
            lo = loss_at(probe)
            flat[k] = orig
            fd = float((hi - lo) / (2.0 * fd_step))
            denom = max(abs(ana[k]), abs(fd), 1e-8)
            worst = max(worst, abs(ana[k] - fd) / denom)
    return worst


def random_small_batch(seed: int | np.random.SeedSequence, n_people: int = 4,
                       seq_len: int = 3, batch: int = 2,
                       n_features: int = N_CHANNELS) -> WindowBatch:
    """Small random window batch with realistic padding, for gradient checks."""
    rng = np.random.default_rng(seed)
    m = n_people - 1
    features = rng.uniform(0.0, 1.0, (batch, seq_len, m, n_features))
    mask = rng.uniform(size=(batch, seq_len, m)) < 0.75
    for b in range(batch):
        if not mask[b, -1].any():
            mask[b, -1, 0] = True
    features[~mask] = -1.0
    targets = (rng.uniform(size=(batch, m)) < 0.5).astype(np.float64)
    return WindowBatch(features, mask, targets, mask[:, -1].copy())
