"""Stacked LSTM inverse-model controller, written against plain numpy.

The network maps a window of ``history_len`` steps, each carrying
``[p_k, a_{k-1}, p_target]`` (z-normalised), to the command that should drive
the tip to ``p_target`` at the next sample. Gates follow the usual sigmoid /
tanh cell over the concatenation ``[h_{t-1}, x_t]``; weight matrices stack the
forget, input, candidate and output blocks column-wise in that order.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"SHLSTMW\x00"
WEIGHTS_VERSION = 1
ACTUATION_RANGE = 2.0


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")
        self.epoch = epoch


class WeightFileError(ValueError):
    pass


class SpecMismatchError(WeightFileError):
    pass


@dataclass(frozen=True)
class LstmSpec:
    num_layers: int = 4
    history_len: int = 10
    hidden_size: int = 128
    dropout_rate: float = 0.1
    dim: int = 2  # size of one position / actuation vector

    def __post_init__(self) -> None:
        if self.num_layers < 1 or self.hidden_size < 1 or self.history_len < 1 or self.dim < 1:
            raise ValueError(f"invalid LSTM spec {self}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def input_size(self) -> int:
        return 3 * self.dim

    @property
    def output_size(self) -> int:
        return self.dim

    @property
    def label(self) -> str:
        return f"{self.num_layers}-{self.history_len}-{self.hidden_size}-{self.dropout_rate:g}"

    @classmethod
    def parse(cls, text: str, dim: int = 2) -> "LstmSpec":
        """Parse the ``layers-history-hidden-dropout`` shorthand, e.g. ``4-10-128-0.1``."""
        try:
            layers, hist, hidden, drop = text.split("-")
            return cls(int(layers), int(hist), int(hidden), float(drop), dim)
        except ValueError:
            raise ValueError(f"bad LSTM spec {text!r}; expected layers-history-hidden-dropout") from None


@dataclass
class LstmWeights:
    spec: LstmSpec
    layers: list[tuple[np.ndarray, np.ndarray]]  # (W over [h, x] -> 4H, b)
    w_out: np.ndarray  # (H, d)
    b_out: np.ndarray  # (d,)
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in self.layers:
            out += [w, b]
        return out + [self.w_out, self.b_out]

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k, (w, b) in enumerate(self.layers):
            out += [(f"layer{k}.W", w), (f"layer{k}.b", b)]
        out += [("out.W", self.w_out), ("out.b", self.b_out),
                ("norm.mean", self.feature_mean), ("norm.scale", self.feature_scale)]
        return out

    def astype(self, dtype) -> "LstmWeights":
        return LstmWeights(
            self.spec,
            [(w.astype(dtype), b.astype(dtype)) for w, b in self.layers],
            self.w_out.astype(dtype), self.b_out.astype(dtype),
            self.feature_mean.astype(dtype), self.feature_scale.astype(dtype),
        )

    def copy(self) -> "LstmWeights":
        return self.astype(self.w_out.dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LstmWeights) or self.spec != other.spec:
            return NotImplemented if not isinstance(other, LstmWeights) else False
        return all(a.dtype == b.dtype and np.array_equal(a, b)
                   for (_, a), (_, b) in zip(self.named_arrays(), other.named_arrays()))


def init_weights(spec: LstmSpec, seed: int = 0, dtype=np.float64) -> LstmWeights:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) init, forget-gate bias at +1."""
    rng = np.random.default_rng(seed)
    h = spec.hidden_size
    k = 1.0 / math.sqrt(h)
    layers = []
    for layer in range(spec.num_layers):
        x = spec.input_size if layer == 0 else h
        w = rng.uniform(-k, k, size=(h + x, 4 * h))
        b = rng.uniform(-k, k, size=4 * h)
        b[:h] += 1.0
        layers.append((w.astype(dtype), b.astype(dtype)))
    w_out = rng.uniform(-k, k, size=(h, spec.output_size)).astype(dtype)
    b_out = np.zeros(spec.output_size, dtype=dtype)
    f = spec.input_size
    return LstmWeights(spec, layers, w_out, b_out, np.zeros(f, dtype), np.ones(f, dtype))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def cell_forward(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
                 w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM cell step; leading batch dimensions are allowed."""
    x_t, h_prev, c_prev = np.asarray(x_t), np.asarray(h_prev), np.asarray(c_prev)
    h = h_prev.shape[-1]
    if c_prev.shape != h_prev.shape or w.shape != (h + x_t.shape[-1], 4 * h) or b.shape != (4 * h,):
        raise ValueError(
            f"dimension mismatch: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}, W {w.shape}, b {b.shape}"
        )
    z = np.concatenate([h_prev, x_t], axis=-1) @ w + b
    f = _sigmoid(z[..., :h])
    i = _sigmoid(z[..., h:2 * h])
    g = np.tanh(z[..., 2 * h:3 * h])
    o = _sigmoid(z[..., 3 * h:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


# --------------------------------------------------------------------------- batched network


def forward(weights: LstmWeights, x: np.ndarray, dropout_rate: float = 0.0,
            rng: np.random.Generator | None = None, keep_cache: bool = False):
    """Run the stack over already-normalised windows ``x`` of shape (B, T, F).

    Dropout, when ``rng`` is given, masks each layer's output before the next
    layer. Returns ``(y, cache)``; ``cache`` is None unless ``keep_cache``.
    """
    bsz, steps, _ = x.shape
    hs = weights.spec.hidden_size
    dtype = weights.w_out.dtype
    layer_in = x
    caches = []
    n_layers = len(weights.layers)
    for li, (w, b) in enumerate(weights.layers):
        wh, wx = w[:hs], w[hs:]
        zx = layer_in @ wx + b
        h = np.zeros((bsz, hs), dtype)
        c = np.zeros((bsz, hs), dtype)
        hseq = np.empty((bsz, steps, hs), dtype)
        if keep_cache:
            gates = np.empty((steps, bsz, 4 * hs), dtype)
            cseq = np.empty((steps + 1, bsz, hs), dtype)
            cseq[0] = c
        for t in range(steps):
            z = zx[:, t] + h @ wh
            a = np.empty_like(z)
            a[:, :2 * hs] = _sigmoid(z[:, :2 * hs])
            a[:, 2 * hs:3 * hs] = np.tanh(z[:, 2 * hs:3 * hs])
            a[:, 3 * hs:] = _sigmoid(z[:, 3 * hs:])
            c = a[:, :hs] * c + a[:, hs:2 * hs] * a[:, 2 * hs:3 * hs]
            h = a[:, 3 * hs:] * np.tanh(c)
            hseq[:, t] = h
            if keep_cache:
                gates[t] = a
                cseq[t + 1] = c
        mask = None
        out = hseq
        if rng is not None and dropout_rate > 0.0 and li < n_layers - 1:
            keep = 1.0 - dropout_rate
            mask = (rng.random(hseq.shape) < keep).astype(dtype) / dtype.type(keep)
            out = hseq * mask
        if keep_cache:
            caches.append((layer_in, hseq, gates, cseq, mask))
        layer_in = out
    h_last = layer_in[:, -1]
    y = h_last @ weights.w_out + weights.b_out
    return y, (caches, h_last) if keep_cache else None


def backward(weights: LstmWeights, cache, dy: np.ndarray) -> list[np.ndarray]:
    """Backprop-through-time; gradients returned in ``weights.params()`` order."""
    caches, h_last = cache
    hs = weights.spec.hidden_size
    grads_out = [h_last.T @ dy, dy.sum(axis=0)]
    bsz, steps, _ = caches[0][0].shape
    d_seq = np.zeros((bsz, steps, hs), dy.dtype)
    d_seq[:, -1] = dy @ weights.w_out.T
    layer_grads = []
    for li in range(len(weights.layers) - 1, -1, -1):
        w, _ = weights.layers[li]
        wh, wx = w[:hs], w[hs:]
        layer_in, hseq, gates, cseq, mask = caches[li]
        if mask is not None:
            d_seq = d_seq * mask
        dz_all = np.empty((bsz, steps, 4 * hs), dy.dtype)
        dh_next = np.zeros((bsz, hs), dy.dtype)
        dc_next = np.zeros((bsz, hs), dy.dtype)
        for t in range(steps - 1, -1, -1):
            a = gates[t]
            f, i, g, o = a[:, :hs], a[:, hs:2 * hs], a[:, 2 * hs:3 * hs], a[:, 3 * hs:]
            tc = np.tanh(cseq[t + 1])
            dh = d_seq[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :hs] = dc * cseq[t] * f * (1.0 - f)
            dz[:, hs:2 * hs] = dc * g * i * (1.0 - i)
            dz[:, 2 * hs:3 * hs] = dc * i * (1.0 - g * g)
            dz[:, 3 * hs:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ wh.T
        h_prev = np.concatenate([np.zeros((bsz, 1, hs), dy.dtype), hseq[:, :-1]], axis=1)
        dz_flat = dz_all.reshape(-1, 4 * hs)
        dwh = h_prev.reshape(-1, hs).T @ dz_flat
        dwx = layer_in.reshape(-1, layer_in.shape[-1]).T @ dz_flat
        layer_grads.append([np.vstack([dwh, dwx]), dz_flat.sum(axis=0)])
        if li > 0:
            d_seq = dz_all @ wx.T
    grads = []
    for gw, gb in reversed(layer_grads):
        grads += [gw, gb]
    return grads + grads_out


def mse_loss(y: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = y - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# --------------------------------------------------------------------------- windows & inference


def make_windows(commands: np.ndarray, positions: np.ndarray, history_len: int):
    """Supervised pairs from one contiguous record block.

    For label index ``t`` the window holds records ``t-H .. t-1`` as
    ``[position, command, p_target]`` with ``p_target = positions[t]``.
    Returns raw (unnormalised) inputs (N, H, 3d) and labels (N, d).
    """
    n, d = commands.shape
    count = n - history_len
    if count <= 0:
        return np.empty((0, history_len, 3 * d)), np.empty((0, d))
    idx = np.arange(history_len)[None, :] + np.arange(count)[:, None]
    x = np.empty((count, history_len, 3 * d))
    x[:, :, :d] = positions[idx]
    x[:, :, d:2 * d] = commands[idx]
    x[:, :, 2 * d:] = positions[history_len:][:, None, :]
    return x, commands[history_len:].copy()


def _normalise(weights: LstmWeights, x: np.ndarray) -> np.ndarray:
    return (x - weights.feature_mean) / weights.feature_scale


def predict_batch(weights: LstmWeights, raw_windows: np.ndarray, batch: int = 1024) -> np.ndarray:
    out = []
    for s in range(0, len(raw_windows), batch):
        xb = _normalise(weights, raw_windows[s:s + batch]).astype(weights.w_out.dtype)
        out.append(forward(weights, xb)[0])
    return np.clip(np.concatenate(out) if out else np.empty((0, weights.spec.dim)), -1.0, 1.0)


def build_input(spec: LstmSpec, target_next: Sequence[float],
                history: Sequence[tuple[Sequence[float], Sequence[float]]]) -> np.ndarray:
    """Raw window from ``history_len`` (position p_k, prior command a_{k-1}) pairs."""
    if len(history) != spec.history_len:
        raise ValueError(f"history must hold exactly {spec.history_len} entries, got {len(history)}")
    d = spec.dim
    x = np.empty((spec.history_len, 3 * d))
    for k, (p, a) in enumerate(history):
        x[k, :d] = p
        x[k, d:2 * d] = a
    x[:, 2 * d:] = np.asarray(target_next, dtype=float)
    return x


def predict_actuation(weights: LstmWeights, target_next: Sequence[float],
                      history: Sequence[tuple[Sequence[float], Sequence[float]]]) -> np.ndarray:
    """Command for the next step; no dropout, fresh zero state, clamped to [-1, 1]."""
    x = build_input(weights.spec, target_next, history)
    y, _ = forward(weights, _normalise(weights, x)[None].astype(weights.w_out.dtype))
    return np.clip(y[0].astype(float), -1.0, 1.0)


# --------------------------------------------------------------------------- training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 12
    patience: int = 3
    seed: int = 0
    clip_norm: float = 1.0
    dtype: str = "float32"
    feature_mean: np.ndarray | None = None  # filled from the train split when None
    feature_scale: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size, max_epochs and learning_rate must be positive")
        if self.feature_scale is not None and np.any(np.asarray(self.feature_scale) <= 0):
            raise ValueError("normalisation scales must be positive")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "best_epoch": self.best_epoch,
                "epochs_run": self.epochs_run, "wall_time": self.wall_time}


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def split_windows(ds: Dataset, history_len: int):
    out = {}
    for name in ("train", "val", "test"):
        c, p = ds.part(name)
        out[name] = make_windows(c, p, history_len)
    return out


def _mean_loss(weights: LstmWeights, x: np.ndarray, y: np.ndarray, batch: int = 1024) -> float:
    total = 0.0
    for s in range(0, len(x), batch):
        pred, _ = forward(weights, x[s:s + batch])
        total += float(np.sum((pred - y[s:s + batch]) ** 2))
    return total / (len(x) * y.shape[1])


def train(ds: Dataset, spec: LstmSpec, cfg: TrainConfig | None = None) -> tuple[LstmWeights, TrainReport]:
    """Fit the inverse model with Adam and early stopping on the validation split."""
    cfg = cfg or TrainConfig()
    if ds.dim != spec.dim:
        raise ValueError(f"dataset dimension {ds.dim} does not match spec dimension {spec.dim}")
    windows = split_windows(ds, spec.history_len)
    if any(len(windows[k][0]) == 0 for k in ("train", "val")):
        raise ValueError("dataset too small: every split needs at least one full window")
    dtype = np.dtype(cfg.dtype)
    xtr, ytr = windows["train"]
    mean = xtr.reshape(-1, xtr.shape[-1]).mean(axis=0) if cfg.feature_mean is None else np.asarray(cfg.feature_mean)
    scale = xtr.reshape(-1, xtr.shape[-1]).std(axis=0) if cfg.feature_scale is None else np.asarray(cfg.feature_scale)
    scale = np.where(scale > 1e-8, scale, 1.0)
    weights = init_weights(spec, cfg.seed, dtype)
    weights.feature_mean = mean.astype(dtype)
    weights.feature_scale = scale.astype(dtype)
    xtr = ((xtr - mean) / scale).astype(dtype)
    ytr = ytr.astype(dtype)
    xva = ((windows["val"][0] - mean) / scale).astype(dtype)
    yva = windows["val"][1].astype(dtype)

    params = weights.params()
    opt = Adam(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed + 1)
    report = TrainReport()
    best = weights.copy()
    best_val = math.inf
    since_best = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(xtr))
        total, count = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            y, cache = forward(weights, xtr[idx], spec.dropout_rate, rng, keep_cache=True)
            loss, dy = mse_loss(y, ytr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            grads = backward(weights, cache, dy.astype(dtype))
            if cfg.clip_norm:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > cfg.clip_norm:
                    grads = [g * dtype.type(cfg.clip_norm / norm) for g in grads]
            opt.step(grads)
            total += loss * len(idx)
            count += len(idx)
        val = _mean_loss(weights, xva, yva)
        if not math.isfinite(val):
            raise TrainingDiverged(epoch)
        report.train_loss.append(total / count)
        report.val_loss.append(val)
        report.epochs_run = epoch + 1
        log.info("epoch %d train %.3e val %.3e", epoch, total / count, val)
        if val < best_val:
            best_val, best, since_best = val, weights.copy(), 0
            report.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    report.wall_time = time.perf_counter() - t0
    return best.astype(np.float64), report


def evaluate(weights: LstmWeights, ds: Dataset, part: str = "test") -> float:
    """Mean absolute actuation error over a split, as a fraction of the actuation range."""
    c, p = ds.part(part)
    x, y = make_windows(c, p, weights.spec.history_len)
    if len(x) == 0:
        raise ValueError(f"{part} split has no complete window")
    pred = predict_batch(weights, x)
    return float(np.mean(np.abs(pred - y))) / ACTUATION_RANGE


# --------------------------------------------------------------------------- persistence


def save_weights(weights: LstmWeights, path: str | Path) -> None:
    """Binary layout: magic, u32 version, u32 header length, JSON header, raw <f8 arrays."""
    arrays = weights.named_arrays()
    spec = weights.spec
    header = {
        "spec": {"num_layers": spec.num_layers, "history_len": spec.history_len,
                 "hidden_size": spec.hidden_size, "dropout_rate": spec.dropout_rate, "dim": spec.dim},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "dtype": "<f8",
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<II", WEIGHTS_VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_weights(path: str | Path, expected_spec: LstmSpec | None = None) -> LstmWeights:
    data = Path(path).read_bytes()
    if data[:len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise WeightFileError(f"{path}: not an LSTM weight file")
    pos = len(WEIGHTS_MAGIC)
    if len(data) < pos + 8:
        raise WeightFileError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != WEIGHTS_VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(data[pos:pos + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"{path}: corrupt header ({exc})") from None
    pos += hlen
    spec = LstmSpec(**header["spec"])
    if expected_spec is not None and spec != expected_spec:
        raise SpecMismatchError(f"{path}: file holds spec {spec.label}, expected {expected_spec.label}")
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=int))
        nbytes = 8 * n
        if pos + nbytes > len(data):
            raise WeightFileError(f"{path}: truncated while reading {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data, "<f8", n, pos).reshape(entry["shape"]).astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise WeightFileError(f"{path}: {len(data) - pos} trailing bytes")
    ref = init_weights(spec)
    for name, a in ref.named_arrays():
        if name not in arrays or arrays[name].shape != a.shape:
            raise SpecMismatchError(f"{path}: array {name} missing or mis-shaped for spec {spec.label}")
    layers = [(arrays[f"layer{k}.W"], arrays[f"layer{k}.b"]) for k in range(spec.num_layers)]
    return LstmWeights(spec, layers, arrays["out.W"], arrays["out.b"], arrays["norm.mean"], arrays["norm.scale"])
