"""Bidirectional gated recurrent classifier with dot-product attention and Mish.

Per direction and step, with ``z = [x_t ; h_{t-1}]``::

    r     = mish(W_r z) + b_r                    reset gate
    u     = clip(mish(W_u z) + b_u, 0, 1)        update gate
    c     = tanh(W_c [x_t ; r * h_{t-1}]) + b_c  candidate (bias outside tanh)
    mu    = tanh(W_a [ctx ; z])                  attention modulation
    h_t   = mu * ((1 - u) * h_{t-1} + u * c)

``ctx`` is the softmax(h_{t-1} . h_k)-weighted sum of the earlier hidden
states ``h_0 .. h_{t-1}`` (zero at the first step). The last forward and
backward states are concatenated and projected to three logits
(Low, Medium, High). The gates use Mish rather than a sigmoid. The update
gate is clipped so the state update stays a convex combination: unclipped,
a large state drives ``u`` up linearly, ``(1 - u) * h`` then grows like
``h**2`` and long sequences overflow within a few training steps. With the
clip, ``|h| <= 1 + max|b_c|``.

Everything is plain numpy with hand-written backpropagation through time;
:func:`gradient_check` compares it against central finite differences.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

N_CLASSES = 3
CLASS_NAMES = ("Low", "Medium", "High")
DIRECTIONS = ("fwd", "bwd")
_GATES = ("W_r", "b_r", "W_u", "b_u", "W_c", "b_c", "W_a")


class NumericalDivergence(FloatingPointError):
    pass


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def mish(x):
    """``x * tanh(softplus(x))`` with a stable softplus."""
    return x * np.tanh(softplus(x))


def mish_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(softplus(x))
    return t + x * (1.0 - t * t) * sigmoid(x)


@dataclass
class ClassifierInput:
    sequence: np.ndarray  # (steps, features), entries in [0, 1]

    def __post_init__(self) -> None:
        self.sequence = np.atleast_2d(np.asarray(self.sequence, dtype=float))
        if self.sequence.shape[0] < 1:
            raise ValueError("sequence must have at least one step")


@dataclass
class ClassPrediction:
    probabilities: np.ndarray

    @property
    def label_index(self) -> int:
        return int(np.argmax(self.probabilities))

    @property
    def label(self) -> str:
        return CLASS_NAMES[self.label_index]


class GruParams:
    """All tensors of the bidirectional model, keyed ``"<dir>.<name>"`` plus ``W_o``/``b_o``."""

    def __init__(self, input_size: int, hidden_size: int, tensors: dict[str, np.ndarray] | None = None):
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        self.tensors = tensors if tensors is not None else {k: np.zeros(s) for k, s in self.shapes().items()}
        self.validate()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        i, h = self.input_size, self.hidden_size
        out: dict[str, tuple[int, ...]] = {}
        for d in DIRECTIONS:
            for g in ("r", "u", "c"):
                out[f"{d}.W_{g}"] = (h, i + h)
                out[f"{d}.b_{g}"] = (h,)
            out[f"{d}.W_a"] = (h, 2 * h + i)
        out["W_o"] = (N_CLASSES, 2 * h)
        out["b_o"] = (N_CLASSES,)
        return out

    def validate(self) -> None:
        shapes = self.shapes()
        if set(shapes) != set(self.tensors):
            raise ValueError("parameter names do not match the architecture")
        for k, s in shapes.items():
            if self.tensors[k].shape != s:
                raise ValueError(f"{k}: shape {self.tensors[k].shape}, expected {s}")
            if not np.all(np.isfinite(self.tensors[k])):
                raise ValueError(f"{k}: non-finite entries")

    @classmethod
    def initialize(cls, input_size: int, hidden_size: int, seed: int = 0, scale: float = 1.0, update_bias: float = 0.5) -> GruParams:
        """Glorot-uniform matrices, zero biases except ``b_u``.

        With ``b_u = 0.5`` the update gate starts mid-range, so the carried
        state is halved each step instead of growing; the gates are not
        squashed, and with ``b_u = 0`` long sequences can blow up early.
        """
        rng = np.random.default_rng(seed)
        p = cls(input_size, hidden_size)
        for k, s in p.shapes().items():
            if len(s) == 2:
                limit = scale * np.sqrt(6.0 / (s[0] + s[1]))
                p.tensors[k] = rng.uniform(-limit, limit, size=s)
        for d in DIRECTIONS:
            p.tensors[f"{d}.b_u"][:] = update_bias
        return p

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]

    def copy(self) -> GruParams:
        return GruParams(self.input_size, self.hidden_size, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def direction(self, d: str) -> dict[str, np.ndarray]:
        return {g: self.tensors[f"{d}.{g}"] for g in _GATES}

    def to_dict(self) -> dict:
        return {
            "format": "uiopt-bigru",
            "version": 1,
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "tensors": {
                k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in sorted(self.tensors.items())
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> GruParams:
        if raw.get("format") != "uiopt-bigru" or raw.get("version") != 1:
            raise ValueError("unsupported checkpoint format")
        tensors = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in raw["tensors"].items()}
        return cls(raw["input_size"], raw["hidden_size"], tensors)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> GruParams:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class _StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    a_r: np.ndarray
    r: np.ndarray
    a_u: np.ndarray
    u: np.ndarray
    u_open: np.ndarray  # 1 where the clip is inactive
    zr: np.ndarray
    tanh_c: np.ndarray
    c: np.ndarray
    s: np.ndarray
    chi: np.ndarray | None
    ctx: np.ndarray
    cz: np.ndarray
    mu: np.ndarray


def gru_cell_forward(
    x: np.ndarray,
    h_prev: np.ndarray,
    params: dict[str, np.ndarray],
    past_hidden: np.ndarray | None = None,
    cache: list | None = None,
) -> np.ndarray:
    """One step for a batch: ``x`` (B, I), ``h_prev`` (B, H), ``past_hidden`` (B, K, H)."""
    x = np.atleast_2d(x)
    h_prev = np.atleast_2d(h_prev)
    W_r, W_u, W_c, W_a = params["W_r"], params["W_u"], params["W_c"], params["W_a"]
    if x.shape[1] + h_prev.shape[1] != W_r.shape[1] or h_prev.shape[1] != W_r.shape[0]:
        raise ValueError(f"shape mismatch: x {x.shape}, h {h_prev.shape}, W {W_r.shape}")
    z = np.concatenate([x, h_prev], axis=1)
    a_r = z @ W_r.T
    r = mish(a_r) + params["b_r"]
    a_u = z @ W_u.T
    u_raw = mish(a_u) + params["b_u"]
    u = np.clip(u_raw, 0.0, 1.0)
    zr = np.concatenate([x, r * h_prev], axis=1)
    tanh_c = np.tanh(zr @ W_c.T)
    c = tanh_c + params["b_c"]
    s = (1.0 - u) * h_prev + u * c
    ctx, chi = _attend(h_prev, past_hidden)
    cz = np.concatenate([ctx, z], axis=1)
    mu = np.tanh(cz @ W_a.T)
    h = mu * s
    if cache is not None:
        cache.append(_StepCache(x, h_prev, z, a_r, r, a_u, u, ((u_raw > 0.0) & (u_raw < 1.0)).astype(float), zr, tanh_c, c, s, chi, ctx, cz, mu))
    return h


def _attend(query: np.ndarray, past: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None]:
    if past is None or past.shape[1] == 0:
        return np.zeros_like(query), None
    scores = np.einsum("bkh,bh->bk", past, query)
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    chi = e / e.sum(axis=1, keepdims=True)
    return np.einsum("bk,bkh->bh", chi, past), chi


def luong_attention(h_current: np.ndarray, past_hidden: Sequence[np.ndarray], W_a: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample attention: returns ``(mu, chi)``.

    ``chi`` is softmax over the scores ``h_current . h_k``; ``mu`` is
    ``tanh(W_a [sum_k chi_k h_k ; z])``. Empty history gives a zero context.
    """
    h_current = np.asarray(h_current, dtype=float)
    past = np.asarray(past_hidden, dtype=float).reshape(1, len(past_hidden), h_current.size) if len(past_hidden) else None
    ctx, chi = _attend(h_current.reshape(1, -1), past)
    mu = np.tanh(np.concatenate([ctx[0], np.asarray(z, dtype=float)]) @ W_a.T)
    return mu, (chi[0] if chi is not None else np.zeros(0))


def _run_direction(X: np.ndarray, params: dict[str, np.ndarray], hidden: int) -> tuple[np.ndarray, list[_StepCache]]:
    B, T, _ = X.shape
    hs = np.zeros((B, T, hidden))
    h = np.zeros((B, hidden))
    caches: list[_StepCache] = []
    for t in range(T):
        h = gru_cell_forward(X[:, t], h, params, past_hidden=hs[:, :t], cache=caches)
        hs[:, t] = h
    return hs, caches


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_batch(X: np.ndarray, params: GruParams):
    H = params.hidden_size
    hs_f, cache_f = _run_direction(X, params.direction("fwd"), H)
    hs_b, cache_b = _run_direction(X[:, ::-1], params.direction("bwd"), H)
    feat = np.concatenate([hs_f[:, -1], hs_b[:, -1]], axis=1)
    probs = _softmax(feat @ params["W_o"].T + params["b_o"])
    if not np.all(np.isfinite(probs)):
        raise NumericalDivergence("numerical divergence")
    return probs, feat, (hs_f, cache_f), (hs_b, cache_b)


def _as_batch(inputs: Sequence[ClassifierInput] | ClassifierInput) -> np.ndarray:
    if isinstance(inputs, ClassifierInput):
        inputs = [inputs]
    lengths = {inp.sequence.shape for inp in inputs}
    if len(lengths) != 1:
        raise ValueError("a batch needs equal sequence shapes")
    return np.stack([inp.sequence for inp in inputs])


def forward(inp: ClassifierInput, params: GruParams) -> ClassPrediction:
    X = _as_batch(inp)
    if X.shape[2] != params.input_size:
        raise ValueError(f"input has {X.shape[2]} features, model expects {params.input_size}")
    probs, *_ = _forward_batch(X, params)
    return ClassPrediction(probabilities=probs[0])


def predict_proba(inputs: Sequence[ClassifierInput], params: GruParams) -> np.ndarray:
    """Class probabilities for many inputs; equal-length inputs are batched together."""
    out = np.zeros((len(inputs), N_CLASSES))
    for idx in _length_groups(inputs).values():
        probs, *_ = _forward_batch(_as_batch([inputs[i] for i in idx]), params)
        out[idx] = probs
    return out


def _length_groups(inputs: Sequence[ClassifierInput]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, inp in enumerate(inputs):
        groups.setdefault(inp.sequence.shape[0], []).append(i)
    return dict(sorted(groups.items()))


def _backward_direction(dH_last: np.ndarray, hs: np.ndarray, caches: list[_StepCache], params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    grads = {g: np.zeros_like(v) for g, v in params.items()}
    B, T, H = hs.shape
    I = caches[0].x.shape[1]
    W_r, W_u, W_c, W_a = params["W_r"], params["W_u"], params["W_c"], params["W_a"]
    dh_hist = np.zeros_like(hs)
    dh_hist[:, -1] += dH_last
    for t in range(T - 1, -1, -1):
        k = caches[t]
        dh = dh_hist[:, t]
        dmu = dh * k.s
        ds = dh * k.mu
        da_a = dmu * (1.0 - k.mu * k.mu)
        grads["W_a"] += da_a.T @ k.cz
        dcz = da_a @ W_a
        dctx, dz = dcz[:, :H], dcz[:, H:].copy()
        dh_prev = np.zeros((B, H))
        if k.chi is not None:
            past = hs[:, :t]
            dchi = np.einsum("bh,bkh->bk", dctx, past)
            dpast = k.chi[:, :, None] * dctx[:, None, :]
            dscore = k.chi * (dchi - (k.chi * dchi).sum(axis=1, keepdims=True))
            dpast += dscore[:, :, None] * k.h_prev[:, None, :]
            dh_prev += np.einsum("bk,bkh->bh", dscore, past)
            dh_hist[:, :t] += dpast
        du = ds * (k.c - k.h_prev) * k.u_open
        dc = ds * k.u
        dh_prev += ds * (1.0 - k.u)
        grads["b_c"] += dc.sum(axis=0)
        da_c = dc * (1.0 - k.tanh_c * k.tanh_c)
        grads["W_c"] += da_c.T @ k.zr
        dzr = da_c @ W_c
        drh = dzr[:, I:]
        dr = drh * k.h_prev
        dh_prev += drh * k.r
        grads["b_u"] += du.sum(axis=0)
        da_u = du * mish_grad(k.a_u)
        grads["W_u"] += da_u.T @ k.z
        dz += da_u @ W_u
        grads["b_r"] += dr.sum(axis=0)
        da_r = dr * mish_grad(k.a_r)
        grads["W_r"] += da_r.T @ k.z
        dz += da_r @ W_r
        dh_prev += dz[:, I:]
        if t > 0:
            dh_hist[:, t - 1] += dh_prev
    return grads


def loss_and_grads(X: np.ndarray, y: np.ndarray, params: GruParams) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient for every tensor."""
    probs, feat, (hs_f, cache_f), (hs_b, cache_b) = _forward_batch(X, params)
    B = X.shape[0]
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(B), y], 1e-300, None))))
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    grads = {"W_o": dlogits.T @ feat, "b_o": dlogits.sum(axis=0)}
    dfeat = dlogits @ params["W_o"]
    H = params.hidden_size
    for d, dlast, hs, cache in (("fwd", dfeat[:, :H], hs_f, cache_f), ("bwd", dfeat[:, H:], hs_b, cache_b)):
        for g, v in _backward_direction(dlast, hs, cache, params.direction(d)).items():
            grads[f"{d}.{g}"] = v
    return loss, grads


def batch_loss(X: np.ndarray, y: np.ndarray, params: GruParams) -> float:
    probs, *_ = _forward_batch(X, params)
    return float(-np.mean(np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))))


def gradient_check(
    params: GruParams,
    inputs: Sequence[ClassifierInput] | ClassifierInput,
    labels: Sequence[int] | int,
    eps: float = 1e-5,
    abs_floor: float = 1e-6,
) -> float:
    """Max over all parameters of ``|analytic - numeric| / max(|analytic|, |numeric|, abs_floor)``.

    The floor keeps gradients that are zero up to rounding from dominating.
    """
    X = _as_batch(inputs)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    _, grads = loss_and_grads(X, y, params)
    work = params.copy()
    worst = 0.0
    for name, tensor in work.tensors.items():
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = batch_loss(X, y, work)
            flat[i] = orig - eps
            lm = batch_loss(X, y, work)
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            ana = grads[name].reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
            worst = max(worst, rel)
    return worst


@dataclass
class TrainConfig:
    hidden_size: int = 16
    batch_size: int = 32
    learning_rate: float = 0.01
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.2
    clip_norm: float = 5.0
    seed: int = 0


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float | None


@dataclass
class TrainResult:
    params: GruParams
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0

    def log_csv(self) -> str:
        lines = ["epoch,loss,accuracy"]
        for e in self.log:
            acc = "" if e.accuracy is None else repr(e.accuracy)
            lines.append(f"{e.epoch},{e.loss!r},{acc}")
        return "\n".join(lines) + "\n"


class _Adam:
    def __init__(self, params: GruParams, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: GruParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in sorted(grads):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params.tensors[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _batches(inputs: Sequence[ClassifierInput], idx: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    groups: dict[int, list[int]] = {}
    for i in idx:
        groups.setdefault(inputs[i].sequence.shape[0], []).append(int(i))
    batches = []
    for length in sorted(groups):
        members = np.array(groups[length])
        members = members[rng.permutation(len(members))]
        batches.extend(members[s : s + batch_size] for s in range(0, len(members), batch_size))
    return [batches[j] for j in rng.permutation(len(batches))]


def accuracy(inputs: Sequence[ClassifierInput], labels: Sequence[int], params: GruParams) -> float:
    if not inputs:
        return float("nan")
    pred = predict_proba(inputs, params).argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def train(
    inputs: Sequence[ClassifierInput],
    labels: Sequence[int],
    config: TrainConfig | None = None,
    init: GruParams | None = None,
) -> TrainResult:
    """Mini-batch Adam on mean cross-entropy, deterministic for a given seed.

    A ``val_fraction`` slice is held out; training stops after ``patience``
    epochs without a lower held-out loss and the best parameters are kept.
    With ``val_fraction == 0`` every epoch runs and the final parameters are
    returned.
    """
    config = config or TrainConfig()
    if not inputs:
        raise ValueError("empty training set")
    y_all = np.asarray(labels, dtype=np.int64)
    if len(set(y_all.tolist())) < 2:
        logger.warning("training set has a single class")
    n = len(inputs)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_val = int(round(config.val_fraction * n)) if n > 1 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        train_idx, val_idx = order, order[:0]
    input_size = inputs[0].sequence.shape[1]
    params = init.copy() if init is not None else GruParams.initialize(input_size, config.hidden_size, seed=config.seed)
    opt = _Adam(params, config.learning_rate)
    val_inputs = [inputs[i] for i in val_idx]
    val_labels = y_all[val_idx]

    result = TrainResult(params=params)
    best_val = np.inf
    best = params.copy()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        losses, weights = [], []
        for b in _batches(inputs, train_idx, config.batch_size, rng):
            X = _as_batch([inputs[i] for i in b])
            loss, grads = loss_and_grads(X, y_all[b], params)
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if config.clip_norm and norm > config.clip_norm:
                grads = {k: g * (config.clip_norm / norm) for k, g in grads.items()}
            if config.learning_rate != 0:
                opt.step(params, grads)
            losses.append(loss)
            weights.append(len(b))
        epoch_loss = float(np.average(losses, weights=weights))
        if n_val:
            val_loss, acc = _dataset_loss_accuracy(val_inputs, val_labels, params)
        else:
            val_loss, acc = epoch_loss, None
        result.log.append(EpochLog(epoch, epoch_loss, acc))
        if n_val:
            if val_loss < best_val - 1e-12:
                best_val, best, stale = val_loss, params.copy(), 0
                result.best_epoch = epoch
            else:
                stale += 1
                if stale >= config.patience:
                    break
    result.params = best if n_val else params
    if not n_val:
        result.best_epoch = len(result.log)
    return result


def _dataset_loss_accuracy(inputs: Sequence[ClassifierInput], labels: np.ndarray, params: GruParams) -> tuple[float, float]:
    probs = predict_proba(inputs, params)
    picked = np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)
    return float(-np.mean(np.log(picked))), float(np.mean(probs.argmax(axis=1) == labels))
