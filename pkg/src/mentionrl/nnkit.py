"""Minimal numeric kit: dense float64 arrays, the handful of differentiable
operations the models need, a plain SGD stepper, a finite-difference gradient
checker, and a binary checkpoint format.

Arrays are C-contiguous float64 numpy ndarrays throughout.  Operations are
pure functions of their inputs; parameter mutation happens only through
``sgd_step`` (and the in-place perturbations of ``finite_diff_check``, which
restores them).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_VERSION = 1

# Probabilities are floored here before any log so rewards and losses stay
# finite.
PROB_FLOOR = 1e-12


def dense(values, shape=None) -> np.ndarray:
    """Materialize ``values`` as a C-contiguous float64 array.

    Raises ValueError if any value is NaN or infinite.
    """
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite values in dense array")
    return arr


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray


class ParamSet:
    """Ordered map from parameter name to (value, grad) pairs of equal shape."""

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name}")
        arr = dense(value)
        self._entries[name] = Param(arr, np.zeros_like(arr))
        return arr

    def __getitem__(self, name: str) -> Param:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def zero_grads(self) -> None:
        for p in self._entries.values():
            p.grad[...] = 0.0

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, p in self._entries.items():
            out.add(name, p.value.copy())
            out[name].grad[...] = p.grad
        return out

    def n_values(self) -> int:
        return sum(p.value.size for p in self._entries.values())


def sigmoid(z: float) -> float:
    """Numerically stable logistic function; branches on the sign of ``z``."""
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def softmax(logits) -> np.ndarray:
    """Shift-invariant softmax over a non-empty 1-d array of finite logits."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("softmax expects a non-empty 1-d array")
    shifted = arr - arr.max()
    e = np.exp(shifted)
    out = e / e.sum()
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite softmax output")
    return out


def cross_entropy(probs, label: int) -> float:
    """Negative log-likelihood of ``label`` under ``probs``, floored at 1e-12."""
    arr = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < arr.size:
        raise ValueError(f"label {label} out of range for {arr.size} classes")
    return -math.log(max(float(arr[label]), PROB_FLOOR))


def softmax_xent_grad(probs: np.ndarray, label: int) -> np.ndarray:
    """Gradient of cross_entropy(softmax(logits), label) w.r.t. the logits."""
    if not 0 <= label < probs.size:
        raise ValueError(f"label {label} out of range for {probs.size} classes")
    grad = probs.copy()
    grad[label] -= 1.0
    return grad


def conv3_maxpool(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Width-3 convolution over the rows of ``x`` followed by per-feature max.

    ``x`` is (T, d), ``w`` is (n_features, 3*d), ``b`` is (n_features,).
    Returns (pooled, argmax) where ``argmax[i]`` is the window index that
    produced ``pooled[i]`` (lowest index on ties), needed to route gradients
    back through the pooling layer.
    """
    t, d = x.shape
    if t < 3:
        raise ValueError(f"need at least 3 rows, got {t}")
    if w.ndim != 2 or w.shape[1] != 3 * d:
        raise ValueError(f"filter width {w.shape} incompatible with input dim {d}")
    if b.shape != (w.shape[0],):
        raise ValueError("bias shape does not match filter count")
    windows = np.hstack([x[: t - 2], x[1 : t - 1], x[2:]])  # (t-2, 3d)
    scores = windows @ w.T + b  # (t-2, n_features)
    argmax = scores.argmax(axis=0)
    pooled = scores[argmax, np.arange(scores.shape[1])]
    if not np.all(np.isfinite(pooled)):
        raise ValueError("non-finite convolution output")
    return pooled, argmax


def conv3_maxpool_backward(x, w, argmax, d_pooled):
    """Backward pass of ``conv3_maxpool``; returns (dx, dw, db)."""
    t, d = x.shape
    windows = np.hstack([x[: t - 2], x[1 : t - 1], x[2:]])
    dw = d_pooled[:, None] * windows[argmax]
    db = d_pooled.copy()
    d_windows = np.zeros((t - 2, 3 * d))
    np.add.at(d_windows, argmax, d_pooled[:, None] * w)
    dx = np.zeros_like(x)
    dx[: t - 2] += d_windows[:, :d]
    dx[1 : t - 1] += d_windows[:, d : 2 * d]
    dx[2:] += d_windows[:, 2 * d :]
    return dx, dw, db


def bernoulli_log_prob(action: int, p: float) -> float:
    """log P(action) for a Bernoulli with success probability ``p``, floored."""
    q = p if action == 1 else 1.0 - p
    return math.log(max(q, PROB_FLOOR))


def bernoulli_score(action: int, p: float) -> float:
    """d/dz log P(action | sigmoid(z)) evaluated at p = sigmoid(z)."""
    return float(action) - p


def score_function_gradient(states, actions, probs, returns):
    """Sum of REINFORCE terms R * d/dtheta log pi(a|s) for a linear-sigmoid
    policy with logit w.s + b.

    ``states`` is a sequence of 1-d state vectors; returns (grad_w, grad_b).
    """
    gw = None
    gb = 0.0
    for s, a, p, r in zip(states, actions, probs, returns):
        z = bernoulli_score(a, p) * r
        if gw is None:
            gw = z * s
        else:
            gw += z * s
        gb += z
    if gw is None:
        raise ValueError("no steps to accumulate")
    return gw, gb


def sgd_step(params: ParamSet, lr: float) -> None:
    """value <- value - lr * grad for every entry; grads are zeroed after."""
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise ValueError(f"non-finite gradient for parameter '{name}'")
        p.value -= lr * p.grad
    params.zero_grads()


def finite_diff_check(
    loss_fn: Callable[[ParamSet], float],
    params: ParamSet,
    eps: float = 1e-5,
    n_coords: int = 10,
    rng_seed: int = 0,
    entries: Sequence[str] | None = None,
) -> float:
    """Compare the analytic gradients stored in ``params`` against central
    differences of ``loss_fn`` at ``n_coords`` randomly chosen coordinates.

    ``loss_fn`` must be a deterministic function of the parameter values and
    must not touch the stored grads.  Returns the maximum relative error with
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    names = list(entries) if entries is not None else params.names()
    analytic = {name: params[name].grad.copy() for name in names}
    pool = [(name, i) for name in names for i in range(params[name].value.size)]
    rng = np.random.default_rng(rng_seed)
    if n_coords < len(pool):
        picks = rng.choice(len(pool), size=n_coords, replace=False)
    else:
        picks = np.arange(len(pool))
    worst = 0.0
    for k in picks:
        name, i = pool[int(k)]
        value = params[name].value
        orig = value.flat[i]
        value.flat[i] = orig + eps
        f_plus = loss_fn(params)
        value.flat[i] = orig - eps
        f_minus = loss_fn(params)
        value.flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[name].flat[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def save_params(params: ParamSet, path) -> None:
    """Write a checkpoint: version header, JSON manifest of (name, shape,
    offset), then the concatenated row-major float64 little-endian values.
    """
    manifest = []
    offset = 0
    blobs = []
    for name, p in params.items():
        arr = np.ascontiguousarray(p.value, dtype="<f8")
        manifest.append({"name": name, "shape": list(p.value.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    manifest_bytes = json.dumps({"entries": manifest}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(manifest_bytes)))
        fh.write(manifest_bytes)
        for blob in blobs:
            fh.write(blob)


def load_params(path) -> ParamSet:
    """Read a checkpoint written by ``save_params``; bit-exact round trip."""
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"truncated checkpoint: {path}")
        version, manifest_len = struct.unpack("<II", header)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        manifest = json.loads(fh.read(manifest_len).decode("utf-8"))
        data = fh.read()
    params = ParamSet()
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=start)
        params.add(entry["name"], arr.astype(np.float64).reshape(shape))
    return params
