"""Actor and critic networks with hand-written backpropagation.

Both networks share one layout: a 1-D convolution over the per-quality size
vector (ReLU), a dense ReLU hidden layer over the flattened conv output
concatenated with the scalar features, and a linear head. The actor puts a
softmax on the head; the critic head emits one value.

Inputs are batched: ``sizes`` is ``(B, levels)`` and ``scalars`` is
``(B, n_scalars)``. One-dimensional inputs are treated as a batch of one and
results are squeezed back.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "vrstream-params"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("conv_w", "conv_b", "hid_w", "hid_b", "out_w", "out_b")


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Architecture:
    levels: int = 5
    outputs: int = 5
    filters: int = 128
    kernel: int = 4
    hidden: int = 128
    scalars: int = 3

    @property
    def kernel_len(self) -> int:
        # short ladders (toy environments) cannot host the full kernel
        return min(self.kernel, self.levels)

    @property
    def conv_positions(self) -> int:
        return self.levels - self.kernel_len + 1

    @property
    def hidden_in(self) -> int:
        return self.conv_positions * self.filters + self.scalars

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "conv_w": (self.kernel_len, self.filters),
            "conv_b": (self.filters,),
            "hid_w": (self.hidden_in, self.hidden),
            "hid_b": (self.hidden,),
            "out_w": (self.hidden, self.outputs),
            "out_b": (self.outputs,),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Params:
    """Named parameter arrays of one network; treated as a value object."""

    def __init__(self, arch: Architecture, tensors: dict[str, np.ndarray]):
        shapes = arch.shapes()
        if set(tensors) != set(shapes):
            raise ShapeError(f"expected parameters {sorted(shapes)}, got {sorted(tensors)}")
        for name, shape in shapes.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.arch = arch
        self.tensors = {k: np.asarray(tensors[k], dtype=float) for k in PARAM_NAMES}

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "Params":
        return Params(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def equals(self, other: "Params") -> bool:
        return self.arch == other.arch and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in PARAM_NAMES
        )


def init_params(arch: Architecture, rng: np.random.Generator) -> Params:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` init for weights and biases."""
    fan_in = {"conv": arch.kernel_len, "hid": arch.hidden_in, "out": arch.hidden}
    tensors = {}
    for name, shape in arch.shapes().items():
        bound = 1.0 / np.sqrt(fan_in[name.split("_")[0]])
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return Params(arch, tensors)


def zero_params(arch: Architecture) -> Params:
    return Params(arch, {k: np.zeros(s) for k, s in arch.shapes().items()})


def _as_batch(arch, sizes, scalars):
    sizes = np.asarray(sizes, dtype=float)
    scalars = np.asarray(scalars, dtype=float)
    single = sizes.ndim == 1
    if single:
        sizes = sizes[None, :]
        scalars = scalars.reshape(1, -1)
    if sizes.ndim != 2 or sizes.shape[1] != arch.levels:
        raise ShapeError(f"sizes must be (B, {arch.levels}), got {sizes.shape}")
    if scalars.shape != (sizes.shape[0], arch.scalars):
        raise ShapeError(f"scalars must be ({sizes.shape[0]}, {arch.scalars}), got {scalars.shape}")
    return sizes, scalars, single


def _windows(arch):
    return np.arange(arch.kernel_len)[None, :] + np.arange(arch.conv_positions)[:, None]


def forward(params: Params, sizes, scalars):
    """Raw head outputs ``(B, outputs)`` plus the cache needed by ``backward``."""
    arch = params.arch
    sizes, scalars, single = _as_batch(arch, sizes, scalars)
    win = sizes[:, _windows(arch)]                       # B, P, K
    zc = win @ params["conv_w"] + params["conv_b"]       # B, P, F
    ac = np.maximum(zc, 0.0)
    hin = np.concatenate([ac.reshape(len(sizes), -1), scalars], axis=1)
    zh = hin @ params["hid_w"] + params["hid_b"]
    ah = np.maximum(zh, 0.0)
    out = ah @ params["out_w"] + params["out_b"]
    return out, (win, zc, hin, zh, ah, single)


def backward(params: Params, cache, d_out) -> dict[str, np.ndarray]:
    """Gradients of ``sum(d_out * out)`` with respect to every parameter."""
    win, zc, hin, zh, ah, _ = cache
    arch = params.arch
    d_out = np.asarray(d_out, dtype=float).reshape(len(hin), arch.outputs)
    g = {"out_w": ah.T @ d_out, "out_b": d_out.sum(axis=0)}
    dzh = (d_out @ params["out_w"].T) * (zh > 0)
    g["hid_w"] = hin.T @ dzh
    g["hid_b"] = dzh.sum(axis=0)
    dconv = (dzh @ params["hid_w"][: arch.conv_positions * arch.filters].T)
    dzc = dconv.reshape(zc.shape) * (zc > 0)
    g["conv_w"] = win.reshape(-1, arch.kernel_len).T @ dzc.reshape(-1, arch.filters)
    g["conv_b"] = dzc.sum(axis=(0, 1))
    return g


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_policy(params: Params, sizes, scalars) -> np.ndarray:
    out, cache = forward(params, sizes, scalars)
    probs = softmax(out)
    return probs[0] if cache[-1] else probs


def forward_value(params: Params, sizes, scalars):
    if params.arch.outputs != 1:
        raise ShapeError("value network must have a single output")
    out, cache = forward(params, sizes, scalars)
    return float(out[0, 0]) if cache[-1] else out[:, 0]


def policy_and_grad(params: Params, sizes, scalars, actions, weights=None):
    """Softmax probabilities and ``sum_b w_b * grad log pi(a_b | s_b)``."""
    out, cache = forward(params, sizes, scalars)
    probs = softmax(out)
    return probs, score_grad(params, cache, probs, actions, weights)


def score_grad(params: Params, cache, probs, actions, weights=None) -> dict[str, np.ndarray]:
    """``sum_b w_b * grad log pi(a_b | s_b)`` from a stored forward pass."""
    actions = np.atleast_1d(np.asarray(actions))
    if actions.shape != (len(probs),):
        raise ShapeError(f"need one action per state, got {actions.shape}")
    if np.any(actions < 0) or np.any(actions >= params.arch.outputs) or \
            not np.issubdtype(actions.dtype, np.integer):
        raise ValueError(f"actions must be integers in 0..{params.arch.outputs - 1}")
    d_out = -probs
    d_out[np.arange(len(probs)), actions] += 1.0
    if weights is not None:
        d_out *= np.asarray(weights, dtype=float).reshape(-1, 1)
    return backward(params, cache, d_out)


def grad_log_policy(params: Params, sizes, scalars, actions, weights=None) -> dict[str, np.ndarray]:
    return policy_and_grad(params, sizes, scalars, actions, weights)[1]


def value_and_grad(params: Params, sizes, scalars, weights=None):
    """Values and ``sum_b w_b * grad V(s_b)`` (``w`` defaults to ones)."""
    if params.arch.outputs != 1:
        raise ShapeError("value network must have a single output")
    out, cache = forward(params, sizes, scalars)
    d_out = np.ones_like(out) if weights is None else \
        np.asarray(weights, dtype=float).reshape(-1, 1) * np.ones_like(out)
    return out[:, 0], backward(params, cache, d_out)


def grad_value(params: Params, sizes, scalars, weights=None) -> dict[str, np.ndarray]:
    return value_and_grad(params, sizes, scalars, weights)[1]


def check_gradient(params: Params, grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, expected {params[name].shape}")
        # a single NaN/inf anywhere makes the sum non-finite
        if not np.isfinite(g.sum()):
            raise NumericError(f"non-finite gradient in {name}")


def apply_update(params: Params, grads: dict[str, np.ndarray], lr: float, ascent: bool = True) -> Params:
    """New parameters ``p + lr * g`` (ascent) or ``p - lr * g`` (descent)."""
    check_gradient(params, grads)
    sign = lr if ascent else -lr
    return Params(params.arch, {k: params[k] + sign * grads[k] if k in grads else params[k].copy()
                                for k in PARAM_NAMES})


def update_in_place(params: Params, grads: dict[str, np.ndarray], lr: float, ascent: bool = True,
                    check: bool = True) -> None:
    """Same step as :func:`apply_update`, written into ``params`` (for owned, unshared parameters)."""
    if check:
        check_gradient(params, grads)
    sign = lr if ascent else -lr
    for name, g in grads.items():
        params.tensors[name] += sign * g


def save_checkpoint(path, params: Params, name: str = "") -> None:
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "name": name,
              "architecture": asdict(params.arch)}
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)),
                 **params.tensors)


def load_checkpoint(path) -> Params:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a parameter checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arch = Architecture(**header["architecture"])
        return Params(arch, {k: data[k].copy() for k in PARAM_NAMES})
