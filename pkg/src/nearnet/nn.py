"""Minimal dense network engine with hand-written backward passes.

Matrices are plain float64 numpy arrays.  Each layer keeps the tensors its
backward pass needs from the most recent forward; ``backward`` consumes that
cache, so calling it twice without a new forward raises.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

CHECKPOINT_FORMAT = "nearnet-checkpoint/1"


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """backward() called without a matching forward()."""


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """Parameter bookkeeping shared by every layer."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, Module] = {}
        self._cache = None

    def named_parameters(self, prefix: str = ""):
        for name, p in self.params.items():
            yield prefix + name, p, self.grads[name]
        for cname, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = ""):
        for name, b in getattr(self, "buffers", {}).items():
            yield prefix + name, b
        for cname, child in self.children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def zero_grad(self):
        for _, _, g in self.named_parameters():
            g.fill(0.0)

    def _pop_cache(self):
        if self._cache is None:
            raise StaleCacheError(f"{type(self).__name__}.backward() without a forward pass")
        cache, self._cache = self._cache, None
        return cache


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.params["weight"] = glorot_uniform(in_dim, out_dim, rng)
        self.params["bias"] = np.zeros(out_dim)
        self.grads["weight"] = np.zeros((in_dim, out_dim))
        self.grads["bias"] = np.zeros(out_dim)

    @property
    def in_dim(self):
        return self.params["weight"].shape[0]

    @property
    def out_dim(self):
        return self.params["weight"].shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"Linear expects (*, {self.in_dim}), got {x.shape}")
        self._cache = x
        return matmul(x, self.params["weight"]) + self.params["bias"]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._pop_cache()
        self.grads["weight"] += x.T @ grad
        self.grads["bias"] += grad.sum(axis=0)
        return grad @ self.params["weight"].T


class ReLU(Module):
    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._pop_cache(), grad, 0.0)


class BatchNorm(Module):
    """Per-column batch normalization with running statistics for eval mode."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["scale"] = np.ones(dim)
        self.params["shift"] = np.zeros(dim)
        self.grads["scale"] = np.zeros(dim)
        self.grads["shift"] = np.zeros(dim)
        self.buffers = {"running_mean": np.zeros(dim), "running_var": np.ones(dim)}

    def forward(self, x: np.ndarray, train: bool, groups: np.ndarray | None = None) -> np.ndarray:
        """``groups`` (row offsets, length G+1) switches train mode to per-group statistics."""
        if x.ndim != 2 or x.shape[1] != len(self.params["scale"]):
            raise ShapeError(f"BatchNorm expects (*, {len(self.params['scale'])}), got {x.shape}")
        scale, shift = self.params["scale"], self.params["shift"]
        if train and groups is not None:
            return self._forward_grouped(x, np.asarray(groups, dtype=np.int64))
        if train:
            m = x.shape[0]
            if m < 2:
                raise ValueError("batch normalization in train mode needs at least 2 rows")
            out, xhat, mean, var, inv_std = kernels.batchnorm_train(np.ascontiguousarray(x), scale, shift, self.eps)
            self._update_running(mean, (m / (m - 1)) * var)
        else:
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = (x - self.buffers["running_mean"]) * inv_std
            out = xhat * scale + shift
        self._cache = (xhat, inv_std, train, None)
        return out

    def _update_running(self, mean, unbiased_var):
        mom = self.momentum
        self.buffers["running_mean"] *= 1.0 - mom
        self.buffers["running_mean"] += mom * mean
        self.buffers["running_var"] *= 1.0 - mom
        self.buffers["running_var"] += mom * unbiased_var

    def _forward_grouped(self, x, groups):
        sizes = np.diff(groups)
        if groups[0] != 0 or groups[-1] != x.shape[0] or np.any(sizes < 1):
            raise ValueError("groups must be increasing row offsets covering every row")
        starts = groups[:-1]
        m = sizes[:, None].astype(np.float64)
        mean_g = np.add.reduceat(x, starts, axis=0) / m
        row_group = np.repeat(np.arange(len(sizes)), sizes)
        xc = x - mean_g[row_group]
        var_g = np.add.reduceat(xc * xc, starts, axis=0) / m
        inv_g = 1.0 / np.sqrt(var_g + self.eps)
        xhat = xc * inv_g[row_group]
        # running statistics average the per-group estimates; singletons carry no variance
        multi = sizes > 1
        if multi.any():
            unbiased = var_g[multi] * (m[multi] / (m[multi] - 1.0))
            self._update_running(mean_g.mean(axis=0), unbiased.mean(axis=0))
        self._cache = (xhat, inv_g, True, (starts, row_group, m))
        return xhat * self.params["scale"] + self.params["shift"]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xhat, inv_std, train, grouping = self._pop_cache()
        if grouping is not None:
            starts, row_group, m = grouping
            scale = self.params["scale"]
            self.grads["scale"] += np.einsum("ij,ij->j", grad, xhat)
            self.grads["shift"] += grad.sum(axis=0)
            s1 = np.add.reduceat(grad, starts, axis=0)
            s2 = np.add.reduceat(grad * xhat, starts, axis=0)
            coef = scale * inv_std / m
            return coef[row_group] * (m[row_group] * grad - s1[row_group] - xhat * s2[row_group])
        gx, g_scale, g_shift = kernels.batchnorm_backward(
            np.ascontiguousarray(grad), xhat, inv_std, self.params["scale"], train
        )
        self.grads["scale"] += g_scale
        self.grads["shift"] += g_shift
        return gx


def batchnorm_forward(x: np.ndarray, layer: BatchNorm, mode: str) -> np.ndarray:
    return layer.forward(x, train=_is_train(mode))


class Dropout(Module):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` in train mode."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train: bool, rng: np.random.Generator | None = None):
        if not train or self.rate == 0.0:
            self._cache = None if not train else 1.0
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, grad):
        # eval-mode or zero-rate forward is the identity
        mask, self._cache = self._cache, None
        return grad if mask is None else grad * mask


def dropout(x: np.ndarray, rate: float, mode: str, rng: np.random.Generator | None = None) -> np.ndarray:
    return Dropout(rate).forward(x, train=_is_train(mode), rng=rng)


class MLP2(Module):
    """Linear -> [BatchNorm] -> ReLU -> [Dropout] -> Linear."""

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        batchnorm: bool = True,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.children["l1"] = Linear(in_dim, hidden_dim, rng)
        if batchnorm:
            self.children["bn"] = BatchNorm(hidden_dim)
        self.relu = ReLU()
        self.drop = Dropout(dropout)
        self.children["l2"] = Linear(hidden_dim, out_dim, rng)

    def forward(self, x, train: bool, rng: np.random.Generator | None = None, groups=None):
        h = self.children["l1"].forward(x)
        if "bn" in self.children:
            h = self.children["bn"].forward(h, train, groups)
        h = self.relu.forward(h)
        h = self.drop.forward(h, train, rng)
        return self.children["l2"].forward(h)

    def backward(self, grad):
        g = self.children["l2"].backward(grad)
        g = self.drop.backward(g)
        g = self.relu.backward(g)
        if "bn" in self.children:
            g = self.children["bn"].backward(g)
        return self.children["l1"].backward(g)


def mlp2_forward(x, l1: Linear, bn: BatchNorm | None, l2: Linear, mode: str = "train") -> np.ndarray:
    """l2(ReLU(bn(l1(x)))) without building an :class:`MLP2`."""
    h = l1.forward(x)
    if bn is not None:
        h = bn.forward(h, _is_train(mode))
    return l2.forward(np.maximum(h, 0.0))


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"expected {b} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -float(np.mean(log_p[np.arange(b), labels]))
    grad = np.exp(log_p)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


@dataclass
class AdamState:
    lr: float = 1e-3
    decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @property
    def current_lr(self) -> float:
        return self.lr * self.decay**self.epoch

    def end_epoch(self):
        self.epoch += 1


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """In-place bias-corrected Adam update of every array in ``params``."""
    state.t += 1
    lr = state.current_lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def flatten_parameters(module: Module) -> tuple[np.ndarray, np.ndarray]:
    """Move every parameter and gradient into one flat buffer each.

    The layers keep working on views into the buffers, so an optimizer can
    update the whole model with a handful of vectorized operations.
    """
    entries = []
    for _, owner in _walk(module):
        for name in owner.params:
            entries.append((owner, name))
    total = sum(owner.params[name].size for owner, name in entries)
    flat_p, flat_g = np.empty(total), np.zeros(total)
    pos = 0
    for owner, name in entries:
        p = owner.params[name]
        k = p.size
        flat_p[pos : pos + k] = p.ravel()
        flat_g[pos : pos + k] = owner.grads[name].ravel()
        owner.params[name] = flat_p[pos : pos + k].reshape(p.shape)
        owner.grads[name] = flat_g[pos : pos + k].reshape(p.shape)
        pos += k
    return flat_p, flat_g


def _walk(module: Module, prefix: str = ""):
    yield prefix, module
    for cname, child in module.children.items():
        yield from _walk(child, f"{prefix}{cname}.")


def _is_train(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


# ---------------------------------------------------------------------------
# checkpoints: one .npz, every array keyed by dotted layer path
# ---------------------------------------------------------------------------


def save_checkpoint(module: Module, path, extra: dict | None = None) -> None:
    arrays = {f"param:{n}": p for n, p, _ in module.named_parameters()}
    arrays.update({f"buffer:{n}": b for n, b in module.named_buffers()})
    header = {"format": CHECKPOINT_FORMAT, "extra": extra or {}}
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(module: Module, path) -> dict:
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
        for n, p, _ in module.named_parameters():
            src = data[f"param:{n}"]
            if src.shape != p.shape:
                raise ShapeError(f"checkpoint {n} has shape {src.shape}, model {p.shape}")
            p[...] = src
        for n, b in module.named_buffers():
            b[...] = data[f"buffer:{n}"]
    return header["extra"]
