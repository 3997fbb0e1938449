"""Parameter store, feedforward networks with Gaussian heads, the Adam
update, finite-difference gradient verification and text checkpoints.

Every network here is a plain MLP over float64 numpy arrays. Forward passes
come in two flavours: a taped one (``mlp_forward``) that builds an autodiff
graph, and a plain one (``mlp_forward_np``) for rollouts. Both apply the
layers in an identical order so their outputs agree bit for bit.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
# float64 tanh reaches exactly 1.0 near |x| ~ 19.06; clamping the pre-squash
# value here keeps actions strictly inside the bound.
PRE_SQUASH_LIMIT = 18.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MlpSpec:
    """Shape of one feedforward network."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    nonlinearity: str = "relu"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all MLP dimensions must be >= 1, got {dims}")
        if self.nonlinearity not in ("relu", "tanh"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class _Entry:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParamStore:
    """Named, shaped float64 parameters with gradient and Adam moment slots."""

    def __init__(self):
        self._entries: dict[str, _Entry] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite initial value for {name!r}")
        self._entries[name] = _Entry(
            value=value,
            grad=np.zeros_like(value),
            m=np.zeros_like(value),
            v=np.zeros_like(value),
        )

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def grad(self, name: str) -> np.ndarray:
        return self._entries[name].grad

    def entry(self, name: str) -> _Entry:
        return self._entries[name]

    def names(self, prefix: str | None = None) -> list[str]:
        if prefix is None:
            return sorted(self._entries)
        return sorted(n for n in self._entries if n.startswith(prefix))

    def zero_grads(self, prefix: str | None = None) -> None:
        for name in self.names(prefix):
            self._entries[name].grad[...] = 0.0

    def copy_values(self, src_prefix: str, dst_prefix: str) -> None:
        """Copy every parameter under one prefix onto its twin under another."""
        src = self.names(src_prefix)
        if not src:
            raise ValueError(f"no parameters under prefix {src_prefix!r}")
        for name in src:
            dst = dst_prefix + name[len(src_prefix):]
            self._entries[dst].value[...] = self._entries[name].value

    def clone(self) -> "ParamStore":
        other = ParamStore()
        for name, e in self._entries.items():
            other._entries[name] = _Entry(e.value.copy(), e.grad.copy(),
                                          e.m.copy(), e.v.copy(), e.step)
        return other


class GraphParams:
    """Leaf-tensor view of a ParamStore for one graph build.

    Repeated ``leaf`` calls for the same name return the same tensor, so
    gradients from multiple uses accumulate before being flushed back.
    """

    def __init__(self, store: ParamStore):
        self.store = store
        self._leaves: dict[str, Tensor] = {}

    def leaf(self, name: str) -> Tensor:
        t = self._leaves.get(name)
        if t is None:
            t = Tensor(self.store.value(name), requires_grad=True, name=name)
            self._leaves[name] = t
        return t

    def flush(self, prefixes: tuple[str, ...] | None = None) -> None:
        """Add each leaf's accumulated gradient into the store."""
        for name, leaf in self._leaves.items():
            if leaf.grad is None:
                continue
            if prefixes is not None and not name.startswith(prefixes):
                continue
            self.store.entry(name).grad += leaf.grad


def backward_into(loss: Tensor, gp: GraphParams,
                  prefixes: tuple[str, ...] | None = None) -> None:
    """Run reverse mode on ``loss`` and flush the gradients into the store."""
    ad.backward(loss)
    gp.flush(prefixes)


def init_mlp(store: ParamStore, prefix: str, spec: MlpSpec,
             rng: np.random.Generator) -> None:
    """Fan-in-scaled uniform initialization, deterministic per rng state."""
    for i, (din, dout) in enumerate(spec.layer_dims):
        limit = 1.0 / math.sqrt(din)
        store.add(f"{prefix}.w{i}", rng.uniform(-limit, limit, size=(din, dout)))
        store.add(f"{prefix}.b{i}", rng.uniform(-limit, limit, size=(dout,)))


def mlp_forward(gp: GraphParams, prefix: str, spec: MlpSpec, x: Tensor) -> Tensor:
    """Taped forward pass; input is (batch, input_dim)."""
    if x.value.ndim != 2 or x.value.shape[1] != spec.input_dim:
        raise ValueError(
            f"{prefix}: expected input (*, {spec.input_dim}), got {x.value.shape}")
    act = ad.relu if spec.nonlinearity == "relu" else ad.tanh
    h = x
    last = len(spec.layer_dims) - 1
    for i in range(len(spec.layer_dims)):
        h = ad.add(ad.matmul(h, gp.leaf(f"{prefix}.w{i}")), gp.leaf(f"{prefix}.b{i}"))
        if i != last:
            h = act(h)
    return h


def mlp_forward_np(store: ParamStore, prefix: str, spec: MlpSpec,
                   x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != spec.input_dim:
        raise ValueError(
            f"{prefix}: expected input (*, {spec.input_dim}), got {x.shape}")
    fn = (lambda a: np.where(a > 0.0, a, 0.0)) if spec.nonlinearity == "relu" else np.tanh
    last = len(spec.layer_dims) - 1
    for i in range(len(spec.layer_dims)):
        h = h @ store.value(f"{prefix}.w{i}") + store.value(f"{prefix}.b{i}")
        if i != last:
            h = fn(h)
    return h[0] if squeeze else h


@dataclass
class GaussianHeadOutput:
    """Mean and clamped log-std of a diagonal Gaussian action head."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.clip(np.asarray(self.log_std, dtype=np.float64),
                               LOG_STD_MIN, LOG_STD_MAX)


def gaussian_head_np(net_out: np.ndarray) -> GaussianHeadOutput:
    """Split a network output of width 2*d into mean and log-std halves."""
    d = net_out.shape[-1] // 2
    return GaussianHeadOutput(net_out[..., :d], net_out[..., d:])


def gaussian_sample(head: GaussianHeadOutput, noise: np.ndarray,
                    max_action: float):
    """Reparameterized tanh-squashed sample.

    Returns (pre-squash sample, action, log-prob). The log-prob includes the
    change-of-variables correction for action = max_action * tanh(pre).
    Works on single vectors and on (batch, d) matrices; log-prob is summed
    over the last axis.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != head.mean.shape:
        raise ValueError(f"noise shape {noise.shape} != mean shape {head.mean.shape}")
    std = np.exp(head.log_std)
    pre = head.mean + std * noise
    t = np.tanh(np.clip(pre, -PRE_SQUASH_LIMIT, PRE_SQUASH_LIMIT))
    action = max_action * t
    logp = (-_HALF_LOG_2PI - head.log_std - 0.5 * noise * noise
            - np.log(max_action * (1.0 - t * t) + SQUASH_EPS))
    return pre, action, logp.sum(axis=-1)


def gaussian_normal_logp(head: GaussianHeadOutput, pre: np.ndarray) -> np.ndarray:
    """Pre-squash Gaussian log density, summed over the last axis."""
    std = np.exp(head.log_std)
    z = (pre - head.mean) / std
    return (-_HALF_LOG_2PI - head.log_std - 0.5 * z * z).sum(axis=-1)


def gaussian_head_t(net_out: Tensor, act_dim: int) -> tuple[Tensor, Tensor]:
    mean = ad.slice_cols(net_out, 0, act_dim)
    log_std = ad.clip(ad.slice_cols(net_out, act_dim, 2 * act_dim),
                      LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def gaussian_sample_t(mean: Tensor, log_std: Tensor, noise: np.ndarray,
                      max_action: float):
    """Taped counterpart of ``gaussian_sample``; noise is held constant.

    Returns (pre, action, logp) with logp of shape (batch, 1).
    """
    noise = np.asarray(noise, dtype=np.float64)
    pre = ad.add(mean, ad.mul(ad.exp(log_std), Tensor(noise)))
    t = ad.tanh(ad.clip(pre, -PRE_SQUASH_LIMIT, PRE_SQUASH_LIMIT))
    action = ad.mul(t, max_action)
    # With pre = mean + std*noise the total derivative of the Gaussian term
    # w.r.t. (mean, log_std) equals the derivative at fixed noise, so the
    # quadratic term can be written directly in the constant noise.
    normal = ad.sub(ad.mul(ad.add(log_std, _HALF_LOG_2PI), -1.0),
                    Tensor(0.5 * noise * noise))
    correction = ad.log(ad.add(ad.mul(ad.sub(1.0, ad.square(t)), max_action),
                               SQUASH_EPS))
    logp = ad.sum_cols(ad.sub(normal, correction))
    return pre, action, logp


def adam_step(store: ParamStore, lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8, prefix: str | None = None) -> None:
    """Bias-corrected Adam on every parameter under ``prefix``.

    Advances per-parameter moments and clears the gradients it consumed.
    Fails fast on a non-finite gradient, naming the parameter.
    """
    b1, b2 = betas
    for name in store.names(prefix):
        e = store.entry(name)
        g = e.grad
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
        e.step += 1
        e.m[...] = b1 * e.m + (1.0 - b1) * g
        e.v[...] = b2 * e.v + (1.0 - b2) * g * g
        m_hat = e.m / (1.0 - b1 ** e.step)
        v_hat = e.v / (1.0 - b2 ** e.step)
        e.value[...] -= lr * m_hat / (np.sqrt(v_hat) + eps)
        e.grad[...] = 0.0


@dataclass
class GradCheckReport:
    """Finite-difference verification result."""

    max_rel_error: float
    per_param: dict[str, float]
    coords_checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance


def grad_check(store: ParamStore, loss_fn, rng: np.random.Generator,
               eps: float = 1e-5, max_coords_per_param: int = 10,
               prefix: str | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``loss_fn`` takes a GraphParams and returns a scalar loss tensor; it is
    re-invoked for each probe, so it must be deterministic. Per parameter the
    relative error is max_i |ad_i - fd_i| / max(max_i |ad_i|, max_i |fd_i|, 1e-12)
    over the sampled coordinates.
    """
    store.zero_grads()
    gp = GraphParams(store)
    backward_into(loss_fn(gp), gp)
    analytic = {name: store.grad(name).copy() for name in store.names(prefix)}
    store.zero_grads()

    def loss_value() -> float:
        return float(loss_fn(GraphParams(store)).value)

    per_param: dict[str, float] = {}
    checked = 0
    for name in store.names(prefix):
        flat = store.value(name).reshape(-1)
        size = flat.size
        idxs = (np.arange(size) if size <= max_coords_per_param
                else rng.choice(size, size=max_coords_per_param, replace=False))
        a_vals, f_vals = [], []
        for idx in idxs:
            keep = flat[idx]
            flat[idx] = keep + eps
            hi = loss_value()
            flat[idx] = keep - eps
            lo = loss_value()
            flat[idx] = keep
            f_vals.append((hi - lo) / (2.0 * eps))
            a_vals.append(analytic[name].reshape(-1)[idx])
            checked += 1
        a = np.asarray(a_vals)
        f = np.asarray(f_vals)
        denom = max(np.abs(a).max(initial=0.0), np.abs(f).max(initial=0.0), 1e-12)
        per_param[name] = float(np.abs(a - f).max(initial=0.0) / denom)
    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(worst, per_param, checked)


def save_checkpoint(store: ParamStore, path, meta: dict) -> None:
    """Write parameters and metadata as a JSON text document.

    Values are printed with Python's shortest round-tripping float repr, so
    loading restores each float64 bit for bit.
    """
    doc = {
        "meta": meta,
        "params": {
            name: {
                "shape": list(store.value(name).shape),
                "values": store.value(name).reshape(-1).tolist(),
            }
            for name in store.names()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    store = ParamStore()
    for name in sorted(doc["params"]):
        rec = doc["params"][name]
        store.add(name, np.array(rec["values"], dtype=np.float64).reshape(rec["shape"]))
    return store, doc["meta"]
