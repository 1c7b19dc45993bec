"""Numeric kernels for a stacked LSTM language model, in float64 numpy.

Parameters are kept in a flat, ordered mapping of named tensors::

    embedding        (n_in, d)
    lstm{l}.w_x      (d_in, 4h)   d_in = d for l == 0, else h
    lstm{l}.w_h      (h, 4h)
    lstm{l}.bias     (4h,)
    out.w            (n_out, h)
    out.b            (n_out,)

Gate blocks along the 4h axis are ordered input, forget, candidate, output.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np

from .errors import (
    BadEpsilon,
    CacheMismatch,
    DimensionMismatch,
    EmptySupport,
    NonFiniteGradient,
    NonFiniteInput,
    SnapshotFormatError,
    TargetOffSupport,
)

GradientSet = dict[str, np.ndarray]

_MAGIC = b"VHNP"
_FORMAT_VERSION = 1


class ModelParams:
    """Ordered set of named float64 tensors with shape bookkeeping."""

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        self._validate()

    def _validate(self):
        try:
            emb = self.tensors["embedding"]
            out_w = self.tensors["out.w"]
            out_b = self.tensors["out.b"]
        except KeyError as e:
            raise DimensionMismatch(f"missing tensor {e}") from None
        h = out_w.shape[1]
        d_in = emb.shape[1]
        for l in range(self.n_layers):
            w_x = self.tensors[f"lstm{l}.w_x"]
            w_h = self.tensors[f"lstm{l}.w_h"]
            bias = self.tensors[f"lstm{l}.bias"]
            if w_x.shape != (d_in, 4 * h) or w_h.shape != (h, 4 * h) or bias.shape != (4 * h,):
                raise DimensionMismatch(f"layer {l} shapes inconsistent with d_in={d_in}, h={h}")
            d_in = h
        if out_b.shape != (out_w.shape[0],):
            raise DimensionMismatch("output bias does not match projection")

    @classmethod
    def init(cls, n_in: int, n_out: int, d: int, h: int, n_layers: int,
             rng: np.random.Generator, forget_bias: float = 1.0) -> ModelParams:
        """Uniform(-k, k) initialization with k = 1/sqrt(h); forget bias set to ``forget_bias``."""
        k = 1.0 / np.sqrt(h)
        t = {"embedding": rng.uniform(-k, k, (n_in, d))}
        d_in = d
        for l in range(n_layers):
            t[f"lstm{l}.w_x"] = rng.uniform(-k, k, (d_in, 4 * h))
            t[f"lstm{l}.w_h"] = rng.uniform(-k, k, (h, 4 * h))
            bias = rng.uniform(-k, k, 4 * h)
            bias[h : 2 * h] = forget_bias
            t[f"lstm{l}.bias"] = bias
            d_in = h
        t["out.w"] = rng.uniform(-k, k, (n_out, h))
        t["out.b"] = np.zeros(n_out)
        return cls(t)

    @classmethod
    def zeros(cls, n_in: int, n_out: int, d: int, h: int, n_layers: int) -> ModelParams:
        t = {"embedding": np.zeros((n_in, d))}
        d_in = d
        for l in range(n_layers):
            t[f"lstm{l}.w_x"] = np.zeros((d_in, 4 * h))
            t[f"lstm{l}.w_h"] = np.zeros((h, 4 * h))
            t[f"lstm{l}.bias"] = np.zeros(4 * h)
            d_in = h
        t["out.w"] = np.zeros((n_out, h))
        t["out.b"] = np.zeros(n_out)
        return cls(t)

    @property
    def n_layers(self) -> int:
        return sum(1 for k in self.tensors if k.endswith(".w_h"))

    @property
    def d(self) -> int:
        return self.tensors["embedding"].shape[1]

    @property
    def h(self) -> int:
        return self.tensors["out.w"].shape[1]

    @property
    def n_in(self) -> int:
        return self.tensors["embedding"].shape[0]

    @property
    def n_out(self) -> int:
        return self.tensors["out.w"].shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> ModelParams:
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> GradientSet:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams) or list(self.tensors) != list(other.tensors):
            return False
        return all(np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items())


@dataclass
class HiddenState:
    h: np.ndarray  # (L, B, h)
    c: np.ndarray  # (L, B, h)

    @classmethod
    def zeros(cls, n_layers: int, batch: int, h: int) -> HiddenState:
        return cls(np.zeros((n_layers, batch, h)), np.zeros((n_layers, batch, h)))


@dataclass
class ForwardCache:
    inputs: np.ndarray
    initial: HiddenState
    layer_inputs: list = field(default_factory=list)   # (B, T, d_in) per layer
    gates: list = field(default_factory=list)          # activated i, f, g, o: (B, T, 4h)
    cells: list = field(default_factory=list)          # (B, T, h)
    tanh_cells: list = field(default_factory=list)
    hiddens: list = field(default_factory=list)        # raw layer outputs (B, T, h)
    drop_masks: list = field(default_factory=list)     # None or (B, T, h)
    top: np.ndarray | None = None                      # projection input, after dropout
    shapes: tuple = ()


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _shape_signature(params: ModelParams) -> tuple:
    return tuple((k, v.shape) for k, v in params.items())


def lstm_forward(
    params: ModelParams,
    inputs: np.ndarray,
    initial_state: HiddenState | None = None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the stacked LSTM over a (B, T) batch of input indices.

    Returns the top-layer output (B, T, h), after dropout when it is active,
    and the cache needed by :func:`backward`.  Dropout is applied to each
    layer's output (between layers and before the projection) only when
    ``dropout > 0``; ``rng`` then drives the masks.
    """
    inputs = np.asarray(inputs)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.ndim != 2 or not np.issubdtype(inputs.dtype, np.integer):
        raise DimensionMismatch("inputs must be a (B, T) integer array")
    B, T = inputs.shape
    if T and (inputs.min() < 0 or inputs.max() >= params.n_in):
        raise DimensionMismatch(f"input index out of range [0, {params.n_in})")
    if not params.all_finite():
        raise NonFiniteInput("parameters contain non-finite values")
    L, H = params.n_layers, params.h
    if initial_state is None:
        initial_state = HiddenState.zeros(L, B, H)
    elif initial_state.h.shape != (L, B, H) or initial_state.c.shape != (L, B, H):
        raise DimensionMismatch("initial state shape does not match (L, B, h)")
    if dropout > 0 and rng is None:
        raise ValueError("dropout needs an rng")

    cache = ForwardCache(inputs=inputs, initial=initial_state, shapes=_shape_signature(params))
    x = params["embedding"][inputs]
    for l in range(L):
        w_x, w_h, bias = params[f"lstm{l}.w_x"], params[f"lstm{l}.w_h"], params[f"lstm{l}.bias"]
        xw = x @ w_x + bias
        gates = np.empty((B, T, 4 * H))
        cells = np.empty((B, T, H))
        tanh_c = np.empty((B, T, H))
        hs = np.empty((B, T, H))
        h_prev, c_prev = initial_state.h[l], initial_state.c[l]
        for t in range(T):
            z = xw[:, t] + h_prev @ w_h
            act = gates[:, t]
            act[:] = _sigmoid(z)
            act[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
            i, f, g, o = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            cells[:, t], tanh_c[:, t], hs[:, t] = c, tc, h
            h_prev, c_prev = h, c
        cache.layer_inputs.append(x)
        cache.gates.append(gates)
        cache.cells.append(cells)
        cache.tanh_cells.append(tanh_c)
        cache.hiddens.append(hs)
        if dropout > 0:
            mask = (rng.random((B, T, H)) >= dropout) / (1.0 - dropout)
            x = hs * mask
        else:
            mask = None
            x = hs
        cache.drop_masks.append(mask)
    cache.top = x
    return x, cache


def final_state(cache: ForwardCache) -> HiddenState:
    """State after the last time step (pre-dropout), usable to continue a sequence."""
    h = np.stack([hs[:, -1] for hs in cache.hiddens])
    c = np.stack([cs[:, -1] for cs in cache.cells])
    return HiddenState(h, c)


def output_logits(params: ModelParams, top: np.ndarray) -> np.ndarray:
    return top @ params["out.w"].T + params["out.b"]


def _support_mask(support, k: int) -> np.ndarray:
    if support is None:
        return np.ones(k, dtype=bool)
    support = np.asarray(support)
    if support.dtype == bool:
        if support.shape != (k,):
            raise DimensionMismatch("support mask length differs from logits")
        return support
    mask = np.zeros(k, dtype=bool)
    mask[support.astype(int)] = True
    return mask


def masked_softmax(logits: np.ndarray, support=None) -> np.ndarray:
    """Softmax over the last axis restricted to ``support``.

    ``support`` is a boolean mask or an index list over the last axis; symbols
    outside it receive probability exactly 0.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = _support_mask(support, logits.shape[-1])
    if not mask.any():
        raise EmptySupport("softmax support is empty")
    z = logits[..., mask]
    if not np.isfinite(z).all():
        raise NonFiniteInput("non-finite logits on the support")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = np.zeros_like(logits)
    out[..., mask] = e / e.sum(axis=-1, keepdims=True)
    return out


def cross_entropy(prob: np.ndarray, target: int, base: float | None = None) -> float:
    """-log p[target]; natural log unless ``base`` is given."""
    p = float(np.asarray(prob)[target])
    if not p > 0.0:
        raise TargetOffSupport(f"target {target} has zero probability")
    loss = -np.log(p)
    if base is not None:
        loss /= np.log(base)
    return float(loss)


def backward(params: ModelParams, cache: ForwardCache, dlogits: np.ndarray) -> GradientSet:
    """Exact gradients given d(loss)/d(logits) at every (B, T) position."""
    if cache.shapes != _shape_signature(params) or cache.top is None:
        raise CacheMismatch("cache was produced by parameters of a different shape")
    B, T = cache.inputs.shape
    H, L = params.h, params.n_layers
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != (B, T, params.n_out):
        raise CacheMismatch(f"dlogits shape {dlogits.shape} != {(B, T, params.n_out)}")

    grads = params.zeros_like()
    flat = dlogits.reshape(-1, params.n_out)
    grads["out.w"] = flat.T @ cache.top.reshape(-1, H)
    grads["out.b"] = flat.sum(axis=0)
    dx = dlogits @ params["out.w"]

    for l in reversed(range(L)):
        w_x, w_h = params[f"lstm{l}.w_x"], params[f"lstm{l}.w_h"]
        mask = cache.drop_masks[l]
        dh_out = dx * mask if mask is not None else dx
        gates, cells, tanh_c = cache.gates[l], cache.cells[l], cache.tanh_cells[l]
        dz = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            i = gates[:, t, :H]
            f = gates[:, t, H : 2 * H]
            g = gates[:, t, 2 * H : 3 * H]
            o = gates[:, t, 3 * H :]
            tc = tanh_c[:, t]
            c_prev = cells[:, t - 1] if t > 0 else cache.initial.c[l]
            dh = dh_out[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz[:, t, :H] = dc * g * i * (1.0 - i)
            dz[:, t, H : 2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, t, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
            dz[:, t, 3 * H :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz[:, t] @ w_h.T
        h_prev = np.concatenate([cache.initial.h[l][:, None, :], cache.hiddens[l][:, :-1]], axis=1)
        dz_flat = dz.reshape(-1, 4 * H)
        x = cache.layer_inputs[l]
        grads[f"lstm{l}.w_x"] = x.reshape(-1, x.shape[-1]).T @ dz_flat
        grads[f"lstm{l}.w_h"] = h_prev.reshape(-1, H).T @ dz_flat
        grads[f"lstm{l}.bias"] = dz_flat.sum(axis=0)
        dx = dz @ w_x.T

    emb = np.zeros_like(params["embedding"])
    np.add.at(emb, cache.inputs.reshape(-1), dx.reshape(-1, params.d))
    grads["embedding"] = emb
    return grads


def sequence_loss(
    params: ModelParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    support=None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    with_grads: bool = True,
) -> tuple[float, GradientSet | None]:
    """Weighted cross-entropy (nats) over (B, T) positions, with gradients.

    ``weights`` is zero wherever a position is not a target; ``targets`` there
    is ignored.
    """
    top, cache = lstm_forward(params, inputs, dropout=dropout, rng=rng)
    logits = output_logits(params, top)
    probs = masked_softmax(logits, support)
    weights = np.asarray(weights, dtype=np.float64)
    active = weights != 0
    tgt = np.where(active, targets, 0)
    p_t = np.take_along_axis(probs, tgt[..., None], axis=-1)[..., 0]
    if (p_t[active] <= 0).any():
        raise TargetOffSupport("a target lies outside the softmax support")
    loss = float(-(weights[active] * np.log(p_t[active])).sum())
    if not with_grads:
        return loss, None
    dlogits = probs.copy()
    np.put_along_axis(dlogits, tgt[..., None], np.take_along_axis(dlogits, tgt[..., None], -1) - 1.0, -1)
    dlogits *= weights[..., None]
    return loss, backward(params, cache, dlogits)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: GradientSet
    v: GradientSet
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> AdamState:
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_update(
    params: ModelParams,
    grads: Mapping[str, np.ndarray],
    moments: AdamState,
    step: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam step; inputs are left untouched."""
    if step < 1:
        raise ValueError("Adam step counter starts at 1")
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in {k}")
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise DimensionMismatch(f"gradient {k} has shape {g.shape}, expected {p.shape}")
        m = beta1 * moments.m[k] + (1.0 - beta1) * g
        v = beta2 * moments.v[k] + (1.0 - beta2) * (g * g)
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return ModelParams(new_p), AdamState(new_m, new_v, step)


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_errors(
    params: ModelParams,
    loss_fn: Callable[[ModelParams], float],
    grads: Mapping[str, np.ndarray],
    epsilon: float = 1e-4,
    max_coords: int | None = 40,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> dict[str, float]:
    """Worst relative error per tensor between ``grads`` and central differences.

    At most ``max_coords`` coordinates are sampled per tensor (all when None).
    The relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not epsilon > 0 or not np.isfinite(epsilon):
        raise BadEpsilon(f"epsilon must be a positive finite number, got {epsilon}")
    rng = rng or np.random.default_rng(0)
    work = params.copy()
    out = {}
    for name, tensor in work.items():
        flat = tensor.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
        worst = 0.0
        g = np.asarray(grads[name]).reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + epsilon
            up = loss_fn(work)
            flat[j] = orig - epsilon
            down = loss_fn(work)
            flat[j] = orig
            num = (up - down) / (2.0 * epsilon)
            err = abs(g[j] - num) / max(abs(g[j]), abs(num), floor)
            worst = max(worst, err)
        out[name] = worst
    return out


def finite_diff_check(params, loss_fn, grads, epsilon: float = 1e-4, **kw) -> float:
    return max(finite_diff_errors(params, loss_fn, grads, epsilon, **kw).values())


# ---------------------------------------------------------------------------
# snapshots


def params_to_bytes(params: ModelParams) -> bytes:
    """Versioned dump: magic, version, JSON header with shapes, raw little-endian f64."""
    entries, chunks, offset = [], [], 0
    for name, t in params.items():
        raw = np.ascontiguousarray(t, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries}, separators=(",", ":")).encode()
    return _MAGIC + struct.pack("<II", _FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def params_from_bytes(blob: bytes) -> ModelParams:
    if blob[:4] != _MAGIC:
        raise SnapshotFormatError("not a parameter snapshot")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != _FORMAT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    header = json.loads(blob[12 : 12 + hlen])
    body = memoryview(blob)[12 + hlen :]
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return ModelParams(tensors)
