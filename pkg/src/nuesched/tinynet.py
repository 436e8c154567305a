"""Dense tanh MLPs with hand-written backprop and Adam.

Weights are stored ``(out, in)``; a forward pass over a batch ``x`` of shape
``(B, in)`` computes ``x @ W.T + b`` per layer, tanh on hidden layers and the
identity on the output layer.

Checkpoint record layout (little-endian), version 1::

    magic      4 bytes  b"TNET"
    version    uint32   1
    n_sizes    uint32   number of layer sizes L
    sizes      L x uint32
    then for each of the L-1 dense layers, in order:
        weight float64[out * in]  row-major (out, in)
        bias   float64[out]
    n_extra    uint32   length of an auxiliary float64 vector (e.g. log-std)
    extra      float64[n_extra]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"TNET"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetArch:
    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass
class AdamConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


@dataclass
class NetParams:
    arch: NetArch
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    adam_m: list[np.ndarray] = field(default_factory=list)
    adam_v: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if not self.adam_m:
            self.adam_m = [np.zeros_like(p) for p in self.arrays()]
            self.adam_v = [np.zeros_like(p) for p in self.arrays()]

    def arrays(self) -> list[np.ndarray]:
        """Parameters in canonical order: all weights, then all biases."""
        return [*self.weights, *self.biases]

    def copy(self) -> "NetParams":
        return NetParams(
            self.arch,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [m.copy() for m in self.adam_m],
            [v.copy() for v in self.adam_v],
            self.step_count,
        )


@dataclass
class Grads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def __add__(self, other: "Grads") -> "Grads":
        return Grads(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def net_init(arch: NetArch, seed: int, output_gain: float = 1.0) -> NetParams:
    """Orthogonal init: gain sqrt(2) on hidden layers, ``output_gain`` last.

    Policy heads conventionally use ``output_gain=0.01``.
    """
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights, biases = [], []
    for i in range(arch.n_layers):
        gain = output_gain if i == arch.n_layers - 1 else np.sqrt(2.0)
        weights.append(_orthogonal(rng, sizes[i + 1], sizes[i], gain))
        biases.append(np.zeros(sizes[i + 1]))
    return NetParams(arch, weights, biases)


def net_forward(params: NetParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return ``(output, cache)``. Accepts a single vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.arch.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[1]} != {params.arch.layer_sizes[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    acts = [x]
    h = x
    last = params.arch.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    out = h[0] if single else h
    return out, acts


def net_backward(params: NetParams, cache: list[np.ndarray], grad_out: np.ndarray) -> tuple[Grads, np.ndarray]:
    """Reverse-mode gradients given dLoss/dOutput.

    Returns ``(param_grads, grad_input)``.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    n = params.arch.n_layers
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            # cache[i + 1] holds tanh output of layer i
            g = g * (1.0 - cache[i + 1] ** 2)
        gw[i] = g.T @ cache[i]
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return Grads(gw, gb), g


def adam_update(
    arrays: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    m: Sequence[np.ndarray],
    v: Sequence[np.ndarray],
    step: int,
    cfg: AdamConfig,
) -> None:
    """Bias-corrected Adam on parallel lists, in place. ``step`` is 1-based."""
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1**step
    corr2 = 1.0 - b2**step
    for p, g, mi, vi in zip(arrays, grads, m, v):
        mi *= b1
        mi += (1.0 - b1) * g
        vi *= b2
        vi += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (mi / corr1) / (np.sqrt(vi / corr2) + cfg.epsilon)


def adam_step(params: NetParams, grads: Grads, cfg: AdamConfig) -> NetParams:
    params.step_count += 1
    adam_update(params.arrays(), grads.arrays(), params.adam_m, params.adam_v, params.step_count, cfg)
    return params


def global_norm(arrays: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def clip_by_global_norm(arrays: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale ``arrays`` in place so their joint L2 norm is <= max_norm."""
    norm = global_norm(arrays)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for a in arrays:
            a *= scale
    return norm


def flops_per_forward(arch: NetArch) -> int:
    """Batch-1 forward cost: 2*in*out + out per dense layer, 1 per tanh unit."""
    sizes = arch.layer_sizes
    total = 0
    for i in range(arch.n_layers):
        total += 2 * sizes[i] * sizes[i + 1] + sizes[i + 1]
    total += sum(sizes[1:-1])
    return total


# ------------------------------------------------------------ serialization


def write_params(fh: BinaryIO, params: NetParams, extra: np.ndarray | None = None) -> None:
    sizes = params.arch.layer_sizes
    fh.write(MAGIC)
    fh.write(struct.pack("<II", FORMAT_VERSION, len(sizes)))
    fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
    for w, b in zip(params.weights, params.biases):
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    extra = np.zeros(0) if extra is None else np.asarray(extra, dtype="<f8").ravel()
    fh.write(struct.pack("<I", extra.size))
    fh.write(extra.tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("truncated network record")
    return data


def read_params(fh: BinaryIO) -> tuple[NetParams, np.ndarray]:
    if _read_exact(fh, 4) != MAGIC:
        raise ValueError("not a network record (bad magic)")
    version, n_sizes = struct.unpack("<II", _read_exact(fh, 8))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported network record version {version}")
    sizes = struct.unpack(f"<{n_sizes}I", _read_exact(fh, 4 * n_sizes))
    arch = NetArch(tuple(sizes))
    weights, biases = [], []
    for i in range(arch.n_layers):
        n_in, n_out = sizes[i], sizes[i + 1]
        w = np.frombuffer(_read_exact(fh, 8 * n_in * n_out), dtype="<f8").reshape(n_out, n_in)
        b = np.frombuffer(_read_exact(fh, 8 * n_out), dtype="<f8")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    (n_extra,) = struct.unpack("<I", _read_exact(fh, 4))
    extra = np.frombuffer(_read_exact(fh, 8 * n_extra), dtype="<f8").astype(np.float64)
    return NetParams(arch, weights, biases), extra
