"""Minimal float32 network engine: 3x3 same-padding conv, 2x2 max-pool, ReLU and
bias-free linear layers, with explicit backward passes and Adam.

Layout is NHWC, batch first. All parameter tensors and activations are float32;
there are no bias terms anywhere (parameter counts are conv: 9*in*out,
linear: in*out). Forward/backward are deterministic for a fixed thread count.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when gradients or losses stop being finite."""


# ---------------------------------------------------------------------------
# Layer specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv3x3:
    in_ch: int
    out_ch: int

    def param_count(self) -> int:
        return 9 * self.in_ch * self.out_ch


@dataclass(frozen=True)
class MaxPool2x2:
    def param_count(self) -> int:
        return 0


@dataclass(frozen=True)
class ReLU:
    def param_count(self) -> int:
        return 0


@dataclass(frozen=True)
class Linear:
    in_dim: int
    out_dim: int

    def param_count(self) -> int:
        return self.in_dim * self.out_dim


LayerSpec = Conv3x3 | MaxPool2x2 | ReLU | Linear


def embedding_stack(height: int, width: int, in_channels: int, out_dim: int) -> list[LayerSpec]:
    """Conv(64)/Conv(128)/pool/Conv(256)/pool/Conv(512) trunk with a linear head.

    Input height/width must be divisible by 4 (two 2x2 pools). The head sees
    (H/4)*(W/4)*512 = 32*H*W features, so its parameter count is 32*H*W*out_dim.
    """
    if height % 4 or width % 4:
        raise ValueError(f"input size {height}x{width} must be divisible by 4")
    return [
        Conv3x3(in_channels, 64), ReLU(),
        Conv3x3(64, 128), ReLU(),
        MaxPool2x2(),
        Conv3x3(128, 256), ReLU(),
        MaxPool2x2(),
        Conv3x3(256, 512), ReLU(),
        Linear((height // 4) * (width // 4) * 512, out_dim),
    ]


def stack_param_count(specs: list[LayerSpec]) -> int:
    return sum(s.param_count() for s in specs)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class Network:
    """An ordered layer-spec stack plus its parameter tensors.

    ``params`` holds one float32 array per parametrized layer, in layer order:
    conv weights are (3, 3, in_ch, out_ch), linear weights (in_dim, out_dim).
    ``forward_samples`` counts individual sample evaluations (a batched forward
    of B inputs adds B).
    """
    specs: list[LayerSpec]
    params: list[np.ndarray]
    seed: int
    forward_samples: int = 0
    _version: int = field(default=0, repr=False)

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Network":
        return Network(list(self.specs), [p.copy() for p in self.params], self.seed)


def he_init(specs: list[LayerSpec], seed: int) -> Network:
    """Kaiming-normal fan-in init (std = sqrt(2/fan_in)), deterministic per seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = []
    for spec in specs:
        if isinstance(spec, Conv3x3):
            std = np.sqrt(2.0 / (9 * spec.in_ch))
            params.append(rng.normal(0.0, std, (3, 3, spec.in_ch, spec.out_ch)).astype(np.float32))
        elif isinstance(spec, Linear):
            std = np.sqrt(2.0 / spec.in_dim)
            params.append(rng.normal(0.0, std, (spec.in_dim, spec.out_dim)).astype(np.float32))
    return Network(list(specs), params, seed)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _chunk_size(h: int, w: int) -> int:
    # keep patch matrices around ~12k rows so they stay cache-resident but GEMMs stay fat
    return max(1, 12544 // (h * w))


def _conv_forward(x: np.ndarray, weight: np.ndarray, out_ch: int) -> np.ndarray:
    """3x3 same-padding conv via chunked im2col + GEMM; x is (B,H,W,C)."""
    b, h, w, c = x.shape
    w2 = weight.reshape(9 * c, out_ch)
    out = np.empty((b, h, w, out_ch), dtype=np.float32)
    ch = _chunk_size(h, w)
    xp = np.zeros((min(ch, b), h + 2, w + 2, c), dtype=np.float32)
    cols = np.empty((min(ch, b), h, w, 9, c), dtype=np.float32)
    for s in range(0, b, ch):
        n = min(ch, b - s)
        xp[:n, 1:-1, 1:-1] = x[s:s + n]
        for k in range(9):
            dy, dx = divmod(k, 3)
            cols[:n, :, :, k] = xp[:n, dy:dy + h, dx:dx + w]
        np.matmul(cols[:n].reshape(n * h * w, 9 * c), w2,
                  out=out[s:s + n].reshape(n * h * w, out_ch))
    return out


def _conv_backward(x: np.ndarray, weight: np.ndarray, g: np.ndarray,
                   want_dx: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """Gradients of a 3x3 same conv; recomputes patch matrices chunk by chunk."""
    b, h, w, c = x.shape
    out_ch = weight.shape[3]
    w2 = weight.reshape(9 * c, out_ch)
    dw = np.zeros((9 * c, out_ch), dtype=np.float32)
    dx = np.empty((b, h, w, c), dtype=np.float32) if want_dx else None
    ch = _chunk_size(h, w)
    xp = np.zeros((min(ch, b), h + 2, w + 2, c), dtype=np.float32)
    cols = np.empty((min(ch, b), h, w, 9, c), dtype=np.float32)
    dxp = np.empty((min(ch, b), h + 2, w + 2, c), dtype=np.float32) if want_dx else None
    for s in range(0, b, ch):
        n = min(ch, b - s)
        xp[:n, 1:-1, 1:-1] = x[s:s + n]
        for k in range(9):
            dy, dx_ = divmod(k, 3)
            cols[:n, :, :, k] = xp[:n, dy:dy + h, dx_:dx_ + w]
        g2 = g[s:s + n].reshape(n * h * w, out_ch)
        dw += cols[:n].reshape(n * h * w, 9 * c).T @ g2
        if want_dx:
            dcol = (g2 @ w2.T).reshape(n, h, w, 9, c)
            dxp[:n] = 0.0
            for k in range(9):
                dy, dx_ = divmod(k, 3)
                dxp[:n, dy:dy + h, dx_:dx_ + w] += dcol[:, :, :, k]
            dx[s:s + n] = dxp[:n, 1:-1, 1:-1]
    return dw.reshape(3, 3, c, out_ch), dx


# 2x2 window offsets in row-major order; backward tie-breaks pick the first hit
_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _pool_forward(x: np.ndarray) -> np.ndarray:
    b, h, w, c = x.shape
    v = x.reshape(b, h // 2, 2, w // 2, 2, c)
    return np.maximum(np.maximum(v[:, :, 0, :, 0], v[:, :, 0, :, 1]),
                      np.maximum(v[:, :, 1, :, 0], v[:, :, 1, :, 1]))


def _pool_backward(x: np.ndarray, out: np.ndarray, g: np.ndarray) -> np.ndarray:
    b, h, w, c = x.shape
    v = x.reshape(b, h // 2, 2, w // 2, 2, c)
    dx = np.empty_like(v)  # every window slot is written below
    taken = np.zeros(out.shape, dtype=bool)
    for dy, dx_ in _POOL_OFFSETS:
        hit = (v[:, :, dy, :, dx_] == out) & ~taken
        dx[:, :, dy, :, dx_] = np.where(hit, g, np.float32(0))
        taken |= hit
    return dx.reshape(b, h, w, c)


def forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Run the stack on x of shape (H,W,C) or (B,H,W,C).

    Returns (output, cache); output is (out_dim,) for a single sample and
    (B, out_dim) for a batch. The cache keeps per-layer inputs / pool argmaxes
    for backward().
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"expected (H,W,C) or (B,H,W,C) input, got shape {x.shape}")
    first_conv = next((s for s in net.specs if isinstance(s, Conv3x3)), None)
    if first_conv is not None and x.shape[3] != first_conv.in_ch:
        raise ValueError(f"input has {x.shape[3]} channels, stack expects {first_conv.in_ch}")
    a = np.array(x, dtype=np.float32, order="C")  # private copy: ReLU mutates in place
    batch = a.shape[0]

    layer_caches: list = []
    p_idx = 0
    for spec in net.specs:
        if isinstance(spec, Conv3x3):
            layer_caches.append(("conv", a))
            a = _conv_forward(a, net.params[p_idx], spec.out_ch)
            p_idx += 1
        elif isinstance(spec, ReLU):
            # in place: the conv output just produced is not aliased anywhere else,
            # and (post > 0) is the same mask as (pre > 0) for the backward pass
            a = np.maximum(a, 0.0, out=a)
            layer_caches.append(("relu", a))
        elif isinstance(spec, MaxPool2x2):
            if a.shape[1] % 2 or a.shape[2] % 2:
                raise ValueError(f"max-pool input {a.shape[1]}x{a.shape[2]} not divisible by 2")
            out = _pool_forward(a)
            layer_caches.append(("pool", (a, out)))
            a = out
        elif isinstance(spec, Linear):
            flat = a.reshape(batch, -1)
            if flat.shape[1] != spec.in_dim:
                raise ValueError(f"linear layer expects {spec.in_dim} features, got {flat.shape[1]}")
            layer_caches.append(("linear", (flat, a.shape)))
            a = flat @ net.params[p_idx]
            p_idx += 1
        else:  # pragma: no cover
            raise TypeError(f"unknown layer spec {spec!r}")

    net.forward_samples += batch
    cache = {"net_id": id(net), "version": net._version, "layers": layer_caches,
             "batch": batch, "single": single}
    out = a[0] if single else a
    return out, cache


def backward(net: Network, cache: dict, out_grad: np.ndarray,
             need_input_grad: bool = True) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Backpropagate out_grad through a cached forward pass.

    Returns (param_grads, input_grad); param_grads align with net.params.
    Gradients are summed over the batch. Max-pool routes gradient to the
    argmax recorded in the cache (first occurrence on ties).
    """
    if cache.get("net_id") != id(net) or cache.get("version") != net._version:
        raise ValueError("cache does not match this network (stale or from another net)")
    g = np.array(out_grad, dtype=np.float32)  # private copy: layers below mutate g
    if cache["single"]:
        g = g[None]
    if g.shape[0] != cache["batch"]:
        raise ValueError(f"output grad batch {g.shape[0]} != cached batch {cache['batch']}")

    param_grads: list[np.ndarray | None] = [None] * len(net.params)
    p_idx = len(net.params)
    first_param_layer = next((i for i, s in enumerate(net.specs)
                              if isinstance(s, (Conv3x3, Linear))), -1)
    for layer_i, (spec, (kind, stored)) in reversed(
            list(enumerate(zip(net.specs, cache["layers"])))):
        if kind == "linear":
            p_idx -= 1
            flat, in_shape = stored
            param_grads[p_idx] = flat.T @ g
            g = (g @ net.params[p_idx].T).reshape(in_shape)
        elif kind == "pool":
            x_in, out = stored
            g = _pool_backward(x_in, out, g)
        elif kind == "relu":
            g = np.multiply(g, stored > 0, out=g)
        elif kind == "conv":
            p_idx -= 1
            want_dx = need_input_grad or layer_i > first_param_layer
            dw, g = _conv_backward(stored, net.params[p_idx], g, want_dx)
            param_grads[p_idx] = dw
        else:  # pragma: no cover
            raise TypeError(kind)
    if g is not None and cache["single"]:
        g = g[0]
    return param_grads, g


def slice_cache(cache: dict, rows: np.ndarray) -> dict:
    """Restrict a batched forward cache to the given batch rows.

    Lets callers run backward only on the samples that actually carry gradient
    (e.g. triplets with an active hinge).
    """
    if cache["single"]:
        raise ValueError("cannot slice a single-sample cache")
    rows = np.asarray(rows)
    layers = []
    for kind, stored in cache["layers"]:
        if kind in ("conv", "relu"):
            layers.append((kind, stored[rows]))
        elif kind == "pool":
            x_in, out = stored
            layers.append((kind, (x_in[rows], out[rows])))
        else:  # linear
            flat, in_shape = stored
            layers.append((kind, (flat[rows], (len(rows),) + in_shape[1:])))
    out = dict(cache)
    out["layers"] = layers
    out["batch"] = len(rows)
    return out


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: Network) -> "AdamState":
        return cls([np.zeros_like(p) for p in net.params],
                   [np.zeros_like(p) for p in net.params])


def adam_step(net: Network, grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """One in-place Adam update with bias correction."""
    if len(grads) != len(net.params):
        raise ValueError(f"got {len(grads)} gradients for {len(net.params)} parameters")
    for g, p in zip(grads, net.params):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = np.float32(1.0 / (1.0 - b1 ** t))
    c2 = np.float32(1.0 / (1.0 - b2 ** t))
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        m *= np.float32(b1)
        m += np.float32(1 - b1) * g
        v *= np.float32(b2)
        v += np.float32(1 - b2) * np.square(g)
        p -= np.float32(lr) * (m * c1) / (np.sqrt(v * c2) + np.float32(state.eps))


# ---------------------------------------------------------------------------
# Weight container
# ---------------------------------------------------------------------------

_MAGIC = "NNWT1"


def _spec_token(spec: LayerSpec) -> str:
    if isinstance(spec, Conv3x3):
        return f"conv3x3:{spec.in_ch}:{spec.out_ch}"
    if isinstance(spec, MaxPool2x2):
        return "maxpool2x2"
    if isinstance(spec, ReLU):
        return "relu"
    return f"linear:{spec.in_dim}:{spec.out_dim}"


def _spec_from_token(tok: str) -> LayerSpec:
    parts = tok.split(":")
    if parts[0] == "conv3x3":
        return Conv3x3(int(parts[1]), int(parts[2]))
    if parts[0] == "maxpool2x2":
        return MaxPool2x2()
    if parts[0] == "relu":
        return ReLU()
    if parts[0] == "linear":
        return Linear(int(parts[1]), int(parts[2]))
    raise ValueError(f"unknown layer token {tok!r}")


def save_network(path, net: Network, meta: dict | None = None) -> None:
    """Write a network as a text header plus little-endian float32 payload.

    Header lines: magic/version, layer tokens, one shape line per parameter
    tensor, optional meta key=value lines, and a crc32 of the payload.
    """
    payload = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in net.params)
    lines = [_MAGIC, "layers " + " ".join(_spec_token(s) for s in net.specs)]
    for p in net.params:
        lines.append("tensor " + " ".join(str(d) for d in p.shape))
    lines.append(f"seed {net.seed}")
    for key, val in (meta or {}).items():
        if any(ch.isspace() for ch in str(key)):
            raise ValueError(f"meta key {key!r} contains whitespace")
        lines.append(f"meta {key}={val}")
    lines.append(f"crc32 {zlib.crc32(payload):08x}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode("ascii") + b"\n")
        fh.write(payload)


def load_network(path) -> tuple[Network, dict]:
    """Read a weight container; verifies the checksum. Returns (net, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header_end = blob.index(b"\nend\n") + len(b"\nend\n")
    header = blob[:header_end].decode("ascii").splitlines()
    payload = blob[header_end:]
    if header[0] != _MAGIC:
        raise ValueError(f"bad magic {header[0]!r}")
    specs: list[LayerSpec] = []
    shapes: list[tuple[int, ...]] = []
    seed = 0
    meta: dict[str, str] = {}
    crc = None
    for line in header[1:]:
        if line.startswith("layers "):
            specs = [_spec_from_token(t) for t in line.split()[1:]]
        elif line.startswith("tensor "):
            shapes.append(tuple(int(d) for d in line.split()[1:]))
        elif line.startswith("seed "):
            seed = int(line.split()[1])
        elif line.startswith("meta "):
            key, _, val = line[5:].partition("=")
            meta[key] = val
        elif line.startswith("crc32 "):
            crc = int(line.split()[1], 16)
    if crc is None or zlib.crc32(payload) != crc:
        raise ValueError(f"checksum mismatch in {path}")
    params = []
    off = 0
    for shape in shapes:
        n = int(np.prod(shape))
        params.append(np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(shape).copy())
        off += 4 * n
    if off != len(payload):
        raise ValueError(f"payload size mismatch in {path}")
    return Network(specs, params, seed), meta
