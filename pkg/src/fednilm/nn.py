"""A compact encoder / temporal-pyramid-pooling / decoder network for
multi-label ON/OFF classification, written against flat parameter vectors so
that federated averaging and noise injection work on plain arrays.

Everything runs in float64 with hand-derived gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NetworkSpec:
    window_len: int = 120
    appliance_count: int = 3
    encoder_channels: tuple[int, ...] = (8, 16, 32, 32)
    encoder_downsample: int = 4
    pooling_bins: tuple[int, ...] = (1, 2, 3, 6)
    dropout_p: float = 0.1
    activation: str = "relu"
    kernel_size: int = 3
    decoder_channels: int = 16

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "pooling_bins", tuple(int(b) for b in self.pooling_bins))

    @property
    def n_pools(self) -> int:
        return int(round(math.log2(self.encoder_downsample)))

    @property
    def reduced_len(self) -> int:
        return self.window_len // self.encoder_downsample

    @property
    def reduced_channels(self) -> int:
        return max(1, self.encoder_channels[-1] // 4)

    def validate(self) -> "NetworkSpec":
        if self.window_len < 1 or self.appliance_count < 1:
            raise ConfigError("window_len and appliance_count must be positive")
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels must be a non-empty list of positive widths")
        ds = self.encoder_downsample
        if ds < 1 or ds & (ds - 1):
            raise ConfigError(f"encoder_downsample must be a power of two, got {ds}")
        if self.n_pools > len(self.encoder_channels) - 1 and ds > 1:
            raise ConfigError(
                f"encoder_downsample={ds} needs {self.n_pools} max-pools but only "
                f"{len(self.encoder_channels) - 1} blocks may be followed by one")
        if self.window_len % ds:
            raise ConfigError(f"encoder_downsample={ds} does not divide window_len={self.window_len}")
        if not self.pooling_bins:
            raise ConfigError("pooling_bins must not be empty")
        for b in self.pooling_bins:
            if b < 1 or self.reduced_len % b:
                raise ConfigError(f"pooling bin {b} does not divide reduced length {self.reduced_len}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd integer")
        if self.decoder_channels < 1:
            raise ConfigError("decoder_channels must be positive")
        return self

    def layer_shapes(self) -> list[tuple[str, str, tuple[int, ...]]]:
        K = self.kernel_size
        shapes = []
        c_in = 1
        for i, c in enumerate(self.encoder_channels):
            shapes.append((f"enc{i}", "weight", (c, c_in, K)))
            shapes.append((f"enc{i}", "bias", (c,)))
            c_in = c
        red = self.reduced_channels
        for j in range(len(self.pooling_bins)):
            shapes.append((f"ppm{j}", "weight", (red, c_in)))
            shapes.append((f"ppm{j}", "bias", (red,)))
        c_cat = c_in + red * len(self.pooling_bins)
        D = self.decoder_channels
        shapes.append(("dec", "weight", (D, c_cat, K)))
        shapes.append(("dec", "bias", (D,)))
        shapes.append(("up", "weight", (D, D, self.encoder_downsample)))
        shapes.append(("up", "bias", (D,)))
        shapes.append(("head", "weight", (self.appliance_count, D)))
        shapes.append(("head", "bias", (self.appliance_count,)))
        return shapes


Manifest = tuple[tuple[str, str, tuple[int, ...]], ...]


@dataclass
class ModelParams:
    values: np.ndarray
    manifest: Manifest

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.manifest = tuple((l, r, tuple(s)) for l, r, s in self.manifest)
        total = sum(math.prod(s) for _, _, s in self.manifest)
        if self.values.ndim != 1 or total != self.values.size:
            raise ShapeError(f"manifest covers {total} values, vector has {self.values.size}")

    def __len__(self):
        return self.values.size

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.manifest)

    def views(self) -> dict[str, np.ndarray]:
        """Reshaped views into ``values`` keyed ``"layer.role"``."""
        out, offset = {}, 0
        for layer, role, shape in self.manifest:
            n = math.prod(shape)
            out[f"{layer}.{role}"] = self.values[offset:offset + n].reshape(shape)
            offset += n
        return out

    def check_compatible(self, other: "ModelParams") -> None:
        if self.manifest != other.manifest:
            raise ShapeError("parameter manifests differ")


@dataclass
class Gradient:
    values: np.ndarray
    sample_count: int = 1


@dataclass
class OptimState:
    velocity: np.ndarray
    lr: float = 1e-4
    momentum: float = 0.5

    @classmethod
    def zeros_like(cls, params: ModelParams, lr: float = 1e-4, momentum: float = 0.5) -> "OptimState":
        return cls(np.zeros(len(params)), lr, momentum)


def build_network(spec: NetworkSpec, seed) -> ModelParams:
    """He-uniform weights, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, and zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    manifest = tuple(spec.layer_shapes())
    chunks = []
    for layer, role, shape in manifest:
        if role == "bias":
            chunks.append(np.zeros(math.prod(shape)))
            continue
        # transposed conv weights are (in, out, k); each output sees `in` inputs
        fan_in = shape[0] if layer == "up" else math.prod(shape[1:])
        bound = math.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=math.prod(shape)))
    return ModelParams(np.concatenate(chunks), manifest)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _check_batch(spec, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != spec.window_len:
        raise ShapeError(f"expected batch of shape (B, {spec.window_len}), got {batch.shape}")
    return batch


def _maxpool2(a):
    B, C, T = a.shape
    r = a.reshape(B, C, T // 2, 2)
    idx = r.argmax(axis=3)
    return np.take_along_axis(r, idx[..., None], axis=3)[..., 0], idx


def _maxpool2_backward(dout, idx):
    B, C, H = dout.shape
    d = np.zeros((B, C, H, 2))
    np.put_along_axis(d, idx[..., None], dout[..., None], axis=3)
    return d.reshape(B, C, 2 * H)


def _forward(params: ModelParams, spec: NetworkSpec, batch, train_mode, seed):
    p = params.views()
    pad = spec.kernel_size // 2
    rng = np.random.default_rng(seed) if (train_mode and spec.dropout_p > 0) else None
    h = batch[:, None, :]
    cache = {"enc": []}
    for i in range(len(spec.encoder_channels)):
        x_in = np.ascontiguousarray(h)
        z = kernels.conv1d_forward(x_in, p[f"enc{i}.weight"], p[f"enc{i}.bias"], pad)
        a = np.maximum(z, 0.0)
        mask = None
        if rng is not None:
            keep = 1.0 - spec.dropout_p
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        idx = None
        if i < spec.n_pools:
            a, idx = _maxpool2(a)
        cache["enc"].append((x_in, z, mask, idx))
        h = a

    feat = h
    B, C, T = feat.shape
    branches = []
    ups = [feat]
    for j, nb in enumerate(spec.pooling_bins):
        s = T // nb
        pooled = feat.reshape(B, C, nb, s).mean(axis=3)
        z = np.matmul(p[f"ppm{j}.weight"], pooled) + p[f"ppm{j}.bias"][None, :, None]
        a = np.maximum(z, 0.0)
        ups.append(np.repeat(a, s, axis=2))
        branches.append((pooled, z, s))
    cat = np.ascontiguousarray(np.concatenate(ups, axis=1))
    cache["ppm"] = branches
    cache["cat"] = cat

    z_dec = kernels.conv1d_forward(cat, p["dec.weight"], p["dec.bias"], pad)
    a_dec = np.maximum(z_dec, 0.0)
    ds = spec.encoder_downsample
    D = spec.decoder_channels
    # kernel == stride transposed conv: one (D*ds, D) matmul per position
    w_up = p["up.weight"].transpose(1, 2, 0).reshape(D * ds, D)
    z_up = np.matmul(w_up, a_dec).reshape(B, D, ds, T).transpose(0, 1, 3, 2).reshape(B, D, T * ds)
    z_up += p["up.bias"][None, :, None]
    a_up = np.maximum(z_up, 0.0)
    logits = np.matmul(p["head.weight"], a_up) + p["head.bias"][None, :, None]
    cache.update(z_dec=z_dec, a_dec=a_dec, z_up=z_up, a_up=a_up)
    return logits, cache


def _backward(params: ModelParams, spec: NetworkSpec, cache, dlogits) -> np.ndarray:
    p = params.views()
    grad = ModelParams(np.zeros(len(params)), params.manifest)
    g = grad.views()
    pad = spec.kernel_size // 2
    ds = spec.encoder_downsample

    a_up = cache["a_up"]
    g["head.weight"][...] = np.tensordot(dlogits, a_up, axes=([0, 2], [0, 2]))
    g["head.bias"][...] = dlogits.sum(axis=(0, 2))
    d_up = np.matmul(p["head.weight"].T, dlogits) * (cache["z_up"] > 0)

    B, D, L = d_up.shape
    T = L // ds
    d_up4 = d_up.reshape(B, D, T, ds).transpose(0, 1, 3, 2).reshape(B, D * ds, T)
    a_dec = cache["a_dec"]
    gw = np.tensordot(d_up4, a_dec, axes=([0, 2], [0, 2]))  # (D*ds, D)
    g["up.weight"][...] = gw.reshape(D, ds, D).transpose(2, 0, 1)
    g["up.bias"][...] = d_up.sum(axis=(0, 2))
    w_up = p["up.weight"].transpose(1, 2, 0).reshape(D * ds, D)
    d_dec = np.matmul(w_up.T, d_up4) * (cache["z_dec"] > 0)

    d_cat, dw, db = kernels.conv1d_backward(cache["cat"], p["dec.weight"], np.ascontiguousarray(d_dec), pad)
    g["dec.weight"][...] = dw
    g["dec.bias"][...] = db

    C = spec.encoder_channels[-1]
    red = spec.reduced_channels
    d_feat = d_cat[:, :C, :].copy()
    for j, (pooled, z, s) in enumerate(cache["ppm"]):
        d_a = d_cat[:, C + j * red:C + (j + 1) * red, :]
        nb = T // s
        d_z = d_a.reshape(B, red, nb, s).sum(axis=3) * (z > 0)
        g[f"ppm{j}.weight"][...] = np.tensordot(d_z, pooled, axes=([0, 2], [0, 2]))
        g[f"ppm{j}.bias"][...] = d_z.sum(axis=(0, 2))
        d_pooled = np.matmul(p[f"ppm{j}.weight"].T, d_z)
        d_feat += np.repeat(d_pooled / s, s, axis=2)

    dh = d_feat
    for i in reversed(range(len(spec.encoder_channels))):
        x_in, z, mask, idx = cache["enc"][i]
        if idx is not None:
            dh = _maxpool2_backward(dh, idx)
        if mask is not None:
            dh = dh * mask
        dz = np.ascontiguousarray(dh * (z > 0))
        dx, dw, db = kernels.conv1d_backward(x_in, p[f"enc{i}.weight"], dz, pad)
        g[f"enc{i}.weight"][...] = dw
        g[f"enc{i}.bias"][...] = db
        dh = dx
    return grad.values


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce_terms(logits, targets):
    # softplus(z) - y*z, stable for large |z|
    return np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))


def _check_targets(spec, batch, targets):
    targets = np.asarray(targets, dtype=np.float64)
    expected = (batch.shape[0], spec.appliance_count, spec.window_len)
    if targets.shape != expected:
        raise ShapeError(f"expected targets of shape {expected}, got {targets.shape}")
    if not np.all((targets == 0.0) | (targets == 1.0)):
        raise ValueError("targets must be binary (0/1)")
    return targets


def forward_logits(params: ModelParams, spec: NetworkSpec, batch, train_mode=False, seed=None):
    batch = _check_batch(spec, batch)
    logits, _ = _forward(params, spec, batch, train_mode, seed)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite network output")
    return logits


def forward(params: ModelParams, spec: NetworkSpec, batch, train_mode=False, seed=None):
    """Per-appliance, per-timestep ON probabilities, shape ``(B, I, window_len)``."""
    return _sigmoid(forward_logits(params, spec, batch, train_mode, seed))


def predict_states(params: ModelParams, spec: NetworkSpec, batch) -> np.ndarray:
    """Eval-mode ON/OFF decisions; ON iff probability >= 0.5 (logit >= 0)."""
    return (forward_logits(params, spec, batch) >= 0.0).astype(np.int8)


def loss_and_grad(params: ModelParams, spec: NetworkSpec, batch, targets,
                  train_mode=False, seed=None) -> tuple[float, Gradient]:
    """Mean binary cross-entropy over B x I x window_len and its exact gradient."""
    batch = _check_batch(spec, batch)
    targets = _check_targets(spec, batch, targets)
    logits, cache = _forward(params, spec, batch, train_mode, seed)
    loss = float(_bce_terms(logits, targets).mean())
    dlogits = (_sigmoid(logits) - targets) / logits.size
    g = _backward(params, spec, cache, dlogits)
    if not (math.isfinite(loss) and np.all(np.isfinite(g))):
        raise FloatingPointError("non-finite loss or gradient")
    return loss, Gradient(g, batch.shape[0])


def per_record_losses(params: ModelParams, spec: NetworkSpec, batch, targets) -> np.ndarray:
    """Eval-mode cross-entropy of each record, averaged over its I x window_len points."""
    batch = _check_batch(spec, batch)
    targets = _check_targets(spec, batch, targets)
    logits = forward_logits(params, spec, batch)
    return _bce_terms(logits, targets).mean(axis=(1, 2))


def sgd_step(params: ModelParams, grad: Gradient, opt: OptimState) -> ModelParams:
    """Heavy-ball step. Updates ``opt.velocity`` in place, returns new params."""
    g = np.asarray(grad.values if isinstance(grad, Gradient) else grad, dtype=np.float64)
    if g.shape != params.values.shape or opt.velocity.shape != params.values.shape:
        raise ShapeError("parameter, gradient and velocity lengths differ")
    opt.velocity = opt.momentum * opt.velocity + g
    return ModelParams(params.values - opt.lr * opt.velocity, params.manifest)
