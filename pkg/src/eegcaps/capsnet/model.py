"""Capsule network model: configuration, parameters, forward and backward.

Architecture, for the default configuration on an 8x32x32 input:
conv (256 filters, 9x9, stride 1, ReLU) -> 256x24x24, a second valid
convolution (256 = 8*32 maps, 9x9, stride 2) regrouped into 2048 primary
capsules of dimension 8, per-pair linear maps into 2 output capsules of
dimension 16, then dynamic routing.  Output capsule lengths are the class
scores.  The backward pass differentiates the margin loss exactly through
the unrolled routing iterations.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from ..errors import ShapeMismatch
from . import ops


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 8
    grid: int = 32
    conv1_filters: int = 256
    conv1_kernel: int = 9
    conv1_stride: int = 1
    pc_capsule_dim: int = 8
    pc_filters_per_dim: int = 32
    pc_kernel: int = 9
    pc_stride: int = 2
    dc_num_classes: int = 2
    dc_capsule_dim: int = 16
    routing_iterations: int = 3

    def __post_init__(self):
        if self.conv1_out < 1 or self.pc_grid < 1:
            raise ShapeMismatch(f"config geometry collapses: {self}")
        if self.routing_iterations < 1:
            raise ShapeMismatch("routing_iterations must be >= 1")

    @property
    def conv1_out(self) -> int:
        return (self.grid - self.conv1_kernel) // self.conv1_stride + 1

    @property
    def pc_grid(self) -> int:
        return (self.conv1_out - self.pc_kernel) // self.pc_stride + 1

    @property
    def num_primary_caps(self) -> int:
        return self.pc_grid * self.pc_grid * self.pc_filters_per_dim

    def with_changes(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)


# Integer fields serialized into checkpoints, in declaration order.
CONFIG_FIELDS = tuple(f.name for f in fields(ModelConfig))


def reduced_config(routing_iterations: int = 3) -> ModelConfig:
    """Small geometry used for gradient checking (kernels shrunk to fit)."""
    return ModelConfig(
        in_channels=2,
        grid=12,
        conv1_filters=8,
        conv1_kernel=5,
        pc_capsule_dim=4,
        pc_filters_per_dim=2,
        pc_kernel=3,
        pc_stride=2,
        dc_num_classes=2,
        dc_capsule_dim=4,
        routing_iterations=routing_iterations,
    )


@dataclass
class ModelParams:
    conv1_kernels: np.ndarray   # (F1, C, k1, k1)
    conv1_bias: np.ndarray      # (F1,)
    pc_kernels: np.ndarray      # (D*G, F1, k2, k2)
    pc_bias: np.ndarray         # (D*G,)
    W: np.ndarray               # (N, J, K, D) per-pair transformation maps

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(**{n: getattr(self, n).astype(dtype) for n in PARAM_FIELDS})

    @property
    def dtype(self):
        return self.conv1_kernels.dtype

    def copy(self) -> "ModelParams":
        return ModelParams(**{n: getattr(self, n).copy() for n in PARAM_FIELDS})


PARAM_FIELDS = tuple(f.name for f in fields(ModelParams))


def init_params(config: ModelConfig, seed, dtype=np.float64) -> ModelParams:
    """Seeded initialization: Glorot-uniform conv kernels, N(0, 0.05) maps."""
    rng = np.random.default_rng(seed)

    def glorot(shape):
        fan_in = int(np.prod(shape[1:]))
        fan_out = shape[0] * int(np.prod(shape[2:]))
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    c = config
    dg = c.pc_capsule_dim * c.pc_filters_per_dim
    params = ModelParams(
        conv1_kernels=glorot((c.conv1_filters, c.in_channels, c.conv1_kernel, c.conv1_kernel)),
        conv1_bias=np.zeros(c.conv1_filters),
        pc_kernels=glorot((dg, c.conv1_filters, c.pc_kernel, c.pc_kernel)),
        pc_bias=np.zeros(dg),
        W=rng.normal(0.0, 0.05, size=(c.num_primary_caps, c.dc_num_classes,
                                      c.dc_capsule_dim, c.pc_capsule_dim)),
    )
    return params.astype(dtype)


def primary_caps_forward(features, pc_kernels, pc_bias, capsule_dim, stride=2):
    """Primary capsule layer for one example.

    A single valid convolution produces capsule_dim * n_groups maps laid out
    dim-major (map index = d * n_groups + g); each spatial position and group
    then yields one capsule_dim-vector, squashed.  Capsule index runs
    spatial-major: i = (y * grid + x) * n_groups + g.
    """
    conv = ops.conv2d_forward(features, pc_kernels, pc_bias, stride=stride, relu=False)
    dg, g_h, g_w = conv.shape
    groups = dg // capsule_dim
    u = conv.reshape(capsule_dim, groups, g_h, g_w).transpose(2, 3, 1, 0)
    u = u.reshape(g_h * g_w * groups, capsule_dim)
    return ops.squash(u)


@dataclass
class ForwardCache:
    x: np.ndarray
    conv1: ops.ConvCache
    pc: ops.ConvCache
    u_raw: np.ndarray           # pre-squash primary capsules (B, N, D)
    u: np.ndarray               # (B, N, D)
    u_hat: np.ndarray           # (B, N, J, K)
    trace: ops.RoutingTrace
    v: np.ndarray               # (B, J, K)
    lengths: np.ndarray         # (B, J)
    config: ModelConfig


def forward_batch(x, params: ModelParams, config: ModelConfig):
    """Run a (B, C, H, W) batch; returns (lengths (B, J), ForwardCache)."""
    c = config
    if x.shape[1:] != (c.in_channels, c.grid, c.grid):
        raise ShapeMismatch(
            f"input {x.shape[1:]} does not match configured "
            f"{(c.in_channels, c.grid, c.grid)}"
        )
    # channels-last internally; see ops module
    xcl = np.ascontiguousarray(np.asarray(x, dtype=params.dtype).transpose(0, 2, 3, 1))
    h1, cache1 = ops.conv_forward_batch(
        xcl, params.conv1_kernels, params.conv1_bias, stride=c.conv1_stride, relu=True
    )
    pc_out, cache2 = ops.conv_forward_batch(
        h1, params.pc_kernels, params.pc_bias, stride=c.pc_stride, relu=False
    )
    b = x.shape[0]
    g = c.pc_grid
    # map index within the DG axis is dim-major (d * groups + g); regroup so
    # capsule i = (y, x, group) carries the dim-vector
    u_raw = pc_out.reshape(b, g, g, c.pc_capsule_dim, c.pc_filters_per_dim)
    u_raw = u_raw.transpose(0, 1, 2, 4, 3).reshape(b, c.num_primary_caps, c.pc_capsule_dim)
    u = ops.squash(u_raw)
    u_hat = ops.predict_vectors_batch(u, params.W)
    v, trace = ops.routing_forward_batch(u_hat, c.routing_iterations)
    lengths = np.sqrt(np.sum(v * v, axis=-1))
    return lengths, ForwardCache(xcl, cache1, cache2, u_raw, u, u_hat, trace, v, lengths, c)


def forward(image, params: ModelParams, config: ModelConfig):
    """Single-example forward pass; returns (class lengths (J,), cache)."""
    data = image.data if hasattr(image, "data") else image
    lengths, cache = forward_batch(np.asarray(data)[None], params, config)
    return lengths[0], cache


# margin loss constants
M_PLUS = 0.9
M_MINUS = 0.1
LAMBDA_ABSENT = 0.5


def margin_loss(class_lengths, label, m_plus=M_PLUS, m_minus=M_MINUS, lam=LAMBDA_ABSENT):
    """Two-sided hinge-squared loss on capsule lengths for one example."""
    lengths = np.asarray(class_lengths, dtype=float)
    present = np.zeros_like(lengths)
    present[label] = 1.0
    loss = present * np.maximum(0.0, m_plus - lengths) ** 2
    loss += lam * (1.0 - present) * np.maximum(0.0, lengths - m_minus) ** 2
    return float(loss.sum())


def margin_loss_batch(lengths, labels, m_plus=M_PLUS, m_minus=M_MINUS, lam=LAMBDA_ABSENT):
    """Per-example losses (B,) and gradient w.r.t. lengths (B, J)."""
    present = np.zeros_like(lengths)
    present[np.arange(lengths.shape[0]), labels] = 1.0
    lo = np.maximum(0.0, m_plus - lengths)
    hi = np.maximum(0.0, lengths - m_minus)
    losses = (present * lo**2 + lam * (1.0 - present) * hi**2).sum(axis=1)
    dlengths = -2.0 * present * lo + 2.0 * lam * (1.0 - present) * hi
    return losses, dlengths


def backward_batch(cache: ForwardCache, labels, params: ModelParams, scale=None):
    """Gradients of the summed (or scaled) margin loss over a batch.

    Returns (grads dict keyed like ModelParams, per-example losses).
    ``scale`` multiplies every gradient; pass 1/B for the batch mean.
    """
    labels = np.asarray(labels)
    losses, dlengths = margin_loss_batch(cache.lengths, labels)
    if scale is not None:
        dlengths = dlengths * scale
    c = cache.config

    # d|v| / dv = v / |v|; zero-length capsules get zero gradient
    safe = np.maximum(cache.lengths, np.finfo(cache.v.dtype).tiny)
    dv = dlengths[..., None] * (cache.v / safe[..., None])

    du_hat = ops.routing_backward_batch(dv, cache.trace, cache.u_hat)
    du, dw = ops.predict_vectors_backward_batch(du_hat, cache.u, params.W)
    du_raw = ops.squash_backward(du, cache.u_raw)

    b = du_raw.shape[0]
    g = c.pc_grid
    dpc = du_raw.reshape(b, g, g, c.pc_filters_per_dim, c.pc_capsule_dim)
    dpc = dpc.transpose(0, 1, 2, 4, 3).reshape(
        b, g, g, c.pc_capsule_dim * c.pc_filters_per_dim
    )
    dk2, db2, dh1 = ops.conv_backward_batch(dpc, cache.pc, need_dx=True)
    dk1, db1, _ = ops.conv_backward_batch(dh1, cache.conv1, need_dx=False)

    grads = {
        "conv1_kernels": dk1,
        "conv1_bias": db1,
        "pc_kernels": dk2,
        "pc_bias": db2,
        "W": dw,
    }
    return grads, losses


def backward(cache: ForwardCache, label, params: ModelParams):
    """Exact margin-loss gradients for the single example behind ``cache``."""
    grads, _ = backward_batch(cache, np.array([label]), params)
    return grads
