"""Numerical building blocks of the capsule network.

Everything here is plain numpy.  The public functions operate on a single
example with channels-first shapes; the ``_batch`` variants carry a leading
batch axis and keep activations channels-last internally so the im2col
unrolls copy contiguous pixel runs and the convolutions become single GEMM
calls.  Every forward op has a matching hand-derived backward, verified
against central finite differences in the test suite.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


# ---------------------------------------------------------------------------
# valid 2-D convolution (cross-correlation), im2col + GEMM
#
# Batched activations are (B, H, W, C); kernels keep the declared
# (F, C, k, k) layout and are reordered to match the column layout on use.


def _kernel_matrix(kernels: np.ndarray) -> np.ndarray:
    f, c, k, _ = kernels.shape
    return kernels.transpose(0, 2, 3, 1).reshape(f, k * k * c)


def _im2col(x: np.ndarray, kernel: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Unroll (B, H, W, C) into a (B*Ho*Wo, k*k*C) matrix of receptive fields."""
    windows = sliding_window_view(x, (kernel, kernel), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]                  # (B, Ho, Wo, C, k, k)
    b, ho, wo, c = windows.shape[:4]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kernel * kernel * c)
    return cols, ho, wo


def _col2im(dcols: np.ndarray, x_shape: tuple, kernel: int, stride: int) -> np.ndarray:
    """Scatter-add column gradients back onto the (B, H, W, C) input grid."""
    b, h, w, c = x_shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    dwin = dcols.reshape(b, ho, wo, kernel, kernel, c)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[:, :, :, i, j]
    return dx


@dataclass
class ConvCache:
    cols: np.ndarray          # im2col matrix, reused by the backward pass
    x_shape: tuple            # channels-last input shape
    kernels: np.ndarray
    stride: int
    relu_mask: np.ndarray | None


def conv_forward_batch(x, kernels, bias, stride=1, relu=False):
    """Valid convolution of channels-last (B, H, W, C) with (F, C, k, k) kernels.

    Returns the (B, Ho, Wo, F) output and a cache for ``conv_backward_batch``.
    """
    f, c, k, _ = kernels.shape
    if x.shape[3] != c or x.shape[1] < k or x.shape[2] < k:
        raise ShapeMismatch(
            f"cannot convolve input {x.shape[1:]} with {f}x{c}x{k}x{k} kernels"
        )
    cols, ho, wo = _im2col(x, k, stride)
    out = cols @ _kernel_matrix(kernels).T + bias
    out = out.reshape(x.shape[0], ho, wo, f)
    mask = None
    if relu:
        mask = out > 0
        out = np.where(mask, out, 0)
    return out, ConvCache(cols, x.shape, kernels, stride, mask)


def conv_backward_batch(dout, cache: ConvCache, need_dx=True):
    """Gradients of a valid convolution: (dkernels, dbias, dx or None)."""
    if cache.relu_mask is not None:
        dout = dout * cache.relu_mask
    f, c, k, _ = cache.kernels.shape
    dmat = dout.reshape(-1, f)
    dkernels = (dmat.T @ cache.cols).reshape(f, k, k, c).transpose(0, 3, 1, 2)
    dbias = dmat.sum(axis=0)
    dx = None
    if need_dx:
        dcols = dmat @ _kernel_matrix(cache.kernels)
        dx = _col2im(dcols, cache.x_shape, k, cache.stride)
    return dkernels, dbias, dx


def conv2d_forward(x, kernels, bias, stride=1, relu=False):
    """Single-example valid convolution: (C, H, W) -> (F, Ho, Wo)."""
    xb = np.ascontiguousarray(np.asarray(x).transpose(1, 2, 0))[None]
    out, _ = conv_forward_batch(xb, kernels, bias, stride=stride, relu=relu)
    return out[0].transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# squash nonlinearity


def squash(s, axis=-1):
    """Shrink vectors to length < 1 while keeping their direction.

    v = (|s|^2 / (1 + |s|^2)) * (s / |s|), with squash(0) = 0.
    """
    n2 = np.sum(s * s, axis=axis, keepdims=True)
    return s * (np.sqrt(n2) / (1.0 + n2))


def squash_backward(dv, s, axis=-1):
    """Pull gradients back through squash given the pre-squash input s."""
    n2 = np.sum(s * s, axis=axis, keepdims=True)
    n = np.sqrt(n2)
    unit = s / np.maximum(n, np.finfo(s.dtype).tiny)
    radial = np.sum(unit * dv, axis=axis, keepdims=True)
    # Jacobian = alpha*I + n*alpha' * u u^T with alpha = n/(1+n^2)
    return (n / (1.0 + n2)) * dv + (n * (1.0 - n2) / (1.0 + n2) ** 2) * radial * unit


# ---------------------------------------------------------------------------
# routing softmax over the output-capsule axis


def routing_softmax(b):
    """Row-wise softmax over the last axis, stabilized by max subtraction."""
    z = b - b.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def routing_softmax_backward(dc, c):
    return c * (dc - np.sum(dc * c, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# dynamic routing by agreement
#
# The two contractions of each iteration run as per-class batched GEMMs:
#   s_j  = sum_i c_ij u_hat_ij     -> (B,1,N) @ (B,N,K)
#   a_ij = u_hat_ij . v_j          -> (B,N,K) @ (B,K,1)


def _weighted_sum(c, u_hat):
    b, n, j, k = u_hat.shape
    s = np.empty((b, j, k), dtype=u_hat.dtype)
    for jj in range(j):
        s[:, jj] = np.matmul(c[:, None, :, jj], u_hat[:, :, jj, :])[:, 0]
    return s


def _agreement(u_hat, v):
    b, n, j, k = u_hat.shape
    a = np.empty((b, n, j), dtype=u_hat.dtype)
    for jj in range(j):
        a[:, :, jj] = np.matmul(u_hat[:, :, jj, :], v[:, jj, :, None])[..., 0]
    return a


@dataclass
class RoutingState:
    """Final routing couplings: log priors b and coefficients c, both (N, J)."""
    b: np.ndarray
    c: np.ndarray


@dataclass
class RoutingTrace:
    """Per-iteration tensors kept for the unrolled backward pass."""
    cs: list      # coupling coefficients per iteration, (B, N, J)
    ss: list      # weighted sums per iteration, (B, J, K)
    vs: list      # squashed outputs per iteration, (B, J, K)
    b: np.ndarray


def routing_forward_batch(u_hat, iterations):
    """Iterative routing over prediction vectors u_hat of shape (B, N, J, K).

    Log priors start at zero; each round recomputes couplings, forms the
    weighted sum per output capsule, squashes it, and (except after the last
    round) raises the prior of agreeing pairs by the dot product u_hat . v.
    """
    batch, n, j, _ = u_hat.shape
    b = np.zeros((batch, n, j), dtype=u_hat.dtype)
    cs, ss, vs = [], [], []
    for it in range(iterations):
        c = routing_softmax(b)
        s = _weighted_sum(c, u_hat)
        v = squash(s)
        cs.append(c)
        ss.append(s)
        vs.append(v)
        if it < iterations - 1:
            b = b + _agreement(u_hat, v)
    return vs[-1], RoutingTrace(cs, ss, vs, b)


def routing_backward_batch(dv_out, trace: RoutingTrace, u_hat):
    """Backprop through all unrolled routing iterations; returns du_hat."""
    iterations = len(trace.cs)
    du = np.zeros_like(u_hat)
    db_next = None
    for it in reversed(range(iterations)):
        if it == iterations - 1:
            dv = dv_out
        else:
            # v_it only feeds the next priors: b_{it+1} = b_it + u_hat . v_it
            dv = _weighted_sum(db_next, u_hat)
            du += db_next[..., None] * trace.vs[it][:, None, :, :]
        ds = squash_backward(dv, trace.ss[it])
        dc = _agreement(u_hat, ds)
        du += trace.cs[it][..., None] * ds[:, None, :, :]
        db = routing_softmax_backward(dc, trace.cs[it])
        if db_next is not None:
            db = db + db_next
        db_next = db
    # db_next now holds the gradient on the (constant) zero initial priors
    return du


def dynamic_routing(u_hat, iterations=3):
    """Route a single example's (N, J, K) predictions; returns (v, state)."""
    if iterations < 1:
        raise ValueError("routing needs at least one iteration")
    v, trace = routing_forward_batch(np.asarray(u_hat)[None], iterations)
    return v[0], RoutingState(b=trace.b[0], c=trace.cs[-1][0])


# ---------------------------------------------------------------------------
# prediction vectors u_hat = W_ij u_i


def predict_vectors_batch(u, w):
    """u (B, N, L) through per-pair maps w (N, J, K, L) -> u_hat (B, N, J, K)."""
    n, j, k, l = w.shape
    wm = w.reshape(n, j * k, l)
    ut = np.ascontiguousarray(u.transpose(1, 2, 0))          # (N, L, B)
    uh = np.matmul(wm, ut)                                   # (N, JK, B)
    return np.ascontiguousarray(uh.reshape(n, j, k, -1).transpose(3, 0, 1, 2))


def predict_vectors_backward_batch(du_hat, u, w):
    """Gradients of predict_vectors: (du, dw)."""
    n, j, k, l = w.shape
    dm = np.ascontiguousarray(du_hat.transpose(1, 2, 3, 0)).reshape(n, j * k, -1)
    du = np.matmul(w.reshape(n, j * k, l).transpose(0, 2, 1), dm)   # (N, L, B)
    du = du.transpose(2, 0, 1)
    dw = np.matmul(dm, np.ascontiguousarray(u.transpose(1, 0, 2)))  # (N, JK, L)
    return du, dw.reshape(w.shape)


def predict_vectors(u, w):
    """Single-example prediction vectors: (N, L) x (N, J, K, L) -> (N, J, K)."""
    if u.shape[0] != w.shape[0] or u.shape[1] != w.shape[3]:
        raise ShapeMismatch(f"capsules {u.shape} do not match maps {w.shape}")
    return predict_vectors_batch(np.asarray(u)[None], w)[0]
