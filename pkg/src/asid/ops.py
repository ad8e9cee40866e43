"""Differentiable neural-network operations on NCHW tensors.

Convolution uses im2col with grouped batched matmuls; the window-partition
and pixel-shuffle helpers are plain reshape/permute chains, so their
gradients come for free from the tensor module.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError
from .tensor import OP_COUNTS, Tensor, _result, add, matmul, reshape, permute


def conv_output_size(n: int, k: int, stride: int = 1, padding: int = 0) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation with zero padding. ``weight`` is (C_out, C_in/groups, k, k)."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input, got shape {x.shape}")
    B, C, H, W = x.shape
    O, Cg, kh, kw = weight.shape
    if C % groups or O % groups or Cg != C // groups:
        raise DimensionError(
            f"conv2d: input {x.shape} does not match weight {weight.shape} with groups={groups}")
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ContractError(f"conv2d: kernel {kh}x{kw} stride {stride} leaves no output on {H}x{W}")
    g, Og = groups, O // groups
    K = Cg * kh * kw
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :Ho, :Wo].reshape(B, g, K, Ho * Wo)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, g, K, Ho * Wo)
    wmat = weight.data.reshape(g, Og, K)
    out = (wmat @ cols).reshape(B, O, Ho, Wo)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)
    OP_COUNTS["macs"] += out.size * K
    Hp, Wp = xp.shape[2], xp.shape[3]

    def backward(gout):
        gmat = gout.reshape(B, g, Og, Ho * Wo)
        gw = np.einsum("bgol,bgkl->gok", gmat, cols).reshape(weight.shape)
        gcols = (np.swapaxes(wmat, -1, -2) @ gmat).reshape(B, C, kh, kw, Ho, Wo)
        gxp = np.zeros((B, C, Hp, Wp), dtype=gout.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(gout.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result("conv2d", out, parents, backward)


def take(x: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    shape = x.shape

    def backward(g):
        gm = np.moveaxis(g, axis, 0)
        acc = np.zeros((shape[axis],) + gm.shape[1:], dtype=g.dtype)
        np.add.at(acc, index, gm)
        return (np.moveaxis(acc, 0, axis),)

    return _result("take", np.take(x.data, index, axis=axis), (x,), backward)


def reflect_pad(x: Tensor, bottom: int, right: int) -> Tensor:
    """Reflect-pad the bottom and right edges of an NCHW tensor."""
    H, W = x.shape[2], x.shape[3]
    if bottom >= H or right >= W:
        raise ContractError(f"reflect padding ({bottom}, {right}) needs an image larger than {H}x{W}")
    if bottom:
        x = take(x, np.pad(np.arange(H), (0, bottom), mode="reflect"), axis=2)
    if right:
        x = take(x, np.pad(np.arange(W), (0, right), mode="reflect"), axis=3)
    return x


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    B, Cr, H, W = x.shape
    if Cr % (r * r):
        raise DimensionError(f"pixel_shuffle: {Cr} channels not divisible by r^2={r * r}")
    C = Cr // (r * r)
    y = reshape(x, (B, C, r, r, H, W))
    y = permute(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (B, C, H * r, W * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    B, C, Hr, Wr = x.shape
    if Hr % r or Wr % r:
        raise DimensionError(f"pixel_unshuffle: spatial {Hr}x{Wr} not divisible by {r}")
    H, W = Hr // r, Wr // r
    y = reshape(x, (B, C, H, r, W, r))
    y = permute(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (B, C * r * r, H, W))


def _check_divisible(x: Tensor, size: int, what: str) -> None:
    H, W = x.shape[2], x.shape[3]
    if size < 1 or H % size or W % size:
        raise ContractError(f"{what}: {H}x{W} is not divisible by {size}")


def partition_meso(x: Tensor, P: int) -> Tensor:
    """(B, C, hP, wP) -> (B*h*w, P*P, C): each P x P tile becomes a token sequence."""
    _check_divisible(x, P, "partition_meso")
    B, C, H, W = x.shape
    h, w = H // P, W // P
    y = reshape(x, (B, C, h, P, w, P))
    y = permute(y, (0, 2, 4, 3, 5, 1))
    return reshape(y, (B * h * w, P * P, C))


def merge_meso(t: Tensor, P: int, B: int, H: int, W: int) -> Tensor:
    h, w = H // P, W // P
    C = t.shape[-1]
    if t.shape != (B * h * w, P * P, C):
        raise ContractError(f"merge_meso: tokens {t.shape} do not tile {B}x{H}x{W} with P={P}")
    y = reshape(t, (B, h, w, P, P, C))
    y = permute(y, (0, 5, 1, 3, 2, 4))
    return reshape(y, (B, C, H, W))


def partition_global(x: Tensor, G: int) -> Tensor:
    """(B, C, Gh, Gw) -> (B*h*w, G*G, C): each group holds G x G pixels spaced h, w apart."""
    _check_divisible(x, G, "partition_global")
    B, C, H, W = x.shape
    h, w = H // G, W // G
    y = reshape(x, (B, C, G, h, G, w))
    y = permute(y, (0, 3, 5, 2, 4, 1))
    return reshape(y, (B * h * w, G * G, C))


def merge_global(t: Tensor, G: int, B: int, H: int, W: int) -> Tensor:
    h, w = H // G, W // G
    C = t.shape[-1]
    if t.shape != (B * h * w, G * G, C):
        raise ContractError(f"merge_global: tokens {t.shape} do not tile {B}x{H}x{W} with G={G}")
    y = reshape(t, (B, h, w, G, G, C))
    y = permute(y, (0, 5, 3, 1, 4, 2))
    return reshape(y, (B, C, H, W))


def max_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    """Max pooling without padding; gradient goes to the first maximal element."""
    stride = stride or k
    B, C, H, W = x.shape
    if k > H or k > W:
        raise ContractError(f"max_pool2d: kernel {k} larger than input {H}x{W}")
    Ho, Wo = conv_output_size(H, k, stride), conv_output_size(W, k, stride)
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    flat = win.reshape(B, C, Ho, Wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    rows = np.arange(Ho)[:, None] * stride + arg // k
    cols = np.arange(Wo)[None, :] * stride + arg % k
    bi, ci = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
    bi = np.broadcast_to(bi[:, :, None, None], arg.shape)
    ci = np.broadcast_to(ci[:, :, None, None], arg.shape)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (bi, ci, rows, cols), g)
        return (gx,)

    return _result("max_pool2d", np.ascontiguousarray(out), (x,), backward)


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic 1-D interpolation matrix (half-pixel centres, edge clamped)."""
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m


def bilinear_resize(x: Tensor, H_out: int, W_out: int) -> Tensor:
    if H_out < 1 or W_out < 1:
        raise ContractError(f"bilinear_resize: invalid target {H_out}x{W_out}")
    ry = bilinear_matrix(H_out, x.shape[2]).astype(x.dtype)
    rx = bilinear_matrix(W_out, x.shape[3]).astype(x.dtype)
    out = np.einsum("yh,bchw,xw->bcyx", ry, x.data, rx, optimize=True)

    def backward(g):
        return (np.einsum("yh,bcyx,xw->bchw", ry, g, rx, optimize=True),)

    return _result("bilinear_resize", out, (x,), backward)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last (channel) axis, then scale and shift."""
    C = x.shape[-1]
    if weight.shape != (C,) or bias.shape != (C,):
        raise DimensionError(f"layer_norm: affine params {weight.shape} do not match {C} channels")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(xd.var(axis=-1, keepdims=True) + eps)
    xhat = (xd - mu) * rstd
    out = xhat * weight.data + bias.data
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        gxhat = g * weight.data
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result("layer_norm", out, (x, weight, bias), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Token projection: ``x @ weight (+ bias)`` with ``weight`` shaped (in, out)."""
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y
