"""2D cross-correlation with zero padding, groups and stride."""

from __future__ import annotations

import numba
import numpy as np

from .core import ShapeError, Tensor, as_tensor, make_node


@numba.njit(cache=True)
def _depthwise_forward(xp, wk, ho, wo):
    b_n = xp.shape[0]
    kh, kw, ch = wk.shape
    out = np.zeros((b_n, ho, wo, ch))
    for b in range(b_n):
        for y in range(ho):
            for x in range(wo):
                for dy in range(kh):
                    for dx in range(kw):
                        for c in range(ch):
                            out[b, y, x, c] += xp[b, y + dy, x + dx, c] * wk[dy, dx, c]
    return out


@numba.njit(cache=True)
def _depthwise_backward(g, xp, wk):
    b_n, ho, wo, ch = g.shape
    kh, kw, _ = wk.shape
    gxp = np.zeros_like(xp)
    gwk = np.zeros_like(wk)
    for b in range(b_n):
        for y in range(ho):
            for x in range(wo):
                for dy in range(kh):
                    for dx in range(kw):
                        for c in range(ch):
                            gv = g[b, y, x, c]
                            gwk[dy, dx, c] += xp[b, y + dy, x + dx, c] * gv
                            gxp[b, y + dy, x + dx, c] += wk[dy, dx, c] * gv
    return gxp, gwk


def _im2col(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int) -> np.ndarray:
    """[B, Hp, Wp, C] -> [B*ho*wo, kh*kw*C], taps ordered (dy, dx, c)."""
    b, _, _, c = xp.shape
    cols = np.empty((b, ho, wo, kh, kw, c))
    for dy in range(kh):
        for dx in range(kw):
            cols[:, :, :, dy, dx, :] = xp[:, dy : dy + ho, dx : dx + wo, :]
    return cols.reshape(b * ho * wo, kh * kw * c)


def _col2im(gcols: np.ndarray, shape: tuple, kh: int, kw: int, ho: int, wo: int) -> np.ndarray:
    b, _, _, c = shape
    gcols = gcols.reshape(b, ho, wo, kh, kw, c)
    gxp = np.zeros(shape)
    for dy in range(kh):
        for dx in range(kw):
            gxp[:, dy : dy + ho, dx : dx + wo, :] += gcols[:, :, :, dy, dx, :]
    return gxp


def _conv_nhwc(x: np.ndarray, w: np.ndarray, padding: int, groups: int):
    """Stride-1 forward. ``x`` is [B,H,W,Ci]; ``w`` is [Co, Ci/g, kh, kw].

    Returns (out, saved) where ``saved`` is what the backward pass needs.
    """
    b, h, wd, ci = x.shape
    co, cig, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    ho = h + 2 * padding - kh + 1
    wo = wd + 2 * padding - kw + 1
    if cig == 1 and co == ci and groups == ci:
        wk = np.ascontiguousarray(np.transpose(w[:, 0], (1, 2, 0)))  # [kh, kw, C]
        return _depthwise_forward(xp, wk, ho, wo), xp
    cols = _im2col(xp, kh, kw, ho, wo)
    cog = co // groups
    out = np.empty((b * ho * wo, co))
    taps = cols.reshape(-1, kh * kw, groups, cig)
    for gi in range(groups):
        wk = np.transpose(w[gi * cog : (gi + 1) * cog], (2, 3, 1, 0)).reshape(kh * kw * cig, cog)
        out[:, gi * cog : (gi + 1) * cog] = taps[:, :, gi, :].reshape(-1, kh * kw * cig) @ wk
    return out.reshape(b, ho, wo, co), (xp.shape, cols)


def _conv_nhwc_backward(g: np.ndarray, saved, w: np.ndarray, padding: int, groups: int, need_x: bool):
    co, cig, kh, kw = w.shape
    b, ho, wo, _ = g.shape
    if isinstance(saved, np.ndarray):
        wk = np.ascontiguousarray(np.transpose(w[:, 0], (1, 2, 0)))
        gxp, gwk = _depthwise_backward(np.ascontiguousarray(g, dtype=np.float64), saved, wk)
        gw = np.transpose(gwk, (2, 0, 1))[:, None]
    else:
        xp_shape, cols = saved
        cog = co // groups
        g2 = g.reshape(-1, co)
        taps = cols.reshape(-1, kh * kw, groups, cig)
        gw = np.empty_like(w)
        gcols = np.empty((g2.shape[0], kh * kw, groups, cig)) if need_x else None
        for gi in range(groups):
            sl = slice(gi * cog, (gi + 1) * cog)
            wk = np.transpose(w[sl], (2, 3, 1, 0)).reshape(kh * kw * cig, cog)
            gwk = taps[:, :, gi, :].reshape(-1, kh * kw * cig).T @ g2[:, sl]
            gw[sl] = np.transpose(gwk.reshape(kh, kw, cig, cog), (3, 2, 0, 1))
            if need_x:
                gcols[:, :, gi, :] = (g2[:, sl] @ wk.T).reshape(-1, kh * kw, cig)
        gxp = _col2im(gcols, xp_shape, kh, kw, ho, wo) if need_x else None
    if not need_x:
        return None, gw
    if padding:
        gxp = gxp[:, padding:-padding, padding:-padding, :]
    return gxp, gw


def conv2d(
    x,
    kernel,
    bias=None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    channels_last: bool = False,
) -> Tensor:
    """Cross-correlate ``x`` with ``kernel`` of shape [C_out, C_in/groups, kh, kw].

    ``x`` is [C, H, W] or [B, C, H, W]; with ``channels_last`` it is
    [H, W, C] or [B, H, W, C] and the output follows the same layout.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: expected a rank 3 or 4 input, got {x.shape}")
    co, cig, kh, kw = kernel.shape
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    if not channels_last:
        xd = np.transpose(xd, (0, 2, 3, 1))
    ci = xd.shape[-1]
    if groups < 1 or ci % groups or co % groups:
        raise ShapeError(f"conv2d: invalid group count {groups} for {ci} -> {co} channels")
    if cig != ci // groups:
        raise ShapeError(f"conv2d: kernel {kernel.shape} expects {cig * groups} input channels, got {ci}")
    h, w = xd.shape[1], xd.shape[2]
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")

    wdat = kernel.data
    full, xp = _conv_nhwc(xd, wdat, padding, groups)
    out = full[:, ::stride, ::stride, :] if stride > 1 else full
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match {co} output channels")
        out = out + bias.data
        parents.append(bias)
    full_shape = full.shape

    def backward(g):
        gn = g if batched else g[None]
        if not channels_last:
            gn = np.transpose(gn, (0, 2, 3, 1))
        if stride > 1:
            gf = np.zeros(full_shape)
            gf[:, ::stride, ::stride, :] = gn
            gn = gf
        gx, gw = _conv_nhwc_backward(np.ascontiguousarray(gn), xp, wdat, padding, groups, x.requires_grad)
        if gx is not None:
            if not channels_last:
                gx = np.transpose(gx, (0, 3, 1, 2))
            if not batched:
                gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(gn.sum(axis=(0, 1, 2)))
        return grads

    if not channels_last:
        out = np.transpose(out, (0, 3, 1, 2))
    if not batched:
        out = out[0]
    return make_node(out, parents, backward, "conv2d")
