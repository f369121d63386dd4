"""2D discrete Fourier transforms of real feature maps, amplitude/phase
decomposition and the Hermitian half-spectrum.

Feature maps are channels-last: the transform runs over the two axes just
before the channel axis, ``[..., H, W, D]``. Spectra stay in natural DFT
order (DC at (0, 0), no fftshift).
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .tensor import ops
from .tensor.core import ShapeError, Tensor, as_tensor, make_node

IMAG_RESIDUE_WARN = 1e-6


@dataclass
class ComplexSpectrum:
    re: Tensor
    im: Tensor

    @property
    def shape(self):
        return self.re.shape


@dataclass
class HalfSpectrum:
    amplitude: Tensor
    phase: Tensor

    @property
    def shape(self):
        return self.amplitude.shape


# ---------------------------------------------------------------------------
# 1D transforms on numpy arrays
# ---------------------------------------------------------------------------


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@functools.lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@functools.lru_cache(maxsize=None)
def _twiddles(m: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(m // 2) / m)


@functools.lru_cache(maxsize=None)
def _dft_matrix(n: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    k = np.arange(n)
    # reduce k*h mod n before scaling so the angles stay exact for large products
    return np.exp(sign * 2j * np.pi * ((k[:, None] * k[None, :]) % n) / n)


# below this length one BLAS product beats the per-stage overhead of radix-2
DENSE_MAX = 64


def fft_last(a: np.ndarray, inverse: bool = False, dense_max: int | None = None) -> np.ndarray:
    """Unnormalised DFT along the last axis.

    Iterative radix-2 Cooley-Tukey for power-of-two lengths above
    ``dense_max``, a dense DFT matrix product otherwise.
    """
    n = a.shape[-1]
    dense_max = DENSE_MAX if dense_max is None else dense_max
    a = np.asarray(a, dtype=np.complex128)
    if n == 1:
        return a.copy()
    if n <= dense_max or not _is_pow2(n):
        return a @ _dft_matrix(n, inverse)
    out = a[..., _bit_reverse(n)]
    lead = out.shape[:-1]
    m = 2
    while m <= n:
        half = m // 2
        blocks = out.reshape(lead + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(m, inverse)
        out = np.concatenate((even + odd, even - odd), axis=-1).reshape(lead + (n,))
        m *= 2
    return out


def fft_axis(a: np.ndarray, axis: int, inverse: bool = False) -> np.ndarray:
    moved = np.moveaxis(a, axis, -1)
    return np.moveaxis(fft_last(moved, inverse), -1, axis)


def fft2_array(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalised 2D DFT over axes (-3, -2) of a channels-last array."""
    return fft_axis(fft_axis(a, -3, inverse), -2, inverse)


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """Direct O(H^2 W^2) evaluation of the 2D DFT for a single [H, W, D] map."""
    h, w = x.shape[0], x.shape[1]
    out = np.zeros(x.shape, dtype=np.complex128)
    hh = np.arange(h)[:, None]
    ww = np.arange(w)[None, :]
    for u in range(h):
        for v in range(w):
            phase = np.exp(-2j * np.pi * (u * hh / h + v * ww / w))
            out[u, v] = np.tensordot(phase, x, axes=([0, 1], [0, 1]))
    return out


# ---------------------------------------------------------------------------
# differentiable transforms
# ---------------------------------------------------------------------------


def _check_spatial(x: Tensor) -> tuple[int, int]:
    if x.ndim < 3:
        raise ShapeError(f"expected a channels-last map [..., H, W, D], got {x.shape}")
    return x.shape[-3], x.shape[-2]


def dft2(x) -> ComplexSpectrum:
    """F(u, v) = sum_h sum_w X(h, w) exp(-2 pi j (u h / H + v w / W)), per channel."""
    x = as_tensor(x)
    _check_spatial(x)
    f = fft2_array(x.data)
    stacked = np.stack((f.real, f.imag))

    def backward(g):
        return (fft2_array(g[0] + 1j * g[1], inverse=True).real,)

    s = make_node(stacked, (x,), backward, "dft2")
    return ComplexSpectrum(s[0], s[1])


def idft2(s: ComplexSpectrum, warn: bool = True) -> Tensor:
    """Real part of the inverse transform; warns when the imaginary residue is large."""
    re, im = as_tensor(s.re), as_tensor(s.im)
    if re.shape != im.shape:
        raise ShapeError(f"idft2: real part {re.shape} and imaginary part {im.shape} differ")
    h, w = _check_spatial(re)
    scale = 1.0 / (h * w)
    z = fft2_array(re.data + 1j * im.data, inverse=True) * scale
    residue = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if warn and residue > IMAG_RESIDUE_WARN * max(1.0, float(np.max(np.abs(z.real)))):
        warnings.warn(f"idft2: imaginary residue {residue:.3g}; input spectrum is not Hermitian", RuntimeWarning)

    def backward(g):
        f = fft2_array(g) * scale
        return f.real, f.imag

    out = make_node(z.real, (re, im), backward, "idft2")
    return out


def imag_residue(s: ComplexSpectrum) -> float:
    """Largest |imaginary part| of the inverse transform of ``s``."""
    h, w = s.re.shape[-3], s.re.shape[-2]
    z = fft2_array(s.re.data + 1j * s.im.data, inverse=True) / (h * w)
    return float(np.max(np.abs(z.imag)))


def amp_phase(s: ComplexSpectrum) -> tuple[Tensor, Tensor]:
    """Amplitude sqrt(re^2 + im^2) and four-quadrant phase atan2(im, re)."""
    return ops.hypot(s.re, s.im), ops.atan2(s.im, s.re)


def recompose(amplitude, phase) -> ComplexSpectrum:
    """Polar to cartesian: (A cos P, A sin P). Negative amplitudes act as a phase flip."""
    return ComplexSpectrum(ops.mul(amplitude, ops.cos(phase)), ops.mul(amplitude, ops.sin(phase)))


# ---------------------------------------------------------------------------
# half spectrum
# ---------------------------------------------------------------------------


def half_width(w: int) -> int:
    return w // 2 + 1


def require_even(h: int, w: int) -> None:
    if h % 2 or w % 2:
        raise ShapeError(f"spectral processing needs even spatial sizes, got {h}x{w}")


@functools.lru_cache(maxsize=None)
def _self_conjugate_mask(h: int, w: int) -> np.ndarray:
    """Bins of the half grid equal to their own conjugate partner (purely real for real input)."""
    wh = half_width(w)
    mask = np.zeros((h, wh, 1), dtype=bool)
    rows = [0] + ([h // 2] if h % 2 == 0 else [])
    for u in rows:
        mask[u, 0] = True
        mask[u, w // 2] = True
    return mask


@functools.lru_cache(maxsize=None)
def _hermitian_operators(h: int, w: int) -> tuple[sp.csr_matrix, ...]:
    """Sparse maps from the flattened half grid (H*(W/2+1)) to the full grid (H*W).

    Columns 0 and W/2 are projected onto their Hermitian part; the right half
    is filled with conjugates of the mirrored left half.
    """
    wh = half_width(w)
    rows, cols, vre, vim = [], [], [], []

    def emit(dst, src, wre, wim):
        rows.append(dst)
        cols.append(src)
        vre.append(wre)
        vim.append(wim)

    for u in range(h):
        mu = (h - u) % h
        for v in range(w):
            dst = u * w + v
            if v == 0 or v == w // 2:
                emit(dst, u * wh + v, 0.5, 0.5)
                emit(dst, mu * wh + v, 0.5, -0.5)
            elif v < w // 2:
                emit(dst, u * wh + v, 1.0, 1.0)
            else:
                emit(dst, mu * wh + (w - v), 1.0, -1.0)
    shape = (h * w, h * wh)
    p_re = sp.coo_matrix((vre, (rows, cols)), shape=shape).tocsr()
    p_im = sp.coo_matrix((vim, (rows, cols)), shape=shape).tocsr()
    return p_re, p_im, p_re.T.tocsr(), p_im.T.tocsr()


def _apply_rows(mat: sp.csr_matrix, a: np.ndarray, rows_in: int, rows_out: int) -> np.ndarray:
    """Apply ``mat`` to the flattened spatial axes of a [..., S_in, D] array."""
    lead = a.shape[:-2]
    d = a.shape[-1]
    moved = np.moveaxis(a.reshape((-1, rows_in, d)), 1, 0).reshape(rows_in, -1)
    out = mat @ moved
    return np.moveaxis(out.reshape(rows_out, -1, d), 0, 1).reshape(lead + (rows_out, d))


def fill_hermitian(re_h, im_h, w: int) -> ComplexSpectrum:
    """Rebuild a full H x W Hermitian spectrum from the half grid (re, im)."""
    re_h, im_h = as_tensor(re_h), as_tensor(im_h)
    h, wh = re_h.shape[-3], re_h.shape[-2]
    if w % 2 or wh != half_width(w):
        raise ShapeError(f"fill_hermitian: half width {wh} does not match even full width {w}")
    p_re, p_im, t_re, t_im = _hermitian_operators(h, w)
    lead = re_h.shape[:-3]
    d = re_h.shape[-1]
    n_in, n_out = h * wh, h * w

    def fwd(mat, a):
        return _apply_rows(mat, a.reshape(lead + (n_in, d)), n_in, n_out).reshape(lead + (h, w, d))

    def bwd(mat, g):
        return _apply_rows(mat, g.reshape(lead + (n_out, d)), n_out, n_in).reshape(lead + (h, wh, d))

    re_full = make_node(fwd(p_re, re_h.data), (re_h,), lambda g: (bwd(t_re, g),), "hermitian_re")
    im_full = make_node(fwd(p_im, im_h.data), (im_h,), lambda g: (bwd(t_im, g),), "hermitian_im")
    return ComplexSpectrum(re_full, im_full)


def crop_half(s: ComplexSpectrum) -> ComplexSpectrum:
    """Keep columns v in [0, W/2]; self-conjugate bins get an exactly zero imaginary part."""
    h, w = s.re.shape[-3], s.re.shape[-2]
    if w % 2:
        raise ShapeError(f"half spectrum needs an even width, got {w}")
    wh = half_width(w)
    re_h = s.re[..., :, :wh, :]
    im_h = ops.where_mask(s.im[..., :, :wh, :], ~_self_conjugate_mask(h, w))
    return ComplexSpectrum(re_h, im_h)


def half_spectrum(s: ComplexSpectrum) -> HalfSpectrum:
    c = crop_half(s)
    amp, pha = amp_phase(c)
    return HalfSpectrum(amp, pha)


def reconstruct_full(hs: HalfSpectrum, w: int | None = None) -> ComplexSpectrum:
    """Inverse of :func:`half_spectrum` on Hermitian spectra. ``w`` defaults to 2*(W_h - 1)."""
    if w is None:
        w = 2 * (hs.amplitude.shape[-2] - 1)
    c = recompose(hs.amplitude, hs.phase)
    return fill_hermitian(c.re, c.im, w)
