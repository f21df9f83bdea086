"""Dense layer arithmetic used by both the autodiff tape and stateful inference.

Convolution weights live in crossbar-matrix form: shape (fan_in, fan_out) with
fan_in = in_ch * kh * kw flattened in C order, one output channel per column.
That is exactly how a kernel maps onto a differential crossbar, and it keeps
every forward/backward primitive a single BLAS matmul over im2col patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "LayerGeometry",
    "conv_geometry",
    "fc_geometry",
    "im2col",
    "conv2d_value",
    "conv2d_weight_grad",
    "conv2d_input_grad",
    "fc_value",
    "avgpool2_value",
    "avgpool2_grad",
    "upsample2_value",
    "upsample2_grad",
]


@dataclass(frozen=True)
class LayerGeometry:
    """Layer kind plus the shape metadata needed to run it.

    kind "conv": in_ch/out_ch/kernel/stride/padding describe a square-kernel
    2-D convolution.  kind "fc": n_in/n_out describe a dense matmul.
    """

    kind: str
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    n_in: int = 0
    n_out: int = 0

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and min(self.in_ch, self.out_ch, self.kernel, self.stride) < 1:
            raise ValueError("conv geometry needs positive in_ch/out_ch/kernel/stride")
        if self.kind == "fc" and min(self.n_in, self.n_out) < 1:
            raise ValueError("fc geometry needs positive n_in/n_out")

    @property
    def fan_in(self) -> int:
        return self.in_ch * self.kernel * self.kernel if self.kind == "conv" else self.n_in

    @property
    def fan_out(self) -> int:
        return self.out_ch if self.kind == "conv" else self.n_out

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        if self.kind != "conv":
            raise ValueError("out_hw only defined for conv geometry")
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def conv_geometry(in_ch, out_ch, kernel, stride=1, padding=0) -> LayerGeometry:
    return LayerGeometry("conv", in_ch=in_ch, out_ch=out_ch, kernel=kernel,
                         stride=stride, padding=padding)


def fc_geometry(n_in, n_out) -> LayerGeometry:
    return LayerGeometry("fc", n_in=n_in, n_out=n_out)


def im2col(x, kernel: int, stride: int = 1, padding: int = 0):
    """(B, C, H, W) -> patches (B*Ho*Wo, C*k*k) plus (Ho, Wo).

    Rows enumerate output positions in (batch, row, col) order; columns
    enumerate (channel, k_row, k_col) in C order, matching the crossbar
    weight-matrix layout.
    """
    if x.ndim != 4:
        raise ValueError(f"expected (B, C, H, W), got shape {x.shape}")
    b, c, h, w = x.shape
    k = kernel
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    if hp < k or wp < k:
        raise ValueError(f"kernel {k} larger than padded input {hp}x{wp}")
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    return np.ascontiguousarray(cols), (ho, wo)


def conv2d_value(x, wmat, geom: LayerGeometry):
    """Cross-correlation via im2col; wmat is (fan_in, out_ch)."""
    if wmat.shape != (geom.fan_in, geom.fan_out):
        raise ValueError(f"weight shape {wmat.shape} != {(geom.fan_in, geom.fan_out)}")
    if x.shape[1] != geom.in_ch:
        raise ValueError(f"input channels {x.shape[1]} != geometry in_ch {geom.in_ch}")
    b = x.shape[0]
    cols, (ho, wo) = im2col(x, geom.kernel, geom.stride, geom.padding)
    y = cols @ wmat
    return np.ascontiguousarray(y.reshape(b, ho, wo, geom.out_ch).transpose(0, 3, 1, 2))


def conv2d_weight_grad(x, grad_out, geom: LayerGeometry):
    """d loss / d wmat: correlation of input patches with the output gradient.

    This is the dense (mask-free) correlation: for I = patches @ W the
    derivative w.r.t. W is patches^T regardless of any mask folded into W.
    """
    b, f, ho, wo = grad_out.shape
    cols, _ = im2col(x, geom.kernel, geom.stride, geom.padding)
    g = grad_out.transpose(0, 2, 3, 1).reshape(b * ho * wo, f)
    return cols.T @ g


def conv2d_input_grad(grad_out, wmat, x_shape, geom: LayerGeometry):
    """d loss / d x as a transposed convolution, kept on the BLAS path.

    Dilate the output gradient by the stride, pad by (k - 1 - padding), then
    cross-correlate with the flipped kernels; finally pad/crop to x_shape for
    input rows the strided forward never touched.
    """
    b, f, ho, wo = grad_out.shape
    k, s, p = geom.kernel, geom.stride, geom.padding
    if s > 1:
        dil = np.zeros((b, f, (ho - 1) * s + 1, (wo - 1) * s + 1), dtype=grad_out.dtype)
        dil[:, :, ::s, ::s] = grad_out
    else:
        dil = grad_out
    w4 = wmat.reshape(geom.in_ch, k, k, geom.out_ch)
    wt = np.ascontiguousarray(
        w4[:, ::-1, ::-1, :].transpose(3, 1, 2, 0).reshape(f * k * k, geom.in_ch))
    tgeom = conv_geometry(f, geom.in_ch, k, stride=1, padding=k - 1 - p)
    gx = conv2d_value(dil, wt, tgeom)
    h, w = x_shape[2], x_shape[3]
    gh, gw = gx.shape[2], gx.shape[3]
    if gh < h or gw < w:
        gx = np.pad(gx, ((0, 0), (0, 0), (0, h - gh), (0, w - gw)))
    return gx[:, :, :h, :w]


def fc_value(x, wmat, geom: LayerGeometry):
    if x.ndim != 2 or x.shape[1] != geom.n_in:
        raise ValueError(f"fc input shape {x.shape} incompatible with n_in={geom.n_in}")
    if wmat.shape != (geom.n_in, geom.n_out):
        raise ValueError(f"fc weight shape {wmat.shape} != {(geom.n_in, geom.n_out)}")
    return x @ wmat


def avgpool2_value(x):
    """2x2 average pooling, stride 2, floor semantics on odd sizes."""
    b, c, h, w = x.shape
    he, we = (h // 2) * 2, (w // 2) * 2
    if he == 0 or we == 0:
        raise ValueError(f"input {h}x{w} too small for 2x2 pooling")
    v = x[:, :, :he, :we].reshape(b, c, he // 2, 2, we // 2, 2)
    return v.mean(axis=(3, 5))


def avgpool2_grad(grad_out, x_shape):
    b, c, h, w = x_shape
    g = np.repeat(np.repeat(grad_out, 2, axis=2), 2, axis=3) / grad_out.dtype.type(4)
    if g.shape[2] != h or g.shape[3] != w:
        g = np.pad(g, ((0, 0), (0, 0), (0, h - g.shape[2]), (0, w - g.shape[3])))
    return g


def upsample2_value(x):
    """Nearest-neighbour 2x upsampling."""
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_grad(grad_out):
    b, c, h, w = grad_out.shape
    return grad_out.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
