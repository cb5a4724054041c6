"""Neural primitives: same-padded 3D convolution, 3D max pooling, leaky ReLU, linear maps."""

from __future__ import annotations

from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, model_validator

from gaitstrip.modules.errors import (
    ChannelMismatchError,
    KernelExtentError,
    ParameterError,
    ShapeMismatchError,
)
from gaitstrip.modules.tensor import Tensor

Extents = tuple[int, int, int]

ACTIVATION_RANK = 5


class TensorModel(BaseModel):
    """Base for frozen records that hold Tensors."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


def canonical_padding(extents: Extents) -> Extents:
    """Same padding for odd kernel extents."""
    return tuple((k - 1) // 2 for k in extents)  # type: ignore[return-value]


class ConvKernel(TensorModel):
    """3D convolution weights (C_out, C_in, k_t, k_h, k_w) with per-output bias."""

    weights: Tensor
    bias: Tensor
    padding: Extents | None = None

    @model_validator(mode="before")
    @classmethod
    def _fill_padding(cls, data: Any) -> Any:  # noqa: ANN401
        if isinstance(data, dict) and data.get("padding") is None:
            weights = data.get("weights")
            if isinstance(weights, Tensor) and weights.rank == ACTIVATION_RANK:
                data = {**data, "padding": canonical_padding(weights.shape[2:])}
        return data

    @model_validator(mode="after")
    def _check(self) -> ConvKernel:
        if self.weights.rank != ACTIVATION_RANK:
            msg = f"kernel weights must be rank 5, got shape {self.weights.shape}"
            raise KernelExtentError(msg)
        extents = self.extents
        if any(k % 2 == 0 for k in extents):
            msg = f"kernel extents must be odd, got {extents}"
            raise KernelExtentError(msg)
        if self.bias.shape != (self.c_out,):
            msg = f"bias shape {self.bias.shape} does not match C_out={self.c_out}"
            raise ShapeMismatchError(msg)
        if tuple(self.padding or ()) != canonical_padding(extents):
            msg = (
                f"padding {self.padding} is not same-padding "
                f"{canonical_padding(extents)} for extents {extents}"
            )
            raise KernelExtentError(msg)
        return self

    @classmethod
    def of(cls, weights: Any, bias: Any | None = None) -> ConvKernel:  # noqa: ANN401
        """Build from array-likes; bias defaults to zeros."""
        w = weights if isinstance(weights, Tensor) else Tensor(weights)
        if bias is None:
            bias = np.zeros(w.shape[0], dtype=np.float32)
        b = bias if isinstance(bias, Tensor) else Tensor(bias)
        return cls(weights=w, bias=b)

    @classmethod
    def zeros(cls, c_out: int, c_in: int, extents: Extents) -> ConvKernel:
        """All-zero kernel and bias."""
        return cls.of(np.zeros((c_out, c_in, *extents), dtype=np.float32))

    @classmethod
    def identity(cls, channels: int, extents: Extents = (3, 3, 3)) -> ConvKernel:
        """Delta kernel: 1.0 at the centre tap of each channel's own plane."""
        w = np.zeros((channels, channels, *extents), dtype=np.float32)
        ct, ch, cw = canonical_padding(extents)
        for c in range(channels):
            w[c, c, ct, ch, cw] = 1.0
        return cls.of(w)

    @property
    def c_out(self) -> int:
        """Output channels."""
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        """Input channels."""
        return self.weights.shape[1]

    @property
    def extents(self) -> Extents:
        """(k_t, k_h, k_w)."""
        return self.weights.shape[2:]  # type: ignore[return-value]

    @property
    def param_count(self) -> int:
        """Weights plus biases."""
        return self.weights.size + self.bias.size


class LinearMap(TensorModel):
    """Fully connected map weights (d_out, d_in) plus bias (d_out)."""

    weights: Tensor
    bias: Tensor

    @model_validator(mode="after")
    def _check(self) -> LinearMap:
        if self.weights.rank != 2:  # noqa: PLR2004
            msg = f"linear weights must be rank 2, got {self.weights.shape}"
            raise ShapeMismatchError(msg)
        if self.bias.shape != (self.d_out,):
            msg = f"bias shape {self.bias.shape} does not match d_out={self.d_out}"
            raise ShapeMismatchError(msg)
        return self

    @classmethod
    def of(cls, weights: Any, bias: Any | None = None) -> LinearMap:  # noqa: ANN401
        """Build from array-likes; bias defaults to zeros."""
        w = weights if isinstance(weights, Tensor) else Tensor(weights)
        if bias is None:
            bias = np.zeros(w.shape[0], dtype=np.float32)
        b = bias if isinstance(bias, Tensor) else Tensor(bias)
        return cls(weights=w, bias=b)

    @property
    def d_out(self) -> int:
        """Output width."""
        return self.weights.shape[0]

    @property
    def d_in(self) -> int:
        """Input width."""
        return self.weights.shape[1]

    @property
    def param_count(self) -> int:
        """Weights plus biases."""
        return self.weights.size + self.bias.size


def require_activation(x: Tensor) -> None:
    """Reject anything that is not an (N, C, T, H, W) activation."""
    if x.rank != ACTIVATION_RANK:
        msg = f"expected an (N, C, T, H, W) tensor, got shape {x.shape}"
        raise ShapeMismatchError(msg)


def conv3d(x: Tensor, k: ConvKernel) -> Tensor:
    """Stride-1 same-padded cross-correlation plus bias.

    Taps are visited in (t, h, w) order and each tap is one float64 GEMM over
    input channels, so every output cell sees the same accumulation order.
    """
    require_activation(x)
    n, c, t, h, w = x.shape
    if c != k.c_in:
        msg = f"conv3d expected {k.c_in} input channels, got {c}"
        raise ChannelMismatchError(msg)
    kt, kh, kw = k.extents
    pt, ph, pw = k.padding  # type: ignore[misc]

    # channels-last so each tap is a (N*T*H*W, C) x (C, O) product
    xp = np.pad(
        np.moveaxis(x.numpy(), 1, -1).astype(np.float64),
        ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)),
    )
    weights = k.weights.numpy().astype(np.float64)
    out = np.zeros((n, t, h, w, k.c_out), dtype=np.float64)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                window = xp[:, dt : dt + t, dh : dh + h, dw : dw + w, :]
                out += np.tensordot(window, weights[:, :, dt, dh, dw], axes=([4], [1]))
    out += k.bias.numpy().astype(np.float64)
    return Tensor._own(np.moveaxis(out, -1, 1))


def maxpool3d(
    x: Tensor,
    window: Extents,
    stride: Extents,
) -> Tensor:
    """Max over (T, H, W) windows; no padding."""
    require_activation(x)
    dims = x.shape[2:]
    if any(s < 1 for s in stride):
        msg = f"pool strides must be >= 1, got {stride}"
        raise ParameterError(msg)
    if any(wd < 1 or wd > d for wd, d in zip(window, dims, strict=True)):
        msg = f"pool window {window} does not fit extents {dims}"
        raise ShapeMismatchError(msg)
    views = sliding_window_view(x.numpy(), window, axis=(2, 3, 4))
    st, sh, sw = stride
    views = views[:, :, ::st, ::sh, ::sw]
    return Tensor._own(views.max(axis=(-3, -2, -1)))


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """x where x >= 0, slope * x elsewhere."""
    if not 0.0 <= slope < 1.0:
        msg = f"leaky slope must be in [0, 1), got {slope}"
        raise ParameterError(msg)
    arr = x.numpy()
    return Tensor._own(np.where(arr >= 0, arr, np.float32(slope) * arr))


def linear_apply(v: Tensor, m: LinearMap) -> Tensor:
    """m.weights @ v + m.bias."""
    if v.shape != (m.d_in,):
        msg = f"linear map expects a vector of length {m.d_in}, got shape {v.shape}"
        raise ShapeMismatchError(msg)
    out = m.weights.numpy().astype(np.float64) @ v.numpy().astype(np.float64)
    return Tensor._own(out + m.bias.numpy())
