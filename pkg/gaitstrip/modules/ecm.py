"""Enhanced Convolution Module: ST, FL, SPB-H and SPB-V extractors summed into one map.

Each branch is a same-padded 3D convolution with its own bias. The branch sum is
linear; the nonlinearity belongs to the model layer that calls ecm_forward.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from loguru import logger
from pydantic import model_validator

from gaitstrip.modules.errors import ChannelMismatchError, KernelExtentError
from gaitstrip.modules.nn_ops import ConvKernel, Extents, TensorModel, conv3d, require_activation
from gaitstrip.modules.tensor import Tensor

ST_EXTENTS: Extents = (3, 3, 3)
FL_EXTENTS: Extents = (1, 3, 3)
SPB_H_EXTENTS: Extents = (3, 1, 3)
SPB_V_EXTENTS: Extents = (3, 3, 1)

# Fixed accumulation order for every branch sum.
BRANCH_ORDER = ("st", "fl", "spb_h", "spb_v")

BRANCH_EXTENTS: dict[str, Extents] = {
    "st": ST_EXTENTS,
    "fl": FL_EXTENTS,
    "spb_h": SPB_H_EXTENTS,
    "spb_v": SPB_V_EXTENTS,
}


class BlockKind(str, Enum):
    """Which extractors a block sums, or FUSED for a single re-parameterized conv."""

    ST_ONLY = "st_only"
    FL_ONLY = "fl_only"
    ST_FL = "st_fl"
    ST_SPB = "st_spb"
    FL_SPB = "fl_spb"
    FULL_ECM = "full_ecm"
    FUSED = "fused"

    @property
    def branches(self) -> tuple[str, ...]:
        """Branch names used by this kind, in accumulation order."""
        return _KIND_BRANCHES[self]


_KIND_BRANCHES: dict[BlockKind, tuple[str, ...]] = {
    BlockKind.ST_ONLY: ("st",),
    BlockKind.FL_ONLY: ("fl",),
    BlockKind.ST_FL: ("st", "fl"),
    BlockKind.ST_SPB: ("st", "spb_h", "spb_v"),
    BlockKind.FL_SPB: ("fl", "spb_h", "spb_v"),
    BlockKind.FULL_ECM: BRANCH_ORDER,
    BlockKind.FUSED: (),
}


class EcmParams(TensorModel):
    """Branch kernels of one ECM block. Branches a kind does not use may be None."""

    st: ConvKernel | None = None
    fl: ConvKernel | None = None
    spb_h: ConvKernel | None = None
    spb_v: ConvKernel | None = None

    @model_validator(mode="after")
    def _check(self) -> EcmParams:
        present = self.present()
        if not present:
            msg = "EcmParams needs at least one branch kernel"
            raise KernelExtentError(msg)
        for name, kernel in present.items():
            if kernel.extents != BRANCH_EXTENTS[name]:
                msg = (
                    f"{name} kernel must have extents {BRANCH_EXTENTS[name]}, "
                    f"got {kernel.extents}"
                )
                raise KernelExtentError(msg)
        channels = {(k.c_out, k.c_in) for k in present.values()}
        if len(channels) != 1:
            msg = f"branch kernels disagree on (C_out, C_in): {sorted(channels)}"
            raise ChannelMismatchError(msg)
        return self

    def present(self) -> dict[str, ConvKernel]:
        """Non-empty branches in accumulation order."""
        return {
            name: getattr(self, name)
            for name in BRANCH_ORDER
            if getattr(self, name) is not None
        }

    def require(self, kind: BlockKind) -> dict[str, ConvKernel]:
        """Kernels needed by kind; raises when one is missing."""
        missing = [name for name in kind.branches if getattr(self, name) is None]
        if missing:
            msg = f"{kind.name} block is missing branch kernels {missing}"
            raise KernelExtentError(msg)
        return {name: getattr(self, name) for name in kind.branches}

    @property
    def c_in(self) -> int:
        """Input channels shared by every branch."""
        return next(iter(self.present().values())).c_in

    @property
    def c_out(self) -> int:
        """Output channels shared by every branch."""
        return next(iter(self.present().values())).c_out

    @property
    def param_count(self) -> int:
        """Sum over present branches."""
        return sum(k.param_count for k in self.present().values())


def _branch(x: Tensor, k: ConvKernel, name: str) -> Tensor:
    expected = BRANCH_EXTENTS[name]
    if k.extents != expected:
        msg = f"{name} expects kernel extents {expected}, got {k.extents}"
        raise KernelExtentError(msg)
    return conv3d(x, k)


def frame_level(x: Tensor, fl: ConvKernel) -> Tensor:
    """X_FL: per-frame spatial convolution, temporal extent 1."""
    return _branch(x, fl, "fl")


def spatial_temporal(x: Tensor, st: ConvKernel) -> Tensor:
    """X_ST: full 3x3x3 spatial-temporal convolution."""
    return _branch(x, st, "st")


def strip_horizontal(x: Tensor, k: ConvKernel) -> Tensor:
    """X_SPB-H: each output row sees only its own input row across T and W."""
    return _branch(x, k, "spb_h")


def strip_vertical(x: Tensor, k: ConvKernel) -> Tensor:
    """X_SPB-V: each output column sees only its own input column across T and H."""
    return _branch(x, k, "spb_v")


_BRANCH_FN = {
    "st": spatial_temporal,
    "fl": frame_level,
    "spb_h": strip_horizontal,
    "spb_v": strip_vertical,
}


def ecm_forward(x: Tensor, p: EcmParams | ConvKernel, kind: BlockKind) -> Tensor:
    """Apply one block without its activation.

    A FUSED block takes the single ConvKernel produced by re-parameterization;
    every other kind takes EcmParams and sums its branches in BRANCH_ORDER.
    """
    require_activation(x)
    if kind is BlockKind.FUSED:
        if not isinstance(p, ConvKernel):
            msg = "FUSED block expects one fused ConvKernel, got multi-branch params"
            raise KernelExtentError(msg)
        if p.extents != ST_EXTENTS:
            msg = f"fused kernel must be {ST_EXTENTS}, got {p.extents}"
            raise KernelExtentError(msg)
        if x.shape[1] != p.c_in:
            msg = f"block expected {p.c_in} input channels, got {x.shape[1]}"
            raise ChannelMismatchError(msg)
        return conv3d(x, p)

    if not isinstance(p, EcmParams):
        msg = f"{kind.name} block expects EcmParams, got a single kernel"
        raise KernelExtentError(msg)
    if x.shape[1] != p.c_in:
        msg = f"block expected {p.c_in} input channels, got {x.shape[1]}"
        raise ChannelMismatchError(msg)

    acc: np.ndarray | None = None
    for name, kernel in p.require(kind).items():
        y = _BRANCH_FN[name](x, kernel).numpy().astype(np.float64)
        acc = y if acc is None else acc + y
    logger.debug(f"ecm {kind.name} {x.shape} -> {acc.shape}")  # type: ignore[union-attr]
    return Tensor._own(acc)  # type: ignore[arg-type]
