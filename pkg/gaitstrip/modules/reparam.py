"""Structural re-parameterization of ECM blocks into single 3x3x3 convolutions."""

from __future__ import annotations

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from gaitstrip.modules.ecm import (
    BRANCH_EXTENTS,
    ST_EXTENTS,
    BlockKind,
    EcmParams,
    ecm_forward,
)
from gaitstrip.modules.errors import (
    AlreadyFusedError,
    ConfigMismatchError,
    KernelExtentError,
    ParameterError,
)
from gaitstrip.modules.model import (
    Block,
    ModelWeights,
    forward,
    parameter_count,
)
from gaitstrip.modules.nn_ops import ConvKernel
from gaitstrip.modules.tensor import Tensor, pad_zero

SUPPORTED_EXTENTS = frozenset(BRANCH_EXTENTS.values())


class FusionReport(BaseModel):
    """Outcome of running multi-branch and fused weights side by side."""

    model_config = ConfigDict(frozen=True)

    max_abs_divergence: float = Field(ge=0.0)
    probes_run: int = Field(ge=1)
    param_count_before: int = Field(gt=0)
    param_count_after: int = Field(gt=0)
    per_block_divergence: list[float] = Field(default_factory=list)

    def to_line(self) -> str:
        """Machine-readable key=value summary."""
        return (
            f"max_abs_divergence={self.max_abs_divergence!r} "
            f"probes={self.probes_run} "
            f"params_before={self.param_count_before} "
            f"params_after={self.param_count_after}"
        )


def embed_kernel(k: ConvKernel) -> ConvKernel:
    """Zero-pad a branch kernel out to 3x3x3; the original taps sit at the centre."""
    if k.extents not in SUPPORTED_EXTENTS:
        msg = f"cannot embed kernel of extents {k.extents}; expected one of {sorted(SUPPORTED_EXTENTS)}"
        raise KernelExtentError(msg)
    if k.extents == ST_EXTENTS:
        return k
    pads = [(0, 0), (0, 0)] + [((3 - e) // 2, (3 - e) // 2) for e in k.extents]
    return ConvKernel(weights=pad_zero(k.weights, pads), bias=k.bias)


def fuse_ecm(p: EcmParams, kind: BlockKind | None = None) -> ConvKernel:
    """Sum the embedded branch kernels and their biases into one 3x3x3 kernel.

    With kind=None every present branch is fused; otherwise exactly the
    branches that kind uses.
    """
    kernels = p.present() if kind is None else p.require(kind)
    weights = np.zeros((p.c_out, p.c_in, *ST_EXTENTS), dtype=np.float64)
    bias = np.zeros(p.c_out, dtype=np.float64)
    for kernel in kernels.values():
        embedded = embed_kernel(kernel)
        weights += embedded.weights.numpy()
        bias += embedded.bias.numpy()
    return ConvKernel.of(weights.astype(np.float32), bias.astype(np.float32))


def _fuse_block(block: Block) -> Block:
    if block.kind is BlockKind.FUSED:
        return block
    return Block(kind=BlockKind.FUSED, params=fuse_ecm(block.params, block.kind))  # type: ignore[arg-type]


def fuse_model(w: ModelWeights) -> ModelWeights:
    """Replace every ECM-region block with its fused kernel; everything else is shared as-is."""
    if w.fused:
        msg = f"weights {w.fingerprint} are already fused"
        raise AlreadyFusedError(msg)
    cfg = w.config
    split = cfg.split_after_block

    def convert(i: int, block: Block) -> Block:
        return _fuse_block(block) if i >= cfg.ecm_from_block else block

    fused = ModelWeights(
        config=cfg,
        stem=[convert(i, b) for i, b in enumerate(w.stem)],
        low=[convert(split + j, b) for j, b in enumerate(w.low)],
        high=[convert(split + j, b) for j, b in enumerate(w.high)],
        maps=w.maps,
        fused=True,
        seed=w.seed,
    )
    logger.debug(
        f"fused {w.fingerprint}: params {parameter_count(w)} -> {parameter_count(fused)}",
    )
    return fused


def _block_divergence(
    a: Block,
    b: Block,
    rng: np.random.Generator,
    size: tuple[int, int, int],
) -> float:
    x = Tensor(rng.uniform(0.0, 1.0, size=(1, a.c_in, *size)))
    ya = ecm_forward(x, a.params, a.kind).numpy()
    yb = ecm_forward(x, b.params, b.kind).numpy()
    return float(np.max(np.abs(ya.astype(np.float64) - yb)))


def verify_fusion(
    w_multi: ModelWeights,
    w_fused: ModelWeights,
    probes: int,
    seed: int,
    *,
    frames: int = 4,
    block_probe_size: tuple[int, int, int] = (3, 8, 8),
) -> FusionReport:
    """Run both weight sets on seeded random inputs and report the worst divergence."""
    if w_multi.fingerprint != w_fused.fingerprint:
        msg = f"config mismatch: {w_multi.fingerprint} vs {w_fused.fingerprint}"
        raise ConfigMismatchError(msg)
    if probes < 1:
        msg = f"probes must be >= 1, got {probes}"
        raise ParameterError(msg)
    cfg = w_multi.config
    rng = np.random.default_rng(seed)

    pairs = list(
        zip(
            (b for _, b in w_multi.indexed_blocks()),
            (b for _, b in w_fused.indexed_blocks()),
            strict=True,
        ),
    )
    per_block = [0.0] * len(pairs)
    worst = 0.0
    for probe in range(probes):
        x = Tensor(
            rng.uniform(0.0, 1.0, size=(1, cfg.in_channels, frames, *cfg.input_size)),
        )
        ya = forward(x, w_multi).values.numpy().astype(np.float64)
        yb = forward(x, w_fused).values.numpy()
        divergence = float(np.max(np.abs(ya - yb)))
        worst = max(worst, divergence)
        for i, (a, b) in enumerate(pairs):
            per_block[i] = max(per_block[i], _block_divergence(a, b, rng, block_probe_size))
        logger.debug(f"probe {probe}: divergence {divergence:.3e}")

    return FusionReport(
        max_abs_divergence=worst,
        probes_run=probes,
        param_count_before=parameter_count(w_multi),
        param_count_after=parameter_count(w_fused),
        per_block_divergence=per_block,
    )
