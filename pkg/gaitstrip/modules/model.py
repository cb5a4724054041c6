"""GaitStrip assembly: shared stem, low/high-level block stacks and feature mapping."""

from __future__ import annotations

import hashlib
from collections.abc import Iterator, Sequence
from typing import Any, Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gaitstrip.modules.ecm import (
    BRANCH_EXTENTS,
    BlockKind,
    EcmParams,
    ecm_forward,
)
from gaitstrip.modules.errors import (
    BatchItemError,
    ConfigError,
    ShapeMismatchError,
)
from gaitstrip.modules.nn_ops import (
    ConvKernel,
    Extents,
    LinearMap,
    TensorModel,
    leaky_relu,
    linear_apply,
    maxpool3d,
)
from gaitstrip.modules.tensor import (
    Tensor,
    concat,
    power_mean,
    reduce_max,
)

Level = Literal["low", "high"]

# Axes of an (N, C, T, H, W) activation.
AXIS_T = 2
AXIS_W = 3  # after the T axis has been reduced away


class ModelConfig(BaseModel):
    """Architecture plan shared by multi-branch and fused weights."""

    model_config = ConfigDict(frozen=True)

    block_channels: list[int]
    ecm_from_block: int
    block_kind: BlockKind = BlockKind.FULL_ECM
    highlevel_pool: Extents = (1, 2, 2)
    highlevel_stride: Extents = (1, 2, 2)
    split_after_block: int = 1
    embedding_dim: int = Field(default=128, ge=1)
    gem_p: float = Field(default=6.5, ge=1.0)
    input_size: tuple[int, int] = (64, 44)
    in_channels: int = Field(default=1, ge=1)
    leaky_slope: float = Field(default=0.01, ge=0.0, lt=1.0)
    levels: Literal["both", "low", "high"] = "both"

    @model_validator(mode="after")
    def _check(self) -> ModelConfig:
        n = len(self.block_channels)
        if n == 0 or any(c < 1 for c in self.block_channels):
            msg = f"invalid channel plan {self.block_channels}"
            raise ConfigError(msg)
        if not 1 <= self.split_after_block <= n:
            msg = f"split_after_block must be in [1, {n}], got {self.split_after_block}"
            raise ConfigError(msg)
        if not 0 <= self.ecm_from_block <= n:
            msg = f"ecm_from_block must be in [0, {n}], got {self.ecm_from_block}"
            raise ConfigError(msg)
        if self.block_kind is BlockKind.FUSED:
            msg = "FUSED is a weight state produced by fuse_model, not a config kind"
            raise ConfigError(msg)
        if any(d < 1 for d in self.input_size):
            msg = f"invalid input size {self.input_size}"
            raise ConfigError(msg)
        high_h, high_w = self._pooled_hw()
        if self.levels != "low" and (high_h < 1 or high_w < 1):
            msg = f"high-level pool {self.highlevel_pool} too large for {self.input_size}"
            raise ConfigError(msg)
        return self

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> ModelConfig:  # noqa: ANN401
        """Named architecture: 'casiab' or 'oumvlp'."""
        plans: dict[str, dict[str, Any]] = {
            "casiab": {"block_channels": [32, 64, 128, 128], "ecm_from_block": 1},
            "oumvlp": {"block_channels": [64, 128, 196, 256, 256], "ecm_from_block": 3},
        }
        if name not in plans:
            msg = f"unknown preset {name!r}; expected one of {sorted(plans)}"
            raise ConfigError(msg)
        return cls(**{**plans[name], **overrides})

    def _pooled_hw(self) -> tuple[int, int]:
        h, w = self.input_size
        _, wh, ww = self.highlevel_pool
        _, sh, sw = self.highlevel_stride
        return (h - wh) // sh + 1, (w - ww) // sw + 1

    def level_names(self) -> tuple[Level, ...]:
        """Enabled levels in concatenation order (low first)."""
        if self.levels == "both":
            return ("low", "high")
        return (self.levels,)

    def bins(self, level: Level) -> int:
        """Horizontal bins a level contributes (its feature-map height)."""
        return self.input_size[0] if level == "low" else self._pooled_hw()[0]

    @property
    def total_bins(self) -> int:
        """Bin count of the final embedding."""
        return sum(self.bins(level) for level in self.level_names())

    @property
    def feature_channels(self) -> int:
        """C_f, channels entering the feature mapping."""
        return self.block_channels[-1]

    def kind_of(self, index: int) -> BlockKind:
        """Block kind of block index before any fusion."""
        return self.block_kind if index >= self.ecm_from_block else BlockKind.ST_ONLY

    def channels_in(self, index: int) -> int:
        """Input channels of block index."""
        return self.in_channels if index == 0 else self.block_channels[index - 1]

    def fingerprint(self) -> str:
        """Stable short hash of the plan."""
        canonical = self.model_dump_json()
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class Block(TensorModel):
    """One feature-extraction block: EcmParams, or a single kernel when FUSED."""

    kind: BlockKind
    params: EcmParams | ConvKernel

    @model_validator(mode="after")
    def _check(self) -> Block:
        if self.kind is BlockKind.FUSED:
            if not isinstance(self.params, ConvKernel):
                msg = "FUSED block must carry exactly one 3x3x3 kernel"
                raise ConfigError(msg)
        elif not isinstance(self.params, EcmParams):
            msg = f"{self.kind.name} block must carry EcmParams"
            raise ConfigError(msg)
        else:
            self.params.require(self.kind)
        return self

    @property
    def c_in(self) -> int:
        """Input channels."""
        return self.params.c_in

    @property
    def c_out(self) -> int:
        """Output channels."""
        return self.params.c_out

    @property
    def param_count(self) -> int:
        """Learnable scalars held by the block."""
        return self.params.param_count


class ModelWeights(TensorModel):
    """All learnable tensors of one GaitStrip model.

    `stem` holds the blocks before the split; `low` and `high` hold each level's
    own copy of the remaining blocks. `maps` holds one LinearMap per bin of each
    enabled level.
    """

    config: ModelConfig
    stem: list[Block]
    low: list[Block] = Field(default_factory=list)
    high: list[Block] = Field(default_factory=list)
    maps: dict[str, list[LinearMap]]
    fused: bool = False
    seed: int | None = None

    @model_validator(mode="after")
    def _check(self) -> ModelWeights:
        cfg = self.config
        n = len(cfg.block_channels)
        if len(self.stem) != cfg.split_after_block:
            msg = f"stem has {len(self.stem)} blocks, config splits after {cfg.split_after_block}"
            raise ConfigError(msg)
        for level in ("low", "high"):
            blocks: list[Block] = getattr(self, level)
            expected = n - cfg.split_after_block if level in cfg.level_names() else 0
            if len(blocks) != expected:
                msg = f"{level} level has {len(blocks)} blocks, expected {expected}"
                raise ConfigError(msg)
        for level in cfg.level_names():
            self._check_chain(level)
            maps = self.maps.get(level, [])
            if len(maps) != cfg.bins(level):
                msg = f"{level} level has {len(maps)} bin maps, expected {cfg.bins(level)}"
                raise ConfigError(msg)
            for m in maps:
                if (m.d_out, m.d_in) != (cfg.embedding_dim, cfg.feature_channels):
                    msg = (
                        f"bin map shape {(m.d_out, m.d_in)} does not match "
                        f"{(cfg.embedding_dim, cfg.feature_channels)}"
                    )
                    raise ShapeMismatchError(msg)
        for i, block in self.indexed_blocks():
            is_fused = block.kind is BlockKind.FUSED
            if self.fused and i >= cfg.ecm_from_block and not is_fused:
                msg = f"weights flagged fused still hold a {block.kind.name} block at {i}"
                raise ConfigError(msg)
            if not self.fused and is_fused:
                msg = f"block {i} is FUSED but the weights are not flagged fused"
                raise ConfigError(msg)
        return self

    def _check_chain(self, level: Level) -> None:
        cfg = self.config
        for i, block in enumerate([*self.stem, *getattr(self, level)]):
            expected = (cfg.block_channels[i], cfg.channels_in(i))
            if (block.c_out, block.c_in) != expected:
                msg = (
                    f"block {i} on the {level} path has (C_out, C_in)="
                    f"{(block.c_out, block.c_in)}, expected {expected}"
                )
                raise ShapeMismatchError(msg)

    def indexed_blocks(self) -> Iterator[tuple[int, Block]]:
        """(architecture index, block) pairs over stem then each level."""
        split = self.config.split_after_block
        yield from enumerate(self.stem)
        for level in ("low", "high"):
            for j, block in enumerate(getattr(self, level)):
                yield split + j, block

    @property
    def fingerprint(self) -> str:
        """Fingerprint of the config these weights were built for."""
        return self.config.fingerprint()


class Embedding(TensorModel):
    """Per-sequence bin embedding Y of shape (bins, d_out)."""

    values: Tensor
    sequence_id: str = ""
    label: int | None = None
    view: str = ""

    @model_validator(mode="after")
    def _check(self) -> Embedding:
        if self.values.rank != 2:  # noqa: PLR2004
            msg = f"embedding must be (bins, d_out), got {self.values.shape}"
            raise ShapeMismatchError(msg)
        if not np.isfinite(self.values.numpy()).all():
            msg = f"embedding {self.sequence_id!r} holds non-finite values"
            raise ShapeMismatchError(msg)
        return self


def _uniform_kernel(
    rng: np.random.Generator,
    c_out: int,
    c_in: int,
    extents: Extents,
) -> ConvKernel:
    fan_in = c_in * int(np.prod(extents))
    bound = np.sqrt(1.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(c_out, c_in, *extents)).astype(np.float32)
    return ConvKernel.of(w)


def _init_block(
    rng: np.random.Generator,
    kind: BlockKind,
    c_out: int,
    c_in: int,
) -> Block:
    kernels = {
        name: _uniform_kernel(rng, c_out, c_in, BRANCH_EXTENTS[name])
        for name in kind.branches
    }
    return Block(kind=kind, params=EcmParams(**kernels))


def build_model(cfg: ModelConfig, seed: int) -> ModelWeights:
    """Seeded initialization: kernels ~ U(-b, b) with b = sqrt(1 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    split = cfg.split_after_block
    n = len(cfg.block_channels)

    def make(i: int) -> Block:
        return _init_block(rng, cfg.kind_of(i), cfg.block_channels[i], cfg.channels_in(i))

    stem = [make(i) for i in range(split)]
    levels: dict[str, list[Block]] = {"low": [], "high": []}
    for level in cfg.level_names():
        levels[level] = [make(i) for i in range(split, n)]

    maps: dict[str, list[LinearMap]] = {}
    bound = np.sqrt(1.0 / cfg.feature_channels)
    for level in cfg.level_names():
        maps[level] = [
            LinearMap.of(
                rng.uniform(
                    -bound,
                    bound,
                    size=(cfg.embedding_dim, cfg.feature_channels),
                ).astype(np.float32),
            )
            for _ in range(cfg.bins(level))
        ]

    weights = ModelWeights(
        config=cfg,
        stem=stem,
        low=levels["low"],
        high=levels["high"],
        maps=maps,
        seed=seed,
    )
    logger.debug(
        f"built {cfg.fingerprint()} seed={seed} params={parameter_count(weights)}",
    )
    return weights


def parameter_count(w: ModelWeights) -> int:
    """Learnable scalars across blocks and bin maps."""
    blocks = sum(b.param_count for _, b in w.indexed_blocks())
    maps = sum(m.param_count for level in w.maps.values() for m in level)
    return blocks + maps


def run_blocks(x: Tensor, blocks: Sequence[Block], slope: float) -> Tensor:
    """Each block's branch sum followed by leaky ReLU."""
    for block in blocks:
        x = leaky_relu(ecm_forward(x, block.params, block.kind), slope)
    return x


def temporal_aggregate(x: Tensor) -> Tensor:
    """Y_ta: max over the frame axis, (N, C, T, H, W) -> (N, C, H, W)."""
    return reduce_max(x, AXIS_T)


def spatial_map(y_ta: Tensor, maps: Sequence[LinearMap], p: float) -> Tensor:
    """GeM over width per (channel, row), then one LinearMap per row -> (H, d_out)."""
    n, c, h, _ = y_ta.shape
    if n != 1:
        msg = f"spatial mapping runs on one sequence at a time, got batch {n}"
        raise ShapeMismatchError(msg)
    if len(maps) != h:
        msg = f"{len(maps)} bin maps for a feature map of height {h}"
        raise ShapeMismatchError(msg)
    pooled = power_mean(y_ta, AXIS_W, p).numpy().reshape(c, h)
    rows = [linear_apply(Tensor(pooled[:, r]), maps[r]).numpy() for r in range(h)]
    return Tensor(np.stack(rows))


def _check_input(x: Tensor, cfg: ModelConfig) -> None:
    expected = (1, cfg.in_channels, *cfg.input_size)
    if x.rank != 5 or (x.shape[0], x.shape[1], *x.shape[3:]) != expected:  # noqa: PLR2004
        msg = (
            f"expected a (1, {cfg.in_channels}, T, {cfg.input_size[0]}, "
            f"{cfg.input_size[1]}) sequence, got {x.shape}"
        )
        raise ShapeMismatchError(msg)


def forward(
    x: Tensor,
    w: ModelWeights,
    *,
    sequence_id: str = "",
    label: int | None = None,
    view: str = "",
) -> Embedding:
    """Embed one silhouette sequence; bins are low-level rows then high-level rows."""
    cfg = w.config
    _check_input(x, cfg)
    slope = cfg.leaky_slope
    shared = run_blocks(x, w.stem, slope)

    parts = []
    for level in cfg.level_names():
        if level == "low":
            h = run_blocks(shared, w.low, slope)
        else:
            pooled = maxpool3d(shared, cfg.highlevel_pool, cfg.highlevel_stride)
            h = run_blocks(pooled, w.high, slope)
        parts.append(spatial_map(temporal_aggregate(h), w.maps[level], cfg.gem_p))

    values = concat(parts, axis=0)
    return Embedding(values=values, sequence_id=sequence_id, label=label, view=view)


def forward_batch(xs: Sequence[Tensor], w: ModelWeights) -> list[Embedding]:
    """forward over each sequence in order; a failure names its index."""
    out = []
    for i, x in enumerate(xs):
        try:
            out.append(forward(x, w))
        except Exception as e:
            raise BatchItemError(i, e) from e
    return out
