"""In-process invariant suite behind `gaitstrip selftest`."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Callable

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from gaitstrip.modules.ecm import BRANCH_EXTENTS, BlockKind, EcmParams, ecm_forward
from gaitstrip.modules.metric import (
    EmbeddingSet,
    SamplerConfig,
    batch_all_triplet_loss,
    cross_entropy,
    rank1_accuracy,
    sample_batch,
    triplet_loss,
)
from gaitstrip.modules.model import (
    Embedding,
    ModelConfig,
    build_model,
    forward,
    parameter_count,
    temporal_aggregate,
)
from gaitstrip.modules.nn_ops import ConvKernel, conv3d
from gaitstrip.modules.reparam import fuse_ecm, fuse_model
from gaitstrip.modules.serialization import (
    decode_embeddings,
    decode_tensor_file,
    encode_embeddings,
    encode_tensor_file,
)
from gaitstrip.modules.tensor import Tensor, power_mean, reduce_max

BLOCK_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-3


class CheckResult(BaseModel):
    """Outcome of one invariant check."""

    model_config = ConfigDict(frozen=True)

    name: str
    passed: bool
    detail: str


def _tiny_config(**overrides: object) -> ModelConfig:
    plan = {
        "block_channels": [4, 8, 8],
        "ecm_from_block": 1,
        "input_size": (16, 12),
        "embedding_dim": 8,
    }
    return ModelConfig(**{**plan, **overrides})


def _random_params(rng: np.random.Generator, kind: BlockKind, c_out: int, c_in: int) -> EcmParams:
    kernels = {
        name: ConvKernel.of(
            rng.standard_normal((c_out, c_in, *BRANCH_EXTENTS[name])).astype(np.float32),
            rng.standard_normal(c_out).astype(np.float32),
        )
        for name in kind.branches
    }
    return EcmParams(**kernels)


def check_block_fusion(trials: int) -> CheckResult:
    """Fused kernel matches the multi-branch sum for every ablation kind."""
    rng = np.random.default_rng(0)
    worst = 0.0
    kinds = [k for k in BlockKind if k is not BlockKind.FUSED]
    for kind in kinds:
        for _ in range(trials):
            c_in, c_out = (int(v) for v in rng.integers(1, 4, size=2))
            p = _random_params(rng, kind, c_out, c_in)
            x = Tensor(rng.uniform(0, 1, size=(1, c_in, 3, 5, 4)))
            multi = ecm_forward(x, p, kind).numpy()
            fused = conv3d(x, fuse_ecm(p, kind)).numpy()
            worst = max(worst, float(np.max(np.abs(multi.astype(np.float64) - fused))))
    return CheckResult(
        name="block_fusion",
        passed=bool(worst <= BLOCK_TOLERANCE),
        detail=f"max_abs={worst:.3e}",
    )


def check_model_fusion(cfg: ModelConfig, frames: int) -> CheckResult:
    """Whole-model embeddings survive fusion."""
    w = build_model(cfg, seed=7)
    fused = fuse_model(w)
    x = Tensor(np.random.default_rng(1).uniform(0, 1, size=(1, 1, frames, *cfg.input_size)))
    a = forward(x, w).values.numpy().astype(np.float64)
    b = forward(x, fused).values.numpy()
    worst = float(np.max(np.abs(a - b)))
    return CheckResult(
        name="model_fusion",
        passed=bool(worst <= MODEL_TOLERANCE),
        detail=f"max_abs={worst:.3e}",
    )


def check_parameter_parity() -> CheckResult:
    """Fused CASIA-B preset has exactly the ST_ONLY preset's parameter count."""
    fused = parameter_count(fuse_model(build_model(ModelConfig.preset("casiab"), seed=0)))
    st_only = parameter_count(
        build_model(ModelConfig.preset("casiab", block_kind=BlockKind.ST_ONLY), seed=0),
    )
    return CheckResult(
        name="parameter_parity",
        passed=bool(fused == st_only),
        detail=f"fused={fused} st_only={st_only}",
    )


def check_gem(samples: int) -> CheckResult:
    """Power mean: p=1 is the mean, constants are fixed points, monotone in p, p=64 near max."""
    rng = np.random.default_rng(2)
    failures = []
    t = Tensor(rng.uniform(0.1, 10, size=(samples, 3)))
    mean = t.numpy().astype(np.float64).mean(axis=1)
    if np.max(np.abs(power_mean(t, 1, 1.0).numpy() - mean)) > 1e-6:  # noqa: PLR2004
        failures.append("p=1 mean")
    for p in (1.0, 2.0, 6.5, 64.0):
        const = Tensor(np.full((4, 5), 3.25))
        if not np.array_equal(power_mean(const, 1, p).numpy(), np.full(4, 3.25, np.float32)):
            failures.append(f"constant p={p}")
    curves = [power_mean(t, 1, p).numpy().astype(np.float64) for p in (1.0, 2.0, 4.0, 8.0)]
    for lo, hi in zip(curves, curves[1:], strict=False):
        if np.any(hi < lo * (1 - 1e-6)):
            failures.append("monotone")
            break
    top = reduce_max(t, 1).numpy()
    if np.any(power_mean(t, 1, 64.0).numpy() < 0.98 * top):
        failures.append("p=64 near max")
    return CheckResult(name="gem", passed=not failures, detail=", ".join(failures) or "ok")


def check_locality() -> CheckResult:
    """Zeroing one row/column/frame only moves that row/column/frame of SPB-H/SPB-V/FL."""
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, size=(1, 2, 4, 6, 5)).astype(np.float32)
    failures = []
    for name, axis in (("spb_h", 3), ("spb_v", 4), ("fl", 2)):
        k = ConvKernel.of(rng.standard_normal((3, 2, *BRANCH_EXTENTS[name])).astype(np.float32))
        base = conv3d(Tensor(x), k).numpy()
        edited = x.copy()
        np.moveaxis(edited, axis, 0)[2] = 0.0
        moved = conv3d(Tensor(edited), k).numpy()
        others = np.delete(np.abs(base - moved), 2, axis=axis)
        if others.max() != 0.0:
            failures.append(name)
    return CheckResult(name="locality", passed=not failures, detail=", ".join(failures) or "ok")


def check_temporal_aggregation(cfg: ModelConfig, lengths: tuple[int, ...]) -> CheckResult:
    """Frame order does not change Y_ta; every T gives the same embedding shape."""
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, size=(1, 3, 7, 4, 4))
    perm = rng.permutation(7)
    same = np.array_equal(
        temporal_aggregate(Tensor(x)).numpy(),
        temporal_aggregate(Tensor(x[:, :, perm])).numpy(),
    )
    w = fuse_model(build_model(cfg, seed=5))
    shapes = {
        forward(Tensor(rng.uniform(0, 1, size=(1, 1, t, *cfg.input_size))), w).values.shape
        for t in lengths
    }
    ok = same and shapes == {(cfg.total_bins, cfg.embedding_dim)}
    return CheckResult(
        name="temporal_aggregation",
        passed=bool(ok),
        detail=f"permutation_equal={same} shapes={shapes}",
    )


def check_losses() -> CheckResult:
    """Unit values of the triplet, batch-all and cross-entropy losses."""
    failures = []
    if triplet_loss(0.1, 0.5, 0.2) != 0.0:
        failures.append("triplet inactive")
    if triplet_loss(0.7, 0.7, 0.2) != 0.2:  # noqa: PLR2004
        failures.append("triplet degenerate")
    if abs(cross_entropy(Tensor(np.zeros((3, 2))), [0, 1, 0]) - math.log(2)) > 1e-6:
        failures.append("uniform cross-entropy")
    same = EmbeddingSet(vectors=Tensor(np.ones((4, 3))), labels=[0, 0, 1, 1])
    if batch_all_triplet_loss(same, 0.2) != (0.2, 1.0):
        failures.append("batch-all identical")
    return CheckResult(name="losses", passed=not failures, detail=", ".join(failures) or "ok")


def check_sampler(draws: int) -> CheckResult:
    """Every P=K=8 draw is 8 classes x 8 indices and seeds reproduce batches."""
    pool = [c for c in range(20) for _ in range(10)]
    cfg = SamplerConfig.preset("casiab")
    for seed in range(draws):
        batch = sample_batch(pool, cfg, seed)
        counts = Counter(pool[i] for i in batch)
        if len(batch) != cfg.P * cfg.K or len(counts) != cfg.P or set(counts.values()) != {cfg.K}:
            return CheckResult(
                name="sampler",
                passed=False,
                detail=f"seed {seed} gave {dict(counts)}",
            )
    ok = sample_batch(pool, cfg, 11) == sample_batch(pool, cfg, 11)
    return CheckResult(name="sampler", passed=ok, detail=f"draws={draws}")


def check_retrieval() -> CheckResult:
    """Separated clusters and self-retrieval score 1.0; scaling keeps the score."""
    rng = np.random.default_rng(6)
    centers = np.array([[0.0] * 4, [50.0] * 4])
    gallery = EmbeddingSet(
        vectors=Tensor(np.repeat(centers, 5, axis=0) + rng.normal(0, 0.5, (10, 4))),
        labels=[0] * 5 + [1] * 5,
    )
    probe = EmbeddingSet(
        vectors=Tensor(np.repeat(centers, 3, axis=0) + rng.normal(0, 0.5, (6, 4))),
        labels=[0] * 3 + [1] * 3,
    )
    scores = (
        rank1_accuracy(gallery, probe),
        rank1_accuracy(gallery.scaled(3.5), probe.scaled(3.5)),
        rank1_accuracy(gallery, gallery),
    )
    return CheckResult(
        name="retrieval",
        passed=bool(scores == (1.0, 1.0, 1.0)),
        detail=f"scores={scores}",
    )


def check_serialization(rounds: int) -> CheckResult:
    """Random tensor and embedding files re-encode to identical bytes."""
    rng = np.random.default_rng(8)
    for _ in range(rounds):
        tensors = {
            f"t{i}": rng.standard_normal(tuple(rng.integers(1, 4, size=rng.integers(1, 5)))).astype(np.float32)
            for i in range(int(rng.integers(1, 4)))
        }
        blob = encode_tensor_file({"seed": "1"}, tensors)
        header, decoded = decode_tensor_file(blob)
        if encode_tensor_file(header, decoded) != blob:
            return CheckResult(name="serialization", passed=False, detail="weight file drifted")
        bins, dim = (int(v) for v in rng.integers(1, 5, size=2))
        records = [
            Embedding(
                values=Tensor(rng.standard_normal((bins, dim))),
                sequence_id=f"s{i}",
                label=int(rng.integers(0, 100)),
                view="" if i % 2 else "090",
            )
            for i in range(int(rng.integers(0, 4)))
        ]
        blob = encode_embeddings(records)
        if encode_embeddings(decode_embeddings(blob)) != blob:
            return CheckResult(name="serialization", passed=False, detail="embedding file drifted")
    return CheckResult(name="serialization", passed=True, detail=f"rounds={rounds}")


def run_selftest(*, quick: bool = False) -> list[CheckResult]:
    """Run every check; quick mode trims trial counts and skips the full preset."""
    tiny = _tiny_config()
    checks: list[Callable[[], CheckResult]] = [
        lambda: check_block_fusion(10 if quick else 100),
        lambda: check_model_fusion(tiny, frames=3),
        lambda: check_gem(100 if quick else 1000),
        check_locality,
        lambda: check_temporal_aggregation(tiny, (1, 15, 30)),
        check_losses,
        lambda: check_sampler(500 if quick else 10_000),
        check_retrieval,
        lambda: check_serialization(50 if quick else 1000),
    ]
    if not quick:
        checks.append(check_parameter_parity)
        checks.append(lambda: check_model_fusion(ModelConfig.preset("casiab"), frames=2))
        checks.append(
            lambda: check_temporal_aggregation(ModelConfig.preset("casiab"), (1, 15, 30, 50)),
        )

    results = []
    for check in checks:
        result = check()
        log = logger.info if result.passed else logger.error
        log(f"selftest {result.name}: {'ok' if result.passed else 'FAIL'} ({result.detail})")
        results.append(result)
    return results
