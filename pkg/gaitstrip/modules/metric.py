"""Losses, P x K batch sampling, distances and the gallery/probe rank-1 protocol.

Losses are evaluated, never differentiated: they score a batch of embeddings
the way the training objective would.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gaitstrip.modules.errors import (
    EmptyCandidateSetError,
    NoValidTripletError,
    ParameterError,
    SamplerError,
    ShapeMismatchError,
)
from gaitstrip.modules.model import Embedding
from gaitstrip.modules.nn_ops import TensorModel
from gaitstrip.modules.tensor import Tensor

DEFAULT_CHUNK = 256
DIFF_BUDGET = 1 << 24


class EmbeddingSet(TensorModel):
    """Labeled (n, D) matrix of flattened embeddings."""

    vectors: Tensor
    labels: list[int]
    views: list[str] | None = None
    ids: list[str] | None = None

    @model_validator(mode="after")
    def _check(self) -> EmbeddingSet:
        if self.vectors.rank != 2:  # noqa: PLR2004
            msg = f"embedding set vectors must be (n, D), got {self.vectors.shape}"
            raise ShapeMismatchError(msg)
        n = self.vectors.shape[0]
        for name in ("labels", "views", "ids"):
            values = getattr(self, name)
            if values is not None and len(values) != n:
                msg = f"{name} has {len(values)} entries for {n} vectors"
                raise ShapeMismatchError(msg)
        return self

    def __len__(self) -> int:
        """Number of vectors."""
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        """Flattened vector length D."""
        return self.vectors.shape[1]

    def scaled(self, factor: float) -> EmbeddingSet:
        """Copy with every vector multiplied by factor."""
        return self.model_copy(update={"vectors": Tensor(self.vectors.numpy() * factor)})

    def subset(self, mask: np.ndarray) -> EmbeddingSet:
        """Rows where mask is true."""
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            msg = "subset selects no vectors"
            raise EmptyCandidateSetError(msg)
        return EmbeddingSet(
            vectors=Tensor(self.vectors.numpy()[idx]),
            labels=[self.labels[i] for i in idx],
            views=None if self.views is None else [self.views[i] for i in idx],
            ids=None if self.ids is None else [self.ids[i] for i in idx],
        )


class SamplerConfig(BaseModel):
    """P classes x K samples per batch, clip length T and triplet margin."""

    model_config = ConfigDict(frozen=True)

    P: int = Field(ge=1)
    K: int = Field(ge=1)
    T: int = Field(default=30, ge=1)
    margin: float = Field(default=0.2, gt=0.0)

    @classmethod
    def preset(cls, name: str) -> SamplerConfig:
        """Batch shape used for 'casiab' (8 x 8) or 'oumvlp' (32 x 8)."""
        plans = {"casiab": (8, 8), "oumvlp": (32, 8)}
        if name not in plans:
            msg = f"unknown sampler preset {name!r}"
            raise ParameterError(msg)
        p, k = plans[name]
        return cls(P=p, K=k)


def to_embedding_set(embeddings: Sequence[Embedding]) -> EmbeddingSet:
    """Flatten each (bins, d_out) embedding into one row."""
    if not embeddings:
        msg = "cannot build an embedding set from no embeddings"
        raise ShapeMismatchError(msg)
    shapes = {e.values.shape for e in embeddings}
    if len(shapes) != 1:
        msg = f"embeddings disagree on shape: {sorted(shapes)}"
        raise ShapeMismatchError(msg)
    unlabeled = [e.sequence_id for e in embeddings if e.label is None]
    if unlabeled:
        msg = f"embeddings without labels: {unlabeled[:5]}"
        raise ParameterError(msg)
    return EmbeddingSet(
        vectors=Tensor(np.stack([e.values.numpy().reshape(-1) for e in embeddings])),
        labels=[int(e.label) for e in embeddings],  # type: ignore[arg-type]
        views=[e.view for e in embeddings],
        ids=[e.sequence_id for e in embeddings],
    )


def _pairwise(a: np.ndarray, b: np.ndarray, chunk: int) -> np.ndarray:
    """Exact row-by-row L2 distances in float64; identical rows give exactly 0.

    chunk caps the rows per block; blocks also stay under DIFF_BUDGET elements.
    """
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    out = np.empty((a64.shape[0], b64.shape[0]), dtype=np.float64)
    rows = max(1, min(chunk, DIFF_BUDGET // max(1, b64.size)))
    for start in range(0, a64.shape[0], rows):
        block = a64[start : start + rows]
        diff = block[:, None, :] - b64[None, :, :]
        out[start : start + rows] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def euclidean_distance_matrix(
    a: EmbeddingSet,
    b: EmbeddingSet,
    *,
    chunk: int = DEFAULT_CHUNK,
) -> Tensor:
    """d[i][j] = ||a_i - b_j||."""
    if a.dim != b.dim:
        msg = f"embedding sets differ in dimension: {a.dim} vs {b.dim}"
        raise ShapeMismatchError(msg)
    return Tensor(_pairwise(a.vectors.numpy(), b.vectors.numpy(), chunk))


def triplet_loss(d_pos: float, d_neg: float, m: float) -> float:
    """max(d_pos - d_neg + m, 0)."""
    if m < 0:
        msg = f"triplet margin must be non-negative, got {m}"
        raise ParameterError(msg)
    if d_pos < 0 or d_neg < 0:
        msg = f"distances must be non-negative, got {d_pos}, {d_neg}"
        raise ParameterError(msg)
    return max(d_pos - d_neg + m, 0.0)


def _triplet_mask(labels: np.ndarray) -> np.ndarray:
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(labels.size, dtype=bool)
    negative = ~same
    return positive[:, :, None] & negative[:, None, :]


def count_batch_all_triplets(labels: Sequence[int]) -> int:
    """Number of (anchor, positive, negative) triples a batch-all pass enumerates."""
    return int(_triplet_mask(np.asarray(labels)).sum())


def batch_all_triplet_loss(e: EmbeddingSet, m: float) -> tuple[float, float]:
    """Mean loss over active triples and the fraction of triples that are active.

    The mean is 0.0 when no triple is active.
    """
    if m < 0:
        msg = f"triplet margin must be non-negative, got {m}"
        raise ParameterError(msg)
    labels = np.asarray(e.labels)
    valid = _triplet_mask(labels)
    total = int(valid.sum())
    if total == 0:
        msg = f"no valid triple among {len(labels)} samples of {np.unique(labels).size} classes"
        raise NoValidTripletError(msg)
    d = _pairwise(e.vectors.numpy(), e.vectors.numpy(), DEFAULT_CHUNK)
    loss = d[:, :, None] - d[:, None, :] + m
    active = valid & (loss > 0)
    n_active = int(active.sum())
    mean = float(loss[active].mean()) if n_active else 0.0
    logger.debug(f"batch-all: {n_active}/{total} active triples, mean {mean:.4f}")
    return mean, n_active / total


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> float:
    """Mean negative log-softmax of the true class, max-subtracted."""
    if logits.rank != 2:  # noqa: PLR2004
        msg = f"logits must be (n, classes), got {logits.shape}"
        raise ShapeMismatchError(msg)
    n, classes = logits.shape
    if len(labels) != n:
        msg = f"{len(labels)} labels for {n} logit rows"
        raise ShapeMismatchError(msg)
    y = np.asarray(labels, dtype=np.int64)
    if np.any((y < 0) | (y >= classes)):
        msg = f"labels must lie in [0, {classes}), got {sorted(set(y.tolist()))}"
        raise ParameterError(msg)
    z = logits.numpy().astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(n), y]))


def combined_loss(e: EmbeddingSet, logits: Tensor, m: float) -> float:
    """Batch-all triplet loss plus cross-entropy on the embedding set's labels."""
    triplet, _ = batch_all_triplet_loss(e, m)
    return triplet + cross_entropy(logits, e.labels)


def sample_batch(labels_pool: Sequence[int], cfg: SamplerConfig, seed: int) -> list[int]:
    """P distinct classes, K indices each; classes short of K are drawn with replacement."""
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for i, label in enumerate(labels_pool):
        by_class.setdefault(int(label), []).append(i)
    classes = sorted(by_class)
    if len(classes) < cfg.P:
        msg = f"need {cfg.P} classes, pool has {len(classes)}"
        raise SamplerError(msg)

    batch: list[int] = []
    for c in rng.choice(len(classes), size=cfg.P, replace=False):
        members = by_class[classes[int(c)]]
        picked = rng.choice(members, size=cfg.K, replace=len(members) < cfg.K)
        batch.extend(int(i) for i in picked)
    return batch


def sample_clip(sequence: Tensor, frames: int, seed: int) -> Tensor:
    """Contiguous window of frames along T; short sequences wrap around."""
    if frames < 1:
        msg = f"clip length must be >= 1, got {frames}"
        raise ParameterError(msg)
    if sequence.rank != 5:  # noqa: PLR2004
        msg = f"expected an (N, C, T, H, W) sequence, got {sequence.shape}"
        raise ShapeMismatchError(msg)
    t = sequence.shape[2]
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, t - frames + 1)) if t >= frames else int(rng.integers(0, t))
    idx = (start + np.arange(frames)) % t
    return Tensor(sequence.numpy()[:, :, idx])


def rank1_accuracy(
    gallery: EmbeddingSet,
    probe: EmbeddingSet,
    exclude_same_view: bool = False,  # noqa: FBT001, FBT002
    *,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    """Fraction of probes whose nearest gallery vector shares their label.

    Ties go to the lowest gallery index. With exclude_same_view, gallery
    entries recorded under the probe's own view are not candidates.
    """
    if len(gallery) == 0 or len(probe) == 0:
        msg = "gallery and probe must be non-empty"
        raise EmptyCandidateSetError(msg)
    if gallery.dim != probe.dim:
        msg = f"gallery and probe differ in dimension: {gallery.dim} vs {probe.dim}"
        raise ShapeMismatchError(msg)
    d = _pairwise(probe.vectors.numpy(), gallery.vectors.numpy(), chunk)
    if exclude_same_view:
        if gallery.views is None or probe.views is None:
            msg = "view exclusion needs view tags on both sets"
            raise ParameterError(msg)
        same = np.asarray(probe.views)[:, None] == np.asarray(gallery.views)[None, :]
        d = np.where(same, np.inf, d)
        empty = np.flatnonzero(np.all(same, axis=1))
        if empty.size:
            msg = f"probe {int(empty[0])} has no gallery candidate outside view {probe.views[int(empty[0])]!r}"
            raise EmptyCandidateSetError(msg)
    nearest = np.argmin(d, axis=1)
    hits = np.asarray(gallery.labels)[nearest] == np.asarray(probe.labels)
    return float(hits.mean())
