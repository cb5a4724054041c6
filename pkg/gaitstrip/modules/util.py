"""Tabular views of embedding sets and per-view evaluation reports."""

import re

import numpy as np
import pandas as pd
from loguru import logger

from gaitstrip.modules.errors import ParameterError
from gaitstrip.modules.metric import EmbeddingSet, rank1_accuracy

# CASIA-B style ids: <subject>-<condition>-<sequence>-<view>, e.g. 001-nm-05-090
_CASIA_ID = re.compile(r"^(?P<subject>\d+)-(?P<condition>[a-z]+)-(?P<seq>\d+)-(?P<view>\d+)$")


def parse_condition(sequence_id: str) -> str | None:
    """Walking condition (nm, bg, cl, ...) of a CASIA-B style id, or None."""
    match = _CASIA_ID.match(sequence_id.strip().lower())
    return match.group("condition") if match else None


def embedding_set_to_df(es: EmbeddingSet) -> pd.DataFrame:
    """One row per vector: id, label, view, condition."""
    n = len(es)
    ids = es.ids if es.ids is not None else [""] * n
    views = es.views if es.views is not None else [""] * n
    frame = pd.DataFrame(
        {
            "id": ids,
            "label": es.labels,
            "view": views,
        },
    )
    frame["condition"] = frame["id"].apply(parse_condition)
    return frame


def _require_views(es: EmbeddingSet, role: str) -> None:
    if es.views is None:
        msg = f"{role} set has no view tags"
        raise ParameterError(msg)


def rank1_by_view(gallery: EmbeddingSet, probe: EmbeddingSet) -> pd.DataFrame:
    """Rank-1 accuracy per (probe view, gallery view) with identical views left out.

    Rows are probe views, columns gallery views; identical-view cells are NaN.
    The trailing `mean` column averages each row over the remaining cells.
    """
    _require_views(gallery, "gallery")
    _require_views(probe, "probe")
    g_views = np.asarray(gallery.views)
    p_views = np.asarray(probe.views)

    rows = []
    for pv in sorted(set(probe.views)):  # type: ignore[arg-type]
        p_subset = probe.subset(p_views == pv)
        for gv in sorted(set(gallery.views)):  # type: ignore[arg-type]
            if gv == pv:
                continue
            g_subset = gallery.subset(g_views == gv)
            rows.append(
                {
                    "probe_view": pv,
                    "gallery_view": gv,
                    "rank1": rank1_accuracy(g_subset, p_subset),
                },
            )

    if not rows:
        return pd.DataFrame(columns=["mean"])
    table = (
        pd.DataFrame(rows)
        .pivot(index="probe_view", columns="gallery_view", values="rank1")
        .sort_index()
    )
    table["mean"] = table.mean(axis=1, skipna=True)
    logger.debug(f"per-view table {table.shape}")
    return table


def rank1_by_condition(
    gallery: EmbeddingSet,
    probe: EmbeddingSet,
    *,
    exclude_same_view: bool = False,
) -> pd.Series:
    """Rank-1 accuracy per probe condition parsed from CASIA-B style ids."""
    frame = embedding_set_to_df(probe)
    frame["condition"] = frame["condition"].fillna("unknown")
    scores = {}
    for condition, group in frame.groupby("condition"):
        mask = np.zeros(len(probe), dtype=bool)
        mask[group.index.to_numpy()] = True
        scores[condition] = rank1_accuracy(
            gallery,
            probe.subset(mask),
            exclude_same_view=exclude_same_view,
        )
    return pd.Series(scores, name="rank1").sort_index()
