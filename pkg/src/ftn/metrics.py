"""CMC / mAP under the same-identity-same-camera junk rule, plus a brute-force AP oracle."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RetrievalResult:
    cmc: np.ndarray              # ranks 1..R
    map: float
    num_valid_queries: int
    per_query_ap: list = field(default_factory=list)  # None for skipped queries

    def to_dict(self) -> dict:
        return {"cmc": [float(c) for c in self.cmc], "map": float(self.map),
                "num_valid_queries": int(self.num_valid_queries), "cmc1": float(self.cmc[0])}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def ap_oracle(relevance) -> float:
    """Average of precision@k over every relevant position k of a ranking."""
    rel = [bool(r) for r in relevance]
    if not any(rel):
        raise ValueError("ap_oracle needs at least one relevant item")
    hits, precisions = 0, []
    for k, r in enumerate(rel, start=1):
        if r:
            hits += 1
            precisions.append(hits / k)
    return sum(precisions) / len(precisions)


def distance_matrix(q: np.ndarray, g: np.ndarray, normalize: bool = False) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if q.shape[1] != g.shape[1]:
        raise ValueError(f"embedding widths differ: {q.shape[1]} vs {g.shape[1]}")
    if normalize:
        q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    return np.sqrt(((q[:, None, :] - g[None, :, :]) ** 2).sum(-1))


def evaluate(q_emb, q_ids, q_cams, g_emb, g_ids, g_cams, max_rank: int = 10,
             normalize: bool = False) -> RetrievalResult:
    """Rank the gallery by Euclidean distance (ties -> lower gallery index first)."""
    q_ids, q_cams = np.asarray(q_ids), np.asarray(q_cams)
    g_ids, g_cams = np.asarray(g_ids), np.asarray(g_cams)
    dist = distance_matrix(q_emb, g_emb, normalize)
    order = np.argsort(dist, axis=1, kind="stable")

    hits_at = np.zeros(max_rank)
    aps: list = []
    valid = 0
    any_gallery = False
    for qi in range(len(q_ids)):
        ranked = order[qi]
        junk = (g_ids[ranked] == q_ids[qi]) & (g_cams[ranked] == q_cams[qi])
        kept = ranked[~junk]
        any_gallery |= kept.size > 0
        rel = g_ids[kept] == q_ids[qi]
        if not rel.any():
            aps.append(None)
            continue
        valid += 1
        first = int(np.argmax(rel))
        if first < max_rank:
            hits_at[first:] += 1
        cum = np.cumsum(rel)
        positions = np.flatnonzero(rel)
        aps.append(float(np.mean(cum[positions] / (positions + 1))))
    if not any_gallery:
        raise ValueError("gallery is empty after junk filtering for every query")
    if valid == 0:
        raise ValueError("no query has a valid positive in the gallery")
    good = [a for a in aps if a is not None]
    return RetrievalResult(hits_at / valid, float(np.mean(good)), valid, aps)
