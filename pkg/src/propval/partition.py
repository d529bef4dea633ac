"""Overlapping subgraph partition of the similarity graph.

Houses are cut into contiguous geographic blocks (whole communities, in
municipality/community order).  Each block then borrows a few houses from
its neighbouring blocks; those shared houses form the overlap registry that
the embedding-distance penalty works on.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class SubgraphPartition:
    subgraphs: tuple[np.ndarray, ...]    # sorted global house indices per subgraph
    n_houses: int
    home: np.ndarray                     # block each house was originally assigned to

    @property
    def j(self) -> int:
        return len(self.subgraphs)

    def multiplicity(self) -> np.ndarray:
        """g(p) for every house: how many subgraphs contain it."""
        g = np.zeros(self.n_houses, dtype=np.int64)
        for s in self.subgraphs:
            g[s] += 1
        return g

    def memberships(self, house: int) -> list[int]:
        return [i for i, s in enumerate(self.subgraphs) if _contains(s, house)]

    @property
    def overlap(self) -> dict[int, tuple[int, ...]]:
        """Registry: overlapping house -> containing subgraph ids (ascending)."""
        g = self.multiplicity()
        reg: dict[int, list[int]] = {int(h): [] for h in np.flatnonzero(g >= 2)}
        for i, s in enumerate(self.subgraphs):
            for h in s:
                if int(h) in reg:
                    reg[int(h)].append(i)
        return {h: tuple(v) for h, v in reg.items()}

    def local_index(self, i: int) -> dict[int, int]:
        return {int(h): k for k, h in enumerate(self.subgraphs[i])}

    def sub_adjacency(self, A: sp.spmatrix, i: int) -> sp.csr_matrix:
        idx = self.subgraphs[i]
        return sp.csr_matrix(A)[idx][:, idx].tocsr()

    def manifest(self) -> dict:
        return {
            "n_houses": self.n_houses,
            "subgraphs": [s.tolist() for s in self.subgraphs],
            "home": self.home.tolist(),
            "overlap": {str(h): list(v) for h, v in sorted(self.overlap.items())},
        }

    def manifest_hash(self) -> str:
        payload = json.dumps(self.manifest(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def save(self, path: str | Path, house_ids: Sequence[str] | None = None) -> None:
        doc = self.manifest()
        if house_ids is not None:
            doc["house_ids"] = list(house_ids)
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SubgraphPartition":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            tuple(np.asarray(s, dtype=np.int64) for s in doc["subgraphs"]),
            int(doc["n_houses"]),
            np.asarray(doc["home"], dtype=np.int64),
        )


def _contains(sorted_idx: np.ndarray, h: int) -> bool:
    k = np.searchsorted(sorted_idx, h)
    return k < len(sorted_idx) and sorted_idx[k] == h


def geographic_order(communities: Sequence[tuple[str, str]]) -> np.ndarray:
    """Stable order of houses by (municipality, community)."""
    keys = np.array([f"{m}\x00{c}" for m, c in communities])
    return np.argsort(keys, kind="stable")


def partition_overlapping(
    A: sp.spmatrix,
    houses: Sequence,
    target_size: int = 500,
    overlap_fraction: float = 0.05,
    mode: str = "similarity",
) -> SubgraphPartition:
    """Split houses into ~target_size community blocks plus borrowed boundary houses.

    ``houses`` are HouseRecords (or ``(municipality, community)`` pairs) in
    the same order as the rows of ``A``.  In ``similarity`` mode each block
    borrows the ``ceil(overlap_fraction * target_size)`` houses of its
    neighbouring blocks with the largest similarity mass towards it; in
    ``geographic`` mode it borrows the houses nearest the shared border.
    """
    if target_size < 2:
        raise ValueError(f"target_size must be >= 2, got {target_size}")
    if not 0 < overlap_fraction < 0.5:
        raise ValueError(f"overlap_fraction must lie in (0, 0.5), got {overlap_fraction}")
    if mode not in ("similarity", "geographic"):
        raise ValueError(f"unknown overlap mode {mode!r}")
    n = len(houses)
    pairs = [h if isinstance(h, tuple) else (h.municipality, h.community) for h in houses]
    order = geographic_order(pairs)
    n_blocks = max(1, math.ceil(n / target_size))

    # whole communities go to the block containing their midpoint
    block_of = np.zeros(n, dtype=np.int64)
    pos = 0
    start = 0
    while start < n:
        stop = start
        key = pairs[order[start]]
        while stop < n and pairs[order[stop]] == key:
            stop += 1
        mid = pos + (stop - start) / 2.0
        block_of[order[start:stop]] = min(n_blocks - 1, int(mid // (n / n_blocks)))
        pos += stop - start
        start = stop
    used = np.unique(block_of)
    remap = {b: k for k, b in enumerate(used)}
    block_of = np.array([remap[b] for b in block_of], dtype=np.int64)
    n_blocks = len(used)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    blocks = [np.flatnonzero(block_of == b) for b in range(n_blocks)]

    if n_blocks == 1:
        return SubgraphPartition((blocks[0],), n, block_of)

    A = sp.csr_matrix(A)
    borrow = math.ceil(overlap_fraction * target_size)
    members = []
    for b in range(n_blocks):
        cand = np.concatenate([blocks[nb] for nb in (b - 1, b + 1) if 0 <= nb < n_blocks])
        if mode == "similarity":
            mass = np.asarray(A[cand][:, blocks[b]].sum(axis=1)).ravel()
        else:
            mass = np.zeros(len(cand))
        # tie-break: distance (in geographic order) to this block's border
        lo_r, hi_r = rank[blocks[b]].min(), rank[blocks[b]].max()
        dist = np.where(rank[cand] < lo_r, lo_r - rank[cand], rank[cand] - hi_r)
        pick = cand[np.lexsort((cand, dist, -mass))[:borrow]]
        members.append(np.union1d(blocks[b], pick))
    return SubgraphPartition(tuple(members), n, block_of)


class MissingEmbeddingError(ValueError):
    pass


def overlap_embedding_rows(
    partition: SubgraphPartition, embeddings: Sequence[np.ndarray | None]
) -> dict[int, list[tuple[int, np.ndarray]]]:
    """For every overlapping house, its embedding row in each containing subgraph."""
    if len(embeddings) != partition.j or any(e is None for e in embeddings):
        raise MissingEmbeddingError(
            f"expected embeddings for all {partition.j} subgraphs, got "
            f"{sum(e is not None for e in embeddings)}"
        )
    widths = {np.shape(e)[1] for e in embeddings}
    if len(widths) != 1:
        raise ValueError(f"embedding widths differ across subgraphs: {sorted(widths)}")
    for i, e in enumerate(embeddings):
        if np.shape(e)[0] != len(partition.subgraphs[i]):
            raise ValueError(f"subgraph {i} embedding has {np.shape(e)[0]} rows, expected {len(partition.subgraphs[i])}")
    out = {}
    for h, subs in partition.overlap.items():
        out[h] = [(i, np.asarray(embeddings[i])[np.searchsorted(partition.subgraphs[i], h)]) for i in subs]
    return out
