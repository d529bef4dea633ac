"""Glue from raw houses to everything the trainer needs, plus on-disk layout."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .data import HouseRecord, TransactionEvent, ingest_houses, write_houses_csv
from .features import AttributeMatrix, encode_raw, pca_fit_transform
from .hin import (
    MetaSchemaConfig,
    MetaStructureSpec,
    SimilarityStack,
    build_hin,
    compose_adjacency,
    enumerate_meta_structures,
    load_meta_structures,
    save_meta_structures,
)
from .lifelong import LifelongConfig, LifelongTrainer
from .model import SubgraphEdges
from .partition import SubgraphPartition, partition_overlapping


@dataclass
class BuildConfig:
    embed_dim: int = 16
    top_k: int = 20
    target_size: int = 500
    overlap_fraction: float = 0.05
    overlap_mode: str = "similarity"
    graph_mode: str = "all-pairs"


@dataclass
class PreparedMarket:
    houses: list[HouseRecord]            # sorted by house_id
    specs: list[MetaStructureSpec]
    adjacency: sp.csr_matrix
    X: np.ndarray
    partition: SubgraphPartition
    edges: list[SubgraphEdges]

    @property
    def house_ids(self) -> list[str]:
        return [h.house_id for h in self.houses]

    @property
    def spec_names(self) -> list[str]:
        return [s.name for s in self.specs]

    def trainer(self, transactions: Sequence[TransactionEvent], cfg: LifelongConfig | None = None,
                scaler=None) -> LifelongTrainer:
        return LifelongTrainer(
            self.X, self.partition, self.edges, transactions, self.house_ids, cfg, scaler,
            n_specs=len(self.specs),
        )

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_houses_csv(self.houses, d / "houses.csv")
        save_meta_structures(self.specs, d / "meta_structures.json")
        self.partition.save(d / "partition.json", self.house_ids)
        a = self.adjacency.tocoo()
        arrays = {"X": self.X, "adj_row": a.row, "adj_col": a.col, "adj_val": a.data}
        for i, e in enumerate(self.edges):
            arrays[f"edges{i}_rows"] = e.rows
            arrays[f"edges{i}_cols"] = e.cols
            arrays[f"edges{i}_features"] = e.features
        np.savez(d / "market.npz", **arrays)

    @classmethod
    def load(cls, directory: str | Path) -> "PreparedMarket":
        d = Path(directory)
        houses = sorted(ingest_houses(d / "houses.csv"), key=lambda h: h.house_id)
        specs = load_meta_structures(d / "meta_structures.json")
        partition = SubgraphPartition.load(d / "partition.json")
        with np.load(d / "market.npz") as z:
            n = len(houses)
            adjacency = sp.csr_matrix((z["adj_val"], (z["adj_row"], z["adj_col"])), shape=(n, n))
            edges = [
                SubgraphEdges(len(s), z[f"edges{i}_rows"], z[f"edges{i}_cols"], z[f"edges{i}_features"])
                for i, s in enumerate(partition.subgraphs)
            ]
            X = z["X"]
        return cls(houses, specs, adjacency, X, partition, edges)


def subgraph_edges(stack: SimilarityStack, A: sp.csr_matrix, partition: SubgraphPartition) -> list[SubgraphEdges]:
    """Local edge lists of every subgraph with their per-spec similarity terms."""
    out = []
    for i, idx in enumerate(partition.subgraphs):
        sub = partition.sub_adjacency(A, i).tocoo()
        order = np.lexsort((sub.col, sub.row))
        rows, cols = sub.row[order].astype(np.int64), sub.col[order].astype(np.int64)
        feats = stack.edge_features(idx[rows], idx[cols])
        out.append(SubgraphEdges(len(idx), rows, cols, feats))
    return out


def build_market(houses: Sequence[HouseRecord], cfg: BuildConfig | None = None,
                 specs: Sequence[MetaStructureSpec] | None = None) -> PreparedMarket:
    """HIN, meta-structure similarity graph, PCA attributes and the partition."""
    cfg = cfg or BuildConfig()
    houses = sorted(houses, key=lambda h: h.house_id)
    g = build_hin(houses)
    if specs is None:
        specs = enumerate_meta_structures(MetaSchemaConfig(graph_mode=cfg.graph_mode))
    stack = SimilarityStack.from_hin(g, specs)
    A = compose_adjacency(stack, top_k=cfg.top_k)
    attrs: AttributeMatrix = pca_fit_transform(encode_raw(houses), cfg.embed_dim)
    partition = partition_overlapping(A, houses, cfg.target_size, cfg.overlap_fraction, cfg.overlap_mode)
    return PreparedMarket(list(houses), list(specs), A, attrs.X, partition, subgraph_edges(stack, A, partition))


def save_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
