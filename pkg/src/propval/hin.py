"""Heterogeneous information network over houses, meta-structure counting and
weighted house-to-house similarity.

Every meta-path used here is a palindrome ``H-...-X-...-H``, so its count
matrix factors as ``C = L @ L.T`` with ``L`` the product of typed adjacency
matrices from House to the middle type.  Meta-graphs are conjunctions of
paths; their counts are Hadamard products of the constituent path counts.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

from .data import FACILITY_CATEGORIES, FACILITY_SYMBOLS, HouseRecord

GEO_TYPES = ("P", "F", "C", "M")
GEO_NAMES = {"H": "House", "P": "Postal", "F": "FSA", "C": "Community", "M": "Municipality"}
NODE_TYPES = ("H",) + GEO_TYPES + tuple(FACILITY_SYMBOLS.values())
_GEO_FIELD = {"P": "postal", "F": "fsa", "C": "community", "M": "municipality"}

SCHEMA_EDGES = frozenset(
    {("H", "P"), ("P", "F"), ("F", "C"), ("C", "M")}
    | {("H", s) for s in FACILITY_SYMBOLS.values()}
)


def _schema_edge(a: str, b: str) -> bool:
    return (a, b) in SCHEMA_EDGES or (b, a) in SCHEMA_EDGES


class MetaStructureError(ValueError):
    pass


class HinGraph:
    """Typed nodes plus one sparse 0/1 incidence matrix per schema edge type.

    Node labels within a type are sorted, houses by ``house_id``.
    """

    def __init__(self, houses: Sequence[HouseRecord]):
        houses = sorted(houses, key=lambda h: h.house_id)
        self.house_ids = [h.house_id for h in houses]
        self.house_index = {hid: i for i, hid in enumerate(self.house_ids)}
        labels: dict[str, list[str]] = {"H": self.house_ids}
        for t, f in _GEO_FIELD.items():
            labels[t] = sorted({getattr(h, f) for h in houses})
        for cat, sym in FACILITY_SYMBOLS.items():
            labels[sym] = sorted({h.facilities[cat] for h in houses})
        self.nodes = labels
        self.index = {t: {lab: k for k, lab in enumerate(v)} for t, v in labels.items()}

        pairs: dict[tuple[str, str], set[tuple[int, int]]] = {e: set() for e in SCHEMA_EDGES}
        for h in houses:
            hi = self.house_index[h.house_id]
            chain = [("H", hi)] + [(t, self.index[t][getattr(h, _GEO_FIELD[t])]) for t in GEO_TYPES]
            for (ta, ia), (tb, ib) in zip(chain, chain[1:]):
                pairs[(ta, tb)].add((ia, ib))
            for cat, sym in FACILITY_SYMBOLS.items():
                pairs[("H", sym)].add((hi, self.index[sym][h.facilities[cat]]))
        self._adj: dict[tuple[str, str], sp.csr_matrix] = {}
        for (a, b), es in pairs.items():
            es = sorted(es)
            r = np.array([e[0] for e in es], dtype=np.int64)
            c = np.array([e[1] for e in es], dtype=np.int64)
            m = sp.csr_matrix(
                (np.ones(len(es)), (r, c)), shape=(len(labels[a]), len(labels[b]))
            )
            self._adj[(a, b)] = m
            self._adj[(b, a)] = m.T.tocsr()

    @property
    def n_houses(self) -> int:
        return len(self.house_ids)

    def node_count(self, node_type: str | None = None) -> int:
        if node_type is not None:
            return len(self.nodes[node_type])
        return sum(len(v) for v in self.nodes.values())

    def edge_count(self, a: str | None = None, b: str | None = None) -> int:
        if a is not None:
            return int(self.adjacency(a, b).nnz)
        return int(sum(self._adj[e].nnz for e in SCHEMA_EDGES))

    def adjacency(self, a: str, b: str) -> sp.csr_matrix:
        if not _schema_edge(a, b):
            raise MetaStructureError(f"no edge type between {a!r} and {b!r}")
        return self._adj[(a, b)]

    def edges(self, a: str, b: str) -> list[tuple[int, int]]:
        coo = self.adjacency(a, b).tocoo()
        return sorted(zip(coo.row.tolist(), coo.col.tolist()))


def build_hin(houses: Sequence[HouseRecord]) -> HinGraph:
    return HinGraph(houses)


@dataclass(frozen=True)
class MetaStructureSpec:
    """A meta-path (``types``) or a conjunctive meta-graph (``constituents``)."""

    name: str
    kind: str
    types: tuple[str, ...] = ()
    constituents: tuple["MetaStructureSpec", ...] = ()

    @property
    def is_geographic(self) -> bool:
        return self.kind == "path" and all(t in ("H",) + GEO_TYPES for t in self.types)

    @property
    def paths(self) -> tuple["MetaStructureSpec", ...]:
        return (self,) if self.kind == "path" else self.constituents


def meta_path(types: str | Sequence[str]) -> MetaStructureSpec:
    seq = tuple(types.split("-")) if isinstance(types, str) else tuple(types)
    for t in seq:
        if t not in NODE_TYPES:
            raise MetaStructureError(f"unknown node type {t!r} in meta-path {'-'.join(seq)}")
    if len(seq) < 3 or seq[0] != "H" or seq[-1] != "H":
        raise MetaStructureError(f"meta-path {'-'.join(seq)} must start and end at H")
    if seq != seq[::-1]:
        raise MetaStructureError(f"meta-path {'-'.join(seq)} is not symmetric")
    for a, b in zip(seq, seq[1:]):
        if not _schema_edge(a, b):
            raise MetaStructureError(f"meta-path {'-'.join(seq)} uses missing edge {a}-{b}")
    return MetaStructureSpec("-".join(seq), "path", types=seq)


def meta_graph(paths: Iterable[MetaStructureSpec | str]) -> MetaStructureSpec:
    parts = tuple(p if isinstance(p, MetaStructureSpec) else meta_path(p) for p in paths)
    if len(parts) < 2:
        raise MetaStructureError("a meta-graph needs at least two constituent paths")
    if any(p.kind != "path" for p in parts):
        raise MetaStructureError("meta-graph constituents must be meta-paths")
    return MetaStructureSpec("+".join(p.name for p in parts), "graph", constituents=parts)


GEOGRAPHIC_PATHS = ("H-P-H", "H-P-F-P-H", "H-P-F-C-F-P-H", "H-P-F-C-M-C-F-P-H")


@dataclass
class MetaSchemaConfig:
    """Which meta-structures to enumerate.

    ``graph_mode`` is one of ``all-pairs`` (every 2-subset of the base paths),
    ``facility-pairs`` (2-subsets of facility paths only) or ``none``.
    """

    geographic: bool = True
    facility_categories: tuple[str, ...] = tuple(FACILITY_CATEGORIES)
    graph_mode: str = "all-pairs"
    max_graphs: int | None = None
    extra_paths: tuple[str, ...] = ()
    extra_graphs: tuple[tuple[str, ...], ...] = ()


def enumerate_meta_structures(cfg: MetaSchemaConfig | None = None) -> list[MetaStructureSpec]:
    cfg = cfg or MetaSchemaConfig()
    geo = [meta_path(p) for p in GEOGRAPHIC_PATHS] if cfg.geographic else []
    for cat in cfg.facility_categories:
        if cat not in FACILITY_SYMBOLS:
            raise MetaStructureError(f"unknown facility category {cat!r}")
    fac = [meta_path(("H", FACILITY_SYMBOLS[c], "H")) for c in cfg.facility_categories]
    paths = geo + fac + [meta_path(p) for p in cfg.extra_paths]
    if cfg.graph_mode == "all-pairs":
        pool = geo + fac
    elif cfg.graph_mode == "facility-pairs":
        pool = fac
    elif cfg.graph_mode == "none":
        pool = []
    else:
        raise MetaStructureError(f"unknown graph_mode {cfg.graph_mode!r}")
    graphs = [meta_graph(pair) for pair in itertools.combinations(pool, 2)]
    if cfg.max_graphs is not None:
        graphs = graphs[: cfg.max_graphs]
    graphs += [meta_graph(g) for g in cfg.extra_graphs]
    names = [s.name for s in paths + graphs]
    if len(set(names)) != len(names):
        raise MetaStructureError("duplicate meta-structures in configuration")
    return paths + graphs


def save_meta_structures(specs: Sequence[MetaStructureSpec], path: str | Path) -> None:
    doc = {
        "paths": [s.name for s in specs if s.kind == "path"],
        "graphs": [[p.name for p in s.constituents] for s in specs if s.kind == "graph"],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_meta_structures(path: str | Path) -> list[MetaStructureSpec]:
    """Read ``{"paths": [...], "graphs": [[...], ...]}``; graphs name their paths."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    paths = [meta_path(p) for p in doc.get("paths", [])]
    return paths + [meta_graph(g) for g in doc.get("graphs", [])]


def count_meta_path(g: HinGraph, spec: MetaStructureSpec) -> sp.csr_matrix:
    """Instance counts between every pair of houses (ordered typed product)."""
    if spec.kind != "path":
        raise MetaStructureError(f"{spec.name} is not a meta-path")
    m = g.adjacency(spec.types[0], spec.types[1])
    for a, b in zip(spec.types[1:], spec.types[2:]):
        m = m @ g.adjacency(a, b)
    return m.tocsr()


def count_meta_graph(g: HinGraph, spec: MetaStructureSpec) -> sp.csr_matrix:
    if spec.kind != "graph":
        raise MetaStructureError(f"{spec.name} is not a meta-graph")
    out = count_meta_path(g, spec.constituents[0])
    for p in spec.constituents[1:]:
        out = out.multiply(count_meta_path(g, p)).tocsr()
    return out


def count_meta_structure(g: HinGraph, spec: MetaStructureSpec) -> sp.csr_matrix:
    return count_meta_path(g, spec) if spec.kind == "path" else count_meta_graph(g, spec)


def path_factor(g: HinGraph, spec: MetaStructureSpec) -> sp.csr_matrix:
    """Half-path product ``L`` with ``count_meta_path(g, spec) == L @ L.T``."""
    half = spec.types[: len(spec.types) // 2 + 1]
    m = g.adjacency(half[0], half[1])
    for a, b in zip(half[1:], half[2:]):
        m = m @ g.adjacency(a, b)
    return m.tocsr()


def export_counts(counts: sp.spmatrix, path: str | Path) -> None:
    """Write a count matrix in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(counts), field="integer")


def _pair_key(i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Symmetric pseudo-random tie-break key in [0, 1)."""
    lo = np.minimum(i, j).astype(np.uint64)
    hi = np.maximum(i, j).astype(np.uint64)
    x = (lo * np.uint64(0x9E3779B1) + hi * np.uint64(0x85EBCA77) + np.uint64(0x27D4EB2F)) & np.uint64(0xFFFFFFFF)
    x ^= x >> np.uint64(15)
    x = (x * np.uint64(0x2C1B3C6D)) & np.uint64(0xFFFFFFFF)
    x ^= x >> np.uint64(12)
    return x.astype(np.float64) / 2.0**32


@dataclass
class SimilarityStack:
    """Meta-structures, their per-path factors, and the weight vector omega.

    ``counts(m)`` materializes ``C_m`` on demand; similarity evaluation works
    from the factors so the N x N matrices are never all held at once.
    """

    specs: list[MetaStructureSpec]
    factors: dict[str, sp.csr_matrix]
    omega: np.ndarray
    _diag: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def from_hin(cls, g: HinGraph, specs: Sequence[MetaStructureSpec],
                 omega: np.ndarray | None = None) -> "SimilarityStack":
        specs = list(specs)
        factors = {}
        for s in specs:
            for p in s.paths:
                if p.name not in factors:
                    factors[p.name] = path_factor(g, p)
        if omega is None:
            omega = np.full(len(specs), 1.0 / len(specs))
        stack = cls(specs, factors, np.asarray(omega, dtype=np.float64))
        stack._check_omega()
        return stack

    def _check_omega(self) -> None:
        if self.omega.shape != (len(self.specs),):
            raise ValueError(f"omega has shape {self.omega.shape}, expected ({len(self.specs)},)")
        if not np.all(np.isfinite(self.omega)):
            raise ValueError("omega must be finite")

    def with_omega(self, omega) -> "SimilarityStack":
        out = SimilarityStack(self.specs, self.factors, np.asarray(omega, dtype=np.float64), self._diag)
        out._check_omega()
        return out

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def n_houses(self) -> int:
        return next(iter(self.factors.values())).shape[0]

    def path_diagonal(self, name: str) -> np.ndarray:
        d = self._diag.get(name)
        if d is None:
            f = self.factors[name]
            d = np.asarray(f.multiply(f).sum(axis=1)).ravel()
            self._diag[name] = d
        return d

    def diagonal(self, m: int) -> np.ndarray:
        out = np.ones(self.n_houses)
        for p in self.specs[m].paths:
            out = out * self.path_diagonal(p.name)
        return out

    def counts(self, m: int) -> sp.csr_matrix:
        out = None
        for p in self.specs[m].paths:
            f = self.factors[p.name]
            c = (f @ f.T).tocsr()
            out = c if out is None else out.multiply(c).tocsr()
        return out

    def pair_counts(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """``C_m[rows[e], cols[e]]`` for every edge e and spec m, shape (E, M)."""
        rows, cols = np.asarray(rows), np.asarray(cols)
        per_path = {}
        for name, f in self.factors.items():
            per_path[name] = np.asarray(f[rows].multiply(f[cols]).sum(axis=1)).ravel()
        out = np.empty((len(rows), len(self.specs)))
        for m, s in enumerate(self.specs):
            v = np.ones(len(rows))
            for p in s.paths:
                v = v * per_path[p.name]
            out[:, m] = v
        return out

    def edge_features(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Normalized per-spec terms ``2 C_m(i,j) / (C_m(i,i) + C_m(j,j))``.

        Multiplying by omega gives the similarity of each (row, col) pair.
        """
        rows, cols = np.asarray(rows), np.asarray(cols)
        c = self.pair_counts(rows, cols)
        out = np.zeros_like(c)
        for m in range(len(self.specs)):
            d = self.diagonal(m)
            den = d[rows] + d[cols]
            ok = den > 0
            out[ok, m] = 2.0 * c[ok, m] / den[ok]
        return out

    def similarity_block(self, rows: np.ndarray) -> np.ndarray:
        """Dense similarity of ``rows`` against every house, shape (len(rows), N)."""
        rows = np.asarray(rows)
        path_blocks = {}
        for name, f in self.factors.items():
            path_blocks[name] = (f[rows] @ f.T).toarray()
        sim = np.zeros((len(rows), self.n_houses))
        for m, s in enumerate(self.specs):
            c = None
            for p in s.paths:
                c = path_blocks[p.name] if c is None else c * path_blocks[p.name]
            d = self.diagonal(m)
            den = d[rows][:, None] + d[None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(den > 0, 2.0 * c / den, 0.0)
            sim += self.omega[m] * term
        return sim


def similarity(stack: SimilarityStack, i: int, j: int) -> float:
    """Weighted, self-normalized meta-structure similarity of houses i and j."""
    s = 0.0
    for m, spec in enumerate(stack.specs):
        c = 1.0
        di = dj = 1.0
        for p in spec.paths:
            f = stack.factors[p.name]
            c *= float(f[i].multiply(f[j]).sum())
            d = stack.path_diagonal(p.name)
            di *= d[i]
            dj *= d[j]
        den = di + dj
        term = 2.0 * c / den if den > 0 else 0.0
        s += stack.omega[m] * term
    return s


def compose_adjacency(stack: SimilarityStack, top_k: int = 20, block_size: int = 256) -> sp.csr_matrix:
    """Symmetric top-k similarity graph with zero diagonal.

    Each house keeps its ``top_k`` most similar positive neighbours; the
    union is symmetrized, and where that would push a house above
    ``2 * top_k`` neighbours the weakest incoming choices are dropped.
    Ranking is scale-free in omega and ties are broken by a fixed symmetric
    pseudo-random key, so no low-index house becomes a hub.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    n = stack.n_houses
    k = min(top_k, n - 1)
    scale = float(np.abs(stack.omega).sum()) or 1.0
    cand_i, cand_j, cand_v = [], [], []
    for start in range(0, n, block_size):
        rows = np.arange(start, min(n, start + block_size))
        sim = stack.similarity_block(rows)
        sim[np.arange(len(rows)), rows] = -np.inf
        key = np.round(sim / scale, 9)
        for r, i in enumerate(rows):
            cols = np.arange(n)
            order = np.lexsort((_pair_key(np.full(n, i), cols), -key[r]))[:k]
            order = order[sim[r, order] > 0]
            cand_i.append(np.full(len(order), i))
            cand_j.append(order)
            cand_v.append(sim[r, order])
    if not cand_i or k == 0:
        return sp.csr_matrix((n, n))
    ci = np.concatenate(cand_i)
    cj = np.concatenate(cand_j)
    cv = np.concatenate(cand_v)
    lo, hi = np.minimum(ci, cj), np.maximum(ci, cj)
    # canonical value per unordered pair keeps A bitwise symmetric
    pair = lo * n + hi
    uniq, first = np.unique(pair, return_index=True)
    lo, hi, val = lo[first], hi[first], cv[first]
    order = np.lexsort((_pair_key(lo, hi), -np.round(val / scale, 9)))
    deg = np.zeros(n, dtype=np.int64)
    cap = 2 * top_k
    keep = np.zeros(len(order), dtype=bool)
    for e in order:
        a, b = lo[e], hi[e]
        if deg[a] < cap and deg[b] < cap:
            keep[e] = True
            deg[a] += 1
            deg[b] += 1
    lo, hi, val = lo[keep], hi[keep], val[keep]
    a = sp.coo_matrix(
        (np.concatenate([val, val]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
        shape=(n, n),
    )
    return a.tocsr()
