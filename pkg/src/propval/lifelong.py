"""Month-by-month training of windowed GCN-LSTM replicas.

Each month owns a replica of the per-subgraph GCN and LSTM parameters.  The
task for month ``t`` unrolls the last ``n`` replicas, starting from the
frozen embeddings left behind by the replica just outside the window, and
minimizes the window loss

    (1/n) * (L_t + sum_i lambda_i * L_{t-i}),   L_s = RMSE_s + overlap distance_s

with Adam over the window replicas, the meta-structure weights and the head.
Replicas that have slid out of the window are never touched again.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .adam import AdamState
from .autodiff import Tape, Tensor
from .checkpoint import CheckpointError, CheckpointVersionError, read_container, write_container
from .data import PriceScaler, TransactionEvent, fit_scaler
from .model import (
    GcnUnit,
    LstmUnit,
    MlpHead,
    adjacency_from_omega,
    gcn_forward,
    lstm_step,
    predict_prices,
)
from .partition import SubgraphPartition

ABLATIONS = ("full", "no-lstm", "no-gcn")


class EmptyLabelError(ValueError):
    pass


@dataclass
class LifelongConfig:
    window: int = 6
    epochs: int = 30
    embed_dim: int = 16
    gcn_hidden: int = 16
    lstm_hidden: int = 32
    head_hidden: int = 16
    lr: float = 1e-3
    ablation: str = "full"
    regularization: bool = True
    inherit: bool = True
    lambdas: tuple[float, ...] | None = None
    static_skip: bool = True                # attributes re-enter every month's unit
    distance_weight: float | None = None   # None: 1 / number of overlapping houses
    seed: int = 0

    def validate(self) -> None:
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.lambdas is not None:
            check_lambdas(self.lambdas, self.window)

    def initial_lambdas(self) -> np.ndarray:
        if self.lambdas is not None:
            return np.asarray(self.lambdas, dtype=np.float64)
        return np.full(self.window - 1, 0.5)

    @property
    def uses_gcn(self) -> bool:
        return self.ablation != "no-gcn"

    @property
    def uses_lstm(self) -> bool:
        return self.ablation != "no-lstm"


def check_lambdas(lam, n: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (n - 1,):
        raise ValueError(f"lambda must have length {n - 1}, got shape {lam.shape}")
    if np.any(~np.isfinite(lam)) or np.any(lam < 0) or np.any(lam > 1):
        raise ValueError(f"lambda entries must lie in [0, 1], got {lam.tolist()}")
    return lam


# -- losses -----------------------------------------------------------------


def _any_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _check_pair(pred, labels) -> int:
    n_pred, n_lab = np.shape(pred)[0] if np.ndim(pred) else 1, len(labels)
    if n_lab == 0:
        raise EmptyLabelError("no labeled transactions this month")
    if n_pred != n_lab:
        raise ad.ShapeError(f"{n_pred} predictions for {n_lab} labels")
    return n_lab


def rmse(pred, labels):
    """Root mean squared error over the labeled houses only."""
    _check_pair(pred.data if isinstance(pred, Tensor) else pred, labels)
    if _any_tensor(pred, labels):
        return ad.sqrt(ad.mean(ad.square(ad.sub(pred, labels))))
    d = np.asarray(pred, dtype=np.float64) - np.asarray(labels, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


def mae(pred, labels) -> float:
    p = pred.data if isinstance(pred, Tensor) else pred
    _check_pair(p, labels)
    return float(np.mean(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(labels, dtype=np.float64))))


def overlap_difference(partition: SubgraphPartition) -> sp.csr_matrix:
    """Rows map stacked subgraph embeddings to (first copy - mean of other copies)."""
    offsets = np.cumsum([0] + [len(s) for s in partition.subgraphs])
    r, c, v = [], [], []
    for k, (h, subs) in enumerate(sorted(partition.overlap.items())):
        for pos, i in enumerate(subs):
            local = int(np.searchsorted(partition.subgraphs[i], h))
            r.append(k)
            c.append(offsets[i] + local)
            v.append(1.0 if pos == 0 else -1.0 / (len(subs) - 1))
    return sp.csr_matrix((v, (r, c)), shape=(len(partition.overlap), offsets[-1]))


def distance_regularization(partition: SubgraphPartition, embeddings: Sequence, diff=None):
    """Sum over shared houses of the distance between their first-subgraph
    embedding and the mean of their other copies."""
    if not partition.overlap:
        return Tensor(0.0) if _any_tensor(*embeddings) else 0.0
    diff = overlap_difference(partition) if diff is None else diff
    if _any_tensor(*embeddings):
        gaps = ad.sparse_matmul(diff, ad.concat_rows(list(embeddings)))
        return ad.sum(ad.row_norm(gaps))
    stacked = np.concatenate([np.asarray(e, dtype=np.float64) for e in embeddings])
    gaps = np.asarray(diff @ stacked)
    return float(np.sqrt((gaps * gaps).sum(axis=1)).sum())


def task_loss(r, eps):
    """Single-month loss: prediction RMSE plus overlap distance."""
    return ad.add(r, eps) if _any_tensor(r, eps) else float(r) + float(eps)


def lifelong_loss(losses: Sequence, lam, n: int):
    """Window loss; ``losses[0]`` is the current month, ``losses[i]`` month t-i."""
    lam = check_lambdas(lam, n)
    if not 1 <= len(losses) <= n:
        raise ValueError(f"expected between 1 and {n} monthly losses, got {len(losses)}")
    if _any_tensor(*losses):
        total = ad.as_tensor(losses[0])
        for i in range(1, len(losses)):
            total = ad.add(total, ad.scale(losses[i], lam[i - 1]))
        return ad.scale(total, 1.0 / n)
    total = float(losses[0])
    for i in range(1, len(losses)):
        total += lam[i - 1] * float(losses[i])
    return total / n


# -- state ------------------------------------------------------------------


class Replica:
    """One month's GCN and LSTM parameters for every subgraph."""

    def __init__(self, month: int, n_sub: int, cfg: LifelongConfig, rng: np.random.Generator | None):
        self.month = month
        d = cfg.embed_dim
        side = d if cfg.static_skip else 0
        self.gcn: list[GcnUnit | None] = []
        self.lstm: list[LstmUnit | None] = []
        for i in range(n_sub):
            # the attributes join the LSTM input when there is an LSTM, else the GCN input
            self.gcn.append(
                GcnUnit(d, cfg.gcn_hidden, d, rng, prefix=f"m{month}.s{i}.gcn",
                        static_dim=0 if cfg.uses_lstm else side)
                if cfg.uses_gcn else None
            )
            self.lstm.append(
                LstmUnit(d, cfg.lstm_hidden, rng, prefix=f"m{month}.s{i}.lstm", static_dim=side)
                if cfg.uses_lstm else None
            )

    def params(self) -> list[Tensor]:
        out = []
        for g, l in zip(self.gcn, self.lstm):
            if g is not None:
                out += g.params()
            if l is not None:
                out += l.params()
        return out

    def clone(self, month: int) -> "Replica":
        new = copy.deepcopy(self)
        new.month = month
        for p in new.params():
            p.name = f"m{month}." + p.name.split(".", 1)[1]
            p.grad.fill(0.0)
        return new


@dataclass
class ModelState:
    omega: Tensor
    heads: list[MlpHead]
    replicas: dict[int, Replica]
    embeddings: dict[int, list[np.ndarray]]
    lam: np.ndarray
    month: int = 0


@dataclass
class TaskResult:
    month: int
    losses: list[float]
    epochs_run: int
    reached_target: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


@dataclass
class _Labels:
    idx: np.ndarray
    y: np.ndarray


class _Assembler:
    """Maps per-subgraph rows onto a set of houses, averaging shared copies."""

    def __init__(self, idx: np.ndarray, partition: SubgraphPartition, local: list[np.ndarray]):
        self.idx = idx
        self.rows = []
        targets = []
        for i in range(partition.j):
            loc = local[i][idx]
            keep = np.flatnonzero(loc >= 0)
            self.rows.append(loc[keep])
            targets.append(keep)
        tgt = np.concatenate(targets)
        counts = np.bincount(tgt, minlength=len(idx)).astype(np.float64)
        self.avg = sp.csr_matrix(
            (1.0 / counts[tgt], (tgt, np.arange(len(tgt)))), shape=(len(idx), len(tgt))
        )

    def gather(self, embeddings: Sequence) -> list:
        return [ad.gather(e, r) for e, r in zip(embeddings, self.rows)]


class LifelongTrainer:
    """Owns the model state for one prepared market and runs monthly tasks."""

    def __init__(self, X: np.ndarray, partition: SubgraphPartition, edges: Sequence,
                 transactions: Sequence[TransactionEvent], house_ids: Sequence[str],
                 cfg: LifelongConfig | None = None, scaler: PriceScaler | None = None,
                 n_specs: int | None = None):
        self.cfg = cfg or LifelongConfig()
        self.cfg.validate()
        self.X = np.asarray(X, dtype=np.float64)
        if self.X.shape[1] != self.cfg.embed_dim:
            raise ValueError(
                f"attribute width {self.X.shape[1]} must equal embed_dim {self.cfg.embed_dim} "
                "so each month's embedding can seed the next"
            )
        self.partition = partition
        self.edges = list(edges)
        self.house_ids = list(house_ids)
        self.index = {h: k for k, h in enumerate(self.house_ids)}
        n = len(self.house_ids)
        self.local = []
        for s in partition.subgraphs:
            loc = np.full(n, -1, dtype=np.int64)
            loc[s] = np.arange(len(s))
            self.local.append(loc)
        self.diff = overlap_difference(partition)
        self._static = [self.X[s] for s in partition.subgraphs]
        if self.cfg.distance_weight is not None:
            self.distance_weight = float(self.cfg.distance_weight)
        else:
            self.distance_weight = 1.0 / max(1, len(partition.overlap))
        self.all_houses = _Assembler(np.arange(n), partition, self.local)

        self.transactions = list(transactions)
        if scaler is None:
            scaler = fit_scaler([e.price for e in self.transactions])
        self.scaler = scaler
        by_month: dict[int, list[tuple[int, float]]] = {}
        for e in self.transactions:
            by_month.setdefault(e.month_index, []).append((self.index[e.house_id], e.price))
        self.labels: dict[int, _Labels] = {}
        self._assemblers: dict[int, _Assembler] = {}
        for m, rows in by_month.items():
            rows.sort()
            idx = np.array([r[0] for r in rows], dtype=np.int64)
            self.labels[m] = _Labels(idx, np.asarray(self.scaler.forward([r[1] for r in rows])))
            self._assemblers[m] = _Assembler(idx, partition, self.local)

        m_specs = n_specs if n_specs is not None else (self.edges[0].features.shape[1] if self.edges else 1)
        rng = np.random.default_rng([self.cfg.seed, 0, 2])
        n_heads = 1 if self.cfg.regularization else partition.j
        heads = [
            MlpHead(self.cfg.embed_dim, self.cfg.head_hidden, rng, prefix=f"head{k}", out_bias=0.5)
            for k in range(n_heads)
        ]
        self.state = ModelState(
            omega=Tensor(np.zeros(m_specs), requires_grad=True, name="omega"),
            heads=heads,
            replicas={},
            embeddings={},
            lam=self.cfg.initial_lambdas(),
        )
        self.adam = AdamState(lr=self.cfg.lr)

    # -- structure --

    @property
    def n(self) -> int:
        return self.cfg.window

    def window_months(self, t: int) -> list[int]:
        return list(range(max(1, t - self.n + 1), t + 1))

    def window_params(self, t: int) -> list[Tensor]:
        out = []
        for s in self.window_months(t):
            out += self.state.replicas[s].params()
        if self.cfg.uses_gcn:
            out.append(self.state.omega)
        for h in self.state.heads:
            out += h.params()
        return out

    def omega_weights(self) -> np.ndarray:
        return ad.softmax(Tensor(self.state.omega.data)).data

    def set_lambdas(self, lam) -> None:
        self.state.lam = check_lambdas(lam, self.n).copy()

    def _new_replica(self, month: int) -> Replica:
        rng = np.random.default_rng([self.cfg.seed, month, 1])
        return Replica(month, self.partition.j, self.cfg, rng)

    def advance_month(self, month: int | None = None) -> Replica:
        """Add the replica for the next month, inherited or freshly initialized."""
        month = self.state.month + 1 if month is None else month
        if month != self.state.month + 1:
            raise ValueError(f"cannot advance from month {self.state.month} to {month}")
        prev = self.state.replicas.get(month - 1)
        if self.cfg.inherit and prev is not None:
            rep = prev.clone(month)
        else:
            rep = self._new_replica(month)
        self.state.replicas[month] = rep
        self.state.month = month
        return rep

    # -- forward --

    def _boundary(self, t: int) -> list[np.ndarray]:
        s0 = self.window_months(t)[0]
        if s0 - 1 >= 1 and (s0 - 1) in self.state.embeddings:
            return self.state.embeddings[s0 - 1]
        return [self.X[s] for s in self.partition.subgraphs]

    def _adjacencies(self):
        if not self.cfg.uses_gcn:
            return None
        w = ad.softmax(self.state.omega)
        return [adjacency_from_omega(e, w) for e in self.edges]

    def unroll(self, t: int) -> dict[int, list[Tensor]]:
        """Per-month, per-subgraph embeddings over the window ending at ``t``."""
        adj = self._adjacencies()
        h0 = [Tensor(b) for b in self._boundary(t)]
        out = {}
        for s in self.window_months(t):
            rep = self.state.replicas[s]
            hs = []
            for i in range(self.partition.j):
                static = self._static[i] if self.cfg.static_skip else None
                if self.cfg.uses_gcn:
                    x = gcn_forward(rep.gcn[i], adj[i], h0[i], None if self.cfg.uses_lstm else static)
                else:
                    x = h0[i]
                if self.cfg.uses_lstm:
                    # one cell step per month from a zero state; memory travels through the hand-off
                    x, _ = lstm_step(rep.lstm[i], x, static=static)
                hs.append(x)
            out[s] = hs
            h0 = hs
        return out

    def _predict_rows(self, asm: _Assembler, hs: Sequence[Tensor]) -> Tensor:
        parts = asm.gather(hs)
        if len(self.state.heads) == 1:
            z = ad.sparse_matmul(asm.avg, ad.concat_rows(parts))
            return predict_prices(self.state.heads[0], z)
        preds = [predict_prices(h, p) for h, p in zip(self.state.heads, parts)]
        return ad.sparse_matmul(asm.avg, ad.concat_rows(preds))

    def month_loss(self, s: int, hs: Sequence[Tensor]):
        """(RMSE, overlap distance) for month ``s``; RMSE is 0 when it has no sales."""
        lab = self.labels.get(s)
        r = rmse(self._predict_rows(self._assemblers[s], hs), lab.y) if lab is not None else Tensor(0.0)
        if self.cfg.regularization:
            eps = ad.scale(distance_regularization(self.partition, hs, self.diff), self.distance_weight)
        else:
            eps = Tensor(0.0)
        return r, eps

    def loss(self, t: int) -> Tensor:
        emb = self.unroll(t)
        losses = []
        for s in reversed(self.window_months(t)):
            r, eps = self.month_loss(s, emb[s])
            losses.append(task_loss(r, eps))
        return lifelong_loss(losses, self.state.lam, self.n)

    def backward(self, t: int) -> float:
        """Accumulate window-loss gradients without stepping; returns the loss."""
        with Tape() as tape:
            L = self.loss(t)
            tape.backward(L)
        return L.item()

    # -- training --

    def train_task(self, t: int, epochs: int | None = None, target_loss: float | None = None) -> TaskResult:
        if t != self.state.month:
            raise ValueError(f"task {t} requested but the newest replica is month {self.state.month}")
        if not any(s in self.labels for s in self.window_months(t)):
            raise EmptyLabelError(f"no labeled transactions in the window ending at month {t}")
        epochs = self.cfg.epochs if epochs is None else epochs
        params = self.window_params(t)
        losses = []
        reached = False
        for _ in range(epochs):
            value = self.backward(t)
            losses.append(value)
            if target_loss is not None and value <= target_loss:
                for p in params:
                    p.zero_grad()
                reached = True
                break
            self.adam.step(params)
        self.refresh_embeddings(t)
        return TaskResult(t, losses, len(losses), reached)

    def refresh_embeddings(self, t: int) -> None:
        emb = self.unroll(t)
        for s, hs in emb.items():
            self.state.embeddings[s] = [h.data for h in hs]

    def evaluate_loss(self, t: int) -> float:
        return float(self.loss(t).item())

    def predict(self, t: int, houses: np.ndarray | None = None) -> np.ndarray:
        """Normalized predicted prices at month ``t`` (all houses by default)."""
        hs = self.unroll(t)[t]
        asm = self.all_houses if houses is None else _Assembler(np.asarray(houses), self.partition, self.local)
        return self._predict_rows(asm, hs).data.copy()

    def overlap_distance(self, t: int) -> float:
        hs = self.unroll(t)[t]
        return distance_regularization(self.partition, [h.data for h in hs], self.diff)

    def predict_raw(self, t: int) -> np.ndarray:
        return self.scaler.inverse(self.predict(t))

    def clone(self) -> "LifelongTrainer":
        return copy.deepcopy(self)

    def snapshot(self):
        """Detached copy of the mutable training state (parameters, caches, Adam moments)."""
        return copy.deepcopy((self.state, self.adam))

    def restore(self, snap) -> None:
        self.state, self.adam = copy.deepcopy(snap)


@dataclass
class MonthRecord:
    month: int
    train_loss: float
    test_rmse: float
    test_mae: float
    n_test: int


@dataclass
class RunResult:
    log: list[MonthRecord]
    predictions: dict[int, np.ndarray]            # normalized, all houses
    tests: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)  # idx, raw price
    task_results: dict[int, TaskResult] = field(default_factory=dict)

    def mean_rmse(self, last: int | None = None) -> float:
        rows = [r for r in self.log if r.n_test > 0]
        if last is not None:
            rows = rows[-last:]
        return float(np.mean([r.test_rmse for r in rows]))

    def pooled_rmse(self, last: int | None = None) -> float:
        rows = [r for r in self.log if r.n_test > 0]
        if last is not None:
            rows = rows[-last:]
        se = sum(r.test_rmse ** 2 * r.n_test for r in rows)
        return float(np.sqrt(se / sum(r.n_test for r in rows)))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("month,train_loss,test_rmse,test_mae\n")
            for r in self.log:
                fh.write(f"{r.month},{r.train_loss!r},{r.test_rmse!r},{r.test_mae!r}\n")


def run_lifelong(trainer: LifelongTrainer, t0: int, T: int, warmup_epochs: int | None = None) -> RunResult:
    """Warm up on months before ``t0``, then for each month predict, score and train."""
    if t0 - 1 < trainer.n:
        raise ValueError(f"need at least {trainer.n} months of history before t0={t0}")
    if T < t0:
        raise ValueError(f"T={T} precedes t0={t0}")
    result = RunResult([], {})
    for t in range(1, t0):
        trainer.advance_month(t)
        if any(s in trainer.labels for s in trainer.window_months(t)):
            result.task_results[t] = trainer.train_task(t, epochs=warmup_epochs)
        else:
            trainer.refresh_embeddings(t)
    for t in range(t0, T + 1):
        trainer.advance_month(t)
        pred = trainer.predict(t)
        result.predictions[t] = pred
        lab = trainer.labels.get(t)
        if lab is not None:
            test_rmse, test_mae, n_test = rmse(pred[lab.idx], lab.y), mae(pred[lab.idx], lab.y), len(lab.idx)
            result.tests[t] = (lab.idx, trainer.scaler.inverse(lab.y))
            task = trainer.train_task(t)
            train_loss = task.final_loss
            result.task_results[t] = task
        else:
            test_rmse = test_mae = float("nan")
            n_test = 0
            trainer.refresh_embeddings(t)
            train_loss = float("nan")
        result.log.append(MonthRecord(t, train_loss, test_rmse, test_mae, n_test))
    return result


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_TAG = "propval-lifelong-1"


def save_checkpoint(trainer: LifelongTrainer, path) -> None:
    """Write omega, lambda, every replica, the head(s), cached embeddings and the scaler.

    Optimizer moments are not stored; a reloaded trainer predicts bit-identically
    but restarts Adam from zero moments when trained further.
    """
    st = trainer.state
    arrays = {"omega": st.omega.data, "lambda": st.lam}
    for head in st.heads:
        for p in head.params():
            arrays[p.name] = p.data
    for m in sorted(st.replicas):
        for p in st.replicas[m].params():
            arrays[p.name] = p.data
    for m in sorted(st.embeddings):
        for i, e in enumerate(st.embeddings[m]):
            arrays[f"emb{m}.s{i}"] = e
    cfg = asdict(trainer.cfg)
    cfg["lambdas"] = None if cfg["lambdas"] is None else list(cfg["lambdas"])
    meta = {
        "tag": CHECKPOINT_TAG,
        "month": st.month,
        "config": cfg,
        "scaler": {"kind": trainer.scaler.kind, "min": trainer.scaler.min, "max": trainer.scaler.max},
        "partition_hash": trainer.partition.manifest_hash(),
        "replica_months": sorted(st.replicas),
        "embedding_months": sorted(st.embeddings),
        "n_specs": int(st.omega.data.shape[0]),
    }
    write_container(path, arrays, meta)


def load_checkpoint(path, X, partition: SubgraphPartition, edges, transactions, house_ids) -> LifelongTrainer:
    """Rebuild a trainer from a checkpoint; the partition must match the saved one."""
    arrays, meta = read_container(path)
    if meta.get("tag") != CHECKPOINT_TAG:
        raise CheckpointVersionError(f"checkpoint tag {meta.get('tag')!r}, expected {CHECKPOINT_TAG!r}")
    if meta["partition_hash"] != partition.manifest_hash():
        raise CheckpointError("partition hash mismatch: checkpoint was trained on a different partition")
    cfg_doc = dict(meta["config"])
    if cfg_doc.get("lambdas") is not None:
        cfg_doc["lambdas"] = tuple(cfg_doc["lambdas"])
    cfg = LifelongConfig(**cfg_doc)
    sc = meta["scaler"]
    trainer = LifelongTrainer(X, partition, edges, transactions, house_ids, cfg,
                              PriceScaler(sc["min"], sc["max"], sc["kind"]), n_specs=meta["n_specs"])
    st = trainer.state

    def fill(p: Tensor) -> None:
        a = arrays.get(p.name)
        if a is None or a.shape != p.data.shape:
            raise CheckpointError(f"checkpoint lacks array {p.name!r} of shape {p.data.shape}")
        p.data[...] = a

    fill(st.omega)
    st.lam = arrays["lambda"].copy()
    for head in st.heads:
        for p in head.params():
            fill(p)
    for m in meta["replica_months"]:
        rep = Replica(m, partition.j, cfg, None)
        for p in rep.params():
            fill(p)
        st.replicas[m] = rep
    for m in meta["embedding_months"]:
        st.embeddings[m] = [arrays[f"emb{m}.s{i}"] for i in range(partition.j)]
    st.month = int(meta["month"])
    return trainer
