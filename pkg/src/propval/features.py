"""House attribute matrix: one-hot facilities + scaled numerics, reduced by PCA."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import FACILITY_CATEGORIES, FINANCIAL_FIELDS, FLOORPLAN_FIELDS, HouseRecord


def raw_columns() -> list[str]:
    cols = [f"{cat}={v}" for cat, vals in FACILITY_CATEGORIES.items() for v in vals]
    return cols + list(FLOORPLAN_FIELDS) + list(FINANCIAL_FIELDS)


def encode_raw(houses: Sequence[HouseRecord], log_financial: bool = True) -> np.ndarray:
    """Rows follow ``houses`` order, columns follow :func:`raw_columns`.

    Facility categories become one-hot blocks sized by their enumeration;
    numerics are z-scored (constant columns become 0).  Financial columns are
    log-transformed first when ``log_financial`` is set since they are prices.
    """
    n = len(houses)
    blocks = []
    for cat, vals in FACILITY_CATEGORIES.items():
        pos = {v: k for k, v in enumerate(vals)}
        b = np.zeros((n, len(vals)))
        b[np.arange(n), [pos[h.facilities[cat]] for h in houses]] = 1.0
        blocks.append(b)
    num = np.array(
        [[h.floorplan[f] for f in FLOORPLAN_FIELDS] + [h.financial[f] for f in FINANCIAL_FIELDS] for h in houses],
        dtype=np.float64,
    ).reshape(n, len(FLOORPLAN_FIELDS) + len(FINANCIAL_FIELDS))
    if log_financial:
        num[:, len(FLOORPLAN_FIELDS):] = np.log1p(num[:, len(FLOORPLAN_FIELDS):])
    if n:
        sd = num.std(axis=0)
        num = np.where(sd > 0, (num - num.mean(axis=0)) / np.where(sd > 0, sd, 1.0), 0.0)
    blocks.append(num)
    return np.hstack(blocks)


class RankError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeMatrix:
    X: np.ndarray            # (N, D)
    mean: np.ndarray         # (raw width,)
    components: np.ndarray   # (raw width, D), orthonormal columns
    eigenvalues: np.ndarray  # full spectrum, descending

    @property
    def D(self) -> int:
        return self.components.shape[1]

    @property
    def explained_variance(self) -> np.ndarray:
        return self.eigenvalues[: self.D]

    def project(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw) - self.mean) @ self.components

    def reconstruct(self, X: np.ndarray | None = None) -> np.ndarray:
        """Centered raw data recovered from the reduced coordinates."""
        return (self.X if X is None else X) @ self.components.T

    def export(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / "attributes.txt", self.X)
        np.savetxt(d / "pca_basis.txt", self.components)
        np.savetxt(d / "pca_mean.txt", self.mean)


def pca_fit_transform(raw: np.ndarray, D: int) -> AttributeMatrix:
    raw = np.asarray(raw, dtype=np.float64)
    n, w = raw.shape
    if D < 1 or D > w or D > n:
        raise ValueError(f"D={D} needs 1 <= D <= min(rows={n}, columns={w})")
    mean = raw.mean(axis=0)
    centered = raw - mean
    rank = int(np.linalg.matrix_rank(centered))
    if D > rank:
        raise RankError(f"D={D} exceeds the achievable rank {rank} of the centered data")
    cov = centered.T @ centered / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    basis = vecs[:, :D].copy()
    # sign convention: largest-magnitude entry of each component is positive
    lead = np.argmax(np.abs(basis), axis=0)
    basis *= np.sign(basis[lead, np.arange(D)])
    return AttributeMatrix(centered @ basis, mean, basis, np.clip(vals, 0.0, None))
