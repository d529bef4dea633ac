"""House records, transaction streams, price scaling and a synthetic market.

The facility enumerations below are the abbreviation tables used throughout
the package; CSV files must use exactly these codes.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

FACILITY_CATEGORIES: dict[str, tuple[str, ...]] = {
    "building_type": ("TH", "DE", "SDE", "DU", "TR", "FO", "CO", "LI", "RR", "OT"),
    "layout": ("BA", "BU", "ONS", "TNS", "TWS", "THS", "SS", "OT"),
    "garage": ("A", "B", "C", "D"),
    "exterior": ("AS", "BR", "CO", "MS", "SH", "ST", "VS", "WO"),
    "pool": ("AG", "ID", "IG", "NO"),
    "heat_source": ("EL", "GA", "OI", "OT"),
    "heat_equipment": ("BB", "FC", "FA", "HP", "RA", "WA"),
    "basement": ("CS", "SE", "FU", "HA", "FI", "UF", "PF", "NO"),
}

# node-type symbol of each facility category inside the HIN
FACILITY_SYMBOLS: dict[str, str] = {
    "building_type": "BT",
    "layout": "LS",
    "garage": "GT",
    "exterior": "EW",
    "pool": "PT",
    "heat_source": "HS",
    "heat_equipment": "HE",
    "basement": "BS",
}

FLOORPLAN_FIELDS = (
    "bedrooms",
    "washrooms",
    "family_rooms",
    "kitchens",
    "basement_rooms",
    "area",
    "land_width",
    "land_depth",
    "stoves",
    "ac",
    "parking",
)
FINANCIAL_FIELDS = ("tax", "comm_avg", "fsa_avg", "comm_type_avg", "fsa_type_avg")
GEO_FIELDS = ("postal", "fsa", "community", "municipality")

HOUSE_HEADER = (
    ("house_id",) + GEO_FIELDS + tuple(FACILITY_CATEGORIES) + FLOORPLAN_FIELDS + FINANCIAL_FIELDS
)
TRANSACTION_HEADER = ("house_id", "month_index", "price")


class IngestError(ValueError):
    pass


class HierarchyError(IngestError):
    pass


class DuplicateTransactionWarning(UserWarning):
    def __init__(self, count: int):
        super().__init__(f"{count} duplicate (house, month) transaction(s); kept the last")
        self.count = count


@dataclass(frozen=True)
class HouseRecord:
    house_id: str
    postal: str
    fsa: str
    community: str
    municipality: str
    facilities: dict[str, str]
    floorplan: dict[str, float]
    financial: dict[str, float]

    def validate(self) -> None:
        if not self.house_id:
            raise IngestError("empty house_id")
        for f in GEO_FIELDS:
            if not getattr(self, f):
                raise IngestError(f"house {self.house_id}: field '{f}' is empty")
        for cat, allowed in FACILITY_CATEGORIES.items():
            v = self.facilities.get(cat)
            if v not in allowed:
                raise IngestError(
                    f"house {self.house_id}: field '{cat}' has value {v!r} not in {allowed}"
                )
        for group, names in ((self.floorplan, FLOORPLAN_FIELDS), (self.financial, FINANCIAL_FIELDS)):
            for f in names:
                x = group.get(f)
                if x is None or not math.isfinite(x) or x < 0:
                    raise IngestError(f"house {self.house_id}: field '{f}' must be a non-negative number")

    def as_row(self) -> dict[str, str]:
        row = {"house_id": self.house_id}
        row.update({f: getattr(self, f) for f in GEO_FIELDS})
        row.update(self.facilities)
        row.update({k: repr(float(v)) for k, v in self.floorplan.items()})
        row.update({k: repr(float(v)) for k, v in self.financial.items()})
        return row


@dataclass(frozen=True)
class TransactionEvent:
    house_id: str
    month_index: int
    price: float


@dataclass
class GeoHierarchy:
    """postal -> fsa -> community -> municipality lookup tables."""

    postal_fsa: dict[str, str] = field(default_factory=dict)
    fsa_community: dict[str, str] = field(default_factory=dict)
    community_municipality: dict[str, str] = field(default_factory=dict)

    @property
    def postals(self) -> list[str]:
        return sorted(self.postal_fsa)


def build_hierarchy(houses: Sequence[HouseRecord], row_numbers: Sequence[int] | None = None) -> GeoHierarchy:
    """Build the geographic tables, rejecting a unit listed under two parents."""
    rows = row_numbers if row_numbers is not None else range(1, len(houses) + 1)
    h = GeoHierarchy()
    seen: dict[tuple[str, str], tuple[str, int]] = {}
    links = (
        ("postal", "fsa", h.postal_fsa),
        ("fsa", "community", h.fsa_community),
        ("community", "municipality", h.community_municipality),
    )
    for house, row in zip(houses, rows):
        for child_f, parent_f, table in links:
            child, parent = getattr(house, child_f), getattr(house, parent_f)
            prev = seen.get((child_f, child))
            if prev is not None and prev[0] != parent:
                raise HierarchyError(
                    f"{child_f} {child!r} belongs to {parent_f} {prev[0]!r} in row {prev[1]} "
                    f"but to {parent!r} in row {row}"
                )
            seen[(child_f, child)] = (parent, row)
            table[child] = parent
    return h


def _parse_float(value: str, row: int, name: str) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise IngestError(f"row {row}: field '{name}' is not a number: {value!r}") from None
    if not math.isfinite(x) or x < 0:
        raise IngestError(f"row {row}: field '{name}' must be a non-negative number, got {value!r}")
    return x


def ingest_houses(path: str | Path) -> list[HouseRecord]:
    """Read and validate ``houses.csv``; row numbers in errors are file lines."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HOUSE_HEADER:
            raise IngestError(f"{path}: header does not match the houses schema")
        houses, lines = [], []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(HOUSE_HEADER):
                raise IngestError(f"row {lineno}: expected {len(HOUSE_HEADER)} fields, got {len(raw)}")
            rec = dict(zip(HOUSE_HEADER, (v.strip() for v in raw)))
            for f in ("house_id",) + GEO_FIELDS:
                if not rec[f]:
                    raise IngestError(f"row {lineno}: field '{f}' is empty")
            for cat, allowed in FACILITY_CATEGORIES.items():
                if rec[cat] not in allowed:
                    raise IngestError(
                        f"row {lineno}: field '{cat}' has value {rec[cat]!r}, "
                        f"not one of {', '.join(allowed)}"
                    )
            houses.append(
                HouseRecord(
                    house_id=rec["house_id"],
                    postal=rec["postal"],
                    fsa=rec["fsa"],
                    community=rec["community"],
                    municipality=rec["municipality"],
                    facilities={c: rec[c] for c in FACILITY_CATEGORIES},
                    floorplan={f: _parse_float(rec[f], lineno, f) for f in FLOORPLAN_FIELDS},
                    financial={f: _parse_float(rec[f], lineno, f) for f in FINANCIAL_FIELDS},
                )
            )
            lines.append(lineno)
    ids = [h.house_id for h in houses]
    if len(set(ids)) != len(ids):
        raise IngestError(f"{path}: duplicate house_id values")
    build_hierarchy(houses, lines)
    return houses


def ingest_transactions(
    path: str | Path, houses: Sequence[HouseRecord] | set[str], n_months: int | None = None
) -> list[TransactionEvent]:
    """Read ``transactions.csv`` against known houses, sorted by month.

    Duplicate ``(house, month)`` rows keep the last occurrence and raise a
    single :class:`DuplicateTransactionWarning` carrying the count.
    """
    known = {h if isinstance(h, str) else h.house_id for h in houses}
    kept: dict[tuple[str, int], TransactionEvent] = {}
    dupes = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRANSACTION_HEADER:
            raise IngestError(f"{path}: header does not match the transactions schema")
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != 3:
                raise IngestError(f"row {lineno}: expected 3 fields, got {len(raw)}")
            hid, month_s, price_s = (v.strip() for v in raw)
            if hid not in known:
                raise IngestError(f"row {lineno}: unknown house_id {hid!r}")
            try:
                month = int(month_s)
            except ValueError:
                raise IngestError(f"row {lineno}: field 'month_index' is not an integer: {month_s!r}") from None
            if month < 1 or (n_months is not None and month > n_months):
                raise IngestError(f"row {lineno}: field 'month_index' out of range: {month}")
            try:
                price = float(price_s)
            except ValueError:
                raise IngestError(f"row {lineno}: field 'price' is not a number: {price_s!r}") from None
            if not math.isfinite(price) or price <= 0:
                raise IngestError(f"row {lineno}: non-positive price {price_s!r}")
            key = (hid, month)
            if key in kept:
                dupes += 1
                del kept[key]
            kept[key] = TransactionEvent(hid, month, price)
    if dupes:
        warnings.warn(DuplicateTransactionWarning(dupes), stacklevel=2)
    return sorted(kept.values(), key=lambda e: (e.month_index, e.house_id))


def write_houses_csv(houses: Sequence[HouseRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=HOUSE_HEADER, lineterminator="\n")
        w.writeheader()
        for h in houses:
            w.writerow(h.as_row())


def write_transactions_csv(events: Sequence[TransactionEvent], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSACTION_HEADER)
        for e in events:
            w.writerow([e.house_id, e.month_index, repr(float(e.price))])


# -- price scaling ---------------------------------------------------------


class DegenerateScaleError(ValueError):
    pass


@dataclass(frozen=True)
class PriceScaler:
    """log10 followed by min-max onto [0, 1]."""

    min: float
    max: float
    kind: str = "log10-minmax"

    @property
    def _lo(self) -> float:
        return float(np.log10(self.min))

    @property
    def _span(self) -> float:
        return float(np.log10(self.max) - np.log10(self.min))

    def forward(self, prices):
        return (np.log10(np.asarray(prices, dtype=np.float64)) - self._lo) / self._span

    def inverse(self, values):
        return 10.0 ** (np.asarray(values, dtype=np.float64) * self._span + self._lo)


def fit_scaler(prices: Sequence[float]) -> PriceScaler:
    p = np.asarray(prices, dtype=np.float64)
    if p.size == 0:
        raise ValueError("cannot fit a scaler on no prices")
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise ValueError("prices must be positive and finite")
    lo, hi = float(p.min()), float(p.max())
    if lo == hi or np.log10(hi) == np.log10(lo):
        raise DegenerateScaleError("degenerate scale: all prices are equal")
    return PriceScaler(lo, hi)


# -- synthetic market ------------------------------------------------------

TURNOVER_BAND = (0.001, 0.005)


@dataclass
class SyntheticMarketConfig:
    n_municipalities: int = 2
    communities_per_municipality: int = 10
    fsas_per_community: int = 2
    postals_per_fsa: int = 5
    n_houses: int = 2000
    n_months: int = 24
    turnover: float = 0.005
    allow_turnover_override: bool = False
    base_price: float = 600_000.0
    community_spread: float = 0.35       # sd of log community base
    facility_spread: float = 0.06        # sd of log multiplier per facility value
    area_slope: float = 0.12
    monthly_trend: float = 0.004
    community_trend_spread: float = 0.006
    noise_std: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        lo, hi = TURNOVER_BAND
        if not self.allow_turnover_override and not lo <= self.turnover <= hi:
            raise ValueError(f"turnover {self.turnover} outside [{lo}, {hi}]")
        if not 0 < self.turnover < 1:
            raise ValueError(f"turnover must lie in (0, 1), got {self.turnover}")
        counts = (
            self.n_municipalities,
            self.communities_per_municipality,
            self.fsas_per_community,
            self.postals_per_fsa,
            self.n_houses,
            self.n_months,
        )
        if min(counts) < 1:
            raise ValueError("level counts, n_houses and n_months must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def n_communities(self) -> int:
        return self.n_municipalities * self.communities_per_municipality

    @property
    def n_fsas(self) -> int:
        return self.n_communities * self.fsas_per_community

    @property
    def n_postals(self) -> int:
        return self.n_fsas * self.postals_per_fsa


class SyntheticMarket(NamedTuple):
    houses: list[HouseRecord]
    transactions: list[TransactionEvent]
    latent: np.ndarray  # (n_months, n_houses); row t-1 holds month t


def generate_synthetic_market(cfg: SyntheticMarketConfig) -> SyntheticMarket:
    """Sample a market whose prices are driven by location, facilities and size.

    latent(h, t) = community base * facility multipliers * (1 + slope * area_z)
                   * (1 + community trend * (t - 1));
    each month every house trades with probability ``turnover`` at the latent
    price times lognormal noise.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    nc, nf, npost, n = cfg.n_communities, cfg.n_fsas, cfg.n_postals, cfg.n_houses

    comm_log_base = math.log(cfg.base_price) + cfg.community_spread * rng.standard_normal(nc)
    comm_trend = cfg.monthly_trend + cfg.community_trend_spread * rng.standard_normal(nc)
    fac_mult = {
        cat: np.exp(cfg.facility_spread * rng.standard_normal(len(vals)))
        for cat, vals in FACILITY_CATEGORIES.items()
    }
    # facility mix varies by community so facility paths carry some location signal
    fac_probs = {
        cat: rng.dirichlet(np.full(len(vals), 2.0), size=nc) for cat, vals in FACILITY_CATEGORIES.items()
    }

    postal_of = np.sort(rng.integers(0, npost, size=n))
    postal_of[:npost] = np.arange(min(npost, n))  # every postal populated when n allows
    postal_of = np.sort(postal_of)
    fsa_of = postal_of // cfg.postals_per_fsa
    comm_of = fsa_of // cfg.fsas_per_community
    muni_of = comm_of // cfg.communities_per_municipality

    facilities = {}
    for cat, vals in FACILITY_CATEGORIES.items():
        cdf = np.cumsum(fac_probs[cat], axis=1)[comm_of]
        facilities[cat] = np.minimum((rng.random(n)[:, None] > cdf).sum(axis=1), len(vals) - 1)
    area = np.exp(math.log(1800.0) + 0.3 * rng.standard_normal(n))
    area_z = (np.log(area) - np.log(area).mean()) / max(np.log(area).std(), 1e-12)

    static = np.exp(comm_log_base[comm_of])
    for cat in FACILITY_CATEGORIES:
        static = static * fac_mult[cat][facilities[cat]]
    static = static * np.maximum(0.1, 1.0 + cfg.area_slope * area_z)
    months = np.arange(cfg.n_months, dtype=np.float64)
    growth = np.maximum(0.1, 1.0 + comm_trend[comm_of][None, :] * months[:, None])
    latent = static[None, :] * growth

    width = np.sqrt(area) * rng.uniform(0.5, 0.9, n)
    depth = area / width * rng.uniform(1.2, 2.0, n)
    bedrooms = np.clip(np.round(area / 550 + rng.normal(0, 0.6, n)), 1, None)
    floor = {
        "bedrooms": bedrooms,
        "washrooms": np.clip(np.round(bedrooms * 0.7 + rng.normal(0, 0.5, n)), 1, None),
        "family_rooms": np.clip(np.round(rng.normal(1, 0.6, n)), 0, None),
        "kitchens": np.clip(np.round(rng.normal(1.1, 0.3, n)), 1, None),
        "basement_rooms": np.clip(np.round(rng.normal(1, 0.8, n)), 0, None),
        "area": np.round(area, 1),
        "land_width": np.round(width, 2),
        "land_depth": np.round(depth, 2),
        "stoves": np.clip(np.round(rng.normal(1, 0.3, n)), 0, None),
        "ac": np.clip(np.round(rng.normal(1, 0.7, n)), 0, None),
        "parking": np.clip(np.round(rng.normal(2, 1, n)), 0, None),
    }

    snapshot = latent[0]
    bt = facilities["building_type"]

    def group_mean(keys: np.ndarray) -> np.ndarray:
        _, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        sums = np.bincount(inv, weights=snapshot)
        return (sums / np.bincount(inv))[inv]

    fin = {
        "tax": np.round(snapshot * 0.008 * np.exp(0.25 * rng.standard_normal(n)), 2),
        "comm_avg": np.round(group_mean(comm_of[:, None]), 2),
        "fsa_avg": np.round(group_mean(fsa_of[:, None]), 2),
        "comm_type_avg": np.round(group_mean(np.stack([comm_of, bt], 1)), 2),
        "fsa_type_avg": np.round(group_mean(np.stack([fsa_of, bt], 1)), 2),
    }

    width_id = len(str(n))
    houses = []
    for h in range(n):
        c = comm_of[h]
        houses.append(
            HouseRecord(
                house_id=f"H{h:0{width_id}d}",
                postal=f"P{postal_of[h]:04d}",
                fsa=f"F{fsa_of[h]:03d}",
                community=f"C{c:03d}",
                municipality=f"M{muni_of[h]:02d}",
                facilities={cat: FACILITY_CATEGORIES[cat][facilities[cat][h]] for cat in FACILITY_CATEGORIES},
                floorplan={f: float(floor[f][h]) for f in FLOORPLAN_FIELDS},
                financial={f: float(fin[f][h]) for f in FINANCIAL_FIELDS},
            )
        )

    events = []
    for t in range(cfg.n_months):
        traded = np.flatnonzero(rng.random(n) < cfg.turnover)
        noise = np.exp(cfg.noise_std * rng.standard_normal(len(traded))) if cfg.noise_std > 0 else np.ones(len(traded))
        for h, z in zip(traded, noise):
            events.append(TransactionEvent(houses[h].house_id, t + 1, float(latent[t, h] * z)))
    return SyntheticMarket(houses, events, latent)
