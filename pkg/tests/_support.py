"""Shared fixtures-by-function and brute-force oracles for the test suite."""

from __future__ import annotations

import itertools
from collections import defaultdict

import numpy as np

from propval.data import FACILITY_CATEGORIES, FINANCIAL_FIELDS, FLOORPLAN_FIELDS, HouseRecord
from propval.hin import FACILITY_SYMBOLS

_GEO = {"P": "postal", "F": "fsa", "C": "community", "M": "municipality"}


def random_houses(rng, n_houses, n_muni=2, comm_per=2, fsa_per=2, postal_per=2, n_fac_values=3):
    """Small random market; facilities drawn from the first few enumeration values."""
    n_postal = n_muni * comm_per * fsa_per * postal_per
    houses = []
    for h in range(n_houses):
        p = int(rng.integers(n_postal))
        f = p // postal_per
        c = f // fsa_per
        m = c // comm_per
        fac = {cat: vals[int(rng.integers(min(n_fac_values, len(vals))))] for cat, vals in FACILITY_CATEGORIES.items()}
        houses.append(HouseRecord(
            house_id=f"h{h:04d}", postal=f"P{p}", fsa=f"F{f}", community=f"C{c}", municipality=f"M{m}",
            facilities=fac,
            floorplan={k: float(rng.integers(0, 5)) for k in FLOORPLAN_FIELDS},
            financial={k: float(rng.uniform(1e5, 1e6)) for k in FINANCIAL_FIELDS},
        ))
    return houses


def typed_neighbours(houses):
    """Adjacency lists of the HIN rebuilt directly from the records."""
    nb = defaultdict(set)

    def link(a, b):
        nb[a].add(b)
        nb[b].add(a)

    for h in houses:
        node = ("H", h.house_id)
        link(node, ("P", h.postal))
        link(("P", h.postal), ("F", h.fsa))
        link(("F", h.fsa), ("C", h.community))
        link(("C", h.community), ("M", h.municipality))
        for cat, sym in FACILITY_SYMBOLS.items():
            link(node, (sym, h.facilities[cat]))
    return nb


def path_instances(nb, start, types):
    """Every walk from ``start`` following the node-type sequence (DFS)."""
    out = []

    def dfs(node, depth, trail):
        if depth == len(types) - 1:
            out.append(tuple(trail))
            return
        for nxt in sorted(nb[node]):
            if nxt[0] == types[depth + 1]:
                trail.append(nxt)
                dfs(nxt, depth + 1, trail)
                trail.pop()

    dfs(start, 0, [start])
    return out


def dfs_counts(houses, types):
    ids = sorted(h.house_id for h in houses)
    index = {hid: k for k, hid in enumerate(ids)}
    nb = typed_neighbours(houses)
    c = np.zeros((len(ids), len(ids)), dtype=np.int64)
    for hid in ids:
        for inst in path_instances(nb, ("H", hid), types):
            c[index[hid], index[inst[-1][1]]] += 1
    return c


def conjunction_counts(houses, constituent_types):
    """Number of tuples of instances, one per constituent path, joining each pair."""
    ids = sorted(h.house_id for h in houses)
    index = {hid: k for k, hid in enumerate(ids)}
    nb = typed_neighbours(houses)
    c = np.zeros((len(ids), len(ids)), dtype=np.int64)
    for hid in ids:
        per_path = []
        for types in constituent_types:
            by_end = defaultdict(list)
            for inst in path_instances(nb, ("H", hid), types):
                by_end[inst[-1][1]].append(inst)
            per_path.append(by_end)
        for other in ids:
            combos = itertools.product(*(p[other] for p in per_path))
            c[index[hid], index[other]] = sum(1 for _ in combos)
    return c
