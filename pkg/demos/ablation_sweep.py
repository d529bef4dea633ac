"""Compare the full model with its no-LSTM and no-GCN ablations and with a
one-month window on one synthetic market.

    python demos/ablation_sweep.py [seed]
"""

import sys

from propval.data import SyntheticMarketConfig, fit_scaler, generate_synthetic_market
from propval.lifelong import LifelongConfig, run_lifelong
from propval.pipeline import BuildConfig, build_market

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
T0, T = 7, 14

mk = generate_synthetic_market(SyntheticMarketConfig(
    n_houses=600, n_months=T, turnover=0.02, allow_turnover_override=True, seed=seed))
market = build_market(mk.houses, BuildConfig(top_k=12, target_size=200))
scaler = fit_scaler([e.price for e in mk.transactions if e.month_index < T0])

variants = {
    "full": {},
    "no-lstm": {"ablation": "no-lstm"},
    "no-gcn": {"ablation": "no-gcn"},
    "window=1": {"window": 1},
}
for name, kw in variants.items():
    cfg = LifelongConfig(epochs=10, lr=3e-3, seed=seed, **kw)
    result = run_lifelong(market.trainer(mk.transactions, cfg, scaler), T0, T)
    print(f"{name:9s} mean RMSE {result.mean_rmse():.4f}   last 3 months {result.pooled_rmse(3):.4f}")
