"""Train the lifelong model on a small synthetic market and compare it with
the community-mean baseline month by month.

    python demos/lifelong_quickstart.py
"""

import numpy as np

from propval.data import SyntheticMarketConfig, fit_scaler, generate_synthetic_market
from propval.evaluation import naive_baseline
from propval.lifelong import LifelongConfig, run_lifelong
from propval.pipeline import BuildConfig, build_market

T0, T = 5, 12

mk = generate_synthetic_market(SyntheticMarketConfig(
    n_houses=400, n_months=T, turnover=0.03, allow_turnover_override=True, seed=3))
market = build_market(mk.houses, BuildConfig(embed_dim=8, top_k=10, target_size=120))
print(f"{len(market.houses)} houses, {len(market.specs)} meta-structures, "
      f"{len(market.partition.subgraphs)} subgraphs, {len(market.partition.overlap)} shared houses")

scaler = fit_scaler([e.price for e in mk.transactions if e.month_index < T0])
cfg = LifelongConfig(window=3, epochs=15, lr=3e-3, embed_dim=8, gcn_hidden=8, lstm_hidden=8, head_hidden=8)
trainer = market.trainer(mk.transactions, cfg, scaler)
result = run_lifelong(trainer, T0, T)

print("month  n   model_rmse  baseline_rmse")
for rec in result.log:
    if rec.n_test == 0:
        continue
    idx, _ = result.tests[rec.month]
    base = scaler.forward(naive_baseline(mk.transactions, market.houses, rec.month)[idx])
    base_rmse = float(np.sqrt(np.mean((base - trainer.labels[rec.month].y) ** 2)))
    print(f"{rec.month:5d} {rec.n_test:3d}   {rec.test_rmse:.4f}      {base_rmse:.4f}")
print(f"mean model RMSE {result.mean_rmse():.4f}")
