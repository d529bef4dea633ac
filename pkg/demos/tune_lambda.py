"""Search the window loss weights with the local-search tuner and show the
top meta-structure weights learned along the way.

    python demos/tune_lambda.py
"""

from propval.data import SyntheticMarketConfig, fit_scaler, generate_synthetic_market
from propval.evaluation import report_meta_weights
from propval.lifelong import LifelongConfig
from propval.pipeline import BuildConfig, build_market
from propval.tuner import WindowEvaluator, tune_lambda

mk = generate_synthetic_market(SyntheticMarketConfig(
    n_houses=400, n_months=8, turnover=0.03, allow_turnover_override=True, seed=5))
market = build_market(mk.houses, BuildConfig(embed_dim=8, top_k=10, target_size=120))
month = 5
scaler = fit_scaler([e.price for e in mk.transactions if e.month_index <= month])
trainer = market.trainer(mk.transactions, LifelongConfig(
    window=4, epochs=10, lr=3e-3, embed_dim=8, gcn_hidden=8, lstm_hidden=8, head_hidden=8), scaler)
for t in range(1, month):
    trainer.advance_month(t)
    trainer.train_task(t)
trainer.advance_month(month)

result = tune_lambda(WindowEvaluator(trainer, month, epochs=3), trainer.state.lam, budget=30, seed=0)
print(f"lambda {result.lam.round(2).tolist()} after {result.evaluations} evaluations ({result.stop_reason})")
print(f"held-out RMSE {result.initial_rmse:.4f} -> {result.best_rmse:.4f}")
for name, w in report_meta_weights(market.spec_names, trainer.state.omega.data, k=5):
    print(f"  {w:.5f}  {name}")
