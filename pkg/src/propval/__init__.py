"""Lifelong spatio-temporal property valuation on heterogeneous house graphs.

Pipeline: house records -> heterogeneous information network -> weighted
meta-structure similarity graph -> overlapping subgraphs -> monthly GCN-LSTM
units trained with a sliding-window replay loss -> lambda search.
"""

from .data import (
    HouseRecord,
    PriceScaler,
    SyntheticMarketConfig,
    TransactionEvent,
    fit_scaler,
    generate_synthetic_market,
    ingest_houses,
    ingest_transactions,
)
from .evaluation import EvaluationReport, cumulative_ger_table, ger, naive_baseline, report_meta_weights
from .hin import SimilarityStack, build_hin, compose_adjacency, enumerate_meta_structures
from .lifelong import LifelongConfig, LifelongTrainer, load_checkpoint, run_lifelong, save_checkpoint
from .pipeline import BuildConfig, PreparedMarket, build_market
from .tuner import tune_lambda

__version__ = "0.1.0"

__all__ = [
    "BuildConfig",
    "EvaluationReport",
    "HouseRecord",
    "LifelongConfig",
    "LifelongTrainer",
    "PreparedMarket",
    "PriceScaler",
    "SimilarityStack",
    "SyntheticMarketConfig",
    "TransactionEvent",
    "build_hin",
    "build_market",
    "compose_adjacency",
    "cumulative_ger_table",
    "enumerate_meta_structures",
    "fit_scaler",
    "generate_synthetic_market",
    "ger",
    "ingest_houses",
    "ingest_transactions",
    "load_checkpoint",
    "naive_baseline",
    "report_meta_weights",
    "run_lifelong",
    "save_checkpoint",
    "tune_lambda",
]
