"""Reward-driven local search over the replay weights lambda.

The state is the lambda vector itself.  An action nudges one coordinate by
+/- eps (clamped to [0, 1]); the move is kept only when held-out RMSE
strictly improves.  The search stops after ``2m`` consecutive rejections or
when the evaluation budget runs out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

REWARD = 0.01


@dataclass(frozen=True)
class TunerState:
    lam: np.ndarray
    best_rmse: float
    negatives: int = 0
    steps: int = 0

    @property
    def m(self) -> int:
        return len(self.lam)


def action_space(m: int, eps: float = 0.01) -> list[tuple[int, float]]:
    """All ``2m`` (dimension, signed step) actions."""
    if m < 1:
        raise ValueError("lambda must have at least one dimension")
    return [(d, s * eps) for d in range(m) for s in (-1.0, 1.0)]


def propose_action(state: TunerState, rng: np.random.Generator, eps: float = 0.01) -> tuple[int, float]:
    actions = action_space(state.m, eps)
    return actions[int(rng.integers(len(actions)))]


def apply_action(lam: np.ndarray, action: tuple[int, float]) -> np.ndarray:
    d, e = action
    out = np.array(lam, dtype=np.float64)
    out[d] = min(1.0, max(0.0, round(out[d] + e, 12)))
    return out


def reward(old_rmse: float, new_rmse: float) -> float:
    """+0.01 on strict improvement, -0.01 otherwise (ties included)."""
    if math.isnan(old_rmse) or math.isnan(new_rmse):
        raise ValueError("RMSE is NaN")
    return REWARD if new_rmse < old_rmse else -REWARD


def transition(state: TunerState, action: tuple[int, float], r: float, new_rmse: float) -> TunerState:
    if r > 0:
        return TunerState(apply_action(state.lam, action), new_rmse, 0, state.steps + 1)
    return replace(state, negatives=state.negatives + 1, steps=state.steps + 1)


@dataclass
class TraceRow:
    step: int
    dim: int
    eps: float
    old_rmse: float
    new_rmse: float
    reward: float
    accepted: bool


@dataclass
class TuneResult:
    lam: np.ndarray
    best_rmse: float
    initial_rmse: float
    evaluations: int
    stop_reason: str
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def accepted_rmse(self) -> list[float]:
        """Held-out RMSE of the initial state followed by every accepted state."""
        return [self.initial_rmse] + [r.new_rmse for r in self.trace if r.accepted]

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step,dim,eps,old_rmse,new_rmse,reward,accepted\n")
            for r in self.trace:
                fh.write(f"{r.step},{r.dim},{r.eps!r},{r.old_rmse!r},{r.new_rmse!r},{r.reward!r},{int(r.accepted)}\n")


def tune_lambda(evaluate: Callable[[np.ndarray], float], lam0, budget: int, seed: int = 0,
                eps: float = 0.01) -> TuneResult:
    """Run the search; ``budget`` counts every call to ``evaluate``, the first included."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    lam0 = np.asarray(lam0, dtype=np.float64)
    if np.any(lam0 < 0) or np.any(lam0 > 1):
        raise ValueError("initial lambda must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    first = float(evaluate(lam0.copy()))
    if math.isnan(first):
        raise ValueError("RMSE is NaN")
    state = TunerState(lam0.copy(), first)
    used, trace = 1, []
    patience = 2 * state.m
    reason = "budget"
    while used < budget:
        if state.negatives >= patience:
            reason = "patience"
            break
        action = propose_action(state, rng, eps)
        new = float(evaluate(apply_action(state.lam, action)))
        used += 1
        r = reward(state.best_rmse, new)
        trace.append(TraceRow(state.steps + 1, action[0], action[1], state.best_rmse, new, r, r > 0))
        state = transition(state, action, r, new)
    else:
        if state.negatives >= patience:
            reason = "patience"
    return TuneResult(state.lam, state.best_rmse, first, used, reason, trace)


class WindowEvaluator:
    """Scores a lambda by briefly retraining task ``month`` and predicting ``month + 1``.

    Every call restarts from the same snapshot of the trainer, so the score
    depends on lambda alone.
    """

    def __init__(self, trainer, month: int, epochs: int = 5):
        if trainer.state.month != month:
            raise ValueError(f"trainer is at month {trainer.state.month}, expected {month}")
        if month + 1 not in trainer.labels:
            raise ValueError(f"held-out month {month + 1} has no transactions")
        self.trainer, self.month, self.epochs = trainer, month, epochs
        self._snapshot = trainer.snapshot()

    def __call__(self, lam: np.ndarray) -> float:
        tr = self.trainer
        tr.restore(self._snapshot)
        tr.set_lambdas(lam)
        tr.train_task(self.month, epochs=self.epochs)
        tr.advance_month(self.month + 1)
        lab = tr.labels[self.month + 1]
        pred = tr.predict(self.month + 1, lab.idx)
        tr.restore(self._snapshot)
        return float(np.sqrt(np.mean((pred - lab.y) ** 2)))
