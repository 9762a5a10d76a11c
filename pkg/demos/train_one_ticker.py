"""Train the recurrent policy for one synthetic ticker and backtest it
against TWAP and VWAP on the held-out days. Takes about two minutes.

    python demos/train_one_ticker.py
"""

import time

from lobexec.backtest import evaluate_fold
from lobexec.market_data import SynthSpec, build_folds, synth_generate
from lobexec.policy_net import TrainConfig, train

panel = synth_generate(SynthSpec(n_tickers=5, n_days=105, seed=0))
fold = build_folds(panel, 1, 60, 45)[0]
cfg = TrainConfig(epochs=200, lr=0.01, batch_days=0, seed=0)
ticker = panel.tickers[0]

t0 = time.time()
result = train(panel, fold.train_days, ticker, cfg)
print(f"trained {ticker} in {time.time() - t0:.0f}s; "
      f"loss {result.curve[0][1]:.2f} -> {result.curve[-1][1]:.2f}")

report = evaluate_fold(panel, fold, cfg, {ticker: result}, tickers=[ticker])
for s in ("twap", "vwap", "lstm"):
    print(f"{s:5s} mean daily cost {report.total_cost(s):10.2f}")
