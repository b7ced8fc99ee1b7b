"""Pipeline handlers shared by the CLI and the HTTP service.

Each handler turns a validated request into a bundle of named text
artifacts.  Bundles are fully computed before anything is written, floats
serialize via repr, and no payload carries a timestamp, so identical
(seed, config) runs produce byte-identical artifacts.
"""

from __future__ import annotations

import io
import csv as csv_mod

import numpy as np

from .config import RunConfig, SynthSpec
from .cv import (DEEP_ALLOCATORS, BacktestResult, CpcvPlan,
                 build_cpcv_plan, run_backtest)
from .data import (BatchConfig, DatasetManifest, PriceMatrix, ReturnMatrix,
                   compute_log_returns, load_prices, synth_panel)
from .errors import ConfigError, DataError
from .models import ModelSpec
from .stats import GroupSample, compact_letter_display, tukey_hsd
from .train import TrainConfig

METRICS_HEADER = "method,path,mean_annual,sharpe,sortino,avg_dd"
_METRIC_ROWS = (("Mean", "mean_annual"), ("Sharpe", "sharpe_annual"),
                ("Sortino", "sortino_annual"), ("Avg. DD", "avg_drawdown"))


def _fmt(x: float) -> str:
    return repr(float(x))


def synth_artifacts(spec: SynthSpec, seed: int,
                    path_label: str = "panel.csv") -> dict[str, str]:
    """Synthetic price panel plus its dataset manifest."""
    panel = synth_panel(
        spec.n_assets, spec.n_days,
        spec.seed if spec.seed is not None else seed,
        hot_asset=spec.hot_asset,
        base_drift=spec.base_drift, base_vol=spec.base_vol,
        hot_drift=spec.hot_drift, hot_vol=spec.hot_vol, rho=spec.rho)
    buf = io.StringIO()
    buf.write("date," + ",".join(panel.tickers) + "\n")
    for date, row in zip(panel.dates, panel.values):
        buf.write(date + "," + ",".join(_fmt(x) for x in row) + "\n")
    manifest = DatasetManifest("synthetic", panel.n_assets,
                               panel.dates[0], panel.dates[-1], path_label)
    return {"panel.csv": buf.getvalue(), "manifest.json": manifest.to_json()}


def build_panel(cfg: RunConfig) -> tuple[PriceMatrix, ReturnMatrix, str]:
    if cfg.data.csv is not None:
        prices = load_prices(cfg.data.csv)
        name = cfg.data.csv
    else:
        s = cfg.data.synth
        prices = synth_panel(
            s.n_assets, s.n_days, s.seed if s.seed is not None else cfg.seed,
            hot_asset=s.hot_asset, base_drift=s.base_drift,
            base_vol=s.base_vol, hot_drift=s.hot_drift, hot_vol=s.hot_vol,
            rho=s.rho)
        name = "synthetic"
    return prices, compute_log_returns(prices), name


def make_model_spec(allocator: str, cfg: RunConfig, n_assets: int) -> ModelSpec | None:
    if allocator not in DEEP_ALLOCATORS:
        return None
    common = dict(n_assets=n_assets, lookback=cfg.batch.lookback,
                  loss=cfg.train.loss)
    if allocator == "HOP-POOL":
        hp = cfg.hop_pool
        return ModelSpec(kind="HOP-POOL", hidden_dim=hp.hidden_dim,
                         pool_heads=hp.heads, beta=hp.beta,
                         use_time2vec=hp.use_time2vec, t2v_k=hp.t2v_k,
                         **common)
    if allocator == "HOP-TRA":
        ht = cfg.hop_tra
        return ModelSpec(kind="HOP-TRA", embed_dim=ht.embed_dim,
                         n_blocks=ht.n_blocks, tra_heads=ht.heads,
                         beta=ht.beta, t2v_k=ht.t2v_k, **common)
    return ModelSpec(kind="LSTM", lstm_hidden=cfg.lstm.hidden, **common)


def _train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(max_epochs=t.max_epochs, lr=t.lr, beta1=t.beta1,
                       beta2=t.beta2, eps=t.eps,
                       weight_decay=t.weight_decay, patience=t.patience)


def result_json(result: BacktestResult, plan: CpcvPlan) -> str:
    import json
    payload = {
        "method": result.allocator,
        "paths": [
            {"path": i, "metrics": rep.to_dict(),
             "returns": [float(x) for x in series.values]}
            for i, (series, rep) in enumerate(zip(result.path_series,
                                                  result.reports))
        ],
        "splits": [
            {"split": s.split_id, "test_groups": list(s.test_groups),
             "weights": [float(x) for x in result.split_weights[i]]}
            for i, s in enumerate(plan.splits)
        ],
    }
    return json.dumps(payload, separators=(",", ":"))


def metrics_csv(results: list[BacktestResult]) -> str:
    lines = [METRICS_HEADER]
    for res in results:
        for i, rep in enumerate(res.reports):
            lines.append(",".join([
                res.allocator, str(i), _fmt(rep.mean_annual),
                _fmt(rep.sharpe_annual), _fmt(rep.sortino_annual),
                _fmt(rep.avg_drawdown)]))
    return "\n".join(lines) + "\n"


def report_markdown(results: list[BacktestResult]) -> str:
    """Mean +/- std of each metric across backtest paths, one method per
    column (the layout used for cross-validated results tables)."""
    methods = [r.allocator for r in results]
    lines = ["| Metric | " + " | ".join(methods) + " |",
             "| --- |" + " --- |" * len(methods)]
    for label, attr in _METRIC_ROWS:
        cells = []
        for res in results:
            vals = np.array([getattr(rep, attr) for rep in res.reports])
            cells.append(f"{vals.mean():.4f} ± {vals.std():.4f}")
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cumrets_csv(result: BacktestResult, dates: list[str]) -> str:
    """Wealth curves (exp of cumulative log-returns) per path, for
    external plotting."""
    header = "date," + ",".join(f"path_{i}"
                                for i in range(len(result.path_series)))
    wealth = [np.exp(np.cumsum(s.values)) for s in result.path_series]
    lines = [header]
    for t, date in enumerate(dates):
        lines.append(date + "," + ",".join(_fmt(w[t]) for w in wealth))
    return "\n".join(lines) + "\n"


def backtest_artifacts(cfg: RunConfig) -> dict[str, str]:
    """Full CPCV benchmark: every configured allocator over the shared
    plan.  Artifact names: result_<method>.json, metrics.csv, report.md,
    cumrets_<method>.csv, history_<method>.csv (deep methods), manifest.json.
    """
    prices, returns, name = build_panel(cfg)
    plan = build_cpcv_plan(returns.n_rows, cfg.cpcv.n_groups,
                           cfg.cpcv.k_test, cfg.cpcv.purge, cfg.cpcv.embargo)
    batch_cfg = BatchConfig(cfg.batch.lookback, cfg.batch.batch_size)
    train_cfg = _train_config(cfg)
    results = []
    for allocator in cfg.allocators:
        spec = make_model_spec(allocator, cfg, returns.n_assets)
        results.append(run_backtest(allocator, plan, returns, batch_cfg,
                                    train_cfg, spec, cfg.seed, cfg.jobs))
    artifacts: dict[str, str] = {}
    for res in results:
        artifacts[f"result_{res.allocator}.json"] = result_json(res, plan)
        artifacts[f"cumrets_{res.allocator}.csv"] = cumrets_csv(
            res, list(returns.dates))
        if res.histories:
            lines = ["split,epoch,train_loss,val_loss"]
            for sid in sorted(res.histories):
                for epoch, tr, va in res.histories[sid]:
                    lines.append(f"{sid},{epoch},{_fmt(tr)},{_fmt(va)}")
            artifacts[f"history_{res.allocator}.csv"] = "\n".join(lines) + "\n"
    artifacts["metrics.csv"] = metrics_csv(results)
    artifacts["report.md"] = report_markdown(results)
    manifest = DatasetManifest(name, returns.n_assets, returns.dates[0],
                               returns.dates[-1], name)
    artifacts["manifest.json"] = manifest.to_json()
    return artifacts


def parse_metrics_csv(text: str) -> dict[str, list[dict[str, float]]]:
    """Per-method metric rows, in first-appearance order."""
    reader = csv_mod.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != METRICS_HEADER.split(","):
        raise DataError("metrics CSV header mismatch")
    out: dict[str, list[dict[str, float]]] = {}
    for row in rows[1:]:
        if len(row) != 6:
            raise DataError(f"malformed metrics row: {row}")
        method = row[0]
        try:
            rec = {"path": int(row[1]), "mean_annual": float(row[2]),
                   "sharpe": float(row[3]), "sortino": float(row[4]),
                   "avg_dd": float(row[5])}
        except ValueError as exc:
            raise DataError(f"non-numeric metrics row: {row}") from exc
        out.setdefault(method, []).append(rec)
    if not out:
        raise DataError("metrics CSV has no data rows")
    return out


def compare_artifacts(metrics_text: str, alpha: float = 0.05) -> dict[str, str]:
    """Tukey HSD over per-path Sharpe ratios plus compact letters."""
    table = parse_metrics_csv(metrics_text)
    if len(table) < 2:
        raise ConfigError("comparison needs at least 2 methods")
    counts = {m: len(rows) for m, rows in table.items()}
    if len(set(counts.values())) != 1:
        raise ConfigError(f"mismatched path counts across methods: {counts}")
    groups = [GroupSample(m, [rec["sharpe"] for rec in rows])
              for m, rows in table.items()]
    result = tukey_hsd(groups, alpha)
    cld = compact_letter_display(result)
    return {"tukey.json": result.to_json(),
            "cld.md": cld.to_markdown("Sharpe letters")}


def report_artifacts(metrics_text: str,
                     tukey_text: str | None = None) -> dict[str, str]:
    """Summary markdown rebuilt from a metrics CSV, with compact letters
    appended when a Tukey report is supplied."""
    import json
    table = parse_metrics_csv(metrics_text)
    methods = list(table)
    lines = ["# Backtest summary", "",
             "| Metric | " + " | ".join(methods) + " |",
             "| --- |" + " --- |" * len(methods)]
    cols = (("Mean", "mean_annual"), ("Sharpe", "sharpe"),
            ("Sortino", "sortino"), ("Avg. DD", "avg_dd"))
    for label, key in cols:
        cells = []
        for m in methods:
            vals = np.array([rec[key] for rec in table[m]])
            cells.append(f"{vals.mean():.4f} ± {vals.std():.4f}")
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    if tukey_text is not None:
        doc = json.loads(tukey_text)
        lines += ["", "## Pairwise comparison",
                  f"alpha = {doc['alpha']}, df = {doc['df']}", "",
                  "| Pair | diff | q | p | significant |", "| --- |" + " --- |" * 4]
        for p in doc["pairs"]:
            lines.append(
                f"| {p['a']} vs {p['b']} | {p['mean_diff']:.4f} "
                f"| {p['q']:.4f} | {p['p']:.4f} | {p['significant']} |")
    return {"summary.md": "\n".join(lines) + "\n"}
