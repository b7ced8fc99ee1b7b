"""Command-line entry point.

Subcommands: ``synth`` (generate a price panel), ``backtest`` (full CPCV
benchmark), ``compare`` (Tukey HSD + compact letters over a metrics CSV),
``report`` (summary markdown).  The CLI is a thin client: with no
``--server`` it calls the pipeline handlers in-process, with ``--server
URL`` it posts the same payloads to a running service and writes the
returned artifacts locally.  Either way artifacts are fully computed
before the first byte hits disk, and each file lands via temp-file rename.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path

from .config import SynthSpec, apply_overrides, load_run_config
from .errors import ComputeError, ConfigError, DataError, HopfolioError
from .service.schemas import (BacktestRequest, CompareRequest, ReportRequest,
                              SynthRequest)

_ERROR_KINDS = {"config": ConfigError, "data": DataError,
                "compute": ComputeError}


class LocalClient:
    """In-process pipeline calls (the default)."""

    def synth(self, req: SynthRequest) -> dict[str, str]:
        from . import runner
        return runner.synth_artifacts(req.spec, req.seed, req.path_label)

    def backtest(self, req: BacktestRequest) -> dict[str, str]:
        from . import runner
        return runner.backtest_artifacts(req.config)

    def compare(self, req: CompareRequest) -> dict[str, str]:
        from . import runner
        return runner.compare_artifacts(req.metrics_csv, req.alpha)

    def report(self, req: ReportRequest) -> dict[str, str]:
        from . import runner
        return runner.report_artifacts(req.metrics_csv, req.tukey_json)


class HttpClient:
    """Same calls over HTTP; service errors re-raise as local exceptions."""

    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def _post(self, endpoint: str, payload) -> dict[str, str]:
        import httpx
        resp = httpx.post(f"{self.base_url}/{endpoint}",
                          json=payload.model_dump(mode="json"), timeout=None)
        if resp.status_code == 400:
            body = resp.json()
            kind = _ERROR_KINDS.get(body.get("kind", ""), ComputeError)
            raise kind(body.get("message", "service error"))
        if resp.status_code != 200:
            raise ComputeError(
                f"service returned {resp.status_code}: {resp.text[:200]}")
        return resp.json()["artifacts"]

    def synth(self, req: SynthRequest) -> dict[str, str]:
        return self._post("synth", req)

    def backtest(self, req: BacktestRequest) -> dict[str, str]:
        return self._post("backtest", req)

    def compare(self, req: CompareRequest) -> dict[str, str]:
        return self._post("compare", req)

    def report(self, req: ReportRequest) -> dict[str, str]:
        return self._post("report", req)


def make_client(server: str | None):
    return HttpClient(server) if server else LocalClient()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bundle(out_dir: Path, artifacts: dict[str, str]) -> None:
    for name, text in artifacts.items():
        write_atomic(out_dir / name, text)


def _parse_allocators(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [a.strip() for a in text.split(",") if a.strip()]


def cmd_synth(args) -> int:
    if args.config is not None:
        cfg = load_run_config(args.config)
        if cfg.data.synth is None:
            raise ConfigError("synth: config has no data.synth section")
        spec = cfg.data.synth
        seed = args.seed if args.seed is not None else cfg.seed
    else:
        spec = SynthSpec(n_assets=args.n_assets, n_days=args.n_days,
                         hot_asset=args.hot_asset)
        seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    client = make_client(args.server)
    bundle = client.synth(SynthRequest(spec=spec, seed=seed,
                                       path_label=str(out)))
    write_atomic(out, bundle["panel.csv"])
    write_atomic(out.with_name(out.name + ".manifest.json"),
                 bundle["manifest.json"])
    print(f"wrote {out}")
    return 0


def cmd_backtest(args) -> int:
    cfg = load_run_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed, out=args.out,
                          allocators=_parse_allocators(args.allocators),
                          alpha=args.alpha, jobs=args.jobs)
    client = make_client(args.server)
    bundle = client.backtest(BacktestRequest(config=cfg))
    out_dir = Path(cfg.out)
    write_bundle(out_dir, bundle)
    print(f"wrote {len(bundle)} artifacts to {out_dir}")
    return 0


def _read_results_file(results: str, name: str) -> str:
    path = Path(results) / name
    if not path.exists():
        raise DataError(f"missing {name} under {results}")
    return path.read_text()


def cmd_compare(args) -> int:
    metrics = _read_results_file(args.results, "metrics.csv")
    client = make_client(args.server)
    bundle = client.compare(CompareRequest(metrics_csv=metrics,
                                           alpha=args.alpha))
    out_dir = Path(args.out if args.out is not None else args.results)
    write_bundle(out_dir, bundle)
    print(f"wrote {', '.join(sorted(bundle))} to {out_dir}")
    return 0


def cmd_report(args) -> int:
    metrics = _read_results_file(args.results, "metrics.csv")
    tukey_path = Path(args.results) / "tukey.json"
    tukey = tukey_path.read_text() if tukey_path.exists() else None
    client = make_client(args.server)
    bundle = client.report(ReportRequest(metrics_csv=metrics,
                                         tukey_json=tukey))
    out_dir = Path(args.out if args.out is not None else args.results)
    write_bundle(out_dir, bundle)
    print(f"wrote summary.md to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hopfolio",
        description="Hopfield-network portfolio allocation with "
                    "combinatorial purged cross-validation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic price panel CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--config", help="run config JSON with a data.synth section")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-assets", type=int, default=10)
    p.add_argument("--n-days", type=int, default=2500)
    p.add_argument("--hot-asset", type=int, default=None,
                   help="index of one deliberately high-Sharpe asset")
    p.add_argument("--server", default=None, help="service base URL")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("backtest", help="run the CPCV benchmark")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="artifact directory")
    p.add_argument("--allocators", default=None,
                   help="comma-separated subset, e.g. EW,MVO,HOP-POOL")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help="concurrent split fits for deep allocators")
    p.add_argument("--server", default=None, help="service base URL")
    p.set_defaults(fn=cmd_backtest)

    p = sub.add_parser("compare",
                       help="Tukey HSD + compact letters over metrics.csv")
    p.add_argument("--results", required=True,
                   help="directory containing metrics.csv")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", default=None,
                   help="artifact directory (defaults to --results)")
    p.add_argument("--server", default=None, help="service base URL")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", help="summary markdown from results")
    p.add_argument("--results", required=True,
                   help="directory containing metrics.csv")
    p.add_argument("--out", default=None,
                   help="artifact directory (defaults to --results)")
    p.add_argument("--server", default=None, help="service base URL")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 2
    except HopfolioError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - last-resort runtime mapping
        print(f"{args.command}: unexpected failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
