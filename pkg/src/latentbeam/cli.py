"""Command-line entry point: ``latentbeam <command> [options]``.

Commands::

    search            one search run from --config
    sweep             the config's sweep section (resumable with --resume)
    calibrate         fit metric weights to feedback in --data
    ablate-lookahead  estimator error and end-to-end reward across T'
    report            aggregate a results CSV, with paired comparisons

The default output root is ``$LATENTBEAM_OUT`` (else ``./runs``).
Exit status: 0 on success, 2 for configuration errors, 1 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import calibration, harness, report
from .config import load_config
from .errors import CalibrationError, ConfigurationError, DomainError
from .records import atomic_write, records_from_csv

log = logging.getLogger("latentbeam")


def _common(p: argparse.ArgumentParser, config: bool = True):
    if config:
        p.add_argument("--config", required=True, metavar="PATH", help="YAML run configuration")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--workers", type=int, default=1, metavar="N", help="parallel worker processes")
    p.add_argument("--seed-offset", type=int, default=0, metavar="N", help="added to every seed")
    p.add_argument("--resume", action="store_true", help="skip runs already recorded in --out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentbeam", description="Inference-time latent search on analytic diffusion testbeds.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("search", help="run one search"))
    _common(sub.add_parser("sweep", help="run a parameter sweep"))
    _common(sub.add_parser("ablate-lookahead", help="lookahead step ablation"))

    p = sub.add_parser("calibrate", help="calibrate metric weights")
    _common(p, config=False)
    p.add_argument("--data", required=True, metavar="CSV", help="metric columns then a 'feedback' column")
    p.add_argument("--grid", default="0,0.25,0.5,0.75,1", help="comma-separated weight grid")
    p.add_argument("--resamples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="aggregate sweep results")
    _common(p, config=False)
    p.add_argument("--results", required=True, metavar="CSV")
    p.add_argument("--pair", action="append", default=[], metavar="A:B",
                   help="paired comparison, e.g. dlbs:bon or dlbs_la/KB=8:dlbs/K=4/KB=32")
    p.add_argument("--resamples", type=int, default=report.RESAMPLES)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _default_out(name: str) -> Path:
    return Path(os.environ.get(harness.ENV_OUT, harness.DEFAULT_OUT)) / name


def cmd_search(args) -> int:
    cfg = load_config(args.config)
    out = harness.output_root(cfg, args.out)
    rec = harness.run_single(cfg, out, args.seed_offset)
    sys.stdout.write(rec.to_json())
    return 0 if rec.status == "ok" else 1


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = harness.output_root(cfg, args.out)
    recs = harness.run_sweep(cfg, out, workers=args.workers, seed_offset=args.seed_offset, resume=args.resume)
    failed = sum(r.status != "ok" for r in recs)
    print(f"{len(recs)} runs ({failed} failed) -> {out / 'results.csv'}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    out = harness.output_root(cfg, args.out)
    rows = harness.run_ablation(cfg, out, workers=args.workers, seed_offset=args.seed_offset)
    for r in rows:
        print(f"T'={r.T_prime:>3}  error={r.estimation_error:.5f}  reward={r.final_reward_mean:.5f} +- {r.final_reward_se:.5f}")
    return 0


def cmd_calibrate(args) -> int:
    data = calibration.load_dataset(args.data)
    try:
        grid = [float(g) for g in args.grid.split(",")]
    except ValueError:
        raise ConfigurationError(f"--grid: not a list of numbers: {args.grid!r}") from None
    res = calibration.calibrate(data, grid)
    combined = calibration.combine(data.metrics, res.weights)
    p = calibration.significance(combined, data.feedback, args.resamples, np.random.default_rng(args.seed))
    res = calibration.CalibrationResult(res.weights, res.correlation, res.names, res.grid, p)
    out = Path(args.out) if args.out else _default_out("calibration")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "weights.json", res.to_json() + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow([*data.names, "correlation"])
    for weights, r in calibration.top_candidates(data, grid, 50):
        w.writerow([*weights, repr(r)])
    atomic_write(out / "top_candidates.csv", buf.getvalue())
    print(res.to_json())
    return 0


def cmd_report(args) -> int:
    text = Path(args.results).read_text(encoding="utf-8")
    records = records_from_csv(text)
    rep = report.build_report(records, args.pair, args.resamples, args.seed)
    out = Path(args.out) if args.out else Path(args.results).parent
    report.write_report(rep, out)
    for c in rep.comparisons:
        print(f"{c.problem}: {c.a} (KB={c.KB_a}) vs {c.b} (KB={c.KB_b}): diff={c.mean_diff:.5g} n={c.n} p={c.p_value:.4g}")
    print(f"report -> {out / 'report.json'}")
    return 0


COMMANDS = {
    "search": cmd_search,
    "sweep": cmd_sweep,
    "ablate-lookahead": cmd_ablate,
    "calibrate": cmd_calibrate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CalibrationError, DomainError, FileExistsError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
