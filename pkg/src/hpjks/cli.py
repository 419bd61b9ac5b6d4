"""Command-line interface: ``hpjks {simulate,test,montecarlo,report}``.

Every subcommand writes ``run_config.yaml`` next to its outputs with the full
effective configuration (defaults and seed included); passing that file back
with ``--config`` reproduces the run.
"""
from __future__ import annotations

import argparse
import logging
import os
import re
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pandas as pd
import yaml

from ._utils import fresh_seed
from .dgp import DgpConfig, generate_panel
from .kstest import SCHEMES, CellSummary, DegenerateVarianceError, bootstrap_test, sector_stream
from .montecarlo import (
    BiasOrderConfig,
    ExperimentConfig,
    bias_order_check,
    run_power_experiment,
    run_size_experiment,
)
from .panel import CleaningConfig, clean_panel, filter_min_periods, load_panel, write_panel
from .prodfn import ProductionFunction

logger = logging.getLogger("hpjks")

RESULT_COLUMNS = [
    "sector",
    "p_value",
    "n_amd",
    "n_bmd",
    "statistic",
    "validity_ratio",
    "n_bootstrap",
    "discarded_draws",
    "status",
    "warnings",
]


class CliError(Exception):
    pass


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"config {path} must be a key-value document")
    return doc


def _atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump(doc):
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)


def _output_dir(path):
    if path is None:
        raise CliError("--output is required")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise CliError(f"output directory {out} is not writable")
    return out


def _seed(args, doc):
    if args.seed is not None:
        return args.seed
    if doc.get("seed") is not None:
        return int(doc["seed"])
    seed = fresh_seed()
    print(f"no seed given; using seed {seed}", file=sys.stderr)
    return seed


def _slug(text):
    return re.sub(r"[^A-Za-z0-9._-]+", "_", str(text)).strip("_") or "sector"


# -- simulate ---------------------------------------------------------------


def cmd_simulate(args):
    doc = _read_config(args.config)
    doc["seed"] = _seed(args, doc)
    try:
        config = DgpConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid generator config: {exc}") from exc
    out = _output_dir(args.output)
    panel, truth = generate_panel(config)
    write_panel(panel, out / "panel.csv")
    truth.to_csv(out / "ground_truth.csv")
    effective = _dump(config.to_dict())
    _atomic_write(out / "run_config.yaml", effective)
    sys.stdout.write(effective)
    return 0


# -- test -------------------------------------------------------------------


def _test_config(args):
    doc = _read_config(args.config)
    cfg = {
        "input": doc.get("input"),
        "columns": doc.get("columns") or {},
        "cleaning": doc.get("cleaning") or {},
        "min_tenure": doc.get("min_tenure", 15),
        "bootstrap": doc.get("bootstrap", 999),
        "sectors": doc.get("sectors", "all"),
        "threads": doc.get("threads", 1),
        "validity_threshold": doc.get("validity_threshold", 1.0),
        "ddof": doc.get("ddof", 1),
        "by_area": doc.get("by_area", True),
        "plot": doc.get("plot", False),
        "scheme": doc.get("scheme", "permutation"),
    }
    unknown = set(doc) - set(cfg) - {"seed"}
    if unknown:
        raise CliError(f"unknown test options: {sorted(unknown)}")
    if args.input is not None:
        cfg["input"] = args.input
    if args.bootstrap is not None:
        cfg["bootstrap"] = args.bootstrap
    if args.min_tenure is not None:
        cfg["min_tenure"] = args.min_tenure
    if args.sectors is not None:
        cfg["sectors"] = args.sectors
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.plot:
        cfg["plot"] = True
    if isinstance(cfg["sectors"], str) and cfg["sectors"] != "all":
        cfg["sectors"] = [s.strip() for s in cfg["sectors"].split(",") if s.strip()]
    cfg["cleaning"] = dict(cfg["cleaning"], min_tenure=int(cfg["min_tenure"]))
    cfg["seed"] = _seed(args, doc)
    if cfg["input"] is None:
        raise CliError("--input is required")
    if cfg["scheme"] not in SCHEMES:
        raise CliError(f"scheme must be one of {SCHEMES}, got {cfg['scheme']!r}")
    return cfg


def _test_sector(sector, triples, cfg, seed):
    row = {"sector": sector, "p_value": None, "n_amd": 0, "n_bmd": 0, "statistic": None,
           "validity_ratio": None, "n_bootstrap": 0, "discarded_draws": 0, "status": "ok", "warnings": ""}
    cell = triples[triples["sector"] == sector]
    amd = cell[cell["area"] == "AMD"]
    bmd = cell[cell["area"] == "BMD"]
    row["n_amd"], row["n_bmd"] = len(amd), len(bmd)
    if len(amd) < 2 or len(bmd) < 2:
        row["status"] = "error: fewer than 2 firms in an area after filtering"
        return row, None
    try:
        res = bootstrap_test(
            amd,
            bmd,
            n_bootstrap=int(cfg["bootstrap"]),
            seed=seed,
            sector=sector,
            ddof=int(cfg["ddof"]),
            validity_threshold=float(cfg["validity_threshold"]),
            stream=(sector_stream(sector),),
            scheme=cfg["scheme"],
        )
    except DegenerateVarianceError as exc:
        row["status"] = f"error: {exc}"
        return row, None
    row.update(
        p_value=res.p_value,
        statistic=res.statistic,
        validity_ratio=res.validity_ratio,
        n_bootstrap=res.n_bootstrap,
        discarded_draws=res.discarded_draws,
        warnings="; ".join(res.warnings),
    )
    curves = {
        area: CellSummary.from_triples(c, sector, area, ddof=int(cfg["ddof"])).standardized_cdf()
        for area, c in (("AMD", amd), ("BMD", bmd))
    }
    return row, curves


def _write_overlay(out, sector, curves, plot):
    cdf_dir = out / "cdf"
    cdf_dir.mkdir(exist_ok=True)
    for area, curve in curves.items():
        frame = curve.to_frame().rename(columns={"jump_point": "z"})
        _atomic_write(
            cdf_dir / f"{_slug(sector)}_{area}.csv",
            frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"),
        )
    if plot:
        _plot_overlay(cdf_dir / f"{_slug(sector)}.svg", sector, curves)


def _plot_overlay(path, sector, curves):
    from matplotlib import rcParams
    from matplotlib.figure import Figure

    rcParams["svg.hashsalt"] = "hpjks"
    fig = Figure(figsize=(5, 3.5))
    ax = fig.subplots()
    for area, curve in curves.items():
        ax.step(curve.jump_points, curve.values, where="post", label=area, lw=1)
    ax.set_xlabel("standardized TFP")
    ax.set_ylabel("debiased CDF")
    ax.set_title(str(sector))
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})


def cmd_test(args):
    cfg = _test_config(args)
    out = _output_dir(args.output)
    try:
        cleaning = CleaningConfig.from_dict(cfg["cleaning"])
        dataset = load_panel(cfg["input"], cfg["columns"])
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(str(exc)) from exc
    cleaned, report = clean_panel(dataset, cleaning)
    _atomic_write(out / "cleaning_report.yaml", _dump(report.to_dict()))

    all_sectors = cleaned.sectors()
    if cfg["sectors"] == "all":
        sectors = all_sectors
    else:
        sectors = sorted(str(s) for s in cfg["sectors"])

    # fit per cell so that one bad cell does not sink the rest
    model = ProductionFunction(by_area=bool(cfg["by_area"]))
    estimates, failed = {}, {}
    long_lived = filter_min_periods(cleaned, cleaning.min_tenure, cleaning.require_consecutive_years).frame
    counts = long_lived.groupby(["sector", "area"])["firm_id"].nunique()
    for sector in sectors:
        sub = cleaned.frame[cleaned.frame["sector"] == sector]
        n_amd, n_bmd = (int(counts.get((sector, a), 0)) for a in ("AMD", "BMD"))
        if sub.empty:
            failed[sector] = ("error: no observations after cleaning", n_amd, n_bmd)
            continue
        if min(n_amd, n_bmd) < 2:
            failed[sector] = ("error: fewer than 2 firms in an area after filtering", n_amd, n_bmd)
            continue
        try:
            estimates.update(ProductionFunction(by_area=model.by_area).fit(sub).estimates_)
        except ValueError as exc:
            failed[sector] = (f"error: production function: {exc}", n_amd, n_bmd)
    model.estimates_ = estimates
    _atomic_write(
        out / "estimates.yaml",
        _dump([e.to_dict() for _, e in sorted(estimates.items(), key=lambda kv: str(kv[0]))]),
    )

    ok_sectors = [s for s in sectors if s not in failed]
    usable = cleaned.frame[cleaned.frame["sector"].isin(ok_sectors)]
    triples = model.tfp_triples(usable, cleaning.min_tenure, cleaning.require_consecutive_years)

    def work(sector):
        row, curves = _test_sector(sector, triples, cfg, cfg["seed"])
        if curves is not None:
            _write_overlay(out, sector, curves, cfg["plot"])
        return row

    threads = max(1, int(cfg["threads"]))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = dict(zip(ok_sectors, pool.map(work, ok_sectors)))
    else:
        done = {s: work(s) for s in ok_sectors}

    rows = []
    for sector in sectors:
        if sector in failed:
            status, n_amd, n_bmd = failed[sector]
            rows.append({"sector": sector, "status": status, "n_amd": n_amd, "n_bmd": n_bmd})
        else:
            rows.append(done[sector])
    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    for r in rows:
        if r.get("status", "ok") != "ok":
            logger.warning("sector %s: %s", r["sector"], r["status"])
    _atomic_write(out / "results.csv", results.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    _atomic_write(out / "report.txt", format_table(results) + _status_lines(results))
    effective = dict(cfg)
    effective["cleaning"] = cleaning.to_dict()
    # thread count does not affect results; keep it out of the audit file
    effective.pop("threads")
    _atomic_write(out / "run_config.yaml", _dump(effective))
    sys.stdout.write(format_table(results))
    return 0


def _status_lines(results):
    lines = []
    for _, r in results.iterrows():
        if r["status"] != "ok":
            lines.append(f"{r['sector']}: {r['status']}")
        elif isinstance(r["warnings"], str) and r["warnings"]:
            lines.append(f"{r['sector']}: {r['warnings']}")
    return ("\n" + "\n".join(lines) + "\n") if lines else ""


# -- report -----------------------------------------------------------------


def format_table(results):
    """Aligned ``Sector | p-value | N_AMD | N_BMD`` table, p-values to 3 decimals."""
    header = ["Sector", "p-value", "N_AMD", "N_BMD"]
    body = []
    for _, r in results.iterrows():
        p = r["p_value"]
        body.append(
            [
                str(r["sector"]),
                "n/a" if p is None or pd.isna(p) else f"{float(p):.3f}",
                str(int(r["n_amd"])) if not pd.isna(r["n_amd"]) else "n/a",
                str(int(r["n_bmd"])) if not pd.isna(r["n_bmd"]) else "n/a",
            ]
        )
    widths = [max(len(row[j]) for row in [header] + body) for j in range(4)]

    def fmt(row):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        return " | ".join(cells).rstrip()

    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule] + [fmt(r) for r in body]) + "\n"


def cmd_report(args):
    if args.input is None:
        raise CliError("--input is required")
    try:
        results = pd.read_csv(args.input, dtype={"sector": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise CliError(f"cannot read results file {args.input}: {exc}") from exc
    missing = [c for c in ("sector", "p_value", "n_amd", "n_bmd") if c not in results.columns]
    if missing:
        raise CliError(f"results file {args.input} lacks columns {missing}")
    try:
        pd.to_numeric(results["p_value"], errors="raise")
        text = format_table(results)
    except (ValueError, TypeError) as exc:
        raise CliError(f"malformed results file {args.input}: {exc}") from exc
    if args.output:
        _atomic_write(args.output, text)
    sys.stdout.write(text)
    return 0


# -- montecarlo -------------------------------------------------------------


def cmd_montecarlo(args):
    doc = _read_config(args.config)
    kind = doc.pop("kind", "size")
    doc["seed"] = _seed(args, doc)
    try:
        if kind == "bias":
            config = BiasOrderConfig.from_dict(doc)
        elif kind in ("size", "power"):
            if args.threads is not None:
                doc["n_jobs"] = args.threads
            if args.bootstrap is not None:
                doc["n_bootstrap"] = args.bootstrap
            config = ExperimentConfig.from_dict(doc)
        else:
            raise CliError(f"unknown experiment kind {kind!r}; expected size, power or bias")
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid experiment config: {exc}") from exc
    out = _output_dir(args.output)
    runner = {"size": run_size_experiment, "power": run_power_experiment, "bias": bias_order_check}[kind]
    try:
        summary = runner(config)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    summary.to_csv(out / "summary.csv")
    if summary.ratios is not None:
        summary.ratios.to_csv(out / "ratios.csv", index=False, float_format="%.10g", lineterminator="\n")
    _atomic_write(out / "report.txt", summary.to_text())
    effective = dict(config.to_dict(), kind=kind)
    if kind != "bias":
        # thread count does not affect results; keep it out of the audit file
        effective.pop("n_jobs", None)
    _atomic_write(out / "run_config.yaml", _dump(effective))
    logger.info("%s experiment finished in %.1f s", kind, summary.elapsed)
    sys.stdout.write(summary.to_text())
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="hpjks", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML/JSON configuration document")
        p.add_argument("--output", help="output directory")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")

    p = sub.add_parser("simulate", help="generate a synthetic panel and its ground truth")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("test", help="run the debiased KS test per sector on a panel CSV")
    common(p)
    p.add_argument("--input", help="panel CSV")
    p.add_argument("--bootstrap", type=int, help="bootstrap draws per sector (default 999)")
    p.add_argument("--min-tenure", type=int, help="minimum periods per firm (default 15)")
    p.add_argument("--sectors", help="comma-separated sector codes or 'all'")
    p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    p.add_argument("--plot", action="store_true", help="also write SVG CDF overlays")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("montecarlo", help="run a size, power or bias-order experiment")
    common(p)
    p.add_argument("--bootstrap", type=int, help="bootstrap draws per replication")
    p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("report", help="render a results CSV as a sector table")
    p.add_argument("--input", help="results CSV written by 'test'")
    p.add_argument("--output", help="optional file for the rendered table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
