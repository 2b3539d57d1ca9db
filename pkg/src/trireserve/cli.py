"""Command-line entry point.

    trireserve ingest   --config run.yaml
    trireserve train    --config run.yaml [--line comauto] [--ensemble-size 5] [--jobs 2]
    trireserve forecast --config run.yaml
    trireserve evaluate --config run.yaml
    trireserve simulate --output demo/          # synthetic data + starter config

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, ContractError, DataError, TrainingError
from .model import ModelConfig, TrainingResult, ensemble_train, forecast, load_model, save_model
from .plotting import plot_development
from .reserving import (
    development_curves,
    evaluate_forecast,
    mack_forecast,
    write_company_detail_csv,
    write_development_curves_csv,
    write_metrics_csv,
)
from .synthetic import synthetic_corpus, write_long_csv
from .triangles import ColumnMap, IngestResult, build_samples, dump_triangles_csv, load_triangles, observed_mask

log = logging.getLogger("trireserve")


@dataclass
class LineSpec:
    path: str
    columns: object = None
    roster: list | None = None


@dataclass
class RunConfig:
    lines: dict[str, LineSpec]
    output: str = "run"
    seed: int = 0
    validation_after_year: int = 1995
    validation_rule: str = "all"
    jobs: int = 1
    model: dict = field(default_factory=dict)
    plot_companies: int | list = 3

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig.from_dict({**self.model, "seed": self.seed})
        except (ContractError, TypeError) as exc:
            raise ConfigError(f"invalid model settings: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model_resolved"] = asdict(self.model_config())
        return d


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    if not isinstance(raw, dict) or not isinstance(raw.get("lines"), dict) or not raw["lines"]:
        raise ConfigError(f"{path}: config needs a non-empty 'lines' mapping")
    base = path.parent
    lines = {}
    for name, spec in raw["lines"].items():
        if isinstance(spec, str):
            spec = {"path": spec}
        if not isinstance(spec, dict) or "path" not in spec:
            raise ConfigError(f"{path}: line {name!r} needs a 'path'")
        unknown = set(spec) - {"path", "columns", "roster"}
        if unknown:
            raise ConfigError(f"{path}: line {name!r} has unknown keys {sorted(unknown)}")
        data_path = Path(spec["path"])
        if not data_path.is_absolute():
            data_path = base / data_path
        lines[name] = LineSpec(str(data_path), spec.get("columns"), spec.get("roster"))
    known = {"lines", "output", "seed", "validation_after_year", "validation_rule", "jobs", "model",
             "plot_companies"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    cfg = RunConfig(lines=lines, **{k: v for k, v in raw.items() if k in known and k != "lines"})
    out = Path(cfg.output)
    if not out.is_absolute():
        cfg.output = str(base / out)
    if cfg.validation_rule not in ("all", "any"):
        raise ConfigError(f"validation_rule must be 'all' or 'any', got {cfg.validation_rule!r}")
    return cfg


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.line:
        missing = [x for x in args.line if x not in cfg.lines]
        if missing:
            raise ConfigError(f"line(s) not in config: {missing}")
        cfg.lines = {k: v for k, v in cfg.lines.items() if k in args.line}
    if args.ensemble_size is not None:
        cfg.model = {**cfg.model, "ensemble_size": args.ensemble_size}
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output is not None:
        cfg.output = args.output
    cfg.model_config()
    return cfg


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _echo_config(cfg: RunConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.resolved.json", cfg.to_dict())
    return out


def _ingest(cfg: RunConfig, line: str) -> IngestResult:
    spec = cfg.lines[line]
    if not Path(spec.path).exists():
        raise DataError(f"data file not found: {spec.path}")
    return load_triangles(spec.path, line, ColumnMap.from_config(spec.columns, line), spec.roster)


def cmd_ingest(cfg: RunConfig) -> int:
    out = _echo_config(cfg)
    (out / "ingest").mkdir(parents=True, exist_ok=True)
    summary = {}
    for line in cfg.lines:
        res = _ingest(cfg, line)
        dump_triangles_csv(res.triangles, out / "ingest" / f"{line}_triangles.csv")
        size = res.triangles[0].size if res.triangles else 0
        summary[line] = {
            "records": res.records,
            "companies": len(res.triangles),
            "grid": [size, size],
            "observed_cells": int(observed_mask(size).sum()) * len(res.triangles) if size else 0,
            "companies_with_holdout": sum(t.has_holdout for t in res.triangles),
            "exclusions": [{"company": c, "reason": r} for c, r in res.exclusions],
        }
        log.info("%s: %d companies, %dx%d grid, %d excluded", line, len(res.triangles), size, size,
                 len(res.exclusions))
    _write_json(out / "ingest" / "summary.json", summary)
    return 0


def _model_dir(cfg: RunConfig, line: str) -> Path:
    return Path(cfg.output) / "models" / line


def cmd_train(cfg: RunConfig) -> int:
    out = _echo_config(cfg)
    mcfg = cfg.model_config()
    for line in cfg.lines:
        triangles = _ingest(cfg, line).triangles
        if not triangles:
            raise DataError(f"{line}: no usable companies")
        samples = [
            s for k, t in enumerate(triangles)
            for s in build_samples(t, cfg.validation_after_year, k, cfg.validation_rule)
        ]
        log.info("%s: training %d members on %d samples", line, mcfg.ensemble_size, len(samples))
        results = ensemble_train(mcfg, samples, len(triangles), jobs=cfg.jobs)
        mdir = _model_dir(cfg, line)
        mdir.mkdir(parents=True, exist_ok=True)
        members = []
        for m, res in enumerate(results):
            save_model(res, mdir / f"member_{m:03d}.json", extra={"line": line, "member": m})
            with (mdir / f"trace_{m:03d}.csv").open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "train_loss", "validation_loss"])
                for r in res.trace:
                    w.writerow([r.epoch, repr(r.train_loss), repr(r.validation_loss)])
            members.append({"member": m, "seed": res.seed, "best_epoch": res.best_epoch,
                            "epochs_run": len(res.trace), "best_validation_loss": res.best_validation_loss})
        _write_json(mdir / "manifest.json", {
            "line": line,
            "package_version": __version__,
            "companies": [t.company for t in triangles],
            "samples": {"train": sum(s.split == "train" for s in samples),
                        "validation": sum(s.split == "validation" for s in samples)},
            "members": members,
        })
    log.info("models written under %s", out / "models")
    return 0


def _load_ensemble(cfg: RunConfig, line: str) -> tuple[list[TrainingResult], list]:
    mdir = _model_dir(cfg, line)
    manifest = mdir / "manifest.json"
    if not manifest.exists():
        raise DataError(f"model manifest not found: {manifest}")
    meta = json.loads(manifest.read_text(encoding="utf-8"))
    results = [load_model(mdir / f"member_{m['member']:03d}.json") for m in meta["members"]]
    return results, meta["companies"]


def _dt_forecast(cfg: RunConfig, line: str, triangles):
    results, companies = _load_ensemble(cfg, line)
    index = {c: k for k, c in enumerate(companies)}
    missing = [t.company for t in triangles if t.company not in index]
    if missing:
        raise DataError(f"{line}: companies {missing} were not part of training")
    return forecast([r.params for r in results], triangles, index, "DT", results[0].config)


def cmd_forecast(cfg: RunConfig) -> int:
    out = _echo_config(cfg)
    fdir = out / "forecasts"
    fdir.mkdir(parents=True, exist_ok=True)
    for line in cfg.lines:
        triangles = _ingest(cfg, line).triangles
        fcs = [_dt_forecast(cfg, line, triangles), mack_forecast(triangles)]
        with (fdir / f"{line}_forecast.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "company", "accident_year", "lag", "paid_ratio", "outstanding_ratio",
                        "paid", "outstanding"])
            for f in fcs:
                for t in triangles:
                    cf = f[t.company]
                    paid, os = cf.paid, cf.outstanding
                    for r, c in zip(*np.nonzero(~np.isnan(cf.paid_ratio))):
                        w.writerow([f.label, t.company, t.accident_years[r], c + 1,
                                    repr(float(cf.paid_ratio[r, c])), repr(float(cf.os_ratio[r, c])),
                                    repr(float(paid[r, c])), repr(float(os[r, c]))])
    return 0


def _plot_selection(cfg: RunConfig, triangles) -> list:
    if isinstance(cfg.plot_companies, list):
        wanted = {str(c) for c in cfg.plot_companies}
        return [t for t in triangles if str(t.company) in wanted]
    return list(triangles[: int(cfg.plot_companies)])


def cmd_evaluate(cfg: RunConfig) -> int:
    out = _echo_config(cfg)
    rdir = out / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    reports = []
    curves = []
    for line in cfg.lines:
        triangles = [t for t in _ingest(cfg, line).triangles]
        lacking = [t.company for t in triangles if not t.has_holdout]
        if lacking:
            raise DataError(f"{line}: no held-out actuals for companies {lacking}")
        dt = _dt_forecast(cfg, line, triangles)
        mack = mack_forecast(triangles)
        for f in (dt, mack):
            reports.append(evaluate_forecast(triangles, f, line))
        for t in triangles:
            curves.extend(development_curves(t, dt, "DT"))
        for t in _plot_selection(cfg, triangles):
            rows = [r for r in curves if r["line"] == line and r["company"] == t.company]
            plot_development(rows, rdir / "figures" / f"{line}_{t.company}.png", f"{line}, company {t.company}")
    write_metrics_csv(reports, rdir / "metrics.csv")
    write_company_detail_csv(reports, rdir / "company_detail.csv")
    write_development_curves_csv(curves, rdir / "development_curves.csv")
    for rep in reports:
        log.info("%s %-4s MAPE %.4f RMSPE %.4f (%d companies)", rep.line, rep.model, rep.mape, rep.rmspe,
                 len(rep.companies))
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.output or "demo")
    out.mkdir(parents=True, exist_ok=True)
    triangles = synthetic_corpus(args.companies, args.noise, args.seed or 0)
    write_long_csv(triangles, out / "synthetic.csv")
    config = {
        "lines": {"synthetic": {"path": "synthetic.csv"}},
        "output": "run",
        "seed": args.seed or 0,
        "validation_after_year": 1995,
        "model": {"ensemble_size": 2, "max_epochs": 200, "patience": 50, "encoder_units": 32,
                  "decoder_units": 32, "head_hidden_units": 16, "batch_size": 32},
    }
    (out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    print(f"wrote {out / 'synthetic.csv'} and {out / 'config.yaml'}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trireserve", description="Neural loss reserving on development triangles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("ingest", "load data and write triangle dumps"),
                        ("train", "train one ensemble per line"),
                        ("forecast", "write per-cell forecasts"),
                        ("evaluate", "write metrics, detail and development-curve reports")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--line", action="append", help="restrict to this line (repeatable)")
        p.add_argument("--ensemble-size", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--output")
    p = sub.add_parser("simulate", help="write a synthetic corpus and a starter config")
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.add_argument("--companies", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.05)
    return parser


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "forecast": cmd_forecast, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        cfg = apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
