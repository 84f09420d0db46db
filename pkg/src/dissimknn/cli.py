"""Command-line entry point: ``dissimknn {stats,split,simmat,recommend,evaluate,sweep}``.

Option precedence: built-in defaults < ``--config FILE`` < command-line flags.
The config file holds ``key = value`` lines whose keys are flag names
without the leading dashes (``top-n = 10``, ``lambda = 0.2,0.4``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .dataset import ColumnFormat, Dataset, build_dataset, dataset_stats, parse_interactions
from .evaluation import DEFAULT_LAMBDA_GRID, format_report_table, holdout_split, lambda_sweep
from .exceptions import ConfigurationError, DataError
from .knn import DEFAULT_K, fit_model, recommend_all, scheme_axis, write_recommendations
from .similarity import canonical_name, format_triples, is_additive, preset, preset_names

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

DEFAULTS = {
    "input": None,
    "format": "tab:user,item,rating,timestamp",
    "header": False,
    "scheme": "user-knn",
    "preset": None,
    "k": DEFAULT_K,
    "top_n": 10,
    "lambda": ",".join(str(x) for x in DEFAULT_LAMBDA_GRID),
    "threshold": 0.0,
    "split": "temporal",
    "fraction": 0.2,
    "seed": 0,
    "out": None,
    "baseline": None,
    "literal_tables": False,
    "min_interactions": None,
    "workers": None,
    "json": False,
}

_log = logging.getLogger("dissimknn")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    io_ = common.add_argument_group("input/output")
    io_.add_argument("--input", help="interaction file (delimited text)")
    io_.add_argument("--format", help="DELIM:COLUMNS, e.g. tab:user,item,rating,timestamp (default) or comma:user,item,rating")
    io_.add_argument("--header", action="store_true", default=None, help="skip the first line")
    io_.add_argument("--min-interactions", type=int, help="drop users with fewer interactions (default: off)")
    io_.add_argument("--out", help="output directory")
    io_.add_argument("--config", help="key = value file; flags override it")
    io_.add_argument("--json", action="store_true", default=None, help="print JSON instead of a text table")
    model = common.add_argument_group("model")
    model.add_argument("--scheme", choices=["user-knn", "item-knn"])
    model.add_argument("--preset", help="comma-separated measure names: " + ",".join(preset_names()))
    model.add_argument("--k", type=int, help=f"neighborhood size (default {DEFAULT_K})")
    model.add_argument("--top-n", type=int, help="recommendation list length N (default 10)")
    model.add_argument("--lambda", help="comma-separated lambda grid for additive presets")
    model.add_argument("--literal-tables", action="store_true", default=None,
                       help="use the cross-family formulas for MAAJ, S-MAS and S-MAAJ")
    model.add_argument("--workers", type=int, help="thread count (default: available cores)")
    ev = common.add_argument_group("evaluation")
    ev.add_argument("--threshold", type=float, help="minimum test rating counted as relevant (default 0)")
    ev.add_argument("--split", choices=["temporal", "random"])
    ev.add_argument("--fraction", type=float, help="test fraction per user (default 0.2)")
    ev.add_argument("--seed", type=int, help="seed for the random split (default 0)")
    ev.add_argument("--baseline", help="preset to paired-test every other preset against")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="dissimknn", description="Dissimilarity-adjusted kNN recommendation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("stats", parents=[common], help="print dataset statistics")
    sub.add_parser("split", parents=[common], help="write train/test hold-out files")
    sub.add_parser("simmat", parents=[common], help="dump top-k neighbor similarities")
    sub.add_parser("recommend", parents=[common], help="write top-N lists for every user")
    sub.add_parser("evaluate", parents=[common], help="evaluate the given presets on a hold-out split")
    sub.add_parser("sweep", parents=[common], help="evaluate all presets over the lambda grid")
    return parser


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                key, sep, value = line.partition(":")
            if not sep:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value", "--config")
            key = key.strip().lstrip("-").replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}", "--config")
            out[key] = _coerce(key, value.strip())
    return out


def _coerce(key: str, value: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if key in ("k", "top_n", "seed", "min_interactions", "workers"):
        try:
            return int(value)
        except ValueError:
            raise ConfigurationError(f"{key} must be an integer, got {value!r}", f"--{key.replace('_', '-')}") from None
    if key in ("threshold", "fraction"):
        try:
            return float(value)
        except ValueError:
            raise ConfigurationError(f"{key} must be a number, got {value!r}", f"--{key}") from None
    return value


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            cfg.update(read_config_file(args.config))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}", "--config") from None
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    for key in ("k", "top_n", "workers"):
        if cfg[key] < 1:
            raise ConfigurationError(f"must be at least 1, got {cfg[key]}", f"--{key.replace('_', '-')}")
    cfg["lambda_grid"] = _parse_grid(cfg["lambda"])
    return cfg


def _parse_grid(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        grid = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"bad lambda grid {text!r}", "--lambda") from None
    if not grid:
        raise ConfigurationError("lambda grid is empty", "--lambda")
    for lam in grid:
        if not 0 < lam <= 1:
            raise ConfigurationError(f"lambda {lam} outside (0, 1]", "--lambda")
    return grid


def _presets(cfg, default: list[str]) -> list[str]:
    if not cfg["preset"]:
        return default
    return [canonical_name(p) for p in str(cfg["preset"]).split(",") if p.strip()]


def load_dataset(cfg) -> Dataset:
    if not cfg["input"]:
        raise ConfigurationError("an input file is required", "--input")
    fmt = ColumnFormat.parse(cfg["format"], header=bool(cfg["header"]))
    try:
        result = parse_interactions(cfg["input"], fmt)
    except OSError as exc:
        raise DataError(f"--input: cannot read {cfg['input']}: {exc.strerror or exc}") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"--input: {cfg['input']} is not UTF-8 text: {exc}") from None
    if result.errors:
        print(f"warning: {result.error_report()}", file=sys.stderr)
    return build_dataset(result.records, min_interactions=cfg["min_interactions"])


def _out_dir(cfg) -> Path | None:
    if cfg["out"] is None:
        return None
    path = Path(cfg["out"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_stats(cfg) -> int:
    d = load_dataset(cfg)
    st = dataset_stats(d)
    name = Path(cfg["input"]).name
    if cfg["json"]:
        print(json.dumps(st.as_dict(), sort_keys=True))
    else:
        print(st.format_table(name))
    out = _out_dir(cfg)
    if out is not None:
        (out / "stats.json").write_text(json.dumps(st.as_dict(), sort_keys=True, indent=2) + "\n")
        (out / "stats.txt").write_text(st.format_table(name) + "\n")
    return EXIT_OK


def _write_edges(path: Path, d: Dataset, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, r, t in rows:
            fields = [d.user_ids[u], d.item_ids[i], repr(r)]
            if t is not None:
                fields.append(str(t))
            fh.write("\t".join(fields) + "\n")


def cmd_split(cfg) -> int:
    d = load_dataset(cfg)
    split = holdout_split(d, cfg["fraction"], cfg["split"], cfg["seed"])
    out = _out_dir(cfg) or Path(".")
    ts_of = {}
    if d.has_timestamps:
        users, items, _, ts = d.edge_arrays()
        ts_of = dict(zip(zip(users.tolist(), items.tolist()), ts.tolist()))
    tr = split.train
    users, items, ratings, ts = tr.edge_arrays()
    _write_edges(out / "train.tsv", d, zip(users.tolist(), items.tolist(), ratings.tolist(),
                                           ts.tolist() if ts is not None else [None] * len(users)))
    test_rows = [(u, i, r, ts_of.get((u, i))) for u in sorted(split.test) for i, r in split.test[u]]
    _write_edges(out / "test.tsv", d, test_rows)
    print(f"train={tr.n_transactions} test={split.n_test} mode={split.mode} -> {out}")
    return EXIT_OK


def _single_spec(cfg):
    names = _presets(cfg, ["JS"])
    if len(names) != 1:
        raise ConfigurationError("this command takes exactly one preset", "--preset")
    name = names[0]
    lam = cfg["lambda_grid"][0] if is_additive(name) else None
    return preset(name, lam, bool(cfg["literal_tables"]))


def _emit(cfg, filename: str, text: str):
    out = _out_dir(cfg)
    if out is None:
        sys.stdout.write(text)
    else:
        (out / filename).write_text(text, encoding="utf-8")


def cmd_simmat(cfg) -> int:
    d = load_dataset(cfg)
    axis = scheme_axis(cfg["scheme"])
    model = fit_model(d, axis, _single_spec(cfg), cfg["k"], cfg["workers"])
    ids = d.item_ids if axis == "item" else d.user_ids
    _emit(cfg, "similarities.tsv", format_triples(model.neighbors, ids))
    return EXIT_OK


def cmd_recommend(cfg) -> int:
    import io

    d = load_dataset(cfg)
    model = fit_model(d, scheme_axis(cfg["scheme"]), _single_spec(cfg), cfg["k"], cfg["workers"])
    lists = recommend_all(model, d, cfg["top_n"], workers=cfg["workers"])
    buf = io.StringIO()
    write_recommendations(lists, d, buf)
    _emit(cfg, "recommendations.tsv", buf.getvalue())
    return EXIT_OK


def _run_grid(cfg, default_presets: list[str]) -> int:
    scheme_axis(cfg["scheme"])
    names = _presets(cfg, default_presets)
    baseline = canonical_name(cfg["baseline"], "--baseline") if cfg["baseline"] else None
    d = load_dataset(cfg)
    split = holdout_split(d, cfg["fraction"], cfg["split"], cfg["seed"])
    reports = lambda_sweep(
        split, cfg["scheme"], names, cfg["lambda_grid"], cfg["k"], cfg["top_n"], cfg["threshold"],
        bool(cfg["literal_tables"]), baseline, workers=cfg["workers"],
    )
    doc = {
        "dataset": dataset_stats(d).as_dict(),
        "config": {
            "input": cfg["input"],
            "scheme": cfg["scheme"],
            "presets": names,
            "k": cfg["k"],
            "N": cfg["top_n"],
            "lambda_grid": cfg["lambda_grid"],
            "threshold": cfg["threshold"],
            "split": cfg["split"],
            "fraction": cfg["fraction"],
            "seed": cfg["seed"],
            "baseline": baseline,
            "literal_tables": bool(cfg["literal_tables"]),
            "min_interactions": cfg["min_interactions"],
        },
        "reports": [r.as_dict(d.user_ids) for r in reports],
    }
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    table = format_report_table(reports, title=f"{Path(cfg['input']).name} ({cfg['scheme']})")
    out = _out_dir(cfg)
    if out is not None:
        (out / "report.json").write_text(text, encoding="utf-8")
        (out / "report.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(text if cfg["json"] else table)
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    return _run_grid(cfg, ["JS"])


def cmd_sweep(cfg) -> int:
    return _run_grid(cfg, preset_names())


COMMANDS = {
    "stats": cmd_stats,
    "split": cmd_split,
    "simmat": cmd_simmat,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigurationError as exc:
        where = f"{exc.option}: " if exc.option else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
