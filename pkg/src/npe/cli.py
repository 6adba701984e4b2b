"""Command-line entry point: prepare, train, eval, query and sweep."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Tuple

from . import data as D
from .evaluation import evaluate
from .model import load_checkpoint, save_checkpoint
from .query import co_purchased, recommend_top_n, similar_items, to_json_rows
from .seeds import split_seed
from .trainer import NumericalError, TrainConfig, stderr_progress, train

logger = logging.getLogger("npe")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunConfig:
    # data
    input: Optional[str] = None
    data: Optional[str] = None
    format: str = "csv"
    user_col: str = "0"
    item_col: str = "1"
    weight_col: Optional[str] = None
    header: bool = False
    delimiter: Optional[str] = None
    threshold: Optional[float] = None
    split: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    min_user_clicks: int = 1
    min_item_clicks: int = 1
    seed: int = 0
    # training
    dim: int = 64
    neg_ratio: int = 4
    batch_size: int = 10_000
    epochs: int = 100
    lr: float = 0.001
    lam: float = 0.0
    dropout: float = 0.0
    init_sigma: float = 0.01
    patience: int = 5
    context_cap: Optional[int] = None
    variant: str = "npe"
    negative_sampling: str = "uniform"
    # evaluation / runtime
    n: List[int] = field(default_factory=lambda: [5, 10, 20])
    threads: int = 1
    deterministic: bool = False
    checkpoint: str = "model.npe"
    report: Optional[str] = None

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**values)
        cfg.split = tuple(float(r) for r in cfg.split)
        cfg.n = [int(k) for k in cfg.n]
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["split"] = list(self.split)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            dim=self.dim,
            neg_ratio=self.neg_ratio,
            batch_size=self.batch_size,
            max_epochs=self.epochs,
            learning_rate=self.lr,
            lam=self.lam,
            dropout_rate=self.dropout,
            init_sigma=self.init_sigma,
            early_stop_patience=self.patience,
            context_cap=self.context_cap,
            seed=self.seed,
            variant=self.variant,
            negative_sampling=self.negative_sampling,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _ratios(text: str) -> Tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("split needs three ratios")
    return parts


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("data")
    g.add_argument("--config", help="JSON RunConfig; flags override its values")
    g.add_argument("--input", help="raw interaction file")
    g.add_argument("--data", help="directory written by 'prepare'")
    g.add_argument("--format", choices=("csv", "tsv"), help="input format (default csv)")
    g.add_argument("--user-col", dest="user_col", help="user column name or 0-based position (default 0)")
    g.add_argument("--item-col", dest="item_col", help="item column name or position (default 1)")
    g.add_argument("--weight-col", dest="weight_col", help="rating / play-count column")
    g.add_argument("--header", action="store_true", help="first line is a header")
    g.add_argument("--delimiter", help="field delimiter (default by format)")
    g.add_argument("--threshold", type=float, help="binarize weights at >= threshold (use 4 for ratings)")
    g.add_argument("--split", type=_ratios, help="train,validation,test ratios (default 0.7,0.1,0.2)")
    g.add_argument("--min-user-clicks", dest="min_user_clicks", type=int, help="activity filter, off by default")
    g.add_argument("--min-item-clicks", dest="min_item_clicks", type=int, help="activity filter, off by default")
    g.add_argument("--seed", type=int, help="root seed (default 0)")
    t = p.add_argument_group("training")
    t.add_argument("--dim", type=int, help="embedding size D (default 64)")
    t.add_argument("--neg-ratio", dest="neg_ratio", type=int, help="negatives per positive n (default 4)")
    t.add_argument("--batch-size", dest="batch_size", type=int, help="mini-batch size (default 10000)")
    t.add_argument("--epochs", type=int, help="maximum epochs T (default 100)")
    t.add_argument("--lr", type=float, help="Adam learning rate (default 0.001)")
    t.add_argument("--lambda", dest="lam", type=float, help="L2 weight on touched rows (default 0)")
    t.add_argument("--dropout", type=float, help="dropout rate on hidden vectors (default 0)")
    t.add_argument("--init-sigma", dest="init_sigma", type=float, help="Gaussian init std (default 0.01)")
    t.add_argument("--patience", type=int, help="early-stopping patience (default 5)")
    t.add_argument("--context-cap", dest="context_cap", type=int, help="subsample contexts above this size")
    t.add_argument("--variant", choices=("npe", "mf", "embedding"), help="full model or an ablation")
    t.add_argument("--negative-sampling", dest="negative_sampling", choices=("uniform", "popularity"))
    r = p.add_argument_group("runtime")
    r.add_argument("--n", type=_int_list, help="cutoffs for Recall/nDCG (default 5,10,20)")
    r.add_argument("--threads", type=int, help="evaluation threads (default 1)")
    r.add_argument("--deterministic", action="store_true", help="sequential mode; omit timings from reports")
    r.add_argument("--checkpoint", help="model file (default model.npe)")
    r.add_argument("--report", help="JSON report path")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="npe", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("prepare", parents=[common], help="binarize, split and write manifests")
    p.add_argument("--out", required=True, help="output directory for the split manifests")
    sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")

    q = sub.add_parser("query", parents=[common], help="recommendations and item lookups")
    q.add_argument("kind", choices=("recommend", "similar", "copurchase"))
    q.add_argument("--user", help="raw user id (recommend)")
    q.add_argument("--item", help="raw item id (similar, copurchase)")
    q.add_argument("--k", type=int, default=5, help="number of results (default 5)")

    s = sub.add_parser("sweep", parents=[common], help="grid over embedding sizes and/or negative ratios")
    s.add_argument("--dims", type=_int_list, help="embedding sizes, e.g. 8,16,32,64,128,256")
    s.add_argument("--neg-ratios", dest="neg_ratios", type=_int_list, help="e.g. 1,2,4,5,8,12,16,20")
    s.add_argument("--metric", default="recall@20", help="column reported per cell (default recall@20)")
    s.add_argument("--out", help="CSV path (default stdout)")
    return parser


_COMMAND_KEYS = {"command", "config", "verbose", "out", "kind", "user", "item", "k", "dims", "neg_ratios", "metric"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            values.update(json.load(fh))
    values.update({k: v for k, v in vars(args).items() if k not in _COMMAND_KEYS})
    return RunConfig.from_dict(values)


def _column(ref):
    if ref is None:
        return None
    return int(ref) if str(ref).isdigit() else ref


def load_split(cfg: RunConfig) -> D.DatasetSplit:
    """The prepared split from ``--data``, or a fresh one built from ``--input``."""
    if cfg.data:
        return D.read_split(cfg.data)
    if not cfg.input:
        raise D.DataError("either --data or --input is required")
    records = D.load_interactions(
        cfg.input,
        format=cfg.format,
        user_col=_column(cfg.user_col),
        item_col=_column(cfg.item_col),
        weight_col=_column(cfg.weight_col),
        header=cfg.header,
        delimiter=cfg.delimiter,
    )
    dataset = D.binarize(records, cfg.threshold)
    if cfg.min_user_clicks > 1 or cfg.min_item_clicks > 1:
        dataset = D.filter_min_activity(dataset, cfg.min_user_clicks, cfg.min_item_clicks)
    return D.split(dataset, cfg.split, seed=split_seed(cfg.seed))


def _write_json(payload, path: Optional[str]) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_prepare(args, cfg: RunConfig) -> int:
    split_ = load_split(cfg)
    D.write_split(split_, args.out)
    full = D.merge(split_.train, split_.validation, split_.test)
    stats = D.dataset_stats(full)
    stats.update({name: getattr(split_, name).num_clicks for name in D.SPLIT_NAMES})
    with open(os.path.join(args.out, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
    print(D.format_stats(stats))
    print(f"train {stats['train']:,}  validation {stats['validation']:,}  test {stats['test']:,}")
    return EXIT_OK


def _id_map_path(checkpoint: str) -> str:
    return checkpoint + ".idmap.json"


def run_training(cfg: RunConfig, split_: D.DatasetSplit, quiet: bool = False):
    progress = None if quiet else stderr_progress
    return train(split_, cfg.train_config(), progress=progress)


def cmd_train(args, cfg: RunConfig) -> int:
    split_ = load_split(cfg)
    params, report = run_training(cfg, split_)
    id_map = _id_map_path(cfg.checkpoint)
    D.write_id_map(split_.train, id_map)
    save_checkpoint(cfg.checkpoint, params, id_map=os.path.basename(id_map), extra={"variant": cfg.variant})
    payload = {"config": cfg.to_dict(), "train": report.to_dict(include_timings=not cfg.deterministic)}
    _write_json(payload, cfg.report or os.path.splitext(cfg.checkpoint)[0] + ".report.json")
    return EXIT_OK


def _load_model(cfg: RunConfig):
    if not os.path.isfile(cfg.checkpoint):
        raise D.DataError(f"no such checkpoint: {cfg.checkpoint}")
    try:
        params, header = load_checkpoint(cfg.checkpoint)
    except ValueError as exc:
        raise D.DataError(str(exc)) from None
    return params, header


def _read_model_id_map(cfg: RunConfig, header: dict) -> tuple:
    ref = header.get("id_map")
    if not ref:
        raise D.DataError("checkpoint carries no id map reference")
    path = os.path.join(os.path.dirname(os.path.abspath(cfg.checkpoint)), ref)
    return D.read_id_map(path)


def eval_report(cfg: RunConfig, params, split_, variant: str):
    try:
        return evaluate(params, split_, cfg.n, variant=variant, threads=cfg.threads,
                        keep_per_user=True)
    except ValueError as exc:
        raise D.DataError(str(exc)) from None


def cmd_eval(args, cfg: RunConfig) -> int:
    params, header = _load_model(cfg)
    split_ = load_split(cfg)
    report = eval_report(cfg, params, split_, header.get("variant", "npe"))
    _write_json(report.to_dict(), cfg.report)
    return EXIT_OK


def cmd_query(args, cfg: RunConfig) -> int:
    params, header = _load_model(cfg)
    variant = header.get("variant", "npe")
    user_ids, item_ids = _read_model_id_map(cfg, header)
    if args.kind == "recommend":
        if args.user is None:
            raise _Usage("recommend needs --user")
        uidx = {raw: k for k, raw in enumerate(user_ids)}
        if args.user not in uidx:
            raise D.DataError(f"unknown user id {args.user!r}")
        u = uidx[args.user]
        history = []
        if cfg.data or cfg.input:
            # serving excludes everything the user is known to have clicked
            s = load_split(cfg)
            history = D.build_matrix(D.merge(s.train, s.validation, s.test)).row(u).tolist()
        results = recommend_top_n(params, u, history, args.k, variant=variant)
        if not results:
            print(f"npe query: warning: user {args.user} has clicked every item; nothing to recommend",
                  file=sys.stderr)
    else:
        if args.item is None:
            raise _Usage(f"{args.kind} needs --item")
        iidx = {raw: k for k, raw in enumerate(item_ids)}
        if args.item not in iidx:
            raise D.DataError(f"unknown item id {args.item!r}")
        fn = similar_items if args.kind == "similar" else co_purchased
        try:
            results = fn(params, iidx[args.item], args.k)
        except ValueError as exc:
            raise D.DataError(str(exc)) from None
    _write_json(to_json_rows(results, item_ids), cfg.report)
    return EXIT_OK


def sweep_rows(cfg: RunConfig, split_, dims=None, neg_ratios=None, metric="recall@20") -> list:
    """Train and evaluate one cell per grid value; failures are recorded, not raised."""
    grid = [("dim", d) for d in (dims or [])] + [("neg_ratio", n) for n in (neg_ratios or [])]
    if not grid:
        grid = [("dim", cfg.dim)]
    rows = []
    for name, value in grid:
        cell = RunConfig.from_dict({**cfg.to_dict(), name: value})
        try:
            params, report = run_training(cell, split_, quiet=True)
            ev = evaluate(params, split_, cell.n, variant=cell.variant, threads=cell.threads)
            rows.append({"parameter": name, "value": value, metric: ev.metrics.get(metric),
                         "best_epoch": report.best_epoch, "error": ""})
        except Exception as exc:  # a failed cell must not end the sweep
            logger.error("sweep cell %s=%s failed: %s", name, value, exc)
            rows.append({"parameter": name, "value": value, metric: None, "best_epoch": None,
                         "error": f"{type(exc).__name__}: {exc}"})
    return rows


def cmd_sweep(args, cfg: RunConfig) -> int:
    split_ = load_split(cfg)
    metric = args.metric
    if metric not in {f"{m}@{n}" for m in ("recall", "ndcg") for n in cfg.n}:
        raise _Usage(f"metric {metric!r} is not computed for --n {cfg.n}")
    rows = sweep_rows(cfg, split_, getattr(args, "dims", None), getattr(args, "neg_ratios", None), metric)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["parameter", "value", metric, "best_epoch", "error"])
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


class _Usage(Exception):
    pass


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "query": cmd_query,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        cfg.train_config()  # validates hyperparameters up front
        return COMMANDS[args.command](args, cfg)
    except (_Usage, TypeError) as exc:
        print(f"npe {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        if isinstance(exc, D.DataError):
            print(f"npe {args.command}: data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"npe {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"npe {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"npe {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
