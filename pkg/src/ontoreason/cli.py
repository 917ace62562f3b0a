"""Command line front end: ingest, sample, train, eval, answer, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
(divergence during training, or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ontoreason.errors import ReasonerError, TrainingDivergedError

log = logging.getLogger("ontoreason")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PATH_FIELDS = ("kb", "queries", "checkpoint", "report", "log")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# run configuration


def _train_config_type():
    from ontoreason.training import TrainConfig

    return TrainConfig


@dataclass
class RunConfig:
    """Training hyperparameters plus the artifact paths of a run.

    Values come from defaults, then a TOML file, then command line flags.
    """

    train: object = field(default_factory=lambda: _train_config_type()())
    kb: str | None = None
    queries: str | None = None
    checkpoint: str | None = None
    report: str | None = None
    log: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        TrainConfig = _train_config_type()
        train_keys = {f.name for f in fields(TrainConfig)}
        unknown = set(data) - train_keys - set(PATH_FIELDS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            train = TrainConfig(**{k: v for k, v in data.items() if k in train_keys})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from exc
        return cls(train, **{k: data[k] for k in PATH_FIELDS if k in data})

    def to_dict(self) -> dict:
        out = dict(self.train.to_dict())
        out.update({k: getattr(self, k) for k in PATH_FIELDS if getattr(self, k) is not None})
        return out

    def to_toml(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, (int, float)):
                text = repr(value)
            else:
                text = json.dumps(str(value))
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_toml(cls, text: str) -> RunConfig:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"config is not valid TOML: {exc}") from exc
        return cls.from_dict(data)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults < config file < explicitly given flags."""
    merged: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        merged.update(tomllib.loads(path.read_text(encoding="utf-8")))
    TrainConfig = _train_config_type()
    for name in [f.name for f in fields(TrainConfig)] + list(PATH_FIELDS):
        if name in vars(args):
            merged[name] = getattr(args, name)
    if getattr(args, "no_sub", False):
        merged["use_sub"] = False
    if getattr(args, "no_ins", False):
        merged["use_ins"] = False
    return RunConfig.from_dict(merged)


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + n for n in missing))


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    from ontoreason.kb import KbSplit, degrade_concepts, filter_low_degree, load_kb, save_split, split_abox

    src = Path(args.src) if args.src else None
    tbox = args.tbox or (src / "tbox.tsv" if src else None)
    ee = args.abox_ee or (src / "abox_ee.tsv" if src else None)
    ec = args.abox_ec or (src / "abox_ec.tsv" if src else None)
    if not (tbox and ee and ec):
        raise UsageError("give --src or all of --tbox, --abox-ee and --abox-ec")
    kb = load_kb(tbox, ee, ec)
    log.info("loaded %s", kb.summary())
    kb = filter_low_degree(kb, args.threshold)
    split = split_abox(kb, args.train_fraction, seed=args.seed)
    out = Path(args.out)
    save_split(split, out)
    print(f"train: {split.train.summary()}  valid={len(split.valid_triples)} test={len(split.test_triples)}")
    if args.degrade:
        degraded = KbSplit(degrade_concepts(split.train), split.valid_triples, split.test_triples)
        save_split(degraded, out / "degraded")
        print(f"degraded: {degraded.train.summary()}")
    return EXIT_OK


def _split_kbs(split, which: str):
    """(kb the queries are answered on, kb whose answers must be exceeded or None)."""
    if which == "train":
        return split.train, None
    if which == "valid":
        return split.train_valid(), split.train
    return split.full(), split.train_valid()


def cmd_sample(args) -> int:
    from ontoreason.kb import load_split
    from ontoreason.query import QUERY_TYPES, enumerate_1p, sample_queries, save_instances

    types = [t for spec in args.type for t in spec.split(",") if t]
    bad = [t for t in types if t not in QUERY_TYPES]
    if bad:
        raise UsageError(f"unknown query type(s) {bad}; choose from {', '.join(QUERY_TYPES)}")
    if args.enumerate and (types != ["1p"] or args.split != "train"):
        raise UsageError("--enumerate applies to --type 1p on the train split only")
    if not args.enumerate and args.n is None:
        raise UsageError("--n is required unless --enumerate is given")
    split = load_split(args.kb)
    kb, base = _split_kbs(split, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, qtype in enumerate(types):
        if args.enumerate:
            instances = enumerate_1p(kb)
        else:
            instances = sample_queries(kb, qtype, args.n, seed=args.seed + i, max_answers=args.max_answers,
                                       train_kb=base)
        path = out / f"{args.split}_{qtype}.jsonl"
        save_instances(instances, path, split.vocab)
        print(f"{path}: {len(instances)} instances")
    return EXIT_OK


def _load_query_dir(directory: str | Path, split_name: str, vocab) -> list:
    from ontoreason.query import QUERY_TYPES, load_instances

    directory = Path(directory)
    out = []
    for qtype in QUERY_TYPES:
        path = directory / f"{split_name}_{qtype}.jsonl"
        if path.exists():
            out.extend(load_instances(path, vocab))
    return out


def run_path(path: str | Path, run: int, runs: int) -> Path:
    """``model.ckpt`` for a single run, ``model.run<i>.ckpt`` for several."""
    path = Path(path)
    return path if runs == 1 else path.with_name(f"{path.stem}.run{run}{path.suffix}")


def _check_runs(runs: int) -> None:
    if runs < 1:
        raise UsageError("--runs must be at least 1")


def cmd_train(args) -> int:
    from ontoreason.kb import load_split
    from ontoreason.model import save_checkpoint
    from ontoreason.training import TrainData, train

    cfg = resolve_config(args)
    _require(cfg, "kb", "queries", "checkpoint")
    _check_runs(args.runs)
    split = load_split(cfg.kb)
    train_q = _load_query_dir(cfg.queries, "train", split.vocab)
    if not train_q:
        raise ReasonerError(f"no train_<qtype>.jsonl files in {cfg.queries}")
    valid_q = _load_query_dir(cfg.queries, "valid", split.vocab)
    data = TrainData.from_kb(split.train, train_q)
    for run in range(args.runs):
        ckpt = run_path(cfg.checkpoint, run, args.runs)
        log_path = run_path(cfg.log, run, args.runs) if cfg.log else Path(str(ckpt) + ".log.jsonl")
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            def on_log(rec):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

            result = train(data, replace(cfg.train, seed=cfg.train.seed + run), valid=valid_q, on_log=on_log)
        save_checkpoint(result.params, ckpt)
        best = "" if result.best_step is None else f", best step {result.best_step} metric {result.best_metric:.4f}"
        print(f"trained {result.steps_run} steps{best}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from ontoreason.evaluation import average_reports, evaluate, one_more_hop_eval
    from ontoreason.kb import load_split
    from ontoreason.model import load_checkpoint

    cfg = resolve_config(args)
    _require(cfg, "kb", "queries", "checkpoint")
    _check_runs(args.runs)
    split = load_split(cfg.kb)
    instances = _load_query_dir(cfg.queries, args.split, split.vocab)
    if not instances:
        raise ReasonerError(f"no {args.split}_<qtype>.jsonl files in {cfg.queries}")
    try:
        ks = tuple(int(k) for k in args.ks.split(","))
    except ValueError as exc:
        raise UsageError(f"--ks must be comma separated integers, got {args.ks!r}") from exc
    reports = []
    for run in range(args.runs):
        params = load_checkpoint(run_path(cfg.checkpoint, run, args.runs))
        if args.mode == "one-more-hop":
            kb = split.train
            reports.append(one_more_hop_eval(params, instances, kb.n_entities, kb.n_concepts,
                                             r_ec=kb.n_relations, ks=ks))
        else:
            kb_all, _ = _split_kbs(split, args.split)
            reports.append(evaluate(params, instances, kb_all=kb_all, ks=ks))
    report = reports[0] if len(reports) == 1 else average_reports(reports)
    text = report.to_text()
    print(text, end="")
    if cfg.report:
        Path(cfg.report + ".txt").write_text(text, encoding="utf-8")
        Path(cfg.report + ".json").write_text(report.dumps(), encoding="utf-8")
    return EXIT_OK


def cmd_answer(args) -> int:
    from ontoreason.evaluation import answer
    from ontoreason.kb import load_split
    from ontoreason.model import load_checkpoint
    from ontoreason.query import parse_query

    cfg = resolve_config(args)
    _require(cfg, "kb", "checkpoint")
    if args.k < 1:
        raise UsageError("-k must be at least 1")
    split = load_split(cfg.kb)
    params = load_checkpoint(cfg.checkpoint)
    ast = parse_query(args.query, split.vocab)
    for row in answer(params, ast, args.k, split.vocab):
        print(f"{row.level}\t{row.name}\t{row.score:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from ontoreason.gradcheck import run_suite

    worst = 0.0
    for r in run_suite(seed=args.seed, d=args.d, n_entities=args.entities, n_concepts=args.concepts,
                       m=args.m):
        worst = max(worst, r.max_rel_error)
        shape = r.qtype or "-"
        print(f"{r.head:<4} {shape:<3} {r.tnorm:<12} coords={r.n_coords:<5} max_rel_err={r.max_rel_error:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK if worst <= args.tolerance else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    TrainConfig = _train_config_type()
    defaults = TrainConfig()
    helps = {
        "lr": "Adam learning rate",
        "d": "embedding dimension",
        "batch_size": "mini-batch size per task",
        "m": "negatives per positive",
        "max_steps": "upper bound on optimisation steps",
        "valid_interval": "steps between validation evaluations",
        "patience": "evaluations without improvement before stopping",
        "seed": "random seed",
        "tnorm": "t-norm: godel, product or lukasiewicz",
        "gamma": "margin of the entity distance score",
        "eps": "floor of the p-norm used to normalise fuzzy sets",
        "p_norm": "order of the norm used to normalise fuzzy sets",
    }
    for f in fields(TrainConfig):
        if f.name in ("use_sub", "use_ins"):
            continue
        default = getattr(defaults, f.name)
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=type(default),
                       default=argparse.SUPPRESS, help=f"{helps[f.name]} (default {default})")
    p.add_argument("--no-sub", action="store_true", help="drop the subsumption task (sets use_sub = false)")
    p.add_argument("--no-ins", action="store_true", help="drop the instantiation task (sets use_ins = false)")


def _add_path_flags(p: argparse.ArgumentParser, names: Sequence[str]) -> None:
    helps = {
        "kb": "split directory written by ingest",
        "queries": "directory of <split>_<qtype>.jsonl files",
        "checkpoint": "checkpoint file",
        "report": "report path prefix; writes .txt and .json",
        "log": "training log (JSON lines); default <checkpoint>.log.jsonl",
    }
    for name in names:
        p.add_argument("--" + name, dest=name, default=argparse.SUPPRESS, help=helps[name])
    p.add_argument("--config", help="TOML file with any of the settings; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ontoreason", description=__doc__.split("\n")[0])
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load, filter and split an ontology")
    p.add_argument("--src", help="directory holding tbox.tsv, abox_ee.tsv and abox_ec.tsv")
    p.add_argument("--tbox")
    p.add_argument("--abox-ee", dest="abox_ee")
    p.add_argument("--abox-ec", dest="abox_ec")
    p.add_argument("--out", required=True, help="output split directory")
    p.add_argument("--threshold", type=int, default=5, help="minimum entity degree (0 disables; default 5)")
    p.add_argument("--train-fraction", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--degrade", action="store_true",
                   help="also write <out>/degraded with concepts turned into entities")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample", help="sample query instances")
    p.add_argument("--kb", required=True, help="split directory written by ingest")
    p.add_argument("--type", action="append", required=True, help="query type(s), repeatable or comma separated")
    p.add_argument("--n", type=int, help="instances per type")
    p.add_argument("--split", choices=("train", "valid", "test"), default="train")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-answers", type=int, default=100)
    p.add_argument("--enumerate", action="store_true", help="one 1p instance per train triple")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a model")
    _add_path_flags(p, ("kb", "queries", "checkpoint", "log"))
    _add_train_flags(p)
    p.add_argument("--runs", type=int, default=1,
                   help="independent runs with seeds seed..seed+runs-1; checkpoints get a .run<i> suffix")
    p.add_argument("--print-config", action="store_true", help="print the resolved config as TOML and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank held-out query answers")
    _add_path_flags(p, ("kb", "queries", "checkpoint", "report"))
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--mode", choices=("standard", "one-more-hop"), default="standard")
    p.add_argument("--ks", default="1,3,10", help="comma separated Hits@k cut-offs")
    p.add_argument("--runs", type=int, default=1, help="average the reports of checkpoints written by train --runs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("answer", help="answer one query")
    _add_path_flags(p, ("kb", "checkpoint"))
    p.add_argument("-q", "--query", required=True, help='query, e.g. "(p rel (e name))"')
    p.add_argument("-k", type=int, default=10)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--entities", type=int, default=50)
    p.add_argument("--concepts", type=int, default=10)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=args.threads)
    else:
        limiter = nullcontext()
    try:
        with limiter:
            if getattr(args, "print_config", False):
                print(resolve_config(args).to_toml(), end="")
                return EXIT_OK
            return args.func(args)
    except UsageError as exc:
        print(f"ontoreason: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"ontoreason: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ReasonerError, OSError, KeyError) as exc:
        print(f"ontoreason: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
