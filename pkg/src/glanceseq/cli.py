"""Command-line interface.

Exit codes: 0 success, 2 usage or parse error, 3 data too degenerate to use.
Any flag can also be set in a ``--config`` file of ``key = value`` lines,
where ``key`` is the flag name without dashes (``max-iters`` or
``max_iters``).  Explicit flags override the file.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from . import __version__
from ._io import atomic_write_text
from .classifier import (DEFAULT_HIDDEN_CANDIDATES, balanced_accuracy, classify_many, load_classifier,
                         save_classifier, select_hidden_states, sliding_window_classify, train_binary)
from .dataset import (Dataset, enumerate_problems, find_problem, glances_csv_text, ingest, labels_csv_text,
                      load_bundle, save_bundle, sequences_to_dataset, split)
from .errors import DegenerateSplit, EmptyInput, GlanceSeqError, MalformedStream, ParseError
from .experiment import (ExperimentConfig, METRICS, accuracy_difference_correlation, bayes_accuracy_estimate,
                         default_workers, difference_mass, export_problem_matrices, generate_synthetic,
                         load_synthetic_spec, run_all)
from .glance import GlanceEvent, GlanceRegion
from .hmm import TrainConfig
from .smote import SmoteConfig

log = logging.getLogger("glanceseq")

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE = 0, 2, 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _add_training_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--max-iters", type=int, default=500, help="EM iterations per restart (default 500)")
    g.add_argument("--tol", type=float, default=1e-6,
                   help="stop when relative log-likelihood gain is below this (default 1e-6)")
    g.add_argument("--restarts", type=int, default=5, help="random restarts per model (default 5)")
    g.add_argument("--floor", type=float, default=1e-6, help="minimum probability entry (default 1e-6)")
    g.add_argument("--k-neighbors", type=int, default=5, help="SMOTE neighbours (default 5)")
    g.add_argument("--train-fraction", type=float, default=0.8, help="per-class training share (default 0.8)")
    g.add_argument("--min-epochs", type=int, default=100,
                   help="minimum epochs per class for a problem to be used (default 100)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glanceseq", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", metavar="PATH", help="key = value file with flag defaults")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", help="validate glance/label CSVs into a dataset bundle")
    p.add_argument("--glances", required=True, metavar="PATH", help="glances.csv (epoch_id,t_ms,region)")
    p.add_argument("--labels", required=True, metavar="PATH", help="labels.csv (epoch_id,variable,value)")
    p.add_argument("--out", required=True, metavar="DATASET_PATH", help="bundle directory to write")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("evaluate", help="repeated-split evaluation of binary problems")
    p.add_argument("--dataset", required=True, metavar="PATH", help="dataset bundle directory")
    p.add_argument("--problems", nargs="+", default=["all"], metavar="NAME",
                   help="'all' or problem names/keys (default all)")
    p.add_argument("--repeats", type=int, default=10, help="random splits per problem, >= 2 (default 10)")
    p.add_argument("--seed", type=int, default=0, help="master seed; repeat r uses seed + r (default 0)")
    p.add_argument("--metric", choices=METRICS, default="balanced", help="headline metric (default balanced)")
    p.add_argument("--hidden", type=int, default=8, help="hidden states per HMM (default 8)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default $GLANCE_SEQ_THREADS or 1)")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    _add_training_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train", help="train and save a classifier for one problem")
    p.add_argument("--dataset", required=True, metavar="PATH", help="dataset bundle directory")
    p.add_argument("--problem", required=True, metavar="NAME", help="problem name or key")
    p.add_argument("--hidden", default="8", help="hidden states, or 'auto' to search 2..12 (default 8)")
    p.add_argument("--seed", type=int, default=0, help="seed for split, SMOTE and EM (default 0)")
    p.add_argument("--out", required=True, metavar="MODEL_PATH", help="model directory to write")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stream", help="replay an event file through a sliding 6 s window")
    p.add_argument("--model", required=True, metavar="MODEL_PATH", help="model directory from 'train'")
    p.add_argument("--events", required=True, metavar="PATH", help="t_ms,region CSV, or - for stdin")
    p.add_argument("--step-ms", type=int, default=250, help="emission step in ms (default 250)")
    p.add_argument("--threshold", type=float, default=0.0,
                   help="abstain when the log-likelihood margin is below this (default 0)")
    p.add_argument("--end-ms", type=int, default=None, help="stream end time (default: last event)")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("synth", help="sample a labelled dataset from two HMMs")
    p.add_argument("--spec", required=True, metavar="PATH", help="JSON synthetic spec")
    p.add_argument("--out", required=True, metavar="PREFIX",
                   help="writes PREFIX.glances.csv and PREFIX.labels.csv")
    p.set_defaults(func=cmd_synth)
    return parser


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def read_config(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser, args, argv):
    overlay = read_config(args.config)
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "func")}
    unknown = sorted(set(overlay) - set(actions))
    if unknown:
        raise CliError(f"{args.config}: unknown keys for '{args.command}': {', '.join(unknown)}")
    defaults = {}
    for key, value in overlay.items():
        action = actions[key]
        defaults[key] = value.replace(",", " ").split() if action.nargs == "+" else value
        # a config value satisfies a required flag
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _train_config(args, hidden: int, seed: int) -> TrainConfig:
    try:
        return TrainConfig(n_hidden=hidden, max_iters=args.max_iters, rel_tol=args.tol,
                           n_restarts=args.restarts, floor=args.floor, seed=seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _load_dataset(path) -> Dataset:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise CliError(f"{path}: not a dataset bundle (run 'glanceseq ingest' first)")
    return load_bundle(path)


def cmd_ingest(args) -> int:
    for p in (args.glances, args.labels):
        if not Path(p).is_file():
            raise CliError(f"{p}: no such file")
    d, report = ingest(args.glances, args.labels)
    for epoch_id, reason in report.rejected:
        print(f"REJECT {epoch_id} {reason}", file=sys.stderr)
    if report.accepted == 0:
        raise CliError("no usable epochs", EXIT_DEGENERATE)
    save_bundle(d, args.out, report)
    print(f"accepted {report.accepted} rejected {len(report.rejected)} -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.repeats < 2:
        raise CliError("--repeats must be >= 2 (a standard deviation needs two repeats)")
    d = _load_dataset(args.dataset)
    available = enumerate_problems(d, args.min_epochs)
    if args.problems == ["all"]:
        problems = available
    else:
        problems = []
        for name in args.problems:
            try:
                problems.append(find_problem(available, name))
            except KeyError:
                valid = "\n  ".join(p.name for p in available) or "(none)"
                raise CliError(f"unknown problem {name!r}; valid problems:\n  {valid}") from None
    if not problems:
        raise CliError("no viable binary problems in dataset", EXIT_DEGENERATE)
    workers = args.threads if args.threads is not None else default_workers()
    try:
        cfg = ExperimentConfig(n_repeats=args.repeats, train_fraction=args.train_fraction,
                               train_config=_train_config(args, args.hidden, args.seed),
                               smote_config=SmoteConfig(args.k_neighbors, args.seed),
                               metric=args.metric, master_seed=args.seed, workers=workers)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    table = run_all(d, cfg, problems)
    out = Path(args.out)
    atomic_write_text(out / "results.csv", table.to_csv())
    atomic_write_text(out / "results.txt", table.to_text())
    masses = {}
    for problem in problems:
        export_problem_matrices(problem, d, out / "matrices")
        masses[problem.name] = difference_mass(problem, d)
    rho = accuracy_difference_correlation(table, masses)
    if not math.isnan(rho):
        log.info("spearman(accuracy, difference L1 mass) = %.3f", rho)
    sys.stdout.write(table.to_text())
    if not table.rows:
        return EXIT_DEGENERATE
    return EXIT_OK


def _hidden_arg(value: str):
    if value == "auto":
        return "auto"
    try:
        n = int(value)
    except ValueError:
        raise CliError(f"--hidden must be an integer or 'auto', got {value!r}") from None
    if n < 1:
        raise CliError("--hidden must be >= 1")
    return n


def cmd_train(args) -> int:
    hidden = _hidden_arg(args.hidden)
    d = _load_dataset(args.dataset)
    problems = enumerate_problems(d, min_epochs=1)
    try:
        problem = find_problem(problems, args.problem)
    except KeyError:
        valid = "\n  ".join(p.name for p in enumerate_problems(d, args.min_epochs)) or "(none)"
        raise CliError(f"unknown problem {args.problem!r}; valid problems:\n  {valid}") from None
    n1, n2 = len(problem.epochs_1), len(problem.epochs_2)
    if min(n1, n2) < args.min_epochs:
        raise CliError(f"{problem.name}: class sizes {n1}/{n2} below --min-epochs {args.min_epochs}",
                       EXIT_DEGENERATE)
    try:
        ids_1, ids_2, test_ids_1, test_ids_2 = split(problem, args.train_fraction, args.seed)
    except DegenerateSplit as exc:
        raise CliError(str(exc), EXIT_DEGENERATE) from None
    train_1, train_2 = d.sequences(ids_1), d.sequences(ids_2)
    smote_cfg = SmoteConfig(args.k_neighbors, args.seed)
    if hidden == "auto":
        hidden = select_hidden_states(train_1, train_2, DEFAULT_HIDDEN_CANDIDATES,
                                      _train_config(args, 8, args.seed), smote_cfg)
        log.info("selected %d hidden states", hidden)
    cfg = _train_config(args, hidden, args.seed)
    c = train_binary(train_1, train_2, cfg, smote_cfg, problem.name, problem.class_names)
    save_classifier(c, args.out)
    pred_1 = [p.chosen_class for p in classify_many(c, d.sequences(test_ids_1))]
    pred_2 = [p.chosen_class for p in classify_many(c, d.sequences(test_ids_2))]
    print(f"{problem.name}: n_hidden={hidden} held-out balanced accuracy "
          f"{balanced_accuracy(pred_1, pred_2):.4f} -> {args.out}")
    return EXIT_OK


def _read_events(handle, name):
    reader = csv.reader(handle)
    header = next(reader, None)
    if header is None:
        return
    if [h.strip() for h in header] != ["t_ms", "region"]:
        raise ParseError("expected header t_ms,region", path=name, row=1)
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", path=name, row=lineno)
        t_text, region_text = (x.strip() for x in row)
        try:
            t_ms = int(t_text)
        except ValueError:
            raise ParseError(f"bad timestamp {t_text!r}", path=name, row=lineno, token=t_text) from None
        try:
            region = GlanceRegion[region_text.upper()]
        except KeyError:
            raise ParseError(f"unknown region {region_text!r}", path=name, row=lineno,
                             token=region_text) from None
        yield GlanceEvent(region, t_ms)


def cmd_stream(args) -> int:
    if args.step_ms <= 0:
        raise CliError("--step-ms must be positive")
    model_dir = Path(args.model)
    if not (model_dir / "manifest.json").exists():
        raise CliError(f"{model_dir}: not a model directory")
    c = load_classifier(model_dir)
    if args.events == "-":
        events = list(_read_events(sys.stdin, "<stdin>"))
    else:
        if not Path(args.events).is_file():
            raise CliError(f"{args.events}: no such file")
        with open(args.events, encoding="utf-8", newline="") as fh:
            events = list(_read_events(fh, args.events))
    for record in sliding_window_classify(events, c, args.step_ms, args.threshold, args.end_ms):
        print(record.to_json())
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        info = load_synthetic_spec(args.spec)
    except FileNotFoundError:
        raise CliError(f"{args.spec}: no such file") from None
    except (KeyError, ValueError) as exc:
        raise CliError(f"{args.spec}: invalid synthetic spec: {exc}") from None
    spec = info["spec"]
    value_1, value_2 = info["values"]
    labelled = [(seq, value_1 if label == 1 else value_2) for seq, label in generate_synthetic(spec)]
    d = sequences_to_dataset(labelled, info["variable"])
    atomic_write_text(f"{args.out}.glances.csv", glances_csv_text(d))
    atomic_write_text(f"{args.out}.labels.csv", labels_csv_text(d))
    bayes = bayes_accuracy_estimate(spec.model_1, spec.model_2, info["bayes_samples"], spec.seed)
    print(f"bayes_accuracy {bayes:.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            try:
                args = _apply_config(parser, args, argv)
            except SystemExit as exc:
                return int(exc.code or 0)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except MalformedStream as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateSplit, EmptyInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except GlanceSeqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
