"""Command-line interface: ``smm {train,eval,tune,synth,backfit,curve}``.

Every option can also come from a ``--config`` file of ``key = value``
lines (keys are option names without the leading dashes); options given on
the command line win.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .backfit import BackfitReport, mixture_weight_backfit, structure_backfit
from .data import DataError, load_csv, load_schema, write_csv
from .evaluation import (
    CurveRecord,
    CurveResult,
    TuneConfig,
    accuracy,
    curve_experiment,
    learn_baseline,
    stage_curve,
    task_score,
    tune,
    tune_baseline,
    write_curves,
)
from .io import load_model, save_model
from .mixture import (
    NAMED_SCHEDULES,
    AddComponentConfig,
    LearnerConfig,
    NumericError,
    Schedule,
    fit_smm,
)
from .synth import load_spec, sample
from .tree import LearningError, ScoreKind

log = logging.getLogger("smm")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_engine_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine")
    g.add_argument("--task", choices=["auto", "density", "classification"], default="auto",
                   help="auto: classification when the schema names a target (default: %(default)s)")
    g.add_argument("-K", "--components", type=int, default=16,
                   help="number of mixture components (default: %(default)s)")
    g.add_argument("--max-leaves", type=int, default=8,
                   help="leaf bound per component tree (default: %(default)s)")
    g.add_argument("--pi-init", type=float, default=0.2,
                   help="initial weight of each new component (default: %(default)s)")
    g.add_argument("--initial", choices=["marginal", "uniform"], default="marginal",
                   help="initial guess for a new component (default: %(default)s)")
    g.add_argument("--alpha", type=float, default=1.0,
                   help="multinomial leaf smoothing (default: %(default)s)")
    g.add_argument("--min-split-weight", type=float, default=1.0,
                   help="minimum fractional count in each child of a split (default: %(default)s)")
    g.add_argument("--learn-score", default="bic",
                   help="tree growth score: ml, bic, bic-fractional, penalized:<kappa> "
                        "(default: %(default)s)")
    g.add_argument("--gate-score", default="bic",
                   help="score deciding whether a relearned component is kept (default: %(default)s)")
    g.add_argument("--schedule", default="5-5-20",
                   help="s1-s2-s3 structural EM schedule (default: %(default)s)")
    g.add_argument("--max-outer", type=int, default=20,
                   help="cap on outer iterations (default: %(default)s)")
    g.add_argument("--conv-tol", type=float, default=1e-5,
                   help="convergence ratio threshold (default: %(default)s)")
    g.add_argument("--gate", choices=["none", "bic", "ml"], default="none",
                   help="reject stages that do not improve the overall score (default: %(default)s)")
    g.add_argument("--seed", type=int, default=0, help="random seed (default: %(default)s)")
    g.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker processes for independent grid cells (default: all cores)")


def _engine_config(args, schema) -> AddComponentConfig:
    task = args.task
    if task == "auto":
        task = "classification" if schema.target is not None else "density"
    if task == "classification" and schema.target is None:
        raise UsageError("classification needs a 'target:' line in the schema")
    sched = NAMED_SCHEDULES.get(args.schedule) or Schedule.parse(args.schedule)
    sched = replace(sched, max_outer=args.max_outer, conv_tol=args.conv_tol)
    learner = LearnerConfig(
        task=task,
        max_leaves=args.max_leaves,
        score=ScoreKind.parse(args.learn_score),
        alpha=args.alpha,
        min_split_weight=args.min_split_weight,
    )
    return AddComponentConfig(
        learner=learner,
        pi_init=args.pi_init,
        initial=args.initial,
        schedule=sched,
        gate_score=ScoreKind.parse(args.gate_score),
    )


def _gate(args):
    return None if args.gate == "none" else args.gate


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    schema = load_schema(args.schema)
    train = load_csv(args.train, schema)
    test = load_csv(args.test, schema) if args.test else None
    cfg = _engine_config(args, schema)
    t0 = time.perf_counter()
    stages = fit_smm(train, args.components, cfg, gate=_gate(args))
    save_model(stages[-1], args.model_out)
    curve = stage_curve(stages, train, test, args.schedule, t0=t0)
    if args.report_out:
        write_curves([curve], args.report_out, timing=args.timing)
    final = curve.records[-1]
    print(f"components={stages[-1].n_components} train_log_score={final.train_log_score!r}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    test = load_csv(args.test, model.schema)
    score = task_score(model, test)
    acc = accuracy(model, test) if model.schema.target is not None else None
    print(f"log_score={score!r}")
    if acc is not None:
        print(f"accuracy={acc!r}")
    if args.report_out:
        with open(args.report_out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_cases", "log_score", "accuracy"])
            w.writerow([len(test), repr(score), "" if acc is None else repr(acc)])
    return 0


def cmd_tune(args) -> int:
    schema = load_schema(args.schema)
    data = load_csv(args.train, schema)
    cfg = _engine_config(args, schema)
    tcfg = TuneConfig(
        leaf_grid=tuple(_int_list(args.leaf_grid)),
        pi_grid=tuple(_float_list(args.pi_grid)),
        fraction=args.fraction,
        seed=args.seed,
        n_components=args.tune_components,
        max_outer=args.tune_max_outer,
        n_jobs=args.threads,
    )
    result = tune(data, tcfg, cfg)
    result.write_table(args.report_out)
    if args.surface_out:
        result.write_surface(args.surface_out)
    print(f"best max_leaves={result.best_leaves} pi_init={result.best_pi!r}")
    return 0


def cmd_synth(args) -> int:
    spec = load_spec(args.spec, seed=args.seed)
    d = sample(spec, args.n, seed=args.seed)
    write_csv(d, args.out)
    if args.schema_out:
        Path(args.schema_out).write_text(spec.schema.to_text(), encoding="utf-8")
    return 0


def cmd_backfit(args) -> int:
    model = load_model(args.model)
    train = load_csv(args.train, model.schema)
    report = BackfitReport()
    if args.mode == "weights":
        out = mixture_weight_backfit(model, train, args.max_iters, args.tol, report)
    else:
        cfg = _engine_config(args, model.schema)
        out = structure_backfit(model, train, cfg.schedule, cfg.learner, cfg.gate_score, report)
    report.to_csv(args.report_out)
    if args.model_out:
        save_model(out, args.model_out)
    print(f"train_ll {report.train_ll[0]!r} -> {report.train_ll[-1]!r}")
    return 0


def cmd_curve(args) -> int:
    schema = load_schema(args.schema)
    train = load_csv(args.train, schema)
    test = load_csv(args.test, schema)
    cfg = _engine_config(args, schema)
    curves = curve_experiment(
        train, test, cfg, args.components, _str_list(args.schedules), _str_list(args.backfit),
        gate=_gate(args),
    )
    if args.baseline:
        kappa, gamma, _ = tune_baseline(train, seed=args.seed, task=cfg.learner.task,
                                        alpha=cfg.learner.alpha)
        base = learn_baseline(train, kappa, gamma, cfg.learner.task, cfg.learner.alpha)
        has_target = schema.target is not None
        curves.append(
            CurveResult(
                f"baseline(kappa={kappa},gamma={gamma})",
                "none",
                [CurveRecord(1, task_score(base, train), task_score(base, test),
                             accuracy(base, test) if has_target else None, 0.0)],
            )
        )
    write_curves(curves, args.report_out, timing=args.timing)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smm", description="Staged mixture modeling with structural EM.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="key = value file supplying option defaults")
        sp.set_defaults(func=func)
        return sp

    sp = add("train", cmd_train, "Fit a staged mixture and save it with its per-stage curve.")
    sp.add_argument("--train", required=True, help="training CSV")
    sp.add_argument("--schema", required=True, help="schema file")
    sp.add_argument("--test", help="optional test CSV scored at every stage")
    sp.add_argument("--model-out", required=True, help="model file to write")
    sp.add_argument("--report-out", help="per-stage curve CSV")
    sp.add_argument("--timing", action="store_true", help="add a wall_time column to reports")
    _add_engine_options(sp)

    sp = add("eval", cmd_eval, "Score a saved model on a test CSV.")
    sp.add_argument("--model", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--report-out", help="one-row CSV: n_cases,log_score,accuracy")

    sp = add("tune", cmd_tune, "Grid-search max leaves and initial weight on a 70/30 split.")
    sp.add_argument("--train", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--leaf-grid", default="2,4,8,16", help="default: %(default)s")
    sp.add_argument("--pi-grid", default="0.05,0.1,0.2,0.3,0.5", help="default: %(default)s")
    sp.add_argument("--fraction", type=float, default=0.7, help="default: %(default)s")
    sp.add_argument("--tune-components", type=int, default=8, help="default: %(default)s")
    sp.add_argument("--tune-max-outer", type=int, default=5, help="default: %(default)s")
    sp.add_argument("--report-out", required=True, help="CSV: max_leaves,pi_init,holdout_score")
    sp.add_argument("--surface-out", help="CSV: holdout score by pi_init and component count")
    _add_engine_options(sp)

    sp = add("synth", cmd_synth, "Sample a CSV from a generative spec file.")
    sp.add_argument("--spec", required=True)
    sp.add_argument("-n", type=int, required=True, help="number of cases")
    sp.add_argument("--seed", type=int, default=0, help="default: %(default)s")
    sp.add_argument("--out", required=True)
    sp.add_argument("--schema-out", help="also write the spec's schema file")

    sp = add("backfit", cmd_backfit, "Backfit a saved model and report the training LL trace.")
    sp.add_argument("--model", required=True)
    sp.add_argument("--train", required=True)
    sp.add_argument("--mode", choices=["weights", "structure"], default="weights")
    sp.add_argument("--max-iters", type=int, default=100, help="default: %(default)s")
    sp.add_argument("--tol", type=float, default=1e-6, help="default: %(default)s")
    sp.add_argument("--report-out", required=True, help="CSV: iteration,train_ll,pi_1..pi_n")
    sp.add_argument("--model-out")
    _add_engine_options(sp)

    sp = add("curve", cmd_curve, "Per-stage test curves for schedules and backfit modes.")
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--schedules", default="SMM", help="comma list, e.g. SMM,20-1-1,1-20-1,1-1-1")
    sp.add_argument("--backfit", default="none", help="comma list of none,weights,structure")
    sp.add_argument("--baseline", action="store_true", help="add a tuned single-model baseline row")
    sp.add_argument("--report-out", required=True)
    sp.add_argument("--timing", action="store_true", help="add a wall_time column")
    _add_engine_options(sp)
    return p


def _read_config(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            k, v = (x.strip() for x in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _apply_config(parser, argv):
    """Install ``--config`` values as subcommand defaults, then parse."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known_args, _ = pre.parse_known_args(argv)
    if not known_args.config:
        return parser.parse_args(argv)
    subparsers = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    command = next((tok for tok in argv if tok in subparsers.choices), None)
    if command is None:
        return parser.parse_args(argv)
    sub = subparsers.choices[command]
    values = _read_config(known_args.config)
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in values.items():
        if k not in known or k in ("help", "config"):
            raise UsageError(f"{known_args.config}: unknown option {k!r}")
        action = known[k]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        else:
            defaults[k] = action.type(v) if action.type else v
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except UsageError as exc:
        print(f"smm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, LearningError, FileNotFoundError) as exc:
        print(f"smm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"smm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"smm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
