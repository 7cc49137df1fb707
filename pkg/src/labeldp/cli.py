"""``labeldp`` command line.

Exit status 0 on success, 1 on usage errors, 2 on data or solver errors (and
on a failed ``verify``).  Diagnostics go to standard error; set
``LABELDP_LOG`` to ``error``, ``info`` or ``debug`` for more of them.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import secrets
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis, core, mechanisms, optlp, pipeline
from .errors import LabelDPError, ParameterError

LOG_ENV = "LABELDP_LOG"
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("labeldp.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- small parsing helpers --------------------------------------------------

def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _prior_epsilon(text: str):
    return "auto" if text == "auto" else _positive_float(text)


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated list of numbers") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated list of integers") from None


def _seed(args) -> core.RandomSource:
    seed = args.seed
    if seed is None:
        seed = secrets.randbits(63)
        print(f"seed: {seed}", file=sys.stderr)
    return core.RandomSource(seed)


def _label_set(args, labels=None) -> core.LabelSet:
    if getattr(args, "label_set", None):
        return core.LabelSet(args.label_set)
    if labels is None:
        raise ParameterError("pass --label-set or a labels file")
    return core.LabelSet(np.unique(labels))


def _write_text(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _split_for(args, k: int, n: int) -> pipeline.BudgetSplit:
    if args.prior_epsilon == "auto":
        return pipeline.split_budget(args.epsilon, k, n)
    if not args.prior_epsilon < args.epsilon:
        raise ParameterError("--prior-epsilon must be smaller than --epsilon")
    return pipeline.BudgetSplit(args.prior_epsilon, args.epsilon - args.prior_epsilon)


def _report(matrix: core.RandomizerMatrix, prior: core.Prior, loss: str) -> dict:
    pruned = optlp.prune_support(matrix, prior=prior).matrix
    structure = optlp.check_structure(pruned)
    moments = analysis.label_moments(matrix)
    try:
        nll = analysis.noisy_label_loss(matrix, prior, loss)
    except LabelDPError:
        nll = None
    return {
        "noisy_label_loss": nll,
        "per_label_bias": moments.bias.tolist(),
        "per_label_variance": moments.variance.tolist(),
        "support_size": structure.support_size,
        "structure_flags": structure.flags,
    }


def _prior_for(args, matrix: core.RandomizerMatrix) -> core.Prior:
    if getattr(args, "prior_file", None):
        prior = pipeline.load_prior(args.prior_file)
    elif getattr(args, "labels_file", None):
        ys = pipeline.read_labels_csv(args.labels_file)
        counts = np.bincount(matrix.inputs.indices(ys), minlength=len(matrix.inputs))
        prior = core.Prior.from_weights(matrix.inputs, counts)
    else:
        prior = core.Prior.uniform(matrix.inputs)
    if prior.labels != matrix.inputs:
        raise ParameterError("prior labels differ from the randomizer's input labels")
    return prior


# -- subcommands ------------------------------------------------------------

def cmd_compute(args) -> int:
    if args.prior_file:
        prior = pipeline.load_prior(args.prior_file)
        eps2 = grid_eps = args.epsilon
        print(f"epsilon1: 0 (prior supplied)\nepsilon2: {eps2!r}")
    else:
        ys = pipeline.read_labels_csv(args.labels_file)
        labels = _label_set(args, ys)
        split = _split_for(args, len(labels), ys.size)
        prior = pipeline.estimate_prior_laplace(ys, labels, split.epsilon1, _seed(args))
        eps2 = split.epsilon2
        grid_eps = eps2 if args.grid_epsilon == "epsilon2" else split.epsilon1
        print(f"epsilon1: {split.epsilon1!r}\nepsilon2: {eps2!r}")
    labels = prior.labels
    if len(labels) == 1:
        matrix = core.RandomizerMatrix(labels, core.OutputGrid(labels.values), [[1.0]], eps2)
    else:
        grid = optlp.feasible_output_set(labels, grid_eps, args.grid)
        matrix = optlp.solve_opt_unbiased(prior, grid, eps2, backend=args.backend,
                                          dump_path=args.lp_dump).matrix
        if not args.no_prune:
            matrix = optlp.prune_support(matrix, prior=prior).matrix
    core.save_randomizer(matrix, args.out)
    log.info("wrote %s with %d outputs", args.out, len(matrix.outputs))
    return EXIT_OK


def cmd_randomize(args) -> int:
    ys = pipeline.read_labels_csv(args.input)
    rng = _seed(args)
    build_rng, sample_rng = rng.spawn(2)
    if args.randomizer:
        mech = mechanisms.FiniteMechanism(core.load_randomizer(args.randomizer))
    else:
        if args.epsilon is None:
            raise UsageError("--mechanism needs --epsilon")
        labels = _label_set(args, ys)
        choice = pipeline.make_mechanism(args.mechanism, labels, args.epsilon, build_rng, labels=ys,
                                         grid_size=args.grid, prior_epsilon=args.prior_epsilon,
                                         backend=args.backend)
        mech = choice.mechanism
        if choice.split is not None:
            print(f"epsilon1: {choice.split.epsilon1!r}\nepsilon2: {choice.split.epsilon2!r}",
                  file=sys.stderr)
    noisy = mech.privatize(ys, sample_rng)
    _write_text(args.out, pipeline.format_noisy_csv(noisy, ys if args.keep_original else None))
    return EXIT_OK


def cmd_estimate_prior(args) -> int:
    ys = pipeline.read_labels_csv(args.labels_file)
    labels = _label_set(args, ys)
    prior = pipeline.estimate_prior_laplace(ys, labels, args.epsilon, _seed(args))
    out = pipeline.prior_to_dict(prior)
    out["epsilon"] = args.epsilon
    _write_text(args.out, _dump_json(out))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    matrix = core.load_randomizer(args.randomizer)
    _write_text(args.out, _dump_json(_report(matrix, _prior_for(args, matrix), args.loss)))
    return EXIT_OK


def cmd_verify(args) -> int:
    matrix = core.load_randomizer(args.randomizer)
    prior = core.Prior.uniform(matrix.inputs)
    report = _report(matrix, prior, "squared")
    check = core.validate_randomizer(matrix, args.tol, dp_rtol=args.tol)
    report.update(unbiased=check.unbiased, dp_ok=check.dp_satisfied,
                  row_stochastic=check.row_stochastic, max_bias=check.max_bias,
                  worst_dp_ratio=check.worst_dp_ratio,
                  support_ok=report["support_size"] <= 2 * len(matrix.inputs))
    _write_text(None, _dump_json(report))
    ok = check.ok and report["support_ok"]
    return EXIT_OK if ok else EXIT_DATA


def cmd_simulate(args) -> int:
    from .sim import ExperimentConfig, run_experiment

    config = ExperimentConfig.load(args.config)
    report = run_experiment(config, workers=args.workers)
    _write_text(args.out_csv, report.to_csv())
    if args.out_json:
        _write_text(args.out_json, report.to_json())
    failed = sum(not c.ok for c in report.cells)
    if failed:
        print(f"{failed} of {len(report.cells)} cells failed", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.prior_file:
        prior = pipeline.load_prior(args.prior_file)
    elif args.labels_file:
        ys = pipeline.read_labels_csv(args.labels_file)
        labels = _label_set(args, ys)
        prior = core.Prior.from_weights(labels, np.bincount(labels.indices(ys), minlength=len(labels)))
    elif args.label_set:
        prior = core.Prior.uniform(core.LabelSet(args.label_set))
    else:
        raise UsageError("sweep needs --prior-file, --labels-file or --label-set")
    meshes = sorted(set(args.mesh))

    def one(eps):
        return eps, analysis.discretization_sweep(prior, prior.labels, eps, meshes,
                                                  backend=args.backend)

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = list(pool.map(one, args.epsilons))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epsilon", "mesh", "delta", "loss", "bound_ok"])
    for eps, points in results:
        for p in points:
            writer.writerow([repr(eps), p.mesh, repr(p.delta), repr(p.loss), int(p.bound_ok)])
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="labeldp", description="Label-private randomizers for regression labels.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def seed_arg(p):
        p.add_argument("--seed", type=int, help="RNG seed; one is generated and printed if omitted")

    def label_set_arg(p):
        p.add_argument("--label-set", type=_float_list, metavar="Y1,Y2,...",
                       help="label set (default: the distinct labels in the file)")

    def backend_arg(p):
        p.add_argument("--backend", choices=("auto", "simplex", "highs"), default="auto",
                       help="LP solver (default: auto)")

    p = sub.add_parser("compute", help="solve for the optimal unbiased randomizer")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--labels-file", help="CSV of labels; the prior is estimated privately")
    src.add_argument("--prior-file", help="prior JSON; the whole budget goes to the randomizer")
    p.add_argument("--epsilon", type=_positive_float, required=True, help="total privacy budget")
    p.add_argument("--prior-epsilon", type=_prior_epsilon, default="auto",
                   help="budget for the prior estimate, or 'auto' (default)")
    p.add_argument("--grid", type=int, default=optlp.DEFAULT_GRID_SIZE,
                   help="number of output grid points (default: %(default)s)")
    p.add_argument("--grid-epsilon", choices=pipeline.GRID_EPSILONS, default="epsilon2",
                   help="which budget sets the grid endpoints (default: %(default)s)")
    p.add_argument("--no-prune", action="store_true", help="keep near-zero output columns")
    p.add_argument("--lp-dump", help="also write the LP in CPLEX LP format to this path")
    p.add_argument("--out", required=True, help="randomizer JSON to write")
    label_set_arg(p)
    backend_arg(p)
    seed_arg(p)
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("randomize", help="privatize a label file")
    how = p.add_mutually_exclusive_group(required=True)
    how.add_argument("--randomizer", help="randomizer JSON to apply")
    how.add_argument("--mechanism", choices=pipeline.MECHANISM_NAMES, help="baseline mechanism")
    p.add_argument("--in", dest="input", required=True, help="CSV of labels")
    p.add_argument("--out", help="CSV to write (default: standard output)")
    p.add_argument("--epsilon", type=_positive_float, help="budget for --mechanism")
    p.add_argument("--prior-epsilon", type=_prior_epsilon, default="auto",
                   help="prior budget for prior-dependent mechanisms (default: auto)")
    p.add_argument("--grid", type=int, default=optlp.DEFAULT_GRID_SIZE,
                   help="grid size for opt-unbiased (default: %(default)s)")
    p.add_argument("--keep-original", action="store_true",
                   help="also write the original labels (not private)")
    label_set_arg(p)
    backend_arg(p)
    seed_arg(p)
    p.set_defaults(func=cmd_randomize)

    p = sub.add_parser("estimate-prior", help="private label histogram")
    p.add_argument("--labels-file", required=True, help="CSV of labels")
    p.add_argument("--epsilon", type=_positive_float, required=True, help="privacy budget")
    p.add_argument("--out", help="prior JSON to write (default: standard output)")
    label_set_arg(p)
    seed_arg(p)
    p.set_defaults(func=cmd_estimate_prior)

    p = sub.add_parser("evaluate", help="loss, bias, variance and structure report")
    p.add_argument("randomizer", help="randomizer JSON")
    prior_src = p.add_mutually_exclusive_group()
    prior_src.add_argument("--prior-file", help="prior JSON (default: uniform)")
    prior_src.add_argument("--labels-file", help="use the empirical histogram of these labels")
    p.add_argument("--loss", choices=[k.value for k in core.LossKind], default="squared")
    p.add_argument("--out", help="report JSON (default: standard output)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="exit 0 iff unbiased, DP and support <= 2|Y|")
    p.add_argument("randomizer", help="randomizer JSON")
    p.add_argument("--tol", type=_positive_float, default=core.LP_TOL,
                   help="bias and DP-ratio tolerance (default: %(default)s)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="run a synthetic training experiment")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out-csv", required=True, help="per-cell CSV report")
    p.add_argument("--out-json", help="aggregated JSON report")
    p.add_argument("--workers", type=int, default=1, help="parallel cells (default: 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="optimal loss across grid sizes and budgets")
    prior_src = p.add_mutually_exclusive_group()
    prior_src.add_argument("--prior-file", help="prior JSON")
    prior_src.add_argument("--labels-file", help="empirical prior from a label CSV")
    p.add_argument("--epsilons", type=_float_list, required=True, metavar="E1,E2,...")
    p.add_argument("--mesh", type=_int_list, default=[16, 64, 256], metavar="N1,N2,...",
                   help="grid sizes (default: 16,64,256)")
    p.add_argument("--out", help="CSV to write (default: standard output)")
    p.add_argument("--workers", type=int, default=1, help="parallel budgets (default: 1)")
    label_set_arg(p)
    backend_arg(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "error").strip().lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"{LOG_ENV} must be one of {sorted(LOG_LEVELS)}, not {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"labeldp: {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except (LabelDPError, ValueError) as exc:
        print(f"labeldp: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
