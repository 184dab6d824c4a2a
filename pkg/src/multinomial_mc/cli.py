"""Command-line entry point.

Usage: ``multinomial-mc --command {simulate,fit,crossval,evaluate,bench,reproduce} ...``

Options may also come from a JSON file given with ``--config`` whose keys are
the long flag names without dashes (``gamma_scale`` for ``--gamma-scale``);
flags on the command line take precedence.

Exit codes: 0 success, 2 bad arguments, 3 bad or missing data, 4 numerical
failure, 5 solver hit its iteration cap, 6 file system error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .data import (DataFormatError, SyntheticSpec, generate_truth, load_dataset,
                   sample_observations, save_dataset, spec_to_dict)
from .evaluation import evaluate, write_csv
from .gaussian import GaussianFit
from .links import ConditionalLogitLink
from .modelio import load_model, save_model
from .solver import NumericalError, SolverConfig
from .tensor import ParameterTensor, StructuralError, reconstruct
from .tuning import (GAUSSIAN, LOGISTIC, cross_validate, fit_model, fit_path,
                     predict_probabilities)

logger = logging.getLogger("multinomial_mc")

EXIT_OK, EXIT_PARSE, EXIT_DATA, EXIT_NUMERICAL, EXIT_NONCONVERGED, EXIT_IO = 0, 2, 3, 4, 5, 6
COMMANDS = ("simulate", "fit", "crossval", "evaluate", "bench", "reproduce")
TABLE_ROWS = {GAUSSIAN: "Gaussian prediction error", LOGISTIC: "Logistic prediction error"}


class UsageError(Exception):
    pass


class NotConverged(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multinomial-mc",
                                description="Low-rank matrix completion over finite alphabets.")
    p.add_argument("--command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with default option values")
    p.add_argument("--model", choices=(LOGISTIC, GAUSSIAN))
    p.add_argument("--m1", type=int)
    p.add_argument("--m2", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--gamma-scale", type=float)
    p.add_argument("--lambda", dest="lam", type=float,
                   help="regularization level; cross-validated when omitted")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iters", type=int, help="outer iteration cap per slice")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-seed", type=int,
                   help="seed of the simulated sample (default: --seed + 1)")
    p.add_argument("--threads", type=int)
    p.add_argument("--data", help="dataset container, or MovieLens u.data for reproduce")
    p.add_argument("--test", help="held-out dataset container (evaluate)")
    p.add_argument("--truth", help="true tensor .npy written by simulate (evaluate)")
    p.add_argument("--model-file", help="fitted model .npz (evaluate)")
    p.add_argument("--out", help="output path or prefix")
    p.add_argument("--folds", type=int)
    p.add_argument("--sizes", help="bench sizes as size:n pairs, e.g. 1000:100000,3000:1000000")
    p.add_argument("--seeds", type=int, help="number of replicates (reproduce)")
    p.add_argument("--tables", help="comma list from table2,table3,figure1,table4 (reproduce)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


DEFAULTS = {"model": LOGISTIC, "classes": 2, "seed": 0, "sample_seed": None,
            "threads": os.cpu_count() or 1, "folds": 5, "seeds": 5, "gamma_scale": None, "epsilon": None, "max_iters": 2000}


def resolve_config(argv) -> argparse.Namespace:
    """Parse flags, layering them over the JSON file and the defaults."""
    parser = build_parser()
    args = parser.parse_args(argv)
    merged = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            parser.error(f"{args.config}: invalid JSON: {exc}")
        if not isinstance(file_cfg, dict):
            parser.error(f"{args.config}: expected a JSON object")
        known = {a.dest for a in parser._actions}
        unknown = set(file_cfg) - known
        if unknown:
            parser.error(f"{args.config}: unknown keys {sorted(unknown)}")
        merged.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    merged.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    ns = argparse.Namespace(**{a.dest: None for a in parser._actions if a.dest != "help"})
    for k, v in merged.items():
        setattr(ns, k, v)
    if ns.command is None:
        parser.error("--command is required")
    if ns.command not in COMMANDS:
        parser.error(f"unknown command {ns.command!r}")
    return ns


def _require(cfg, *names):
    missing = [n for n in names if getattr(cfg, n, None) is None]
    if missing:
        raise UsageError(f"--command {cfg.command} requires " +
                         ", ".join("--" + n.replace("_", "-") for n in missing))


def _solver_config(cfg, lam=1.0) -> SolverConfig:
    return SolverConfig(lam=lam, epsilon=cfg.epsilon, max_outer_iters=cfg.max_iters,
                        seed=cfg.seed)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def cmd_simulate(cfg) -> int:
    """Write ``<out>`` (dataset container) and ``<out>.truth.npy`` (true slices)."""
    _require(cfg, "m1", "m2", "n", "out")
    if cfg.n < 1:
        raise ValueError("--n must be at least 1")
    kw = {} if cfg.gamma_scale is None else {"gamma_scale": cfg.gamma_scale}
    spec = SyntheticSpec(cfg.m1, cfg.m2, cfg.classes, seed=cfg.seed, **kw)
    truth = generate_truth(spec)
    sample_seed = cfg.seed + 1 if cfg.sample_seed is None else cfg.sample_seed
    obs = sample_observations(truth, None, cfg.n, seed=sample_seed)
    meta = {"spec": spec_to_dict(spec), "sampling": "uniform", "sample_seed": sample_seed}
    save_dataset(cfg.out, obs, meta)
    np.save(cfg.out + ".truth.npy", truth.slices)
    logger.info("wrote %d observations to %s", obs.n, cfg.out)
    return EXIT_OK


def cmd_fit(cfg) -> int:
    """Write ``<out>.npz`` (model) and ``<out>.json`` (report); exit 5 if any slice hit the cap."""
    _require(cfg, "data", "out")
    obs, _ = load_dataset(cfg.data)
    link = ConditionalLogitLink(obs.n_classes) if cfg.model == LOGISTIC else None
    cv = None
    if cfg.lam is None:
        cv = cross_validate(obs, cfg.model, link, _solver_config(cfg), folds=cfg.folds,
                            seed=cfg.seed, threads=cfg.threads)
        lam = cv.best_lambda
        fitted = fit_path(obs, cfg.model, cv.lambdas[:cv.best_index + 1],
                          _solver_config(cfg, lam), link)[-1]
    else:
        lam = cfg.lam
        fitted = fit_model(obs, cfg.model, _solver_config(cfg, lam), link)
    reports = [fitted.report] if isinstance(fitted, GaussianFit) else fitted
    converged = all(r.converged for r in reports)
    report = {"model": cfg.model, "lambda": lam, "n": obs.n, "m1": obs.n_rows, "m2": obs.n_cols,
              "classes": obs.n_classes, "seed": cfg.seed, "converged": converged,
              "slices": [r.summary() for r in reports]}
    if isinstance(fitted, GaussianFit):
        report["sigma_hat"] = fitted.sigma_hat
    if cv is not None:
        report["cv"] = {"lambdas": cv.lambdas, "scores": cv.scores, "ceiling": cv.ceiling}
    save_model(cfg.out + ".npz", fitted, obs.n_classes, lam)
    _write_json(cfg.out + ".json", report)
    if not converged:
        raise NotConverged(f"solver stopped at the iteration cap; report flagged in {cfg.out}.json")
    return EXIT_OK


def cmd_crossval(cfg) -> int:
    _require(cfg, "data", "out")
    obs, _ = load_dataset(cfg.data)
    link = ConditionalLogitLink(obs.n_classes) if cfg.model == LOGISTIC else None
    cv = cross_validate(obs, cfg.model, link, _solver_config(cfg), folds=cfg.folds,
                        seed=cfg.seed, threads=cfg.threads)
    _write_json(cfg.out, {"model": cfg.model, "best_lambda": cv.best_lambda,
                          "lambdas": cv.lambdas, "scores": cv.scores,
                          "fold_scores": cv.fold_scores, "ceiling": cv.ceiling,
                          "folds": cfg.folds, "seed": cfg.seed})
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    """Score a saved model on a test container; with ``--truth`` also KL/Hellinger/Frobenius."""
    _require(cfg, "model_file", "test", "out")
    saved = load_model(cfg.model_file)
    test, _ = load_dataset(cfg.test)
    link = ConditionalLogitLink(saved.n_classes)
    fitted = saved.fitted()
    probs = predict_probabilities(fitted, test.rows, test.cols, saved.n_classes, link)
    true_probs = est_probs = estimate = truth = None
    if cfg.truth:
        truth = ParameterTensor(np.load(cfg.truth))
        true_probs = link.class_probabilities(truth.vectors())
        est_probs = experiments.full_probabilities(fitted, link, saved.n_classes)
        if saved.model == LOGISTIC:
            estimate = ParameterTensor(np.stack([reconstruct(d) for d in saved.decompositions]))
        else:
            truth = None
    rep = evaluate(saved.model, probs, test, true_probs, est_probs, estimate, truth,
                   lam=saved.lam, n=test.n, seed=cfg.seed)
    Path(cfg.out).write_text(rep.to_json() + "\n")
    with open(cfg.out + ".csv", "w", newline="") as fh:
        write_csv([rep.row()], fh)
    return EXIT_OK


def _parse_sizes(text):
    try:
        return [tuple(int(x) for x in item.split(":")) for item in text.split(",")]
    except ValueError:
        raise UsageError(f"bad --sizes {text!r}; expected size:n pairs") from None


def cmd_bench(cfg) -> int:
    _require(cfg, "out")
    sizes = _parse_sizes(cfg.sizes) if cfg.sizes else experiments.BENCH_SIZES
    rows = experiments.bench(sizes, seed=cfg.seed, epsilon=cfg.epsilon)
    fields = ["size", "n", "wall_time", "peak_atoms", "iterations", "lam", "converged"]
    with open(cfg.out, "w", newline="") as fh:
        write_csv([vars(r) for r in rows], fh, fields)
    return EXIT_OK if len(rows) == len(sizes) else EXIT_NUMERICAL


def _table_rows(results, ns, seeds):
    """Table-shaped rows: one per (metric row, seed) plus the seed average."""
    rows = []
    for model in (GAUSSIAN, LOGISTIC):
        for seed in list(seeds) + ["mean"]:
            row = {"row": TABLE_ROWS[model], "seed": seed}
            for n in ns:
                vals = [results[(n, s)][model].prediction_error
                        for s in (seeds if seed == "mean" else [seed])]
                row[str(n)] = float(np.mean(vals))
            rows.append(row)
    return rows


def _simulate_grid(cfg, m1, m2, K, ns, seeds):
    out = {}
    for n in ns:
        for seed in seeds:
            reps = experiments.run_simulation(m1, m2, K, n, seed, folds=cfg.folds,
                                              epsilon=cfg.epsilon, threads=cfg.threads,
                                              gamma_scale=cfg.gamma_scale)
            out[(n, seed)] = {r.model: r for r in reps}
    return out


def cmd_reproduce(cfg) -> int:
    """Table-shaped CSVs in the ``--out`` directory.

    ``table2.csv`` (K=2) and ``table3.csv`` (K=5) hold prediction errors per
    sample size; ``figure1.csv`` per-class KL for both grid sizes;
    ``table4.csv`` MovieLens one-vs-rest and multinomial errors. MovieLens rows
    are skipped with a warning unless ``table4`` is requested explicitly.
    """
    _require(cfg, "out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    requested = cfg.tables.split(",") if cfg.tables else None
    tables = requested or ["table2", "table3", "figure1", "table4"]
    seeds = list(range(cfg.seed, cfg.seed + cfg.seeds))
    m1, m2 = cfg.m1 or 1000, cfg.m2 or 600
    ns = [cfg.n] if cfg.n else list(experiments.TABLE2_N)
    cache = {}
    for name, K in (("table2", 2), ("table3", 5)):
        if name in tables or "figure1" in tables:
            cache[K] = _simulate_grid(cfg, m1, m2, K, ns, seeds)
        if name in tables:
            with open(out / f"{name}.csv", "w", newline="") as fh:
                write_csv(_table_rows(cache[K], ns, seeds), fh, ["row", "seed"] + [str(n) for n in ns])
    if "figure1" in tables:
        rows = []
        small = (m1 // 2, m2 // 2)
        for K in (2, 5):
            grids = {(m1, m2): (cache[K], ns)}
            small_ns = [max(1, n // 4) for n in ns]
            grids[small] = (_simulate_grid(cfg, small[0], small[1], K, small_ns, seeds), small_ns)
            for (a, b), (res, sizes) in grids.items():
                for n in sizes:
                    for seed in seeds:
                        for model, rep in res[(n, seed)].items():
                            rows.append({"m1": a, "m2": b, "classes": K, "n": n,
                                         "fraction": n / (a * b), "seed": seed, "model": model,
                                         "kl": rep.kl, "kl_per_class": rep.kl_per_class,
                                         "hellinger_sq": rep.hellinger_sq})
        with open(out / "figure1.csv", "w", newline="") as fh:
            write_csv(rows, fh)
    if "table4" in tables:
        path = cfg.data or os.environ.get("ML100K_PATH", "data/ml-100k/u.data")
        if not Path(path).is_file() and requested is None:
            logger.warning("%s", experiments.MovieLensMissing(path))
        else:
            rows = []
            for seed in seeds:
                rows.extend(experiments.run_movielens(path, seed=seed, epsilon=cfg.epsilon))
            with open(out / "table4.csv", "w", newline="") as fh:
                write_csv(rows, fh)
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "crossval": cmd_crossval,
            "evaluate": cmd_evaluate, "bench": cmd_bench, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    try:
        cfg = resolve_config(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PARSE
    logging.basicConfig(level=logging.INFO if cfg.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        code = EXIT_DATA if isinstance(exc, experiments.MovieLensMissing) else EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (DataFormatError, StructuralError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
