"""Command-line interface: ``analyze``, ``simulate`` and ``gbic-path``.

Exit status follows sysexits: 64 usage or configuration, 65 malformed input
data, 66 unreadable input file, 67 too few harmonized SNPs, 68 too few
selected instruments, 69 unstable estimate, 70 other numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bagging import CareConfig, care_from_instruments, default_threads, THREADS_ENV
from .baselines import METHODS as BASELINE_METHODS, care_no_correction, ivw
from .errors import (CareError, ConfigurationError, DomainError, InsufficientInstrumentsError,
                     InsufficientOverlapError, ParseError, UnstableEstimateError)
from .gwas_io import harmonize, parse_gwas, read_ld, sigma_prune
from .screening import DEFAULT_MIN_STRENGTH, ScreeningProblem, default_n_effective, gbic_path
from .selection import DEFAULT_P_THRESHOLD, SelectionConfig, lambda_from_pvalue, select, select_hard
from .simulation import (SCENARIOS, MethodSpec, read_scenario_file, run_experiment)

log = logging.getLogger("care_mr")

EXIT_OK = 0
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_NOINPUT = 66
EXIT_OVERLAP = 67
EXIT_INSTRUMENTS = 68
EXIT_UNSTABLE = 69
EXIT_SOFTWARE = 70

SIM_METHODS = ("care", "care-no-correction", "ivw-fixed", "ivw-random")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return value


def _unit_open(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"expected a number in (0, 1), got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0 or not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _column_map(text):
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"expected role=column, got {item!r}")
        role, name = (s.strip() for s in item.split("=", 1))
        out[role] = name
    return out


def _add_selection_args(p):
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--lambda-p", type=_unit_open, dest="lambda_p",
                     help=f"two-sided p-value cutoff for selection (default {DEFAULT_P_THRESHOLD:g})")
    grp.add_argument("--lambda", type=_positive_float, dest="lam",
                     help="z-score cutoff for selection")
    p.add_argument("--eta", type=_positive_float, default=0.5, help="pseudo-noise scale (default 0.5)")


def _add_care_args(p):
    p.add_argument("--bootstrap", type=_positive_int, default=2000, help="bootstrap replicates B")
    p.add_argument("--alpha", type=_unit_open, default=0.05, help="1 - confidence level")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="master seed")
    p.add_argument("--restarts", type=_positive_int, default=1, help="BCD restarts per v")
    p.add_argument("--n-effective", type=float, dest="n_effective",
                   help="sample size in the GBIC penalty (default: median 1/se_y^2)")
    p.add_argument("--min-strength", type=float, dest="min_strength", default=DEFAULT_MIN_STRENGTH,
                   help="minimum beta_rb^2/var_rb for an instrument to be declared valid")
    p.add_argument("--no-median-start", action="store_false", dest="median_start",
                   help="start BCD only from uniform draws, not also from the median ratio")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1); never changes results")


def _add_input_args(p):
    p.add_argument("--exposure", required=True, help="exposure GWAS summary file")
    p.add_argument("--outcome", required=True, help="outcome GWAS summary file")
    p.add_argument("--ld", help="pairwise LD file (snp_a, snp_b, r2) for sigma-based pruning")
    p.add_argument("--r2", type=_unit_open, default=0.001, help="LD pruning threshold")
    p.add_argument("--sep", help="field separator (default: sniffed from the header)")
    p.add_argument("--exposure-columns", type=_column_map, dest="exposure_columns",
                   help="role=column overrides, e.g. snp=rsid,beta=b")
    p.add_argument("--outcome-columns", type=_column_map, dest="outcome_columns")
    p.add_argument("--palindromes", choices=("infer", "drop"), default="infer")
    p.add_argument("--eaf-window", type=float, dest="eaf_window", default=0.08,
                   help="palindromic SNPs with eaf within this distance of 0.5 are dropped")


def _add_output_args(p, default_format="json"):
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=("json", "tsv"), default=default_format)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="care-mr", description="Two-sample Mendelian randomization with CARE.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="estimate the causal effect from two summary files")
    _add_input_args(a)
    _add_selection_args(a)
    _add_care_args(a)
    _add_output_args(a)
    a.add_argument("--baselines", default="",
                   help=f"comma-separated comparators: {', '.join(BASELINE_METHODS)} or 'all'")
    a.add_argument("--baseline-lambda-p", type=_unit_open, dest="baseline_lambda_p", default=5e-8,
                   help="p-value cutoff for the IVW comparators (default 5e-8)")
    a.add_argument("--replicates-out", dest="replicates_out",
                   help="TSV of per-replicate estimates (b, theta_b, v_b, converged, excluded)")

    g = sub.add_parser("gbic-path", help="dump the GBIC path of the full-sample screening problem")
    _add_input_args(g)
    _add_selection_args(g)
    g.add_argument("--seed", type=_nonneg_int, default=0)
    g.add_argument("--restarts", type=_positive_int, default=1)
    g.add_argument("--n-effective", type=float, dest="n_effective")
    g.add_argument("--min-strength", type=float, dest="min_strength", default=DEFAULT_MIN_STRENGTH)
    g.add_argument("--no-median-start", action="store_false", dest="median_start")
    _add_output_args(g, default_format="tsv")

    s = sub.add_parser("simulate", help="Monte Carlo evaluation under the effect mixture")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--scenario", choices=sorted(SCENARIOS), default=None)
    src.add_argument("--scenario-file", dest="scenario_file", help="key = value scenario file")
    s.add_argument("--invalid", type=float, help="proportion of invalid instruments in [0, 1)")
    s.add_argument("--theta", type=float, help="true causal effect")
    s.add_argument("--reps", type=_positive_int, default=100)
    s.add_argument("--method", choices=SIM_METHODS, default="care")
    s.add_argument("--p-snps", type=_positive_int, dest="p_snps", help="number of simulated SNPs")
    s.add_argument("--data-seed", type=_nonneg_int, dest="data_seed",
                   help="seed of the dataset streams (default: scenario seed)")
    _add_selection_args(s)
    _add_care_args(s)
    s.add_argument("--full", action="store_true", help="include per-rep results")
    s.add_argument("--timing", action="store_true", help="include runtimes (not reproducible)")
    _add_output_args(s)
    return parser


# ---------------------------------------------------------------- output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value)) if math.isfinite(value) else "NA"
    return str(value)


def _tsv(header, rows) -> str:
    buf = io.StringIO()
    buf.write("\t".join(header) + "\n")
    for row in rows:
        buf.write("\t".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _emit(args, text):
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands


def _selection_config(args, seed):
    if args.lam is not None:
        lam, lam_p = args.lam, None
    else:
        lam_p = args.lambda_p if args.lambda_p is not None else DEFAULT_P_THRESHOLD
        lam = lambda_from_pvalue(lam_p)
    return SelectionConfig(lam=lam, eta=args.eta, seed=seed), lam_p


def _threads(args):
    return args.threads if args.threads is not None else default_threads()


def _check_common(args):
    if args.n_effective is not None and not args.n_effective > 1:
        raise ConfigurationError("--n-effective must exceed 1")
    if not args.min_strength >= 1:
        raise ConfigurationError("--min-strength must be at least 1")


def _load_pairs(args):
    exposure = parse_gwas(args.exposure, args.exposure_columns, args.sep)
    outcome = parse_gwas(args.outcome, args.outcome_columns, args.sep)
    pairs = harmonize(exposure, outcome, args.palindromes, args.eaf_window)
    counts = {
        "exposure_rows": len(exposure),
        "exposure_dropped": exposure.dropped,
        "outcome_rows": len(outcome),
        "outcome_dropped": outcome.dropped,
        "harmonized": len(pairs),
        "harmonize_dropped": dict(pairs.dropped),
    }
    if args.ld:
        pairs = sigma_prune(pairs, read_ld(args.ld, args.sep), args.r2)
        counts["after_pruning"] = len(pairs)
    log.info("%d harmonized SNP pairs", len(pairs))
    return pairs, counts


def _parse_baselines(text):
    names = [s.strip().replace("-", "_") for s in text.split(",") if s.strip()]
    if names == ["all"]:
        return list(BASELINE_METHODS)
    bad = [n for n in names if n not in BASELINE_METHODS]
    if bad:
        raise ConfigurationError(f"unknown baseline(s) {bad}; choose from {', '.join(BASELINE_METHODS)}")
    return list(dict.fromkeys(names))


def cmd_analyze(args) -> int:
    _check_common(args)
    baselines = _parse_baselines(args.baselines)
    sel_cfg, lam_p = _selection_config(args, args.seed)
    care_cfg = CareConfig(bootstrap_b=args.bootstrap, alpha=args.alpha, seed=args.seed,
                          restarts=args.restarts, n_effective=args.n_effective,
                          threads=_threads(args), min_strength=args.min_strength,
                          median_start=args.median_start,
                          keep_replicates=bool(args.replicates_out) or None)
    pairs, counts = _load_pairs(args)
    instruments = select(pairs, sel_cfg)
    est = care_from_instruments(instruments, care_cfg)
    n_eff = args.n_effective if args.n_effective is not None else default_n_effective(instruments.se_y)

    results = [{"method": "care", "theta": est.theta_tilde, "se": est.se, "ci_low": est.ci_low,
                "ci_high": est.ci_high, "p_value": est.p_value, "k_instruments": est.s_lambda}]
    for name in baselines:
        if name == "care_no_correction":
            b = care_no_correction(pairs, sel_cfg.lam, care_cfg)
        else:
            lam_b = lambda_from_pvalue(args.baseline_lambda_p)
            b = ivw(select_hard(pairs, lam_b, min_instruments=3), name.split("_")[1], args.alpha)
        results.append(b.as_dict())

    if args.replicates_out:
        reps = est.replicates
        rows = zip(range(1, len(reps.theta_b) + 1), reps.theta_b, reps.v_b, reps.converged,
                   reps.excluded)
        write_atomic(args.replicates_out,
                     _tsv(("b", "theta_b", "v_b", "converged", "excluded"), rows))

    if args.format == "tsv":
        cols = ("method", "theta", "se", "ci_low", "ci_high", "p_value", "k_instruments")
        _emit(args, _tsv(cols, ([r[c] for c in cols] for r in results)))
        return EXIT_OK
    metadata = {
        "version": __version__,
        "exposure": str(args.exposure),
        "outcome": str(args.outcome),
        "lambda": sel_cfg.lam,
        "lambda_p": lam_p,
        "eta": sel_cfg.eta,
        "bootstrap": care_cfg.bootstrap_b,
        "alpha": care_cfg.alpha,
        "seed": care_cfg.seed,
        "restarts": care_cfg.restarts,
        "n_effective": n_eff,
        "min_strength": care_cfg.min_strength,
        "median_start": care_cfg.median_start,
        "counts": counts,
    }
    care = est.as_dict()
    care.pop("per_iv_s")
    care.pop("theta_b", None)
    instruments_out = [
        {"snp": str(instruments.pairs.snp_id[j]), "beta_x": instruments.beta_x[j],
         "beta_rb": instruments.beta_rb[j], "var_rb": instruments.var_rb[j],
         "beta_y": instruments.beta_y[j], "se_y": instruments.se_y[j], "s_j": est.per_iv_s[j]}
        for j in range(len(instruments))
    ]
    _emit(args, _dump_json({"metadata": metadata, "care": care, "results": results,
                            "instruments": instruments_out}))
    return EXIT_OK


def cmd_gbic_path(args) -> int:
    _check_common(args)
    sel_cfg, lam_p = _selection_config(args, args.seed)
    pairs, _ = _load_pairs(args)
    instruments = select(pairs, sel_cfg)
    problem = ScreeningProblem.unweighted(instruments, args.n_effective, args.min_strength)
    best, path = gbic_path(problem, restarts=args.restarts, seed=args.seed,
                           median_start=args.median_start)
    cols = ("v", "loss", "gbic", "theta", "converged")
    rows = [(s.v, s.loss, s.gbic, s.theta_hat, s.converged) for s in path]
    if args.format == "tsv":
        _emit(args, _tsv(cols, rows))
    else:
        _emit(args, _dump_json({
            "lambda": sel_cfg.lam, "lambda_p": lam_p, "eta": sel_cfg.eta, "s_lambda": len(instruments),
            "best_v": best.v, "best_theta": best.theta_hat,
            "valid_set": [str(instruments.pairs.snp_id[j]) for j in best.valid_set],
            "path": [dict(zip(cols, r)) for r in rows],
        }))
    return EXIT_OK


def _scenario(args):
    if args.scenario_file:
        cfg = read_scenario_file(args.scenario_file)
    else:
        cfg = SCENARIOS[args.scenario or "main"]
    if args.p_snps is not None:
        cfg = replace(cfg, p_snps=args.p_snps)
    if args.theta is not None:
        cfg = replace(cfg, theta=args.theta)
    if args.data_seed is not None:
        cfg = replace(cfg, seed=args.data_seed)
    if args.invalid is not None:
        cfg = cfg.with_invalid_prop(args.invalid)
    return cfg


def cmd_simulate(args) -> int:
    _check_common(args)
    cfg = _scenario(args)
    sel_cfg, lam_p = _selection_config(args, 0)
    care_cfg = CareConfig(bootstrap_b=args.bootstrap, alpha=args.alpha, seed=args.seed,
                          restarts=args.restarts, n_effective=args.n_effective,
                          threads=_threads(args), min_strength=args.min_strength,
                          median_start=args.median_start,
                          keep_replicates=False)
    spec = MethodSpec(care=care_cfg, lambda_care=sel_cfg.lam, eta=sel_cfg.eta)
    metrics = run_experiment(cfg, args.reps, args.method.replace("-", "_"), spec=spec,
                             alpha=args.alpha)
    rep_cols = ["rep", "theta_hat", "se", "p_value", "ci_low", "ci_high", "dataset_checksum", "error"]
    if args.timing:
        rep_cols.append("runtime_s")
    if args.format == "tsv":
        rows = ([getattr(r, c) for c in rep_cols] for r in metrics.reps)
        _emit(args, _tsv(rep_cols, rows))
        return EXIT_OK
    out = {
        "scenario": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "lambda": sel_cfg.lam,
        "lambda_p": lam_p,
        "eta": sel_cfg.eta,
        "bootstrap": care_cfg.bootstrap_b,
        "seed": care_cfg.seed,
        "metrics": metrics.as_dict(timing=args.timing),
    }
    if args.full:
        out["reps"] = [{c: getattr(r, c) for c in rep_cols} for r in metrics.reps]
    _emit(args, _dump_json(out))
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "gbic-path": cmd_gbic_path, "simulate": cmd_simulate}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigurationError, DomainError)):
        return EXIT_USAGE
    if isinstance(exc, ParseError):
        return EXIT_DATA
    if isinstance(exc, InsufficientOverlapError):
        return EXIT_OVERLAP
    if isinstance(exc, InsufficientInstrumentsError):
        return EXIT_INSTRUMENTS
    if isinstance(exc, UnstableEstimateError):
        return EXIT_UNSTABLE
    if isinstance(exc, OSError):
        return EXIT_NOINPUT
    return EXIT_SOFTWARE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (CareError, OSError) as exc:
        stage = getattr(exc, "stage", "io")
        print(f"care-mr {args.command}: {stage} error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
