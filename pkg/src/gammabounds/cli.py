"""Command-line front end: ``gammabounds {analyze,sweep,simulate,design}``.

Exit codes: 0 success, 1 numerical or runtime failure, 2 usage or input error.
A ``--config FILE`` of ``key = value`` lines supplies defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import SensitivityReport, analyze, gamma_sweep
from .data_model import AnalysisConfig, ConfigError, DataError, SieveSettings, load_csv
from .design_sensitivity import (
    EmpiricalAlternative,
    gamma_design_empirical,
    gamma_design_gaussian,
    gamma_design_gaussian_quadrature,
)
from .gamma_loss import ConvergenceError, DomainError, SingularDesignError
from .nuisance import FoldError
from .report import (
    plot_csv,
    report_csv,
    report_json,
    report_pretty,
    summary_csv,
    summary_json,
    summary_pretty,
)
from .simulation import ReplicationError, SimConfig, run_monte_carlo

SUBCOMMANDS = ("analyze", "sweep", "simulate", "design")


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"{stage} failed: {cause}")
        self.stage = stage


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ridge(text: str):
    if text == "cv":
        return "cv"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("ridge must be a number or 'cv'") from None


def _add_output(p):
    p.add_argument("--format", choices=("csv", "json", "pretty"), default="csv")
    p.add_argument("--out", help="write the main output here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker bound for fold fits or replications")
    p.add_argument("--config", help="key = value defaults file")


def _add_analysis(p):
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--sieve", choices=("poly", "spline"), default="poly")
    p.add_argument("--degree", type=int, default=2, help="polynomial degree or knot count")
    p.add_argument("--ridge", type=_ridge, default=1e-4, help="penalty value or 'cv'")
    p.add_argument("--propensity-degree", type=int, default=1)
    p.add_argument("--clip-propensity", type=float, default=0.01)
    p.add_argument("--clip-weight-share", type=float, default=0.05)


def _add_input(p):
    p.add_argument("--input", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--covariates", default="rest", help="comma list or 'rest'")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--no-rescale", action="store_true", help="keep covariates in original units")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gammabounds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="bounds and CI at one Gamma")
    _add_input(a)
    g = a.add_mutually_exclusive_group(required=True)
    g.add_argument("--gamma", type=float)
    g.add_argument("--exp", type=float, help="use Gamma = exp(value)")
    _add_analysis(a)
    _add_output(a)

    s = sub.add_parser("sweep", help="bounds and CIs over several Gammas")
    _add_input(s)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--gammas", type=_float_list)
    g.add_argument("--exp", type=_float_list, help="Gamma = exp(k) for each listed k")
    _add_analysis(s)
    _add_output(s)
    s.add_argument("--plot-data", help="long-format plot CSV (default: <out>.plot.csv when --out is set)")
    s.add_argument("--plot", help="also render a figure to this path (png, pdf, svg)")

    m = sub.add_parser("simulate", help="Monte Carlo coverage study")
    m.add_argument("--preset", choices=("d4", "d8"), default="d4")
    m.add_argument("--n", type=int)
    m.add_argument("--reps", type=int, default=200)
    m.add_argument("--tau", type=float)
    m.add_argument("--gamma-gen", type=float)
    g = m.add_mutually_exclusive_group()
    g.add_argument("--gamma", type=float, help="analysis Gamma (default: the generator's)")
    g.add_argument("--exp", type=float)
    m.add_argument("--target-share", type=float)
    m.add_argument("--alpha0", type=float)
    m.add_argument("--noise", choices=("heteroskedastic", "unit"), default="heteroskedastic")
    _add_analysis(m)
    _add_output(m)

    d = sub.add_parser("design", help="design sensitivity of a Gaussian or sampled alternative")
    g = d.add_mutually_exclusive_group(required=True)
    g.add_argument("--gaussian", nargs=2, type=float, metavar=("TAU", "SIGMA"))
    g.add_argument("--samples", help="CSV with columns y1 and y0 (rows may be blank in one column)")
    d.add_argument("--share", type=float, default=0.5)
    d.add_argument("--tol", type=float, default=1e-8)
    d.add_argument("--gamma-max", type=float, default=math.exp(6.0))
    d.add_argument("--verbose", action="store_true")
    _add_output(d)
    return parser


# --------------------------------------------------------------------------- config file


def read_config_file(path) -> list[tuple[str, str]]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    pairs = []
    for k, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{k}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        pairs.append((key.replace("_", "-"), value))
    return pairs


def _expand_config(argv: list[str]) -> list[str]:
    """Splice ``--config`` file entries in right after the subcommand, so flags override them."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv
    tokens = []
    for key, value in read_config_file(path):
        if value.lower() in ("true", "yes", "on"):
            tokens.append(f"--{key}")
        elif value.lower() in ("false", "no", "off"):
            continue
        elif key == "gaussian":
            tokens += [f"--{key}", *value.replace(",", " ").split()]
        else:
            tokens += [f"--{key}={value}"]
    pos = next((i for i, t in enumerate(argv) if t in SUBCOMMANDS), None)
    if pos is None:
        return argv
    return argv[: pos + 1] + tokens + argv[pos + 1:]


# --------------------------------------------------------------------------- commands


def _analysis_config(args, gamma: float) -> AnalysisConfig:
    sieve = SieveSettings(
        kind="polynomial" if args.sieve == "poly" else "spline",
        degree=args.degree,
        ridge=args.ridge,
        propensity_degree=args.propensity_degree,
    )
    return AnalysisConfig(
        gamma=gamma, alpha=args.alpha, folds=args.folds, propensity_clip=args.clip_propensity,
        weight_clip_share=args.clip_weight_share, seed=args.seed, sieve=sieve,
    )


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load(args):
    return load_csv(args.input, args.outcome, args.treatment, args.covariates,
                    delimiter=args.delimiter, rescale=not args.no_rescale)


def _render_report(report: SensitivityReport, fmt: str, config: AnalysisConfig) -> str:
    if fmt == "csv":
        return report_csv(report)
    if fmt == "json":
        return report_json(report, {"config": json.loads(json.dumps(asdict(config), default=str))})
    return report_pretty(report)


def _run_stage(stage, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (DataError, ConfigError, DomainError, UsageError):
        raise
    except (SingularDesignError, ConvergenceError, FoldError, np.linalg.LinAlgError,
            FloatingPointError, ArithmeticError, RuntimeError) as exc:
        raise StageError(stage, exc) from exc


def cmd_analyze(args) -> int:
    gamma = math.exp(args.exp) if args.exp is not None else args.gamma
    config = _analysis_config(args, gamma)
    data = _load(args)
    row = _run_stage("bound estimation", analyze, data, config, threads=args.threads)
    prov = {"seed": config.seed, "config_hash": config.digest(), "n": data.n,
            "n_treated": data.n_treated, "folds": config.folds}
    _emit(_render_report(SensitivityReport((row,), prov), args.format, config), args.out)
    return 0


def cmd_sweep(args) -> int:
    gammas = [math.exp(k) for k in args.exp] if args.exp is not None else args.gammas
    if not gammas:
        raise UsageError("need at least one gamma")
    config = _analysis_config(args, 1.0)
    data = _load(args)
    report = _run_stage("gamma sweep", gamma_sweep, data, gammas, config, threads=args.threads)
    _emit(_render_report(report, args.format, config), args.out)
    plot_path = args.plot_data or (f"{args.out}.plot.csv" if args.out else None)
    if plot_path:
        Path(plot_path).write_text(plot_csv(report), encoding="utf-8")
    if args.plot:
        from .plotting import plot_sweep

        _run_stage("plotting", plot_sweep, report, args.plot)
    return 0


def cmd_simulate(args) -> int:
    overrides = {"replications": args.reps, "seed": args.seed, "noise": args.noise}
    for key, val in (("n", args.n), ("tau", args.tau), ("gamma_gen", args.gamma_gen)):
        if val is not None:
            overrides[key] = val
    if args.target_share is not None:
        overrides.update(target_share=args.target_share, alpha0=None)
    elif args.alpha0 is not None:
        overrides["alpha0"] = args.alpha0
    sim = SimConfig.preset(args.preset, **overrides)
    gamma = math.exp(args.exp) if args.exp is not None else (args.gamma or sim.gamma_gen)
    config = _analysis_config(args, gamma)
    try:
        summary = run_monte_carlo(sim, config, workers=args.threads)
    except ReplicationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    row = summary.row()
    if summary.replications < 2:
        print("note: standard deviations are undefined with a single replication", file=sys.stderr)
    extra = {"analysis_gamma": gamma, "generator": json.loads(json.dumps(asdict(sim.resolved())))}
    text = {"csv": lambda: summary_csv(row), "json": lambda: summary_json(row, extra),
            "pretty": lambda: summary_pretty(row)}[args.format]()
    _emit(text, args.out)
    return 0


def _read_samples(path):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"file not found: {p}")
    y1, y0 = [], []
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"y1", "y0"} <= set(reader.fieldnames):
            raise DataError("samples file needs columns y1 and y0")
        for k, rec in enumerate(reader, start=1):
            for col, dest in (("y1", y1), ("y0", y0)):
                raw = (rec.get(col) or "").strip()
                if raw:
                    try:
                        dest.append(float(raw))
                    except ValueError:
                        raise DataError(f"non-numeric value {raw!r} at row {k}, column {col!r}") from None
    return y1, y0


def cmd_design(args) -> int:
    if args.gaussian is not None:
        tau, sigma = args.gaussian
        if not sigma > 0:
            raise UsageError("sigma must be positive")
        res = gamma_design_gaussian(tau, sigma)
        diag = dict(res.diagnostics)
        if args.verbose:
            diag["quadrature"] = gamma_design_gaussian_quadrature(tau, sigma)
        kind = "gaussian"
    else:
        y1, y0 = _read_samples(args.samples)
        alt = EmpiricalAlternative(y1, y0, args.share)
        res = _run_stage("design sensitivity solve", gamma_design_empirical, alt, args.tol, args.gamma_max)
        diag = dict(res.diagnostics)
        kind = "empirical"
    value = res.gamma_design
    text_value = "inf" if math.isinf(value) else None
    if args.format == "csv":
        out = f"alternative,gamma_design\n{kind},{text_value or repr(value)}\n"
    elif args.format == "json":
        doc = {"alternative": kind, "gamma_design": text_value or value}
        if args.verbose:
            doc["diagnostics"] = {k: (list(v) if isinstance(v, tuple) else float(v) if isinstance(v, (int, float, np.floating)) else v)
                                  for k, v in diag.items()}
        out = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    else:
        out = f"gamma_design = {text_value or f'{value:.6g}'}\n"
    if args.verbose and args.format != "json":
        out += "".join(f"# {k}: {v}\n" for k, v in sorted(diag.items()))
    _emit(out, args.out)
    return 0


COMMANDS = {"analyze": cmd_analyze, "sweep": cmd_sweep, "simulate": cmd_simulate, "design": cmd_design}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_config(argv)
    except UsageError as exc:
        print(f"gammabounds: error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (DataError, ConfigError, DomainError, UsageError) as exc:
        print(f"gammabounds: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"gammabounds: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gammabounds: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
