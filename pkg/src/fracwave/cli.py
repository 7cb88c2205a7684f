"""Command-line interface.

Every subcommand accepts ``--seed``, ``--out``, ``--config`` and ``--jobs``.
A config file is flat ``key = value`` text: one pair per line, ``#`` starts a
comment, keys are option names with ``-`` or ``_``.  Bundled configs can be
named directly (``--config fig1-left``).  Command-line flags override config
values.  When ``--out`` is given, a ``manifest.txt`` holding the resolved
configuration is written there; passing it back through ``--config``
reproduces the run.

Exit codes: 0 ok, 2 argument error, 3 grid constraint violation, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import clt_rate, high_normalizer_closed_form, limiting_cumulant, limiting_variance_high, sigma2
from .estimators import estimate_c, estimate_c_rect, estimate_hurst, estimate_p, estimate_q
from .kernels import (
    GridConstraintError,
    PhysicalParams,
    RectGrid,
    _field_cov_white,
    as_hurst,
    temporal_cov,
    temporal_increment_matrix,
)
from .montecarlo import ExperimentConfig, run_experiment, write_report
from .sampler import (
    SeedSpec,
    build_rect_model,
    build_temporal_model,
    sample_increments,
)
from .variations import variation_batch

EXIT_OK, EXIT_ARGS, EXIT_CONSTRAINT, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST = "manifest.txt"

BUNDLED_CONFIGS = {
    "fig1-left": {"h": "0.65", "n": "1000", "reps": "500"},
    "fig1-right": {"h": "0.85", "n": "1000", "reps": "500"},
    "rect-clt": {"n": "32", "m": "32", "alpha": "2.5", "reps": "500"},
}

# Options that only affect where or how fast a run happens, not its content.
_NOT_IN_MANIFEST = {"config", "out", "jobs", "command", "func"}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ARGS):
        super().__init__(message)
        self.code = code


def _g6(x) -> str:
    return f"{x:.6g}"


def _g17(x) -> str:
    return f"{x:.17g}"


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` text into a dict with ``_``-normalized keys."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise CliError(f"config line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def load_config(ref: str) -> dict[str, str]:
    path = Path(ref)
    if path.is_file():
        return parse_config_text(path.read_text(encoding="utf-8"))
    if ref in BUNDLED_CONFIGS:
        return dict(BUNDLED_CONFIGS[ref])
    raise CliError(f"config {ref!r} is neither a file nor a bundled config ({', '.join(BUNDLED_CONFIGS)})")


def _common(p: argparse.ArgumentParser, need_out: bool = False) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (64-bit unsigned)")
    p.add_argument("--out", default="fracwave-run" if need_out else None, help="output directory")
    p.add_argument("--config", default=None, help="key = value file or bundled config name")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads")


def _physical(p: argparse.ArgumentParser) -> None:
    p.add_argument("--c", type=float, default=1.0, help="wave speed")
    p.add_argument("--sigma-vol", type=float, default=1.0, help="noise volatility")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracwave", description="Fractional-white stochastic wave toolkit")
    parser.add_argument("--version", action="version", version=f"fracwave {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cov", help="covariance queries")
    _common(p)
    _physical(p)
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--s", type=float, default=None)
    p.add_argument("--x", type=float, default=None, help="space point of t (white case only)")
    p.add_argument("--y", type=float, default=None, help="space point of s (white case only)")
    p.add_argument("--grid", type=int, default=None, help="print the n x n increment covariance as CSV")
    p.set_defaults(func=cmd_cov)

    p = sub.add_parser("constants", help="limit constants and rates")
    _common(p)
    p.add_argument("--h", type=float, required=False, default=None)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--rate", action="store_true", help="print the CLT rate only")
    p.add_argument("--cumulant", type=int, default=None, help="limiting cumulant order (H > 3/4)")
    p.add_argument("--mesh", type=int, default=128)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("simulate", help="sample increment vectors")
    _common(p, need_out=True)
    _physical(p)
    p.add_argument("--kind", choices=("temporal", "rectangular"), default="temporal")
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--reps", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate a parameter from increments in a CSV file")
    _common(p)
    p.add_argument("--input", required=False, default=None, help="CSV with one increment vector per row")
    p.add_argument("--target", choices=("H", "c", "p", "q", "c-rect"), default="H")
    p.add_argument("--h-known", type=float, default=0.5)
    p.add_argument("--t", type=float, default=1.0, help="observation time for q")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(func=cmd_estimate)

    for name, kind in (("experiment", "temporal"), ("rect-experiment", "rectangular")):
        p = sub.add_parser(name, help=f"{kind} Monte Carlo experiment")
        _common(p, need_out=True)
        _physical(p)
        if kind == "temporal":
            p.add_argument("--h", type=float, default=0.65)
            p.add_argument("--n", type=int, default=1000)
        else:
            p.add_argument("--n", type=int, default=32)
            p.add_argument("--m", type=int, default=32)
            p.add_argument("--alpha", type=float, default=2.5)
        p.add_argument("--reps", type=int, default=500)
        p.add_argument("--max-cumulant", type=int, default=4)
        p.set_defaults(func=cmd_experiment, kind=kind)
    return parser


def _resolve(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    values = load_config(args.config)
    expected = values.pop("subcommand", None)
    values.pop("tool", None)
    values.pop("version", None)
    if expected is not None and expected != args.command:
        raise CliError(f"config is for subcommand {expected!r}, not {args.command!r}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in _NOT_IN_MANIFEST or key == "help":
            raise CliError(f"unknown config key {key!r} for {args.command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes")
        elif value == "None":
            defaults[key] = None
        else:
            try:
                defaults[key] = action.type(value) if action.type else value
            except ValueError as exc:
                raise CliError(f"config key {key!r}: {exc}") from None
            if action.choices is not None and defaults[key] not in action.choices:
                raise CliError(f"config key {key!r}: invalid choice {value!r}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def manifest_text(args: argparse.Namespace) -> str:
    lines = ["tool = fracwave", f"version = {__version__}", f"subcommand = {args.command}"]
    for key in sorted(vars(args)):
        if key in _NOT_IN_MANIFEST or key == "kind" and args.command.endswith("experiment"):
            continue
        value = getattr(args, key)
        lines.append(f"{key} = {_g17(value) if isinstance(value, float) else value}")
    return "\n".join(lines) + "\n"


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST).write_text(manifest_text(args), encoding="utf-8")
    return out


def _csv_text(rows, header=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(header)
    for row in rows:
        writer.writerow([_g17(float(v)) for v in row])
    return buf.getvalue()


def cmd_cov(args) -> int:
    hp = as_hurst(args.h)
    params = PhysicalParams(args.c, args.sigma_vol)
    out = _out_dir(args)
    if args.grid is not None:
        if args.grid < 1:
            raise CliError("--grid must be positive")
        text = _csv_text(params.scale * temporal_increment_matrix(hp, args.grid))
        if out is not None:
            (out / "cov.csv").write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return EXIT_OK
    if args.t is None or args.s is None:
        raise CliError("cov needs --t and --s, or --grid")
    if args.t < 0 or args.s < 0:
        raise CliError("times must be nonnegative")
    if args.x is not None or args.y is not None:
        if hp.h != 0.5:
            raise CliError("space-time covariance is only available at h = 0.5")
        c = abs(params.c)
        x = (args.x or 0.0) / c
        y = (args.y or 0.0) / c
        value = params.scale * float(_field_cov_white(args.t, x, args.s, y))
    else:
        value = params.scale * float(temporal_cov(hp, args.t, args.s))
    print(_g6(value))
    if out is not None:
        (out / "cov.txt").write_text(_g17(value) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_constants(args) -> int:
    if args.h is None:
        raise CliError("constants needs --h")
    try:
        hp = as_hurst(args.h)
    except ValueError as exc:
        if args.h == 0.75:
            raise CliError("h = 0.75 is the boundary case between the two regimes and is not supported") from None
        raise CliError(str(exc)) from None
    out = _out_dir(args)
    label = clt_rate(hp).label if hp.regime == "low" else "noncentral (second-chaos limit)"
    result: dict[str, object] = {"h": hp.h, "regime": hp.regime, "rate": label}
    if args.rate:
        print(label)
    elif hp.regime == "low":
        val = sigma2(hp, tol=args.tol)
        result.update(sigma2=val.value, truncation=val.truncation, tail_bound=val.tail_bound)
        print(f"sigma2 = {_g6(val.value)}")
        print(f"truncation = {val.truncation}  tail_bound = {_g6(val.tail_bound)}")
        print(f"rate = {label}")
    else:
        norm = limiting_variance_high(hp)
        result.update(
            normalizer=norm.value, closed_form=norm.closed_form, converged=norm.converged,
            relative_gap=norm.relative_gap,
        )
        print(f"normalizer = {_g6(norm.value)}  (closed form {_g6(high_normalizer_closed_form(hp))})")
        print(f"converged = {norm.converged}  relative_gap = {_g6(norm.relative_gap)}")
        print(f"rate = {label}")
        if args.cumulant is not None:
            if args.cumulant < 3:
                raise CliError("--cumulant must be at least 3")
            kappa = limiting_cumulant(hp, args.cumulant, mesh=args.mesh, k_norm=norm.value)
            result.update(cumulant_order=args.cumulant, cumulant=kappa, mesh=args.mesh)
            print(f"kappa_{args.cumulant} = {_g6(kappa)}  (mesh {args.mesh})")
    if out is not None:
        (out / "constants.json").write_text(json.dumps(result, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def _model_from_args(args):
    params = PhysicalParams(args.c, args.sigma_vol)
    if args.kind == "temporal":
        return build_temporal_model(args.h, args.n, params)
    if args.h != 0.5:
        raise CliError("rectangular sampling requires h = 0.5")
    return build_rect_model(RectGrid(args.n, args.m, args.alpha), params)


def cmd_simulate(args) -> int:
    if args.reps < 1:
        raise CliError("--reps must be at least 1")
    model = _model_from_args(args)
    out = _out_dir(args)
    samples = sample_increments(model, args.reps, SeedSpec(args.seed))
    stats = variation_batch(samples, model)
    (out / "increments.csv").write_text(_csv_text(samples), encoding="utf-8")
    names = list(stats)
    (out / "variations.csv").write_text(
        _csv_text(zip(*(stats[k] for k in names)), header=names), encoding="utf-8"
    )
    print(f"dim = {model.dim}  reps = {args.reps}  mean S = {_g6(float(np.mean(stats['s_raw'])))}")
    return EXIT_OK


def _read_rows(path) -> list[np.ndarray]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append(np.array([float(v) for v in row]))
            except ValueError:
                if rows:
                    raise CliError(f"{path}: non-numeric row") from None
    if not rows:
        raise CliError(f"{path}: no increment rows")
    return rows


def cmd_estimate(args) -> int:
    if args.input is None:
        raise CliError("estimate needs --input")
    if not Path(args.input).is_file():
        raise CliError(f"input file {args.input!r} not found")
    rows = _read_rows(args.input)
    reports = []
    for row in rows:
        if args.target == "H":
            rep = estimate_hurst(row, args.n)
        elif args.target == "c":
            rep = estimate_c(row, args.n, args.h_known)
        elif args.target == "p":
            rep = estimate_p(row, args.n, args.h_known)
        elif args.target == "q":
            rep = estimate_q(row, args.n, args.h_known, args.t)
        else:
            if None in (args.n, args.m, args.alpha):
                raise CliError("c-rect needs --n, --m and --alpha")
            rep = estimate_c_rect(row, RectGrid(args.n, args.m, args.alpha))
        reports.append(rep)
    for rep in reports:
        ci = "none" if rep.ci95 is None else f"[{_g6(rep.ci95[0])}, {_g6(rep.ci95[1])}]"
        print(f"{rep.target} = {_g6(rep.estimate)}  ci95 = {ci}")
    out = _out_dir(args)
    if out is not None:
        payload = [rep.to_dict() for rep in reports]
        (out / "estimates.json").write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_experiment(args) -> int:
    data = {
        "kind": args.kind, "c": args.c, "sigma_vol": args.sigma_vol, "reps": args.reps,
        "master_seed": args.seed, "n": args.n, "max_cumulant": args.max_cumulant,
    }
    if args.kind == "temporal":
        data["h"] = args.h
    else:
        data.update(h=0.5, m=args.m, alpha=args.alpha)
    config = ExperimentConfig(**data)
    report = run_experiment(config, jobs=args.jobs)
    out = _out_dir(args)
    write_report(report, out)
    f = report.summaries["f_standardized"]
    print(f"reps = {config.reps}  wall = {report.wall_time:.3g}s")
    print(f"F exact: mean = {_g6(f['mean'])}  var = {_g6(f['variance'])}  skew = {_g6(f['skewness'])}"
          f"  ks = {_g6(report.ks['f_standardized'])}")
    if "f_asymptotic" in report.summaries:
        fa = report.summaries["f_asymptotic"]
        print(f"F asymptotic: mean = {_g6(fa['mean'])}  var = {_g6(fa['variance'])}"
              f"  ks = {_g6(report.ks['f_asymptotic'])}")
    if not report.checks["variance_oracle_ok"]:
        print(f"warning: Var(V) is {_g6(report.checks['variance_oracle_z'])} SE from the Wick oracle", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _resolve(argv)
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise CliError("--seed must be a 64-bit unsigned integer")
        if args.jobs < 1:
            raise CliError("--jobs must be positive")
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_ARGS
    except CliError as exc:
        print(f"fracwave: error: {exc}", file=sys.stderr)
        return exc.code
    except GridConstraintError as exc:
        print(f"fracwave: constraint violation: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"fracwave: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, IndexError, OSError) as exc:
        print(f"fracwave: error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
