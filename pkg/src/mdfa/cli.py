"""Command-line front end.

Exit codes: 0 on success, 1 on usage errors, 2 on data or convergence
errors.  Output files are written to a temporary name and renamed, so a
failed run never leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audit import (
    atomic_write,
    audit_external_predictions,
    compare_weight_schemes,
    dumps_json,
    dumps_tsv,
    repeated_audit,
)
from .core import AuditConfig, AuditError, subgroup_profile
from .data import CsvSchema, SyntheticSpec, generate_synthetic, load_csv, save_csv
from .rebalance import WeightScheme

SCHEME_NAMES = {"uw": "uniform", "is": "importance-estimated", "mmd": "mmd-match"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _sign(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected +1 or -1, got {text!r}") from None
    if v not in (-1, 1):
        raise argparse.ArgumentTypeError(f"expected +1 or -1, got {text!r}")
    return v


def _bandwidth(text: str):
    try:
        v = float(text)
    except ValueError:
        AuditConfig(kernel_bandwidth=text)  # validates the string form
        return text
    if not v > 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return v


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p, data_input=True):
    if data_input:
        p.add_argument("--input", required=True, metavar="PATH", help="input CSV file")
        p.add_argument("--schema", required=True, metavar="PATH",
                       help="schema config file (key=value per line)")
    p.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--format", choices=("json", "tsv"), default="json", help="output format")


def _add_audit(p, splits_default=1):
    p.add_argument("--splits", type=int, default=splits_default,
                   help=f"number of 70/30 train/test splits (default {splits_default})")
    p.add_argument("--lambda", dest="lambda_reg", type=float, default=1e-3,
                   help="certifier L2 regularization (default 1e-3)")
    p.add_argument("--bandwidth", type=_bandwidth, default="median",
                   help="kernel bandwidth: a number, 'median' or '<factor>*median' (default median)")
    p.add_argument("--scheme", choices=sorted(SCHEME_NAMES), default="mmd",
                   help="rebalancing: uniform, estimated importance sampling, or MMD matching")
    p.add_argument("--target-y", type=_sign, default=1, help="audited outcome, +1 or -1")
    p.add_argument("--sensitive-value", type=_sign, default=1,
                   help="sensitive value whose favourable treatment is audited, +1 or -1")
    p.add_argument("--dim", type=int, default=256, help="random Fourier feature dimension")
    p.add_argument("--cv-lambdas", type=_floats, default=None,
                   help="comma-separated lambda grid for 5-fold cross-validation")
    p.add_argument("--cv-bandwidths", default=None,
                   help="comma-separated bandwidth grid for cross-validation, e.g. median,2*median")


def _add_wva(p):
    p.add_argument("--alpha", type=float, default=0.05, help="subgroup mass floor (default 0.05)")
    p.add_argument("--xi", type=float, default=0.05, help="weight escalation rate (default 0.05)")
    p.add_argument("--max-iter", type=int, default=200, help="escalation rounds (default 200)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdfa", description="Audit a classifier for multi-differential fairness.")
    parser.add_argument("--version", action="version", version=f"mdfa {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic benchmark",
                       description="Write a synthetic dataset with a planted violation, a "
                                   "ground-truth JSON sidecar (<out>.truth.json) and a schema "
                                   "file (<out>.schema.cfg).")
    p.add_argument("--m", type=int, default=5000, help="sample count")
    p.add_argument("--mu", type=float, default=0.0, help="imbalance factor")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--nu", type=float, default=None, help="violation strength in [0, 1)")
    g.add_argument("--delta", type=float, default=None, help="target log-ratio (sets nu)")
    p.add_argument("--noise-std", type=float, default=0.2, help="label noise std")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, metavar="PATH", help="output CSV path")

    p = sub.add_parser("certify", help="one-shot unfairness certificate over repeated splits")
    _add_common(p)
    _add_audit(p)

    p = sub.add_parser("worst", help="find the worst-case violating subgroup")
    _add_common(p)
    _add_audit(p)
    _add_wva(p)

    p = sub.add_parser("compare-weights", help="bias of UW / IS / MMD weighting on synthetic data",
                       description="TSV columns: mu, scheme, bias_mean, bias_std, n.")
    _add_common(p, data_input=False)
    p.add_argument("--mu-grid", type=_floats, default=[-0.2, -0.1, 0.0, 0.1, 0.2],
                   help="comma-separated imbalance factors")
    p.add_argument("--nu", type=float, default=1.0 - math.exp(-2.0), help="violation strength")
    p.add_argument("--m", type=int, default=5000, help="sample count per dataset")
    p.add_argument("--seeds", type=int, default=10, help="datasets per mu")
    p.add_argument("--lambda", dest="lambda_reg", type=float, default=1e-3, help="certifier L2 weight")
    p.add_argument("--bandwidth", type=_bandwidth, default="median", help="kernel bandwidth")

    p = sub.add_parser("profile", help="feature moments by sensitive group for a subgroup")
    _add_common(p)
    p.add_argument("--subgroup-column", default=None,
                   help="0/1 column marking the subgroup (default: whole population)")

    p = sub.add_parser("audit-predictions",
                       help="worst-case audit of a prediction column (e.g. a repaired classifier)")
    _add_common(p)
    _add_audit(p, splits_default=1)
    _add_wva(p)
    return parser


def _config(args) -> AuditConfig:
    grid = None
    if getattr(args, "cv_lambdas", None) or getattr(args, "cv_bandwidths", None):
        lams = args.cv_lambdas or [args.lambda_reg]
        bws = [_bandwidth(b.strip()) for b in args.cv_bandwidths.split(",")] \
            if args.cv_bandwidths else [args.bandwidth]
        grid = [(lam, bw) for lam in lams for bw in bws]
    return AuditConfig(
        feature_map_dim=getattr(args, "dim", 256),
        kernel_bandwidth=args.bandwidth,
        lambda_reg=args.lambda_reg,
        xi=getattr(args, "xi", 0.05),
        alpha_floor=getattr(args, "alpha", 0.05),
        max_iterations=getattr(args, "max_iter", 200),
        seed=args.seed,
        cv_grid=grid or [],
    )


def _emit(text: str, out) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


SPLIT_COLUMNS = ["seed", "gamma_hat", "delta_m", "alpha", "dt_g", "di", "lambda_reg", "bandwidth"]


def _emit_run(result, args) -> None:
    if args.format == "json":
        _emit(dumps_json(result.to_dict()), args.out)
    elif result.mode == "wva" and args.command == "worst":
        _emit(dumps_tsv(result.trace or [], ["t", "delta_hat", "alpha_hat", "delta_hat_test",
                                             "alpha_hat_test"]), args.out)
    else:
        _emit(dumps_tsv(result.per_split, SPLIT_COLUMNS), args.out)


def _cmd_synth(args):
    if args.nu is not None:
        spec = SyntheticSpec(m=args.m, mu=args.mu, nu=args.nu, noise_std=args.noise_std, seed=args.seed)
    else:
        spec = SyntheticSpec.from_delta(args.delta or 0.0, m=args.m, mu=args.mu,
                                        noise_std=args.noise_std, seed=args.seed)
    ds, truth = generate_synthetic(spec)
    out = Path(args.out)
    region = truth.region(ds.X).astype(int)
    schema = save_csv(ds, out, extra_columns={"in_region": region})
    meta = truth.to_dict()
    meta.update({"m": spec.m, "noise_std": spec.noise_std, "seed": spec.seed,
                 "region_count": int(region.sum()),
                 "region_mass_rebalanced": truth.region_mass(), "true_gamma": truth.true_gamma()})
    atomic_write(out.with_name(out.name + ".truth.json"), dumps_json(meta))
    atomic_write(out.with_name(out.name + ".schema.cfg"), schema.to_text())


def _scheme(args) -> WeightScheme:
    return WeightScheme(SCHEME_NAMES[args.scheme])


def _cmd_certify(args):
    ds = load_csv(args.input, CsvSchema.from_file(args.schema))
    res = repeated_audit(ds, args.splits, _config(args), args.target_y, args.sensitive_value,
                         _scheme(args), mode="certify")
    _emit_run(res, args)


def _cmd_worst(args):
    ds = load_csv(args.input, CsvSchema.from_file(args.schema))
    res = repeated_audit(ds, args.splits, _config(args), args.target_y, args.sensitive_value,
                         _scheme(args), mode="wva")
    _emit_run(res, args)


def _cmd_audit_predictions(args):
    schema = CsvSchema.from_file(args.schema)
    if not schema.prediction_column:
        raise UsageError("schema must name a prediction_column for audit-predictions")
    ds = load_csv(args.input, schema, outcome="prediction")
    res = audit_external_predictions(ds, _config(args), args.target_y, args.sensitive_value,
                                     args.splits, _scheme(args))
    _emit_run(res, args)


def _cmd_compare(args):
    cfg = AuditConfig(kernel_bandwidth=args.bandwidth, lambda_reg=args.lambda_reg, seed=args.seed)
    rows = compare_weight_schemes(args.mu_grid, cfg, nu=args.nu, m=args.m, n_seeds=args.seeds)
    if args.format == "json":
        _emit(dumps_json({"config_echo": cfg.to_dict(), "nu": args.nu, "m": args.m, "rows": rows}),
              args.out)
    else:
        _emit(dumps_tsv(rows, ["mu", "scheme", "bias_mean", "bias_std", "n"]), args.out)


def _cmd_profile(args):
    schema = CsvSchema.from_file(args.schema)
    ds = load_csv(args.input, schema)
    mask = None
    if args.subgroup_column:
        mask = _read_column(args.input, args.subgroup_column)
    table = subgroup_profile(ds, mask)
    if args.format == "json":
        _emit(dumps_json(table.to_dict()), args.out)
    else:
        rows = []
        for scope, by_s in table.rows.items():
            for s, cols in by_s.items():
                for var, (mean, std) in cols.items():
                    rows.append({"scope": scope, "s": s, "variable": var, "mean": mean, "std": std})
        _emit(dumps_tsv(rows, ["scope", "s", "variable", "mean", "std"]), args.out)


def _read_column(path, column) -> np.ndarray:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise AuditError(f"missing column {column!r}")
        vals = []
        for i, row in enumerate(reader, 1):
            raw = row[column].strip()
            if raw not in ("0", "1", "-1", "true", "false", "True", "False"):
                raise AuditError(f"row {i}: subgroup column value {raw!r} is not boolean")
            vals.append(raw in ("1", "true", "True"))
    return np.array(vals, dtype=bool)


COMMANDS = {
    "synth": _cmd_synth,
    "certify": _cmd_certify,
    "worst": _cmd_worst,
    "compare-weights": _cmd_compare,
    "profile": _cmd_profile,
    "audit-predictions": _cmd_audit_predictions,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mdfa {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (AuditError, ValueError, OSError) as exc:
        err = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli())
