"""Command-line interface: ``simulate``, ``impute``, and ``evaluate``.

Exit codes: 0 success, 1 usage error, 2 malformed or inconsistent data,
3 infeasible constraint system.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from . import metrics, sim
from .edits import parse_edit_rules
from .errors import (
    CalimpError,
    ConvergenceError,
    DataFormatError,
    EditSyntaxError,
    InfeasibleSystemError,
)
from .mcmc import McmcConfig, mcmc_refine
from .pipeline import DataMatrix, ImputationConfig, impute

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INFEASIBLE = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="calimp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic population and one sample")
    p_sim.add_argument("--config", help="key = value study configuration file")
    p_sim.add_argument("--out", required=True, help="output directory")

    p_imp = sub.add_parser("impute", help="impute a dataset under edits (and totals)")
    p_imp.add_argument("--data", required=True)
    p_imp.add_argument("--edits", required=True)
    p_imp.add_argument("--totals")
    p_imp.add_argument("--method", required=True, choices=["upma", "bpma", "bpmr", "mcmc"])
    p_imp.add_argument("--seed", type=int, default=0)
    p_imp.add_argument("--rounds", type=int, default=2)
    p_imp.add_argument("--iterations", type=int, help="chain length for --method mcmc")
    p_imp.add_argument("--mask", help="imputed-cell mask of an already consistent dataset (mcmc)")
    p_imp.add_argument("--log-scale", action="store_true", help="fit on log scale (upma/bpma)")
    p_imp.add_argument("--out", required=True)
    p_imp.add_argument("--diagnostics", help="diagnostics path (default: OUT.diag.jsonl)")

    p_eval = sub.add_parser("evaluate", help="score an imputed dataset against the truth")
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--imputed", required=True)
    p_eval.add_argument("--mask", required=True)
    p_eval.add_argument("--out", required=True)
    return parser


def _study_config(path: str | None) -> sim.StudyConfig:
    if path is None:
        return sim.StudyConfig()
    raw = cio.read_config(path)
    fields = {f.name: f for f in dataclasses.fields(sim.StudyConfig)}
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise DataFormatError(f"unknown study setting {key!r}")
        ftype = fields[key].type
        if key == "methods":
            kwargs[key] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif "int" in str(ftype):
            kwargs[key] = int(value) if value.lower() != "none" else None
        else:
            kwargs[key] = float(value)
    return sim.StudyConfig(**kwargs)


def _cmd_simulate(args) -> int:
    config = _study_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(config.seed)
    pop_ss, rep_ss = root.spawn(2)
    population, pop_totals = sim.generate_population(config, np.random.default_rng(pop_ss))
    rng = np.random.default_rng(rep_ss)
    idx = rng.choice(population.n_records, size=config.sample_size, replace=False)
    truth = sim._sample_rows(population, idx)
    totals = {
        name: float(truth.values[:, truth.column_index(name)].sum())
        for name in ("x1", "x2")
    }
    masked = sim.apply_mcar(truth, config, rng)

    cio.write_dataset(population, out / "population.csv")
    cio.write_dataset(truth, out / "sample.csv")
    cio.write_dataset(masked, out / "masked.csv", missing_from_mask=True)
    cio.write_mask(masked.mask, masked.columns, out / "mask.csv")
    cio.write_totals(totals, out / "totals.txt")
    print(f"wrote population, sample, masked sample, mask and totals under {out}")
    return EXIT_OK


def _write_diagnostics(rows, path: Path) -> None:
    with path.open("w") as handle:
        for row in rows:
            handle.write(json.dumps(row) + "\n")


def _cmd_impute(args) -> int:
    if args.method in ("bpma", "bpmr", "mcmc") and not args.totals:
        raise _UsageError(f"--method {args.method} requires --totals")
    if args.log_scale and args.method in ("bpmr", "mcmc"):
        raise _UsageError("--log-scale supports upma and bpma only")
    data = cio.read_dataset(args.data)
    edits = parse_edit_rules(Path(args.edits).read_text())
    totals = cio.read_totals(args.totals) if args.totals else None
    if totals:
        stray = [name for name in totals if name not in data.columns]
        if stray:
            raise DataFormatError(f"totals reference unknown column(s) {stray}")
    out = Path(args.out)
    diag_path = Path(args.diagnostics) if args.diagnostics else out.with_name(out.name + ".diag.jsonl")

    if args.method == "mcmc":
        diagnostics: list[dict] = []
        if data.mask.any():
            diagnostics.append({"note": "input has missing values; running bpma pre-imputation"})
            print("note: running bpma pre-imputation before the chain", file=sys.stderr)
            pre, pre_diag = impute(
                data, edits, totals, ImputationConfig("bpma", rounds=args.rounds, seed=args.seed)
            )
            diagnostics.extend(pre_diag)
        else:
            if not args.mask:
                raise _UsageError("--method mcmc on complete data requires --mask")
            mask = cio.read_mask(args.mask, data.columns)
            if mask.shape != data.values.shape:
                raise DataFormatError("mask shape does not match the dataset")
            pre = DataMatrix(data.values.copy(), mask, data.columns, data.weights.copy())
        refined, trace = mcmc_refine(
            pre, edits, totals, McmcConfig(iterations=args.iterations, seed=args.seed)
        )
        cio.write_dataset(refined, out)
        _write_diagnostics(diagnostics + trace, diag_path)
        return EXIT_OK

    config = ImputationConfig(
        args.method, rounds=args.rounds, seed=args.seed, log_scale=args.log_scale
    )
    result, diagnostics = impute(data, edits, totals, config)
    cio.write_dataset(result, out)
    _write_diagnostics(diagnostics, diag_path)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    truth = cio.read_dataset(args.truth)
    imputed = cio.read_dataset(args.imputed)
    mask = cio.read_mask(args.mask, truth.columns)
    if truth.columns != imputed.columns:
        raise DataFormatError("truth and imputed files have different columns")
    if truth.values.shape != imputed.values.shape:
        raise DataFormatError("truth and imputed files have different shapes")
    if mask.shape != truth.values.shape:
        raise DataFormatError("mask shape does not match the data")
    if not truth.is_complete():
        raise DataFormatError("truth file has missing values")
    if not imputed.is_complete():
        raise DataFormatError("imputed file has missing values")

    per_variable: dict[str, dict[str, float]] = {}
    for j, name in enumerate(truth.columns):
        cells = mask[:, j]
        if not cells.any():
            continue
        per_variable[name] = {
            "d_l1": metrics.d_l1(truth.values[cells, j], imputed.values[cells, j], truth.weights[cells]),
            "ks": metrics.ks_statistic(truth.values[cells, j], imputed.values[cells, j]),
            "std_pct_diff": metrics.std_pct_diff(truth.values[:, j], imputed.values[:, j]),
        }
    correlations: dict[tuple[str, str], float] = {}
    for a in range(len(truth.columns)):
        for b in range(a + 1, len(truth.columns)):
            correlations[(truth.columns[a], truth.columns[b])] = metrics.weighted_pearson(
                imputed.values[:, a], imputed.values[:, b], imputed.weights
            )
    report = metrics.MetricReport(per_variable=per_variable, correlations=correlations)

    lines = ["variable,metric,value"]
    for var, metric, value in report.rows():
        lines.append(f"{var},{metric},{repr(float(value))}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "impute":
            return _cmd_impute(args)
        return _cmd_evaluate(args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleSystemError, ConvergenceError) as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataFormatError, EditSyntaxError, CalimpError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
