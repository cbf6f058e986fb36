"""Sequential imputation satisfying edits and, when requested, column totals.

Variables are imputed one after another.  For the current target, every
record missing it gets an admissible interval from the edit system (with
all other currently-known values filled in), a regression supplies
predictions for the missing cells, and the predictions are made feasible:

* ``upma``  - predictions clipped into their intervals (no total),
* ``bpma``  - predictions calibrated to the column total, then shifted by
  the smallest zero-sum adjustment keeping every cell in its interval,
* ``bpmr``  - calibrated predictions plus interval-respecting random
  residuals that are re-centered to weighted sum zero.

Values forced through balance edits are written back immediately, so the
data stays consistent after every step.  Later rounds re-impute each
target with all other variables as predictors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import adjust, fm, regression, residuals
from .edits import DEFAULT_TOL, EditKind, EditSystem, reduce_system, violation_matrix
from .errors import (
    CalimpError,
    InfeasibleRecordError,
    InfeasibleSystemError,
    InsufficientDataError,
    RankDeficiencyError,
)

METHODS = ("upma", "bpma", "bpmr")

#: Map column name -> known (weighted) total.
Totals = Mapping[str, float]


@dataclass
class DataMatrix:
    """Numeric table with a missingness mask and per-record weights.

    ``mask`` marks the cells without trustworthy observed values; before
    imputation those cells hold NaN, afterwards they hold the imputed
    values while the mask still records which cells were filled in.
    """

    values: np.ndarray
    mask: np.ndarray
    columns: tuple[str, ...]
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.columns = tuple(self.columns)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-d array")
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask shapes differ")
        if len(self.columns) != self.values.shape[1]:
            raise ValueError("column names do not match the value columns")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        if self.weights is None:
            self.weights = np.ones(self.values.shape[0])
        else:
            self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.values.shape[0],):
            raise ValueError("weights must be one per record")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive")
        if np.any(np.isnan(self.values) & ~self.mask):
            raise ValueError("NaN present in a cell not flagged as missing")

    @property
    def n_records(self) -> int:
        return self.values.shape[0]

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None

    def is_complete(self) -> bool:
        return not np.any(np.isnan(self.values))

    def copy(self) -> "DataMatrix":
        return DataMatrix(self.values.copy(), self.mask.copy(), self.columns, self.weights.copy())


@dataclass(frozen=True)
class ImputationConfig:
    method: str
    rounds: int = 2
    predictors: Mapping[str, Sequence[str]] | None = None
    seed: int = 0
    variable_order: Sequence[str] | None = None
    edit_tol: float = DEFAULT_TOL
    total_rtol: float = 1e-8
    adjust_tol: float = 1e-10
    adjust_max_iter: int = 10_000
    log_scale: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.log_scale and self.method == "bpmr":
            raise ValueError("log-scale imputation supports upma and bpma only")


def variable_order(data: DataMatrix, config: ImputationConfig) -> list[str]:
    """Targets in imputation order: fewest missing first unless given."""
    counts = {name: int(data.mask[:, j].sum()) for j, name in enumerate(data.columns)}
    needed = [name for name in data.columns if counts[name] > 0]
    if config.variable_order is None:
        return sorted(needed, key=lambda name: (counts[name], data.columns.index(name)))
    explicit = list(config.variable_order)
    unknown = [name for name in explicit if name not in counts]
    if unknown:
        raise ValueError(f"variable order names unknown column(s) {unknown}")
    omitted = [name for name in needed if name not in explicit]
    if omitted:
        raise ValueError(f"variable order omits column(s) with missing values: {omitted}")
    return explicit


def _precheck_observed(data: DataMatrix, edits: EditSystem, tol: float) -> None:
    """The observed parts of every record must already satisfy the edits."""
    col_idx = {name: j for j, name in enumerate(data.columns)}
    X = data.values
    for k, edit in enumerate(edits.edits):
        idx = [col_idx[v] for v in edit.coeffs]
        sub = X[:, idx]
        complete = ~np.isnan(sub).any(axis=1)
        if not complete.any():
            continue
        coeffs = np.array([edit.coeffs[v] for v in edit.coeffs])
        resid = sub[complete] @ coeffs + edit.constant
        scale = np.maximum(1.0, np.abs(sub[complete]).max(axis=1))
        if edit.kind is EditKind.EQUALITY:
            bad = np.abs(resid) > tol * scale
        else:
            bad = resid < -tol * scale
        if bad.any():
            rec = int(np.flatnonzero(complete)[np.argmax(bad)])
            raise InfeasibleRecordError(
                f"record {rec} violates edit {k} on its observed values "
                f"(residual {float(resid[np.argmax(bad)]):.6g})",
                record=rec,
                edit_index=k,
            )


def _auto_round1_predictors(data: DataMatrix, target: str, imputed_so_far: list[str]) -> list[str]:
    complete = [
        name
        for j, name in enumerate(data.columns)
        if name != target and not data.mask[:, j].any()
    ]
    return complete + [name for name in imputed_so_far if name != target]


def _fit_with_fallback(y, X, w, predictor_names, benchmarked, X_mis, total, w_mis):
    """Fit, dropping collinear or surplus predictors until the design works."""
    names = list(predictor_names)
    dropped: list[str] = []
    while True:
        try:
            if benchmarked:
                bfit = regression.fit_benchmarked(
                    y, X, X_mis, total, weights_obs=w, weights_mis=w_mis, names=names
                )
                return bfit, names, dropped
            ols = regression.fit_ols(y, X, weights=w, names=names)
            return ols, names, dropped
        except RankDeficiencyError as err:
            if err.column not in names:
                raise
            dropped.append(err.column)
            keep = [j for j, n in enumerate(names) if n != err.column]
            X = X[:, keep]
            X_mis = X_mis[:, keep]
            names = [n for n in names if n != err.column]
        except InsufficientDataError:
            if not names:
                raise
            dropped.append(names[-1])
            X = X[:, :-1]
            X_mis = X_mis[:, :-1]
            names = names[:-1]


def _interval_stats(intervals: list[fm.Interval]) -> dict:
    return {
        "count": len(intervals),
        "degenerate": sum(1 for iv in intervals if iv.is_point()),
        "bounded": sum(1 for iv in intervals if iv.is_bounded()),
        "unbounded": sum(1 for iv in intervals if not iv.is_bounded()),
    }


def impute(
    data: DataMatrix,
    edits: EditSystem,
    totals: Totals | None = None,
    config: ImputationConfig | None = None,
) -> tuple[DataMatrix, list[dict]]:
    """Impute every missing cell; returns the completed data and diagnostics.

    The result satisfies every edit (relative tolerance ``edit_tol``); the
    benchmarked methods additionally reproduce the given column totals to
    ``total_rtol``.  ``upma`` and ``bpma`` are deterministic, ``bpmr`` is
    deterministic given the seed.
    """
    if config is None:
        config = ImputationConfig("upma")
    unknown = [v for v in edits.variables if v not in data.columns]
    if unknown:
        raise ValueError(f"edits reference column(s) not in the data: {unknown}")
    benchmarked = config.method in ("bpma", "bpmr")
    missing_cols = [name for j, name in enumerate(data.columns) if data.mask[:, j].any()]
    if benchmarked:
        if totals is None:
            raise ValueError(f"method {config.method!r} requires column totals")
        without = [name for name in missing_cols if name not in totals]
        if without:
            raise ValueError(f"totals missing for column(s) with missing values: {without}")
    _precheck_observed(data, edits, config.edit_tol)

    order = variable_order(data, config)
    diagnostics: list[dict] = []
    if not order:
        return data.copy(), diagnostics

    current = data.values.copy()
    col_idx = {name: j for j, name in enumerate(data.columns)}
    edit_vars = [v for v in edits.variables]
    imputed_so_far: list[str] = []

    for rnd in range(1, config.rounds + 1):
        for target in order:
            t = col_idx[target]
            rows = np.flatnonzero(data.mask[:, t])
            if rows.size == 0:
                continue
            current[rows, t] = np.nan

            intervals: list[fm.Interval] = []
            records: list[fm.EliminationRecord] = []
            for i in rows:
                row_state = {
                    v: float(current[i, col_idx[v]])
                    for v in edit_vars
                    if not math.isnan(current[i, col_idx[v]])
                }
                try:
                    reduced = reduce_system(edits, row_state, tol=config.edit_tol, origin=int(i))
                    interval, rec = fm.admissible_interval(reduced, target, tol=config.edit_tol)
                except InfeasibleSystemError as err:
                    raise InfeasibleSystemError(
                        f"record {i}, variable {target!r}: {err}", witness=err.witness
                    ) from err
                intervals.append(interval)
                records.append(rec)

            if rnd == 1 and config.predictors is not None and target in config.predictors:
                pred_names = list(config.predictors[target])
            elif rnd == 1:
                pred_names = _auto_round1_predictors(data, target, imputed_so_far)
            else:
                pred_names = [name for name in data.columns if name != target]
            bad = [p for p in pred_names if p not in col_idx]
            if bad:
                raise ValueError(f"unknown predictor column(s) {bad} for target {target!r}")
            if target in pred_names:
                raise ValueError(f"target {target!r} cannot be its own predictor")

            obs = np.flatnonzero(~data.mask[:, t])
            pred_idx = [col_idx[p] for p in pred_names]
            fit_rows = current[np.ix_(obs, pred_idx)] if pred_idx else np.empty((obs.size, 0))
            mis_rows = current[np.ix_(rows, pred_idx)] if pred_idx else np.empty((rows.size, 0))
            if np.isnan(fit_rows).any() or np.isnan(mis_rows).any():
                incomplete = sorted(
                    {pred_names[j] for j in np.unique(np.argwhere(np.isnan(mis_rows))[:, 1])}
                    | {pred_names[j] for j in np.unique(np.argwhere(np.isnan(fit_rows))[:, 1])}
                )
                raise ValueError(
                    f"predictor(s) {incomplete} for target {target!r} are not complete yet"
                )
            y = current[obs, t]
            w_obs = data.weights[obs]
            w_mis = data.weights[rows]

            if config.log_scale:
                fit_out = _log_scale_step(
                    y, fit_rows, mis_rows, w_obs, w_mis, pred_names, benchmarked,
                    None if totals is None else float(totals[target]),
                )
                predictions, fit_diag, used_names, dropped = fit_out
                base_sigma = 0.0
            else:
                total = float(totals[target]) if benchmarked else 0.0
                fit, used_names, dropped = _fit_with_fallback(
                    y, fit_rows, w_obs, pred_names, benchmarked, mis_rows, total, w_mis
                )
                if benchmarked:
                    used_idx = [pred_names.index(n) for n in used_names]
                    predictions = regression.predict_missing(fit, mis_rows[:, used_idx])
                    base = fit.base
                    fit_diag = {
                        "intercept": base.intercept,
                        "slopes": [float(s) for s in base.slopes],
                        "residual_variance": base.residual_variance,
                        "n_obs": base.n_obs,
                        "missing_intercept": fit.missing_intercept,
                        "missing_sum_target": fit.missing_sum_target,
                    }
                    base_sigma = math.sqrt(base.residual_variance)
                else:
                    used_idx = [pred_names.index(n) for n in used_names]
                    predictions = fit.predict(mis_rows[:, used_idx])
                    fit_diag = {
                        "intercept": fit.intercept,
                        "slopes": [float(s) for s in fit.slopes],
                        "residual_variance": fit.residual_variance,
                        "n_obs": fit.n_obs,
                    }
                    base_sigma = math.sqrt(fit.residual_variance)

            lower = np.array([iv.lower for iv in intervals])
            upper = np.array([iv.upper for iv in intervals])
            residual_diag = None
            if config.method == "upma":
                final = np.clip(predictions, lower, upper)
                adjustment_diag = {"clipped": int(np.sum(final != predictions))}
            elif config.method == "bpma":
                problem = adjust.AdjustmentProblem(predictions, lower, upper, w_mis)
                try:
                    a = adjust.zero_sum_interval_adjust(
                        problem, tol=config.adjust_tol, max_iter=config.adjust_max_iter
                    )
                except InfeasibleSystemError as err:
                    raise InfeasibleSystemError(
                        f"variable {target!r}, round {rnd}: {err}", witness=getattr(err, "witness", None)
                    ) from err
                final = predictions + a
                adjustment_diag = {
                    "max_abs": float(np.max(np.abs(a))) if a.size else 0.0,
                    "weighted_sum": float(np.sum(w_mis * a)),
                }
            else:  # bpmr
                res_intervals = [
                    fm.Interval(lo - p, hi - p)
                    for lo, hi, p in zip(lower, upper, predictions)
                ]
                rngs = [
                    residuals.cell_rng(config.seed * 1_000_003 + rnd, t, int(i))
                    for i in rows
                ]
                data_scale = max(1.0, float(np.sum(np.abs(w_mis * predictions))))
                try:
                    drawn, residual_diag = residuals.benchmarked_residuals(
                        base_sigma, res_intervals, w_mis, rngs,
                        feasibility_scale=data_scale,
                    )
                except InfeasibleSystemError as err:
                    raise InfeasibleSystemError(
                        f"variable {target!r}, round {rnd}: {err}", witness=getattr(err, "witness", None)
                    ) from err
                final = predictions + drawn
                adjustment_diag = {
                    "max_abs": float(np.max(np.abs(drawn))) if drawn.size else 0.0,
                    "weighted_sum": float(np.sum(w_mis * drawn)),
                }

            current[rows, t] = final
            companions = 0
            for value, i, rec in zip(final, rows, records):
                resolved = fm.resolve_companions(rec, {target: float(value)})
                for var, val in resolved.items():
                    j = col_idx[var]
                    if math.isnan(current[i, j]):
                        current[i, j] = val
                        companions += 1

            if target not in imputed_so_far:
                imputed_so_far.append(target)
            diagnostics.append(
                {
                    "round": rnd,
                    "variable": target,
                    "n_missing": int(rows.size),
                    "predictors": used_names,
                    "dropped_predictors": dropped,
                    "fit": fit_diag,
                    "intervals": _interval_stats(intervals),
                    "adjustment": adjustment_diag,
                    "residuals": residual_diag,
                    "companions_written": companions,
                }
            )

    if np.isnan(current).any():
        i, j = np.argwhere(np.isnan(current))[0]
        raise CalimpError(
            f"internal error: cell ({int(i)}, {data.columns[int(j)]}) left unimputed"
        )
    observed = ~data.mask
    if not np.array_equal(current[observed], data.values[observed]):
        raise CalimpError("internal error: an observed cell was modified")
    _validate_result(current, data, edits, totals if benchmarked else None, config)
    return DataMatrix(current, data.mask.copy(), data.columns, data.weights.copy()), diagnostics


def _log_scale_step(y, X_obs, X_mis, w_obs, w_mis, pred_names, benchmarked, total):
    """Log-scale predictive means; benchmarked fits use the multiplicative
    correction so the original-scale prediction sum hits the column total."""
    if np.any(y <= 0) or np.any(X_obs <= 0) or np.any(X_mis <= 0):
        raise ValueError("log-scale imputation requires strictly positive data")
    if not (np.allclose(w_obs, w_obs[0]) and np.allclose(w_mis, w_obs[0])):
        raise ValueError("log-scale imputation supports equal weights only")
    z = np.log(y)
    Z_obs = np.log(X_obs) if X_obs.size else X_obs
    Z_mis = np.log(X_mis) if X_mis.size else X_mis
    fit, used_names, dropped = _fit_with_fallback(
        z, Z_obs, None, pred_names, False, Z_mis, 0.0, None
    )
    used_idx = [pred_names.index(n) for n in used_names]
    Zm = Z_mis[:, used_idx]
    fit_diag = {
        "intercept": fit.intercept,
        "slopes": [float(s) for s in fit.slopes],
        "residual_variance": fit.residual_variance,
        "n_obs": fit.n_obs,
        "scale": "log",
    }
    if benchmarked:
        missing_total = float(total - np.sum(w_obs * y))
        c = regression.log_benchmark_correction(fit, Zm, missing_total)
        shape = np.exp(Zm @ fit.slopes) if fit.slopes.size else np.ones(Zm.shape[0])
        predictions = c * shape
        fit_diag["log_correction"] = c
    else:
        predictions = np.exp(fit.predict(Zm))
    return predictions, fit_diag, used_names, dropped


def _validate_result(current, data, edits, totals, config) -> None:
    if edits.edits:
        bad = violation_matrix(edits, current, data.columns, tol=config.edit_tol)
        if bad.any():
            i, k = np.argwhere(bad)[0]
            raise CalimpError(
                f"internal error: imputed record {int(i)} violates edit {int(k)}"
            )
    if totals is not None:
        for j, name in enumerate(data.columns):
            if name in totals and data.mask[:, j].any():
                got = float(np.sum(data.weights * current[:, j]))
                want = float(totals[name])
                if abs(got - want) > config.total_rtol * max(1.0, abs(want)):
                    raise CalimpError(
                        f"internal error: column {name!r} sums to {got!r}, needs {want!r}"
                    )
