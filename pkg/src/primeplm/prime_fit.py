"""Spline + linear least squares on the imputed design matrix.

The design is one intercept column, one centered basis block per
nonlinear covariate (imputed basis rows where the covariate is missing),
and one column per linear covariate (imputed scalars where missing).
Basis blocks are centered at their observed-row column means, which
together with the explicit intercept fixes the location of each curve;
the leftover within-block collinearity (centered partition-of-unity rows
sum to zero) is resolved by the minimum-norm least squares solution, so
coefficients are reproducible and the curve estimates are unique.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dataset import (
    ModelStructure,
    NormalizationMap,
    ObservationTable,
    PatternIndex,
    build_pattern_index,
    complete_case_subset,
    minmax_normalize,
)
from .errors import (
    BadFitFile,
    DegenerateColumn,
    IncompleteRow,
    InsufficientCompleteCases,
    LengthMismatch,
    Underdetermined,
    UnknownColumn,
)
from .kernel_impute import ImputationDiagnostics, KernelConfig, KernelImputer
from .spline import SplineSpec, basis_matrix, make_spec

__all__ = [
    "DesignMatrix",
    "FitDiagnostics",
    "PrimeFit",
    "assemble_design",
    "solve_least_squares",
    "fit_prime",
    "fit_cc",
    "fit_mean_impute",
    "predict",
    "estimate_g",
    "save_fit",
    "load_fit",
]

# relative singular-value cutoff: separates the exact structural nulls
# (~1e-16) from genuine directions by many orders of magnitude
_RCOND = 1e-9

_FIT_FORMAT = "primeplm.fit"
_FIT_VERSION = 1


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    labels: tuple[str, ...]
    centering_means: np.ndarray  # (p, L) observed-row column means per block
    imputation: ImputationDiagnostics


@dataclass
class FitDiagnostics:
    n_rows: int = 0
    n_columns: int = 0
    rank: int = 0
    rank_deficient: bool = False
    condition_estimate: float = float("nan")
    n_complete: int = 0
    imputation: ImputationDiagnostics = field(default_factory=ImputationDiagnostics)
    notes: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class PrimeFit:
    """Fitted intercept, per-covariate curve coefficients, linear slopes."""

    structure: ModelStructure
    columns: tuple[str, ...]
    spec: SplineSpec
    kernel_config: KernelConfig
    normalization: NormalizationMap
    intercept: float
    curve_coefs: np.ndarray  # (p, L), aligned with structure.nonlinear
    linear_coefs: np.ndarray  # (q,), aligned with structure.linear
    centering_means: np.ndarray  # (p, L)
    diagnostics: FitDiagnostics


def assemble_design(
    table: ObservationTable,
    pattern: PatternIndex,
    spec: SplineSpec,
    config: KernelConfig,
) -> DesignMatrix:
    """Build the n x (1 + p*L + q) design; nonlinear columns must already
    be normalized to [0, 1]."""
    n = table.n
    L = spec.basis_size
    imputer = KernelImputer(table, pattern, config, spec=spec)
    pieces = [np.ones((n, 1))]
    labels = ["intercept"]
    means = np.zeros((table.structure.p, L))

    for k, name in enumerate(table.structure.nonlinear):
        pos = table.position(name)
        observed = table.mask[:, pos]
        block = np.zeros((n, L))
        block[observed] = basis_matrix(spec, table.x[observed, pos])
        for i in np.flatnonzero(~observed):
            block[i] = imputer.basis_row(i, pos)
        col_means = block[observed].mean(axis=0)
        means[k] = col_means
        pieces.append(block - col_means)
        labels.extend(f"{name}:b{l + 1}" for l in range(L))

    for name in table.structure.linear:
        pos = table.position(name)
        observed = table.mask[:, pos]
        col = np.array(table.x[:, pos])
        for i in np.flatnonzero(~observed):
            col[i] = imputer.linear_value(i, pos)
        pieces.append(col[:, None])
        labels.append(name)

    return DesignMatrix(
        matrix=np.hstack(pieces),
        labels=tuple(labels),
        centering_means=means,
        imputation=imputer.diagnostics,
    )


def solve_least_squares(
    matrix: np.ndarray,
    y: np.ndarray,
    diagnostics: FitDiagnostics | None = None,
) -> np.ndarray:
    """Minimum-norm least squares via SVD with a fixed singular cutoff."""
    matrix = np.asarray(matrix, dtype=float)
    y = np.asarray(y, dtype=float)
    n, ncols = matrix.shape
    if n < ncols:
        raise Underdetermined(f"{n} rows for {ncols} design columns")
    coef, _, rank, sv = scipy.linalg.lstsq(matrix, y, cond=_RCOND)
    if diagnostics is not None:
        diagnostics.n_rows = n
        diagnostics.n_columns = ncols
        diagnostics.rank = int(rank)
        diagnostics.rank_deficient = rank < ncols
        diagnostics.condition_estimate = float(sv[0] / sv[rank - 1]) if rank >= 1 else float("inf")
    return coef


def _fit_pipeline(
    table: ObservationTable,
    spec: SplineSpec,
    config: KernelConfig,
) -> PrimeFit:
    normalized, nmap = minmax_normalize(table)
    pattern = build_pattern_index(normalized)
    design = assemble_design(normalized, pattern, spec, config)
    diagnostics = FitDiagnostics(imputation=design.imputation)
    coef = solve_least_squares(design.matrix, normalized.y, diagnostics)
    diagnostics.n_complete = int(complete_case_subset(table).size)

    p, q, L = table.structure.p, table.structure.q, spec.basis_size
    if diagnostics.rank_deficient:
        if diagnostics.rank == diagnostics.n_columns - p:
            diagnostics.notes.append(
                "rank deficiency matches the structural basis-block overlap"
            )
        else:
            diagnostics.notes.append(
                "collinearity beyond the structural basis-block overlap"
            )
    intercept = float(coef[0])
    curve = coef[1 : 1 + p * L].reshape(p, L) if p else np.zeros((0, L))
    linear = coef[1 + p * L :]
    return PrimeFit(
        structure=table.structure,
        columns=table.columns,
        spec=spec,
        kernel_config=config,
        normalization=nmap,
        intercept=intercept,
        curve_coefs=curve,
        linear_coefs=linear,
        centering_means=design.centering_means,
        diagnostics=diagnostics,
    )


def fit_prime(
    table: ObservationTable,
    spec: SplineSpec | None = None,
    config: KernelConfig | None = None,
) -> PrimeFit:
    """Fit on all rows, imputing missing covariates from partial donors."""
    if spec is None:
        spec = make_spec()
    if config is None:
        config = KernelConfig()
    return _fit_pipeline(table, spec, config)


def fit_cc(
    table: ObservationTable,
    spec: SplineSpec | None = None,
    config: KernelConfig | None = None,
) -> PrimeFit:
    """Fit on the complete-case rows only (identical downstream pipeline)."""
    if spec is None:
        spec = make_spec()
    if config is None:
        config = KernelConfig()
    rows = complete_case_subset(table)
    ncols = 1 + table.structure.p * spec.basis_size + table.structure.q
    if rows.size <= ncols:
        raise InsufficientCompleteCases(
            f"{rows.size} complete rows for {ncols} design columns"
        )
    subset = ObservationTable(
        table.y[rows], table.x[rows], table.mask[rows], table.columns, table.structure
    )
    return _fit_pipeline(subset, spec, config)


def fit_mean_impute(
    table: ObservationTable,
    spec: SplineSpec | None = None,
    config: KernelConfig | None = None,
) -> PrimeFit:
    """Comparator: replace each missing cell by its observed column mean."""
    if spec is None:
        spec = make_spec()
    if config is None:
        config = KernelConfig()
    x = np.array(table.x)
    for pos in range(len(table.columns)):
        observed = table.mask[:, pos]
        if not observed.any():
            raise DegenerateColumn(
                f"column {table.columns[pos]!r} is never observed; no mean to impute"
            )
        x[~observed, pos] = table.x[observed, pos].mean()
    filled = ObservationTable(
        table.y, x, np.ones_like(table.mask, dtype=bool), table.columns, table.structure
    )
    return _fit_pipeline(filled, spec, config)


def predict(fit: PrimeFit, rows: np.ndarray) -> np.ndarray:
    """Mean estimates for complete covariate rows (fit.columns order)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != len(fit.columns):
        raise LengthMismatch(
            f"expected {len(fit.columns)} covariate columns, got {rows.shape[1]}"
        )
    if not np.all(np.isfinite(rows)):
        raise IncompleteRow("prediction rows must be fully observed")
    out = np.full(rows.shape[0], fit.intercept)
    for k, name in enumerate(fit.structure.nonlinear):
        pos = fit.columns.index(name)
        z = fit.normalization.apply(name, rows[:, pos], clamp=True)
        out += (basis_matrix(fit.spec, z) - fit.centering_means[k]) @ fit.curve_coefs[k]
    for k, name in enumerate(fit.structure.linear):
        pos = fit.columns.index(name)
        out += rows[:, pos] * fit.linear_coefs[k]
    return out


def estimate_g(fit: PrimeFit, j: int | str, grid: np.ndarray) -> np.ndarray:
    """Centered curve estimate for one nonlinear covariate on original units."""
    if isinstance(j, str):
        if j not in fit.structure.nonlinear:
            raise UnknownColumn(f"{j!r} is not a nonlinear covariate of this fit")
        k = fit.structure.nonlinear.index(j)
    else:
        if not 0 <= j < fit.structure.p:
            raise UnknownColumn(f"nonlinear covariate index {j} out of range")
        k = j
    name = fit.structure.nonlinear[k]
    z = fit.normalization.apply(name, np.asarray(grid, dtype=float), clamp=True)
    return (basis_matrix(fit.spec, z) - fit.centering_means[k]) @ fit.curve_coefs[k]


# -- fit-file round trip -------------------------------------------------------


def _fit_payload(fit: PrimeFit) -> dict:
    diag = fit.diagnostics
    return {
        "format": _FIT_FORMAT,
        "version": _FIT_VERSION,
        "columns": list(fit.columns),
        "structure": {
            "nonlinear": list(fit.structure.nonlinear),
            "linear": list(fit.structure.linear),
        },
        "spline": {
            "degree": fit.spec.degree,
            "interior_knots": list(fit.spec.interior_knots),
        },
        "kernel": {
            "bandwidth": fit.kernel_config.bandwidth,
            "fixed_h": (
                list(fit.kernel_config.fixed_h)
                if fit.kernel_config.fixed_h is not None
                else None
            ),
            "projection": fit.kernel_config.projection,
            "n_projections": fit.kernel_config.n_projections,
            "projection_dist": fit.kernel_config.projection_dist,
            "projection_threshold": fit.kernel_config.projection_threshold,
            "seed": fit.kernel_config.seed,
        },
        "normalization": {k: list(v) for k, v in fit.normalization.ranges.items()},
        "intercept": fit.intercept,
        "curve_coefs": fit.curve_coefs.tolist(),
        "linear_coefs": fit.linear_coefs.tolist(),
        "centering_means": fit.centering_means.tolist(),
        "diagnostics": {
            "n_rows": diag.n_rows,
            "n_columns": diag.n_columns,
            "rank": diag.rank,
            "rank_deficient": diag.rank_deficient,
            "condition_estimate": diag.condition_estimate,
            "n_complete": diag.n_complete,
            "no_donor_fallbacks": dict(diag.imputation.no_donor_fallbacks),
            "underflow_fallbacks": dict(diag.imputation.underflow_fallbacks),
            "degenerate_bandwidths": dict(diag.imputation.degenerate_bandwidths),
            "notes": list(diag.notes),
        },
    }


def save_fit(fit: PrimeFit, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_fit_payload(fit), fh, indent=2)
        fh.write("\n")


def load_fit(path: str | os.PathLike) -> PrimeFit:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as err:
        raise BadFitFile(f"{path}: not a fit file ({err})") from None
    if not isinstance(payload, dict) or payload.get("format") != _FIT_FORMAT:
        raise BadFitFile(f"{path}: missing {_FIT_FORMAT!r} header")
    if payload.get("version") != _FIT_VERSION:
        raise BadFitFile(
            f"{path}: fit file version {payload.get('version')!r}, expected {_FIT_VERSION}"
        )
    structure = ModelStructure(
        nonlinear=tuple(payload["structure"]["nonlinear"]),
        linear=tuple(payload["structure"]["linear"]),
    )
    spline = payload["spline"]
    degree = int(spline["degree"])
    interior = tuple(float(v) for v in spline["interior_knots"])
    spec = SplineSpec(
        degree=degree,
        interior_knots=interior,
        knot_vector=np.concatenate(
            [np.zeros(degree + 1), np.asarray(interior), np.ones(degree + 1)]
        ),
    )
    kern = payload["kernel"]
    config = KernelConfig(
        bandwidth=kern["bandwidth"],
        fixed_h=tuple(kern["fixed_h"]) if kern["fixed_h"] is not None else None,
        projection=kern["projection"],
        n_projections=kern["n_projections"],
        projection_dist=kern["projection_dist"],
        projection_threshold=kern["projection_threshold"],
        seed=kern["seed"],
    )
    diag_raw = payload["diagnostics"]
    imputation = ImputationDiagnostics()
    imputation.no_donor_fallbacks.update(diag_raw["no_donor_fallbacks"])
    imputation.underflow_fallbacks.update(diag_raw["underflow_fallbacks"])
    imputation.degenerate_bandwidths.update(diag_raw["degenerate_bandwidths"])
    diagnostics = FitDiagnostics(
        n_rows=diag_raw["n_rows"],
        n_columns=diag_raw["n_columns"],
        rank=diag_raw["rank"],
        rank_deficient=diag_raw["rank_deficient"],
        condition_estimate=diag_raw["condition_estimate"],
        n_complete=diag_raw["n_complete"],
        imputation=imputation,
        notes=list(diag_raw["notes"]),
    )
    return PrimeFit(
        structure=structure,
        columns=tuple(payload["columns"]),
        spec=spec,
        kernel_config=config,
        normalization=NormalizationMap(
            {k: (float(v[0]), float(v[1])) for k, v in payload["normalization"].items()}
        ),
        intercept=float(payload["intercept"]),
        curve_coefs=np.asarray(payload["curve_coefs"], dtype=float).reshape(
            structure.p, spec.basis_size
        ),
        linear_coefs=np.asarray(payload["linear_coefs"], dtype=float),
        centering_means=np.asarray(payload["centering_means"], dtype=float).reshape(
            structure.p, spec.basis_size
        ),
        diagnostics=diagnostics,
    )
