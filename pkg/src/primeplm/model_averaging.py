"""Jackknife model averaging over single-nonlinear-covariate candidates.

Candidate k models covariate k with a spline and all remaining covariates
linearly.  Weights minimize the leave-one-out cross-validation criterion
w' (E'E) w over the probability simplex, where column k of E holds the
LOO residuals of candidate k's least squares fit on the complete cases
(computed by the hat-diagonal shortcut, no refits).  Final predictions
average the full-data candidate fits under those weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dataset import ModelStructure, ObservationTable, complete_case_subset
from .errors import (
    DegenerateColumn,
    InsufficientCompleteCases,
    LengthMismatch,
    LeverageOne,
    SingularGram,
)
from .kernel_impute import KernelConfig
from .prime_fit import PrimeFit, fit_prime, predict
from .spline import SplineSpec, basis_matrix, make_spec

__all__ = [
    "CandidateModel",
    "CvMatrix",
    "AveragedFit",
    "build_candidates",
    "fit_candidate_full",
    "cc_design",
    "hat_diag",
    "loo_residuals",
    "build_cv_matrix",
    "cv_weights",
    "predict_averaged",
    "fit_prime_ma",
]

_LEVERAGE_TOL = 1e-8
_QP_IMPROVEMENT_TOL = 1e-12
_QP_MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class CandidateModel:
    """One covariate modeled nonlinearly, the rest linear."""

    name: str
    structure: ModelStructure


def build_candidates(columns) -> list[CandidateModel]:
    columns = tuple(columns)
    out = []
    for name in columns:
        rest = tuple(c for c in columns if c != name)
        out.append(CandidateModel(name=name, structure=ModelStructure((name,), rest)))
    return out


def fit_candidate_full(
    table: ObservationTable,
    candidate: CandidateModel,
    spec: SplineSpec,
    config: KernelConfig,
) -> PrimeFit:
    """Full-data fit of one candidate (used for the averaged prediction)."""
    return fit_prime(table.with_structure(candidate.structure), spec, config)


def cc_design(
    table: ObservationTable,
    candidate: CandidateModel,
    spec: SplineSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate design on the complete-case rows.

    Returns (G, rows).  G stacks the uncentered basis block for the
    candidate's nonlinear column (a partition of unity, so it already
    spans the constant and no intercept column is added) with the
    remaining covariates as given.
    """
    rows = complete_case_subset(table)
    if rows.size == 0:
        raise InsufficientCompleteCases("no complete rows for the candidate design")
    pos = table.position(candidate.name)
    vals = table.x[rows, pos]
    lo, hi = float(vals.min()), float(vals.max())
    if not hi > lo:
        raise DegenerateColumn(
            f"candidate column {candidate.name!r} is constant on the complete cases"
        )
    block = basis_matrix(spec, (vals - lo) / (hi - lo))
    others = [
        table.x[rows, table.position(c)][:, None] for c in candidate.structure.linear
    ]
    return np.hstack([block, *others]), rows


def hat_diag(G: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Diagonal of G (G'G)^{-1} G' via the thin QR factorization."""
    G = np.asarray(G, dtype=float)
    q, r = np.linalg.qr(G, mode="reduced")
    d = np.abs(np.diag(r))
    if d.min() <= rtol * d.max():
        raise SingularGram(
            f"candidate cross-product matrix is numerically singular "
            f"(diag ratio {d.min() / d.max():.2e})"
        )
    return (q * q).sum(axis=1)


def loo_residuals(G: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact leave-one-out residuals (y_i - yhat_i) / (1 - h_ii)."""
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float)
    h = hat_diag(G)
    if np.any(h >= 1.0 - _LEVERAGE_TOL):
        raise LeverageOne("a unit has leverage numerically equal to 1")
    coef, _, _, _ = scipy.linalg.lstsq(G, y)
    resid = y - G @ coef
    return resid / (1.0 - h)


@dataclass(frozen=True)
class CvMatrix:
    """LOO residual columns per candidate, after leverage-based row drops."""

    matrix: np.ndarray  # (n_kept, K)
    rows: np.ndarray  # original table row indices kept
    dropped: np.ndarray  # original table row indices removed (leverage ~ 1)
    candidates: tuple[str, ...]


def build_cv_matrix(
    table: ObservationTable,
    candidates: list[CandidateModel],
    spec: SplineSpec,
) -> CvMatrix:
    """One pass over candidates; units with leverage >= 1 - 1e-8 in any
    candidate are dropped from every column (same unit set throughout)."""
    columns = []
    leverages = []
    rows = None
    for cand in candidates:
        G, cc_rows = cc_design(table, cand, spec)
        if rows is None:
            rows = cc_rows
        h = hat_diag(G)
        coef, _, _, _ = scipy.linalg.lstsq(G, table.y[cc_rows])
        resid = table.y[cc_rows] - G @ coef
        leverages.append(h)
        columns.append((resid, h))
    keep = np.ones(rows.size, dtype=bool)
    for h in leverages:
        keep &= h < 1.0 - _LEVERAGE_TOL
    if not keep.any():
        raise InsufficientCompleteCases("every complete case has leverage ~ 1")
    matrix = np.column_stack(
        [resid[keep] / (1.0 - h[keep]) for resid, h in columns]
    )
    return CvMatrix(
        matrix=matrix,
        rows=rows[keep],
        dropped=rows[~keep],
        candidates=tuple(c.name for c in candidates),
    )


def cv_weights(cv: CvMatrix | np.ndarray) -> np.ndarray:
    """Minimize w'(E'E)w over the simplex by pairwise coordinate exchange.

    Deterministic sweep over index pairs; each step transfers the exactly
    optimal amount of mass between the two coordinates (clipped to keep
    both nonnegative); stops when no pair improves by more than 1e-12.
    """
    E = cv.matrix if isinstance(cv, CvMatrix) else np.asarray(cv, dtype=float)
    Q = E.T @ E
    return _simplex_qp(Q)


def _simplex_qp(Q: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    K = Q.shape[0]
    if K == 1:
        return np.ones(1)
    w = np.full(K, 1.0 / K)
    Qw = Q @ w
    for _ in range(_QP_MAX_SWEEPS):
        improved = False
        for a in range(K):
            for b in range(a + 1, K):
                g = Qw[a] - Qw[b]  # d(w'Qw)/dt = 2g at t = 0 along e_a - e_b
                curv = Q[a, a] - 2.0 * Q[a, b] + Q[b, b]
                if curv > 0.0:
                    t = -g / curv
                elif g > 0.0:
                    t = -w[a]
                elif g < 0.0:
                    t = w[b]
                else:
                    continue
                t = min(max(t, -w[a]), w[b])
                gain = -(2.0 * g * t + curv * t * t)
                if gain > _QP_IMPROVEMENT_TOL:
                    w[a] += t
                    w[b] -= t
                    Qw += t * (Q[:, a] - Q[:, b])
                    improved = True
        if not improved:
            break
    w = np.maximum(w, 0.0)
    return w / w.sum()


def predict_averaged(fits, weights, rows: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    fits = tuple(fits)
    if weights.shape != (len(fits),):
        raise LengthMismatch(f"{len(fits)} fits but weight shape {weights.shape}")
    out = None
    for fit, w in zip(fits, weights):
        term = w * predict(fit, rows)
        out = term if out is None else out + term
    return out


@dataclass(frozen=True)
class AveragedFit:
    candidates: tuple[str, ...]
    fits: tuple[PrimeFit, ...]
    weights: np.ndarray
    n_complete: int
    n_dropped: int
    objective: float
    uniform_fallback: bool
    notes: tuple[str, ...] = field(default_factory=tuple)

    def predict(self, rows: np.ndarray) -> np.ndarray:
        return predict_averaged(self.fits, self.weights, rows)


def fit_prime_ma(
    table: ObservationTable,
    spec: SplineSpec | None = None,
    config: KernelConfig | None = None,
) -> AveragedFit:
    """Candidate fits on all rows, CV weights from the complete cases."""
    if spec is None:
        spec = make_spec()
    if config is None:
        config = KernelConfig()
    candidates = build_candidates(table.columns)
    fits = tuple(fit_candidate_full(table, c, spec, config) for c in candidates)
    n_cov = len(table.columns)
    rows = complete_case_subset(table)
    threshold = 1 + spec.basis_size + (n_cov - 1)
    notes: list[str] = []
    if rows.size < threshold:
        notes.append(
            f"complete cases ({rows.size}) below the weighting threshold "
            f"({threshold}); using uniform weights"
        )
        weights = np.full(n_cov, 1.0 / n_cov)
        dropped = 0
        objective = float("nan")
        uniform = True
    else:
        cv = build_cv_matrix(table, candidates, spec)
        weights = cv_weights(cv)
        dropped = int(cv.dropped.size)
        if dropped:
            notes.append(f"dropped {dropped} high-leverage units from the CV matrix")
        Q = cv.matrix.T @ cv.matrix
        objective = float(weights @ Q @ weights)
        uniform = False
    return AveragedFit(
        candidates=tuple(c.name for c in candidates),
        fits=fits,
        weights=weights,
        n_complete=int(rows.size),
        n_dropped=dropped,
        objective=objective,
        uniform_fallback=uniform,
        notes=tuple(notes),
    )
