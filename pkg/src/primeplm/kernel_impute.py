"""Nadaraya-Watson imputation of missing covariates from partial donors.

A unit i that observes covariate set C_i borrows, for each missing column
j, the set of donors observing C_i and j.  Donor weights come from a
product Gaussian kernel over the conditioning coordinates (or from
projective resampling onto random directions when |C_i| is large), and
the missing value is the weighted donor average.  Spline-basis rows are
imputed with the same weight vector for every basis component, so an
imputed row still sums to one.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .dataset import ObservationTable, PatternIndex
from .errors import DegenerateColumn, DegenerateSampleWarning, InvalidConfig
from .spline import SplineSpec, basis_matrix

__all__ = [
    "KernelConfig",
    "DonorSet",
    "ImputationDiagnostics",
    "KernelImputer",
    "silverman_bandwidth",
    "product_kernel_weight",
    "projected_kernel_weight",
    "draw_directions",
    "donor_set",
    "impute_linear_value",
    "impute_basis_row",
]

_LOG_2PI = math.log(2.0 * math.pi)
_UNDERFLOW_LOG = -700.0
_DIRECTION_TAG = 0x5EEDD12C  # domain separator for per-pattern direction seeds


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth and projection settings for donor weighting.

    bandwidth "silverman" derives one bandwidth per covariate column from
    its observed values; "fixed" takes fixed_h, one entry per table column.
    projection "resampled" replaces the product kernel by the geometric
    mean of n_projections univariate kernels along random directions
    whenever a unit observes more than projection_threshold covariates.
    """

    bandwidth: str = "silverman"
    fixed_h: tuple[float, ...] | None = None
    projection: str = "none"
    n_projections: int = 2
    projection_dist: str = "standard_normal"
    projection_threshold: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.bandwidth not in ("silverman", "fixed"):
            raise InvalidConfig(f"unknown bandwidth rule {self.bandwidth!r}")
        if self.bandwidth == "fixed":
            if self.fixed_h is None or len(self.fixed_h) == 0:
                raise InvalidConfig("fixed bandwidth rule requires fixed_h")
            if any(h <= 0 for h in self.fixed_h):
                raise InvalidConfig("fixed bandwidths must be positive")
            object.__setattr__(self, "fixed_h", tuple(float(h) for h in self.fixed_h))
        if self.projection not in ("none", "resampled"):
            raise InvalidConfig(f"unknown projection mode {self.projection!r}")
        if self.projection == "resampled" and self.n_projections < 1:
            raise InvalidConfig("n_projections must be >= 1")
        if self.projection_dist not in ("standard_normal", "scaled_uniform"):
            raise InvalidConfig(f"unknown direction distribution {self.projection_dist!r}")
        if self.projection_threshold < 0:
            raise InvalidConfig("projection_threshold must be >= 0")


@dataclass(frozen=True)
class DonorSet:
    """Donor row indices for imputing column ``column`` of unit ``target``."""

    target: int
    column: int
    donors: np.ndarray


@dataclass
class ImputationDiagnostics:
    """Counts of fallback events, keyed by column name."""

    no_donor_fallbacks: Counter = field(default_factory=Counter)
    underflow_fallbacks: Counter = field(default_factory=Counter)
    degenerate_bandwidths: Counter = field(default_factory=Counter)

    @property
    def total_fallbacks(self) -> int:
        return sum(self.no_donor_fallbacks.values()) + sum(self.underflow_fallbacks.values())


def _silverman_core(values: np.ndarray, n: int) -> tuple[float, bool]:
    values = np.asarray(values, dtype=float)
    sd = values.std(ddof=1) if values.size >= 2 else 0.0
    if not np.isfinite(sd) or sd <= 0.0:
        return 1.06 * n ** (-0.2), True
    return 1.06 * float(sd) * n ** (-0.2), False


def silverman_bandwidth(values: np.ndarray, n: int) -> float:
    """1.06 * sample SD * n**(-1/5); degenerate samples fall back to 1.06 * n**(-1/5)."""
    if n < 1:
        raise InvalidConfig("sample size for the bandwidth rate must be >= 1")
    h, degenerate = _silverman_core(values, n)
    if degenerate:
        warnings.warn(
            "zero-variance bandwidth sample, falling back to 1.06 * n**-0.2",
            DegenerateSampleWarning,
            stacklevel=2,
        )
    return h


def _log_gauss(u: np.ndarray) -> np.ndarray:
    return -0.5 * u * u - 0.5 * _LOG_2PI


def _log_product_weight(diff: np.ndarray, h: np.ndarray) -> np.ndarray:
    """log of prod_j K(diff_j / h_j) / h_j, summed over the last axis."""
    diff = np.asarray(diff, dtype=float)
    h = np.asarray(h, dtype=float)
    return (_log_gauss(diff / h) - np.log(h)).sum(axis=-1)


def product_kernel_weight(diff: np.ndarray, h: np.ndarray) -> float:
    """Product Gaussian kernel weight for one donor difference vector."""
    diff = np.asarray(diff, dtype=float)
    h = np.asarray(h, dtype=float)
    if diff.shape != h.shape:
        raise InvalidConfig(f"diff and h shapes differ: {diff.shape} vs {h.shape}")
    return float(np.exp(_log_product_weight(diff, h)))


def _log_projected_weight(diff: np.ndarray, directions: np.ndarray, h: float) -> np.ndarray:
    """log geometric mean over directions of K(v.diff / h) / h."""
    proj = np.asarray(diff, dtype=float) @ np.asarray(directions, dtype=float).T
    return (_log_gauss(proj / h) - math.log(h)).mean(axis=-1)


def projected_kernel_weight(diff: np.ndarray, directions: np.ndarray, h: float) -> float:
    diff = np.asarray(diff, dtype=float)
    directions = np.asarray(directions, dtype=float)
    if directions.ndim != 2 or directions.shape[1] != diff.shape[-1]:
        raise InvalidConfig(
            f"directions must be (B, {diff.shape[-1]}), got {directions.shape}"
        )
    if h <= 0:
        raise InvalidConfig("projection bandwidth must be positive")
    return float(np.exp(_log_projected_weight(diff, directions, h)))


def draw_directions(m: int, n_projections: int, dist: str, seed) -> np.ndarray:
    """(n_projections, m) random directions with E v = 0 and E v**2 = 1."""
    if m < 1 or n_projections < 1:
        raise InvalidConfig("direction counts must be >= 1")
    rng = np.random.default_rng(seed)
    if dist == "standard_normal":
        return rng.standard_normal((n_projections, m))
    if dist == "scaled_uniform":
        # U(-1, 1) has second moment 1/3; rescale so it is exactly 1
        return rng.uniform(-1.0, 1.0, (n_projections, m)) * math.sqrt(3.0)
    raise InvalidConfig(f"unknown direction distribution {dist!r}")


def donor_set(table: ObservationTable, pattern: PatternIndex, i: int, j: int) -> DonorSet:
    """Rows observing everything unit i observes, plus column j.

    The target is excluded automatically because it does not observe j.
    """
    if table.mask[i, j]:
        raise InvalidConfig(f"column {j} is observed for unit {i}; nothing to impute")
    cond = pattern.observed_all[i]
    eligible = table.mask[:, j] & table.mask[:, cond].all(axis=1)
    return DonorSet(target=i, column=j, donors=np.flatnonzero(eligible))


class KernelImputer:
    """Shared caches (bandwidths, donors, directions) for one table.

    The free functions impute_linear_value / impute_basis_row build a
    throwaway instance; fitting code keeps one alive across all cells.
    """

    def __init__(
        self,
        table: ObservationTable,
        pattern: PatternIndex,
        config: KernelConfig,
        spec: SplineSpec | None = None,
        diagnostics: ImputationDiagnostics | None = None,
    ):
        if config.bandwidth == "fixed" and len(config.fixed_h) != len(table.columns):
            raise InvalidConfig(
                f"fixed_h needs {len(table.columns)} entries, got {len(config.fixed_h)}"
            )
        self.table = table
        self.pattern = pattern
        self.config = config
        self.spec = spec
        self.diagnostics = diagnostics if diagnostics is not None else ImputationDiagnostics()
        self._column_h: dict[int, float] = {}
        self._column_mean: dict[int, float] = {}
        self._donors: dict[tuple[bytes, int], np.ndarray] = {}
        self._directions: dict[bytes, np.ndarray] = {}
        self._projected_h: dict[bytes, float] = {}
        self._observed_basis: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- cached pieces -------------------------------------------------------

    def column_bandwidth(self, pos: int) -> float:
        if pos not in self._column_h:
            if self.config.bandwidth == "fixed":
                self._column_h[pos] = self.config.fixed_h[pos]
            else:
                observed = self.table.x[self.table.mask[:, pos], pos]
                h, degenerate = _silverman_core(observed, self.table.n)
                if degenerate:
                    self.diagnostics.degenerate_bandwidths[self.table.columns[pos]] += 1
                    warnings.warn(
                        f"zero-variance bandwidth sample for column "
                        f"{self.table.columns[pos]!r}, falling back to 1.06 * n**-0.2",
                        DegenerateSampleWarning,
                        stacklevel=3,
                    )
                self._column_h[pos] = h
        return self._column_h[pos]

    def _column_observed_mean(self, pos: int) -> float:
        if pos not in self._column_mean:
            observed = self.table.x[self.table.mask[:, pos], pos]
            if observed.size == 0:
                raise DegenerateColumn(
                    f"column {self.table.columns[pos]!r} is never observed; no fallback value"
                )
            self._column_mean[pos] = float(observed.mean())
        return self._column_mean[pos]

    def _donor_rows(self, i: int, j: int) -> np.ndarray:
        key = (self.table.mask[i].tobytes(), j)
        if key not in self._donors:
            self._donors[key] = donor_set(self.table, self.pattern, i, j).donors
        return self._donors[key]

    def _pattern_directions(self, cond: np.ndarray) -> np.ndarray:
        key = cond.tobytes()
        if key not in self._directions:
            m = len(cond)
            if self.config.n_projections >= m:
                raise InvalidConfig(
                    f"n_projections must stay below the conditioning size "
                    f"({self.config.n_projections} >= {m})"
                )
            seed = np.random.SeedSequence(
                [self.config.seed, _DIRECTION_TAG, *np.sort(cond).tolist()]
            )
            self._directions[key] = draw_directions(
                m, self.config.n_projections, self.config.projection_dist, seed
            )
        return self._directions[key]

    def _pattern_projected_h(self, cond: np.ndarray) -> float:
        """One bandwidth per (pattern, direction set): Silverman on the pooled
        projections of pairwise donor-target differences, n = table rows."""
        key = cond.tobytes()
        if key not in self._projected_h:
            directions = self._pattern_directions(cond)
            x = self.table.x
            eligible = np.flatnonzero(self.table.mask[:, cond].all(axis=1))
            mask_row = np.zeros(len(self.table.columns), dtype=bool)
            mask_row[cond] = True
            targets = self.pattern.groups.get(mask_row.tobytes(), np.empty(0, dtype=int))
            samples = []
            for i in targets:
                others = eligible[eligible != i]
                if others.size == 0:
                    continue
                diffs = x[np.ix_(others, cond)] - x[i, cond]
                samples.append((diffs @ directions.T).ravel())
            pooled = np.concatenate(samples) if samples else np.empty(0)
            h, degenerate = _silverman_core(pooled, self.table.n)
            if degenerate:
                label = "pattern:" + ",".join(self.table.columns[c] for c in cond)
                self.diagnostics.degenerate_bandwidths[label] += 1
                warnings.warn(
                    f"degenerate projected-difference sample for {label}, "
                    f"falling back to 1.06 * n**-0.2",
                    DegenerateSampleWarning,
                    stacklevel=3,
                )
            self._projected_h[key] = h
        return self._projected_h[key]

    def _observed_basis_rows(self, pos: int) -> tuple[np.ndarray, np.ndarray]:
        if pos not in self._observed_basis:
            if self.spec is None:
                raise InvalidConfig("basis imputation requires a spline spec")
            rows = np.flatnonzero(self.table.mask[:, pos])
            if rows.size == 0:
                raise DegenerateColumn(
                    f"column {self.table.columns[pos]!r} is never observed; no basis rows"
                )
            self._observed_basis[pos] = (rows, basis_matrix(self.spec, self.table.x[rows, pos]))
        return self._observed_basis[pos]

    # -- weights ---------------------------------------------------------------

    def _log_weights(self, i: int, donors: np.ndarray) -> np.ndarray:
        cond = self.pattern.observed_all[i]
        diffs = self.table.x[np.ix_(donors, cond)] - self.table.x[i, cond]
        use_projection = (
            self.config.projection == "resampled" and len(cond) > self.config.projection_threshold
        )
        if use_projection:
            directions = self._pattern_directions(cond)
            h = self._pattern_projected_h(cond)
            return _log_projected_weight(diffs, directions, h)
        h = np.array([self.column_bandwidth(c) for c in cond])
        return _log_product_weight(diffs, h)

    # -- imputations -------------------------------------------------------------

    def linear_value(self, i: int, j: int) -> float:
        donors = self._donor_rows(i, j)
        name = self.table.columns[j]
        if donors.size == 0:
            self.diagnostics.no_donor_fallbacks[name] += 1
            return self._column_observed_mean(j)
        logw = self._log_weights(i, donors)
        if logw.max() < _UNDERFLOW_LOG:
            self.diagnostics.underflow_fallbacks[name] += 1
            return self._column_observed_mean(j)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        return float(w @ self.table.x[donors, j])

    def basis_row(self, i: int, j: int) -> np.ndarray:
        obs_rows, obs_basis = self._observed_basis_rows(j)
        donors = self._donor_rows(i, j)
        name = self.table.columns[j]
        if donors.size == 0:
            self.diagnostics.no_donor_fallbacks[name] += 1
            return obs_basis.mean(axis=0)
        logw = self._log_weights(i, donors)
        if logw.max() < _UNDERFLOW_LOG:
            self.diagnostics.underflow_fallbacks[name] += 1
            return obs_basis.mean(axis=0)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        # donor basis rows were cached for all rows observing j
        local = np.searchsorted(obs_rows, donors)
        return w @ obs_basis[local]


def impute_linear_value(
    i: int,
    j: int,
    table: ObservationTable,
    pattern: PatternIndex,
    config: KernelConfig,
    diagnostics: ImputationDiagnostics | None = None,
) -> float:
    """NW estimate of the missing linear covariate j of unit i."""
    return KernelImputer(table, pattern, config, diagnostics=diagnostics).linear_value(i, j)


def impute_basis_row(
    i: int,
    j: int,
    spec: SplineSpec,
    table: ObservationTable,
    pattern: PatternIndex,
    config: KernelConfig,
    diagnostics: ImputationDiagnostics | None = None,
) -> np.ndarray:
    """NW estimate of the spline-basis row for missing nonlinear covariate j."""
    imputer = KernelImputer(table, pattern, config, spec=spec, diagnostics=diagnostics)
    return imputer.basis_row(i, j)
