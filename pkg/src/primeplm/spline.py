"""B-spline bases on [0, 1] with full-multiplicity boundary knots.

Basis functions follow the Cox-de Boor recursion with half-open knot
intervals, except that x = 1 is taken to lie in the last interval so the
final basis function equals 1 there.  A spec of degree d with J interior
knots yields L = J + d + 1 basis functions forming a partition of unity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientData, InvalidDegree, LengthMismatch, OutOfDomain

__all__ = ["SplineSpec", "BasisBlock", "make_spec", "eval_basis", "basis_matrix", "center_block"]


@dataclass(frozen=True)
class SplineSpec:
    degree: int
    interior_knots: tuple[float, ...]
    knot_vector: np.ndarray  # length L + degree + 1, boundary multiplicity degree + 1

    @property
    def basis_size(self) -> int:
        return len(self.interior_knots) + self.degree + 1


def make_spec(
    degree: int = 3,
    n_interior: int = 0,
    placement: str = "uniform",
    data: np.ndarray | None = None,
) -> SplineSpec:
    """Build a spec with uniform or data-quantile interior knots.

    Quantile placement puts knots at the i/(J+1) quantiles of ``data``
    (observed values only, caller's responsibility) and requires enough
    distinct points for the knots to be strictly inside (0, 1).
    """
    if degree < 1:
        raise InvalidDegree(f"degree must be >= 1, got {degree}")
    if n_interior < 0:
        raise InvalidDegree(f"interior knot count must be >= 0, got {n_interior}")
    if placement not in ("uniform", "quantile"):
        raise InvalidDegree(f"unknown placement {placement!r}")

    if n_interior == 0:
        interior: tuple[float, ...] = ()
    elif placement == "uniform":
        interior = tuple((np.arange(1, n_interior + 1) / (n_interior + 1)).tolist())
    else:
        if data is None:
            raise InsufficientData("quantile placement requires data")
        vals = np.asarray(data, dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size < n_interior + 2:
            raise InsufficientData(
                f"need at least {n_interior + 2} observations for {n_interior} quantile knots"
            )
        qs = np.arange(1, n_interior + 1) / (n_interior + 1)
        knots = np.quantile(vals, qs)
        if np.unique(knots).size < n_interior or knots.min() <= 0.0 or knots.max() >= 1.0:
            raise InsufficientData("quantile knots are tied or lie on the boundary")
        interior = tuple(knots.tolist())

    t = np.concatenate([
        np.zeros(degree + 1),
        np.asarray(interior, dtype=float),
        np.ones(degree + 1),
    ])
    return SplineSpec(degree=degree, interior_knots=interior, knot_vector=t)


def basis_matrix(spec: SplineSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate all L basis functions at each point; shape (len(x), L)."""
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).ravel()
    if flat.size and (np.any(~np.isfinite(flat)) or flat.min() < 0.0 or flat.max() > 1.0):
        bad = flat[~((flat >= 0.0) & (flat <= 1.0))][0]
        raise OutOfDomain(f"basis evaluation outside [0, 1]: {bad!r}")

    d = spec.degree
    t = spec.knot_vector
    L = spec.basis_size
    npts = flat.size

    # knot span containing each x; x = 1 is folded into the last span
    span = np.searchsorted(t, flat, side="right") - 1
    span = np.clip(span, d, L - 1)

    # triangular Cox-de Boor scheme, vectorized over points
    vals = np.zeros((npts, d + 1))
    vals[:, 0] = 1.0
    left = np.empty((npts, d + 1))
    right = np.empty((npts, d + 1))
    for r in range(1, d + 1):
        left[:, r] = flat - t[span + 1 - r]
        right[:, r] = t[span + r] - flat
        saved = np.zeros(npts)
        for j in range(r):
            denom = right[:, j + 1] + left[:, r - j]
            temp = vals[:, j] / denom
            vals[:, j] = saved + right[:, j + 1] * temp
            saved = left[:, r - j] * temp
        vals[:, r] = saved

    out = np.zeros((npts, L))
    rows = np.arange(npts)
    for offset in range(d + 1):
        out[rows, span - d + offset] = vals[:, offset]
    return out


def eval_basis(spec: SplineSpec, x: float) -> np.ndarray:
    """Basis vector of length L at a single point in [0, 1]."""
    return basis_matrix(spec, np.array([x]))[0]


@dataclass(frozen=True)
class BasisBlock:
    """Rows of basis evaluations for one covariate, optionally centered."""

    matrix: np.ndarray
    column_means: np.ndarray | None = None
    centered: bool = False


def center_block(block: BasisBlock, means: np.ndarray | None = None) -> BasisBlock:
    """Subtract column means (given, or computed from all rows).

    Centering an already-centered block is a no-op, so re-applying with the
    recorded means is idempotent.
    """
    if block.centered:
        return block
    L = block.matrix.shape[1]
    if means is None:
        means = block.matrix.mean(axis=0)
    else:
        means = np.asarray(means, dtype=float)
        if means.shape != (L,):
            raise LengthMismatch(f"means must have length {L}, got shape {means.shape}")
    return BasisBlock(matrix=block.matrix - means, column_means=means, centered=True)
