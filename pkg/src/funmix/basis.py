"""B-spline basis construction, evaluation matrices and the first-difference penalty.

All downstream smoothing relies on a fixed clamped B-spline system: a basis of
dimension P on a closed interval, evaluation matrices S(t) of shape P x n, and
the first-order random-walk penalty D'D used as a Gaussian smoothness precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


@dataclass(frozen=True)
class BasisSystem:
    """Clamped B-spline basis of a given degree on [t_min, t_max].

    Attributes
    ----------
    degree : int
        Polynomial degree (0 = piecewise constant, 3 = cubic).
    interior_knots : np.ndarray
        Strictly increasing knots inside the open domain.
    boundary : tuple[float, float]
        Domain endpoints (t_min, t_max).
    P : int
        Basis dimension, equal to len(interior_knots) + degree + 1.
    knots : np.ndarray
        Full clamped knot vector with degree+1 repeats at each boundary.
    """

    degree: int
    interior_knots: np.ndarray
    boundary: tuple[float, float]
    P: int = field(init=False)
    knots: np.ndarray = field(init=False)

    def __post_init__(self):
        t_min, t_max = self.boundary
        interior = np.asarray(self.interior_knots, dtype=float)
        if interior.ndim != 1:
            raise ValueError("interior_knots must be a 1-D array")
        if interior.size and (interior.min() <= t_min or interior.max() >= t_max):
            raise ValueError("interior knots must lie strictly inside the domain")
        if interior.size > 1 and np.any(np.diff(interior) <= 0):
            raise ValueError("interior knots must be strictly increasing")
        knots = np.concatenate(
            [np.full(self.degree + 1, t_min), interior, np.full(self.degree + 1, t_max)]
        )
        object.__setattr__(self, "interior_knots", interior)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "P", interior.size + self.degree + 1)


def build_basis(degree: int, n_interior: int, domain: tuple[float, float]) -> BasisSystem:
    """Build a clamped B-spline basis with equally spaced interior knots.

    Parameters
    ----------
    degree : int
        Spline degree, >= 0.
    n_interior : int
        Number of interior knots, >= 0.
    domain : (t_min, t_max)
        Closed evaluation domain with t_min < t_max.

    Returns
    -------
    BasisSystem with P = n_interior + degree + 1 basis functions.
    """
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if n_interior < 0:
        raise ValueError(f"n_interior must be >= 0, got {n_interior}")
    t_min, t_max = float(domain[0]), float(domain[1])
    if not t_min < t_max:
        raise ValueError(f"degenerate domain: [{t_min}, {t_max}]")
    interior = np.linspace(t_min, t_max, n_interior + 2)[1:-1]
    return BasisSystem(degree=int(degree), interior_knots=interior, boundary=(t_min, t_max))


def evaluate(basis: BasisSystem, grid: np.ndarray) -> np.ndarray:
    """Evaluate all basis functions on a grid.

    Returns the P x n matrix S with S[p, j] = b_p(grid[j]).  Columns sum to one
    (partition of unity on clamped knots); the right boundary uses the
    right-limit convention, so the last basis function equals 1 at t_max.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    t_min, t_max = basis.boundary
    bad = (grid < t_min) | (grid > t_max)
    if bad.any():
        t_bad = grid[bad][0]
        raise ValueError(f"grid point {t_bad!r} outside basis domain [{t_min}, {t_max}]")
    design = BSpline.design_matrix(grid, basis.knots, basis.degree).toarray()
    return design.T


def rw1_penalty(P: int) -> np.ndarray:
    """First-order random-walk penalty D'D for a coefficient vector of length P.

    D is the (P-1) x P first-difference operator, so the quadratic form
    c' (D'D) c equals sum((c[p+1] - c[p])**2).  The result is tridiagonal,
    positive semidefinite with rank P-1 (constant vectors are in the null
    space).
    """
    if P < 2:
        raise ValueError(f"rw1_penalty requires P >= 2, got {P}")
    D = np.diff(np.eye(P), axis=0)
    return D.T @ D
