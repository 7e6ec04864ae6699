"""
Empirical Measures

Weighted atom clouds standing for elements of P(R^n) and P(R^n x U), paths of
such clouds on a time grid, measure-valued relaxed controls, common-noise
paths, and the p-Wasserstein distances between them.
"""

import math
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .exceptions import (
    DimensionMismatchError,
    GridMismatchError,
    InvalidMeasureError,
    ModePreconditionError,
)

logger = logging.getLogger(__name__)

# Constants
WEIGHT_TOL = 1e-12
TRANSPORT_MODES = ("auto", "exact-assignment", "sorted-1d")


def _read_only(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def _as_rows(points):
    points = np.asarray(points, dtype=float)
    if points.ndim == 0:
        return points.reshape(1, 1)
    if points.ndim == 1:
        return points.reshape(-1, 1)
    return points


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """
    Probability measure with finitely many atoms.

    Attributes:
        points: Atom locations, shape (k, dim)
        weights: Atom weights, shape (k,), non-negative and summing to one
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = _read_only(_as_rows(self.points))
        weights = _read_only(np.ravel(self.weights))

        if points.shape[0] == 0:
            raise InvalidMeasureError("a measure needs at least one atom")
        if weights.shape[0] != points.shape[0]:
            raise InvalidMeasureError(
                f"{weights.shape[0]} weights for {points.shape[0]} atoms"
            )
        if not np.isfinite(points).all():
            raise InvalidMeasureError("atom coordinates must be finite")
        if (weights < 0).any():
            raise InvalidMeasureError("atom weights must be non-negative")
        total = weights.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise InvalidMeasureError(f"atom weights sum to {total!r}, not 1")

        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, points):
        """Uniform measure (weight 1/k) on the rows of `points`; duplicates are kept."""
        points = _as_rows(points)
        count = points.shape[0]
        if count == 0:
            raise InvalidMeasureError("a measure needs at least one atom")
        return cls(points, np.full(count, 1.0 / count))

    @classmethod
    def dirac(cls, point):
        """Unit mass at a single point."""
        return cls(np.atleast_1d(np.asarray(point, dtype=float)).reshape(1, -1), np.ones(1))

    @classmethod
    def from_atoms(cls, atoms):
        """Build from an iterable of (point, weight) pairs."""
        atoms = list(atoms)
        if not atoms:
            raise InvalidMeasureError("a measure needs at least one atom")
        points = np.array([np.atleast_1d(np.asarray(point, dtype=float)) for point, _ in atoms])
        weights = np.array([float(weight) for _, weight in atoms])
        return cls(points, weights)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def atoms(self):
        return [(self.points[i], float(self.weights[i])) for i in range(self.size)]

    def is_uniform(self):
        return bool(np.all(np.abs(self.weights - 1.0 / self.size) <= WEIGHT_TOL))

    def mean(self):
        return self.weights @ self.points

    def translate(self, shift):
        """Every atom moved by the vector `shift`."""
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
        return DiscreteMeasure(self.points + shift, self.weights)

    def shift_state(self, shift, state_dim):
        """Move the first `state_dim` coordinates of every atom by `shift`."""
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (state_dim,))
        points = np.array(self.points)
        points[:, :state_dim] = points[:, :state_dim] + shift
        return DiscreteMeasure(points, self.weights)

    def merged(self):
        """
        Lexicographically sorted atoms with duplicate locations merged.

        Returns:
            Tuple (points, weights) of the canonical weighted multiset
        """
        order = np.lexsort(self.points.T[::-1])
        points = self.points[order]
        weights = self.weights[order]
        starts = np.ones(len(points), dtype=bool)
        starts[1:] = np.any(points[1:] != points[:-1], axis=1)
        group = np.cumsum(starts) - 1
        merged_weights = np.bincount(group, weights=weights)
        return points[starts], merged_weights

    def same_multiset(self, other, tol=0.0):
        """Whether two measures coincide as weighted multisets."""
        if self.dim != other.dim:
            return False
        points_a, weights_a = self.merged()
        points_b, weights_b = other.merged()
        if points_a.shape != points_b.shape:
            return False
        return bool(
            np.all(np.abs(points_a - points_b) <= tol)
            and np.all(np.abs(weights_a - weights_b) <= max(tol, WEIGHT_TOL))
        )

    def to_record(self):
        """Flat record: dim, atom count, then (weight, coordinates...) rows."""
        rows = np.column_stack([self.weights, self.points])
        return [float(self.dim), float(self.size)] + rows.ravel().tolist()

    @classmethod
    def from_record(cls, record):
        record = np.asarray(record, dtype=float)
        dim, count = int(record[0]), int(record[1])
        rows = record[2:].reshape(count, dim + 1)
        return cls(rows[:, 1:], rows[:, 0])


def _check_grid(grid):
    grid = _read_only(np.ravel(grid))
    if grid.shape[0] < 2:
        raise InvalidMeasureError("a time grid needs at least two nodes")
    if grid[0] != 0.0:
        raise InvalidMeasureError(f"time grid must start at 0, got {grid[0]!r}")
    if not np.all(np.diff(grid) > 0):
        raise InvalidMeasureError("time grid must be strictly increasing")
    return grid


def _adopt_grid(grid):
    # grids already frozen by _check_grid are shared between paths as-is
    if isinstance(grid, np.ndarray) and not grid.flags.writeable and grid.dtype == float:
        return grid
    return _check_grid(grid)


def uniform_grid(horizon, steps):
    """Grid t_k = k T / K for k = 0..K."""
    return _check_grid(np.linspace(0.0, horizon, steps + 1))


def same_grid(a, b):
    return a.shape == b.shape and bool(np.array_equal(a, b))


def _require_same_grid(a, b):
    if not same_grid(a, b):
        raise GridMismatchError(f"grids differ ({len(a)} vs {len(b)} nodes)")


@dataclass(frozen=True, eq=False)
class MeasurePath:
    """
    Measures on the nodes of a time grid, standing for a continuous path of laws.

    Attributes:
        grid: Times t_0 = 0 < ... < t_K = T
        measures: K + 1 DiscreteMeasures of a common dimension
    """

    grid: np.ndarray
    measures: Tuple[DiscreteMeasure, ...]

    def __post_init__(self):
        grid = _adopt_grid(self.grid)
        measures = tuple(self.measures)
        if len(measures) != grid.shape[0]:
            raise InvalidMeasureError(
                f"{len(measures)} measures for a grid of {grid.shape[0]} nodes"
            )
        dim = measures[0].dim
        if any(measure.dim != dim for measure in measures):
            raise DimensionMismatchError("all measures of a path must share their dimension")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "measures", measures)

    @property
    def steps(self):
        return self.grid.shape[0] - 1

    @property
    def horizon(self):
        return float(self.grid[-1])

    @property
    def dim(self):
        return self.measures[0].dim

    def __len__(self):
        return len(self.measures)

    def __getitem__(self, k):
        return self.measures[k]

    def stopped(self, k):
        """The path stopped at node k: later nodes repeat the measure at t_k."""
        if k >= self.steps:
            return self
        measures = self.measures[:k + 1] + (self.measures[k],) * (self.steps - k)
        return MeasurePath(self.grid, measures)

    def translated(self, shifts):
        """Node k moved by shifts[k]."""
        shifts = np.asarray(shifts, dtype=float).reshape(len(self.measures), self.dim)
        return MeasurePath(
            self.grid,
            tuple(measure.translate(shift) for measure, shift in zip(self.measures, shifts))
        )


@dataclass(frozen=True, eq=False)
class RelaxedControlPath:
    """
    Piecewise-constant measure-valued control on a time grid.

    Step k holds on [t_k, t_{k+1}) and is a finite mixture of state-control
    measures, given as (mixture weight, DiscreteMeasure over R^n x U) pairs.
    """

    grid: np.ndarray
    steps: Tuple[Tuple[Tuple[float, DiscreteMeasure], ...], ...]
    state_dim: int

    def __post_init__(self):
        grid = _adopt_grid(self.grid)
        steps = tuple(tuple((float(w), m) for w, m in step) for step in self.steps)
        if len(steps) != grid.shape[0] - 1:
            raise InvalidMeasureError(f"{len(steps)} control steps for {grid.shape[0] - 1} grid cells")

        dims = {m.dim for step in steps for _, m in step}
        if len(dims) != 1:
            raise DimensionMismatchError("all component measures must share their dimension")
        dim = dims.pop()
        if not 1 <= self.state_dim < dim:
            raise DimensionMismatchError(f"state dimension {self.state_dim} does not split dim {dim}")

        for k, step in enumerate(steps):
            if not step:
                raise InvalidMeasureError(f"control step {k} is an empty mixture")
            weights = np.array([w for w, _ in step])
            if (weights < 0).any() or abs(weights.sum() - 1.0) > WEIGHT_TOL:
                raise InvalidMeasureError(f"mixture weights of step {k} do not form a probability")

        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "steps", steps)

    @classmethod
    def dirac(cls, grid, measures, state_dim):
        """Step k is the Dirac mass at measures[k]."""
        return cls(grid, tuple(((1.0, m),) for m in measures), state_dim)

    @property
    def dim(self):
        return self.steps[0][0][1].dim

    @property
    def control_dim(self):
        return self.dim - self.state_dim


@dataclass(frozen=True, eq=False)
class CommonNoisePath:
    """
    Brownian increments of the common noise on a time grid.

    Attributes:
        grid: Time grid with K + 1 nodes
        increments: Array of shape (K, ell); ell may be 0
    """

    grid: np.ndarray
    increments: np.ndarray

    def __post_init__(self):
        grid = _adopt_grid(self.grid)
        increments = np.asarray(self.increments, dtype=float)
        if increments.ndim == 1:
            increments = increments.reshape(-1, 1) if increments.size else increments.reshape(grid.shape[0] - 1, 0)
        if increments.shape[0] != grid.shape[0] - 1:
            raise InvalidMeasureError(
                f"{increments.shape[0]} increments for {grid.shape[0] - 1} grid cells"
            )
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "increments", _read_only(increments))

    @classmethod
    def none(cls, grid):
        """The absent common noise (ell = 0)."""
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.zeros((grid.shape[0] - 1, 0)))

    @property
    def ell(self):
        return self.increments.shape[1]

    def values(self):
        """B at every grid node, starting from B_0 = 0; shape (K + 1, ell)."""
        values = np.zeros((self.grid.shape[0], self.ell))
        values[1:] = np.cumsum(self.increments, axis=0)
        return values


def _resolve_mode(mode, mu, nu):
    if mode not in TRANSPORT_MODES:
        raise ModePreconditionError(f"unknown transport mode {mode!r}")
    if mode == "auto":
        return "sorted-1d" if mu.dim == 1 else "exact-assignment"
    return mode


def _exact_assignment(p, mu, nu):
    if mu.size != nu.size:
        raise ModePreconditionError(
            f"exact assignment needs equal atom counts, got {mu.size} and {nu.size}"
        )
    if not (mu.is_uniform() and nu.is_uniform()):
        raise ModePreconditionError("exact assignment needs uniform weights")
    cost = cdist(mu.points, nu.points) ** p
    rows, cols = linear_sum_assignment(cost)
    total = math.fsum(cost[rows, cols]) / mu.size
    return total ** (1.0 / p)


def _sorted_1d(p, mu, nu):
    if mu.dim != 1:
        raise ModePreconditionError("sorted-1d transport needs one-dimensional measures")

    def quantiles(measure):
        values = measure.points[:, 0]
        order = np.argsort(values, kind="stable")
        cumulative = np.cumsum(measure.weights[order])
        return values[order], cumulative / cumulative[-1]

    x, cx = quantiles(mu)
    y, cy = quantiles(nu)
    breaks = np.union1d(cx, cy)
    lefts = np.concatenate([[0.0], breaks[:-1]])
    widths = breaks - lefts
    mids = 0.5 * (lefts + breaks)
    ix = np.minimum(np.searchsorted(cx, mids, side="left"), len(x) - 1)
    iy = np.minimum(np.searchsorted(cy, mids, side="left"), len(y) - 1)
    total = math.fsum(widths * np.abs(x[ix] - y[iy]) ** p)
    return total ** (1.0 / p)


def wasserstein(p, mu, nu, mode="auto"):
    """
    p-Wasserstein distance between two discrete measures.

    Args:
        p: Exponent, at least 1
        mu: First measure
        nu: Second measure, same dimension
        mode: "exact-assignment" (equal-size uniform clouds, optimal assignment),
            "sorted-1d" (one-dimensional, arbitrary weights, quantile coupling)
            or "auto" (sorted-1d in dimension one, exact assignment otherwise)

    Returns:
        W_p(mu, nu) as a float
    """
    if p < 1:
        raise ValueError(f"Wasserstein exponent must be at least 1, got {p}")
    if mu.dim != nu.dim:
        raise DimensionMismatchError(f"cannot transport dim {mu.dim} onto dim {nu.dim}")

    mode = _resolve_mode(mode, mu, nu)
    if mode == "exact-assignment":
        return float(_exact_assignment(p, mu, nu))
    return float(_sorted_1d(p, mu, nu))


def path_distance(p, a, b, mode="auto"):
    """Largest nodewise Wasserstein distance between two paths on the same grid."""
    _require_same_grid(a.grid, b.grid)
    if a.dim != b.dim:
        raise DimensionMismatchError(f"path dimensions differ: {a.dim} vs {b.dim}")
    return max(wasserstein(p, mu, nu, mode) for mu, nu in zip(a.measures, b.measures))


def empirical_from_particles(states, controls):
    """
    Empirical state and state-control measures of a particle cloud.

    Args:
        states: N points of R^n
        controls: N points of U

    Returns:
        Tuple (phi_x, phi) of uniform measures on the states and on the
        concatenated (state, control) pairs
    """
    states = _as_rows(states)
    controls = _as_rows(controls)
    if states.shape[0] == 0:
        raise InvalidMeasureError("an empirical measure needs at least one particle")
    if states.shape[0] != controls.shape[0]:
        raise DimensionMismatchError(
            f"{states.shape[0]} states but {controls.shape[0]} controls"
        )
    phi_x = DiscreteMeasure.uniform(states)
    phi = DiscreteMeasure.uniform(np.hstack([states, controls]))
    return phi_x, phi


def marginal_state(m, state_dim):
    """Projection of a state-control measure onto its first `state_dim` coordinates."""
    if not 1 <= state_dim < m.dim:
        raise DimensionMismatchError(f"state dimension {state_dim} does not split dim {m.dim}")
    return DiscreteMeasure(m.points[:, :state_dim], m.weights)


def p_moment(mu, p):
    """Sum of w_i |x_i|^p."""
    if p <= 0:
        raise ValueError(f"moment order must be positive, got {p}")
    norms = np.linalg.norm(mu.points, axis=1)
    return float(mu.weights @ norms ** p)


@dataclass(frozen=True)
class MarginalDefectReport:
    """Per-step worst Wasserstein defect between control marginals and the state path."""

    defects: np.ndarray
    tol: float

    @property
    def max_defect(self):
        return float(np.max(self.defects))

    @property
    def violated(self):
        return bool(self.max_defect > self.tol)


def check_marginal_constraint(lam, mu, p=2.0, tol=1e-12):
    """
    Check that every mixture component has the state marginal of the path.

    Args:
        lam: Relaxed control path
        mu: Measure path on the same grid
        p: Wasserstein exponent
        tol: Defect above which the constraint counts as violated

    Returns:
        MarginalDefectReport with one defect per control step
    """
    _require_same_grid(lam.grid, mu.grid)
    if mu.dim != lam.state_dim:
        raise DimensionMismatchError(
            f"state path has dim {mu.dim} but controls split at {lam.state_dim}"
        )

    defects = np.zeros(len(lam.steps))
    for k, step in enumerate(lam.steps):
        defects[k] = max(
            wasserstein(p, marginal_state(m, lam.state_dim), mu.measures[k]) for _, m in step
        )

    report = MarginalDefectReport(defects, tol)
    if report.violated:
        logger.warning(f"Marginal constraint violated: max defect {report.max_defect:.3e} > {tol:.1e}")
    return report


def measure_records_frame(path, label="measure"):
    """
    Long-format table of a measure path, one row per atom.

    Args:
        path: MeasurePath to export
        label: Prefix of the coordinate columns

    Returns:
        DataFrame with columns node, t, atom, weight, <label>_0, ...
    """
    frames = []
    for k, measure in enumerate(path.measures):
        frame = pd.DataFrame(measure.points, columns=[f"{label}_{j}" for j in range(measure.dim)])
        frame.insert(0, "weight", measure.weights)
        frame.insert(0, "atom", np.arange(measure.size))
        frame.insert(0, "t", path.grid[k])
        frame.insert(0, "node", k)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
