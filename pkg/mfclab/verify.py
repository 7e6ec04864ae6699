"""
Verification

Fokker-Planck residuals of measure-valued rules against a dictionary of test
functions, the common-noise shift of measure paths, residual scaling studies,
moment and time-regularity checks, the mollifier convergence study, and
Wasserstein distances between empirical laws across particle counts.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress
from tqdm import tqdm

from . import settings
from .exceptions import GridMismatchError
from .measures import (
    DiscreteMeasure,
    MeasurePath,
    RelaxedControlPath,
    path_distance,
    p_moment,
    same_grid,
    wasserstein,
)
from .particle import SimConfig, TrajectoryBundle, simulate_mkv, simulate_n_agent, simulate_regularized_fp

logger = logging.getLogger(__name__)

# Constants
SCALES = (1.0, 4.0)
LATTICE = (-1.0, 0.0, 1.0)
MAX_DEGREE = 2
FD_STEP = 1e-5
FD_TOL = 1e-6
MIN_REPS = 30


def _powers(z, exponents):
    # z^e with z^e := 0 for negative e (the derivative coefficient vanishes there)
    exponents = np.asarray(exponents)
    safe = np.where(exponents < 0, 0, exponents)
    return np.where(exponents < 0, 0.0, z ** safe)


@dataclass(frozen=True, eq=False)
class TestFunction:
    """
    Gaussian-damped monomial f(x) = (x - c)^beta exp(-|x - c|^2 / (2 s^2)).

    Attributes:
        centre: Lattice point c
        beta: Multi-index with |beta| <= 2
        scale: Damping scale s
    """

    __test__ = False

    centre: np.ndarray
    beta: Tuple[int, ...]
    scale: float

    @property
    def name(self):
        centre = ",".join(f"{c:g}" for c in self.centre)
        beta = "".join(str(b) for b in self.beta)
        return f"b{beta}_s{self.scale:g}_c{centre}"

    def _parts(self, x):
        z = np.asarray(x, dtype=float) - self.centre
        damping = np.exp(-np.sum(z ** 2, axis=1) / (2.0 * self.scale ** 2))
        return z, damping

    def _monomial(self, z, shift=None):
        exponents = np.array(self.beta)
        coefficient = 1.0
        for j in shift or ():
            coefficient = coefficient * exponents[j]
            exponents = exponents.copy()
            exponents[j] -= 1
        return coefficient * np.prod(_powers(z, exponents), axis=1)

    def value(self, x):
        z, damping = self._parts(x)
        return self._monomial(z) * damping

    def gradient(self, x):
        z, damping = self._parts(x)
        n = z.shape[1]
        poly = self._monomial(z)
        poly_grad = np.stack([self._monomial(z, (j,)) for j in range(n)], axis=1)
        return (poly_grad - poly[:, None] * z / self.scale ** 2) * damping[:, None]

    def hessian(self, x):
        z, damping = self._parts(x)
        n = z.shape[1]
        s2 = self.scale ** 2
        poly = self._monomial(z)
        poly_grad = np.stack([self._monomial(z, (j,)) for j in range(n)], axis=1)
        poly_hess = np.empty((z.shape[0], n, n))
        for j, k in itertools.product(range(n), repeat=2):
            poly_hess[:, j, k] = self._monomial(z, (j, k))
        damping_grad = -z / s2
        damping_hess = z[:, :, None] * z[:, None, :] / s2 ** 2 - np.eye(n) / s2
        hess = (
            poly_hess
            + poly_grad[:, :, None] * damping_grad[:, None, :]
            + damping_grad[:, :, None] * poly_grad[:, None, :]
            + poly[:, None, None] * damping_hess
        )
        return hess * damping[:, None, None]


@dataclass(frozen=True, eq=False)
class CombinedTestFunction:
    """Linear combination sum_j a_j f_j of test functions."""

    __test__ = False

    terms: Tuple[Tuple[float, object], ...]
    name: str = "combination"

    def value(self, x):
        return sum(a * f.value(x) for a, f in self.terms)

    def gradient(self, x):
        return sum(a * f.gradient(x) for a, f in self.terms)

    def hessian(self, x):
        return sum(a * f.hessian(x) for a, f in self.terms)


class TestFunctionDictionary:
    """Finite dictionary of C^2_b test functions standing in for all of C^2_b."""

    __test__ = False

    def __init__(self, functions):
        self.functions = list(functions)
        if not self.functions:
            raise ValueError("a test-function dictionary needs at least one function")

    @classmethod
    def default(cls, n, scales=SCALES, lattice=LATTICE, max_degree=MAX_DEGREE):
        """Monomials of degree <= 2 damped at every scale, centred on the lattice^n."""
        betas = [beta for beta in itertools.product(range(max_degree + 1), repeat=n) if sum(beta) <= max_degree]
        functions = [
            TestFunction(np.array(centre, dtype=float), tuple(beta), float(scale))
            for centre in itertools.product(lattice, repeat=n)
            for beta in betas
            for scale in scales
        ]
        return cls(functions)

    def __len__(self):
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    @property
    def ids(self):
        return [f.name for f in self.functions]


def finite_difference_check(dictionary, points, step=FD_STEP):
    """
    Largest mismatch between analytic and central-difference derivatives.

    Errors are relative to max(1, |analytic|).

    Args:
        dictionary: TestFunctionDictionary
        points: Evaluation points, shape (R, n)
        step: Difference step

    Returns:
        Tuple (worst gradient error, worst Hessian error)
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[1]
    worst_grad = worst_hess = 0.0
    for f in dictionary:
        grad = f.gradient(points)
        hess = f.hessian(points)
        for j in range(n):
            offset = np.zeros(n)
            offset[j] = step
            fd_grad = (f.value(points + offset) - f.value(points - offset)) / (2 * step)
            fd_hess = (f.gradient(points + offset) - f.gradient(points - offset)) / (2 * step)
            worst_grad = max(worst_grad, float(np.max(np.abs(fd_grad - grad[:, j]) / np.maximum(1.0, np.abs(grad[:, j])))))
            worst_hess = max(worst_hess, float(np.max(np.abs(fd_hess - hess[:, :, j]) / np.maximum(1.0, np.abs(hess[:, :, j])))))
    return worst_grad, worst_hess


def _noise_shifts(B, sigma0):
    return B.values() @ np.asarray(sigma0, dtype=float).T


def shift_by_common_noise(mu, lam, B, sigma0, sign=-1):
    """
    Move every state atom by sign * sigma0 B_{t_k}.

    With sign=-1 this removes the common-noise translation (theta = mu[-B],
    Theta = Lambda[-B]); sign=+1 restores it. Control coordinates and weights
    are untouched.

    Returns:
        Tuple (shifted MeasurePath, shifted RelaxedControlPath)
    """
    if not (same_grid(mu.grid, lam.grid) and same_grid(mu.grid, B.grid)):
        raise GridMismatchError("state path, control path and common noise do not share a grid")
    shifts = sign * _noise_shifts(B, sigma0)
    theta = mu.translated(shifts)
    steps = tuple(
        tuple((w, m.shift_state(shifts[k], lam.state_dim)) for w, m in step)
        for k, step in enumerate(lam.steps)
    )
    return theta, RelaxedControlPath(lam.grid, steps, lam.state_dim)


@dataclass(frozen=True, eq=False)
class ResidualTable:
    """Residuals N_{t_k}(f), one row per test function and one column per node."""

    ids: Tuple[str, ...]
    grid: np.ndarray
    residuals: np.ndarray

    @property
    def max_abs(self):
        return float(np.max(np.abs(self.residuals)))

    @property
    def terminal(self):
        return self.residuals[:, -1]

    def frame(self):
        return pd.DataFrame({
            "f_id": np.repeat(self.ids, len(self.grid)),
            "t": np.tile(self.grid, len(self.ids)),
            "residual": self.residuals.ravel(),
        })


def _residuals(spec, grid, value_nodes, coefficient_steps, pi, dictionary):
    """
    Shared residual core.

    value_nodes[k] is the pair (measure, point offset) whose f-average enters at
    node k; coefficient_steps[k] lists (weight, coefficient measure,
    derivative points) per mixture component.
    """
    functions = list(dictionary)
    nodes = len(grid)
    values = np.empty((len(functions), nodes))
    for k, (measure, points) in enumerate(value_nodes):
        for i, f in enumerate(functions):
            values[i, k] = float(measure.weights @ f.value(points))

    increments = np.zeros((len(functions), nodes))
    n = spec.n
    for k, step in enumerate(coefficient_steps):
        t = float(grid[k])
        dt = float(grid[k + 1] - grid[k])
        stopped = pi.stopped(k)
        for weight, m, derivative_points in step:
            states, controls = m.points[:, :n], m.points[:, n:]
            drift = spec.b(t, states, stopped, m, controls)
            diffusion = spec.diffusion(t, states, stopped, m, controls)
            for i, f in enumerate(functions):
                generator = (
                    0.5 * np.einsum("kij,kij->k", diffusion, f.hessian(derivative_points))
                    + np.sum(drift * f.gradient(derivative_points), axis=1)
                )
                increments[i, k + 1] += weight * dt * float(m.weights @ generator)

    integral = np.cumsum(increments, axis=1)
    return values - values[:, :1] - integral


def fp_residual(spec, mu, lam, B, dictionary):
    """
    Controlled Fokker-Planck residuals of (mu, Lambda, B).

    N_t(f) = <f(. - sigma0 B_t), mu_t> - <f, mu_0>
             - int_0^t int int L_r[f(. - sigma0 B_r)] dm Lambda_r(dm) dr,
    with generator L_r f = 1/2 Tr[sigma sigma^T Hess f] + b . grad f, the time
    integral a left-endpoint sum on the grid and the measure integrals exact.

    Returns:
        ResidualTable over the dictionary and the grid nodes
    """
    if not (same_grid(mu.grid, lam.grid) and same_grid(mu.grid, B.grid)):
        raise GridMismatchError("state path, control path and common noise do not share a grid")
    shifts = _noise_shifts(B, spec.sigma0)
    n = spec.n
    value_nodes = [(measure, measure.points - shifts[k]) for k, measure in enumerate(mu.measures)]
    coefficient_steps = [
        [(w, m, m.points[:, :n] - shifts[k]) for w, m in step]
        for k, step in enumerate(lam.steps)
    ]
    residuals = _residuals(spec, mu.grid, value_nodes, coefficient_steps, mu, dictionary)
    return ResidualTable(tuple(f.name for f in dictionary), mu.grid, residuals)


def fp_residual_shifted(spec, theta, Theta, B, dictionary):
    """
    The same residual in shifted coordinates.

    Derivatives of f are taken at the shifted atoms y, while the coefficients
    see the unshifted arguments y + sigma0 B, mu and m.
    """
    if not (same_grid(theta.grid, Theta.grid) and same_grid(theta.grid, B.grid)):
        raise GridMismatchError("shifted paths and common noise do not share a grid")
    mu, lam = shift_by_common_noise(theta, Theta, B, spec.sigma0, sign=+1)
    n = spec.n
    value_nodes = [(measure, measure.points) for measure in theta.measures]
    coefficient_steps = [
        [(w, m, shifted.points[:, :n]) for (w, m), (_, shifted) in zip(step, shifted_step)]
        for step, shifted_step in zip(lam.steps, Theta.steps)
    ]
    residuals = _residuals(spec, theta.grid, value_nodes, coefficient_steps, mu, dictionary)
    return ResidualTable(tuple(f.name for f in dictionary), theta.grid, residuals)


def _parallel(function, items):
    items = list(items)
    workers = min(settings.worker_count(), len(items))
    if workers <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(function, items))


def bundle_residuals(spec, bundle, dictionary):
    """ResidualTable of every replication of a bundle on its derived (mu, delta_phi, B)."""
    return _parallel(
        lambda path: fp_residual(spec, path.state_path, path.control_path, path.noise, dictionary),
        bundle.replications
    )


def residual_scaling_study(spec, policy, N_list, reps, dictionary, cfg, initial=None):
    """
    Second moment of terminal residuals across particle counts.

    For each N, `reps` fresh N-agent bundles give terminal residuals N_T(f).
    The across-replication mean of N_T(f) estimates the time-discretization
    bias, and the reported second moment is the replication variance
    averaged over f.

    Args:
        spec: Problem
        policy: Policy shared by all particles
        N_list: Increasing particle counts
        reps: Replications per N, at least 30
        dictionary: TestFunctionDictionary
        cfg: SimConfig template (K and seed)
        initial: InitialLaw of the particles

    Returns:
        DataFrame (N, mean_sq_residual, se, raw_mean_sq, bias_sq) with the
        log-log slope in attrs["slope"]
    """
    if reps < MIN_REPS:
        raise ValueError(f"scaling studies need at least {MIN_REPS} replications, got {reps}")
    N_list = [int(N) for N in N_list]

    rows = []
    for N in tqdm(N_list, desc="residual scaling"):
        sized = SimConfig(N=N, K=cfg.K, M=reps, seed=cfg.seed, eps=cfg.eps)
        bundle = simulate_n_agent(spec, [policy] * N, sized, initial=initial)
        terminal = np.array([table.terminal for table in bundle_residuals(spec, bundle, dictionary)])
        bias = terminal.mean(axis=0)
        centred = (terminal - bias) ** 2
        per_rep = centred.mean(axis=1) * terminal.shape[0] / max(terminal.shape[0] - 1, 1)
        rows.append({
            "N": N,
            "mean_sq_residual": float(per_rep.mean()),
            "se": float(per_rep.std(ddof=1) / np.sqrt(len(per_rep))),
            "raw_mean_sq": float(np.mean(terminal ** 2)),
            "bias_sq": float(np.mean(bias ** 2)),
        })
        logger.info(f"N={N}: mean squared residual {rows[-1]['mean_sq_residual']:.3e}")

    frame = pd.DataFrame(rows, columns=["N", "mean_sq_residual", "se", "raw_mean_sq", "bias_sq"])
    frame.attrs["slope"] = scaling_slope(frame)
    return frame


def scaling_slope(frame):
    """Log-log slope of the corrected second moments against N."""
    positive = frame[frame["mean_sq_residual"] > 0]
    if len(positive) < 2:
        return float("nan")
    return float(linregress(np.log(positive["N"]), np.log(positive["mean_sq_residual"])).slope)


def _equal_sizes(mu, nu):
    # tiling a uniform cloud leaves its measure unchanged
    size = int(np.lcm(mu.size, nu.size))
    return tuple(DiscreteMeasure.uniform(np.tile(m.points, (size // m.size, 1))) for m in (mu, nu))


def cloud_distance(p, mu, nu):
    """W_p between two empirical clouds of possibly different sizes."""
    if mu.dim == 1:
        return wasserstein(p, mu, nu, "sorted-1d")
    return wasserstein(p, *_equal_sizes(mu, nu), "exact-assignment")


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    se = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), se


def law_distances_across_N(spec, policy, N_list, cfg, initial=None):
    """
    W_p between the empirical laws of consecutive particle counts.

    Replication r draws the same common noise at every N, so the clouds of
    N_list[i] and N_list[i + 1] are compared given one common-noise path. At
    every node the state clouds are compared, and before the terminal node
    the state-control clouds too.

    Args:
        spec: Problem
        policy: Policy shared by all particles
        N_list: At least two increasing particle counts
        cfg: SimConfig template (K, M, seed)
        initial: InitialLaw of the particles

    Returns:
        DataFrame (N, N_next, node, t, state_distance, state_se, joint_distance,
        joint_se), averaged over the replications both counts completed; the
        joint columns are NaN at the terminal node
    """
    N_list = [int(N) for N in N_list]
    if len(N_list) < 2 or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError(f"N_list must hold at least two increasing counts, got {N_list}")

    bundles = {}
    for N in N_list:
        bundles[N] = {path.replication: path for path in simulate_mkv(spec, policy, cfg.with_particles(N), initial=initial)}

    def distances(pair):
        a, b = pair
        state = [cloud_distance(spec.p, mu, nu) for mu, nu in zip(a.state_path.measures, b.state_path.measures)]
        joint = [cloud_distance(spec.p, mu, nu) for mu, nu in zip(a.state_control_measures, b.state_control_measures)]
        return state, joint

    rows = []
    for N, N_next in zip(N_list, N_list[1:]):
        shared = sorted(set(bundles[N]) & set(bundles[N_next]))
        if not shared:
            logger.warning(f"No replication completed at both N={N} and N={N_next}")
            continue
        results = _parallel(distances, [(bundles[N][r], bundles[N_next][r]) for r in shared])
        state = np.array([s for s, _ in results])
        joint = np.array([j for _, j in results])
        grid = bundles[N][shared[0]].grid
        for k, t in enumerate(grid):
            state_distance, state_se = _mean_se(state[:, k])
            joint_distance, joint_se = _mean_se(joint[:, k]) if k < joint.shape[1] else (np.nan, np.nan)
            rows.append({
                "N": N, "N_next": N_next, "node": k, "t": float(t),
                "state_distance": state_distance, "state_se": state_se,
                "joint_distance": joint_distance, "joint_se": joint_se,
            })
        logger.info(f"N={N} vs {N_next}: terminal W_{spec.p:g} {state[:, -1].mean():.4f} over {len(shared)} replications")

    columns = ["N", "N_next", "node", "t", "state_distance", "state_se", "joint_distance", "joint_se"]
    return pd.DataFrame(rows, columns=columns)



@dataclass(frozen=True)
class MomentCheck:
    observed: float
    ratio: float
    ceiling: float
    passed: bool


def _node_moments(source, p):
    if isinstance(source, TrajectoryBundle):
        return np.array([
            np.mean([p_moment(path.state_path.measures[k], p) for path in source])
            for k in range(len(source.grid))
        ])
    return np.array([p_moment(measure, p) for measure in source.measures])


def check_moment_bound(source, p_prime, nu_moment, ceiling=None):
    """
    Sup-in-time p'-moment of a bundle or a measure path.

    Args:
        source: TrajectoryBundle (moments averaged over replications) or MeasurePath
        p_prime: Moment order
        nu_moment: p'-moment of the initial law
        ceiling: Largest acceptable ratio, None for a pure diagnostic

    Returns:
        MomentCheck(observed sup moment, ratio to 1 + nu_moment, ceiling, passed)
    """
    observed = float(np.max(_node_moments(source, p_prime)))
    ratio = observed / (1.0 + nu_moment)
    passed = ceiling is None or ratio <= ceiling
    if not passed:
        logger.warning(f"Moment ratio {ratio:.4f} exceeds ceiling {ceiling}")
    return MomentCheck(observed, ratio, float("nan") if ceiling is None else float(ceiling), passed)


@dataclass(frozen=True)
class HolderCheck:
    constant: float
    worst_pair: Tuple[float, float]
    pairs: int


def check_holder(theta_path, p):
    """
    Empirical time-Holder constant max_{s<t} W_p(theta_s, theta_t)^p / (t - s) over all node pairs.

    Returns:
        HolderCheck with the constant and the worst pair of times
    """
    grid = theta_path.grid
    best, worst = 0.0, (float(grid[0]), float(grid[0]))
    pairs = 0
    for s, t in itertools.combinations(range(len(grid)), 2):
        ratio = wasserstein(p, theta_path[s], theta_path[t]) ** p / (grid[t] - grid[s])
        pairs += 1
        if ratio > best:
            best, worst = float(ratio), (float(grid[s]), float(grid[t]))
    logger.info(f"Holder constant {best:.4f}, worst pair {worst}")
    return HolderCheck(best, worst, pairs)


def reference_fp_inputs(spec, policy, cfg, initial=None, factor=4):
    """
    Inputs of the mollifier study from one unmollified cloud of factor * N particles.

    Returns:
        Tuple (q, pi_ref, B, reference path), where q is the Dirac control path
        of the cloud's empirical laws and pi_ref the cloud's state path, which
        also serves as the reference solution
    """
    sized = SimConfig(N=factor * cfg.N, K=cfg.K, M=1, seed=cfg.seed, eps=cfg.eps)
    path = simulate_mkv(spec, policy, sized, initial=initial)[0]
    return path.control_path, path.state_path, path.noise, path.state_path


def _comparable(path, reference):
    # unequal atom counts are only transportable by assignment after tiling
    if path.dim == 1 or path[0].size == reference[0].size:
        return path
    factor, remainder = divmod(reference[0].size, path[0].size)
    if remainder:
        raise ValueError(f"cannot compare {path[0].size} atoms with {reference[0].size}")
    return MeasurePath(path.grid, tuple(DiscreteMeasure.uniform(np.tile(m.points, (factor, 1))) for m in path.measures))


def mollifier_convergence_study(spec, eps_list, q, pi_ref, B, cfg, reference, initial=None):
    """
    Distance of regularized Fokker-Planck clouds to a reference across bandwidths.

    Args:
        spec: Problem
        eps_list: Bandwidths, run in descending order
        q, pi_ref, B: Frozen inputs of the regularized equation
        cfg: SimConfig; cfg.M independent clouds per bandwidth
        reference: Reference MeasurePath
        initial: InitialLaw of the clouds

    Returns:
        DataFrame (eps, distance, se) of sup_t W_p between cloud and reference
    """
    rows = []
    for eps in tqdm(sorted(eps_list, reverse=True), desc="mollifier bandwidths"):
        def distance(replication):
            cloud = simulate_regularized_fp(spec, eps, q, pi_ref, B, cfg, initial=initial, replication=replication)
            return path_distance(spec.p, _comparable(cloud, reference), reference)

        distances = np.array(_parallel(distance, range(cfg.M)))
        se = float(distances.std(ddof=1) / np.sqrt(len(distances))) if len(distances) > 1 else 0.0
        rows.append({"eps": float(eps), "distance": float(distances.mean()), "se": se})
        logger.info(f"eps={eps}: distance {rows[-1]['distance']:.4f} (se {se:.1e})")
    return pd.DataFrame(rows, columns=["eps", "distance", "se"])
