"""
Policies and Rewards

Markovian feedback policies (constants, time-state tables and finite
mixtures), the N-agent, measure-valued and mean-field reward functionals, and
derivative-free policy optimization with common random numbers.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress
from tqdm import tqdm

from . import settings
from .measures import check_marginal_constraint, same_grid
from .exceptions import GridMismatchError
from .particle import draw_all, simulate_mkv
from .seeding import SHARED, derive_seed, stream_generator

logger = logging.getLogger(__name__)

# Constants
POPULATION = 32
ELITE_FRACTION = 0.2
SMOOTHING = 0.7
MIN_STD = 1e-6
METHODS = ("cross-entropy", "random-search")
REFERENCE_FACTOR = 4
EVALUATION_PURPOSE = "evaluate"

# Flat real vector encoding a Constant or FeedbackGrid policy
PolicyParams = np.ndarray


class Policy:
    """A U-valued feedback rule evaluated on batches of particles."""

    def act(self, t, x, context):
        """
        Controls of the particles in `context` at time t.

        Args:
            t: Time
            x: States, shape (R, n)
            context: PolicyContext naming the particles of the rows

        Returns:
            Array of shape (R, d)
        """
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Constant(Policy):
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.atleast_1d(np.asarray(self.u, dtype=float)))

    def act(self, t, x, context):
        return np.repeat(self.u[None, :], x.shape[0], axis=0)


@dataclass(frozen=True, eq=False)
class FeedbackGrid(Policy):
    """
    Table of controls over time bins x state cells.

    The state cell is the centre nearest to the first state coordinate; times
    and states beyond the table use its boundary cells.

    Attributes:
        horizon: Time horizon split into equal bins
        centres: Increasing state-cell centres, shape (S,)
        table: Controls, shape (time bins, S, d)
    """

    horizon: float
    centres: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        centres = np.ravel(np.asarray(self.centres, dtype=float))
        table = np.asarray(self.table, dtype=float)
        if table.ndim == 2:
            table = table[:, :, None]
        if table.ndim != 3 or table.shape[1] != centres.shape[0]:
            raise ValueError(f"table of shape {table.shape} does not match {centres.shape[0]} state cells")
        if np.any(np.diff(centres) <= 0):
            raise ValueError("state-cell centres must be increasing")
        object.__setattr__(self, "centres", centres)
        object.__setattr__(self, "table", table)

    @property
    def time_bins(self):
        return self.table.shape[0]

    def cell(self, t, x):
        time_bin = min(max(int(np.floor(t / self.horizon * self.time_bins)), 0), self.time_bins - 1)
        state_cell = np.argmin(np.abs(x[:, :1] - self.centres[None, :]), axis=1)
        return time_bin, state_cell

    def act(self, t, x, context):
        time_bin, state_cell = self.cell(t, x)
        return self.table[time_bin, state_cell]


@dataclass(frozen=True, eq=False)
class Mixture(Policy):
    """
    Finite mixture of policies; each particle draws its component once, from
    its private uniform stream.
    """

    components: Tuple[Tuple[float, Policy], ...]

    def __post_init__(self):
        components = tuple((float(w), policy) for w, policy in self.components)
        weights = np.array([w for w, _ in components])
        if not components or (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        object.__setattr__(self, "components", components)

    def choose(self, context):
        """Component index of every particle of the context."""
        cumulative = np.cumsum([w for w, _ in self.components])
        draws = context.particle_uniforms("mixture")
        return np.minimum(np.searchsorted(cumulative, draws, side="right"), len(self.components) - 1)

    def act(self, t, x, context):
        choice = self.choose(context)
        if np.all(choice == choice[0]):
            return self.components[choice[0]][1].act(t, x, context)

        controls = None
        for index in np.unique(choice):
            rows = np.flatnonzero(choice == index)
            part = self.components[index][1].act(t, x[rows], context.view(context.particles[rows]))
            if controls is None:
                controls = np.empty((x.shape[0], part.shape[1]))
            controls[rows] = part
        return controls


@dataclass(frozen=True, eq=False)
class ConstantFamily:
    """Constant policies u in U, encoded by u itself."""

    control_set: object

    @property
    def dim(self):
        return self.control_set.dim

    def bounds(self):
        return self.control_set.bounds()

    def decode(self, params):
        params = np.asarray(params, dtype=float).reshape(self.dim)
        return Constant(self.control_set.project(params)[0])

    def encode(self, policy):
        return np.array(policy.u, dtype=float)


@dataclass(frozen=True, eq=False)
class FeedbackGridFamily:
    """FeedbackGrid policies with a fixed cell layout, encoded by their flattened table."""

    control_set: object
    horizon: float
    time_bins: int
    centres: Tuple[float, ...]

    @property
    def dim(self):
        return self.time_bins * len(self.centres) * self.control_set.dim

    def bounds(self):
        lower, upper = self.control_set.bounds()
        cells = self.time_bins * len(self.centres)
        return np.tile(lower, cells), np.tile(upper, cells)

    def decode(self, params):
        d = self.control_set.dim
        rows = self.control_set.project(np.asarray(params, dtype=float).reshape(-1, d))
        table = rows.reshape(self.time_bins, len(self.centres), d)
        return FeedbackGrid(self.horizon, np.asarray(self.centres, dtype=float), table)

    def encode(self, policy):
        return np.array(policy.table, dtype=float).ravel()


def particle_rewards(spec, path):
    """
    Per-particle reward totals of one replication.

    sum_k L(t_k, X_k, phi^{N,X} stopped at t_k, phi^N_k, alpha_k) dt_k + g(X_K, phi^{N,X})
    """
    grid = path.grid
    states_path = path.state_path
    measures = path.state_control_measures
    totals = np.zeros(path.states.shape[1])
    for k in range(path.controls.shape[0]):
        t = float(grid[k])
        dt = float(grid[k + 1] - grid[k])
        totals += spec.running_reward(t, path.states[k], states_path.stopped(k), measures[k], path.controls[k]) * dt
    return totals + spec.terminal_reward(path.states[-1], states_path)


def replication_rewards(spec, bundle):
    """Average particle reward of every replication."""
    return np.array([np.mean(particle_rewards(spec, path)) for path in bundle])


def reward_n_agent(spec, bundle):
    """
    N-agent reward estimate of a bundle.

    Args:
        spec: Problem the bundle was simulated under
        bundle: TrajectoryBundle

    Returns:
        (1 / (N M)) times the sum over replications and particles of the
        left-endpoint running reward plus the terminal reward
    """
    return float(np.mean(np.concatenate([particle_rewards(spec, path) for path in bundle])))


def reward_measure_valued(spec, mu, lam, report_defect=True):
    """
    Reward J(mu, Lambda) of a measure-valued rule.

    Args:
        spec: Problem
        mu: MeasurePath of state laws
        lam: RelaxedControlPath on the same grid
        report_defect: Log the marginal-constraint defect

    Returns:
        Left-endpoint time sum of the mixture-and-atom averages of L, plus the
        mean of g under mu_T
    """
    if not same_grid(mu.grid, lam.grid):
        raise GridMismatchError("state path and control path do not share a grid")
    if report_defect:
        report = check_marginal_constraint(lam, mu, spec.p)
        logger.debug(f"Marginal defect of the evaluated rule: {report.max_defect:.3e}")

    n = spec.n
    total = 0.0
    for k, step in enumerate(lam.steps):
        t = float(lam.grid[k])
        dt = float(lam.grid[k + 1] - lam.grid[k])
        pi = mu.stopped(k)
        for weight, m in step:
            running = spec.running_reward(t, m.points[:, :n], pi, m, m.points[:, n:])
            total += weight * dt * float(m.weights @ running)
    terminal = mu.measures[-1]
    return total + float(terminal.weights @ spec.terminal_reward(terminal.points, mu))


def reward_mfc(spec, policy, cfg, initial=None, draws=None):
    """
    Mean-field reward of a policy with its standard error.

    The standard error comes from the spread across replications when
    cfg.M >= 2, and from the spread across particles of the single cloud
    otherwise.

    Returns:
        Tuple (estimate, standard error)
    """
    bundle = simulate_mkv(spec, policy, cfg, initial=initial, draws=draws)
    rewards = [particle_rewards(spec, path) for path in bundle]
    estimate = float(np.mean(np.concatenate(rewards)))
    if len(rewards) >= 2:
        means = np.array([np.mean(r) for r in rewards])
        error = float(np.std(means, ddof=1) / np.sqrt(len(means)))
    elif rewards[0].shape[0] >= 2:
        error = float(np.std(rewards[0], ddof=1) / np.sqrt(rewards[0].shape[0]))
    else:
        error = 0.0
    return estimate, error


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    best: Policy
    value: float
    params: np.ndarray
    history: pd.DataFrame


def _evaluate_all(evaluate, candidates):
    workers = min(settings.worker_count(), len(candidates))
    if workers <= 1:
        return np.array([evaluate(c) for c in candidates])
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return np.array(list(executor.map(evaluate, candidates)))


def optimize_policy(spec, family, budget, cfg, method="cross-entropy", initial=None,
                    population=POPULATION, elite_fraction=ELITE_FRACTION, smoothing=SMOOTHING,
                    progress=True):
    """
    Derivative-free search for a policy maximizing the mean-field reward.

    Every candidate is evaluated on the same pre-drawn noise, so values of
    different candidates differ only through the policies.

    Args:
        spec: Problem
        family: ConstantFamily or FeedbackGridFamily
        budget: Total number of reward evaluations
        cfg: SimConfig of each evaluation
        method: "cross-entropy" or "random-search"
        initial: InitialLaw of the particles
        population: Candidates per generation
        elite_fraction: Share of a generation refitting the sampling law
        smoothing: Weight of the elite statistics in the refit
        progress: Show a progress bar

    Returns:
        OptimizationResult with the best candidate and the per-generation history
    """
    if method not in METHODS:
        raise ValueError(f"unknown optimization method {method!r}")
    if budget < population:
        raise ValueError(f"budget {budget} is smaller than the population {population}")

    draws = draw_all(spec, cfg, initial)
    rng = stream_generator(cfg.seed, SHARED, SHARED, SHARED, f"optimizer-{method}")
    lower, upper = (np.asarray(b, dtype=float) for b in family.bounds())
    mean = 0.5 * (lower + upper)
    std = np.maximum(0.5 * (upper - lower), MIN_STD)
    elites = max(1, int(round(elite_fraction * population)))

    def evaluate(params):
        return reward_mfc(spec, family.decode(params), cfg, initial=initial, draws=draws)[0]

    best_params, best_value = None, -np.inf
    history = []
    generations = budget // population
    logger.info(f"Optimizing {spec.name} by {method}: {generations} generations of {population}")

    for generation in tqdm(range(generations), desc=f"{spec.name} {method}", disable=not progress):
        if method == "cross-entropy":
            candidates = np.clip(rng.normal(mean, std, size=(population, family.dim)), lower, upper)
        else:
            candidates = rng.uniform(lower, upper, size=(population, family.dim))
        values = _evaluate_all(evaluate, list(candidates))

        order = np.argsort(-values, kind="stable")
        if values[order[0]] > best_value:
            best_value = float(values[order[0]])
            best_params = candidates[order[0]].copy()

        if method == "cross-entropy":
            chosen = candidates[order[:elites]]
            mean = smoothing * chosen.mean(axis=0) + (1.0 - smoothing) * mean
            std = np.maximum(smoothing * chosen.std(axis=0) + (1.0 - smoothing) * std, MIN_STD)

        record = {"generation": generation, "best": best_value, "mean": float(values.mean())}
        record.update({f"param_{j}": float(v) for j, v in enumerate(best_params)})
        history.append(record)
        logger.debug(f"Generation {generation}: best={best_value:.6f}, mean={values.mean():.6f}")

    best = family.decode(best_params)
    logger.info(f"Best value for {spec.name}: {best_value:.6f} at {np.round(best_params, 4).tolist()}")
    return OptimizationResult(best, best_value, family.encode(best), pd.DataFrame(history))


def gap_slope(frame):
    """Log-log slope of the gaps against N, over the rows with a positive gap."""
    positive = frame[frame["gap"] > 0]
    if len(positive) < 2:
        return float("nan")
    return float(linregress(np.log(positive["N"]), np.log(positive["gap"])).slope)


def evaluation_config(cfg):
    """The same simulation sizes on a seed held out from optimization."""
    return replace(cfg, seed=derive_seed(cfg.seed, (SHARED, SHARED, SHARED, EVALUATION_PURPOSE)))


def value_gap_study(spec, family, N_list, cfg, budget, initial=None, method="cross-entropy", progress=True):
    """
    Optimized values across particle counts against a large-N reference.

    Each policy is optimized on the seed of `cfg` and scored on the held-out
    seed of `evaluation_config`, so the values carry no selection bias.

    Args:
        spec: Problem
        family: Policy family to optimize over
        N_list: Increasing particle counts
        cfg: SimConfig template (K, M, seed)
        budget: Optimization budget at each N
        initial: InitialLaw of the particles
        method: Optimization method

    Returns:
        DataFrame (N, value, se, gap, gap_se); the reference row is in
        attrs["reference"], the reference policy in attrs["reference_policy"]
        and the log-log slope of the gaps in attrs["slope"]
    """
    N_list = [int(N) for N in N_list]
    if not N_list or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError(f"N_list must be non-empty and increasing, got {N_list}")

    def optimized(N):
        sized = cfg.with_particles(N)
        result = optimize_policy(spec, family, budget, sized, method=method, initial=initial, progress=progress)
        return result.best, reward_mfc(spec, result.best, evaluation_config(sized), initial=initial)

    reference_N = REFERENCE_FACTOR * N_list[-1]
    reference_policy, (reference_value, reference_se) = optimized(reference_N)
    rows = []
    for N in N_list:
        _, (value, se) = optimized(N)
        rows.append({
            "N": N,
            "value": value,
            "se": se,
            "gap": abs(value - reference_value),
            "gap_se": float(np.hypot(se, reference_se)),
        })
        logger.info(f"N={N}: value={value:.6f} (se {se:.2e}), gap={rows[-1]['gap']:.3e}")

    frame = pd.DataFrame(rows, columns=["N", "value", "se", "gap", "gap_se"])
    frame.attrs["reference"] = {"N": reference_N, "value": reference_value, "se": reference_se}
    frame.attrs["reference_policy"] = reference_policy
    frame.attrs["slope"] = gap_slope(frame)
    return frame
