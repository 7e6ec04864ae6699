"""
Particle Simulation

Euler-Maruyama engines for the N-agent system, the conditional McKean-Vlasov
particle approximation with common noise, the SDE representation of the
regularized Fokker-Planck equation, and the randomized discretization scheme
that samples controls from the kernel-conditioned law.

All randomness is drawn from streams derived from the master seed by
(replication, particle, step, purpose), and replications are gathered in
submission order, so a bundle never depends on the number of worker threads.
"""

import copy
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from . import settings
from .exceptions import DimensionMismatchError, GridMismatchError, NonFiniteStateError
from .measures import (
    CommonNoisePath,
    DiscreteMeasure,
    MeasurePath,
    RelaxedControlPath,
    empirical_from_particles,
    same_grid,
    uniform_grid,
)
from .mollify import (
    inverse_principal_sqrt,
    kernel_averages,
    mollified_coefficients_batch,
    principal_sqrt,
    resolve_bandwidth,
    sample_controls_batch,
)
from .seeding import SHARED, derive_seed, stream_generator

logger = logging.getLogger(__name__)

# Constants
FOREIGN = "foreign"

__all__ = [
    "SimConfig", "InitialLaw", "PolicyContext", "NoiseDraw", "ReplicationStats",
    "ReplicationPath", "TrajectoryBundle", "SchemeDiagnostics", "derive_seed",
    "draw_noise", "draw_all", "run_replication", "simulate_n_agent", "simulate_mkv",
    "simulate_regularized_fp", "simulate_randomized_scheme", "bundle_frame",
]


@dataclass(frozen=True)
class SimConfig:
    """
    Simulation size and seed.

    Attributes:
        N: Particles per cloud
        K: Time steps
        M: Outer common-noise replications
        seed: Master seed
        eps: Mollifier bandwidth, where one is used
    """

    N: int
    K: int
    M: int = 1
    seed: int = 0
    eps: float = 0.1

    def __post_init__(self):
        for name in ("N", "K", "M"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.eps <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.eps}")

    def with_particles(self, N):
        return SimConfig(N=N, K=self.K, M=self.M, seed=self.seed, eps=self.eps)


@dataclass(frozen=True, eq=False)
class InitialLaw:
    """
    Initial laws nu^i of the particles.

    `constant` and `gaussian` give every particle the same law; `heterogeneous`
    centres particle i of N at spread * (2 (i + 1/2) / N - 1); `measure` samples
    the atoms of a DiscreteMeasure.
    """

    kind: str
    centre: Optional[np.ndarray] = None
    std: float = 0.0
    spread: float = 0.0
    measure: Optional[DiscreteMeasure] = None

    @classmethod
    def constant(cls, value):
        return cls("constant", centre=np.atleast_1d(np.asarray(value, dtype=float)))

    @classmethod
    def gaussian(cls, mean, std):
        return cls("gaussian", centre=np.atleast_1d(np.asarray(mean, dtype=float)), std=float(std))

    @classmethod
    def heterogeneous(cls, spread, std=0.0):
        return cls("heterogeneous", spread=float(spread), std=float(std))

    @classmethod
    def from_measure(cls, measure):
        return cls("measure", measure=measure)

    def sample(self, rng, particle, count, n):
        """Initial state of one particle, shape (n,)."""
        if self.kind == "measure":
            if self.measure.dim != n:
                raise DimensionMismatchError(f"initial measure has dim {self.measure.dim}, problem has {n}")
            return np.array(self.measure.points[rng.choice(self.measure.size, p=self.measure.weights)])
        if self.kind == "heterogeneous":
            centre = np.full(n, self.spread * (2.0 * (particle + 0.5) / count - 1.0))
        else:
            centre = np.broadcast_to(self.centre, (n,)).astype(float)
        if self.std > 0:
            return centre + self.std * rng.standard_normal(n)
        return np.array(centre)

    def moment(self, p, n, count=1):
        """Average over particles of E|xi^i|^p, exact except for Gaussian laws with p not in {2, 4}."""
        if self.kind == "measure":
            return float(self.measure.weights @ np.linalg.norm(self.measure.points, axis=1) ** p)
        if self.kind == "heterogeneous":
            centres = self.spread * (2.0 * (np.arange(count) + 0.5) / count - 1.0)
            if self.std == 0:
                return float(np.mean((np.sqrt(n) * np.abs(centres)) ** p))
        elif self.std == 0:
            return float(np.linalg.norm(np.broadcast_to(self.centre, (n,))) ** p)
        if self.kind == "gaussian" and n == 1 and p in (2, 4):
            mu, s = float(self.centre[0]), self.std
            return mu ** 2 + s ** 2 if p == 2 else mu ** 4 + 6 * mu ** 2 * s ** 2 + 3 * s ** 4
        raise ValueError(f"no closed-form moment for {self.kind} law with p={p}")


class PolicyContext:
    """
    What a policy may know besides (t, x): its replication, the particle
    indices of the rows it is asked about, and the current step.

    Per-particle uniforms are drawn from derived streams and cached for the
    whole replication.
    """

    def __init__(self, seed, replication, size):
        self.seed = seed
        self.replication = replication
        self.size = size
        self.particles = np.arange(size)
        self.step = 0
        self._uniforms = {}

    def view(self, particles):
        """The same context restricted to a subset of particles."""
        restricted = copy.copy(self)
        restricted.particles = np.asarray(particles)
        return restricted

    def particle_uniforms(self, purpose):
        if purpose not in self._uniforms:
            self._uniforms[purpose] = np.array([
                stream_generator(self.seed, self.replication, i, SHARED, purpose).random()
                for i in range(self.size)
            ])
        return self._uniforms[purpose][self.particles]


@dataclass(frozen=True, eq=False)
class NoiseDraw:
    """
    Every random input of one replication.

    Attributes:
        initial: Initial states, shape (N, n)
        idiosyncratic: Brownian increments dW, shape (K, N, n)
        common: Common-noise increments dB, shape (K, ell)
        uniforms: Control-sampling uniforms, shape (K, N), for the randomized scheme
    """

    initial: np.ndarray
    idiosyncratic: np.ndarray
    common: np.ndarray
    uniforms: Optional[np.ndarray] = None

    def permuted(self, order):
        """Particles relabelled by `order`; the common noise is untouched."""
        order = np.asarray(order)
        return NoiseDraw(
            initial=self.initial[order],
            idiosyncratic=self.idiosyncratic[:, order],
            common=self.common,
            uniforms=None if self.uniforms is None else self.uniforms[:, order],
        )


def draw_noise(spec, cfg, replication, initial, grid, uniforms=False):
    """
    Draw the random inputs of one replication.

    Args:
        spec: Problem (gives n and ell)
        cfg: Simulation config (gives N and the master seed)
        replication: Replication index
        initial: InitialLaw of the particles
        grid: Time grid of the run
        uniforms: Also draw one uniform per particle and cell

    Returns:
        NoiseDraw
    """
    steps = grid.shape[0] - 1
    root_dt = np.sqrt(np.diff(grid))[:, None]
    initial_states = np.empty((cfg.N, spec.n))
    increments = np.empty((steps, cfg.N, spec.n))
    cell_uniforms = np.empty((steps, cfg.N)) if uniforms else None

    for i in range(cfg.N):
        rng = stream_generator(cfg.seed, replication, i, SHARED, "initial")
        initial_states[i] = initial.sample(rng, i, cfg.N, spec.n)
        rng = stream_generator(cfg.seed, replication, i, SHARED, "idiosyncratic")
        increments[:, i] = rng.standard_normal((steps, spec.n)) * root_dt
        if uniforms:
            cell_uniforms[:, i] = stream_generator(cfg.seed, replication, i, SHARED, "uniform").random(steps)

    common = stream_generator(cfg.seed, replication, SHARED, SHARED, "common").standard_normal((steps, spec.ell))
    return NoiseDraw(initial_states, increments, common * root_dt, cell_uniforms)


@dataclass
class ReplicationStats:
    """Counters collected while a replication runs."""

    replication: int
    projections: int = 0
    fallbacks: int = 0
    measure_reads: Counter = field(default_factory=Counter)

    def record_reads(self, owned, measures):
        """
        Count one read per owner among the measures handed to the coefficients.

        Args:
            owned: Measures this replication built from its own particles
            measures: Measures about to be read by b and sigma

        A measure not in `owned` is counted under the key (replication, FOREIGN).
        """
        own = {id(m) for m in owned}
        owners = {self.replication if id(m) in own else FOREIGN for m in measures}
        for owner in sorted(owners, key=str):
            self.measure_reads[(self.replication, owner)] += 1



@dataclass(frozen=True, eq=False)
class ReplicationPath:
    """
    One simulated cloud.

    Attributes:
        replication: Replication index
        grid: Time grid
        states: Particle states at every node, shape (K + 1, N, n)
        controls: Realized controls per step, shape (K, N, d)
        noise: Common-noise path of the replication
        stats: Counters
    """

    replication: int
    grid: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    noise: CommonNoisePath
    stats: ReplicationStats

    @cached_property
    def state_path(self):
        """MeasurePath of the empirical state laws phi^{N,X}."""
        return MeasurePath(self.grid, tuple(DiscreteMeasure.uniform(x) for x in self.states))

    @cached_property
    def state_control_measures(self):
        return tuple(
            empirical_from_particles(self.states[k], self.controls[k])[1]
            for k in range(self.controls.shape[0])
        )

    @cached_property
    def control_path(self):
        """RelaxedControlPath of Dirac masses at the empirical state-control laws phi^N."""
        return RelaxedControlPath.dirac(self.grid, self.state_control_measures, self.states.shape[2])


@dataclass(frozen=True)
class SchemeDiagnostics:
    """Largest corrections seen by the randomized scheme."""

    max_drift_correction: float
    max_vol_correction: float
    evaluations: int


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    """Replications of a particle run, in replication order."""

    problem: str
    config: SimConfig
    grid: np.ndarray
    replications: Tuple[ReplicationPath, ...]
    failed_replications: Tuple[int, ...] = ()
    diagnostics: Optional[SchemeDiagnostics] = None

    @property
    def N(self):
        return self.config.N

    @property
    def M(self):
        return len(self.replications)

    def __iter__(self):
        return iter(self.replications)

    def __len__(self):
        return len(self.replications)

    def __getitem__(self, index):
        return self.replications[index]


def _stopped_prefix(grid, measures):
    # the measures seen so far, with the last one repeated up to the horizon
    padding = (measures[-1],) * (grid.shape[0] - len(measures))
    return MeasurePath(grid, tuple(measures) + padding)


def _policy_groups(policies):
    groups = {}
    for i, policy in enumerate(policies):
        groups.setdefault(id(policy), (policy, []))[1].append(i)
    return [(policy, np.asarray(rows)) for policy, rows in groups.values()]


def _act(spec, groups, t, x, context, stats):
    count = x.shape[0]
    if len(groups) == 1 and len(groups[0][1]) == count:
        raw = np.asarray(groups[0][0].act(t, x, context), dtype=float).reshape(count, spec.control_dim)
    else:
        raw = np.empty((count, spec.control_dim))
        for policy, rows in groups:
            raw[rows] = np.asarray(policy.act(t, x[rows], context.view(rows)), dtype=float).reshape(
                len(rows), spec.control_dim
            )

    outside = ~spec.control_set.contains(raw)
    if outside.any():
        stats.projections += int(outside.sum())
        logger.warning(
            f"Replication {stats.replication}, step {context.step}: "
            f"{int(outside.sum())} controls outside U projected"
        )
        return spec.control_set.project(raw)
    return raw


def _check_finite(states, stats, step):
    if not np.isfinite(states).all():
        raise NonFiniteStateError(
            f"replication {stats.replication}: non-finite state after step {step}"
        )


def run_replication(spec, policies, grid, draw, replication, seed=0):
    """
    Advance one particle cloud along the grid.

    X_{k+1} = X_k + b(t_k, X_k, phi^{N,X} stopped at t_k, phi^N_k, alpha_k) dt
              + sigma(...) dW_k + sigma0 dB_k,
    with phi^N_k rebuilt from (X_k, alpha_k) at every step.

    Args:
        spec: Problem
        policies: One policy per particle (the same object may repeat)
        grid: Time grid
        draw: NoiseDraw of the replication
        replication: Replication index
        seed: Master seed (for the policies' private streams)

    Returns:
        ReplicationPath

    Raises:
        NonFiniteStateError: when a state leaves the finite reals
    """
    count = draw.initial.shape[0]
    if len(policies) != count:
        raise DimensionMismatchError(f"{len(policies)} policies for {count} particles")

    steps = grid.shape[0] - 1
    states = np.empty((steps + 1, count, spec.n))
    controls = np.empty((steps, count, spec.control_dim))
    states[0] = draw.initial
    stats = ReplicationStats(replication)
    context = PolicyContext(seed, replication, count)
    groups = _policy_groups(policies)
    common_shift = draw.common @ spec.sigma0.T
    state_laws = []

    for k in range(steps):
        t = float(grid[k])
        dt = float(grid[k + 1] - grid[k])
        x = states[k]
        context.step = k
        u = _act(spec, groups, t, x, context, stats)
        controls[k] = u

        phi_x, phi = empirical_from_particles(x, u)
        state_laws.append(phi_x)
        pi = _stopped_prefix(grid, state_laws)
        stats.record_reads(state_laws + [phi], pi.measures + (phi,))

        drift = spec.b(t, x, pi, phi, u)
        vol = spec.sigma(t, x, pi, phi, u)
        states[k + 1] = x + drift * dt + np.einsum("rij,rj->ri", vol, draw.idiosyncratic[k]) + common_shift[k]
        _check_finite(states[k + 1], stats, k)

    if stats.projections:
        logger.warning(f"Replication {replication}: {stats.projections} control projections in total")
    return ReplicationPath(
        replication=replication,
        grid=grid,
        states=states,
        controls=controls,
        noise=CommonNoisePath(grid, draw.common),
        stats=stats,
    )


def _gather(function, replications):
    """Run `function` on every replication index; results come back in index order."""
    workers = min(settings.worker_count(), len(replications))
    if workers <= 1:
        return [function(r) for r in replications]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(function, replications))


def _bundle(spec, cfg, grid, results, diagnostics=None):
    paths = tuple(path for path in results if path is not None)
    failed = tuple(r for r, path in enumerate(results) if path is None)
    if failed:
        logger.error(f"{spec.name}: {len(failed)} of {len(results)} replications aborted: {list(failed)}")
    return TrajectoryBundle(spec.name, cfg, grid, paths, failed, diagnostics)


def _simulate(spec, policies, cfg, initial, draws):
    grid = uniform_grid(spec.horizon, cfg.K)
    initial = initial or InitialLaw.constant(np.zeros(spec.n))
    if draws is not None and len(draws) != cfg.M:
        raise ValueError(f"{len(draws)} noise draws for {cfg.M} replications")

    def replicate(replication):
        draw = draws[replication] if draws is not None else draw_noise(spec, cfg, replication, initial, grid)
        try:
            return run_replication(spec, policies, grid, draw, replication, cfg.seed)
        except NonFiniteStateError as e:
            logger.error(f"Replication {replication} aborted: {e}")
            return None

    return _bundle(spec, cfg, grid, _gather(replicate, range(cfg.M)))


def simulate_n_agent(spec, policies, cfg, initial=None, draws=None):
    """
    Simulate the N-agent system, one policy per particle.

    Args:
        spec: Problem
        policies: Sequence of N policies
        cfg: SimConfig
        initial: InitialLaw (defaults to the point mass at 0)
        draws: Pre-drawn NoiseDraws, one per replication, for common random numbers

    Returns:
        TrajectoryBundle with cfg.M replications minus the aborted ones
    """
    policies = list(policies)
    if len(policies) != cfg.N:
        raise DimensionMismatchError(f"{len(policies)} policies for N={cfg.N}")
    logger.info(f"Simulating {spec.name} N-agent system: N={cfg.N}, K={cfg.K}, M={cfg.M}")
    return _simulate(spec, policies, cfg, initial, draws)


def simulate_mkv(spec, policy, cfg, initial=None, draws=None):
    """
    Conditional McKean-Vlasov particle approximation with one shared policy.

    Each replication draws its own common noise B, and the conditional laws
    given B are the in-cloud empirical measures of that replication.
    """
    logger.info(f"Simulating {spec.name} McKean-Vlasov cloud: N={cfg.N}, K={cfg.K}, M={cfg.M}")
    return _simulate(spec, [policy] * cfg.N, cfg, initial, draws)


def draw_all(spec, cfg, initial=None, uniforms=False):
    """NoiseDraws of every replication of a run, for common random numbers."""
    grid = uniform_grid(spec.horizon, cfg.K)
    initial = initial or InitialLaw.constant(np.zeros(spec.n))
    return _gather(lambda r: draw_noise(spec, cfg, r, initial, grid, uniforms), range(cfg.M))


def _require_grids(reference, *others):
    for other in others:
        if not same_grid(reference, other):
            raise GridMismatchError("inputs do not share a time grid")


def simulate_regularized_fp(spec, eps, q, pi_ref, B, cfg, initial=None, replication=0):
    """
    Particle solution of the regularized Fokker-Planck equation.

    Simulates N independent copies of dY = b^eps dt + (a^eps)^(1/2) dW + sigma0 dB
    with the mollified coefficients evaluated at (t_k, Y_k) against the frozen
    inputs (B, pi_ref stopped at t_k, q_k).

    Args:
        spec: Problem
        eps: Mollifier bandwidth
        q: RelaxedControlPath
        pi_ref: Reference MeasurePath of state laws
        B: CommonNoisePath
        cfg: SimConfig (N particles and the seed)
        initial: InitialLaw of Y_0
        replication: Stream index of the noise

    Returns:
        MeasurePath of the empirical laws of the cloud
    """
    grid = q.grid
    _require_grids(grid, pi_ref.grid, B.grid)
    if B.ell != spec.ell:
        raise DimensionMismatchError(f"common noise has {B.ell} components, problem has {spec.ell}")
    initial = initial or InitialLaw.constant(np.zeros(spec.n))
    draw = draw_noise(spec, cfg, replication, initial, grid)
    common_shift = B.increments @ spec.sigma0.T

    y = np.array(draw.initial)
    laws = [DiscreteMeasure.uniform(y)]
    fallbacks = 0
    for k in range(grid.shape[0] - 1):
        t = float(grid[k])
        dt = float(grid[k + 1] - grid[k])
        b_hat, a_hat, events = mollified_coefficients_batch(spec, eps, t, y, pi_ref.stopped(k), q.steps[k])
        fallbacks += events
        root = principal_sqrt(a_hat)
        y = y + b_hat * dt + np.einsum("rij,rj->ri", root, draw.idiosyncratic[k]) + common_shift[k]
        if not np.isfinite(y).all():
            raise NonFiniteStateError(f"regularized Fokker-Planck cloud left the finite reals at step {k}")
        laws.append(DiscreteMeasure.uniform(y))

    if fallbacks:
        logger.warning(f"Regularized FP run (eps={eps}): {fallbacks} bandwidth fallbacks")
    logger.info(f"Regularized FP run done: eps={eps}, N={cfg.N}, K={grid.shape[0] - 1}")
    return MeasurePath(grid, tuple(laws))


def _scheme_replication(spec, eps, m_path, fine_grid, refinement, draw, replication):
    steps = fine_grid.shape[0] - 1
    count = draw.initial.shape[0]
    states = np.empty((steps + 1, count, spec.n))
    controls = np.empty((steps, count, spec.control_dim))
    states[0] = draw.initial
    stats = ReplicationStats(replication)
    common_shift = draw.common @ spec.sigma0.T
    state_laws = []
    identity = np.eye(spec.n)
    max_drift = max_vol = 0.0

    for j in range(steps):
        t = float(fine_grid[j])
        dt = float(fine_grid[j + 1] - fine_grid[j])
        x = states[j]
        (_, m), = m_path.steps[j // refinement]
        state_laws.append(DiscreteMeasure.uniform(x))
        pi = _stopped_prefix(fine_grid, state_laws)
        # m is the input relaxed control, shared by every replication
        stats.record_reads(state_laws, pi.measures)

        bandwidths, events = resolve_bandwidth(x, m, eps)
        stats.fallbacks += events
        alpha = sample_controls_batch(x, m, bandwidths, draw.uniforms[j])
        controls[j] = alpha

        b_hat, a_hat, _ = mollified_coefficients_batch(spec, eps, t, x, pi, ((1.0, m),))
        b_mean, a_mean = kernel_averages(spec, eps, t, x, pi, m, bandwidths)
        drift_correction = b_hat - b_mean
        correction = principal_sqrt(a_hat) @ inverse_principal_sqrt(a_mean)
        max_drift = max(max_drift, float(np.max(np.abs(drift_correction))))
        max_vol = max(max_vol, float(np.max(np.linalg.norm(correction - identity, ord=2, axis=(1, 2)))))

        drift = spec.b(t, x, pi, m, alpha) + drift_correction
        vol = correction @ spec.sigma(t, x, pi, m, alpha)
        states[j + 1] = x + drift * dt + np.einsum("rij,rj->ri", vol, draw.idiosyncratic[j]) + common_shift[j]
        _check_finite(states[j + 1], stats, j)

    path = ReplicationPath(replication, fine_grid, states, controls, CommonNoisePath(fine_grid, draw.common), stats)
    return path, max_drift, max_vol, steps


def simulate_randomized_scheme(spec, eps, m_path, cfg, dyadic_level, initial=None):
    """
    Randomized Euler scheme driven by the kernel-conditioned control sampler.

    On the dyadic grid t_j = j T / 2^level, each particle draws its control
    alpha = N^eps(X_j, m_s)(V_j) from a fresh uniform V_j per cell, and moves
    with drift b(alpha) + [b^eps(X_j) - int b(u) H^eps(du)] and volatility
    (a^eps)^(1/2) (int sigma sigma^T(u) H^eps(du))^(-1/2) sigma(alpha).

    Args:
        spec: Problem
        eps: Mollifier bandwidth
        m_path: RelaxedControlPath with single-component steps on the cfg.K grid
        cfg: SimConfig
        dyadic_level: The fine grid has 2^dyadic_level cells
        initial: InitialLaw

    Returns:
        TrajectoryBundle on the fine grid, with SchemeDiagnostics attached
    """
    fine_steps = 2 ** int(dyadic_level)
    coarse_steps = len(m_path.steps)
    if coarse_steps != cfg.K:
        raise GridMismatchError(f"control path has {coarse_steps} steps, config has K={cfg.K}")
    if fine_steps % coarse_steps:
        raise GridMismatchError(f"dyadic grid of {fine_steps} cells does not refine {coarse_steps} steps")
    if any(len(step) != 1 for step in m_path.steps):
        raise ValueError("the randomized scheme needs single-component control steps")
    if not np.isclose(m_path.grid[-1], spec.horizon):
        raise GridMismatchError(f"control path ends at {m_path.grid[-1]}, horizon is {spec.horizon}")

    fine_grid = uniform_grid(spec.horizon, fine_steps)
    refinement = fine_steps // coarse_steps
    initial = initial or InitialLaw.constant(np.zeros(spec.n))
    logger.info(f"Randomized scheme for {spec.name}: eps={eps}, 2^{dyadic_level} cells, N={cfg.N}, M={cfg.M}")

    def replicate(replication):
        draw = draw_noise(spec, cfg, replication, initial, fine_grid, uniforms=True)
        try:
            return _scheme_replication(spec, eps, m_path, fine_grid, refinement, draw, replication)
        except NonFiniteStateError as e:
            logger.error(f"Replication {replication} aborted: {e}")
            return None

    results = _gather(replicate, range(cfg.M))
    finished = [result for result in results if result is not None]
    diagnostics = SchemeDiagnostics(
        max_drift_correction=max((r[1] for r in finished), default=0.0),
        max_vol_correction=max((r[2] for r in finished), default=0.0),
        evaluations=sum(r[3] for r in finished) * cfg.N,
    )
    paths = [None if result is None else result[0] for result in results]
    return _bundle(spec, cfg, fine_grid, paths, diagnostics)


def bundle_frame(bundle):
    """
    Per-node particle table of a bundle.

    Returns:
        DataFrame with columns replication, particle, node, t, x_0.., u_0..;
        controls are empty at the terminal node
    """
    frames = []
    for path in bundle:
        steps, count, n = path.states.shape
        d = path.controls.shape[2]
        controls = np.full((steps, count, d), np.nan)
        controls[:-1] = path.controls
        frame = pd.DataFrame({
            "replication": path.replication,
            "particle": np.tile(np.arange(count), steps),
            "node": np.repeat(np.arange(steps), count),
            "t": np.repeat(path.grid, count),
        })
        for j in range(n):
            frame[f"x_{j}"] = path.states[:, :, j].ravel()
        for j in range(d):
            frame[f"u_{j}"] = controls[:, :, j].ravel()
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
