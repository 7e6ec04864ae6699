"""
Control Problems

Coefficient tuples (b, sigma, sigma0, L, g) of extended mean-field control
problems, their control sets, a catalog of named problems, and sampling probes
for the standing assumptions (boundedness, Lipschitz continuity, ellipticity,
growth of the rewards).

Coefficients are evaluated on batches of rows:

    b(t, x[R, n], pi, m, u[R, d])     -> [R, n]
    sigma(t, x[R, n], pi, m, u[R, d]) -> [R, n, n]
    L(t, x[R, n], pi, m, u[R, d])     -> [R]
    g(x[R, n], pi)                    -> [R]

where pi is the MeasurePath of state laws stopped at t and m is a
DiscreteMeasure over R^n x U.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import CoefficientEvaluationError, UnknownProblemError
from .measures import (
    DiscreteMeasure,
    MeasurePath,
    marginal_state,
    p_moment,
    path_distance,
    uniform_grid,
    wasserstein,
)

logger = logging.getLogger(__name__)

# Constants
ELLIPTICITY_SLACK = 1e-9
COMMON_NOISE_SCALE = 0.5
MEANREV_RATE = 1.0
MEANREV_CLIP = 2.0
PROBE_ATOMS = 6
PROBE_NODES = 4
PROBE_STEP = 0.1


@dataclass(frozen=True, eq=False)
class ControlSet:
    """
    Compact control set U: a box or a finite list of points.

    Attributes:
        kind: "box" or "finite"
        lower: Box lower corner (box only)
        upper: Box upper corner (box only)
        points: Finite points in lexicographic order (finite only)
    """

    kind: str
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "box":
            lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
            upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
            if lower.shape != upper.shape or (lower > upper).any():
                raise ValueError(f"invalid control box [{lower}, {upper}]")
            object.__setattr__(self, "lower", lower)
            object.__setattr__(self, "upper", upper)
        elif self.kind == "finite":
            points = np.asarray(self.points, dtype=float)
            if points.ndim == 1:
                points = points.reshape(-1, 1)
            if points.shape[0] == 0:
                raise ValueError("a finite control set needs at least one point")
            points = points[np.lexsort(points.T[::-1])]
            object.__setattr__(self, "points", points)
        else:
            raise ValueError(f"unknown control set kind {self.kind!r}")

    @classmethod
    def box(cls, lower, upper):
        return cls("box", lower=lower, upper=upper)

    @classmethod
    def finite(cls, points):
        return cls("finite", points=points)

    @property
    def dim(self):
        return self.lower.shape[0] if self.kind == "box" else self.points.shape[1]

    def bounds(self):
        """Componentwise (lower, upper) bounds of the set."""
        if self.kind == "box":
            return self.lower.copy(), self.upper.copy()
        return self.points.min(axis=0), self.points.max(axis=0)

    def project(self, u):
        """Nearest point of U for every row of `u` (first point in lexicographic order on ties)."""
        u = np.asarray(u, dtype=float).reshape(-1, self.dim)
        if self.kind == "box":
            return np.clip(u, self.lower, self.upper)
        return self.points[np.argmin(cdist(u, self.points), axis=1)]

    def contains(self, u, tol=1e-12):
        u = np.asarray(u, dtype=float).reshape(-1, self.dim)
        if self.kind == "box":
            return np.all((u >= self.lower - tol) & (u <= self.upper + tol), axis=1)
        return np.min(cdist(u, self.points), axis=1) <= tol

    def sample(self, rng, size):
        if self.kind == "box":
            return rng.uniform(self.lower, self.upper, size=(size, self.dim))
        return self.points[rng.integers(0, self.points.shape[0], size=size)]


def _zero_sigma0(n):
    return np.zeros((n, 0))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    Extended mean-field control problem.

    Attributes:
        name: Catalog name
        n: State dimension
        horizon: Time horizon T
        control_set: Compact control set U
        drift: b(t, x, pi, m, u)
        vol: sigma(t, x, pi, m, u), square n x n
        running: Running reward L(t, x, pi, m, u)
        terminal: Terminal reward g(x, pi)
        sigma0: Constant n x ell common-noise volatility (ell may be 0)
        theta: Declared ellipticity constant, sigma sigma^T >= theta I
        p: Integrability exponent, at least 2
        p_prime: Moment exponent, larger than p
        description: Free text shown in manifests
    """

    name: str
    n: int
    horizon: float
    control_set: ControlSet
    drift: Callable
    vol: Callable
    running: Callable
    terminal: Callable
    sigma0: np.ndarray = None
    theta: float = 1.0
    p: float = 2.0
    p_prime: float = 4.0
    description: str = ""

    def __post_init__(self):
        sigma0 = _zero_sigma0(self.n) if self.sigma0 is None else np.asarray(self.sigma0, dtype=float)
        if sigma0.ndim == 1:
            sigma0 = sigma0.reshape(self.n, -1)
        if sigma0.shape[0] != self.n:
            raise ValueError(f"sigma0 must have {self.n} rows, got shape {sigma0.shape}")
        if not self.p_prime > self.p >= 2:
            raise ValueError(f"exponents must satisfy p' > p >= 2, got p={self.p}, p'={self.p_prime}")
        if self.theta <= 0:
            raise ValueError(f"ellipticity constant must be positive, got {self.theta}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        sigma0.setflags(write=False)
        object.__setattr__(self, "sigma0", sigma0)

    @property
    def ell(self):
        return self.sigma0.shape[1]

    @property
    def control_dim(self):
        return self.control_set.dim

    def _call(self, name, function, shape, *args):
        try:
            value = function(*args)
            return np.broadcast_to(np.asarray(value, dtype=float), shape)
        except Exception as e:
            raise CoefficientEvaluationError(f"{self.name}.{name}", _describe(args), e) from e

    def b(self, t, x, pi, m, u):
        """Drift on a batch of rows, shape (R, n)."""
        return self._call("drift", self.drift, (x.shape[0], self.n), t, x, pi, m, u)

    def sigma(self, t, x, pi, m, u):
        """Volatility on a batch of rows, shape (R, n, n)."""
        return self._call("vol", self.vol, (x.shape[0], self.n, self.n), t, x, pi, m, u)

    def diffusion(self, t, x, pi, m, u):
        """sigma sigma^T on a batch of rows."""
        vol = self.sigma(t, x, pi, m, u)
        return vol @ np.swapaxes(vol, -1, -2)

    def running_reward(self, t, x, pi, m, u):
        return self._call("running", self.running, (x.shape[0],), t, x, pi, m, u)

    def terminal_reward(self, x, pi):
        return self._call("terminal", self.terminal, (x.shape[0],), x, pi)


def _describe(args):
    described = []
    for arg in args:
        if isinstance(arg, np.ndarray):
            described.append(np.array2string(arg, precision=4, threshold=8))
        elif isinstance(arg, DiscreteMeasure):
            described.append(f"DiscreteMeasure(dim={arg.dim}, atoms={arg.size})")
        elif isinstance(arg, MeasurePath):
            described.append(f"MeasurePath(nodes={len(arg)}, dim={arg.dim})")
        else:
            described.append(repr(arg))
    return "(" + ", ".join(described) + ")"


def state_mean(m, n):
    """x-bar(m): mean of the state block of a state-control measure."""
    return _shifted_mean(m.points[:, :n], m.weights)


def control_mean(m, n):
    """u-bar(m): mean of the control block of a state-control measure."""
    return _shifted_mean(m.points[:, n:], m.weights)


def _shifted_mean(values, weights):
    # centring on the first row keeps the mean exact for constant columns
    origin = values[0]
    return origin + weights @ (values - origin)


# Builtin coefficients

def _control_drift(t, x, pi, m, u):
    return u


def _zero_drift(t, x, pi, m, u):
    return np.zeros_like(x)


def _unit_vol(t, x, pi, m, u):
    return np.broadcast_to(np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1]))


def _zero_vol(t, x, pi, m, u):
    return np.zeros((x.shape[0], x.shape[1], x.shape[1]))


def _zero_running(t, x, pi, m, u):
    return np.zeros(x.shape[0])


def _zero_terminal(x, pi):
    return np.zeros(x.shape[0])


def _linear_terminal(x, pi):
    return x[:, 0]


def _consensus_running(t, x, pi, m, u):
    deviation = u - control_mean(m, x.shape[1])
    return -np.sum(deviation ** 2, axis=1)


def _meanrev_drift(t, x, pi, m, u):
    pull = np.clip(MEANREV_RATE * (state_mean(m, x.shape[1]) - x), -MEANREV_CLIP, MEANREV_CLIP)
    return u + pull


def _effort_running(t, x, pi, m, u):
    return -np.sum(u ** 2, axis=1)


def _quadratic_terminal(x, pi):
    return -np.sum(x ** 2, axis=1)


def _half_control_drift(t, x, pi, m, u):
    return 0.5 * u


def _sine_vol(t, x, pi, m, u):
    return (1.0 + 0.5 * np.sin(x))[:, :, None] * np.eye(x.shape[1])


UNIT_BOX = ControlSet.box([-1.0], [1.0])


def _with_common_noise(spec):
    return ProblemSpec(
        name=f"{spec.name}_COMMON_NOISE",
        n=spec.n,
        horizon=spec.horizon,
        control_set=spec.control_set,
        drift=spec.drift,
        vol=spec.vol,
        running=spec.running,
        terminal=spec.terminal,
        sigma0=np.full((spec.n, 1), COMMON_NOISE_SCALE),
        theta=spec.theta,
        p=spec.p,
        p_prime=spec.p_prime,
        description=f"{spec.description}; common noise sigma0={COMMON_NOISE_SCALE}"
    )


@lru_cache(maxsize=None)
def _builtin_catalog():
    base = [
        ProblemSpec(
            name="LINEAR_DRIFT", n=1, horizon=1.0, control_set=UNIT_BOX,
            drift=_control_drift, vol=_unit_vol, running=_zero_running, terminal=_linear_terminal,
            theta=1.0, description="b=u, sigma=1, L=0, g=x, U=[-1,1]"
        ),
        ProblemSpec(
            name="CONTROL_CONSENSUS", n=1, horizon=1.0, control_set=UNIT_BOX,
            drift=_control_drift, vol=_unit_vol, running=_consensus_running, terminal=_zero_terminal,
            theta=1.0, description="b=u, sigma=1, L=-(u-ubar(m))^2, g=0, U=[-1,1]"
        ),
        ProblemSpec(
            name="CLIPPED_MEANREV", n=1, horizon=1.0, control_set=UNIT_BOX,
            drift=_meanrev_drift, vol=_unit_vol, running=_effort_running, terminal=_quadratic_terminal,
            theta=1.0,
            description=f"b=u+clip({MEANREV_RATE}(xbar(m)-x), -{MEANREV_CLIP}, {MEANREV_CLIP}), "
                        f"sigma=1, L=-u^2, g=-x^2, U=[-1,1]"
        ),
    ]
    extras = [
        ProblemSpec(
            name="FROZEN", n=1, horizon=1.0, control_set=UNIT_BOX,
            drift=_zero_drift, vol=_zero_vol, running=_zero_running, terminal=_linear_terminal,
            theta=1.0, description="degenerate: b=0, sigma=0, L=0, g=x (ellipticity deliberately fails)"
        ),
        ProblemSpec(
            name="HEAT", n=1, horizon=1.0, control_set=UNIT_BOX,
            drift=_zero_drift, vol=_unit_vol, running=_zero_running, terminal=_zero_terminal,
            theta=1.0, description="b=0, sigma=1, L=0, g=0"
        ),
        ProblemSpec(
            name="LIPSCHITZ_VOL", n=1, horizon=1.0, control_set=UNIT_BOX,
            drift=_half_control_drift, vol=_sine_vol, running=_effort_running, terminal=_zero_terminal,
            theta=0.25, description="b=u/2, sigma=1+sin(x)/2, L=-u^2, g=0"
        ),
    ]
    catalog = {}
    for spec in base:
        catalog[spec.name] = spec
        noisy = _with_common_noise(spec)
        catalog[noisy.name] = noisy
    for spec in extras:
        catalog[spec.name] = spec
    return catalog


_REGISTRY = {}


def register_problem(spec):
    """Make a programmatically built problem addressable by name."""
    _REGISTRY[spec.name] = spec
    logger.info(f"Registered problem {spec.name}")
    return spec


def builtin_problems():
    """Catalog of named problems, registered ones included."""
    catalog = dict(_builtin_catalog())
    catalog.update(_REGISTRY)
    return catalog


def lookup(name):
    catalog = builtin_problems()
    if name not in catalog:
        raise UnknownProblemError(name)
    return catalog[name]


@dataclass
class AssumptionReport:
    """Constants observed by probe_assumptions."""

    problem: str
    samples: int
    min_ellipticity: float
    ellipticity_violated: bool
    max_drift_norm: float
    max_vol_norm: float
    lipschitz_ratio: float
    growth_constant: float
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {
            "problem": self.problem,
            "samples": self.samples,
            "min_ellipticity": self.min_ellipticity,
            "ellipticity_violated": self.ellipticity_violated,
            "max_drift_norm": self.max_drift_norm,
            "max_vol_norm": self.max_vol_norm,
            "lipschitz_ratio": self.lipschitz_ratio,
            "growth_constant": self.growth_constant,
        }


def _random_arguments(spec, rng):
    t = float(rng.uniform(0.0, spec.horizon))
    grid = uniform_grid(spec.horizon, PROBE_NODES)
    centres = rng.normal(0.0, 1.0, size=(PROBE_NODES + 1, spec.n))
    measures = tuple(
        DiscreteMeasure.uniform(centre + rng.normal(0.0, 1.0, size=(PROBE_ATOMS, spec.n)))
        for centre in centres
    )
    node = int(np.searchsorted(grid, t, side="right") - 1)
    pi = MeasurePath(grid, measures).stopped(node)
    m = DiscreteMeasure.uniform(np.hstack([
        rng.normal(0.0, 2.0, size=(PROBE_ATOMS, spec.n)),
        spec.control_set.sample(rng, PROBE_ATOMS),
    ]))
    x = rng.normal(0.0, 2.0, size=(1, spec.n))
    u = spec.control_set.sample(rng, 1)
    return t, x, pi, m, u


def _perturbed(spec, arguments, rng):
    t, x, pi, m, u = arguments
    x_shift = rng.normal(0.0, PROBE_STEP, size=x.shape)
    pi_shift = rng.normal(0.0, PROBE_STEP, size=spec.n)
    m_shift = rng.normal(0.0, PROBE_STEP, size=spec.n)
    shifted_pi = pi.translated(np.tile(pi_shift, (len(pi), 1)))
    return t, x + x_shift, shifted_pi, m.shift_state(m_shift, spec.n), u


def _coefficients(spec, arguments):
    t, x, pi, m, u = arguments
    return spec.b(t, x, pi, m, u)[0], spec.sigma(t, x, pi, m, u)[0]


def probe_assumptions(spec, sample_budget=200, rng_seed=0):
    """
    Probe the standing assumptions of a problem on random arguments.

    Args:
        spec: Problem to probe
        sample_budget: Number of random argument pairs
        rng_seed: Seed of the probe generator

    Returns:
        AssumptionReport with the observed constants
    """
    if sample_budget < 1:
        raise ValueError(f"sample budget must be at least 1, got {sample_budget}")

    rng = np.random.default_rng(rng_seed)
    min_eig = np.inf
    max_drift = max_vol = lipschitz = growth = 0.0

    for _ in range(sample_budget):
        first = _random_arguments(spec, rng)
        second = _perturbed(spec, first, rng)

        b1, s1 = _coefficients(spec, first)
        b2, s2 = _coefficients(spec, second)
        for vol in (s1, s2):
            min_eig = min(min_eig, float(np.linalg.eigvalsh(vol @ vol.T)[0]))
        max_drift = max(max_drift, float(np.linalg.norm(b1)), float(np.linalg.norm(b2)))
        max_vol = max(max_vol, float(np.linalg.norm(s1)), float(np.linalg.norm(s2)))

        t, x, pi, m, u = first
        _, x2, pi2, m2, _ = second
        distance = (
            float(np.linalg.norm(x - x2))
            + path_distance(spec.p, pi, pi2)
            + wasserstein(spec.p, m, m2)
        )
        if distance > 0:
            jump = np.sqrt(np.sum((b1 - b2) ** 2) + np.sum((s1 - s2) ** 2))
            lipschitz = max(lipschitz, float(jump / distance))

        reward = abs(float(spec.running_reward(t, x, pi, m, u)[0])) + abs(float(spec.terminal_reward(x, pi)[0]))
        scale = (
            1.0
            + float(np.linalg.norm(x)) ** spec.p
            + max(p_moment(measure, spec.p) for measure in pi.measures)
            + p_moment(marginal_state(m, spec.n), spec.p)
        )
        growth = max(growth, reward / scale)

    violated = bool(min_eig < spec.theta - ELLIPTICITY_SLACK)
    report = AssumptionReport(
        problem=spec.name,
        samples=sample_budget,
        min_ellipticity=float(min_eig),
        ellipticity_violated=violated,
        max_drift_norm=max_drift,
        max_vol_norm=max_vol,
        lipschitz_ratio=lipschitz,
        growth_constant=growth,
    )
    if violated:
        report.notes.append(f"min eigenvalue {min_eig:.3e} below theta={spec.theta}")
        logger.warning(f"{spec.name}: ellipticity violated (min eigenvalue {min_eig:.3e} < {spec.theta})")
    logger.info(
        f"Probed {spec.name}: lambda_min={min_eig:.3e}, lipschitz={lipschitz:.3e}, growth={growth:.3e}"
    )
    return report
