"""
Mollification

Compactly supported mollifier G_eps, smoothed densities of atom clouds, the
kernel-conditioned control law H^eps(x, m), its inverse-CDF sampler, the
mollified Fokker-Planck coefficients (b^eps, a^eps), and principal square
roots of symmetric positive definite matrices.

The base profile is the quartic bump G(x) = c_n (1 - |x|^2)^2 on the unit ball.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.spatial.distance import cdist
from scipy.special import gamma

from .exceptions import NotSpdError, ZeroMassError
from .measures import DiscreteMeasure

logger = logging.getLogger(__name__)

# Constants
MAX_DOUBLINGS = 40
ROW_CHUNK = 256
SYMMETRY_TOL = 1e-12
SPD_RATIO = 1e-12


@lru_cache(maxsize=None)
def normalizing_constant(n):
    """
    c_n such that c_n (1 - |x|^2)^2 integrates to one over the unit ball of R^n.

    Args:
        n: Dimension

    Returns:
        The constant, computed by radial adaptive quadrature
    """
    radial, _ = quad(lambda r: (1.0 - r * r) ** 2 * r ** (n - 1), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    sphere = 2.0 * np.pi ** (n / 2.0) / gamma(n / 2.0)
    return 1.0 / (sphere * radial)


@dataclass(frozen=True)
class Mollifier:
    """G_eps(x) = eps^-n G(x / eps) in dimension n."""

    eps: float
    n: int

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.eps}")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        r2 = np.sum((z / self.eps) ** 2, axis=-1)
        bump = np.where(r2 < 1.0, (1.0 - r2) ** 2, 0.0)
        return normalizing_constant(self.n) * bump / self.eps ** self.n


def _rows(x, n=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if n is None or x.shape[0] == n else x.reshape(-1, 1)
    return x


def kernel_weights(x, m, eps):
    """
    Unnormalized weights w_i G_eps(x_r - y_i) of the atoms of `m`.

    Args:
        x: Evaluation points, shape (R, n)
        m: Measure whose first n coordinates are the state block
        eps: Bandwidth, scalar or one per row

    Returns:
        Array of shape (R, k)
    """
    x = _rows(x)
    n = x.shape[1]
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (x.shape[0],))
    r2 = cdist(x, m.points[:, :n], "sqeuclidean") / eps[:, None] ** 2
    bump = np.where(r2 < 1.0, (1.0 - r2) ** 2, 0.0)
    scale = normalizing_constant(n) / eps ** n
    return bump * scale[:, None] * m.weights[None, :]


def smoothed_density(m, eps, x):
    """pi^(eps)(x) = sum_i w_i G_eps(x - y_i) over the state blocks y_i of `m`."""
    if eps <= 0:
        raise ValueError(f"bandwidth must be positive, got {eps}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(kernel_weights(x.reshape(1, -1), m, eps).sum())


def conditional_kernel(x, m, eps):
    """
    Kernel-conditioned control law H^eps(x, m).

    Args:
        x: State point of R^n
        m: State-control measure over R^n x U
        eps: Bandwidth

    Returns:
        DiscreteMeasure over U with weights proportional to w_i G_eps(x - y_i)
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[0]
    weights = kernel_weights(x.reshape(1, -1), m, eps)[0]
    total = weights.sum()
    if not total > 0:
        raise ZeroMassError(f"no atom of the measure lies within {eps} of {x}")
    keep = weights > 0
    return DiscreteMeasure(m.points[keep, n:], weights[keep] / total)


def _control_order(m, n):
    controls = m.points[:, n:]
    return np.lexsort(controls.T[::-1])


def _inverse_cdf(weights, order, v):
    cumulative = np.cumsum(weights[:, order], axis=1)
    cumulative = cumulative / cumulative[:, -1:]
    v = np.maximum(np.asarray(v, dtype=float), np.finfo(float).tiny)
    index = np.sum(cumulative < v[:, None], axis=1)
    return order[np.minimum(index, len(order) - 1)]


def sample_control(x, m, eps, v):
    """
    Inverse-CDF draw from H^eps(x, m) for uniform variable(s) v.

    Atoms are visited in lexicographic order of their control coordinates and
    the first one whose cumulative weight reaches v is returned.

    Args:
        x: State point of R^n
        m: State-control measure over R^n x U
        eps: Bandwidth
        v: Uniform number in [0, 1] or an array of them

    Returns:
        A control (shape (d,)) for scalar v, shape (len(v), d) otherwise
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[0]
    weights = kernel_weights(x.reshape(1, -1), m, eps)
    if not weights.sum() > 0:
        raise ZeroMassError(f"no atom of the measure lies within {eps} of {x}")
    scalar = np.ndim(v) == 0
    draws = np.atleast_1d(np.asarray(v, dtype=float))
    atoms = _inverse_cdf(weights, _control_order(m, n), draws)
    controls = m.points[atoms, n:]
    return controls[0] if scalar else controls


def resolve_bandwidth(x, m, eps, max_doublings=MAX_DOUBLINGS):
    """
    Per-row bandwidth with positive smoothed mass.

    Rows whose window holds no atom get their bandwidth doubled until it does.

    Args:
        x: Evaluation points, shape (R, n)
        m: Measure whose state block is smoothed
        eps: Requested bandwidth
        max_doublings: Doublings allowed before giving up

    Returns:
        Tuple (bandwidths per row, number of rows that needed a fallback)
    """
    x = _rows(x)
    bandwidths = np.full(x.shape[0], float(eps))
    pending = np.arange(x.shape[0])
    fallbacks = 0
    for doubling in range(max_doublings + 1):
        mass = np.zeros(len(pending))
        for rows in _chunks(len(pending)):
            chunk = pending[rows]
            mass[rows] = kernel_weights(x[chunk], m, bandwidths[chunk]).sum(axis=1)
        pending = pending[~(mass > 0)]
        if doubling == 0:
            fallbacks = len(pending)
        if len(pending) == 0:
            break
        if doubling == max_doublings:
            raise ZeroMassError(
                f"{len(pending)} evaluation points still see no mass after {max_doublings} doublings"
            )
        bandwidths[pending] *= 2.0

    if fallbacks:
        logger.warning(f"Bandwidth fallback for {fallbacks} of {x.shape[0]} points (eps={eps})")
    return bandwidths, fallbacks


def _normalized_weights(x, m, bandwidths):
    weights = kernel_weights(x, m, bandwidths)
    totals = weights.sum(axis=1, keepdims=True)
    if not (totals > 0).all():
        raise ZeroMassError(f"no atom within the kernel window of {int(np.sum(totals <= 0))} points")
    return weights / totals


def _chunks(count):
    return [slice(start, min(start + ROW_CHUNK, count)) for start in range(0, count, ROW_CHUNK)]


def mollified_coefficients_batch(spec, eps, t, x, pi, q_step, fallback=True):
    """
    Mollified drift and diffusion at many points.

    Args:
        spec: Problem whose b and sigma sigma^T are averaged
        eps: Bandwidth
        t: Time
        x: Evaluation points, shape (R, n)
        pi: State path stopped at t
        q_step: Mixture of state-control measures, (weight, measure) pairs
        fallback: Double the bandwidth of empty windows instead of raising

    Returns:
        Tuple (b_hat (R, n), a_hat (R, n, n), fallback count)
    """
    x = _rows(x, spec.n)
    n = spec.n
    b_hat = np.zeros((x.shape[0], n))
    a_hat = np.zeros((x.shape[0], n, n))
    fallbacks = 0

    for weight, m in q_step:
        y, u = m.points[:, :n], m.points[:, n:]
        b_atoms = spec.b(t, y, pi, m, u)
        a_atoms = spec.diffusion(t, y, pi, m, u)
        if fallback:
            bandwidths, events = resolve_bandwidth(x, m, eps)
            fallbacks += events
        else:
            bandwidths = np.full(x.shape[0], float(eps))
        for rows in _chunks(x.shape[0]):
            kernel = _normalized_weights(x[rows], m, bandwidths[rows])
            b_hat[rows] += weight * (kernel @ b_atoms)
            a_hat[rows] += weight * np.einsum("rk,kij->rij", kernel, a_atoms)

    a_hat = 0.5 * (a_hat + np.swapaxes(a_hat, -1, -2))
    return b_hat, a_hat, fallbacks


def mollified_coefficients(spec, eps, t, x, pi, q_step):
    """
    Mollified coefficients (b^eps(t, x), a^eps(t, x)) at a single point.

    Raises:
        ZeroMassError: when a mixture component has no atom within eps of x
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    b_hat, a_hat, _ = mollified_coefficients_batch(spec, eps, t, x, pi, q_step, fallback=False)
    return b_hat[0], a_hat[0]


def kernel_averages(spec, eps, t, x, pi, m, bandwidths=None):
    """
    Kernel averages of b(t, x, pi, m, u) and sigma sigma^T(t, x, pi, m, u) over H^eps(x, m).

    The coefficients are evaluated at the point x itself for every control
    atom, which is what the randomized scheme's corrections compare against.

    Returns:
        Tuple (mean drift (R, n), mean diffusion (R, n, n))
    """
    x = _rows(x, spec.n)
    n = spec.n
    bandwidths = np.full(x.shape[0], float(eps)) if bandwidths is None else bandwidths
    controls = m.points[:, n:]
    b_mean = np.zeros((x.shape[0], n))
    a_mean = np.zeros((x.shape[0], n, n))
    for rows in _chunks(x.shape[0]):
        kernel = _normalized_weights(x[rows], m, bandwidths[rows])
        for j in np.flatnonzero(kernel.any(axis=0)):
            u = np.broadcast_to(controls[j], (kernel[:, j].shape[0], controls.shape[1]))
            b_mean[rows] += kernel[:, j, None] * spec.b(t, x[rows], pi, m, u)
            a_mean[rows] += kernel[:, j, None, None] * spec.diffusion(t, x[rows], pi, m, u)
    a_mean = 0.5 * (a_mean + np.swapaxes(a_mean, -1, -2))
    return b_mean, a_mean


def sample_controls_batch(x, m, bandwidths, v):
    """Inverse-CDF draws from H^eps(x_r, m) for every row r, one uniform each."""
    x = _rows(x)
    n = x.shape[1]
    order = _control_order(m, n)
    draws = np.empty((x.shape[0], m.dim - n))
    for rows in _chunks(x.shape[0]):
        weights = kernel_weights(x[rows], m, bandwidths[rows])
        draws[rows] = m.points[_inverse_cdf(weights, order, v[rows]), n:]
    return draws


def regularization_error(phi, cloud, eps):
    """
    Mean error of regularizing a two-point function by convolution.

    Computes sum_x w_x |sum_y phi(x, y) G_eps(x - y) w_y / cloud^(eps)(x) - phi(x, x)|
    over the atoms of `cloud`.

    Args:
        phi: Vectorized function phi(x[R, n], y[k, n]) -> [R, k]
        cloud: State measure
        eps: Bandwidth

    Returns:
        The weighted mean absolute error
    """
    points = cloud.points
    error = 0.0
    for rows in _chunks(cloud.size):
        kernel = _normalized_weights(points[rows], cloud, np.full(rows.stop - rows.start, float(eps)))
        values = np.asarray(phi(points[rows], points), dtype=float)
        smoothed = np.sum(kernel * values, axis=1)
        diagonal = values[np.arange(rows.stop - rows.start), np.arange(rows.start, rows.stop)]
        error += float(cloud.weights[rows] @ np.abs(smoothed - diagonal))
    return error


def _spd_eigh(matrix):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim < 2 or matrix.shape[-1] != matrix.shape[-2]:
        raise NotSpdError(f"expected square matrices, got shape {matrix.shape}")
    transpose = np.swapaxes(matrix, -1, -2)
    scale = max(1.0, float(np.max(np.abs(matrix))))
    if np.max(np.abs(matrix - transpose)) > SYMMETRY_TOL * scale:
        raise NotSpdError("matrix is not symmetric")
    values, vectors = np.linalg.eigh(0.5 * (matrix + transpose))
    smallest, largest = values[..., 0], values[..., -1]
    if np.any(largest <= 0) or np.any(smallest <= SPD_RATIO * largest):
        raise NotSpdError(f"matrix is not positive definite (smallest eigenvalue {np.min(smallest):.3e})")
    return values, vectors


def _spectral_function(values, vectors, function):
    result = (vectors * function(values)[..., None, :]) @ np.swapaxes(vectors, -1, -2)
    return 0.5 * (result + np.swapaxes(result, -1, -2))


def principal_sqrt(matrix):
    """
    Principal square root of an SPD matrix (or a stack of them).

    Raises:
        NotSpdError: when the smallest eigenvalue is not above 1e-12 times the largest
    """
    values, vectors = _spd_eigh(matrix)
    return _spectral_function(values, vectors, np.sqrt)


def inverse_principal_sqrt(matrix):
    """Principal square root of the inverse, from the same eigendecomposition."""
    values, vectors = _spd_eigh(matrix)
    return _spectral_function(values, vectors, lambda v: 1.0 / np.sqrt(v))
