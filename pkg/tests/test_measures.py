"""
Unit tests for the measures module.
"""

import itertools

import numpy as np
import pytest

from mfclab.exceptions import (
    DimensionMismatchError,
    GridMismatchError,
    InvalidMeasureError,
    ModePreconditionError,
)
from mfclab.measures import (
    CommonNoisePath,
    DiscreteMeasure,
    MeasurePath,
    RelaxedControlPath,
    check_marginal_constraint,
    empirical_from_particles,
    marginal_state,
    measure_records_frame,
    p_moment,
    path_distance,
    uniform_grid,
    wasserstein,
)


def brute_force(p, mu, nu):
    cost = np.linalg.norm(mu.points[:, None, :] - nu.points[None, :, :], axis=2) ** p
    rows = np.arange(mu.size)
    best = min(cost[rows, list(perm)].mean() for perm in itertools.permutations(range(nu.size)))
    return best ** (1.0 / p)


def random_cloud(rng, size, dim):
    return DiscreteMeasure.uniform(rng.normal(size=(size, dim)))


# Construction

def test_weights_must_sum_to_one():
    with pytest.raises(InvalidMeasureError):
        DiscreteMeasure([[0.0], [1.0]], [0.5, 0.6])


def test_negative_weight_rejected():
    with pytest.raises(InvalidMeasureError):
        DiscreteMeasure([[0.0], [1.0]], [1.5, -0.5])


def test_empty_and_non_finite_rejected():
    with pytest.raises(InvalidMeasureError):
        DiscreteMeasure.uniform(np.zeros((0, 1)))
    with pytest.raises(InvalidMeasureError):
        DiscreteMeasure.uniform([[np.nan]])


def test_measure_is_immutable():
    mu = DiscreteMeasure.uniform([[0.0], [1.0]])
    with pytest.raises(ValueError):
        mu.points[0, 0] = 5.0


def test_path_grid_must_start_at_zero_and_increase():
    mu = DiscreteMeasure.dirac([0.0])
    with pytest.raises(InvalidMeasureError):
        MeasurePath([0.1, 0.5], (mu, mu))
    with pytest.raises(InvalidMeasureError):
        MeasurePath([0.0, 0.5, 0.5], (mu, mu, mu))


def test_from_atoms_pairs():
    mu = DiscreteMeasure.from_atoms([([1.0, 2.0], 0.25), ([3.0, 4.0], 0.75)])
    np.testing.assert_array_equal(mu.points, [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(mu.weights, [0.25, 0.75])
    assert DiscreteMeasure.from_atoms([(2.0, 1.0)]).dim == 1
    with pytest.raises(InvalidMeasureError):
        DiscreteMeasure.from_atoms([])


def test_record_layout():
    mu = DiscreteMeasure([[1.0, 2.0], [3.0, 4.0]], [0.25, 0.75])
    assert mu.to_record() == [2.0, 2.0, 0.25, 1.0, 2.0, 0.75, 3.0, 4.0]
    assert DiscreteMeasure.from_record(mu.to_record()).same_multiset(mu)


# Wasserstein distance

def test_single_atom_cost():
    assert wasserstein(1, DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0])) == pytest.approx(1.0)


def test_identical_measures_at_zero_distance():
    mu = DiscreteMeasure.uniform([[0.0], [1.0]])
    assert wasserstein(2, mu, mu) == 0.0


def test_translation_in_the_plane():
    mu = DiscreteMeasure.uniform([[0.0, 0.0], [1.0, 0.0]])
    nu = mu.translate([0.0, 1.0])
    assert wasserstein(2, mu, nu) == pytest.approx(1.0, abs=1e-12)


def test_five_point_clouds_match_all_assignments():
    rng = np.random.default_rng(11)
    mu, nu = random_cloud(rng, 5, 2), random_cloud(rng, 5, 2)
    assert wasserstein(2, mu, nu) == pytest.approx(brute_force(2, mu, nu), abs=1e-12)


def test_exact_assignment_equals_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        size = int(rng.integers(1, 8))
        dim = int(rng.integers(1, 4))
        p = float(rng.choice([1.0, 2.0, 3.0]))
        mu, nu = random_cloud(rng, size, dim), random_cloud(rng, size, dim)
        assert wasserstein(p, mu, nu, mode="exact-assignment") == pytest.approx(
            brute_force(p, mu, nu), abs=1e-9
        )


def test_metric_axioms_on_random_triples():
    rng = np.random.default_rng(7)
    for _ in range(200):
        size = int(rng.integers(1, 7))
        dim = int(rng.integers(1, 4))
        a, b, c = (random_cloud(rng, size, dim) for _ in range(3))
        ab = wasserstein(2, a, b, mode="exact-assignment")
        assert ab == wasserstein(2, b, a, mode="exact-assignment")
        assert wasserstein(2, a, a, mode="exact-assignment") <= 1e-12
        assert wasserstein(2, a, c, mode="exact-assignment") <= (
            ab + wasserstein(2, b, c, mode="exact-assignment") + 1e-9
        )


def test_sorted_1d_agrees_with_assignment():
    rng = np.random.default_rng(3)
    for _ in range(50):
        size = int(rng.integers(1, 9))
        mu, nu = random_cloud(rng, size, 1), random_cloud(rng, size, 1)
        for p in (1.0, 2.0, 3.5):
            assert wasserstein(p, mu, nu, mode="sorted-1d") == pytest.approx(
                wasserstein(p, mu, nu, mode="exact-assignment"), abs=1e-12
            )


def test_sorted_1d_handles_unequal_weights():
    mu = DiscreteMeasure.dirac([0.0])
    nu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert wasserstein(1, mu, nu, mode="sorted-1d") == pytest.approx(0.5)
    assert wasserstein(2, mu, nu, mode="sorted-1d") == pytest.approx(np.sqrt(0.5))


def test_translation_identity():
    rng = np.random.default_rng(5)
    mu = random_cloud(rng, 6, 3)
    shift = np.array([0.3, -1.2, 2.0])
    assert wasserstein(2, mu, mu.translate(shift)) == pytest.approx(np.linalg.norm(shift), abs=1e-12)


def test_mode_preconditions():
    line = DiscreteMeasure.uniform([[0.0], [1.0]])
    plane = DiscreteMeasure.uniform([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    with pytest.raises(ModePreconditionError):
        wasserstein(2, line, DiscreteMeasure.uniform([[0.0], [1.0], [2.0]]), mode="exact-assignment")
    with pytest.raises(ModePreconditionError):
        wasserstein(2, line, DiscreteMeasure([[0.0], [1.0]], [0.3, 0.7]), mode="exact-assignment")
    with pytest.raises(ModePreconditionError):
        wasserstein(2, plane, plane, mode="sorted-1d")
    with pytest.raises(DimensionMismatchError):
        wasserstein(2, line, plane)
    with pytest.raises(ValueError):
        wasserstein(0.5, line, line)


# Paths

def make_path(rng, nodes=3, atoms=4):
    grid = uniform_grid(1.0, nodes - 1)
    return MeasurePath(grid, tuple(random_cloud(rng, atoms, 1) for _ in range(nodes)))


def test_path_distance_is_nodewise_maximum():
    rng = np.random.default_rng(8)
    a, b = make_path(rng), make_path(rng)
    expected = max(brute_force(2, mu, nu) for mu, nu in zip(a.measures, b.measures))
    assert path_distance(2, a, b) == pytest.approx(expected, abs=1e-12)
    assert path_distance(2, a, a) == 0.0


def test_path_distance_of_translated_path():
    a = make_path(np.random.default_rng(9))
    b = a.translated(np.full((len(a), 1), 0.75))
    assert path_distance(2, a, b) == pytest.approx(0.75, abs=1e-12)


def test_path_distance_needs_same_grid():
    rng = np.random.default_rng(10)
    with pytest.raises(GridMismatchError):
        path_distance(2, make_path(rng, nodes=3), make_path(rng, nodes=4))


def test_stopped_path_repeats_last_node():
    path = make_path(np.random.default_rng(12), nodes=5)
    stopped = path.stopped(2)
    assert len(stopped) == 5
    assert all(stopped[k] is path[2] for k in (2, 3, 4))
    assert stopped[1] is path[1]
    assert path.stopped(4) is path


def test_common_noise_values_accumulate():
    grid = uniform_grid(1.0, 3)
    noise = CommonNoisePath(grid, [[0.5], [-0.25], [1.0]])
    np.testing.assert_array_equal(noise.values()[:, 0], [0.0, 0.5, 0.25, 1.25])
    assert CommonNoisePath.none(grid).ell == 0


# Empirical measures and marginals

def test_empirical_single_particle():
    phi_x, phi = empirical_from_particles([0.0], [1.0])
    assert phi.same_multiset(DiscreteMeasure.dirac([0.0, 1.0]))
    assert phi_x.same_multiset(DiscreteMeasure.dirac([0.0]))


def test_empirical_keeps_duplicates():
    phi_x, phi = empirical_from_particles([0.0, 0.0], [1.0, 2.0])
    assert phi_x.size == 2
    np.testing.assert_array_equal(phi_x.weights, [0.5, 0.5])
    assert phi_x.same_multiset(DiscreteMeasure.dirac([0.0]))


def test_empirical_marginal_matches_exactly():
    rng = np.random.default_rng(13)
    phi_x, phi = empirical_from_particles(rng.normal(size=(3, 2)), rng.uniform(size=(3, 1)))
    marginal = marginal_state(phi, 2)
    np.testing.assert_array_equal(marginal.points, phi_x.points)
    np.testing.assert_array_equal(marginal.weights, np.full(3, 1.0 / 3.0))


def test_empirical_count_errors():
    with pytest.raises(DimensionMismatchError):
        empirical_from_particles([0.0, 1.0], [1.0])
    with pytest.raises(InvalidMeasureError):
        empirical_from_particles(np.zeros((0, 1)), np.zeros((0, 1)))


def test_marginal_merges_as_multiset():
    m = DiscreteMeasure.uniform([[0.0, 1.0], [1.0, 1.0], [1.0, 2.0]])
    points, weights = marginal_state(m, 1).merged()
    np.testing.assert_array_equal(points[:, 0], [0.0, 1.0])
    np.testing.assert_allclose(weights, [1.0 / 3.0, 2.0 / 3.0], atol=1e-15)
    with pytest.raises(DimensionMismatchError):
        marginal_state(m, 2)


def test_p_moment_examples():
    assert p_moment(DiscreteMeasure.dirac([0.0]), 3) == 0.0
    assert p_moment(DiscreteMeasure.uniform([[1.0], [-1.0]]), 2) == pytest.approx(1.0)
    assert p_moment(DiscreteMeasure.uniform([[1.0], [2.0], [3.0]]), 2) == pytest.approx(14.0 / 3.0)


# Marginal constraint

def test_dirac_controls_have_zero_defect():
    rng = np.random.default_rng(14)
    grid = uniform_grid(1.0, 3)
    states = rng.normal(size=(4, 5, 1))
    controls = rng.uniform(-1, 1, size=(4, 5, 1))
    pairs = [empirical_from_particles(x, u) for x, u in zip(states, controls)]
    mu = MeasurePath(grid, tuple(phi_x for phi_x, _ in pairs))
    lam = RelaxedControlPath.dirac(grid, [phi for _, phi in pairs[:-1]], 1)
    report = check_marginal_constraint(lam, mu)
    assert report.max_defect == 0.0
    assert not report.violated


def test_wrong_marginal_is_flagged():
    grid = uniform_grid(1.0, 1)
    mu = MeasurePath(grid, (DiscreteMeasure.dirac([0.0]),) * 2)
    lam = RelaxedControlPath.dirac(grid, [DiscreteMeasure.dirac([1.0, 0.5])], 1)
    report = check_marginal_constraint(lam, mu)
    assert report.max_defect == pytest.approx(1.0)
    assert report.violated


def test_mixture_with_correct_marginals():
    grid = uniform_grid(1.0, 1)
    mu = MeasurePath(grid, (DiscreteMeasure.uniform([[0.0], [1.0]]),) * 2)
    first = DiscreteMeasure.uniform([[0.0, -1.0], [1.0, 1.0]])
    second = DiscreteMeasure.uniform([[0.0, 0.5], [1.0, 0.5]])
    lam = RelaxedControlPath(grid, (((0.5, first), (0.5, second)),), 1)
    assert check_marginal_constraint(lam, mu).max_defect == 0.0


def test_mixture_weights_validated():
    grid = uniform_grid(1.0, 1)
    m = DiscreteMeasure.dirac([0.0, 0.0])
    with pytest.raises(InvalidMeasureError):
        RelaxedControlPath(grid, (((0.5, m), (0.6, m)),), 1)


def test_records_frame_layout():
    path = make_path(np.random.default_rng(15), nodes=2, atoms=3)
    frame = measure_records_frame(path, label="x")
    assert list(frame.columns) == ["node", "t", "atom", "weight", "x_0"]
    assert len(frame) == 6
