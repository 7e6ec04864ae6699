"""
Unit tests for the cli module.
"""

import json
import os

import numpy as np
import pandas as pd
import pytest

from mfclab.cli import (
    EXIT_ERROR,
    EXIT_FAIL,
    EXIT_PASS,
    ExperimentConfig,
    build_initial,
    build_policy,
    build_problem,
    evaluate_checks,
    first_difference,
    load_config,
    main,
    replay,
    run,
)
from mfclab.exceptions import ConfigError
from mfclab.measures import DiscreteMeasure, MeasurePath, uniform_grid
from mfclab.particle import InitialLaw

FROZEN_VERIFY = {
    "problem": "FROZEN",
    "study": "verify",
    "seed": 8,
    "sim": {"N": 8, "K": 4, "M": 2},
    "initial": {"kind": "constant", "value": 0.5},
    "policy": {"family": "constant", "params": [0.0]},
    "checks": {"max_residual": 1e-12, "max_marginal_defect": 1e-12, "moment_ceiling": 1.0},
}


def write_config(directory, raw, name="experiment.json"):
    path = os.path.join(directory, name)
    with open(path, "w") as f:
        json.dump(raw, f)
    return path


# Config validation

def test_missing_problem_is_named():
    raw = dict(FROZEN_VERIFY)
    del raw["problem"]
    with pytest.raises(ConfigError) as raised:
        ExperimentConfig.from_dict(raw)
    assert raised.value.key == "problem"


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as raised:
        ExperimentConfig.from_dict(dict(FROZEN_VERIFY, colour="blue"))
    assert raised.value.key == "colour"


def test_unknown_sim_key_is_named():
    with pytest.raises(ConfigError) as raised:
        ExperimentConfig.from_dict(dict(FROZEN_VERIFY, sim={"N": 8, "steps": 4}))
    assert raised.value.key == "sim.steps"


def test_bad_study_rejected():
    with pytest.raises(ConfigError) as raised:
        ExperimentConfig.from_dict(dict(FROZEN_VERIFY, study="calibrate"))
    assert raised.value.key == "study"


def test_study_specific_keys_required():
    with pytest.raises(ConfigError) as raised:
        ExperimentConfig.from_dict(dict(FROZEN_VERIFY, study="chaos", N_list=[4, 8]))
    assert raised.value.key == "budget"


@pytest.mark.parametrize("sim, key", [({"N": 2.5}, "sim.N"), ({"eps": "wide"}, "sim.eps")])
def test_sim_types_checked(sim, key):
    with pytest.raises(ConfigError) as raised:
        ExperimentConfig.from_dict(dict(FROZEN_VERIFY, sim=sim))
    assert raised.value.key == key


def test_invalid_sim_sizes_become_config_errors():
    config = ExperimentConfig.from_dict(dict(FROZEN_VERIFY, sim={"N": 0}))
    with pytest.raises(ConfigError):
        config.sim_config()


def test_two_group_needs_two_controls():
    raw = {"problem": "CONTROL_CONSENSUS", "study": "optimize", "budget": 64, "two_group": [1.0]}
    with pytest.raises(ConfigError) as raised:
        ExperimentConfig.from_dict(raw)
    assert raised.value.key == "two_group"


@pytest.mark.parametrize("update, key", [
    ({"study": "optimize", "budget": 10}, "budget"),
    ({"study": "chaos", "N_list": [8, 16], "budget": 31}, "budget"),
    ({"study": "residual-scaling", "N_list": [8, 16], "reps": 5}, "reps"),
    ({"study": "residual-scaling", "N_list": [16, 8], "reps": 30}, "N_list"),
    ({"study": "residual-scaling", "N_list": [8, 8], "reps": 30}, "N_list"),
    ({"study": "mollify", "eps_list": [0.4, 0.0]}, "eps_list"),
    ({"initial": {"kind": "constant", "value": "abc"}}, "initial.value"),
    ({"initial": {"kind": "gaussian", "mean": [0.0, "x"]}}, "initial.mean"),
    ({"policy": {"family": "constant", "params": ["fast"]}}, "policy.params"),
    ({"policy": {"family": "feedback", "time_bins": 1.5, "centres": [0.0], "params": [0.0]}}, "policy.time_bins"),
    ({"checks": {"max_residual": "tiny"}}, "checks.max_residual"),
    ({"checks": {"moment_band": [0.5, None]}}, "checks.moment_band"),
])
def test_bad_values_are_named(update, key):
    with pytest.raises(ConfigError) as raised:
        ExperimentConfig.from_dict(dict(FROZEN_VERIFY, **update))
    assert raised.value.key == key



def test_defaults_are_resolved():
    config = ExperimentConfig.from_dict({"problem": "HEAT", "study": "verify"}, default_output="out")
    resolved = config.resolved()
    assert resolved["sim"] == {"N": 64, "K": 20, "M": 1, "eps": 0.1}
    assert resolved["method"] == "cross-entropy"
    assert resolved["output"] == "out"


def test_load_config_defaults_output_to_stem(tmp_path):
    path = write_config(str(tmp_path), FROZEN_VERIFY, name="frozen_small.json")
    assert load_config(path).output == os.path.join("results", "frozen_small")
    assert load_config(path, output="elsewhere").output == "elsewhere"


def test_invalid_json_is_a_config_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"problem\": ")
    with pytest.raises(ConfigError):
        load_config(str(path))


# Builders

def test_inline_problem():
    spec = build_problem({
        "name": "EFFORT", "drift": "u", "vol": "1", "running": "-u**2", "terminal": "0", "sigma0": 0.5,
    })
    assert spec.name == "EFFORT"
    assert spec.ell == 1
    grid = uniform_grid(1.0, 1)
    pi = MeasurePath(grid, (DiscreteMeasure.dirac([0.0]),) * 2)
    m = DiscreteMeasure.uniform([[0.0, 0.5], [1.0, -0.5]])
    x = np.array([[0.0], [1.0]])
    u = np.array([[0.5], [-0.5]])
    np.testing.assert_array_equal(spec.b(0.0, x, pi, m, u), u)
    np.testing.assert_array_equal(spec.running_reward(0.0, x, pi, m, u), [-0.25, -0.25])


def test_inline_problem_with_unknown_name():
    with pytest.raises(ConfigError) as raised:
        build_problem({"drift": "v", "vol": "1", "running": "0", "terminal": "0"})
    assert raised.value.key == "problem.drift"


def test_inline_problem_needs_every_coefficient():
    with pytest.raises(ConfigError) as raised:
        build_problem({"drift": "u", "vol": "1", "running": "0"})
    assert raised.value.key == "problem.terminal"


def test_initial_laws():
    assert build_initial({"kind": "constant", "value": 0.5}).moment(2.0, 1) == 0.25
    assert build_initial({"kind": "heterogeneous", "spread": 1.0}).kind == "heterogeneous"
    assert isinstance(build_initial({"kind": "gaussian"}), InitialLaw)
    with pytest.raises(ConfigError):
        build_initial({"kind": "cauchy"})


def test_policy_parameter_count_checked():
    spec = build_problem("CLIPPED_MEANREV")
    raw = {"family": "feedback", "time_bins": 1, "centres": [-1.0, 1.0], "params": [0.1]}
    with pytest.raises(ConfigError) as raised:
        build_policy(raw, spec)
    assert raised.value.key == "policy.params"
    policy = build_policy(dict(raw, params=[0.1, -0.1]), spec)
    np.testing.assert_array_equal(policy.act(0.0, np.array([[-2.0], [2.0]]), None)[:, 0], [0.1, -0.1])


# Checks

def test_mollify_checks_from_tables():
    config = ExperimentConfig.from_dict({
        "problem": "HEAT", "study": "mollify", "eps_list": [0.4, 0.2], "checks": {"halving": True},
    })
    tables = {"mollify": pd.DataFrame({"eps": [0.4, 0.2, 0.1], "distance": [0.4, 0.3, 0.1], "se": [0.01] * 3})}
    summary = evaluate_checks(config, tables)
    assert summary["passed"]
    assert [c["name"] for c in summary["checks"]] == ["non_increasing_in_eps", "smallest_eps_halves_distance"]

    tables["mollify"]["distance"] = [0.1, 0.3, 0.2]
    summary = evaluate_checks(config, tables)
    assert not summary["passed"]


def test_residual_scaling_checks_from_tables():
    config = ExperimentConfig.from_dict({
        "problem": "LINEAR_DRIFT", "study": "residual-scaling", "N_list": [32, 128], "reps": 30,
        "checks": {"ratio_band": [2.5, 6.0], "slope_band": [-1.4, -0.6]},
    })
    N = np.array([32, 128, 512])
    tables = {"residual_scaling": pd.DataFrame({"N": N, "mean_sq_residual": 1.0 / N})}
    summary = evaluate_checks(config, tables)
    assert summary["passed"]
    assert summary["checks"][0]["observed"] == [4.0, 4.0]
    assert summary["checks"][1]["observed"] == pytest.approx(-1.0)


def test_chaos_target_check():
    config = ExperimentConfig.from_dict({
        "problem": "LINEAR_DRIFT", "study": "chaos", "N_list": [4], "budget": 64,
        "checks": {"target": 1.0, "k_se": 3.0},
    })
    frame = pd.DataFrame({"N": [4, 8], "value": [1.02, 0.9], "se": [0.01, 0.01], "gap": [0.1, 0.1], "gap_se": [0.0, 0.0]})
    assert not evaluate_checks(config, {"chaos": frame})["passed"]
    frame["value"] = [1.02, 0.99]
    assert evaluate_checks(config, {"chaos": frame})["passed"]


def test_chaos_law_trend_check():
    config = ExperimentConfig.from_dict({
        "problem": "LINEAR_DRIFT", "study": "chaos", "N_list": [4, 16, 64], "budget": 64,
        "checks": {"law_trend": True},
    })
    chaos = pd.DataFrame({"N": [4, 16, 64], "value": [1.0] * 3, "se": [0.01] * 3, "gap": [0.1] * 3, "gap_se": [0.0] * 3})
    distances = pd.DataFrame({
        "N": [4, 4, 16, 16], "N_next": [16, 16, 64, 64], "node": [0, 1, 0, 1],
        "state_distance": [0.0, 0.4, 0.0, 0.2], "state_se": [0.0, 0.01, 0.0, 0.01],
    })
    summary = evaluate_checks(config, {"chaos": chaos, "wasserstein_across_N": distances})
    assert summary["passed"]
    assert summary["checks"][0]["name"] == "law_distance_decreases"

    distances["state_distance"] = [0.0, 0.2, 0.0, 0.4]
    assert not evaluate_checks(config, {"chaos": chaos, "wasserstein_across_N": distances})["passed"]



def test_first_difference(tmp_path):
    left, right = tmp_path / "a.csv", tmp_path / "b.csv"
    left.write_text("x,y\n1,2\n3,4\n")
    right.write_text("x,y\n1,2\n3,5\n")
    assert first_difference(str(left), str(left)) is None
    assert first_difference(str(left), str(right)) == (2, "3,4", "3,5")


# Runs

def test_frozen_verify_run_and_replay(tmp_path):
    output = str(tmp_path / "frozen")
    config_path = write_config(str(tmp_path), FROZEN_VERIFY)
    assert run(config_path, output) == EXIT_PASS

    for name in ("manifest.json", "summary.json", "run.log", "residuals.csv", "estimates.csv"):
        assert os.path.exists(os.path.join(output, name)), name
    with open(os.path.join(output, "manifest.json")) as f:
        manifest = json.load(f)
    assert manifest["seed"] == 8
    assert manifest["tables"] == ["estimates", "residuals"]
    residuals = pd.read_csv(os.path.join(output, "residuals.csv"))
    assert list(residuals.columns) == ["replication", "f_id", "t", "residual"]
    assert (residuals["residual"] == 0.0).all()

    manifest_path = os.path.join(output, "manifest.json")
    assert replay(manifest_path) == EXIT_PASS

    estimates = os.path.join(output, "estimates.csv")
    with open(estimates) as f:
        text = f.read()
    with open(estimates, "w") as f:
        f.write(text.replace("marginal_defect", "marginal_defecT", 1))
    assert replay(manifest_path) == EXIT_FAIL


def test_failed_check_exits_two(tmp_path):
    raw = dict(FROZEN_VERIFY, checks={"max_residual": -1.0})
    assert run(write_config(str(tmp_path), raw), str(tmp_path / "out")) == EXIT_FAIL
    with open(tmp_path / "out" / "summary.json") as f:
        summary = json.load(f)
    assert not summary["passed"]
    assert summary["checks"][0]["name"] == "max_residual"


def test_config_error_exits_one(tmp_path):
    raw = dict(FROZEN_VERIFY)
    del raw["problem"]
    assert run(write_config(str(tmp_path), raw), str(tmp_path / "out")) == EXIT_ERROR


def test_unknown_problem_exits_one(tmp_path):
    raw = dict(FROZEN_VERIFY, problem="NO_SUCH_PROBLEM")
    assert run(write_config(str(tmp_path), raw), str(tmp_path / "out")) == EXIT_ERROR


@pytest.mark.parametrize("update", [
    {"study": "optimize", "budget": 10},
    {"initial": {"kind": "constant", "value": "abc"}},
    {"study": "residual-scaling", "N_list": [8, 16], "reps": 5},
    {"study": "residual-scaling", "N_list": [16, 8], "reps": 30},
])
def test_bad_values_exit_one(tmp_path, update):
    raw = dict(FROZEN_VERIFY, **update)
    assert run(write_config(str(tmp_path), raw), str(tmp_path / "out")) == EXIT_ERROR


def test_library_rejections_exit_one(tmp_path):
    raw = dict(FROZEN_VERIFY, initial={"kind": "gaussian", "mean": [0.0, 1.0], "std": 1.0})
    assert run(write_config(str(tmp_path), raw), str(tmp_path / "out")) == EXIT_ERROR



def test_missing_files_exit_one(tmp_path):
    assert run(str(tmp_path / "absent.json")) == EXIT_ERROR
    assert replay(str(tmp_path / "absent" / "manifest.json")) == EXIT_ERROR


def test_two_group_optimize_run(tmp_path, workers):
    workers(2)
    raw = {
        "problem": "CONTROL_CONSENSUS",
        "study": "optimize",
        "seed": 2,
        "sim": {"N": 8, "K": 2, "M": 2},
        "budget": 64,
        "two_group": [1.0, -1.0],
        "checks": {"two_group_value": -1.0, "two_group_tol": 0.05},
    }
    output = str(tmp_path / "consensus")
    assert main(["run", write_config(str(tmp_path), raw), "--output", output]) == EXIT_PASS
    two_group = pd.read_csv(os.path.join(output, "two_group.csv"))
    assert two_group["value"].iloc[0] == pytest.approx(-1.0)
    history = pd.read_csv(os.path.join(output, "optimize_history.csv"))
    assert list(history.columns[:3]) == ["generation", "best", "mean"]
    assert main(["replay", os.path.join(output, "manifest.json")]) == EXIT_PASS


def test_chaos_run_writes_law_distances(tmp_path):
    raw = {
        "problem": "LINEAR_DRIFT",
        "study": "chaos",
        "seed": 6,
        "sim": {"K": 2, "M": 2},
        "N_list": [4, 8],
        "budget": 32,
        "checks": {"law_trend": True},
    }
    output = str(tmp_path / "chaos")
    assert run(write_config(str(tmp_path), raw), output) == EXIT_PASS
    distances = pd.read_csv(os.path.join(output, "wasserstein_across_N.csv"))
    assert list(distances["node"]) == [0, 1, 2]
    assert np.isfinite(distances["state_distance"]).all()
    assert distances["joint_distance"].isna().tolist() == [False, False, True]
    with open(os.path.join(output, "manifest.json")) as f:
        assert "wasserstein_across_N" in json.load(f)["tables"]
    assert replay(os.path.join(output, "manifest.json")) == EXIT_PASS



def test_main_requires_a_command():
    with pytest.raises(SystemExit):
        main([])
