"""
Experiment Runner

Reads a JSON experiment config, runs one study, and writes a manifest, CSV
tables, a pass/fail summary and a run log to the output directory. `replay`
reruns a manifest and compares the tables byte for byte.

Exit codes: 0 when every check passes, 2 on a failed check or a replay
mismatch, 1 on any error.
"""

import os
import sys
import json
import logging
import argparse
import tempfile
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import __version__, settings
from .control import (
    Constant,
    ConstantFamily,
    FeedbackGridFamily,
    METHODS,
    POPULATION,
    gap_slope,
    optimize_policy,
    evaluation_config,
    replication_rewards,
    reward_mfc,
    reward_n_agent,
    value_gap_study,
)
from .exceptions import ConfigError, MfcLabError
from .expressions import coefficient, terminal
from .measures import check_marginal_constraint
from .particle import InitialLaw, SimConfig, simulate_mkv, simulate_n_agent
from .problem import ControlSet, ProblemSpec, lookup
from .verify import (
    MIN_REPS,
    TestFunctionDictionary,
    bundle_residuals,
    check_holder,
    check_moment_bound,
    law_distances_across_N,
    mollifier_convergence_study,
    reference_fp_inputs,
    residual_scaling_study,
    scaling_slope,
    shift_by_common_noise,
)

logger = logging.getLogger(__name__)

# Constants
STUDIES = ("chaos", "optimize", "verify", "mollify", "residual-scaling")
EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_FAIL = 2
DEFAULT_SIM = {"N": 64, "K": 20, "M": 1, "eps": 0.1}
DEFAULT_OUTPUT_ROOT = "results"
REQUIRED_BY_STUDY = {
    "chaos": ("N_list", "budget"),
    "optimize": ("budget",),
    "verify": (),
    "mollify": ("eps_list",),
    "residual-scaling": ("N_list", "reps"),
}
KNOWN_KEYS = {
    "problem", "study", "seed", "sim", "initial", "policy", "N_list", "eps_list",
    "budget", "method", "reps", "checks", "output", "two_group",
}
INITIAL_NUMBERS = ("value", "mean", "std", "spread")


def _require(raw, key, kind, where=None):
    name = f"{where}.{key}" if where else key
    if key not in raw:
        raise ConfigError(name, "missing required key")
    value = raw[key]
    if kind == "int" and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if kind == "number" and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if kind == "list" and (not isinstance(value, list) or not value):
        raise ConfigError(name, "expected a non-empty list")
    return value


def _numbers(raw, key, where=None):
    name = f"{where}.{key}" if where else key
    values = _require(raw, key, "list", where)
    if any(not _is_number(v) for v in values):
        raise ConfigError(name, "expected a list of numbers")
    return values


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_section(raw, key, numeric):
    """Type-check the numeric entries of a nested section such as `initial` or `policy`."""
    section = raw.get(key, {})
    if not isinstance(section, dict):
        raise ConfigError(key, "expected an object")
    for entry in numeric:
        if entry not in section:
            continue
        value = section[entry]
        if isinstance(value, list):
            _numbers(section, entry, key)
        elif not _is_number(value):
            raise ConfigError(f"{key}.{entry}", f"expected a number, got {value!r}")
    return section


def _check_thresholds(checks):
    if not isinstance(checks, dict):
        raise ConfigError("checks", "expected an object")
    for name, value in checks.items():
        if isinstance(value, bool) or _is_number(value):
            continue
        if isinstance(value, list) and value and all(_is_number(v) for v in value):
            continue
        raise ConfigError(f"checks.{name}", f"expected a number, a flag or a list of numbers, got {value!r}")
    return checks


@dataclass
class ExperimentConfig:
    """Validated experiment config; `resolved` is echoed in the manifest."""

    problem: object
    study: str
    seed: int
    sim: dict
    initial: dict
    policy: dict
    N_list: list = field(default_factory=list)
    eps_list: list = field(default_factory=list)
    budget: int = 0
    method: str = "cross-entropy"
    reps: int = 0
    checks: dict = field(default_factory=dict)
    two_group: list = field(default_factory=list)
    output: str = ""

    @classmethod
    def from_dict(cls, raw, default_output=""):
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        unknown = sorted(set(raw) - KNOWN_KEYS)
        if unknown:
            raise ConfigError(unknown[0], "unknown key")

        problem = _require(raw, "problem", None)
        if not isinstance(problem, (str, dict)):
            raise ConfigError("problem", "expected a problem name or an inline description")
        study = _require(raw, "study", None)
        if study not in STUDIES:
            raise ConfigError("study", f"expected one of {', '.join(STUDIES)}, got {study!r}")
        for key in REQUIRED_BY_STUDY[study]:
            _require(raw, key, "int" if key in ("budget", "reps") else "list")

        sim = dict(DEFAULT_SIM)
        sim.update(raw.get("sim", {}))
        extra = sorted(set(sim) - set(DEFAULT_SIM))
        if extra:
            raise ConfigError(f"sim.{extra[0]}", "unknown key")
        for key in ("N", "K", "M"):
            _require(sim, key, "int", "sim")
        _require(sim, "eps", "number", "sim")
        seed = raw.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError("seed", f"expected an integer, got {seed!r}")

        two_group = _numbers(raw, "two_group") if raw.get("two_group") else []
        if two_group and len(two_group) != 2:
            raise ConfigError("two_group", "expected the two constant controls of the groups")

        method = raw.get("method", "cross-entropy")
        if method not in METHODS:
            raise ConfigError("method", f"expected one of {', '.join(METHODS)}, got {method!r}")

        budget = raw.get("budget", 0)
        if study in ("chaos", "optimize") and budget < POPULATION:
            raise ConfigError("budget", f"expected at least one generation of {POPULATION} evaluations, got {budget}")
        reps = raw.get("reps", 0)
        if study == "residual-scaling" and reps < MIN_REPS:
            raise ConfigError("reps", f"expected at least {MIN_REPS} replications, got {reps}")
        N_list = [int(N) for N in _numbers(raw, "N_list")] if raw.get("N_list") else []
        if any(N < 1 for N in N_list) or any(b <= a for a, b in zip(N_list, N_list[1:])):
            raise ConfigError("N_list", f"expected strictly increasing positive particle counts, got {N_list}")
        eps_list = _numbers(raw, "eps_list") if raw.get("eps_list") else []
        if any(eps <= 0 for eps in eps_list):
            raise ConfigError("eps_list", f"expected positive bandwidths, got {eps_list}")

        initial = _check_section(raw, "initial", INITIAL_NUMBERS)
        policy = _check_section(raw, "policy", ("params", "centres"))
        if "time_bins" in policy:
            _require(policy, "time_bins", "int", "policy")

        return cls(
            problem=problem,
            study=study,
            seed=seed,
            sim=sim,
            initial=initial or {"kind": "constant", "value": 0.0},
            policy=policy or {"family": "constant"},
            N_list=N_list,
            eps_list=eps_list,
            budget=budget,
            method=method,
            reps=reps,
            checks=_check_thresholds(raw.get("checks", {})),
            two_group=two_group,
            output=raw.get("output", default_output),
        )


    def resolved(self):
        return {
            "problem": self.problem,
            "study": self.study,
            "seed": self.seed,
            "sim": self.sim,
            "initial": self.initial,
            "policy": self.policy,
            "N_list": self.N_list,
            "eps_list": self.eps_list,
            "budget": self.budget,
            "method": self.method,
            "reps": self.reps,
            "checks": self.checks,
            "two_group": self.two_group,
            "output": self.output,
        }

    def sim_config(self):
        try:
            return SimConfig(N=self.sim["N"], K=self.sim["K"], M=self.sim["M"], seed=self.seed, eps=self.sim["eps"])
        except ValueError as e:
            raise ConfigError("sim", str(e)) from e


def _control_set(raw):
    if "box" in raw:
        lower, upper = raw["box"]
        return ControlSet.box(lower, upper)
    if "finite" in raw:
        return ControlSet.finite(raw["finite"])
    raise ConfigError("problem.control_set", "expected a 'box' or a 'finite' entry")


def build_problem(raw):
    """Catalog problem by name, or a scalar problem from inline expressions."""
    if isinstance(raw, str):
        return lookup(raw)
    for key in ("drift", "vol", "running", "terminal"):
        _require(raw, key, None, "problem")
    sigma0 = float(raw.get("sigma0", 0.0))
    try:
        return ProblemSpec(
            name=raw.get("name", "INLINE"),
            n=1,
            horizon=float(raw.get("horizon", 1.0)),
            control_set=_control_set(raw.get("control_set", {"box": [[-1.0], [1.0]]})),
            drift=coefficient(raw["drift"], "problem.drift", "vector"),
            vol=coefficient(raw["vol"], "problem.vol", "matrix"),
            running=coefficient(raw["running"], "problem.running", "scalar"),
            terminal=terminal(raw["terminal"], "problem.terminal"),
            sigma0=np.array([[sigma0]]) if sigma0 else None,
            theta=float(raw.get("theta", 1.0)),
            p=float(raw.get("p", 2.0)),
            p_prime=float(raw.get("p_prime", 4.0)),
            description="inline: " + ", ".join(f"{k}={raw[k]}" for k in ("drift", "vol", "running", "terminal")),
        )
    except ValueError as e:
        raise ConfigError("problem", str(e)) from e


def build_initial(raw):
    kind = raw.get("kind", "constant")
    if kind == "constant":
        return InitialLaw.constant(raw.get("value", 0.0))
    if kind == "gaussian":
        return InitialLaw.gaussian(raw.get("mean", 0.0), raw.get("std", 1.0))
    if kind == "heterogeneous":
        return InitialLaw.heterogeneous(raw.get("spread", 1.0), raw.get("std", 0.0))
    raise ConfigError("initial.kind", f"unknown initial law {kind!r}")


def build_family(raw, spec):
    family = raw.get("family", "constant")
    if family == "constant":
        return ConstantFamily(spec.control_set)
    if family == "feedback":
        centres = tuple(float(c) for c in _require(raw, "centres", "list", "policy"))
        return FeedbackGridFamily(spec.control_set, spec.horizon, int(_require(raw, "time_bins", "int", "policy")), centres)
    raise ConfigError("policy.family", f"unknown policy family {family!r}")


def build_policy(raw, spec):
    family = build_family(raw, spec)
    params = np.asarray(_require(raw, "params", "list", "policy"), dtype=float)
    if params.shape[0] != family.dim:
        raise ConfigError("policy.params", f"expected {family.dim} parameters, got {params.shape[0]}")
    return family.decode(params)


def write_table(frame, path):
    frame.to_csv(path, index=False, lineterminator="\n")


# Studies return {table name: DataFrame}

def study_chaos(config, spec, cfg, initial):
    frame = value_gap_study(
        spec, build_family(config.policy, spec), config.N_list, cfg, config.budget,
        initial=initial, method=config.method
    )
    reference = frame.attrs["reference"]
    reference_frame = pd.DataFrame([reference], columns=["N", "value", "se"])
    tables = {"chaos": frame, "chaos_reference": reference_frame}
    if len(config.N_list) >= 2:
        tables["wasserstein_across_N"] = law_distances_across_N(
            spec, frame.attrs["reference_policy"], config.N_list, cfg, initial=initial
        )
    return tables



def study_optimize(config, spec, cfg, initial):
    result = optimize_policy(spec, build_family(config.policy, spec), config.budget, cfg,
                             method=config.method, initial=initial)
    value, se = reward_mfc(spec, result.best, evaluation_config(cfg), initial=initial)
    best = {"value": value, "se": se}
    best.update({f"param_{j}": float(v) for j, v in enumerate(result.params)})
    tables = {"optimize": pd.DataFrame([best]), "optimize_history": result.history}

    if config.two_group:
        first, second = config.two_group
        half = cfg.N // 2
        policies = [Constant([first])] * half + [Constant([second])] * (cfg.N - half)
        bundle = simulate_n_agent(spec, policies, cfg, initial=initial)
        per_rep = replication_rewards(spec, bundle)
        error = float(np.std(per_rep, ddof=1) / np.sqrt(len(per_rep))) if len(per_rep) > 1 else 0.0
        tables["two_group"] = pd.DataFrame([{"value": reward_n_agent(spec, bundle), "se": error}])
    return tables


def study_verify(config, spec, cfg, initial):
    policy = build_policy(config.policy, spec)
    bundle = simulate_mkv(spec, policy, cfg, initial=initial)
    dictionary = TestFunctionDictionary.default(spec.n)

    frames = []
    for path, table in zip(bundle, bundle_residuals(spec, bundle, dictionary)):
        frame = table.frame()
        frame.insert(0, "replication", path.replication)
        frames.append(frame)
    residuals = pd.concat(frames, ignore_index=True)

    defect = max(check_marginal_constraint(path.control_path, path.state_path, spec.p).max_defect for path in bundle)
    nu_moment = initial.moment(spec.p_prime, spec.n, cfg.N)
    moment = check_moment_bound(bundle, spec.p_prime, nu_moment)
    first = bundle[0]
    theta, _ = shift_by_common_noise(first.state_path, first.control_path, first.noise, spec.sigma0)
    holder = check_holder(theta, spec.p)

    estimates = pd.DataFrame({
        "quantity": ["max_residual", "marginal_defect", "moment_observed", "moment_ratio", "holder_constant"],
        "value": [float(residuals["residual"].abs().max()), defect, moment.observed, moment.ratio, holder.constant],
    })
    return {"residuals": residuals, "estimates": estimates}


def study_mollify(config, spec, cfg, initial):
    policy = build_policy(config.policy, spec)
    q, pi_ref, B, reference = reference_fp_inputs(spec, policy, cfg, initial=initial)
    frame = mollifier_convergence_study(spec, config.eps_list, q, pi_ref, B, cfg, reference, initial=initial)
    return {"mollify": frame}


def study_residual_scaling(config, spec, cfg, initial):
    policy = build_policy(config.policy, spec)
    frame = residual_scaling_study(
        spec, policy, config.N_list, config.reps, TestFunctionDictionary.default(spec.n), cfg, initial=initial
    )
    return {"residual_scaling": frame}


STUDY_RUNNERS = {
    "chaos": study_chaos,
    "optimize": study_optimize,
    "verify": study_verify,
    "mollify": study_mollify,
    "residual-scaling": study_residual_scaling,
}


# Checks are pure functions of (config, tables)

def _check(name, passed, observed, bound):
    return {"name": name, "passed": bool(passed), "observed": observed, "bound": bound}


def _checks_chaos(checks, tables):
    frame = tables["chaos"]
    results = []
    if "target" in checks:
        k = checks.get("k_se", 3.0)
        deviation = (frame["value"] - checks["target"]).abs()
        worst = float((deviation / frame["se"].where(frame["se"] > 0, np.inf)).max())
        results.append(_check("values_within_k_se_of_target", (deviation <= k * frame["se"]).all(), worst, k))
    if checks.get("trend"):
        first, last = frame.iloc[0], frame.iloc[-1]
        results.append(_check("gap_decreases", first["gap"] > last["gap"] - 2 * last["gap_se"],
                              [float(first["gap"]), float(last["gap"])], float(2 * last["gap_se"])))
    if "max_slope" in checks:
        slope = gap_slope(frame)
        results.append(_check("gap_slope", slope <= checks["max_slope"], slope, checks["max_slope"]))
    if checks.get("law_trend") and "wasserstein_across_N" in tables:
        distances = tables["wasserstein_across_N"]
        terminal = distances[distances["node"] == distances["node"].max()]
        values, errors = terminal["state_distance"].to_numpy(), terminal["state_se"].to_numpy()
        k = checks.get("law_k_se", 2.0)
        increases = values[1:] - values[:-1] - k * np.hypot(errors[1:], errors[:-1])
        worst = float(increases.max()) if len(increases) else 0.0
        results.append(_check("law_distance_decreases", np.isfinite(values).all() and worst <= 0, worst, 0.0))
    return results



def _checks_optimize(checks, tables):
    best = tables["optimize"].iloc[0]
    results = []
    if "expected_params" in checks:
        params = np.array([best[f"param_{j}"] for j in range(len(checks["expected_params"]))])
        error = float(np.max(np.abs(params - np.asarray(checks["expected_params"]))))
        tol = checks.get("params_tol", 0.05)
        results.append(_check("optimizer_params", error <= tol, error, tol))
    if "expected_value" in checks:
        error = abs(float(best["value"]) - checks["expected_value"])
        tol = checks.get("value_tol", 0.05)
        results.append(_check("optimizer_value", error <= tol, error, tol))
    if "two_group_value" in checks and "two_group" in tables:
        error = abs(float(tables["two_group"].iloc[0]["value"]) - checks["two_group_value"])
        tol = checks.get("two_group_tol", 0.05)
        results.append(_check("two_group_value", error <= tol, error, tol))
    return results


def _checks_verify(checks, tables):
    estimates = dict(zip(tables["estimates"]["quantity"], tables["estimates"]["value"]))
    results = []
    if "max_residual" in checks:
        observed = float(tables["residuals"]["residual"].abs().max())
        results.append(_check("max_residual", observed <= checks["max_residual"], observed, checks["max_residual"]))
    if "max_marginal_defect" in checks:
        observed = float(estimates["marginal_defect"])
        results.append(_check("marginal_defect", observed <= checks["max_marginal_defect"], observed,
                              checks["max_marginal_defect"]))
    if "moment_band" in checks:
        low, high = checks["moment_band"]
        observed = float(estimates["moment_ratio"])
        results.append(_check("moment_ratio", low <= observed <= high, observed, [low, high]))
    if "moment_ceiling" in checks:
        observed = float(estimates["moment_ratio"])
        results.append(_check("moment_ceiling", observed <= checks["moment_ceiling"], observed, checks["moment_ceiling"]))
    if "holder_band" in checks:
        low, high = checks["holder_band"]
        observed = float(estimates["holder_constant"])
        results.append(_check("holder_constant", low <= observed <= high, observed, [low, high]))
    return results


def _checks_mollify(checks, tables):
    frame = tables["mollify"].sort_values("eps", ascending=False).reset_index(drop=True)
    results = []
    k = checks.get("monotone_k_se", 2.0)
    distances, errors = frame["distance"].to_numpy(), frame["se"].to_numpy()
    increases = distances[1:] - distances[:-1] - k * np.hypot(errors[1:], errors[:-1])
    worst = float(increases.max()) if len(increases) else 0.0
    results.append(_check("non_increasing_in_eps", worst <= 0, worst, 0.0))
    if checks.get("halving"):
        ratio = float(distances[-1] / distances[0]) if distances[0] > 0 else float("nan")
        results.append(_check("smallest_eps_halves_distance", ratio <= 0.5, ratio, 0.5))
    return results


def _checks_residual_scaling(checks, tables):
    frame = tables["residual_scaling"]
    results = []
    if "ratio_band" in checks:
        low, high = checks["ratio_band"]
        moments = frame["mean_sq_residual"].to_numpy()
        ratios = (moments[:-1] / moments[1:]).tolist()
        results.append(_check("doubling_ratio", all(low <= r <= high for r in ratios), ratios, [low, high]))
    if "slope_band" in checks:
        low, high = checks["slope_band"]
        slope = scaling_slope(frame)
        results.append(_check("log_log_slope", low <= slope <= high, slope, [low, high]))
    if "max_moment" in checks:
        observed = float(frame["mean_sq_residual"].max())
        results.append(_check("max_second_moment", observed <= checks["max_moment"], observed, checks["max_moment"]))
    return results


CHECKERS = {
    "chaos": _checks_chaos,
    "optimize": _checks_optimize,
    "verify": _checks_verify,
    "mollify": _checks_mollify,
    "residual-scaling": _checks_residual_scaling,
}


def evaluate_checks(config, tables):
    """Summary of the acceptance checks of a study, computed from its tables alone."""
    checks = CHECKERS[config.study](config.checks, tables)
    return {"study": config.study, "passed": all(c["passed"] for c in checks), "checks": checks}


def read_tables(directory, names):
    return {name: pd.read_csv(os.path.join(directory, f"{name}.csv")) for name in names}


def execute(config, output_dir):
    """
    Run the study of a config and write tables, manifest and summary.

    Returns:
        The summary dictionary
    """
    spec = build_problem(config.problem)
    cfg = config.sim_config()
    initial = build_initial(config.initial)
    os.makedirs(output_dir, exist_ok=True)
    logger.info(f"Running {config.study} study on {spec.name} (seed {config.seed}) into {output_dir}")

    tables = STUDY_RUNNERS[config.study](config, spec, cfg, initial)
    for name, frame in tables.items():
        write_table(frame, os.path.join(output_dir, f"{name}.csv"))

    manifest = {
        "tool": "mfclab",
        "version": __version__,
        "seed": config.seed,
        "problem": spec.name,
        "config": config.resolved(),
        "tables": sorted(tables),
    }
    with open(os.path.join(output_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)

    # reread so the summary sees exactly what was written
    summary = evaluate_checks(config, read_tables(output_dir, tables))
    with open(os.path.join(output_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    for check in summary["checks"]:
        level = logging.INFO if check["passed"] else logging.WARNING
        logger.log(level, f"Check {check['name']}: {'pass' if check['passed'] else 'FAIL'} "
                          f"(observed {check['observed']}, bound {check['bound']})")
    return summary


def load_config(config_path, output=None):
    with open(config_path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("<root>", f"invalid JSON: {e}") from e
    stem = os.path.splitext(os.path.basename(config_path))[0]
    config = ExperimentConfig.from_dict(raw, default_output=os.path.join(DEFAULT_OUTPUT_ROOT, stem))
    if output:
        config.output = output
    return config


def run(config_path, output=None):
    """
    Run an experiment config.

    Args:
        config_path: Path of the JSON config
        output: Output directory overriding the config's

    Returns:
        Exit code
    """
    settings.configure_logging()
    try:
        config = load_config(config_path, output)
        settings.configure_logging(os.path.join(config.output, "run.log"))
        summary = execute(config, config.output)
    except MfcLabError as e:
        logger.error(f"Run of {config_path} failed: {e}", exc_info=True)
        return EXIT_ERROR
    except (ValueError, TypeError) as e:
        logger.error(f"Run of {config_path} rejected its inputs: {e}", exc_info=True)
        return EXIT_ERROR
    except OSError as e:
        logger.error(f"Cannot run {config_path}: {e}")
        return EXIT_ERROR

    logger.info(f"Study {'passed' if summary['passed'] else 'FAILED'}; outputs in {config.output}")
    return EXIT_PASS if summary["passed"] else EXIT_FAIL


def first_difference(expected_path, actual_path):
    """(row, expected line, actual line) of the first differing row, or None."""
    with open(expected_path, newline="") as f:
        expected = f.read().split("\n")
    with open(actual_path, newline="") as f:
        actual = f.read().split("\n")
    for row in range(max(len(expected), len(actual))):
        left = expected[row] if row < len(expected) else "<missing>"
        right = actual[row] if row < len(actual) else "<missing>"
        if left != right:
            return row, left, right
    return None


def replay(manifest_path):
    """
    Rerun a manifest and compare its tables byte for byte.

    Returns:
        Exit code: 0 when every table is identical, 2 on a mismatch, 1 on error
    """
    settings.configure_logging()
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
        config = ExperimentConfig.from_dict(manifest["config"])
        original = os.path.dirname(os.path.abspath(manifest_path))
        with tempfile.TemporaryDirectory(prefix="mfclab-replay-") as scratch:
            execute(config, scratch)
            for name in manifest["tables"]:
                difference = first_difference(
                    os.path.join(original, f"{name}.csv"), os.path.join(scratch, f"{name}.csv")
                )
                if difference is not None:
                    row, expected, actual = difference
                    logger.error(f"Replay mismatch in {name}.csv at row {row}: expected {expected!r}, got {actual!r}")
                    return EXIT_FAIL
    except (MfcLabError, KeyError, ValueError, TypeError) as e:
        logger.error(f"Replay of {manifest_path} failed: {e}", exc_info=True)
        return EXIT_ERROR
    except OSError as e:
        logger.error(f"Cannot replay {manifest_path}: {e}")
        return EXIT_ERROR

    logger.info(f"Replay of {manifest_path}: all {len(manifest['tables'])} tables identical")
    return EXIT_PASS


def main(argv=None):
    """Command-line entry point."""
    parser = argparse.ArgumentParser(prog="mfclab", description="Extended mean-field control simulation lab")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Run an experiment config")
    run_parser.add_argument("config", help="Path of the JSON experiment config")
    run_parser.add_argument("--output", help="Output directory (overrides the config)")

    replay_parser = subparsers.add_parser("replay", help="Rerun a manifest and compare its tables")
    replay_parser.add_argument("manifest", help="Path of a manifest.json")

    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.output)
    return replay(args.manifest)


if __name__ == "__main__":
    sys.exit(main())
