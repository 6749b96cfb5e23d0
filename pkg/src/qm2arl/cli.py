"""Train and probe quantum multi-agent Q-networks with pole memories.

Every subcommand writes its artifacts (CSV files, a pole memory file
and manifest.json) into the output directory and exits with 0 on
success, 1 on invalid input and 2 when a run or a check fails.
"""
import argparse
import logging
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from qm2arl import __version__, analysis
from qm2arl.artifacts import RunArtifacts
from qm2arl.config import RunConfig, add_config_arguments, resolve_config
from qm2arl.envs import Env, TwoStepEnv, make_env
from qm2arl.errors import (
    ArgumentError,
    ConfigError,
    MemoryLookupError,
    MemoryParseError,
    Qm2arlError,
)
from qm2arl.memory import META_LABEL, PoleMemoryStore, new_store, pole_memory_save
from qm2arl.train import (
    ContinualResult,
    epochs_to_threshold,
    fast_remember,
    no_pretrain_angles,
    train_ctde,
    train_meta,
    train_pole,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
CONTINUAL_SCHEDULE = ("twostep-a", "twostep-b", "twostep-a")
VERIFY_ALPHAS_DEGREES = (30.0, 45.0, 60.0, 90.0)
VARIANCE_ALPHA_DEGREES = 60.0
MODEL_FILE = "model.mem"
BASELINE_METHODS = ("ctde", "no-pretrain")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2


class ValidationError(Exception):
    """Input that makes a command impossible to start"""

    def __init__(self, message: str):
        self.message = message
        super().__init__(message)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse arguments"""
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument(
        "-v", "--verbose", action="store_true", default=False, help="log debug messages"
    )
    verbosity.add_argument(
        "-q", "--quiet", action="store_true", default=False, help="log warnings only"
    )
    add_config_arguments(common)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument(
        "--model-in",
        required=True,
        metavar="PATH",
        help="pole memory file written by train-meta",
    )

    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser(
        "train-meta",
        parents=[common],
        help="train meta angles with noisy poles",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers.add_parser(
        "train-pole",
        parents=[common, model],
        help="train every agent's poles on frozen meta angles",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers.add_parser(
        "continual",
        parents=[common],
        help="Env A -> Env B -> Env A, with and without pole memory",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers.add_parser(
        "probe",
        parents=[common, model],
        help="scan max Q over a grid of two pole angles",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers.add_parser(
        "verify",
        parents=[common],
        help="Monte Carlo checks of the noise contraction and variance bound",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    baseline = subparsers.add_parser(
        "baseline",
        parents=[common],
        help="train a comparison method without the meta stage",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    baseline.add_argument(
        "--method",
        choices=BASELINE_METHODS,
        default="ctde",
        help="ctde trains every agent's angles on the VDN loss; no-pretrain trains poles "
        "on untrained angles",
    )
    gradcheck = subparsers.add_parser(
        "gradcheck",
        parents=[common],
        help="compare analytic gradients with finite differences",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    gradcheck.add_argument(
        "--sabotage",
        action="store_true",
        default=False,
        help="flip the sign of the angle shift rule; the check must then fail",
    )
    return parser.parse_args(argv)


def configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _env_for(config: RunConfig) -> Env:
    return make_env(config.env, config.qnn_config().num_qubits, config.singlehop_params())


def _read_model(path: str, config: RunConfig) -> PoleMemoryStore:
    try:
        store = PoleMemoryStore.read(path)
    except OSError as err:
        raise ValidationError(f"cannot read model file {path}: {err.strerror}")
    except MemoryParseError as err:
        raise ValidationError(str(err))
    if store.config is None or store.angles is None:
        raise ValidationError(f"{path} carries no meta circuit")
    expected = config.qnn_config()
    if store.config.num_qubits != expected.num_qubits:
        raise ValidationError(
            f"model has {store.config.num_qubits} qubits, "
            f"environment '{config.env}' needs {expected.num_qubits}"
        )
    if store.config.num_actions != expected.num_actions:
        raise ValidationError(
            f"model has {store.config.num_actions} actions, "
            f"environment '{config.env}' needs {expected.num_actions}"
        )
    if store.angles.shape != (store.config.num_angles,):
        raise ValidationError(f"{path} holds {store.angles.size} angles for its architecture")
    return store


def cmd_train_meta(config: RunConfig, args: argparse.Namespace) -> int:
    qnn_config = config.qnn_config()
    env = _env_for(config)
    result = train_meta(qnn_config, config.train_config(), [env])

    artifacts = RunArtifacts(config.output_dir)
    artifacts.csv(
        "loss.csv", ["epoch", "loss"], ((i + 1, loss) for i, loss in enumerate(result.losses))
    )
    if config.is_twostep:
        artifacts.csv(
            "qtable.csv",
            ["state", "action", "q_meta", "q_optimal"],
            analysis.qtable_rows(config.env, result.phi, qnn_config),
        )
    store = new_store(env.num_agents, qnn_config, result.phi, config.alpha_degrees)
    store.entries[META_LABEL].variant = config.env
    store.entries[META_LABEL].epoch = config.meta_epochs
    store.write(artifacts.path(MODEL_FILE))
    artifacts.record(MODEL_FILE)
    artifacts.manifest("train-meta", config.to_dict(), __version__)
    return EXIT_OK


def cmd_train_pole(config: RunConfig, args: argparse.Namespace) -> int:
    store = _read_model(args.model_in, config)
    qnn_config = store.config
    env = _env_for(config)
    label = config.env if config.env in store else META_LABEL
    poles = store.entries[label].agent_poles
    if poles.shape[0] != env.num_agents:
        raise ValidationError(
            f"model entry '{label}' holds poles for {poles.shape[0]} agents, "
            f"environment '{config.env}' has {env.num_agents}"
        )

    def distance(p: np.ndarray) -> float:
        return analysis.optimal_q_distance(config.env, store.angles, p, qnn_config)

    logger.info("pole training from entry '%s'", label)
    result = train_pole(
        qnn_config,
        config.train_config(),
        env,
        store.angles,
        poles,
        distance_fn=distance if config.is_twostep else None,
    )

    artifacts = RunArtifacts(config.output_dir)
    distances = result.distances if config.is_twostep else [""] * len(result.returns)
    artifacts.csv(
        "return.csv",
        ["epoch", "return", "distance"],
        ((i + 1, r, d) for i, (r, d) in enumerate(zip(result.returns, distances))),
    )
    header = ["epoch", "agent"] + [f"theta{k + 1}" for k in range(qnn_config.num_poles)]
    artifacts.csv(
        "pole_trajectory.csv",
        header,
        (
            [epoch, agent] + list(poles_of_agent)
            for epoch, team in enumerate(result.trajectory)
            for agent, poles_of_agent in enumerate(team)
        ),
    )
    poles = result.poles
    if config.keep_best:
        logger.info(
            "keeping the poles of epoch %d, greedy return %.3f",
            result.best_epoch,
            result.best_return,
        )
        poles = result.best_poles
    pole_memory_save(
        store,
        config.env,
        poles,
        variant=config.env,
        epoch=config.pole_epochs,
        alpha_degrees=config.alpha_degrees,
    )
    store.write(artifacts.path(MODEL_FILE))
    artifacts.record(MODEL_FILE)
    artifacts.manifest("train-pole", config.to_dict(), __version__)
    return EXIT_OK


def _continual_summary(
    arms: Dict[bool, ContinualResult], fraction: float
) -> List[Tuple[str, int, str, float, int, float, int]]:
    """Epochs to `fraction` of the zero-pole distance and of the phase-start distance."""
    rows = []
    for enabled, result in arms.items():
        for record in result.phases:
            threshold = fraction * record.reference_distance
            start_threshold = fraction * record.start_distance
            rows.append(
                (
                    "memory" if enabled else "no-memory",
                    record.phase,
                    record.variant,
                    threshold,
                    epochs_to_threshold(record.distances, threshold),
                    start_threshold,
                    epochs_to_threshold(record.distances, start_threshold),
                )
            )
    return rows


def cmd_continual(config: RunConfig, args: argparse.Namespace) -> int:
    if not config.is_twostep:
        raise ConfigError("env", "the continual schedule runs on the two-step variants")
    qnn_config = config.qnn_config()
    train_config = config.train_config()
    envs = [make_env(name, qnn_config.num_qubits) for name in dict.fromkeys(CONTINUAL_SCHEDULE)]
    phi = train_meta(qnn_config, train_config, envs).phi
    arms = {
        enabled: fast_remember(
            qnn_config,
            train_config,
            CONTINUAL_SCHEDULE,
            config.phase_epochs,
            phi=phi,
            use_memory=enabled,
        )
        for enabled in (True, False)
    }

    artifacts = RunArtifacts(config.output_dir)
    rows = []
    for enabled, result in arms.items():
        epoch = 0
        for record in result.phases:
            for distance in record.distances:
                epoch += 1
                rows.append((epoch, record.phase, distance, int(enabled)))
    artifacts.csv("distance.csv", ["epoch", "phase", "distance", "memory_enabled"], rows)
    arms[True].memory.write(artifacts.path(MODEL_FILE))
    artifacts.record(MODEL_FILE)
    artifacts.manifest("continual", config.to_dict(), __version__)

    print(
        "arm\tphase\tenv\tthreshold\tepochs_to_threshold"
        "\tstart_threshold\tepochs_to_start_threshold"
    )
    for arm, phase, variant, threshold, epochs, start, start_epochs in _continual_summary(
        arms, config.threshold_fraction
    ):
        print(
            f"{arm}\t{phase}\t{variant}\t{threshold:.4f}\t{epochs}\t{start:.4f}\t{start_epochs}"
        )
    return EXIT_OK


def cmd_probe(config: RunConfig, args: argparse.Namespace) -> int:
    if not config.is_twostep:
        raise ConfigError("env", "probe states are defined for the two-step variants")
    store = _read_model(args.model_in, config)
    qnn_config = store.config
    observation = TwoStepEnv(config.env, qnn_config.num_qubits).probe_observations()[
        config.probe_state
    ][0]
    grid = analysis.pole_grid_probe(
        store.angles, observation, qnn_config, state_label=config.probe_state
    )
    artifacts = RunArtifacts(config.output_dir)
    artifacts.csv("polegrid.csv", ["theta1", "theta2", "qmax"], grid.rows())
    artifacts.manifest("probe", config.to_dict(), __version__)
    print(f"state {config.probe_state}: max Q at the pole origin {grid.origin():.6f}")
    return EXIT_OK


def cmd_verify(config: RunConfig, args: argparse.Namespace) -> int:
    qnn_config = config.qnn_config()
    reports = analysis.lemma1_suite(
        [np.radians(a) for a in VERIFY_ALPHAS_DEGREES],
        config.lemma_configs,
        config.lemma_samples,
        qnn_config,
        config.seed,
    )
    if config.action_map != "single":
        logger.info("variance bound checked on the single-qubit action map")
    reports += analysis.lemma3_suite(
        np.radians(VARIANCE_ALPHA_DEGREES),
        config.lemma_configs,
        config.lemma_samples,
        replace(config, action_map="single").qnn_config(),
        config.seed,
    )
    artifacts = RunArtifacts(config.output_dir)
    artifacts.jsonl("lemma_reports.jsonl", (r.to_record() for r in reports))
    artifacts.manifest("verify", config.to_dict(), __version__)

    low, high = analysis.VARIANCE_REWARD_RANGE
    print(f"# variance_bound draws rewards with r/beta in [{low:g}, {high:g}]")
    print("check\talpha_deg\tfactor\testimate\tprediction\tse\tpass")
    for r in reports:
        print(
            f"{r.lemma}\t{np.degrees(r.alpha):.1f}\t{r.factor:.4f}\t"
            f"{r.monte_carlo_estimate:.6f}\t{r.analytic_prediction:.6f}\t"
            f"{r.standard_error:.2e}\t{'yes' if r.passed else 'NO'}"
        )
    failures = [r for r in reports if not r.passed]
    for r in failures:
        logger.error("%s check failed at alpha = %.1f degrees", r.lemma, np.degrees(r.alpha))
    return EXIT_FAILED if failures else EXIT_OK


def cmd_gradcheck(config: RunConfig, args: argparse.Namespace) -> int:
    report = analysis.gradcheck_suite(
        config.gradcheck_configs,
        config=config.qnn_config(),
        seed=config.seed,
        sabotage=args.sabotage,
    )
    print("category\tmax_deviation\ttolerance\tpass")
    for name, deviation in report.max_deviation.items():
        ok = name not in report.failures
        print(f"{name}\t{deviation:.3e}\t{report.tolerances[name]:g}\t{'yes' if ok else 'NO'}")
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_baseline(config: RunConfig, args: argparse.Namespace) -> int:
    qnn_config = config.qnn_config()
    env = _env_for(config)
    train_config = config.train_config()
    artifacts = RunArtifacts(config.output_dir)
    if args.method == "ctde":
        result = train_ctde(qnn_config, train_config, env)
        artifacts.csv(
            "return.csv",
            ["epoch", "return", "loss"],
            ((i + 1, r, loss) for i, (r, loss) in enumerate(zip(result.returns, result.losses))),
        )
        returns = result.returns
    else:
        phi = no_pretrain_angles(qnn_config, config.seed)

        def distance(p: np.ndarray) -> float:
            return analysis.optimal_q_distance(config.env, phi, p, qnn_config)

        pole_result = train_pole(
            qnn_config,
            train_config,
            env,
            phi,
            distance_fn=distance if config.is_twostep else None,
        )
        distances = pole_result.distances if config.is_twostep else [""] * config.pole_epochs
        artifacts.csv(
            "return.csv",
            ["epoch", "return", "distance"],
            ((i + 1, r, d) for i, (r, d) in enumerate(zip(pole_result.returns, distances))),
        )
        store = new_store(env.num_agents, qnn_config, phi, config.alpha_degrees)
        pole_memory_save(
            store,
            config.env,
            pole_result.poles,
            variant=config.env,
            epoch=config.pole_epochs,
            alpha_degrees=config.alpha_degrees,
        )
        store.write(artifacts.path(MODEL_FILE))
        artifacts.record(MODEL_FILE)
        returns = pole_result.returns
    artifacts.manifest("baseline", dict(config.to_dict(), method=args.method), __version__)
    print(f"{args.method}: final greedy return {returns[-1]:.3f}")
    return EXIT_OK


COMMANDS = {
    "train-meta": cmd_train_meta,
    "train-pole": cmd_train_pole,
    "continual": cmd_continual,
    "probe": cmd_probe,
    "verify": cmd_verify,
    "gradcheck": cmd_gradcheck,
    "baseline": cmd_baseline,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main method of program"""
    args = parse_args(argv)
    configure_logging(args)
    try:
        config = resolve_config(args)
    except ConfigError as err:
        logger.error(err.message)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](config, args)
    except (ValidationError, ConfigError, ArgumentError, MemoryLookupError) as err:
        logger.error("%s", getattr(err, "message", err))
        return EXIT_INVALID
    except Qm2arlError as err:
        logger.error("%s failed: %s", args.command, err)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
