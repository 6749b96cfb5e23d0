"""Run configuration.

Values are resolved from three sources, each overriding the previous
one: the dataclass defaults, a JSON file given with --config, and one
command-line flag per field (--meta-epochs 500, --alpha 30, ...).
"""
import argparse
import json
import logging
import typing
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np

from qm2arl.artifacts import PathLike
from qm2arl.envs import ENV_NAMES, TWOSTEP_STATES, TWOSTEP_VARIANTS, SingleHopParams
from qm2arl.errors import ConfigError, Qm2arlError
from qm2arl.qnn import ACTION_MAPS, QnnConfig, action_qubit_map
from qm2arl.train import NOISE_MODES, NoiseSpec, TrainConfig

logger = logging.getLogger(__name__)

FLAG_ALIASES = {
    "seed": ("--seed",),
    "output_dir": ("--out", "--output-dir"),
    "alpha_degrees": ("--alpha", "--alpha-degrees"),
    "lemma_samples": ("--samples", "--lemma-samples"),
    "probe_state": ("--state", "--probe-state"),
}

COUNT_FIELDS = (
    "meta_epochs",
    "pole_epochs",
    "phase_epochs",
    "target_period",
    "log_every",
    "eval_episodes",
    "lemma_samples",
    "lemma_configs",
    "gradcheck_configs",
)


@dataclass(frozen=True)
class RunConfig:
    """Every setting of one command-line run"""

    env: str = "twostep-main"
    qubits: Optional[int] = None
    """Register size; by default 3 for the two-step game, 4 for single-hop (5 with
    the shared action map)"""
    depth: Optional[int] = None
    """Circuit layers; by default 5 for the two-step game, 4 for single-hop"""
    beta: float = 8.0
    action_map: str = "single"
    """'single' measures one qubit per action; 'shared' also measures qubit 1
    for every action of an agent"""
    alpha_degrees: float = 30.0
    noise_mode: str = "all"
    meta_epochs: int = 3000
    pole_epochs: int = 20000
    phase_epochs: int = 10000
    target_period: int = 50
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    temperature: float = 1.0
    epsilon_start: float = 0.3
    epsilon_end: float = 0.01
    seed: int = 0
    output_dir: str = "out"
    strict_paper_mode: bool = False
    """Drop the epsilon-greedy floor and sample from the softmax policy alone.
    Double-DQN action selection and the zero bootstrap at terminal steps
    stay on."""
    keep_best: bool = False
    """train-pole saves the poles of its best greedy evaluation rather than
    the last epoch's"""
    log_every: int = 100
    eval_episodes: int = 1
    lemma_samples: int = 200_000
    lemma_configs: int = 10
    gradcheck_configs: int = 100
    probe_state: str = "s1"
    threshold_fraction: float = 0.25

    def validate(self) -> "RunConfig":
        if self.env not in ENV_NAMES:
            raise ConfigError("env", f"'{self.env}' is not one of {', '.join(ENV_NAMES)}")
        for name in COUNT_FIELDS:
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be positive")
        if self.qubits is not None and self.qubits < 1:
            raise ConfigError("qubits", "must be positive")
        if self.depth is not None and self.depth < 1:
            raise ConfigError("depth", "must be positive")
        if not self.beta > 0:
            raise ConfigError("beta", "must be positive")
        if not 0 <= self.alpha_degrees <= 180:
            raise ConfigError("alpha_degrees", "must lie in [0, 180]")
        if self.action_map not in ACTION_MAPS:
            raise ConfigError("action_map", f"must be one of {', '.join(ACTION_MAPS)}")
        if self.noise_mode not in NOISE_MODES:
            raise ConfigError("noise_mode", f"must be one of {', '.join(NOISE_MODES)}")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate", "must be nonnegative")
        if not self.weight_decay >= 0:
            raise ConfigError("weight_decay", "must be nonnegative")
        if not self.temperature > 0:
            raise ConfigError("temperature", "must be positive")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(name, "must lie in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed", "must be nonnegative")
        if self.probe_state not in TWOSTEP_STATES:
            raise ConfigError("probe_state", f"must be one of {', '.join(TWOSTEP_STATES)}")
        if not 0 < self.threshold_fraction <= 1:
            raise ConfigError("threshold_fraction", "must lie in (0, 1]")
        try:
            self.qnn_config()
        except Qm2arlError as err:
            raise ConfigError("qubits", str(err)) from err
        return self

    @property
    def is_twostep(self) -> bool:
        return self.env in TWOSTEP_VARIANTS

    @property
    def alpha(self) -> float:
        return float(np.radians(self.alpha_degrees))

    def qnn_config(self) -> QnnConfig:
        shared = 1 if self.action_map == "shared" else None
        if self.is_twostep:
            return QnnConfig(
                num_qubits=3 if self.qubits is None else self.qubits,
                depth=5 if self.depth is None else self.depth,
                beta=self.beta,
                action_qubits=action_qubit_map(2, 2, shared),
            )
        return QnnConfig(
            num_qubits=(4 if shared is None else 5) if self.qubits is None else self.qubits,
            depth=4 if self.depth is None else self.depth,
            beta=self.beta,
            action_qubits=action_qubit_map(4, 1 if shared is None else 2, shared),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            meta_epochs=self.meta_epochs,
            pole_epochs=self.pole_epochs,
            target_period=self.target_period,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            temperature=self.temperature,
            epsilon_start=self.epsilon_start,
            epsilon_end=self.epsilon_end,
            strict_paper_mode=self.strict_paper_mode,
            noise=NoiseSpec(self.alpha, self.noise_mode),
            seed=self.seed,
            log_every=self.log_every,
            eval_episodes=self.eval_episodes,
        )

    def singlehop_params(self) -> SingleHopParams:
        return SingleHopParams()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _field_type(name: str) -> type:
    hint = typing.get_type_hints(RunConfig)[name]
    args = [arg for arg in typing.get_args(hint) if arg is not type(None)]
    return args[0] if args else hint


def _coerce(name: str, value: Any) -> Any:
    kind = _field_type(name)
    if value is None:
        if typing.get_type_hints(RunConfig)[name] is kind:
            raise ConfigError(name, "may not be null")
        return None
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true or false, got {value!r}")
        return value
    if kind is int:
        if (
            isinstance(value, bool)
            or not isinstance(value, (int, float))
            or not float(value).is_integer()
        ):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(name, f"expected a string, got {value!r}")
    return value


def load_config_file(path: PathLike) -> Dict[str, Any]:
    """Read a JSON object of RunConfig fields."""
    try:
        with open(path, "r") as handle:
            document = json.load(handle)
    except OSError as err:
        raise ConfigError("config", f"cannot read {path}: {err.strerror}") from err
    except json.JSONDecodeError as err:
        raise ConfigError("config", f"{path} is not valid JSON: {err}") from err
    if not isinstance(document, dict):
        raise ConfigError("config", f"{path} must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for key, value in document.items():
        name = key.replace("-", "_")
        if name not in known:
            raise ConfigError(key, "unknown configuration field")
        values[name] = _coerce(name, value)
    return values


def _flag_parser(name: str):
    kind = _field_type(name)

    def parse(text: str) -> Any:
        try:
            return kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: '{text}'")

    return parse


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """Add --config and one override flag per RunConfig field."""
    parser.add_argument(
        "--config", metavar="PATH", default=None, help="JSON file of configuration fields"
    )
    group = parser.add_argument_group("configuration overrides")
    for config_field in fields(RunConfig):
        name = config_field.name
        flags: Tuple[str, ...] = FLAG_ALIASES.get(name, ("--" + name.replace("_", "-"),))
        default_text = f" (default: {config_field.default})"
        if _field_type(name) is bool:
            group.add_argument(
                *flags,
                dest=name,
                action="store_true",
                default=argparse.SUPPRESS,
                help=f"set {name}{default_text}",
            )
        else:
            group.add_argument(
                *flags,
                dest=name,
                type=_flag_parser(name),
                default=argparse.SUPPRESS,
                metavar=name.upper(),
                help=f"override {name}{default_text}",
            )


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the --config file, then flags; validated."""
    config = RunConfig()
    if getattr(args, "config", None):
        config = replace(config, **load_config_file(args.config))
    overrides = {
        f.name: getattr(args, f.name) for f in fields(RunConfig) if hasattr(args, f.name)
    }
    config = replace(config, **overrides).validate()
    logger.debug("resolved configuration: %s", config)
    return config
