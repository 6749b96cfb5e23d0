"""Numeric checks and reproduction instruments.

* Contraction of the noisy meta Q-value: with polar pole noise
  U(-alpha, alpha) the expected Q is (sin alpha / alpha) times the
  clean Q (`lemma1_check`, cross-checked by quadrature).
* A constant bound on the variance of the noisy meta-loss gradient
  (`lemma3_check`).
* Shift-rule and loss gradients against finite differences
  (`gradcheck_suite`).
* Pole-grid probing, the min-max normalized distance grid and the
  optimal-Q distance used in the continual-learning experiments.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from scipy.integrate import simpson

from qm2arl import qcore, qnn
from qm2arl.envs import (
    TWOSTEP_STATES,
    Episode,
    Transition,
    TwoStepEnv,
    twostep_optimal_q,
)
from qm2arl.errors import ArgumentError, DegenerateGridError, DomainError, SizeError
from qm2arl.qnn import QnnConfig
from qm2arl.train import (
    meta_loss_grad,
    meta_targets,
    meta_td_loss,
    pole_loss_and_grad,
    pole_td_loss,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

GRID_POINTS = 33
LEMMA_CHUNK = 50_000
VARIANCE_REWARD_RANGE = (8.0, 10.0)
"""r / beta range of the variance-bound episodes, where the bound is positive"""
THREADS_VARIABLE = "QM2ARL_THREADS"
GRADCHECK_TOLERANCES = {
    "angle": 1e-5,
    "pole": 1e-5,
    "meta_loss": 1e-4,
    "pole_loss": 1e-4,
}


def worker_count() -> int:
    """Worker pool size from QM2ARL_THREADS; 0 or unset means one per CPU."""
    raw = os.environ.get(THREADS_VARIABLE, "0") or "0"
    try:
        count = int(raw)
    except ValueError:
        raise ArgumentError(f"{THREADS_VARIABLE} must be an integer, got '{raw}'")
    if count < 0:
        raise ArgumentError(f"{THREADS_VARIABLE} must be nonnegative")
    return count or os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """Map `fn` over `items` on the worker pool, results in submission order."""
    items = list(items)
    workers = min(worker_count(), max(len(items), 1))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def noise_factor(alpha: float) -> float:
    """sin(alpha) / alpha, with the limit 1 at alpha = 0."""
    return 1.0 if alpha == 0 else float(np.sin(alpha) / alpha)


@dataclass
class LemmaReport:
    """Outcome of one Monte Carlo check against its analytic value"""

    lemma: str
    alpha: float
    monte_carlo_estimate: float
    analytic_prediction: float
    sample_count: int
    standard_error: float
    passed: bool
    factor: float = 1.0
    """sin(alpha) / alpha"""

    @classmethod
    def contraction(
        cls, alpha: float, estimate: float, prediction: float, samples: int, se: float
    ) -> "LemmaReport":
        passed = bool(abs(estimate - prediction) <= 5 * se + 1e-3)
        return cls(
            "contraction", float(alpha), float(estimate), float(prediction), int(samples),
            float(se), passed, noise_factor(alpha),
        )

    @classmethod
    def variance_bound(
        cls, alpha: float, variance: float, bound: float, samples: int, se: float
    ) -> "LemmaReport":
        passed = bool(variance <= bound + 5 * se)
        return cls(
            "variance_bound", float(alpha), float(variance), float(bound), int(samples),
            float(se), passed, noise_factor(alpha),
        )

    def to_record(self) -> dict:
        record = asdict(self)
        record["alpha_degrees"] = float(np.degrees(self.alpha))
        return record


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= np.pi:
        raise DomainError(f"noise bound must lie in [0, pi], got {alpha}")


def _polar_noise(rng: np.random.Generator, alpha: float, shape: Tuple[int, ...]) -> np.ndarray:
    noise = rng.uniform(-alpha, alpha, shape)
    noise[..., 1::2] = 0.0
    return noise


def _chunks(total: int, size: int = LEMMA_CHUNK) -> Iterable[int]:
    while total > 0:
        yield min(total, size)
        total -= size


def lemma1_check(
    phi: np.ndarray,
    theta: np.ndarray,
    alpha: float,
    o: np.ndarray,
    a: int,
    n_samples: int,
    config: QnnConfig,
    seed: Optional[int] = None,
) -> LemmaReport:
    """Monte Carlo mean of Q(o, a; phi, theta + noise) against (sin a / a) Q(o, a; phi, theta).

    Noise is polar-only; the circuit runs once and every sample only
    changes the measurement.
    """
    _check_alpha(alpha)
    qnn.check_action(a, config)
    if n_samples < 2:
        raise ArgumentError("at least two samples are needed")
    rhos = qnn.reduced_states(o, phi, config)
    clean = config.beta * qnn.observable_values(rhos, theta, config)[a]
    if alpha == 0:
        return LemmaReport.contraction(alpha, clean, clean, n_samples, 0.0)
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    for size in _chunks(n_samples):
        noisy = theta + _polar_noise(rng, alpha, (size, config.num_poles))
        values = config.beta * qnn.observable_values(rhos, noisy, config)[:, a]
        total += values.sum()
        total_sq += np.square(values).sum()
    mean = total / n_samples
    variance = max(total_sq / n_samples - mean**2, 0.0) * n_samples / (n_samples - 1)
    se = float(np.sqrt(variance / n_samples))
    return LemmaReport.contraction(alpha, float(mean), noise_factor(alpha) * clean, n_samples, se)


def lemma1_quadrature(
    phi: np.ndarray,
    theta: np.ndarray,
    alpha: float,
    o: np.ndarray,
    a: int,
    config: QnnConfig,
    points: int = 401,
) -> float:
    """Noise-averaged Q of a single-measured-qubit action by Simpson's rule.

    Integrates Q over the polar noise of the action's qubit on
    [-alpha, alpha] and divides by 2 alpha.
    """
    _check_alpha(alpha)
    qnn.check_action(a, config)
    qubits = config.action_qubits[a]
    if len(qubits) != 1:
        raise ArgumentError("quadrature needs an action that measures one qubit")
    rhos = qnn.reduced_states(o, phi, config)
    if alpha == 0:
        return float(config.beta * qnn.observable_values(rhos, theta, config)[a])
    offsets = np.linspace(-alpha, alpha, points)
    shifted = np.tile(np.asarray(theta, dtype=np.float64), (points, 1))
    shifted[:, 2 * (qubits[0] - 1)] += offsets
    values = config.beta * qnn.observable_values(rhos, shifted, config)[:, a]
    return float(simpson(values, x=offsets) / (2 * alpha))


def _single_measured_qubit(config: QnnConfig) -> None:
    if any(len(qubits) != 1 for qubits in config.action_qubits):
        raise ArgumentError("the variance bound is stated for one measured qubit per action")


def lemma3_check(
    phi: np.ndarray,
    phi_target: np.ndarray,
    theta: np.ndarray,
    alpha: float,
    episode: Episode,
    k: int,
    n_samples: int,
    config: QnnConfig,
    seed: Optional[int] = None,
) -> LemmaReport:
    """Variance of dL/dphi_k under polar pole noise against its closed-form bound.

    Every transition draws its own noise. With s1 = sin a / a,
    s2 = sin 2a / 2a, A3 = (r / beta + T - 1)^2 and
    A4 = |psi+><psi+| - |psi-><psi-| built from the states at
    phi +- (pi/2) e_k, the bound is

        4 beta^4 / |E|^2 * sum_tau (s2 A3 Tr(A4^2 M^2) - s1^2 Tr(A4 M)^2)

    where M is the clean measurement of the transition's action.
    """
    _check_alpha(alpha)
    _single_measured_qubit(config)
    if not episode:
        raise ArgumentError("the variance check needs at least one transition")
    if not 0 <= k < config.num_angles:
        raise SizeError(f"angle coordinate {k} outside 0..{config.num_angles - 1}")
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    beta = config.beta
    shift = np.zeros_like(phi)
    shift[k] = qnn.SHIFT
    batch = np.stack([phi, phi + shift, phi - shift])
    targets = meta_targets(phi, phi_target, theta, episode, config)

    s1 = noise_factor(alpha)
    s2 = 1.0 if alpha == 0 else float(np.sin(2 * alpha) / (2 * alpha))
    bound_sum = 0.0
    cases = []
    for transition, target in zip(episode, targets):
        o, a = transition.joint_obs[0], transition.joint_action[0]
        qnn.check_action(a, config)
        states = qnn.pqc_forward(qnn.encode(o, config), batch, config)
        rhos = np.stack(
            [qcore.reduced_density(states, q) for q in range(1, config.num_qubits + 1)],
            axis=-3,
        )
        clean = qnn.observable_values(rhos[1:], theta, config)[:, a]
        overlap = np.vdot(states[1], states[2])
        trace_a4_sq = 2.0 - 2.0 * abs(overlap) ** 2
        trace_a4_m = clean[0] - clean[1]
        a3 = (transition.reward / beta + target - 1.0) ** 2
        bound_sum += s2 * a3 * trace_a4_sq - s1**2 * trace_a4_m**2
        cases.append((rhos, a, transition.reward / beta + target))
    bound = 4 * beta**4 / len(episode) ** 2 * bound_sum

    if alpha == 0:
        return LemmaReport.variance_bound(alpha, 0.0, bound, n_samples, 0.0)
    if n_samples < 2:
        raise ArgumentError("at least two samples are needed")
    rng = np.random.default_rng(seed)
    samples = []
    for size in _chunks(n_samples):
        grads = np.zeros(size)
        for rhos, a, bootstrap in cases:
            noisy = theta + _polar_noise(rng, alpha, (size, config.num_poles))
            values = qnn.observable_values(rhos[:, None], noisy, config)[..., a]
            derivative = (values[1] - values[2]) / 2
            grads += (bootstrap - values[0]) * derivative
        samples.append(-2 * beta**2 / len(episode) * grads)
    gradient = np.concatenate(samples)
    variance = float(np.var(gradient, ddof=1))
    fourth = float(np.mean((gradient - gradient.mean()) ** 4))
    se = float(np.sqrt(max(fourth - variance**2, 0.0) / n_samples))
    return LemmaReport.variance_bound(alpha, variance, float(bound), n_samples, se)


def random_check_config(
    rng: np.random.Generator, config: QnnConfig
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Random (angles, poles, observation, action) for a check."""
    phi = qnn.random_angles(config, rng)
    theta = rng.uniform(-np.pi, np.pi, config.num_poles)
    o = rng.uniform(0.0, np.pi, config.num_qubits)
    a = int(rng.integers(config.num_actions))
    return phi, theta, o, a


def random_episode(
    rng: np.random.Generator,
    config: QnnConfig,
    length: int = 2,
    num_agents: int = 1,
    reward_range: Tuple[float, float] = (-1.0, 1.0),
) -> Episode:
    """Random transitions whose rewards are drawn as beta * U(reward_range)."""
    episode = []
    for step in range(length):
        obs = tuple(rng.uniform(0, np.pi, config.num_qubits) for _ in range(num_agents))
        next_obs = tuple(rng.uniform(0, np.pi, config.num_qubits) for _ in range(num_agents))
        actions = tuple(int(rng.integers(config.num_actions)) for _ in range(num_agents))
        reward = config.beta * rng.uniform(*reward_range)
        episode.append(Transition(obs, actions, reward, next_obs, step == length - 1))
    return episode


def lemma1_suite(
    alphas: Sequence[float],
    n_configs: int,
    n_samples: int,
    config: QnnConfig,
    seed: Optional[int] = None,
) -> List[LemmaReport]:
    """lemma1_check over `n_configs` random configurations per noise bound."""
    children = np.random.SeedSequence(seed).spawn(len(alphas) * n_configs)
    jobs = [
        (alpha, children[i * n_configs + j])
        for i, alpha in enumerate(alphas)
        for j in range(n_configs)
    ]

    def run(job):
        alpha, child = job
        case_seed, sample_seed = child.spawn(2)
        phi, theta, o, a = random_check_config(np.random.default_rng(case_seed), config)
        return lemma1_check(phi, theta, alpha, o, a, n_samples, config, sample_seed)

    return parallel_map(run, jobs)


def lemma3_suite(
    alpha: float,
    n_configs: int,
    n_samples: int,
    config: QnnConfig,
    seed: Optional[int] = None,
) -> List[LemmaReport]:
    """lemma3_check over random single-measured-qubit configurations.

    Rewards are drawn with r / beta in VARIANCE_REWARD_RANGE, [8, 10], the
    large-TD regime in which the closed-form bound is positive; smaller
    rewards are not covered.
    """
    _single_measured_qubit(config)
    logger.info(
        "variance bound over %d configurations with r / beta in [%g, %g]",
        n_configs,
        *VARIANCE_REWARD_RANGE,
    )

    def run(child: np.random.SeedSequence) -> LemmaReport:
        case_seed, sample_seed = child.spawn(2)
        rng = np.random.default_rng(case_seed)
        phi = qnn.random_angles(config, rng)
        phi_target = qnn.random_angles(config, rng)
        theta = rng.uniform(-np.pi, np.pi, config.num_poles)
        episode = random_episode(rng, config, reward_range=VARIANCE_REWARD_RANGE)
        k = int(rng.integers(config.num_angles))
        return lemma3_check(
            phi, phi_target, theta, alpha, episode, k, n_samples, config, sample_seed
        )

    return parallel_map(run, np.random.SeedSequence(seed).spawn(n_configs))


@dataclass
class PoleGrid:
    """max_a Q over a 33 x 33 scan of two pole coordinates"""

    axis_values: np.ndarray
    values: np.ndarray
    """values[i, j] is taken at (axis_values[i], axis_values[j])"""
    state_label: str = ""
    coordinates: Tuple[int, int] = (0, 1)

    def rows(self) -> Iterable[Tuple[float, float, float]]:
        for i, first in enumerate(self.axis_values):
            for j, second in enumerate(self.axis_values):
                yield float(first), float(second), float(self.values[i, j])

    def origin(self) -> float:
        middle = len(self.axis_values) // 2
        return float(self.values[middle, middle])


def grid_axis() -> np.ndarray:
    """33 angles from -pi to pi in steps of pi/16."""
    return np.linspace(-np.pi, np.pi, GRID_POINTS)


def pole_grid_probe(
    phi: np.ndarray,
    o: np.ndarray,
    config: QnnConfig,
    action_set: Optional[Sequence[int]] = None,
    coordinates: Optional[Tuple[int, int]] = None,
    state_label: str = "",
) -> PoleGrid:
    """Probe max_a Q(o, a; phi, theta) while two pole coordinates sweep the grid.

    The remaining pole coordinates stay at 0. By default the sweep moves
    the polar and azimuth angles of the first measured qubit.
    """
    actions = list(range(config.num_actions)) if action_set is None else list(action_set)
    if not actions:
        raise ArgumentError("the probe needs at least one action")
    for a in actions:
        qnn.check_action(a, config)
    if coordinates is None:
        first = config.measured_qubits[0]
        coordinates = (2 * (first - 1), 2 * (first - 1) + 1)
    for coordinate in coordinates:
        if not 0 <= coordinate < config.num_poles:
            raise SizeError(f"pole coordinate {coordinate} outside 0..{config.num_poles - 1}")
    axis = grid_axis()
    rhos = qnn.reduced_states(o, phi, config)
    values = np.zeros((len(axis), len(axis)))
    theta = qnn.zero_poles(config)
    for i, first_value in enumerate(axis):
        for j, second_value in enumerate(axis):
            theta[:] = 0.0
            theta[coordinates[0]] = first_value
            theta[coordinates[1]] = second_value
            q = config.beta * qnn.observable_values(rhos, theta, config)
            values[i, j] = max(q[a] for a in actions)
    return PoleGrid(axis, values, state_label, tuple(coordinates))


def distance_grid(grid: PoleGrid, q_star: float) -> np.ndarray:
    """D = |max_a Q* - max_a Q| at every grid point."""
    return np.abs(q_star - grid.values)


def d_norm(grid: PoleGrid, q_star: float) -> np.ndarray:
    """D / (max D - min D), without subtracting min D in the numerator.

    A grid with D identically 0 normalizes to zeros; any other constant
    grid cannot be normalized.
    """
    distance = distance_grid(grid, q_star)
    spread = distance.max() - distance.min()
    if spread == 0:
        if np.all(distance == 0):
            return np.zeros_like(distance)
        raise DegenerateGridError(f"distance grid is constant at {distance.flat[0]}")
    return distance / spread


def local_q_values(
    phi: np.ndarray, poles: np.ndarray, joint_obs: Sequence[np.ndarray], config: QnnConfig
) -> np.ndarray:
    """Local Q-values of every agent, shape (agents, actions)."""
    return np.stack(
        [qnn.q_values_all(o, phi, poles[n], config) for n, o in enumerate(joint_obs)]
    )


def state_distances(
    variant: str, phi: np.ndarray, poles: np.ndarray, config: QnnConfig
) -> Dict[str, float]:
    """Per probe state, |max Q* - Q_tot(s, a^)| + (max Q* - Q*(s, a^)).

    a^ is the team's greedy joint action, Q_tot the VDN average of the
    local Q-values and Q* the cooperative joint table of the variant.
    """
    poles = np.atleast_2d(poles)
    oracle = twostep_optimal_q(variant, "best-response")
    env = TwoStepEnv(variant, config.num_qubits)
    distances = {}
    for state, joint_obs in env.probe_observations().items():
        local = local_q_values(phi, poles, joint_obs, config)
        if local.shape[0] != 2:
            raise SizeError("the two-step game has exactly two agents")
        greedy = tuple(int(i) for i in np.argmax(local, axis=1))
        team_value = float(np.mean(local.max(axis=1)))
        best = float(oracle[state].max())
        distances[state] = abs(best - team_value) + (best - float(oracle[state][greedy]))
    return distances


def optimal_q_distance(
    variant: str, phi: np.ndarray, poles: np.ndarray, config: QnnConfig
) -> float:
    """Sum of `state_distances` over s1, s2, s3."""
    return float(sum(state_distances(variant, phi, poles, config).values()))


def meta_qtable(variant: str, phi: np.ndarray, config: QnnConfig) -> np.ndarray:
    """Meta agent's Q(s, a) on zero poles, states s1..s3 by row."""
    env = TwoStepEnv(variant, config.num_qubits)
    probes = env.probe_observations()
    theta = qnn.zero_poles(config)
    return np.stack([qnn.q_values_all(probes[s][0], phi, theta, config) for s in TWOSTEP_STATES])


def qtable_rows(variant: str, phi: np.ndarray, config: QnnConfig) -> List[Tuple]:
    """Rows (state, action, q_meta, q_optimal) with the uniform-partner ground truth."""
    table = meta_qtable(variant, phi, config)
    truth = twostep_optimal_q(variant, "uniform")
    return [
        (state, action, float(table[i, action]), float(truth[state][action]))
        for i, state in enumerate(TWOSTEP_STATES)
        for action in range(table.shape[1])
    ]


@dataclass
class GradcheckReport:
    """Largest shift-rule or loss-gradient deviation from finite differences"""

    max_deviation: Dict[str, float]
    tolerances: Dict[str, float]
    n_configs: int
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _fd(fn: Callable[[np.ndarray], float], x: np.ndarray, c: float = 1e-4) -> np.ndarray:
    grad = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = c
        grad[k] = (fn(x + step) - fn(x - step)) / (2 * c)
    return grad


def _gradcheck_case(
    child: np.random.SeedSequence, config: QnnConfig, sabotage: bool
) -> Dict[str, float]:
    rng = np.random.default_rng(child)
    phi, theta, o, a = random_check_config(rng, config)
    deviations = {}

    angle_grad = qnn.grad_angle_shift(o, a, phi, theta, config)
    if sabotage:
        angle_grad = -angle_grad
    deviations["angle"] = float(
        np.max(np.abs(angle_grad - qnn.grad_fd(o, a, phi, theta, config, "angle")))
    )
    pole_grad = qnn.grad_pole_shift(o, a, phi, theta, config)
    deviations["pole"] = float(
        np.max(np.abs(pole_grad - qnn.grad_fd(o, a, phi, theta, config, "pole")))
    )

    phi_target = qnn.random_angles(config, rng)
    episode = [
        Transition(
            t.joint_obs,
            t.joint_action,
            t.reward,
            t.next_joint_obs,
            t.terminal,
            rng.uniform(-0.5, 0.5, config.num_poles),
        )
        for t in random_episode(rng, config)
    ]
    targets = meta_targets(phi, phi_target, theta, episode, config)
    loss_grad = meta_loss_grad(phi, phi_target, theta, episode, config, targets=targets)
    fd = _fd(
        lambda p: meta_td_loss(p, phi_target, theta, episode, config, targets=targets), phi
    )
    deviations["meta_loss"] = float(np.max(np.abs(loss_grad - fd)))

    team = random_episode(rng, config, num_agents=2)
    poles = rng.uniform(-np.pi, np.pi, (2, config.num_poles))
    poles_target = rng.uniform(-np.pi, np.pi, (2, config.num_poles))
    _, team_grad = pole_loss_and_grad(poles, poles_target, phi, team, config)
    fd = _fd(
        lambda p: pole_td_loss(p.reshape(poles.shape), poles_target, phi, team, config),
        poles.ravel(),
    )
    deviations["pole_loss"] = float(np.max(np.abs(team_grad.ravel() - fd)))
    return deviations


def gradcheck_suite(
    n_configs: int = 100,
    tolerances: Optional[Dict[str, float]] = None,
    config: QnnConfig = QnnConfig(),
    seed: Optional[int] = None,
    sabotage: bool = False,
) -> GradcheckReport:
    """Compare every analytic gradient with central finite differences.

    Categories: the angle and pole shift rules on <O_a>, the meta-loss
    angle gradient (bootstrap action frozen) and the VDN pole-loss
    gradient. `sabotage` flips the sign of the angle shift rule and must
    make the check fail.
    """
    if n_configs < 1:
        raise ArgumentError("gradcheck needs at least one configuration")
    tolerances = {**GRADCHECK_TOLERANCES, **(tolerances or {})}
    cases = parallel_map(
        lambda child: _gradcheck_case(child, config, sabotage),
        np.random.SeedSequence(seed).spawn(n_configs),
    )
    worst = {name: max(case[name] for case in cases) for name in GRADCHECK_TOLERANCES}
    failures = [name for name, value in worst.items() if not value <= tolerances[name]]
    for name in failures:
        logger.warning("%s gradient deviates by %.3g (tolerance %g)", name, worst[name],
                       tolerances[name])
    return GradcheckReport(worst, tolerances, n_configs, failures)
