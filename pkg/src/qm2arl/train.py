"""Two-stage training of the quantum Q-network.

Stage one (meta angle training) fits the circuit angles of a single
meta agent while its partners act at random. The poles stay at zero,
but every step perturbs them with uniform noise in [-alpha, alpha], so
the circuit learns values that survive a moved measurement axis.

Stage two (local pole training) freezes the angles and fits one pole
vector per agent against a VDN-style joint value: the team's Q is the
average of the agents' local Q-values.

`fast_remember` chains stage two across a schedule of environments,
optionally restoring poles from a pole memory whenever a phase starts.

`train_ctde` is the comparison method with no meta stage and no pole split: every agent
trains its own circuit angles on the same VDN loss.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from qm2arl import qnn
from qm2arl.envs import (
    Env,
    Episode,
    Transition,
    episode_return,
    make_env,
    rollout,
    uniform_policy,
)
from qm2arl.errors import ArgumentError, DomainError, SizeError
from qm2arl.memory import (
    META_LABEL,
    PoleMemoryStore,
    new_store,
    pole_memory_load,
    pole_memory_save,
)
from qm2arl.optim import OptimizerState, adam_update, init_optimizer
from qm2arl.qnn import QnnConfig

logger = logging.getLogger(__name__)

NOISE_MODES = ("all", "polar")
DistanceFn = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class NoiseSpec:
    """Angle-to-pole regularization noise"""

    alpha: float = 0.0
    """Noise bound in radians; 0 disables the regularization"""
    mode: str = "all"
    """"all" perturbs every pole angle, "polar" leaves azimuths alone"""

    def __post_init__(self):
        if not 0.0 <= self.alpha <= np.pi:
            raise DomainError(f"noise bound must lie in [0, pi], got {self.alpha}")
        if self.mode not in NOISE_MODES:
            raise DomainError(f"noise mode must be one of {NOISE_MODES}")


def sample_pole_noise(spec: NoiseSpec, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Draw i.i.d. U(-alpha, alpha) noise for a pole vector of length `dim`."""
    noise = rng.uniform(-spec.alpha, spec.alpha, dim)
    if spec.mode == "polar":
        noise[1::2] = 0.0
    return noise


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by both training stages"""

    meta_epochs: int = 3000
    pole_epochs: int = 20000
    target_period: int = 50
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    temperature: float = 1.0
    epsilon_start: float = 0.3
    epsilon_end: float = 0.01
    strict_paper_mode: bool = False
    """Sample from the plain softmax policy, without the epsilon floor. Only the
    floor is affected: double-Q target selection and the zero bootstrap at
    terminal steps stay on."""
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    log_every: int = 100
    eval_episodes: int = 1

    def epsilon(self, epoch: int, total_epochs: int) -> float:
        """Exploration floor, annealed linearly over the first half of training."""
        if self.strict_paper_mode:
            return 0.0
        horizon = max(total_epochs // 2, 1)
        progress = min(epoch / horizon, 1.0)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * progress


@dataclass
class TrainState:
    """Online and target parameters of a training run"""

    phi: np.ndarray
    phi_target: np.ndarray
    poles: np.ndarray
    """Shape (agents, 2L)"""
    poles_target: np.ndarray
    epoch: int = 0
    target_period: int = 50

    def sync_due(self) -> bool:
        return self.epoch % self.target_period == 0

    def sync_angles(self) -> None:
        self.phi_target = self.phi.copy()

    def sync_poles(self) -> None:
        self.poles_target = self.poles.copy()


def behaviour_action(
    q_values: np.ndarray, temperature: float, epsilon: float, rng: np.random.Generator
) -> int:
    """Sample from softmax(Q / temperature), uniform with probability epsilon."""
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    probs = qnn.softmax_policy(q_values, temperature)
    return int(rng.choice(len(q_values), p=probs))


class ReducedStateCache:
    """Reduced qubit states per observation for one frozen angle vector"""

    def __init__(self, phi: np.ndarray, config: QnnConfig):
        self.phi = np.array(phi, dtype=np.float64)
        self.config = config
        self._states: Dict[bytes, np.ndarray] = {}

    def __call__(self, o: np.ndarray) -> np.ndarray:
        key = np.asarray(o, dtype=np.float64).tobytes()
        if key not in self._states:
            self._states[key] = qnn.reduced_states(o, self.phi, self.config)
        return self._states[key]

    def observables(self, o: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return qnn.observable_values(self(o), theta, self.config)


class MetaActor:
    """Meta agent policy that redraws its pole noise at every step"""

    def __init__(
        self,
        phi: np.ndarray,
        theta: np.ndarray,
        config: QnnConfig,
        noise: NoiseSpec,
        temperature: float,
        epsilon: float,
    ):
        self.phi = phi
        self.theta = theta
        self.config = config
        self.noise = noise
        self.temperature = temperature
        self.epsilon = epsilon
        self.noises: List[np.ndarray] = []

    def __call__(self, o: np.ndarray, rng: np.random.Generator) -> int:
        noise = sample_pole_noise(self.noise, self.config.num_poles, rng)
        self.noises.append(noise)
        q = qnn.q_values_all(o, self.phi, self.theta + noise, self.config)
        return behaviour_action(q, self.temperature, self.epsilon, rng)


class LocalActor:
    """Agent acting on its local Q-network with frozen angles"""

    def __init__(
        self,
        cache: ReducedStateCache,
        theta: np.ndarray,
        temperature: float,
        epsilon: float,
        greedy: bool = False,
    ):
        self.cache = cache
        self.theta = theta
        self.temperature = temperature
        self.epsilon = epsilon
        self.greedy = greedy

    def __call__(self, o: np.ndarray, rng: np.random.Generator) -> int:
        q = self.cache.config.beta * self.cache.observables(o, self.theta)
        if self.greedy:
            return int(np.argmax(q))
        return behaviour_action(q, self.temperature, self.epsilon, rng)


def _check_episode(episode: Episode) -> None:
    if not episode:
        raise ArgumentError("loss needs at least one transition")


def _noisy_poles(
    theta: np.ndarray, transition: Transition, noise: Optional[np.ndarray]
) -> np.ndarray:
    if noise is not None:
        return theta + noise
    if transition.pole_noise is not None:
        return theta + transition.pole_noise
    return theta


def meta_targets(
    phi: np.ndarray,
    phi_target: np.ndarray,
    theta: np.ndarray,
    episode: Episode,
    config: QnnConfig,
) -> np.ndarray:
    """Bootstrap expectations <O_a*>(o'; phi', theta) of the meta agent.

    a* is the online network's greedy action on clean poles (double-Q);
    terminal transitions get 0.
    """
    targets = np.zeros(len(episode))
    for i, transition in enumerate(episode):
        if transition.terminal:
            continue
        next_obs = transition.next_joint_obs[0]
        best = int(np.argmax(qnn.q_values_all(next_obs, phi, theta, config)))
        targets[i] = qnn.observable_values(
            qnn.reduced_states(next_obs, phi_target, config), theta, config
        )[best]
    return targets


def meta_td_loss(
    phi: np.ndarray,
    phi_target: np.ndarray,
    theta: np.ndarray,
    episode: Episode,
    config: QnnConfig,
    noise: Optional[np.ndarray] = None,
    targets: Optional[np.ndarray] = None,
) -> float:
    """Mean squared TD residual r + Q(o', a*; phi', theta) - Q(o, a; phi, theta + noise).

    Args:
        phi: online angles
        phi_target: target angles
        theta: clean meta poles
        episode: transitions; the meta agent is agent 0
        config: network architecture
        noise: pole noise for every transition; by default each
            transition's own collected noise
        targets: precomputed `meta_targets`, to hold a* fixed
    """
    _check_episode(episode)
    if targets is None:
        targets = meta_targets(phi, phi_target, theta, episode, config)
    beta = config.beta
    total = 0.0
    for transition, target in zip(episode, targets):
        poles = _noisy_poles(theta, transition, noise)
        online = qnn.q_values_all(transition.joint_obs[0], phi, poles, config)
        residual = transition.reward + beta * target - online[transition.joint_action[0]]
        total += residual**2
    return total / len(episode)


def meta_loss_and_grad(
    phi: np.ndarray,
    phi_target: np.ndarray,
    theta: np.ndarray,
    episode: Episode,
    config: QnnConfig,
    noise: Optional[np.ndarray] = None,
    targets: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Meta TD loss and its angle gradient from one batch of circuits per transition.

    grad = -(2 beta^2 / |E|) sum_tau A1(tau) d<O_a>/dphi with
    A1 = r / beta + <O_a*>_target - <O_a>.
    """
    _check_episode(episode)
    if targets is None:
        targets = meta_targets(phi, phi_target, theta, episode, config)
    beta = config.beta
    loss = 0.0
    grad = np.zeros(config.num_angles)
    for transition, target in zip(episode, targets):
        poles = _noisy_poles(theta, transition, noise)
        action = transition.joint_action[0]
        values, grads = qnn.observables_with_angle_grads(
            transition.joint_obs[0], phi, poles, config
        )
        advantage = transition.reward / beta + target - values[action]
        loss += (beta * advantage) ** 2
        grad += advantage * grads[action]
    scale = len(episode)
    return loss / scale, -2 * beta**2 * grad / scale


def meta_loss_grad(
    phi: np.ndarray,
    phi_target: np.ndarray,
    theta: np.ndarray,
    episode: Episode,
    config: QnnConfig,
    noise: Optional[np.ndarray] = None,
    targets: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Angle gradient of `meta_td_loss` with a* held fixed."""
    return meta_loss_and_grad(phi, phi_target, theta, episode, config, noise, targets)[1]


def _check_agents(poles: np.ndarray, episode: Episode) -> None:
    for transition in episode:
        if transition.num_agents != poles.shape[0]:
            raise SizeError(
                f"{poles.shape[0]} pole vectors for a {transition.num_agents}-agent team"
            )


def _vdn_residuals(
    poles: np.ndarray,
    poles_target: np.ndarray,
    episode: Episode,
    cache: ReducedStateCache,
) -> np.ndarray:
    beta = cache.config.beta
    residuals = np.zeros(len(episode))
    num_agents = poles.shape[0]
    for i, transition in enumerate(episode):
        difference = 0.0
        for n in range(num_agents):
            if not transition.terminal:
                next_values = cache.observables(transition.next_joint_obs[n], poles_target[n])
                difference += beta * np.max(next_values)
            values = cache.observables(transition.joint_obs[n], poles[n])
            difference -= beta * values[transition.joint_action[n]]
        residuals[i] = transition.reward + difference / num_agents
    return residuals


def pole_td_loss(
    poles: np.ndarray,
    poles_target: np.ndarray,
    phi: np.ndarray,
    episode: Episode,
    config: QnnConfig,
    cache: Optional[ReducedStateCache] = None,
) -> float:
    """Mean of [r + (1/N) sum_n (max_a' Q(o'^n, a'; theta'^n) - Q(o^n, a^n; theta^n))]^2.

    The angles are frozen; `cache` may carry reduced states for `phi`.
    """
    _check_episode(episode)
    poles = np.atleast_2d(poles)
    _check_agents(poles, episode)
    cache = cache or ReducedStateCache(phi, config)
    residuals = _vdn_residuals(poles, np.atleast_2d(poles_target), episode, cache)
    return float(np.mean(residuals**2))


def pole_loss_and_grad(
    poles: np.ndarray,
    poles_target: np.ndarray,
    phi: np.ndarray,
    episode: Episode,
    config: QnnConfig,
    cache: Optional[ReducedStateCache] = None,
) -> Tuple[float, np.ndarray]:
    """`pole_td_loss` and its gradient with respect to every agent's poles."""
    _check_episode(episode)
    poles = np.atleast_2d(poles)
    _check_agents(poles, episode)
    cache = cache or ReducedStateCache(phi, config)
    residuals = _vdn_residuals(poles, np.atleast_2d(poles_target), episode, cache)
    num_agents = poles.shape[0]
    grad = np.zeros_like(poles)
    for residual, transition in zip(residuals, episode):
        for n in range(num_agents):
            pole_grads = qnn.pole_observable_grads(
                cache(transition.joint_obs[n]), poles[n], config
            )
            grad[n] += residual * pole_grads[transition.joint_action[n]]
    grad *= -2 * config.beta / (num_agents * len(episode))
    return float(np.mean(residuals**2)), grad


def evaluate_greedy(
    env: Env,
    cache: Union[ReducedStateCache, Sequence[ReducedStateCache]],
    poles: np.ndarray,
    episodes: int = 1,
    seed: Optional[int] = None,
) -> float:
    """Mean return of the team acting greedily on its local Q-values.

    `cache` is shared by every agent, or given per agent when their
    angles differ.
    """
    caches = [cache] * env.num_agents if isinstance(cache, ReducedStateCache) else list(cache)
    actors = [
        LocalActor(caches[n], poles[n], 1.0, 0.0, greedy=True) for n in range(env.num_agents)
    ]
    seeds = np.random.SeedSequence(seed).spawn(episodes)
    return float(np.mean([episode_return(rollout(env, actors, s)) for s in seeds]))


@dataclass
class MetaResult:
    phi: np.ndarray
    phi_target: np.ndarray
    losses: np.ndarray


def train_meta(
    config: QnnConfig,
    train_config: TrainConfig,
    envs: Sequence[Env],
    phi0: Optional[np.ndarray] = None,
) -> MetaResult:
    """Meta angle training.

    Every epoch collects one episode per environment (their union forms
    the batch), takes one Adam step on the angles and syncs the target
    angles every `target_period` epochs. The meta poles stay at zero.
    """
    init_seed, run_seed = np.random.SeedSequence(train_config.seed).spawn(2)
    if phi0 is None:
        phi0 = qnn.random_angles(config, np.random.default_rng(init_seed))
    theta = qnn.zero_poles(config)
    state = TrainState(
        phi=np.array(phi0, dtype=np.float64),
        phi_target=np.array(phi0, dtype=np.float64),
        poles=theta[None, :],
        poles_target=theta[None, :],
        target_period=train_config.target_period,
    )
    opt = init_optimizer(config.num_angles, train_config.learning_rate, train_config.weight_decay)
    episode_seeds = iter(run_seed.spawn(train_config.meta_epochs * len(envs)))
    losses = np.zeros(train_config.meta_epochs)

    for epoch in range(train_config.meta_epochs):
        epsilon = train_config.epsilon(epoch, train_config.meta_epochs)
        batch: Episode = []
        for env in envs:
            actor = MetaActor(
                state.phi, theta, config, train_config.noise, train_config.temperature, epsilon
            )
            partners = [uniform_policy(env.num_actions)] * (env.num_agents - 1)
            episode = rollout(env, [actor] + partners, next(episode_seeds))
            batch.extend(replace(t, pole_noise=n) for t, n in zip(episode, actor.noises))
        loss, grad = meta_loss_and_grad(state.phi, state.phi_target, theta, batch, config)
        state.phi, opt = adam_update(state.phi, grad, opt)
        state.epoch = epoch + 1
        if state.sync_due():
            state.sync_angles()
        losses[epoch] = loss
        if state.epoch % train_config.log_every == 0:
            window = losses[max(0, epoch + 1 - train_config.log_every) : epoch + 1]
            logger.info("meta epoch %d: mean loss %.4f", state.epoch, window.mean())
    return MetaResult(phi=state.phi, phi_target=state.phi_target, losses=losses)


@dataclass
class PoleResult:
    poles: np.ndarray
    poles_target: np.ndarray
    losses: np.ndarray
    returns: np.ndarray
    """Greedy joint return after every epoch"""
    trajectory: np.ndarray
    """Poles before training and after every epoch, (epochs + 1, agents, 2L)"""
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    opt: Optional[OptimizerState] = None
    best_poles: np.ndarray = field(default_factory=lambda: np.zeros(0))
    """Poles of the first evaluation with the highest greedy return"""
    best_return: float = -np.inf
    best_epoch: int = 0
    """0 when no epoch beat the initial poles"""


def train_pole(
    config: QnnConfig,
    train_config: TrainConfig,
    env: Env,
    phi: np.ndarray,
    init_poles: Optional[np.ndarray] = None,
    opt: Optional[OptimizerState] = None,
    distance_fn: Optional[DistanceFn] = None,
    epochs: Optional[int] = None,
) -> PoleResult:
    """Local pole training with the angles frozen.

    All agents act on their own local Q-networks. Each epoch takes one
    Adam step on every agent's poles against the VDN loss, syncs the
    target poles every `target_period` epochs and records the greedy
    return (and `distance_fn(poles)` if given). The poles of the best
    greedy evaluation, the initial poles included, are kept alongside the
    final ones.
    """
    epochs = train_config.pole_epochs if epochs is None else epochs
    num_agents = env.num_agents
    cache = ReducedStateCache(phi, config)
    poles = (
        np.zeros((num_agents, config.num_poles))
        if init_poles is None
        else np.array(init_poles, dtype=np.float64).reshape(num_agents, config.num_poles)
    )
    state = TrainState(
        phi=cache.phi,
        phi_target=cache.phi,
        poles=poles,
        poles_target=poles.copy(),
        target_period=train_config.target_period,
    )
    if opt is None:
        opt = init_optimizer(poles.size, train_config.learning_rate, train_config.weight_decay)
    rollout_seed, eval_seed = np.random.SeedSequence(train_config.seed).spawn(2)
    episode_seeds = rollout_seed.spawn(epochs)
    eval_root = int(eval_seed.generate_state(1)[0])
    best_poles = state.poles.copy()
    best_return = evaluate_greedy(env, cache, state.poles, train_config.eval_episodes, eval_root)
    best_epoch = 0

    losses = np.zeros(epochs)
    returns = np.zeros(epochs)
    distances = np.zeros(epochs if distance_fn else 0)
    trajectory = [state.poles.copy()]
    for epoch in range(epochs):
        epsilon = train_config.epsilon(epoch, epochs)
        actors = [
            LocalActor(cache, state.poles[n], train_config.temperature, epsilon)
            for n in range(num_agents)
        ]
        episode = rollout(env, actors, episode_seeds[epoch])
        loss, grad = pole_loss_and_grad(
            state.poles, state.poles_target, cache.phi, episode, config, cache
        )
        flat, opt = adam_update(state.poles.ravel(), grad.ravel(), opt)
        state.poles = flat.reshape(state.poles.shape)
        state.epoch = epoch + 1
        if state.sync_due():
            state.sync_poles()
        losses[epoch] = loss
        returns[epoch] = evaluate_greedy(
            env, cache, state.poles, train_config.eval_episodes, eval_root
        )
        if returns[epoch] > best_return:
            best_poles, best_return, best_epoch = state.poles.copy(), returns[epoch], epoch + 1
        if distance_fn:
            distances[epoch] = distance_fn(state.poles)
        trajectory.append(state.poles.copy())
        if state.epoch % train_config.log_every == 0:
            logger.info(
                "pole epoch %d: loss %.4f, greedy return %.3f",
                state.epoch,
                loss,
                returns[epoch],
            )
    return PoleResult(
        poles=state.poles,
        poles_target=state.poles_target,
        losses=losses,
        returns=returns,
        trajectory=np.array(trajectory),
        distances=distances,
        opt=opt,
        best_poles=best_poles,
        best_return=float(best_return),
        best_epoch=best_epoch,
    )


def ctde_loss_and_grad(
    phis: np.ndarray,
    phis_target: np.ndarray,
    episode: Episode,
    config: QnnConfig,
) -> Tuple[float, np.ndarray]:
    """VDN loss over every agent's own angles, poles fixed at zero.

    The residual is the one of `pole_td_loss`; the gradient flows into
    the angles instead of the poles, shape (agents, |phi|).
    """
    _check_episode(episode)
    phis = np.atleast_2d(phis)
    _check_agents(phis, episode)
    num_agents = phis.shape[0]
    theta = qnn.zero_poles(config)
    phis_target = np.atleast_2d(phis_target)
    targets = [ReducedStateCache(phis_target[n], config) for n in range(num_agents)]
    beta = config.beta
    loss = 0.0
    grad = np.zeros_like(phis)
    for transition in episode:
        difference = 0.0
        grads = []
        for n in range(num_agents):
            if not transition.terminal:
                next_values = targets[n].observables(transition.next_joint_obs[n], theta)
                difference += beta * np.max(next_values)
            values, angle_grads = qnn.observables_with_angle_grads(
                transition.joint_obs[n], phis[n], theta, config
            )
            action = transition.joint_action[n]
            difference -= beta * values[action]
            grads.append(angle_grads[action])
        residual = transition.reward + difference / num_agents
        loss += residual**2
        for n in range(num_agents):
            grad[n] += residual * grads[n]
    scale = len(episode)
    return loss / scale, -2 * beta * grad / (num_agents * scale)


@dataclass
class CtdeResult:
    phis: np.ndarray
    """Angles of every agent, (agents, |phi|)"""
    losses: np.ndarray
    returns: np.ndarray


def train_ctde(
    config: QnnConfig, train_config: TrainConfig, env: Env, epochs: Optional[int] = None
) -> CtdeResult:
    """Baseline that trains every agent's angles on the VDN loss.

    No meta stage, no pole split and no pole noise: each agent owns a
    randomly initialized circuit measured along the fixed Z axes, and the
    whole angle vector is fitted by Adam with target angles synced every
    `target_period` epochs.
    """
    epochs = train_config.pole_epochs if epochs is None else epochs
    num_agents = env.num_agents
    init_seed, rollout_seed, eval_seed = np.random.SeedSequence(train_config.seed).spawn(3)
    rng = np.random.default_rng(init_seed)
    phis = np.stack([qnn.random_angles(config, rng) for _ in range(num_agents)])
    phis_target = phis.copy()
    theta = np.zeros((num_agents, config.num_poles))
    opt = init_optimizer(phis.size, train_config.learning_rate, train_config.weight_decay)
    episode_seeds = rollout_seed.spawn(epochs)
    eval_root = int(eval_seed.generate_state(1)[0])

    losses = np.zeros(epochs)
    returns = np.zeros(epochs)
    for epoch in range(epochs):
        epsilon = train_config.epsilon(epoch, epochs)
        caches = [ReducedStateCache(phis[n], config) for n in range(num_agents)]
        actors = [
            LocalActor(caches[n], theta[n], train_config.temperature, epsilon)
            for n in range(num_agents)
        ]
        episode = rollout(env, actors, episode_seeds[epoch])
        loss, grad = ctde_loss_and_grad(phis, phis_target, episode, config)
        flat, opt = adam_update(phis.ravel(), grad.ravel(), opt)
        phis = flat.reshape(phis.shape)
        if (epoch + 1) % train_config.target_period == 0:
            phis_target = phis.copy()
        losses[epoch] = loss
        caches = [ReducedStateCache(phis[n], config) for n in range(num_agents)]
        returns[epoch] = evaluate_greedy(env, caches, theta, train_config.eval_episodes, eval_root)
        if (epoch + 1) % train_config.log_every == 0:
            logger.info(
                "ctde epoch %d: loss %.4f, greedy return %.3f", epoch + 1, loss, returns[epoch]
            )
    return CtdeResult(phis=phis, losses=losses, returns=returns)


def no_pretrain_angles(config: QnnConfig, seed: int) -> np.ndarray:
    """Untrained angles for pole training without a meta stage."""
    init_seed, _ = np.random.SeedSequence(seed).spawn(2)
    return qnn.random_angles(config, np.random.default_rng(init_seed))


@dataclass
class PhaseRecord:
    phase: int
    variant: str
    distances: np.ndarray
    reference_distance: float
    """Distance of the zero-pole meta model in this phase's environment"""
    start_distance: float
    """Distance of the poles the phase starts from"""
    poles: np.ndarray


@dataclass
class ContinualResult:
    phi: np.ndarray
    phases: List[PhaseRecord]
    memory: PoleMemoryStore
    memory_enabled: bool


def phase_seed(seed: int, phase: int) -> int:
    """Seed of one continual phase, shared by both memory arms."""
    return int(np.random.SeedSequence([seed, phase]).generate_state(1)[0])


def fast_remember(
    config: QnnConfig,
    train_config: TrainConfig,
    schedule: Sequence[str] = ("twostep-a", "twostep-b", "twostep-a"),
    phase_epochs: Optional[int] = None,
    memory: Optional[PoleMemoryStore] = None,
    phi: Optional[np.ndarray] = None,
    use_memory: bool = True,
) -> ContinualResult:
    """Pole training across a schedule of environments.

    Without `phi`, meta angles are first trained on the union of one
    episode per distinct environment of the schedule. With the memory
    enabled, each phase starts from the poles saved under its
    environment's label (the zero "meta" poles if that environment is
    new) with a fresh optimizer; otherwise training simply continues
    from the previous phase's poles and optimizer. Every phase's final
    poles are saved under its environment's label.
    """
    from qm2arl.analysis import optimal_q_distance

    phase_epochs = train_config.pole_epochs if phase_epochs is None else phase_epochs
    envs = {name: make_env(name, config.num_qubits) for name in dict.fromkeys(schedule)}
    if phi is None:
        phi = train_meta(config, train_config, list(envs.values())).phi
    num_agents = next(iter(envs.values())).num_agents
    alpha_degrees = float(np.degrees(train_config.noise.alpha))
    store = memory if memory is not None else new_store(num_agents, config, phi, alpha_degrees)

    poles = np.zeros((num_agents, config.num_poles))
    opt: Optional[OptimizerState] = None
    phases = []
    for phase, variant in enumerate(schedule):
        if use_memory:
            label = variant if variant in store else META_LABEL
            poles = pole_memory_load(store, label)
            opt = None
            logger.info("phase %d (%s): poles restored from '%s'", phase + 1, variant, label)
        else:
            logger.info("phase %d (%s): continuing from previous poles", phase + 1, variant)

        def distance(p: np.ndarray, variant: str = variant) -> float:
            return optimal_q_distance(variant, phi, p, config)

        start_distance = distance(poles)
        result = train_pole(
            config,
            replace(train_config, seed=phase_seed(train_config.seed, phase)),
            envs[variant],
            phi,
            poles,
            opt,
            distance,
            epochs=phase_epochs,
        )
        poles, opt = result.poles, result.opt
        pole_memory_save(
            store, variant, poles, variant=variant, epoch=phase_epochs, alpha_degrees=alpha_degrees
        )
        phases.append(
            PhaseRecord(
                phase=phase + 1,
                variant=variant,
                distances=result.distances,
                reference_distance=distance(np.zeros_like(poles)),
                start_distance=start_distance,
                poles=poles.copy(),
            )
        )
    return ContinualResult(phi=phi, phases=phases, memory=store, memory_enabled=use_memory)


def epochs_to_threshold(curve: np.ndarray, threshold: float) -> int:
    """First epoch count after which `curve` is at or below `threshold`.

    Returns len(curve) + 1 when the threshold is never reached.
    """
    hits = np.flatnonzero(np.asarray(curve) <= threshold)
    return int(hits[0]) + 1 if hits.size else len(curve) + 1
