"""Cooperative multi-agent environments.

Two games share one interface (`reset` / `step`, team reward):

* the two-step matrix game, in its main form and the two reward
  variants used for continual learning (Env A and Env B), and
* the single-hop offloading queue game with four edge agents and two
  clouds.

Observations are vectors of encoding angles in [0, pi], one entry per
qubit of the Q-network that will consume them.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from qm2arl.errors import DomainError, EnvStateError, SizeError

logger = logging.getLogger(__name__)

JointObservation = Tuple[np.ndarray, ...]
Seed = Union[None, int, np.random.SeedSequence]
Policy = Callable[[np.ndarray, np.random.Generator], int]

TWOSTEP_VARIANTS = ("twostep-main", "twostep-a", "twostep-b")
ENV_NAMES = TWOSTEP_VARIANTS + ("singlehop",)
TWOSTEP_STATES = ("s1", "s2", "s3")


@dataclass(frozen=True)
class Transition:
    """One joint step <o, a, r, o'> of a team"""

    joint_obs: JointObservation
    joint_action: Tuple[int, ...]
    reward: float
    next_joint_obs: JointObservation
    terminal: bool
    pole_noise: Optional[np.ndarray] = None
    """Pole noise the acting meta agent drew at collection time, if any"""

    def __post_init__(self):
        if not len(self.joint_obs) == len(self.joint_action) == len(self.next_joint_obs):
            raise SizeError("transition fields disagree on the agent count")

    @property
    def num_agents(self) -> int:
        return len(self.joint_action)


Episode = List[Transition]


def _fit_to_qubits(angles: Sequence[float], num_qubits: int) -> np.ndarray:
    fitted = np.zeros(num_qubits)
    count = min(len(angles), num_qubits)
    fitted[:count] = angles[:count]
    return fitted


def twostep_reward_tables(variant: str) -> Dict[str, np.ndarray]:
    """Per-state 2x2 payoff matrices, indexed [action of agent 1, action of agent 2]."""
    if variant == "twostep-main":
        s2_payoff, s3_matrix = 7.0, [[0.0, 1.0], [1.0, 8.0]]
    elif variant == "twostep-a":
        s2_payoff, s3_matrix = 4.0, [[0.0, 1.0], [1.0, 8.0]]
    elif variant == "twostep-b":
        s2_payoff, s3_matrix = 4.0, [[8.0, 1.0], [1.0, 1.0]]
    else:
        raise DomainError(f"unknown two-step variant '{variant}'")
    return {
        "s1": np.zeros((2, 2)),
        "s2": np.full((2, 2), s2_payoff),
        "s3": np.array(s3_matrix),
    }


class TwoStepEnv:
    """Two-agent, two-step matrix game.

    The game starts in s1, where the first agent's action alone picks
    the next state (0 -> s2, 1 -> s3). Both agents then act once more,
    receive the payoff of that state's table and the episode ends.

    Each agent observes (state, agent id, step) as angles: s1/s2/s3 map
    to 0, pi/2, pi; agents 0/1 map to 0, pi; steps 0/1 map to 0, pi/2.
    The triple is zero-padded or truncated to the qubit count.
    """

    num_agents = 2
    num_actions = 2
    horizon = 2

    _STATE_ANGLES = {"s1": 0.0, "s2": np.pi / 2, "s3": np.pi}
    _STEP_ANGLES = (0.0, np.pi / 2)

    def __init__(self, variant: str = "twostep-main", num_qubits: int = 3):
        self.variant = variant
        self.num_qubits = num_qubits
        self.reward_tables = twostep_reward_tables(variant)
        self.state = "s1"
        self.step_index = 0

    def observe(self, state: str, step_index: int) -> JointObservation:
        """Joint observation of both agents in `state` at `step_index`."""
        if state not in self._STATE_ANGLES:
            raise DomainError(f"unknown two-step state '{state}'")
        return tuple(
            _fit_to_qubits(
                [self._STATE_ANGLES[state], np.pi * agent, self._STEP_ANGLES[step_index]],
                self.num_qubits,
            )
            for agent in range(self.num_agents)
        )

    def probe_observations(self) -> Dict[str, JointObservation]:
        """The joint observation an agent team sees in each of s1, s2, s3."""
        return {
            "s1": self.observe("s1", 0),
            "s2": self.observe("s2", 1),
            "s3": self.observe("s3", 1),
        }

    def reset(self, seed: Seed = None) -> JointObservation:
        self.state = "s1"
        self.step_index = 0
        return self.observe(self.state, self.step_index)

    def step(self, joint_action: Sequence[int]) -> Tuple[Transition, bool]:
        if self.state == "done":
            raise EnvStateError("two-step episode already finished; reset first")
        if len(joint_action) != self.num_agents:
            raise SizeError(f"expected {self.num_agents} actions, got {len(joint_action)}")
        if any(a not in (0, 1) for a in joint_action):
            raise DomainError(f"two-step actions must be 0 or 1, got {joint_action}")
        first, second = (int(a) for a in joint_action)
        obs = self.observe(self.state, self.step_index)
        reward = float(self.reward_tables[self.state][first, second])
        if self.state == "s1":
            self.state = "s2" if first == 0 else "s3"
            self.step_index = 1
            next_obs = self.observe(self.state, self.step_index)
            terminal = False
        else:
            # terminal; the bootstrap term ignores next_obs
            next_obs = obs
            self.state = "done"
            terminal = True
        transition = Transition(obs, (first, second), reward, next_obs, terminal)
        return transition, terminal


def twostep_optimal_q(variant: str, opponent_model: str = "uniform") -> Dict[str, np.ndarray]:
    """Exact optimal action values of the two-step game (no discount).

    Args:
        variant: one of TWOSTEP_VARIANTS
        opponent_model: "uniform" gives the first agent's Q*(s, a) when
            its partner acts uniformly at random, shape (2,) per state;
            "best-response" gives the cooperative joint Q*(s, a1, a2),
            shape (2, 2) per state

    Returns: dict from state label to its table
    """
    tables = twostep_reward_tables(variant)
    if opponent_model == "uniform":
        q = {s: tables[s].mean(axis=1) for s in ("s2", "s3")}
        q["s1"] = tables["s1"].mean(axis=1) + np.array([q["s2"].max(), q["s3"].max()])
    elif opponent_model == "best-response":
        q = {s: tables[s].copy() for s in ("s2", "s3")}
        follow_up = np.array([q["s2"].max(), q["s3"].max()])
        q["s1"] = tables["s1"] + follow_up[:, None]
    else:
        raise DomainError(f"unknown opponent model '{opponent_model}'")
    return {s: q[s] for s in TWOSTEP_STATES}


@dataclass(frozen=True)
class SingleHopParams:
    """Queue dynamics of the single-hop game (queues in chunks)"""

    num_agents: int = 4
    num_clouds: int = 2
    arrival_rate: float = 2.0
    drain_rate: float = 4.0
    small_chunk: float = 1.0
    large_chunk: float = 3.0
    q_target: float = 10.0
    q_max: float = 20.0
    horizon: int = 10
    stochastic_arrivals: bool = False
    """Draw Poisson(arrival_rate) arrivals instead of a constant flow"""


@dataclass
class QueueFlow:
    """Chunk bookkeeping of the last single-hop step"""

    total_before: float = 0.0
    arrived: float = 0.0
    drained: float = 0.0
    total_unclamped: float = 0.0
    clamp_events: int = 0


class SingleHopEnv:
    """Edge-to-cloud offloading with queue-stability reward.

    Every edge agent picks (chunk size, cloud) as action
    a = 2 * size + cloud, with size 0 = small and 1 = large. The chunk
    leaves the agent's queue (at most what is queued) and joins the
    chosen cloud; then new chunks arrive at every edge and every cloud
    drains. The shared reward is the negated sum of relative deviations
    of all queues from q_target, so it never exceeds 0.

    An agent observes (own queue, own previous queue, cloud 1, cloud 2),
    each rescaled from [0, q_max] to [0, pi].
    """

    num_actions = 4

    def __init__(self, params: SingleHopParams = SingleHopParams(), num_qubits: int = 4):
        self.params = params
        self.num_qubits = num_qubits
        self.num_agents = params.num_agents
        self.rng = np.random.default_rng()
        self.edge_queues = np.zeros(params.num_agents)
        self.prev_edge_queues = np.zeros(params.num_agents)
        self.cloud_queues = np.zeros(params.num_clouds)
        self.step_index = 0
        self.flow = QueueFlow()
        self.clamp_events = 0

    def reset(self, seed: Seed = None) -> JointObservation:
        self.rng = np.random.default_rng(seed)
        self.edge_queues = np.full(self.params.num_agents, self.params.q_target)
        self.prev_edge_queues = self.edge_queues.copy()
        self.cloud_queues = np.full(self.params.num_clouds, self.params.q_target)
        self.step_index = 0
        self.flow = QueueFlow()
        self.clamp_events = 0
        return self.observe()

    def observe(self) -> JointObservation:
        scale = np.pi / self.params.q_max
        return tuple(
            _fit_to_qubits(
                [self.edge_queues[n] * scale, self.prev_edge_queues[n] * scale]
                + list(self.cloud_queues * scale),
                self.num_qubits,
            )
            for n in range(self.num_agents)
        )

    def global_state(self) -> np.ndarray:
        """Concatenation of every agent's observation."""
        return np.concatenate(self.observe())

    def reward(self) -> float:
        target = self.params.q_target
        return -float(
            np.sum(np.abs(self.edge_queues - target)) / target
            + np.sum(np.abs(self.cloud_queues - target)) / target
        )

    def step(self, joint_action: Sequence[int]) -> Tuple[Transition, bool]:
        params = self.params
        if self.step_index >= params.horizon:
            raise EnvStateError("single-hop episode already finished; reset first")
        if len(joint_action) != self.num_agents:
            raise SizeError(f"expected {self.num_agents} actions, got {len(joint_action)}")
        if any(a not in range(self.num_actions) for a in joint_action):
            raise DomainError(f"single-hop actions must lie in 0..3, got {joint_action}")

        obs = self.observe()
        total_before = self.edge_queues.sum() + self.cloud_queues.sum()
        self.prev_edge_queues = self.edge_queues.copy()

        for agent, action in enumerate(joint_action):
            size, cloud = divmod(int(action), 2)
            chunk = params.large_chunk if size else params.small_chunk
            moved = min(chunk, self.edge_queues[agent])
            self.edge_queues[agent] -= moved
            self.cloud_queues[cloud % params.num_clouds] += moved

        if params.stochastic_arrivals:
            arrivals = self.rng.poisson(params.arrival_rate, self.num_agents).astype(float)
        else:
            arrivals = np.full(self.num_agents, params.arrival_rate)
        self.edge_queues += arrivals
        drained = np.minimum(self.cloud_queues, params.drain_rate)
        self.cloud_queues -= drained

        total_unclamped = self.edge_queues.sum() + self.cloud_queues.sum()
        clamp_events = int(np.sum(self.edge_queues > params.q_max)) + int(
            np.sum(self.cloud_queues > params.q_max)
        )
        self.edge_queues = np.clip(self.edge_queues, 0.0, params.q_max)
        self.cloud_queues = np.clip(self.cloud_queues, 0.0, params.q_max)
        self.clamp_events += clamp_events
        self.flow = QueueFlow(
            total_before=float(total_before),
            arrived=float(arrivals.sum()),
            drained=float(drained.sum()),
            total_unclamped=float(total_unclamped),
            clamp_events=clamp_events,
        )
        if clamp_events:
            logger.debug("single-hop step %d clamped %d queues", self.step_index, clamp_events)

        self.step_index += 1
        done = self.step_index >= params.horizon
        transition = Transition(
            obs, tuple(int(a) for a in joint_action), self.reward(), self.observe(), done
        )
        return transition, done


Env = Union[TwoStepEnv, SingleHopEnv]


def make_env(name: str, num_qubits: int, singlehop: Optional[SingleHopParams] = None) -> Env:
    """Build an environment by its configuration name."""
    if name in TWOSTEP_VARIANTS:
        return TwoStepEnv(name, num_qubits)
    if name == "singlehop":
        return SingleHopEnv(singlehop or SingleHopParams(), num_qubits)
    raise DomainError(f"unknown environment '{name}', expected one of {ENV_NAMES}")


def uniform_policy(num_actions: int) -> Policy:
    """A policy that ignores its observation and acts uniformly."""

    def act(obs: np.ndarray, rng: np.random.Generator) -> int:
        return int(rng.integers(num_actions))

    return act


@dataclass
class RolloutSeeds:
    """Independent streams for the environment and the policies"""

    seed: Seed
    env: np.random.SeedSequence = field(init=False)
    policy: np.random.SeedSequence = field(init=False)

    def __post_init__(self):
        root = (
            self.seed
            if isinstance(self.seed, np.random.SeedSequence)
            else np.random.SeedSequence(self.seed)
        )
        self.env, self.policy = root.spawn(2)


def rollout(env: Env, policies: Sequence[Policy], seed: Seed = None) -> Episode:
    """Play one full episode with one policy per agent.

    Deterministic given the seed and deterministic-given-rng policies.
    """
    if len(policies) != env.num_agents:
        raise SizeError(f"expected {env.num_agents} policies, got {len(policies)}")
    seeds = RolloutSeeds(seed)
    rng = np.random.default_rng(seeds.policy)
    joint_obs = env.reset(seed=seeds.env)
    episode: Episode = []
    done = False
    while not done:
        joint_action = tuple(int(p(o, rng)) for p, o in zip(policies, joint_obs))
        transition, done = env.step(joint_action)
        episode.append(transition)
        joint_obs = transition.next_joint_obs
    return episode


def episode_return(episode: Episode) -> float:
    return float(sum(t.reward for t in episode))
