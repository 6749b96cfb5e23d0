"""Quantum Q-network with trainable circuit angles and measurement poles.

The network encodes an observation one angle per qubit, runs a layered
parameterized circuit, and measures each action's qubits along axes set
by pole parameters:

    Q(o, a; phi, theta) = beta * sum_{m in M_a} <psi_{o,phi}| M(theta_m) |psi_{o,phi}>

Angles (phi) are laid out flat as (layer, qubit, axis slot), three slots
per qubit per layer. Poles (theta) hold a (polar, azimuth) pair for every
qubit 1..L, flat as [polar_1, azimuth_1, polar_2, ...]; pairs of qubits
that no action measures never change Q.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from qm2arl import qcore
from qm2arl.errors import DomainError, SizeError, UnknownActionError

ROTATION_ORDER = ("x", "y", "z")
SHIFT = np.pi / 2
DEFAULT_BETA = 8.0
ACTION_MAPS = ("single", "shared")

Observation = np.ndarray
AngleParams = np.ndarray
PoleParams = np.ndarray


@dataclass(frozen=True)
class QnnConfig:
    """Architecture of a Q-network"""

    num_qubits: int = 3
    """Register size L"""
    depth: int = 5
    """Number of circuit layers D"""
    beta: float = DEFAULT_BETA
    """Scale from observable expectation to Q-value"""
    action_qubits: Tuple[Tuple[int, ...], ...] = ((2,), (3,))
    """Entry a lists the measured qubits M_a of action a"""

    def __post_init__(self):
        if not 1 <= self.num_qubits <= qcore.MAX_QUBITS:
            raise SizeError(f"num_qubits must lie in [1, {qcore.MAX_QUBITS}]")
        if self.depth < 0:
            raise SizeError("depth must be nonnegative")
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if not self.action_qubits:
            raise SizeError("at least one action is required")
        for action, qubits in enumerate(self.action_qubits):
            if not qubits:
                raise SizeError(f"action {action} measures no qubit")
            for qubit in qubits:
                if not 1 <= qubit <= self.num_qubits:
                    raise SizeError(f"action {action} measures missing qubit {qubit}")

    @property
    def num_actions(self) -> int:
        return len(self.action_qubits)

    @property
    def num_angles(self) -> int:
        return 3 * self.num_qubits * self.depth

    @property
    def num_poles(self) -> int:
        return 2 * self.num_qubits

    @property
    def measured_qubits(self) -> Tuple[int, ...]:
        return tuple(sorted({q for qubits in self.action_qubits for q in qubits}))

    def action_matrix(self) -> np.ndarray:
        """0/1 matrix of shape (actions, L) marking each M_a."""
        matrix = np.zeros((self.num_actions, self.num_qubits))
        for action, qubits in enumerate(self.action_qubits):
            for qubit in qubits:
                matrix[action, qubit - 1] = 1.0
        return matrix


def action_qubit_map(
    num_actions: int, first_qubit: int = 1, shared_qubit: Optional[int] = None
) -> Tuple[Tuple[int, ...], ...]:
    """Action a measures qubit first_qubit + a, plus `shared_qubit` when given.

    A shared qubit adds the same per-observation term to every action of
    an agent, so its Q-values span [-2 beta, 2 beta].
    """
    if shared_qubit is None:
        return tuple((first_qubit + a,) for a in range(num_actions))
    return tuple((shared_qubit, first_qubit + a) for a in range(num_actions))


def wrap_angles(values: np.ndarray) -> np.ndarray:
    """Map angles onto [-pi, pi] by wrap-around; in-range values pass unchanged."""
    values = np.asarray(values, dtype=np.float64)
    outside = (values < -np.pi) | (values > np.pi)
    return np.where(outside, np.mod(values + np.pi, 2 * np.pi) - np.pi, values)


def zero_angles(config: QnnConfig) -> AngleParams:
    return np.zeros(config.num_angles)


def zero_poles(config: QnnConfig) -> PoleParams:
    return np.zeros(config.num_poles)


def random_angles(config: QnnConfig, rng: np.random.Generator) -> AngleParams:
    return rng.uniform(-np.pi, np.pi, config.num_angles)


def check_action(action: int, config: QnnConfig) -> None:
    if not 0 <= action < config.num_actions:
        raise UnknownActionError(f"action {action} has no measured qubits")


def encode(o: Observation, config: QnnConfig) -> qcore.Statevector:
    """Prepare the product state of R_y(o_k)|0> over all qubits."""
    o = np.asarray(o, dtype=np.float64)
    if o.shape != (config.num_qubits,):
        raise SizeError(f"observation needs {config.num_qubits} angles, got {o.shape}")
    if np.any(o < -1e-12) or np.any(o > np.pi + 1e-12):
        raise DomainError("observation angles must lie in [0, pi]")
    state = qcore.zero_state(config.num_qubits)
    for qubit, angle in enumerate(o, start=1):
        state = qcore.apply_1q(state, qcore.rotation_gate("y", angle), qubit)
    return state


def pqc_forward(
    state: qcore.Statevector, phi: AngleParams, config: QnnConfig
) -> qcore.Statevector:
    """Run the layered circuit.

    Each layer rotates every qubit by R_x, then R_y, then R_z, and then
    applies a ring of CNOTs with control q and target (q mod L) + 1. A
    stack of angle vectors of shape B + (|phi|,) gives a stack of states.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[-1] != config.num_angles:
        raise SizeError(f"expected {config.num_angles} angles, got {phi.shape[-1]}")
    if qcore.num_qubits_of(state) != config.num_qubits:
        raise SizeError("state and network disagree on the qubit count")
    num_qubits = config.num_qubits
    angles = phi.reshape(phi.shape[:-1] + (config.depth, num_qubits, 3))
    for layer in range(config.depth):
        for qubit in range(1, num_qubits + 1):
            slots = angles[..., layer, qubit - 1, :]
            gate = qcore.IDENTITY
            for slot, axis in enumerate(ROTATION_ORDER):
                gate = qcore.rotation_gate(axis, slots[..., slot]) @ gate
            state = qcore.apply_1q(state, gate, qubit)
        if num_qubits > 1:
            for qubit in range(1, num_qubits + 1):
                state = qcore.apply_cnot(state, qubit, qubit % num_qubits + 1)
    return state


def pole_observable(theta_polar, theta_azimuth) -> qcore.Gate2x2:
    """Measurement operator U^dagger Z U with U = R_y(polar) R_z(azimuth).

    Hermitian with eigenvalues +1 and -1; the measurement axis on the
    Bloch sphere is (-sin p cos a, sin p sin a, cos p).
    """
    rotation = qcore.rotation_gate("y", theta_polar) @ qcore.rotation_gate(
        "z", theta_azimuth
    )
    return np.conj(np.swapaxes(rotation, -1, -2)) @ qcore.PAULI_Z @ rotation


def pole_observables(theta: PoleParams) -> np.ndarray:
    """One observable per qubit, shape (..., L, 2, 2)."""
    theta = np.asarray(theta, dtype=np.float64)
    pairs = theta.reshape(theta.shape[:-1] + (-1, 2))
    return pole_observable(pairs[..., 0], pairs[..., 1])


def reduced_states(o: Observation, phi: AngleParams, config: QnnConfig) -> np.ndarray:
    """Single-qubit reduced density matrices of |psi_{o,phi}>, (..., L, 2, 2)."""
    state = pqc_forward(encode(o, config), phi, config)
    return np.stack(
        [qcore.reduced_density(state, q) for q in range(1, config.num_qubits + 1)],
        axis=-3,
    )


def observable_values(
    rhos: np.ndarray, theta: PoleParams, config: QnnConfig
) -> np.ndarray:
    """Unscaled <O_a> for every action, shape (..., actions).

    `rhos` and `theta` broadcast against each other, so one set of
    reduced states can be measured under a whole stack of pole vectors.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != config.num_poles:
        raise SizeError(f"expected {config.num_poles} pole angles, got {theta.shape[-1]}")
    per_qubit = qcore.expect_from_density(rhos, pole_observables(theta))
    return per_qubit @ config.action_matrix().T


def q_values_all(
    o: Observation, phi: AngleParams, theta: PoleParams, config: QnnConfig
) -> np.ndarray:
    """Q-values of every action from a single circuit evaluation."""
    return config.beta * observable_values(reduced_states(o, phi, config), theta, config)


def q_value(
    o: Observation, a: int, phi: AngleParams, theta: PoleParams, config: QnnConfig
) -> float:
    check_action(a, config)
    return float(q_values_all(o, phi, theta, config)[a])


def softmax_policy(q_values: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """softmax(q / temperature), computed stably."""
    if not temperature > 0:
        raise DomainError("temperature must be positive")
    logits = np.asarray(q_values, dtype=np.float64) / temperature
    logits = logits - np.max(logits, axis=-1, keepdims=True)
    weights = np.exp(logits)
    return weights / np.sum(weights, axis=-1, keepdims=True)


def policy(
    o: Observation,
    phi: AngleParams,
    theta: PoleParams,
    config: QnnConfig,
    temperature: float = 1.0,
) -> np.ndarray:
    """Action distribution given by the softmax of the Q-values."""
    if not temperature > 0:
        raise DomainError("temperature must be positive")
    return softmax_policy(q_values_all(o, phi, theta, config), temperature)


def _shifted(params: np.ndarray, shift: float) -> np.ndarray:
    eye = np.eye(params.shape[-1])
    return np.concatenate([params + shift * eye, params - shift * eye])


def observables_with_angle_grads(
    o: Observation, phi: AngleParams, theta: PoleParams, config: QnnConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """<O_a> and d<O_a>/dphi for every action.

    The unshifted circuit and all 2|phi| shifted circuits run as one
    batch; derivatives use the exact +-pi/2 shift rule.

    Returns:
        values: shape (actions,)
        grads: shape (actions, |phi|)
    """
    phi = np.asarray(phi, dtype=np.float64)
    batch = np.concatenate([phi[None, :], _shifted(phi, SHIFT)])
    values = observable_values(reduced_states(o, batch, config), theta, config)
    half = phi.shape[-1]
    return values[0], (values[1 : half + 1] - values[half + 1 :]).T / 2


def angle_observable_grads(
    o: Observation, phi: AngleParams, theta: PoleParams, config: QnnConfig
) -> np.ndarray:
    """d<O_a>/dphi for every action, shape (actions, |phi|)."""
    return observables_with_angle_grads(o, phi, theta, config)[1]


def pole_observable_grads(
    rhos: np.ndarray, theta: PoleParams, config: QnnConfig
) -> np.ndarray:
    """d<O_a>/dtheta for every action by the shift rule, (actions, 2L).

    A pole shift only changes the measurement, so the reduced states of
    one circuit evaluation serve every coordinate.
    """
    theta = np.asarray(theta, dtype=np.float64)
    values = observable_values(rhos, _shifted(theta, SHIFT), config)
    half = theta.shape[-1]
    return (values[:half] - values[half:]).T / 2


def grad_angle_shift(
    o: Observation, a: int, phi: AngleParams, theta: PoleParams, config: QnnConfig
) -> np.ndarray:
    """Exact d<O_a>/dphi (not scaled by beta)."""
    check_action(a, config)
    return angle_observable_grads(o, phi, theta, config)[a]


def grad_pole_shift(
    o: Observation, a: int, phi: AngleParams, theta: PoleParams, config: QnnConfig
) -> np.ndarray:
    """Exact d<O_a>/dtheta over all 2L pole slots, zero outside M_a."""
    check_action(a, config)
    return pole_observable_grads(reduced_states(o, phi, config), theta, config)[a]


def grad_fd(
    o: Observation,
    a: int,
    phi: AngleParams,
    theta: PoleParams,
    config: QnnConfig,
    domain: str = "angle",
    c: float = 1e-4,
) -> np.ndarray:
    """Central finite difference of <O_a> in the angle or pole domain.

    Independent of the shift rule, used as a gradient oracle.
    """
    check_action(a, config)
    if not 0 < c <= 1e-2:
        raise DomainError(f"finite-difference step must lie in (0, 1e-2], got {c}")
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if domain == "angle":
        values = observable_values(reduced_states(o, _shifted(phi, c), config), theta, config)
        half = phi.shape[-1]
    elif domain == "pole":
        values = observable_values(reduced_states(o, phi, config), _shifted(theta, c), config)
        half = theta.shape[-1]
    else:
        raise DomainError(f"unknown parameter domain '{domain}'")
    return (values[:half, a] - values[half:, a]) / (2 * c)
