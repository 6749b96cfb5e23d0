"""Minimal dense statevector engine.

Qubits are numbered 1..L externally. Internally the register is
little-endian: bit m of an amplitude index (counting from 0) holds the
basis value of qubit m+1, so |10> (qubit 1 set) is index 1 and |01> is
index 2.

Every operation returns a new array and accepts leading batch
dimensions, so a stack of states (or a stack of gates, one per state)
can be pushed through a circuit in a single call:

>>> state = zero_state(2)
>>> state = apply_1q(state, rotation_gate("y", np.pi), 1)
>>> np.round(state.real, 12)
array([0., 1., 0., 0.])
"""
from functools import lru_cache
from typing import Union

import numpy as np

from qm2arl.errors import ArgumentError, DomainError, QubitIndexError, SizeError

MAX_QUBITS = 12

Statevector = np.ndarray
"""complex128 array of shape (..., 2**L)"""
Gate2x2 = np.ndarray
"""complex128 array of shape (..., 2, 2)"""
Angle = Union[float, np.ndarray]

IDENTITY = np.eye(2, dtype=np.complex128)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)


def zero_state(num_qubits: int) -> Statevector:
    """Prepare |0...0> on `num_qubits` qubits."""
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise SizeError(f"qubit count must lie in [1, {MAX_QUBITS}], got {num_qubits}")
    state = np.zeros(1 << num_qubits, dtype=np.complex128)
    state[0] = 1.0
    return state


def num_qubits_of(state: Statevector) -> int:
    """Infer L from the last axis of a (possibly batched) state."""
    dim = state.shape[-1]
    num_qubits = dim.bit_length() - 1
    if dim < 2 or (1 << num_qubits) != dim:
        raise SizeError(f"state length {dim} is not a power of two")
    return num_qubits


def rotation_gate(axis: str, delta: Angle) -> Gate2x2:
    """Build exp(-i delta/2 P) for P in {X, Y, Z}.

    Args:
        axis: one of "x", "y", "z"
        delta: rotation angle in radians, or an array of angles; an
            array of shape S gives gates of shape S + (2, 2)

    Returns: the rotation matrix (or stack of matrices)
    """
    delta = np.asarray(delta, dtype=np.float64)
    if not np.all(np.isfinite(delta)):
        raise DomainError("rotation angle must be finite")
    c = np.cos(delta / 2)
    s = np.sin(delta / 2)
    gate = np.zeros(delta.shape + (2, 2), dtype=np.complex128)
    if axis == "x":
        gate[..., 0, 0] = c
        gate[..., 0, 1] = -1j * s
        gate[..., 1, 0] = -1j * s
        gate[..., 1, 1] = c
    elif axis == "y":
        gate[..., 0, 0] = c
        gate[..., 0, 1] = -s
        gate[..., 1, 0] = s
        gate[..., 1, 1] = c
    elif axis == "z":
        gate[..., 0, 0] = np.exp(-0.5j * delta)
        gate[..., 1, 1] = np.exp(0.5j * delta)
    else:
        raise DomainError(f"unknown rotation axis '{axis}'")
    return gate


def is_unitary(gate: Gate2x2, atol: float = 1e-12) -> bool:
    """Check U^dagger U = I entrywise within `atol`."""
    product = np.conj(np.swapaxes(gate, -1, -2)) @ gate
    return bool(np.max(np.abs(product - IDENTITY)) <= atol)


def is_hermitian(obs: Gate2x2, atol: float = 1e-12) -> bool:
    """Check M = M^dagger entrywise within `atol`."""
    return bool(np.max(np.abs(obs - np.conj(np.swapaxes(obs, -1, -2)))) <= atol)


def _check_qubit(qubit: int, num_qubits: int) -> None:
    if not 1 <= qubit <= num_qubits:
        raise QubitIndexError(f"qubit {qubit} out of range 1..{num_qubits}")


def _split_on(state: Statevector, qubit: int) -> np.ndarray:
    # (..., high bits, target bit, low bits)
    num_qubits = num_qubits_of(state)
    _check_qubit(qubit, num_qubits)
    low = 1 << (qubit - 1)
    return state.reshape(state.shape[:-1] + (-1, 2, low))


def apply_1q(state: Statevector, gate: Gate2x2, target: int) -> Statevector:
    """Apply a single-qubit gate to qubit `target` (1-based).

    A gate stack of shape B + (2, 2) is paired element-wise with a state
    stack of shape B + (2**L,).
    """
    split = _split_on(state, target)
    gate = np.asarray(gate, dtype=np.complex128)
    out = gate[..., None, :, :] @ split
    return out.reshape(out.shape[:-3] + (-1,))


@lru_cache(maxsize=None)
def _cnot_permutation(num_qubits: int, control: int, target: int) -> np.ndarray:
    index = np.arange(1 << num_qubits)
    control_set = (index >> (control - 1)) & 1
    return index ^ (control_set << (target - 1))


def apply_cnot(state: Statevector, control: int, target: int) -> Statevector:
    """Flip `target` on every basis state whose `control` bit is 1."""
    num_qubits = num_qubits_of(state)
    _check_qubit(control, num_qubits)
    _check_qubit(target, num_qubits)
    if control == target:
        raise ArgumentError("CNOT control and target must differ")
    return state[..., _cnot_permutation(num_qubits, control, target)]


def reduced_density(state: Statevector, qubit: int) -> np.ndarray:
    """Trace out every qubit except `qubit`, giving a (..., 2, 2) matrix."""
    split = _split_on(state, qubit)
    return np.einsum("...ail,...ajl->...ij", split, np.conj(split))


def expect_from_density(rho: np.ndarray, obs: Gate2x2) -> np.ndarray:
    """Tr(rho M) for stacks of reduced states and/or observables."""
    value = np.einsum("...ij,...ji->...", rho, obs)
    if np.max(np.abs(np.imag(value)), initial=0.0) > 1e-10:
        raise DomainError("expectation has a non-negligible imaginary part")
    return np.real(value)


def expect_1q(state: Statevector, obs: Gate2x2, qubit: int) -> Union[float, np.ndarray]:
    """Expectation of a Hermitian single-qubit observable on `qubit`.

    Computes <psi| 1 x .. x M x .. x 1 |psi> through the qubit's reduced
    density matrix.
    """
    obs = np.asarray(obs, dtype=np.complex128)
    if not is_hermitian(obs):
        raise DomainError("observable is not Hermitian")
    value = expect_from_density(reduced_density(state, qubit), obs)
    return float(value) if np.ndim(value) == 0 else value
