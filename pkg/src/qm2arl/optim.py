"""Adam with decoupled weight decay for angle-valued parameters.

The update is functional: `adam_update` returns new parameters and a
new optimizer state and leaves its inputs alone. Parameters are wrapped
back onto [-pi, pi) after every step.
"""
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from qm2arl.errors import SizeError
from qm2arl.qnn import wrap_angles


@dataclass(frozen=True)
class OptimizerState:
    """Adam moment estimates and hyperparameters"""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(
    num_params: int, learning_rate: float = 1e-4, weight_decay: float = 1e-5
) -> OptimizerState:
    return OptimizerState(
        first_moment=np.zeros(num_params),
        second_moment=np.zeros(num_params),
        learning_rate=learning_rate,
        weight_decay=weight_decay,
    )


def adam_update(
    params: np.ndarray, grads: np.ndarray, opt: OptimizerState
) -> Tuple[np.ndarray, OptimizerState]:
    """One bias-corrected Adam step with decoupled weight decay.

    p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)

    Args:
        params: current parameter vector
        grads: loss gradient at `params`
        opt: optimizer state matching `params`

    Returns:
        params: updated and wrapped parameter vector
        opt: advanced optimizer state
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not params.shape == grads.shape == opt.first_moment.shape:
        raise SizeError(
            f"parameter {params.shape}, gradient {grads.shape} and optimizer "
            f"{opt.first_moment.shape} shapes differ"
        )
    step = opt.step_count + 1
    first = opt.beta1 * opt.first_moment + (1 - opt.beta1) * grads
    second = opt.beta2 * opt.second_moment + (1 - opt.beta2) * grads * grads
    first_hat = first / (1 - opt.beta1**step)
    second_hat = second / (1 - opt.beta2**step)
    decayed = params * (1 - opt.learning_rate * opt.weight_decay)
    updated = decayed - opt.learning_rate * first_hat / (np.sqrt(second_hat) + opt.eps)
    new_opt = replace(opt, first_moment=first, second_moment=second, step_count=step)
    return wrap_angles(updated), new_opt
