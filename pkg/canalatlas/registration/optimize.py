# SPDX-License-Identifier: GPL-3.0-or-later
import logging
from typing import NamedTuple

import numpy as np


__all__ = ['OptimizationResult', 'gradient_descent']
log = logging.getLogger(__name__)

# The step grows by this factor after each accepted step
STEP_GROWTH = 1.5


class OptimizationResult(NamedTuple):
    """The outcome of one gradient descent run."""

    parameters: np.ndarray
    value: float
    gradient_norm: float
    iterations: int
    accepted: int


def _format_parts(parts):
    return ' '.join(f'{key}={value:.6g}' for key, value in parts.items())


def gradient_descent(
    objective, initial, max_iterations, tolerance, initial_step, min_step, context=None,
):
    """
    Minimize an objective by normalized gradient descent with a backtracking line search.

    The search direction is the negative gradient scaled so that its largest block (a row of
    the parameter array) has unit norm, so steps are measured in parameter units. A step is
    accepted only when it strictly decreases the objective, which makes the accepted values
    non-increasing. A rejected step halves the step length; an accepted one grows it.

    :param callable objective: maps a parameter array to (value, gradient, parts), where parts
        is an ordered dict of the objective terms to log
    :param numpy.ndarray initial: the starting parameters
    :param int max_iterations: the maximum number of accepted steps
    :param float tolerance: the gradient norm below which the run stops
    :param float initial_step: the first trial step length
    :param float min_step: the step length below which the search gives up
    :param dict context: the key=value pairs to prefix every log record with
    :return: the best parameters found and the run statistics
    :rtype: OptimizationResult
    """
    prefix = ' '.join(f'{key}={value}' for key, value in (context or {}).items())
    parameters = np.array(initial, dtype=np.float64)
    value, gradient, parts = objective(parameters)
    step = initial_step
    accepted = 0
    iterations = 0
    log.debug('%s iteration=0 objective=%.6g %s', prefix, value, _format_parts(parts))

    while accepted < max_iterations:
        iterations += 1
        gradient_norm = float(np.linalg.norm(gradient))
        if not np.isfinite(value) or gradient_norm <= tolerance:
            break
        if gradient.ndim > 1:
            scale = np.linalg.norm(gradient.reshape(-1, gradient.shape[-1]), axis=1).max()
        else:
            scale = np.abs(gradient).max()
        direction = -gradient / scale

        while step >= min_step:
            trial = parameters + step * direction
            trial_value, trial_gradient, trial_parts = objective(trial)
            if trial_value < value:
                break
            step *= 0.5
        else:
            log.debug('%s iteration=%d line search exhausted', prefix, iterations)
            break

        parameters, value, gradient, parts = trial, trial_value, trial_gradient, trial_parts
        accepted += 1
        log.debug(
            '%s iteration=%d objective=%.6g %s step=%.4g',
            prefix, accepted, value, _format_parts(parts), step,
        )
        step *= STEP_GROWTH

    gradient_norm = float(np.linalg.norm(gradient))
    log.info(
        '%s accepted=%d objective=%.6g gradient_norm=%.3g', prefix, accepted, value, gradient_norm
    )
    return OptimizationResult(parameters, value, gradient_norm, iterations, accepted)
