# SPDX-License-Identifier: GPL-3.0-or-later
from concurrent.futures import ThreadPoolExecutor
import logging

import celery

from canalatlas.acoustics import impedance_band
from canalatlas.geometry import signed_distance_field
from canalatlas.registration import align_subject, register_subject_pair
from canalatlas.workers.config import get_worker_config
from canalatlas.workers.tasks.acoustics import solve_fem_band
from canalatlas.workers.tasks.registration import (
    align_to_reference, register_subject, sample_signed_distance,
)


__all__ = ['TASKS_BY_FUNCTION', 'map_tasks', 'task_mapper']
log = logging.getLogger(__name__)

# The library functions that are fanned out as Celery tasks
TASKS_BY_FUNCTION = {
    align_subject: align_to_reference,
    impedance_band: solve_fem_band,
    register_subject_pair: register_subject,
    signed_distance_field: sample_signed_distance,
}


def _map_locally(function, arguments, threads):
    if threads and threads > 1 and len(arguments) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(lambda args: function(*args), arguments))
    return [function(*args) for args in arguments]


def map_tasks(task, arguments, threads=None):
    """
    Run a task once per argument tuple and gather the results in argument order.

    When the tasks are eager, they run in this process, concurrently on a thread pool if more
    than one thread is allowed. Otherwise they are sent to the workers as one group.

    :param celery.app.task.Task task: the task to run
    :param iterable arguments: the positional argument tuples
    :param int threads: the maximum number of threads of eager execution; defaults to the
        "canalatlas_threads" configuration
    :return: the results in argument order
    :rtype: list
    """
    arguments = [tuple(args) for args in arguments]
    config = get_worker_config()
    if threads is None:
        threads = config.canalatlas_threads
    if config.task_always_eager:
        log.debug('Running %d %s tasks in this process', len(arguments), task.name)
        return _map_locally(task, arguments, threads)

    log.info('Sending %d %s tasks to the workers', len(arguments), task.name)
    return celery.group([task.s(*args) for args in arguments]).apply_async().get()


def task_mapper(threads=None):
    """
    Create a mapper that runs the library work items as Celery tasks.

    Functions without a task run in this process.

    :param int threads: the maximum number of threads of eager execution
    :return: a callable with the signature of canalatlas.mapping.serial_map
    :rtype: callable
    """
    def mapper(function, arguments):
        task = TASKS_BY_FUNCTION.get(function)
        if task is None:
            return _map_locally(function, [tuple(args) for args in arguments], threads)
        return map_tasks(task, arguments, threads)

    return mapper
