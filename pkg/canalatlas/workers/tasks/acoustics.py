# SPDX-License-Identifier: GPL-3.0-or-later
import logging

from canalatlas.acoustics import impedance_band
from canalatlas.workers.tasks.celery import app


__all__ = ['solve_fem_band']
log = logging.getLogger(__name__)


@app.task
def solve_fem_band(mesh, frequencies, air, drum):
    """
    Solve the FEM input impedance at a band of frequencies.

    :param TetMesh mesh: the mesh in m
    :param numpy.ndarray frequencies: the frequencies in Hz
    :param AirProperties air: the air properties
    :param DrumImpedance drum: the drum termination
    :return: the complex impedances
    :rtype: numpy.ndarray
    """
    log.info(
        'Solving the FEM band from %g to %g Hz (%d frequencies)',
        frequencies[0], frequencies[-1], len(frequencies),
    )
    return impedance_band(mesh, frequencies, air, drum)
