# SPDX-License-Identifier: GPL-3.0-or-later
from canalatlas.workers.tasks.acoustics import *  # noqa: F401, F403
from canalatlas.workers.tasks.general import *  # noqa: F401, F403
from canalatlas.workers.tasks.registration import *  # noqa: F401, F403
