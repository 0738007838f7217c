# SPDX-License-Identifier: GPL-3.0-or-later
from canalatlas.acoustics.curves import *  # noqa: F401, F403
from canalatlas.acoustics.fem import *  # noqa: F401, F403
from canalatlas.acoustics.horn import *  # noqa: F401, F403
from canalatlas.acoustics.tetmesh import *  # noqa: F401, F403
