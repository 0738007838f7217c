# SPDX-License-Identifier: GPL-3.0-or-later
from canalatlas.geometry.centerline import *  # noqa: F401, F403
from canalatlas.geometry.field import *  # noqa: F401, F403
from canalatlas.geometry.locate import *  # noqa: F401, F403
from canalatlas.geometry.mesh import *  # noqa: F401, F403
from canalatlas.geometry.synth import *  # noqa: F401, F403
