# SPDX-License-Identifier: GPL-3.0-or-later
from canalatlas.registration.affine import *  # noqa: F401, F403
from canalatlas.registration.atlas import *  # noqa: F401, F403
from canalatlas.registration.config import *  # noqa: F401, F403
from canalatlas.registration.ffd import *  # noqa: F401, F403
from canalatlas.registration.io import *  # noqa: F401, F403
from canalatlas.registration.optimize import *  # noqa: F401, F403
from canalatlas.registration.similarity import *  # noqa: F401, F403
from canalatlas.registration.transforms import *  # noqa: F401, F403
