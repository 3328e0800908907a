from ._driftlab import *  # noqa: F401,F403
from ._driftlab import __doc__  # noqa: F401
