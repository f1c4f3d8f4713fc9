"""Experiment targets, data simulators and the Gibbs driver."""

from .cox import *  # noqa: F401,F403
from .cox import __all__ as _cox_all
from .datafiles import read_series, write_series
from .gibbs import *  # noqa: F401,F403
from .gibbs import __all__ as _gibbs_all
from .mvn import ar1_correlation, mvn_target
from .sv import *  # noqa: F401,F403
from .sv import __all__ as _sv_all

__all__ = (
    list(_cox_all)
    + list(_gibbs_all)
    + list(_sv_all)
    + ["read_series", "write_series", "ar1_correlation", "mvn_target"]
)
