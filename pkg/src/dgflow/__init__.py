"""dgflow: discrete normalizing flow over labeled graphs.

Kept import-light so the CLI can cap BLAS threads before numpy loads;
import the submodules (dgflow.flow, dgflow.sampler, ...) directly.
"""

__version__ = "0.1.0"
