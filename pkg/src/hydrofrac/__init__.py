"""hydrofrac: phase-field hydraulic fracture in poroelastic media at finite
strains, with a single-mesh solver and an adaptive two-mesh (global/local)
solver coupled through mortar-tied Robin interface conditions."""

from .config import Notch, RunConfig, SolverOptions, load_config
from .constitutive import MaterialParams, NonAdmissibleState
from .mesh import Interface, LocalDomainMap, Mesh, MeshError, build_structured, refine_footprint

__version__ = "0.1.0"

__all__ = [
    "Mesh",
    "MeshError",
    "Interface",
    "LocalDomainMap",
    "build_structured",
    "refine_footprint",
    "MaterialParams",
    "NonAdmissibleState",
    "Notch",
    "RunConfig",
    "SolverOptions",
    "load_config",
    "__version__",
]
