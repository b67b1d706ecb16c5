"""Grey thermal radiative transfer on 2D grids, full rank and low rank."""

from .angular import QuadratureSet, build_quadrature
from .driver import (
    PRESETS,
    RunResult,
    build_problem,
    load_config,
    main,
    run_config,
    run_problem,
    validate_config,
)
from .errors import (
    CgError,
    ConfigurationError,
    ContractViolation,
    InterpolationError,
    IterationLimitError,
    SolverError,
)
from .lowrank import DlrState, deim_select, svd_truncate
from .mesh import Disc, Grid, MaterialMap, Rect, assign_materials, build_grid
from .physics import Material, PhysicsConstants, linearize, planck, update_temperature

__all__ = [
    "QuadratureSet",
    "build_quadrature",
    "PRESETS",
    "RunResult",
    "build_problem",
    "load_config",
    "main",
    "run_config",
    "run_problem",
    "validate_config",
    "CgError",
    "ConfigurationError",
    "ContractViolation",
    "InterpolationError",
    "IterationLimitError",
    "SolverError",
    "DlrState",
    "deim_select",
    "svd_truncate",
    "Disc",
    "Grid",
    "MaterialMap",
    "Rect",
    "assign_materials",
    "build_grid",
    "Material",
    "PhysicsConstants",
    "linearize",
    "planck",
    "update_temperature",
]

__version__ = "0.1.0"
