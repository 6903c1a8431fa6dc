"""Mixed isogeometric solid-beam analysis with extensible directors."""

from .solver import (
    Discretization,
    DistributedLoad,
    EndConstraint,
    EndLoad,
    FollowerMoment,
    LoadCase,
    NewtonSettings,
    NonConvergenceError,
    PatchGeometry,
    PrescribedRotation,
    Stage,
    build_model,
    modal_analysis,
    modal_matrices,
    newton_solve,
    probe,
)

__version__ = "0.1.0"
