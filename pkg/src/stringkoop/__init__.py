"""Stiff-string simulation, Hankel DMD and Koopman / diagonal-SSM sequence models."""

from .physics import (
    ModalState,
    ModalSystem,
    StringParams,
    Trajectory,
    build_modal_system,
    integrate,
    linear_solution,
    nonlinear_rhs,
    render_trajectory,
    slt_forward,
    slt_inverse,
)

__version__ = "0.1.0"

__all__ = [
    "ModalState",
    "ModalSystem",
    "StringParams",
    "Trajectory",
    "build_modal_system",
    "integrate",
    "linear_solution",
    "nonlinear_rhs",
    "render_trajectory",
    "slt_forward",
    "slt_inverse",
]
