"""Spin-motion coupled trapped atoms: Hamiltonians, fluorescence spectra and
calibration fits."""

__version__ = "0.1.0"

from ._validation import ValidationError
from .model import (
    CESIUM,
    KHZ,
    ModelParams,
    PhysicalConstants,
    SimplifiedParams,
    build_dicke,
    build_lab_hamiltonian,
    build_simplified,
    build_two_mode,
    coupling_from_gradient,
    rabi_matrix_element,
    reference_params,
    zeeman_splitting,
)
from .qops import eigh, mode_operators, spin_operators, tensor
from .spectra import ThermalState, emission_operator, render, synthesize, transitions

__all__ = [
    "CESIUM", "KHZ", "ModelParams", "PhysicalConstants", "SimplifiedParams", "ThermalState",
    "ValidationError", "build_dicke", "build_lab_hamiltonian", "build_simplified", "build_two_mode",
    "coupling_from_gradient", "eigh", "emission_operator", "mode_operators", "rabi_matrix_element",
    "reference_params", "render", "spin_operators", "synthesize", "tensor", "transitions",
    "zeeman_splitting",
]
