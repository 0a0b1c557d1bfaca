"""Quantum fluctuation theorems for channels and multitime processes."""
from .channels import KrausChannel, apply, compose, is_cptp, petz_recovery
from .fluctuation import (
    FTAnalysis,
    FTReport,
    bridge_entropy_production,
    channel_ft,
    holevo_decomposition,
    second_law_value,
    thermo_decomposition,
    tpm_backward,
    tpm_forward,
)
from .multitime import (
    MultitimeScenario,
    ProcessTensor,
    ancilla_ft,
    build_process_tensor,
    d_nm,
    linked_ft_with_sigma_nm,
    manybody_ft,
    marginality_failure_probe,
    three_point_ft_markov,
)
from .scenarios import generate_scenario

__version__ = "0.1.0"

__all__ = [
    "KrausChannel",
    "apply",
    "compose",
    "is_cptp",
    "petz_recovery",
    "FTAnalysis",
    "FTReport",
    "bridge_entropy_production",
    "channel_ft",
    "holevo_decomposition",
    "second_law_value",
    "thermo_decomposition",
    "tpm_backward",
    "tpm_forward",
    "MultitimeScenario",
    "ProcessTensor",
    "ancilla_ft",
    "build_process_tensor",
    "d_nm",
    "linked_ft_with_sigma_nm",
    "manybody_ft",
    "marginality_failure_probe",
    "three_point_ft_markov",
    "generate_scenario",
]
