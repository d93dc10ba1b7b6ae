"""Experiment runners and the command line interface."""

from .experiments import (
    ExperimentRow,
    ExperimentSpec,
    diagnose,
    run_convergence,
    run_noise_sweep,
    run_phase_diagram,
    run_tme_vs_ste,
)
