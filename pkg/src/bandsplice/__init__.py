"""Multi-band WiFi CIR and time-of-flight estimation.

Per-band atomic norm denoising removes each band's phase distortion, the
cleaned bands are spliced and solved jointly by OMP, and the residual
delay/phase ambiguity is resolved from a two-way handshake.
"""

from .andenoise import an_denoise, denoise_band, lambda_for
from .chronos import BpdnProblem, chronos_tof, solve_bpdn
from .cleaner import clean_all
from .handshake import AmbiguityGrid, resolve
from .harness import ExperimentConfig, run_experiment, run_trial
from .model import (BandPlan, Cir, CsiMatrix, DistortionParams, HandshakeSamples,
                    NoiseModel, default_band_plan, draw_cir, make_band_plan)
from .splicer import build_dictionary, estimate_relative_cir, omp

__version__ = "0.1.0"

__all__ = [
    "AmbiguityGrid", "BandPlan", "BpdnProblem", "Cir", "CsiMatrix", "DistortionParams",
    "ExperimentConfig", "HandshakeSamples", "NoiseModel", "an_denoise", "build_dictionary",
    "chronos_tof", "clean_all", "default_band_plan", "denoise_band", "draw_cir",
    "estimate_relative_cir", "lambda_for", "make_band_plan", "omp", "resolve",
    "run_experiment", "run_trial", "solve_bpdn",
]
