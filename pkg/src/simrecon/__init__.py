"""
Structured illumination microscopy reconstruction with blind parameter estimation.

Typical use::

    from simrecon import synthesize_otf, make_test_object, simulate_stack, reconstruct_sim
    otf = synthesize_otf(512, 0.25)
    stack, truth = simulate_stack(make_test_object(512, alpha=0.5), otf)
    result = reconstruct_sim(stack, otf)
"""
__version__ = "0.1.0"

from .config import ConfigError, RunConfig, load_config
from .estimate import EstimationConfig, EstimationError
from .imagecore import fft2_centered, ifft2_centered, load_image, save_image
from .otfmodel import Otf, estimate_otf_from_beads, psf_from_otf, synthesize_otf
from .params import IlluminationParams, OrientationParams
from .preprocess import normalize_stack, preprocess_stack, remove_background
from .psfmetrics import PsfEstimate, fwhm, resolution_report, solve_effective_psf
from .reconstruct import (MergeConfig, ReconstructionError, SimResult, estimate_parameters,
                          reconstruct_sim, reconstruct_tirf_sim, wiener_widefield)
from .separation import separation_matrix, separate_components
from .simulate import (RawSimStack, SimulationConfig, make_test_object, simulate_stack,
                       widefield_image)

__all__ = [
    "ConfigError", "EstimationConfig", "EstimationError", "IlluminationParams", "MergeConfig",
    "Otf", "OrientationParams", "PsfEstimate", "RawSimStack", "ReconstructionError", "RunConfig",
    "SimResult", "SimulationConfig", "estimate_otf_from_beads", "estimate_parameters",
    "fft2_centered", "fwhm", "ifft2_centered", "load_config", "load_image", "make_test_object",
    "normalize_stack", "preprocess_stack", "psf_from_otf", "reconstruct_sim",
    "reconstruct_tirf_sim", "remove_background", "resolution_report", "save_image",
    "separate_components", "separation_matrix", "simulate_stack", "solve_effective_psf",
    "synthesize_otf", "wiener_widefield",
]
