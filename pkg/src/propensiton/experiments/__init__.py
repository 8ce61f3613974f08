"""Experiment drivers: scattering, decay, plate, sphere toy and the epsilon scan."""
from .adapters import DecayExperiment, PlateExperiment, ScatteringExperiment, SphereExperiment, make_experiment
from .decay import DecayConfig, fit_exponential, reference_decay_config, run_decay
from .plate import PlateConfig, run_plate, site_probabilities
from .scattering import ScatteringConfig, interference_visibility, reference_config, run_scattering
from .spheres import SphereToyConfig, run_sphere_toy

__all__ = [
    "DecayConfig", "DecayExperiment", "PlateConfig", "PlateExperiment", "ScatteringConfig",
    "ScatteringExperiment", "SphereExperiment", "SphereToyConfig", "fit_exponential", "interference_visibility",
    "make_experiment", "reference_config", "reference_decay_config", "run_decay", "run_plate",
    "run_scattering", "run_sphere_toy", "site_probabilities",
]
