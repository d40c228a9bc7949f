"""Local Gibbs step selection models: simulation and Monte Carlo maximum
likelihood for habitat selection and movement from telemetry tracks."""

__version__ = "0.1.0"

from .habitat import HabitatRaster, RsfParams, load_manifest, synthetic_habitat  # noqa: E402
from .kernels import FixedRadius, GammaRadius, Normal  # noqa: E402
from .likelihood import LikelihoodError, McConfig, hmm_track_loglik, track_loglik  # noqa: E402
from .simulator import HmmSpec, Track, simulate_multistate, simulate_track  # noqa: E402
from .inference import FitResult, Model, fit, gof_steplengths, hessian_se, viterbi  # noqa: E402

__all__ = [
    "HabitatRaster", "RsfParams", "load_manifest", "synthetic_habitat",
    "Normal", "FixedRadius", "GammaRadius",
    "McConfig", "LikelihoodError", "track_loglik", "hmm_track_loglik",
    "Track", "HmmSpec", "simulate_track", "simulate_multistate",
    "Model", "FitResult", "fit", "hessian_se", "viterbi", "gof_steplengths",
]
