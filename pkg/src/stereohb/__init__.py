"""Haemoglobin concentration maps from mono or stereo RGB images.

Band intensities are recovered from camera channels with a Tikhonov
regularised inverse, then unmixed into oxy- and deoxy-haemoglobin with a
non-negative Beer-Lambert fit.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: E402,F401,F403
from .spectra import (  # noqa: E402,F401
    CameraResponse,
    ChromophoreBasis,
    IlluminantSpectrum,
    SpectralBundle,
    WavelengthGrid,
    default_bundle,
    load_spectral_csv,
    resample_to_grid,
    validate_alignment,
)
from .inversion import build_laplacian, build_tikhonov_operator, reconstruct_spectrum  # noqa: E402,F401
from .unmix import UnmixPolicy, absorbance, fnnls, fnnls_batch, unmix_pixel  # noqa: E402,F401
from .pipeline import ConcentrationMap, Frame, process_frame, stack_stereo  # noqa: E402,F401
from .forward import NoiseSpec, PhantomSpec, make_phantom, simulate  # noqa: E402,F401
from .metrics import evaluate  # noqa: E402,F401
