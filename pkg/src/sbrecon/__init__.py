"""Guided MRI reconstruction with an image-to-image Schrödinger bridge.

A bridge diffusion runs from an already acquired guide contrast to the target
contrast; every reverse step is pulled back onto the measured k-space with a
conjugate-gradient solve, and an optional deterministic inversion pass
re-derives a corrected starting state before sampling again.
"""

from .bridge import (
    inversion_step,
    posterior_step,
    predict_x0,
    rescale_noise,
    sample_intermediate,
)
from .dc import DCConfig, cg_correct
from .errors import ConfigError, FormatError, NumericalError
from .metrics import nmse, psnr, ssim
from .mri import AcquisitionModel, KSpaceData, adjoint_A, forward_A, make_coil_maps, make_mask, simulate_acquisition
from .phantoms import make_phantom_pair
from .pipeline import ReconConfig, guided_reconstruct, inversion_reconstruct, zero_filled
from .schedule import NoiseSchedule, make_schedule

__version__ = "0.1.0"
