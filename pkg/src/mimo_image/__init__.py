"""Image transmission over a simulated Massive MIMO uplink with ADMM detection."""

from .admm import AdmmConfig, detect_vector, detect_vectors, ml_oracle, precompute_factor
from .channel import ChannelRealization, LinkParams, draw_channel, snr_to_rho, transmit
from .constellation import (
    ConstellationSpec,
    build_qam,
    demap_symbols_to_bytes,
    map_bytes_to_symbols,
    project_to_polytope,
    slice_to_nearest,
)
from .experiment import ExperimentConfig, RunReport, run_experiment, run_sweep
from .filters import PatchFilterConfig, gaussian_filter, gaussian_kernel, patch_denoise
from .image import ImagePlane, load_pgm, psnr, restore, save_pgm, vectorize

__version__ = "0.1.0"
