"""Voxel-wise noise variance maps for image reconstructions by diagonal sketching."""

from .encoding import ImagingOperator, SamplingMask, make_birdcage_maps, make_mask
from .estimators import (
    SketchPlan,
    VarianceMap,
    brute_force_diag,
    mc_variance,
    naive_variance,
    sketch_variance,
)
from .metrics import ComparisonReport, compare_maps
from .models import ReconModel, jvp, linearize, make_model, reconstruct, vjp
from .noise import (
    CoilCovariance,
    NoiseSourceModel,
    SampleCovariance,
    build_coil_covariance,
    estimate_coil_covariance,
    sample_noise,
)
from .phantoms import make_phantom
from .probes import gen_probes

__version__ = "0.1.0"
