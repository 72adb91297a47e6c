"""Recreate MIMO-OFDM channel tensors by fitting small under-parameterized
decoders to noisy measurements, transfer the fitted weights between
neighboring users, jointly recreate user groups with a 4-way decoder, and
serialize the result into a compact CSI report.
"""

from .tensors import fold, make_upsampler, mode_product, unfold
from .decoder import (
    DecoderSpec,
    ParamSet,
    SeedRule,
    batch_norm,
    compression_ratio,
    forward,
    generate_seed,
    init_params,
    param_count,
)
from .channel import (
    ChannelTensor,
    PreprocessedTarget,
    Scatterer,
    Scene,
    UserTrack,
    add_noise,
    load_scene,
    postprocess,
    preprocess,
    save_scene,
    synthesize,
)
from .fitting import FitConfig, FitDivergedError, FitReport, fit, gradient, loss
from .transfer import TransferPlan, TransferStep, run_transfer, weight_distance
from .multiuser import GroupTarget, build_group, fit_group, split_group
from .baselines import mmse_genie, mmse_raw, nmse, sweep
from .codec import decode, encode, weight_delta_stats

__version__ = "0.1.0"
