"""Per-path gains, multipath component lists, tapped impulse responses."""
from .em import fresnel, fresnel_cos, fresnel_deta, lambertian_bsdf, mean_reflectivity
from .batch import PathBatch, compile_paths, forward, backward, direction_angles
from .mpc import (MultipathComponent, ChannelImpulseResponse, ScaleState, path_gain,
                  synthesize, calibrate_scale, instantaneous_scale, cir_from_mpcs, bin_taps,
                  tap_index, resolve_materials, mpcs_from_batch, write_mpc_csv,
                  read_mpc_csv, MPC_COLUMNS, DEFAULT_SAMPLE_RATE, DEFAULT_N_TAPS)

__all__ = [
    "fresnel", "fresnel_cos", "fresnel_deta", "lambertian_bsdf", "mean_reflectivity",
    "PathBatch", "compile_paths", "forward", "backward", "direction_angles",
    "MultipathComponent", "ChannelImpulseResponse", "ScaleState", "path_gain", "synthesize",
    "calibrate_scale", "instantaneous_scale", "cir_from_mpcs", "bin_taps", "tap_index",
    "resolve_materials", "mpcs_from_batch", "write_mpc_csv", "read_mpc_csv", "MPC_COLUMNS",
    "DEFAULT_SAMPLE_RATE", "DEFAULT_N_TAPS",
]
