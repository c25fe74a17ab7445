"""Longitudinal lesion tracking toolkit.

Arrays are indexed ``arr[i, j, k]`` (x, y, z) and stored in Fortran order.
Displacement fields are ``(nx, ny, nz, 3)`` arrays in mm.
"""

from ._lesiontrack import (
    DegenerateInput,
    Error,
    FormatError,
    GridMismatch,
    InstanceMask,
    InvalidArgument,
    IoError,
    RegistrationDiverged,
    Volume,
    ball_channel,
    connected_components,
    dice,
    distance_transform,
    evaluate,
    gaussian_blur,
    load_mask,
    load_volume,
    make_phantom,
    match_lesions,
    ncc,
    nsd,
    num_threads,
    register_pair,
    save_nifti,
    segment_point,
    set_num_threads,
    simulate_box,
    simulate_point,
    synthesize_followup,
    track,
    warp,
)

__version__ = "0.1.0"
