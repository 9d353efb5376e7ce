"""LiDAR odometry for planar wheeled robots with unicycle-constrained ICP."""

from .geometry import (
    Pose,
    UnicycleCorrection,
    apply_correction,
    compose,
    icp_jacobian,
    integrate_unicycle,
    interpolate,
    inverse,
    kinematic_jacobian,
    project_to_planar,
    transform_point,
    translation_log,
)
from .local_map import VoxelLocalMap
from .metrics import Trajectory, associate, ate_rmse, rpe_translation_percent
from .pipeline import OdometryConfig, OdometryPipeline, ScanInput
from .preprocessing import TimedPointCloud, deskew, preprocess, to_body_frame, voxel_downsample
from .registration import (
    RegistrationConfig,
    RegistrationResult,
    build_linear_system,
    compute_beta,
    cost,
    find_correspondences,
    register,
    solve_step,
)

__version__ = "0.1.0"
