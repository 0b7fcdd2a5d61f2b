"""Cost-guided safety for bimanual diffusion policies."""
from .costs import COST_NAMES, CostParams, KeypointBinding, SafetyCost, scheduled_cost
from .diffusion import GuidanceConfig, NoiseSchedule, ScriptedGaussianDenoiser, sample, sample_guided
from .errors import ContractError
from .geometry import ArmPair, Joint, Pose, SerialChain, fk, fk_jacobian, solve_ik, tip_pose
from .keypoints import KeypointSet
from .scheduler.patterns import CostMask, UnsafePattern

__version__ = "0.1.0"

__all__ = [
    "ArmPair", "COST_NAMES", "ContractError", "CostMask", "CostParams", "GuidanceConfig", "Joint",
    "KeypointBinding", "KeypointSet", "NoiseSchedule", "Pose", "SafetyCost", "ScriptedGaussianDenoiser",
    "SerialChain", "UnsafePattern", "fk", "fk_jacobian", "sample", "sample_guided", "scheduled_cost",
    "solve_ik", "tip_pose",
]
