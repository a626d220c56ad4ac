"""Interaction-aware retargeting of two-person motion onto two humanoid robots."""

from .mesh import GraphPriors, MeshConfig
from .motion_io import DualMotionClip, ReferencePair, RobotTrajectory, build_manifolds, load_clip
from .robot import RobotConfiguration, RobotSpec, forward_kinematics, load_robot_spec
from .solver import SolverConfig, retarget_clip

__all__ = [
    "DualMotionClip", "GraphPriors", "MeshConfig", "ReferencePair", "RobotConfiguration", "RobotSpec",
    "RobotTrajectory", "SolverConfig", "build_manifolds", "forward_kinematics", "load_clip",
    "load_robot_spec", "retarget_clip",
]
