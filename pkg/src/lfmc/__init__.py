"""Low-frequency motion control: planar legged-robot simulator, PPO trainer
and evaluation battery for studying policy update frequency."""

__version__ = "0.1.0"

from lfmc.actuation import ActuationConfig, LatencyBuffer, actuator_lag, delayed_setpoint, pd_torque
from lfmc.env import EnvConfig, LocomotionEnv, ObservationSpec, RewardConfig
from lfmc.policy import Policy, load_policy, save_policy
from lfmc.ppo import TrainConfig, apply_dynamics_randomization, discount_for, n_envs_for, train
from lfmc.robot import ContactParams, RobotModel, RobotState, dynamics_step
from lfmc.terrain import Terrain, generate_terrain, terrain_height

__all__ = [
    "ActuationConfig", "LatencyBuffer", "actuator_lag", "delayed_setpoint", "pd_torque",
    "EnvConfig", "LocomotionEnv", "ObservationSpec", "RewardConfig",
    "Policy", "load_policy", "save_policy",
    "TrainConfig", "apply_dynamics_randomization", "discount_for", "n_envs_for", "train",
    "ContactParams", "RobotModel", "RobotState", "dynamics_step",
    "Terrain", "generate_terrain", "terrain_height",
]
