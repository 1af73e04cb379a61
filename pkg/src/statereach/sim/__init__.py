from .calibrate import calibrate_state_ranges
from .envs import ENV_IDS, Env, make_env
from .state import EnvSpec, SimState, StateLayout, StateRanges
from .tasks import TASK_IDS, TaskSpec, fallen_pose, initial_state, is_terminal, make_task, reward

__all__ = [
    "ENV_IDS", "TASK_IDS", "Env", "EnvSpec", "SimState", "StateLayout", "StateRanges",
    "TaskSpec", "calibrate_state_ranges", "fallen_pose", "initial_state", "is_terminal",
    "make_env", "make_task", "reward",
]
