"""High-level movement optimizers in torque space or LLC target-state space."""

from .cma import CmaEs, minimize_sphere_check
from .mpc import MpcConfig, MpcStep, noise_variance, online_mpc_step, run_mpc
from .offline import CmaConfig, DecisionSpace, cma_es_offline
from .ppo import HlcAgent, PpoConfig, agent_from_record, gae, policy_return, ppo_hlc
from .records import RunRecord, aggregate_scores, normalized_scores, write_score_table
from .trajectory import EvalResult, decision_bounds, evaluate_trajectory

__all__ = [
    "CmaConfig", "CmaEs", "DecisionSpace", "EvalResult", "HlcAgent", "MpcConfig", "MpcStep",
    "PpoConfig", "RunRecord", "agent_from_record", "aggregate_scores", "cma_es_offline",
    "decision_bounds", "evaluate_trajectory", "gae", "minimize_sphere_check", "noise_variance",
    "normalized_scores", "online_mpc_step", "policy_return", "ppo_hlc", "run_mpc",
    "write_score_table",
]
