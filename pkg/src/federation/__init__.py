"""
連合学習モジュール
"""

from .client import ClientOptions, ClientState, ClientUpdate, run_client
from .momentum import MomentumAverager, momentum_update
from .server import (
    ServerState,
    TrainingResult,
    aggregate_dprompts,
    aggregate_gprompt,
    run_training,
    sample_clients,
)

__all__ = [
    "ClientOptions",
    "ClientState",
    "ClientUpdate",
    "MomentumAverager",
    "ServerState",
    "TrainingResult",
    "aggregate_dprompts",
    "aggregate_gprompt",
    "momentum_update",
    "run_client",
    "run_training",
    "sample_clients",
]
