"""Decentralized graph diffusion for node classification on simulated
peer-to-peer networks, verified against a centralized reference."""

from .graph import (
    DatasetError,
    Graph,
    NodeData,
    Splits,
    load_dataset,
    masked_neighbors,
    propagate,
    save_dataset,
)
from .learn import (
    AdamState,
    ClassifierParams,
    LocalModel,
    TrainConfig,
    adam_step,
    forward,
    forward_all,
    gossip_pair_update,
    init_adam,
    init_params,
    load_params,
    loss_and_grad,
    pretrain,
    save_params,
)
from .oracle import (
    ConvergenceError,
    DiffusionParams,
    PPRResult,
    accuracy,
    constrained_ppr,
    fdiff_scale,
    personalization_scale,
)
from .p2p import (
    DeviceState,
    Message,
    ProtocolError,
    decode_message,
    encode_message,
    message_nbytes,
)
from .sim import (
    CommunicationSchedule,
    ExperimentConfig,
    MetricsRecord,
    RunResult,
    Simulation,
    build_schedule,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ClassifierParams",
    "CommunicationSchedule",
    "ConvergenceError",
    "DatasetError",
    "DeviceState",
    "DiffusionParams",
    "ExperimentConfig",
    "Graph",
    "LocalModel",
    "Message",
    "MetricsRecord",
    "NodeData",
    "PPRResult",
    "ProtocolError",
    "RunResult",
    "Simulation",
    "Splits",
    "TrainConfig",
    "accuracy",
    "adam_step",
    "build_schedule",
    "constrained_ppr",
    "decode_message",
    "encode_message",
    "fdiff_scale",
    "forward",
    "forward_all",
    "gossip_pair_update",
    "init_adam",
    "init_params",
    "load_dataset",
    "load_params",
    "loss_and_grad",
    "masked_neighbors",
    "message_nbytes",
    "personalization_scale",
    "pretrain",
    "propagate",
    "run",
    "save_dataset",
    "save_params",
]
