from .base import Backend, BackendError, ModelHandle, ModelKind, SimModelState, consensus_decoders
from .corpus import default_gazetteer, filler_vocabulary, generate_synthetic_corpus, read_truth, write_truth
from .external import ExternalBackend
from .simulated import SimConfig, SimulatedBackend

__all__ = [
    "Backend",
    "BackendError",
    "ExternalBackend",
    "ModelHandle",
    "ModelKind",
    "SimConfig",
    "SimModelState",
    "SimulatedBackend",
    "consensus_decoders",
    "default_gazetteer",
    "filler_vocabulary",
    "generate_synthetic_corpus",
    "read_truth",
    "write_truth",
]
