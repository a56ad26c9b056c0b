from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol, Sequence, Tuple, Union

from ..filters import HypothesisSet
from ..manifest import Manifest


class BackendError(RuntimeError):
    pass


class ModelKind(str, enum.Enum):
    SIMULATED = "simulated"
    EXTERNAL = "external"


@dataclass(frozen=True)
class SimModelState:
    quality: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.quality <= 1.0:
            raise BackendError(f"simulated model quality must be in [0, 1], got {self.quality}")


@dataclass(frozen=True)
class ModelHandle:
    model_id: str
    kind: ModelKind
    payload: Union[SimModelState, str]

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if (kind is ModelKind.SIMULATED) != isinstance(self.payload, SimModelState):
            raise BackendError(f"model {self.model_id!r}: payload does not match kind {kind.value!r}")

    def to_json(self) -> dict:
        if isinstance(self.payload, SimModelState):
            payload = {"quality": self.payload.quality, "seed": self.payload.seed}
        else:
            payload = self.payload
        return {"model_id": self.model_id, "kind": self.kind.value, "payload": payload}

    @classmethod
    def from_json(cls, d: dict) -> "ModelHandle":
        kind = ModelKind(d["kind"])
        payload = d["payload"]
        if kind is ModelKind.SIMULATED:
            payload = SimModelState(quality=float(payload["quality"]), seed=int(payload["seed"]))
        return cls(d["model_id"], kind, payload)


class Backend(Protocol):
    def decode(self, model: ModelHandle, manifest: Manifest) -> Sequence[HypothesisSet]:
        """One single-hypothesis set per segment, keyed by ``model.model_id``."""

    def fine_tune(self, base: ModelHandle, train: Manifest, model_id: str) -> ModelHandle:
        """Train a fresh model from ``base`` on ``train``; never mutates ``base``."""


def consensus_decoders(primary: ModelHandle, aux: Sequence[ModelHandle]) -> Tuple[ModelHandle, ModelHandle, ModelHandle]:
    """The decoding trio of the consensus filter: the pipeline's own model plus two others."""
    if len(aux) != 2:
        raise BackendError(f"consensus needs exactly two auxiliary decoders, got {len(aux)}")
    trio = (primary, aux[0], aux[1])
    ids = [m.model_id for m in trio]
    if len(set(ids)) != 3:
        raise BackendError(f"duplicate model_id among consensus decoders: {ids}")
    return trio
