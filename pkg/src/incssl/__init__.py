"""Incremental semi-supervised ASR training with pseudo-label filtering.

The pipeline fine-tunes a seed model on the labelled data, pseudo-labels an
unlabelled pool once, filters it (random, CER consensus, named entities,
average log-prob or a mix), then grows the training buffer one subset per
iteration, re-decoding the whole buffer with the latest model each time.

A simulated backend (noisy channel plus learning curve) makes every step
reproducible without audio; :class:`incssl.backend.ExternalBackend` drives
real decoders and trainers through a line-delimited JSON contract.
"""

from .filters import FilterReport, Strategy
from .manifest import LabelKind, Manifest, Segment, read_manifest, write_manifest
from .metrics import avg_pairwise_cer, cer_pair, corpus_wer, edit_distance, wer
from .pipeline import IterationPlan
from .runner import Run, RunConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "FilterReport",
    "IterationPlan",
    "LabelKind",
    "Manifest",
    "Run",
    "RunConfig",
    "Segment",
    "Strategy",
    "avg_pairwise_cer",
    "cer_pair",
    "corpus_wer",
    "edit_distance",
    "load_config",
    "read_manifest",
    "wer",
    "write_manifest",
]
