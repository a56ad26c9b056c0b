"""A deterministic stand-in for real ASR decoding and fine-tuning.

Decoding is a word-level noisy channel. A model of quality ``q`` corrupts
each reference word with probability ``p_max * (1 - q) * d``, where ``d`` is
a per-segment difficulty: a Gamma(k, 1/k) draw keyed only on the segment
id, so the same segments are hard for every model. A corrupted word is
substituted, deleted, or substituted and followed by an inserted word. The
per-word random draws are keyed on ``(model seed, segment id)``.
:meth:`SimulatedBackend.fine_tune` keeps the base model's seed, so every
model trained from one base shares its random stream and a better model's
errors are a subset of a worse one's.

Fine-tuning follows a saturating learning curve: label hours count in
proportion to ``1 - true WER`` of their text, and quality approaches
``q_max`` exponentially in those effective hours.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import asdict, dataclass, field
from functools import lru_cache, partial
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .._parallel import parallel_map
from ..filters import Hypothesis, HypothesisSet
from ..manifest import LabelKind, Manifest
from ..metrics import word_error_count
from ..textnorm import normalize, word_tokens
from .base import BackendError, ModelHandle, ModelKind, SimModelState
from .corpus import default_gazetteer, filler_vocabulary

_TWO_PI = 2.0 * math.pi
_EPS = 1e-6


@dataclass(frozen=True)
class SimConfig:
    p_max: float = 0.5
    corrupt_mix: Tuple[float, float, float] = (0.7, 0.15, 0.15)  # substitute, delete, insert
    q_base: float = 0.55
    q_max: float = 0.95
    tau_hours: float = 150.0
    difficulty_shape: Optional[float] = 1.0  # None: every segment equally hard
    logprob_jitter: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "corrupt_mix", tuple(float(x) for x in self.corrupt_mix))
        if len(self.corrupt_mix) != 3 or abs(sum(self.corrupt_mix) - 1.0) > 1e-9:
            raise BackendError(f"corrupt_mix must be three shares summing to 1, got {self.corrupt_mix}")
        if not 0.0 <= self.p_max <= 1.0:
            raise BackendError(f"p_max must be in [0, 1], got {self.p_max}")
        if not 0.0 <= self.q_base <= self.q_max <= 1.0:
            raise BackendError(f"need 0 <= q_base <= q_max <= 1, got {self.q_base}, {self.q_max}")
        if self.tau_hours <= 0:
            raise BackendError("tau_hours must be > 0")
        if self.difficulty_shape is not None and self.difficulty_shape <= 0:
            raise BackendError("difficulty_shape must be > 0 or null")

    def to_json(self) -> dict:
        d = asdict(self)
        d["corrupt_mix"] = list(self.corrupt_mix)
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "SimConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def word_error_prob(self, quality: float) -> float:
        return self.p_max * (1.0 - quality)

    def expected_wer(self, quality: float) -> float:
        """Expected word edits per reference word, ignoring the difficulty clip at 1."""
        return self.word_error_prob(quality) * (1.0 + self.corrupt_mix[2])

    def learning_curve(self, q_start: float, effective_hours: float) -> float:
        return self.q_max - (self.q_max - q_start) * math.exp(-effective_hours / self.tau_hours)


def _key(*parts) -> int:
    digest = hashlib.blake2b(":".join(str(p) for p in parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def segment_difficulty(cfg: SimConfig, seg_id: str) -> float:
    if cfg.difficulty_shape is None:
        return 1.0
    return _difficulty(cfg.difficulty_shape, seg_id)


@lru_cache(maxsize=1 << 16)
def _truth_words(truth: str) -> Tuple[str, ...]:
    return tuple(word_tokens(normalize(truth)))


@lru_cache(maxsize=1 << 18)
def _difficulty(k: float, seg_id: str) -> float:
    return random.Random(_key("difficulty", seg_id)).gammavariate(k, 1.0 / k)


def corrupt(
    cfg: SimConfig, vocab: Sequence[str], state: SimModelState, seg_id: str, truth: str
) -> Hypothesis:
    """Run ``truth`` through the channel of a model in ``state``.

    Token log-probs cover every emitted word plus a final end-of-utterance
    token, so even an empty hypothesis carries one score.
    """
    words = _truth_words(truth)
    p = min(1.0, cfg.word_error_prob(state.quality) * segment_difficulty(cfg, seg_id))
    lp_ok = math.log(max(1.0 - p, _EPS))
    lp_bad = math.log(max(p, _EPS))
    sub_share = cfg.corrupt_mix[0]
    del_share = sub_share + cfg.corrupt_mix[1]
    sigma = cfg.logprob_jitter
    n_vocab = len(vocab)
    sqrt, log, cos = math.sqrt, math.log, math.cos

    rng = random.Random(_key(state.seed, seg_id))
    draw = rng.random
    out: List[str] = []
    lps: List[float] = []
    for w in words:
        # Fixed number of draws per word keeps streams aligned across qualities.
        u, op, v1, v2 = draw(), draw(), draw(), draw()
        # Box-Muller pair for the two jitter terms.
        radius = sigma * sqrt(-2.0 * log(1.0 - draw()))
        angle = _TWO_PI * draw()
        if u >= p:
            out.append(w)
            lp = lp_ok + radius * cos(angle)
            lps.append(lp if lp < 0.0 else 0.0)
            continue
        if sub_share <= op < del_share:
            continue
        s1, s2 = vocab[int(v1 * n_vocab)], vocab[int(v2 * n_vocab)]
        if s1 == w:
            s1 = vocab[(vocab.index(w) + 1) % n_vocab]
        out.append(s1)
        lps.append(min(0.0, lp_bad + radius * math.cos(angle)))
        if op >= del_share:
            out.append(s2)
            lps.append(min(0.0, lp_bad + radius * math.sin(angle)))
    lps.append(min(0.0, lp_ok + rng.gauss(0.0, sigma)))
    return Hypothesis(" ".join(out), tuple(lps))


def _decode_one(cfg: SimConfig, vocab: Sequence[str], state: SimModelState, item: Tuple[str, str]) -> Hypothesis:
    return corrupt(cfg, vocab, state, item[0], item[1])


@dataclass
class SimulatedBackend:
    """Decode/fine-tune against a hidden truth store."""

    config: SimConfig = field(default_factory=SimConfig)
    truth: Mapping[str, str] = field(default_factory=dict)
    vocabulary: Optional[Sequence[str]] = None
    jobs: Optional[int] = 1

    def __post_init__(self):
        if self.vocabulary is None:
            self.vocabulary = filler_vocabulary(default_gazetteer())
        self.vocabulary = tuple(self.vocabulary)

    def model(self, model_id: str, quality: float, seed: int) -> ModelHandle:
        return ModelHandle(model_id, ModelKind.SIMULATED, SimModelState(quality, seed))

    def base_model(self, seed: int, model_id: str = "base") -> ModelHandle:
        return self.model(model_id, self.config.q_base, seed)

    def _state(self, model: ModelHandle) -> SimModelState:
        if model.kind is not ModelKind.SIMULATED:
            raise BackendError(f"model {model.model_id!r} is not a simulated model")
        return model.payload

    def _truth_of(self, seg_id: str) -> str:
        try:
            return self.truth[seg_id]
        except KeyError:
            raise BackendError(f"segment {seg_id!r}: no hidden ground truth in the fixture store") from None

    def decode(self, model: ModelHandle, manifest: Manifest) -> List[HypothesisSet]:
        state = self._state(model)
        items = [(s.id, self._truth_of(s.id)) for s in manifest]
        hyps = parallel_map(partial(_decode_one, self.config, self.vocabulary, state), items, self.jobs)
        return [HypothesisSet(seg_id, {model.model_id: h}) for (seg_id, _), h in zip(items, hyps)]

    def label_error(self, seg) -> float:
        """True WER of a training segment's text; manual labels count as exact."""
        if seg.label_kind is LabelKind.MANUAL:
            return 0.0
        if seg.text is None:
            raise BackendError(f"segment {seg.id!r} has no label")
        edits, ref_len = word_error_count(self._truth_of(seg.id), seg.text)
        return edits / max(1, ref_len)

    def effective_hours(self, train: Manifest) -> float:
        for seg in train:
            if seg.label_kind is LabelKind.NONE:
                raise BackendError(f"cannot fine-tune on unlabeled segment {seg.id!r}")
        return math.fsum(seg.hours * max(0.0, 1.0 - self.label_error(seg)) for seg in train)

    def fine_tune(self, base: ModelHandle, train: Manifest, model_id: str) -> ModelHandle:
        state = self._state(base)
        quality = self.config.learning_curve(state.quality, self.effective_hours(train))
        return self.model(model_id, min(1.0, max(0.0, quality)), state.seed)
