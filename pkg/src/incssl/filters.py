"""Pseudo-label selection strategies.

Each strategy partitions a pseudo-labelled universe into retained and
discarded segments and records a per-segment score, so a run's selection
can be audited offline (:func:`write_filter_report`).

* random: keeps everything; the random subset draw happens in
  :func:`incssl.manifest.split_by_hours`.
* cer_consensus: keeps segments whose mean pairwise CER across three
  decoders is strictly below a threshold.
* ner: keeps segments whose pseudo-label mentions at least one entity.
* avg_logprob: keeps the most confident fraction by mean token log-prob.
* mix: half the hours from each of two other strategies.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from ._parallel import parallel_map
from .manifest import LabelKind, Manifest, ManifestError, read_manifest, split_by_hours, union, write_manifest
from .metrics import avg_pairwise_cer
from .ner import EntityDetector


class FilterError(ValueError):
    pass


class Strategy(str, enum.Enum):
    RANDOM = "random"
    CER_CONSENSUS = "cer_consensus"
    NER = "ner"
    AVG_LOGPROB = "avg_logprob"
    MIX = "mix"

    @classmethod
    def parse(cls, value: Union[str, "Strategy"]) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        return cls(str(value).replace("-", "_"))


@dataclass(frozen=True)
class Hypothesis:
    text: str
    token_logprobs: Tuple[float, ...] = ()

    def __post_init__(self):
        lps = tuple(map(float, self.token_logprobs))
        object.__setattr__(self, "token_logprobs", lps)
        if lps and max(lps) > 0:
            raise FilterError("token log-probabilities must be <= 0")


@dataclass(frozen=True)
class HypothesisSet:
    segment_id: str
    hyps: Mapping[str, Hypothesis]

    def __post_init__(self):
        if not self.hyps:
            raise FilterError(f"segment {self.segment_id!r}: hypothesis set is empty")

    def merged(self, other: "HypothesisSet") -> "HypothesisSet":
        return HypothesisSet(self.segment_id, {**self.hyps, **other.hyps})


def merge_hypotheses(*runs: Sequence[HypothesisSet]) -> List[HypothesisSet]:
    """Combine per-model decode outputs into one set per segment (first run's order)."""
    merged: Dict[str, HypothesisSet] = {}
    for run in runs:
        for hs in run:
            merged[hs.segment_id] = merged[hs.segment_id].merged(hs) if hs.segment_id in merged else hs
    return list(merged.values())


def write_hypotheses(hyp_sets: Sequence[HypothesisSet], path: Union[str, Path]) -> None:
    """One ``{"id", "model_id", "text", "token_logprobs"}`` line per (segment, model)."""
    with open(path, "w", encoding="utf-8") as f:
        for hs in hyp_sets:
            for model_id in sorted(hs.hyps):
                h = hs.hyps[model_id]
                rec = {"id": hs.segment_id, "model_id": model_id, "text": h.text,
                       "token_logprobs": list(h.token_logprobs)}
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_hypotheses(*paths: Union[str, Path]) -> List[HypothesisSet]:
    """Read and merge hypothesis files; segments keep their first-seen order."""
    runs = []
    for path in paths:
        run: Dict[str, HypothesisSet] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    hs = HypothesisSet(rec["id"], {rec["model_id"]: Hypothesis(rec["text"], rec.get("token_logprobs", ()))})
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise FilterError(f"{path}:{lineno}: malformed hypothesis line ({e})") from e
                run[hs.segment_id] = run[hs.segment_id].merged(hs) if hs.segment_id in run else hs
        runs.append(list(run.values()))
    return merge_hypotheses(*runs)


@dataclass(frozen=True)
class FilterReport:
    strategy: Strategy
    params: Dict[str, object]
    retained: Manifest
    discarded: Manifest
    scores: Dict[str, object] = field(default_factory=dict)

    @property
    def universe_ids(self) -> List[str]:
        return self.retained.ids + self.discarded.ids


def _pseudo_labelled(universe: Manifest, texts: Mapping[str, str]) -> Manifest:
    return universe.with_labels(texts, LabelKind.PSEUDO)


def _partition(
    strategy: Strategy,
    params: Dict[str, object],
    labelled: Manifest,
    keep: Mapping[str, bool],
    scores: Dict[str, object],
) -> FilterReport:
    retained = [s for s in labelled if keep[s.id]]
    discarded = [s for s in labelled if not keep[s.id]]
    return FilterReport(
        strategy=strategy,
        params=params,
        retained=Manifest(retained, name=f"{labelled.name}.retained"),
        discarded=Manifest(discarded, name=f"{labelled.name}.discarded"),
        scores=scores,
    )


def _index(hyp_sets: Sequence[HypothesisSet], universe: Manifest) -> Dict[str, HypothesisSet]:
    by_id = {hs.segment_id: hs for hs in hyp_sets}
    for seg in universe:
        if seg.id not in by_id:
            raise FilterError(f"segment {seg.id!r}: no hypotheses")
    return by_id


def filter_random(pseudo: Manifest) -> FilterReport:
    return _partition(Strategy.RANDOM, {}, pseudo, {s.id: True for s in pseudo}, {})


def _consensus_score(primary: str, hs: HypothesisSet) -> float:
    others = sorted(m for m in hs.hyps if m != primary)
    t1 = hs.hyps[primary].text
    return avg_pairwise_cer(t1, hs.hyps[others[0]].text, hs.hyps[others[1]].text).mean_cer


def filter_cer_consensus(
    universe: Manifest,
    hyp_sets: Sequence[HypothesisSet],
    primary_model: str,
    threshold: float = 0.05,
    jobs: Optional[int] = 1,
) -> FilterReport:
    """Keep segments whose three hypotheses agree, i.e. mean pairwise CER < ``threshold``.

    The retained pseudo-label is the primary model's hypothesis; the other
    two decoders only vote on agreement.
    """
    by_id = _index(hyp_sets, universe)
    ordered = []
    for seg in universe:
        hs = by_id[seg.id]
        if len(hs.hyps) != 3:
            raise FilterError(f"segment {seg.id!r}: expected exactly 3 hypotheses, got {len(hs.hyps)}")
        if primary_model not in hs.hyps:
            raise FilterError(f"segment {seg.id!r}: no hypothesis from primary model {primary_model!r}")
        ordered.append(hs)

    mean_cers = parallel_map(partial(_consensus_score, primary_model), ordered, jobs)
    scores = {hs.segment_id: c for hs, c in zip(ordered, mean_cers)}
    labelled = _pseudo_labelled(universe, {hs.segment_id: hs.hyps[primary_model].text for hs in ordered})
    keep = {sid: c < threshold for sid, c in scores.items()}
    params = {"threshold": threshold, "primary_model": primary_model}
    return _partition(Strategy.CER_CONSENSUS, params, labelled, keep, scores)


def filter_ner(pseudo: Manifest, detector: EntityDetector, batch_size: int = 4096) -> FilterReport:
    """Keep segments whose pseudo-label contains at least one detected entity."""
    counts: Dict[str, int] = {}
    items = [(s.id, s.text or "") for s in pseudo]
    for start in range(0, len(items), batch_size):
        batch = items[start : start + batch_size]
        found = detector.detect_batch(batch)
        for seg_id, _ in batch:
            counts[seg_id] = len(found[seg_id])
    keep = {sid: n >= 1 for sid, n in counts.items()}
    return _partition(Strategy.NER, {}, pseudo, keep, counts)


def avg_logprob(logprobs: Sequence[float]) -> float:
    return math.fsum(logprobs) / len(logprobs)


def perplexity(logprobs: Sequence[float]) -> float:
    return math.exp(-avg_logprob(logprobs))


def filter_avg_logprob(
    universe: Manifest,
    hyp_sets: Sequence[HypothesisSet],
    primary_model: str,
    keep_fraction: float,
) -> FilterReport:
    """Keep the ``keep_fraction`` of segments with the highest mean token log-prob.

    Ties are broken by ascending segment id.
    """
    if not 0 < keep_fraction <= 1:
        raise FilterError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    by_id = _index(hyp_sets, universe)
    scores: Dict[str, float] = {}
    texts: Dict[str, str] = {}
    for seg in universe:
        hyp = by_id[seg.id].hyps.get(primary_model)
        if hyp is None:
            raise FilterError(f"segment {seg.id!r}: no hypothesis from primary model {primary_model!r}")
        if not hyp.token_logprobs:
            raise FilterError(f"segment {seg.id!r}: empty token_logprobs")
        scores[seg.id] = avg_logprob(hyp.token_logprobs)
        texts[seg.id] = hyp.text

    n_keep = int(round(keep_fraction * len(scores)))
    ranked = sorted(scores, key=lambda sid: (-scores[sid], sid))
    kept = set(ranked[:n_keep])
    params = {"keep_fraction": keep_fraction, "primary_model": primary_model}
    labelled = _pseudo_labelled(universe, texts)
    return _partition(Strategy.AVG_LOGPROB, params, labelled, {sid: sid in kept for sid in scores}, scores)


def filter_mix(a: FilterReport, b: FilterReport, total_hours: float, seed: int) -> Manifest:
    """Half of ``total_hours`` from each report's retained pool, without duplicates.

    ``a`` is drawn first; anything it took is removed from ``b``'s pool.
    """
    if set(a.universe_ids) != set(b.universe_ids):
        raise FilterError("filter_mix needs two reports over the same universe")
    half = total_hours / 2
    try:
        part_a = split_by_hours(a.retained, [half], seed, name="mix.a")[0]
    except ManifestError as e:
        raise FilterError(f"{a.strategy.value} pool short of its {half:.4f} h half: {e}") from e
    pool_b = b.retained.without(part_a.ids)
    try:
        part_b = split_by_hours(pool_b, [half], seed + 1, name="mix.b")[0]
    except ManifestError as e:
        raise FilterError(f"{b.strategy.value} pool short of its {half:.4f} h half: {e}") from e
    return union([part_a, part_b], name="mix")


def mix_report(a: FilterReport, b: FilterReport, total_hours: float, seed: int) -> FilterReport:
    """Wrap :func:`filter_mix` as a report; scores count how many of the two strategies kept each id."""
    mixed = filter_mix(a, b, total_hours, seed)
    a_kept, b_kept = set(a.retained.ids), set(b.retained.ids)
    universe = union([a.retained, a.discarded], name="mix")
    scores = {sid: int(sid in a_kept) + int(sid in b_kept) for sid in universe.ids}
    params = {"a": a.strategy.value, "b": b.strategy.value, "total_hours": total_hours, "seed": seed}
    picked = set(mixed.ids)
    labelled = union([universe, mixed], name="mix")
    return _partition(Strategy.MIX, params, labelled, {sid: sid in picked for sid in labelled.ids}, scores)


def write_filter_report(report: FilterReport, directory: Union[str, Path]) -> Dict[str, str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_manifest(report.retained, directory / "retained.jsonl")
    write_manifest(report.discarded, directory / "discarded.jsonl")
    doc = {
        "strategy": report.strategy.value,
        "params": report.params,
        "n_retained": len(report.retained),
        "n_discarded": len(report.discarded),
        "hours_retained": report.retained.total_hours,
        "hours_discarded": report.discarded.total_hours,
        "scores": {sid: report.scores.get(sid) for sid in report.universe_ids},
    }
    (directory / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return {
        "report": str(directory / "report.json"),
        "retained": str(directory / "retained.jsonl"),
        "discarded": str(directory / "discarded.jsonl"),
    }


def read_filter_report(directory: Union[str, Path]) -> FilterReport:
    directory = Path(directory)
    doc = json.loads((directory / "report.json").read_text(encoding="utf-8"))
    scores = {k: v for k, v in doc["scores"].items() if v is not None}
    return FilterReport(
        strategy=Strategy(doc["strategy"]),
        params=doc["params"],
        retained=read_manifest(directory / "retained.jsonl"),
        discarded=read_manifest(directory / "discarded.jsonl"),
        scores=scores,
    )
