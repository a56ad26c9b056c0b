"""Incremental semi-supervised fine-tuning and its baselines.

The building blocks here are stateless; :mod:`incssl.runner` strings them
together into a resumable, on-disk experiment.

Incremental fine-tuning (IFT)::

    model_0 = fine_tune(base, S_core + S_aux)
    U_1..U_K = split(filter(decode(model_0, U)))        # filtered once
    for i in 1..K:
        U'_i = decode(model_{i-1}, U'_{i-1} + U_i)      # whole buffer re-decoded
        model_i = fine_tune(base, S_core + U'_i)        # always from base
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .backend.base import Backend, ModelHandle
from .filters import (
    FilterReport,
    HypothesisSet,
    Strategy,
    filter_avg_logprob,
    filter_cer_consensus,
    filter_ner,
    filter_random,
    merge_hypotheses,
    mix_report,
)
from .manifest import LabelKind, Manifest, ManifestError, split_by_hours, union
from .metrics import AlignmentCounts, wer
from .ner import EntityDetector

WOW_SUBSET_HOURS = (95.5, 200.0, 200.0, 500.0)
FISHER_SUBSET_HOURS = (50.0, 200.0)
PRESETS = {"wow": WOW_SUBSET_HOURS, "fisher": FISHER_SUBSET_HOURS}


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class IterationPlan:
    subset_hours: Tuple[float, ...]
    strategy: Strategy = Strategy.RANDOM
    filter_params: Mapping[str, object] = field(default_factory=dict)
    use_s_aux_iter0: bool = True
    include_s_core_each_iter: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "subset_hours", tuple(float(h) for h in self.subset_hours))
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if not self.subset_hours:
            raise PipelineError("plan needs at least one incremental subset")
        if any(h <= 0 for h in self.subset_hours):
            raise PipelineError(f"subset hours must all be > 0, got {list(self.subset_hours)}")

    def strategies(self) -> List[Strategy]:
        """The base strategies this plan runs (both halves of a mix)."""
        if self.strategy is Strategy.MIX:
            return [Strategy.parse(x) for x in self.filter_params.get("mix", ("cer_consensus", "ner"))]
        return [self.strategy]

    @property
    def K(self) -> int:
        return len(self.subset_hours)

    @property
    def total_hours(self) -> float:
        return math.fsum(self.subset_hours)

    def cumulative_hours(self, s_core_hours: float = 0.0) -> List[float]:
        """Training hours per iteration: S_core plus the cumulative buffer."""
        out, acc = [], 0.0
        for h in self.subset_hours:
            acc += h
            out.append(s_core_hours + acc)
        return out


def preset_hours(name: str, scale: float = 1.0) -> Tuple[float, ...]:
    try:
        hours = PRESETS[name]
    except KeyError:
        raise PipelineError(f"unknown plan preset {name!r}; choose from {sorted(PRESETS)}") from None
    # Rounding drops float noise such as 95.5 * 0.01 = 0.9550000000000001.
    return tuple(round(h * scale, 9) for h in hours)


def _require_labelled(m: Manifest, what: str) -> None:
    for seg in m:
        if seg.label_kind is LabelKind.NONE:
            raise PipelineError(f"{what}: segment {seg.id!r} is unlabeled")


def texts_of(hyp_sets: Sequence[HypothesisSet], model_id: str) -> Dict[str, str]:
    return {hs.segment_id: hs.hyps[model_id].text for hs in hyp_sets}


def redecode(backend: Backend, model: ModelHandle, m: Manifest) -> Manifest:
    """Replace every segment's text with ``model``'s hypothesis."""
    hyps = backend.decode(model, m)
    return m.with_labels(texts_of(hyps, model.model_id), LabelKind.PSEUDO)


# -- iteration 0 -------------------------------------------------------------


def iteration0_train_set(s_core: Manifest, s_aux: Optional[Manifest]) -> Manifest:
    if len(s_core) == 0:
        raise PipelineError("S_core must not be empty")
    train = union([s_core, s_aux], name="S") if s_aux is not None else s_core.renamed("S")
    _require_labelled(train, "iteration 0 training set")
    return train


def run_iteration0(
    backend: Backend,
    base: ModelHandle,
    s_core: Manifest,
    s_aux: Optional[Manifest] = None,
    model_id: str = "model0",
) -> Tuple[ModelHandle, Manifest]:
    """Fine-tune the seed model on S = S_core + S_aux. Returns (model_0, S)."""
    train = iteration0_train_set(s_core, s_aux)
    return backend.fine_tune(base, train, model_id), train


# -- single-pass filtering ---------------------------------------------------


def apply_filter(
    backend: Backend,
    primary: ModelHandle,
    u: Manifest,
    strategy: Strategy,
    params: Mapping[str, object],
    total_hours: float,
    seed: int,
    consensus: Sequence[ModelHandle] = (),
    detector: Optional[EntityDetector] = None,
    jobs: Optional[int] = 1,
) -> FilterReport:
    """Decode ``u`` with ``primary`` (plus consensus decoders if needed) and filter once."""
    strategy = Strategy.parse(strategy)
    for seg in u:
        if seg.label_kind is not LabelKind.NONE:
            raise PipelineError(f"unlabeled pool: segment {seg.id!r} already carries a label")
    universe = u.renamed("pseudo")
    hyps = backend.decode(primary, universe)
    pseudo = universe.with_labels(texts_of(hyps, primary.model_id), LabelKind.PSEUDO)

    def one(s: Strategy) -> FilterReport:
        if s is Strategy.RANDOM:
            return filter_random(pseudo)
        if s is Strategy.NER:
            if detector is None:
                raise PipelineError("NER filtering needs an entity detector")
            return filter_ner(pseudo, detector)
        if s is Strategy.AVG_LOGPROB:
            return filter_avg_logprob(universe, hyps, primary.model_id, float(params.get("keep_fraction", 0.5)))
        if s is Strategy.CER_CONSENSUS:
            if len(consensus) != 2:
                raise PipelineError("CER consensus filtering needs two additional decoders")
            runs = [hyps] + [backend.decode(m, universe) for m in consensus]
            return filter_cer_consensus(
                universe, merge_hypotheses(*runs), primary.model_id, float(params.get("threshold", 0.05)), jobs
            )
        raise PipelineError(f"strategy {s.value!r} cannot be nested")

    if strategy is Strategy.MIX:
        mix = [Strategy.parse(x) for x in params.get("mix", ("cer_consensus", "ner"))]
        if len(mix) != 2:
            raise PipelineError(f"mix needs exactly two strategies, got {mix}")
        a, b = mix
        return mix_report(one(a), one(b), total_hours, seed)
    return one(strategy)


def split_retained(report: FilterReport, plan: IterationPlan) -> List[Manifest]:
    try:
        return split_by_hours(report.retained, plan.subset_hours, plan.seed, name="U")
    except ManifestError as e:
        raise PipelineError(
            f"{report.strategy.value} filter retained {report.retained.total_hours:.4f} h; "
            f"the plan needs {plan.total_hours:.4f} h. Shrink the plan or grow the pool. ({e})"
        ) from e


def generate_and_filter(
    backend: Backend,
    model_0: ModelHandle,
    u: Manifest,
    plan: IterationPlan,
    consensus: Sequence[ModelHandle] = (),
    detector: Optional[EntityDetector] = None,
    jobs: Optional[int] = 1,
) -> Tuple[FilterReport, List[Manifest]]:
    """Pseudo-label ``u`` with ``model_0``, filter once, and split into U_1..U_K."""
    report = apply_filter(
        backend, model_0, u, plan.strategy, plan.filter_params, plan.total_hours, plan.seed,
        consensus, detector, jobs,
    )
    return report, split_retained(report, plan)


# -- incremental iterations --------------------------------------------------


@dataclass(frozen=True)
class IterationResult:
    iteration: int
    model: ModelHandle
    u_prime: Manifest
    train: Manifest


def incremental_step(
    backend: Backend,
    base: ModelHandle,
    prev_model: ModelHandle,
    s_core: Manifest,
    buffer_prev: Manifest,
    subset: Manifest,
    iteration: int,
    model_id: str,
    include_s_core: bool = True,
) -> IterationResult:
    buffer = union([buffer_prev, subset], name=f"U'{iteration}")
    buffer = redecode(backend, prev_model, buffer.stripped()) if len(buffer) else buffer
    train = union([s_core, buffer], name=f"train{iteration}") if include_s_core else buffer.renamed(f"train{iteration}")
    if len(train) == 0:
        raise PipelineError(f"iteration {iteration}: empty training set")
    model = backend.fine_tune(base, train, model_id)
    return IterationResult(iteration, model, buffer, train)


def run_incremental(
    backend: Backend,
    base: ModelHandle,
    model_0: ModelHandle,
    s_core: Manifest,
    subsets: Sequence[Manifest],
    include_s_core: bool = True,
    model_id: Callable[[int], str] = lambda i: f"model{i}",
    test: Optional[Manifest] = None,
    on_iteration: Optional[Callable[[IterationResult, Optional["EvalReport"]], None]] = None,
) -> Tuple[ModelHandle, List["EvalReport"]]:
    """Iterations 1..K of the incremental loop. Returns (model_K, per-iteration evaluations)."""
    model, buffer = model_0, Manifest(name="U'0")
    evals: List[EvalReport] = []
    for i, subset in enumerate(subsets, start=1):
        res = incremental_step(backend, base, model, s_core, buffer, subset, i, model_id(i), include_s_core)
        ev = evaluate(backend, res.model, test) if test is not None else None
        if ev is not None:
            evals.append(ev)
        if on_iteration is not None:
            on_iteration(res, ev)
        model, buffer = res.model, res.u_prime
    return model, evals


# -- baselines ---------------------------------------------------------------


def single_step_train_set(
    s_core: Manifest, s_aux: Optional[Manifest], selected: Manifest
) -> Manifest:
    parts = [s_core] + ([s_aux] if s_aux is not None else []) + [selected]
    return union(parts, name="train-sft")


def run_single_step(
    backend: Backend,
    base: ModelHandle,
    s_core: Manifest,
    s_aux: Optional[Manifest],
    u: Manifest,
    plan: IterationPlan,
    consensus: Sequence[ModelHandle] = (),
    detector: Optional[EntityDetector] = None,
    model_id: str = "sft",
    jobs: Optional[int] = 1,
) -> Tuple[ModelHandle, FilterReport, Manifest]:
    """Pseudo-label with ``base`` itself, filter, draw the plan's hours, train once.

    The draw reuses the incremental split, so a shared seed selects the same
    audio as the incremental run with the same strategy.
    """
    _require_labelled(s_core, "S_core")
    report, subsets = generate_and_filter(backend, base, u, plan, consensus, detector, jobs)
    selected = union(subsets, name="selected")
    train = single_step_train_set(s_core, s_aux, selected)
    return backend.fine_tune(base, train, model_id), report, selected


def manual_labels_train_set(s_core: Manifest, u_subset: Manifest, truth: Mapping[str, str]) -> Manifest:
    try:
        labelled = u_subset.with_labels(truth, LabelKind.MANUAL)
    except ManifestError as e:
        raise PipelineError(f"manual-label condition: missing ground truth ({e})") from e
    return union([s_core, labelled], name="train-ml")


def run_manual_labels(
    backend: Backend,
    base: ModelHandle,
    s_core: Manifest,
    u_subset: Manifest,
    truth: Mapping[str, str],
    model_id: str = "ml",
) -> ModelHandle:
    """Upper reference: the same audio trained on its true transcripts."""
    return backend.fine_tune(base, manual_labels_train_set(s_core, u_subset, truth), model_id)


# -- evaluation --------------------------------------------------------------


@dataclass(frozen=True)
class SegmentScore:
    id: str
    errors: int
    ref_len: int


@dataclass(frozen=True)
class EvalReport:
    model_id: str
    wer: float
    counts: AlignmentCounts
    n_segments: int
    hours: float
    segments: Tuple[SegmentScore, ...] = ()

    def to_json(self, per_segment: bool = True) -> dict:
        d = {
            "model_id": self.model_id,
            "wer": self.wer,
            "substitutions": self.counts.substitutions,
            "insertions": self.counts.insertions,
            "deletions": self.counts.deletions,
            "ref_words": self.counts.ref_len,
            "n_segments": self.n_segments,
            "hours": self.hours,
        }
        if per_segment:
            d["segments"] = [{"id": s.id, "errors": s.errors, "ref_len": s.ref_len} for s in self.segments]
        return d


def score_texts(
    refs: Mapping[str, str], hyps: Mapping[str, str], ids: Sequence[str]
) -> Tuple[float, AlignmentCounts, List[SegmentScore]]:
    total = AlignmentCounts()
    rows = []
    for sid in ids:
        counts = wer(refs[sid], hyps[sid])[1]
        total = total + counts
        rows.append(SegmentScore(sid, counts.errors, counts.ref_len))
    return total.errors / max(1, total.ref_len), total, rows


def evaluate(backend: Backend, model: ModelHandle, test: Manifest) -> EvalReport:
    if len(test) == 0:
        raise PipelineError("test manifest is empty")
    _require_labelled(test, "test manifest")
    hyps = texts_of(backend.decode(model, test.stripped()), model.model_id)
    refs = {s.id: s.text for s in test}
    rate, counts, rows = score_texts(refs, hyps, test.ids)
    return EvalReport(model.model_id, rate, counts, len(test), test.total_hours, tuple(rows))


@dataclass(frozen=True)
class PartitionRow:
    partition: str
    hours: float
    n_segments: int
    wer: Optional[float]

    def to_json(self) -> dict:
        return {"partition": self.partition, "hours": self.hours, "n_segments": self.n_segments, "wer": self.wer}


def _partition_row(label: str, m: Manifest, truth: Mapping[str, str]) -> PartitionRow:
    missing = [s.id for s in m if s.id not in truth]
    if missing:
        raise PipelineError(f"no ground truth for segment {missing[0]!r}")
    if len(m) == 0:
        return PartitionRow(label, 0.0, 0, None)
    rate = score_texts(truth, {s.id: s.text or "" for s in m}, m.ids)[0]
    return PartitionRow(label, m.total_hours, len(m), rate)


def evaluate_partitions(report: FilterReport, truth: Mapping[str, str]) -> List[PartitionRow]:
    """True WER of the pseudo-labels in the full pool and in each side of the filter."""
    full = union([report.retained, report.discarded], name="full")
    rows = [_partition_row("full", full, truth)]
    if len(report.discarded) == 0:
        return rows
    rows.append(_partition_row("retained", report.retained, truth))
    rows.append(_partition_row("discarded", report.discarded, truth))
    return rows
