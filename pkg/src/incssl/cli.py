"""Command-line entry point: ``incssl <command> ...``.

Commands::

    gen-corpus   write a synthetic S_core/S_aux/U/test corpus plus a run config
    plan         show the subset schedule of a preset or config
    decode       decode a manifest with a configured model
    filter       filter hypotheses with one strategy and write a FilterReport
    run          run or resume an experiment from a config
    evaluate     score hypotheses against references, or a FilterReport by partition
    report       per-iteration WER table of one or more run directories

Exit status is 0 on success, 1 when the operation fails and 2 on usage errors.
With ``--json`` the only output is one JSON document.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from ._parallel import default_jobs
from .backend import BackendError, ModelHandle, default_gazetteer, write_truth
from .backend.corpus import experiment_corpus, read_truth
from .filters import (
    FilterError,
    FilterReport,
    Strategy,
    filter_avg_logprob,
    filter_cer_consensus,
    filter_ner,
    filter_random,
    mix_report,
    read_filter_report,
    read_hypotheses,
    write_filter_report,
    write_hypotheses,
)
from .manifest import LabelKind, ManifestError, read_manifest, write_manifest
from .ner import ExternalDetector, GazetteerDetector, NerError, load_gazetteer, write_gazetteer
from .pipeline import (
    PRESETS,
    IterationPlan,
    PipelineError,
    evaluate_partitions,
    preset_hours,
    score_texts,
)
from .report import load_rows, render_partitions, render_table
from .runner import Run, load_config

logger = logging.getLogger("incssl")

# Labelled hours per corpus preset: (S_core, S_aux).
CORPUS_PRESETS = {"wow": (4.5, 38.0), "fisher": (50.0, 0.0)}

_OPERATION_ERRORS = (BackendError, FilterError, ManifestError, NerError, PipelineError, OSError, ValueError)


@dataclass
class CommandOutcome:
    exit_code: int
    summary: str
    artifact_paths: List[str] = field(default_factory=list)
    data: Dict[str, Any] = field(default_factory=dict)
    text: str = ""

    def to_json(self) -> dict:
        return {"exit_code": self.exit_code, "summary": self.summary,
                "artifacts": self.artifact_paths, **self.data}


# -- gen-corpus --------------------------------------------------------------


def cmd_gen_corpus(args) -> CommandOutcome:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    core_h, aux_h = CORPUS_PRESETS[args.preset]
    core_h = args.core_hours if args.core_hours is not None else core_h * args.scale
    aux_h = args.aux_hours if args.aux_hours is not None else aux_h * args.scale
    plan_hours = preset_hours(args.preset, args.scale)
    pool_h = args.unlabeled_hours if args.unlabeled_hours is not None else args.pool_factor * sum(plan_hours)

    gaz = load_gazetteer(args.gazetteer) if args.gazetteer else default_gazetteer()
    parts, truth = experiment_corpus(
        gaz, args.seed, core_hours=core_h, unlabeled_hours=pool_h, test_segments=args.test_segments,
        aux_hours=aux_h, entity_fraction=args.entity_fraction,
    )
    paths = {}
    for role, m in parts.items():
        paths[role] = out / f"{role}.jsonl"
        write_manifest(m, paths[role])
    paths["truth"] = out / "truth.jsonl"
    write_truth(truth, paths["truth"])
    paths["gazetteer"] = out / "gazetteer.tsv"
    write_gazetteer(gaz, paths["gazetteer"])

    manifests = {"s_core": "core.jsonl", "unlabeled": "unlabeled.jsonl", "test": "test.jsonl"}
    if "aux" in parts:
        manifests["s_aux"] = "aux.jsonl"
    config = {
        "mode": "IFT",
        "seed": args.seed,
        "manifests": manifests,
        "truth": "truth.jsonl",
        # The learning-curve constant shrinks with the hours so the run
        # follows the same trajectory as the full-size schedule.
        "backend": {"kind": "simulated", "sim": {"tau_hours": 150.0 * args.scale}},
        "plan": {"preset": args.preset, "scale": args.scale},
        "filter": {"strategy": "cer_consensus", "threshold": 0.05, "gazetteer": "gazetteer.tsv"},
        "state_dir": "runs/IFT-C",
    }
    paths["config"] = out / "config.json"
    paths["config"].write_text(json.dumps(config, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    hours = {role: m.total_hours for role, m in parts.items()}
    lines = [f"{role:10s} {len(parts[role]):7d} segments {h:10.3f} h" for role, h in hours.items()]
    return CommandOutcome(
        0, f"corpus written to {out}", [str(p) for p in paths.values()],
        {"hours": hours, "segments": {r: len(m) for r, m in parts.items()}},
        "\n".join(lines) + "\n",
    )


# -- plan --------------------------------------------------------------------


def cmd_plan(args) -> CommandOutcome:
    s_core_h = args.s_core_hours
    if args.config:
        cfg = load_config(args.config)
        plan = cfg.plan
        if s_core_h is None:
            s_core_h = read_manifest(cfg._path("s_core")).total_hours
    else:
        hours = tuple(args.subset_hours) if args.subset_hours else preset_hours(args.preset, args.scale)
        plan = IterationPlan(hours, Strategy.RANDOM, seed=args.seed)
        if s_core_h is None:
            s_core_h = CORPUS_PRESETS.get(args.preset, (0.0, 0.0))[0] * args.scale
    cumulative = plan.cumulative_hours(s_core_h)
    data = {"K": plan.K, "subset_hours": list(plan.subset_hours), "total_hours": plan.total_hours,
            "s_core_hours": s_core_h, "cumulative_hours": cumulative}
    lines = [f"{'iter':>4}  {'subset h':>10}  {'cumulative h':>12}"]
    for i, (h, c) in enumerate(zip(plan.subset_hours, cumulative), start=1):
        lines.append(f"{i:>4}  {h:>10.3f}  {c:>12.3f}")
    if args.manifest:
        available = read_manifest(args.manifest).total_hours
        data["available_hours"] = available
        data["feasible"] = available >= plan.total_hours
        lines.append(f"pool {available:.3f} h, plan needs {plan.total_hours:.3f} h")
    return CommandOutcome(0, f"K={plan.K}, {plan.total_hours:.3f} h", [], data, "\n".join(lines) + "\n")


# -- decode ------------------------------------------------------------------


def _pick_model(run: Run, args) -> ModelHandle:
    env = run.env
    if args.iteration is not None:
        state = run.load_state()
        if state is None or str(args.iteration) not in state["model_handles"]:
            raise PipelineError(f"{run.dir}: no model for iteration {args.iteration}")
        return ModelHandle.from_json(state["model_handles"][str(args.iteration)])
    by_id = {m.model_id: m for m in (env.base, *env.consensus)}
    if args.model not in by_id:
        raise PipelineError(f"unknown model {args.model!r}; choose one of {sorted(by_id)} or pass --iteration")
    return by_id[args.model]


def cmd_decode(args) -> CommandOutcome:
    cfg = load_config(args.config)
    cfg.raw["jobs"] = args.jobs
    run = Run(cfg)
    model = _pick_model(run, args)
    m = read_manifest(args.manifest)
    hyps = run.env.backend.decode(model, m.stripped())
    write_hypotheses(hyps, args.out)
    return CommandOutcome(0, f"decoded {len(hyps)} segments with {model.model_id}", [args.out],
                          {"model_id": model.model_id, "n_segments": len(hyps)})


# -- filter ------------------------------------------------------------------


def _filter_one(strategy: Strategy, args, universe, hyps) -> FilterReport:
    primary = args.primary or _only_model(hyps)
    pseudo = universe.with_labels({hs.segment_id: hs.hyps[primary].text for hs in hyps if primary in hs.hyps},
                                  LabelKind.PSEUDO)
    if strategy is Strategy.RANDOM:
        return filter_random(pseudo)
    if strategy is Strategy.NER:
        if args.detector_cmd:
            detector = ExternalDetector(args.detector_cmd)
        else:
            detector = GazetteerDetector(load_gazetteer(args.gazetteer) if args.gazetteer else default_gazetteer())
        return filter_ner(pseudo, detector)
    if strategy is Strategy.AVG_LOGPROB:
        return filter_avg_logprob(universe, hyps, primary, args.keep_fraction)
    if strategy is Strategy.CER_CONSENSUS:
        return filter_cer_consensus(universe, hyps, primary, args.threshold, args.jobs)
    raise FilterError(f"strategy {strategy.value!r} cannot be nested")


def _only_model(hyps) -> str:
    models = sorted({m for hs in hyps for m in hs.hyps})
    if len(models) != 1:
        raise FilterError(f"hypotheses come from {len(models)} models {models}; name one with --primary")
    return models[0]


def cmd_filter(args) -> CommandOutcome:
    strategy = Strategy.parse(args.strategy)
    universe = read_manifest(args.manifest).stripped()
    hyps = read_hypotheses(*args.hyps)
    if strategy is Strategy.MIX:
        mix = [Strategy.parse(s.strip()) for s in args.mix.split(",")]
        if len(mix) != 2:
            raise FilterError(f"--mix needs exactly two strategies, got {args.mix!r}")
        a, b = mix
        if args.total_hours is None:
            raise FilterError("mix needs --total-hours")
        report = mix_report(_filter_one(a, args, universe, hyps), _filter_one(b, args, universe, hyps),
                            args.total_hours, args.seed)
    else:
        report = _filter_one(strategy, args, universe, hyps)
    refs = write_filter_report(report, args.out)
    data = {"strategy": report.strategy.value, "n_retained": len(report.retained),
            "n_discarded": len(report.discarded), "hours_retained": report.retained.total_hours,
            "hours_discarded": report.discarded.total_hours}
    text = (f"{report.strategy.value}: kept {len(report.retained)} segments ({report.retained.total_hours:.3f} h), "
            f"dropped {len(report.discarded)} ({report.discarded.total_hours:.3f} h)\n")
    return CommandOutcome(0, f"filter report written to {args.out}", list(refs.values()), data, text)


# -- run ---------------------------------------------------------------------


def cmd_run(args) -> CommandOutcome:
    cfg = load_config(args.config)
    cfg.raw["jobs"] = args.jobs
    if args.seed is not None:
        cfg.raw["seed"] = args.seed
    if args.state_dir:
        cfg.raw["state_dir"] = str(Path(args.state_dir).resolve())
    run = Run(cfg)
    outcome = run.run(stop_after=args.stop_after)
    text = ""
    if outcome.status != "stopped":
        text = render_table(load_rows(outcome.state_dir))
    data = {"status": outcome.status, "state_dir": str(outcome.state_dir), "iteration": outcome.iteration}
    return CommandOutcome(0, outcome.summary, outcome.artifacts, data, text)


# -- evaluate ----------------------------------------------------------------


def _references(args) -> Dict[str, str]:
    if args.truth:
        return read_truth(args.truth)
    if args.refs:
        m = read_manifest(args.refs)
        return {s.id: s.text for s in m if s.text is not None}
    raise PipelineError("give --refs (a labelled manifest) or --truth (a truth store)")


def cmd_evaluate(args) -> CommandOutcome:
    refs = _references(args)
    if args.filter_report:
        rows = evaluate_partitions(read_filter_report(args.filter_report), refs)
        data = {"partitions": [r.to_json() for r in rows]}
        return CommandOutcome(0, f"{len(rows)} partitions scored", [], data, render_partitions(data["partitions"]))
    if not args.hyps:
        raise PipelineError("give --hyps or --filter-report")
    hyps = read_hypotheses(args.hyps)
    model = args.model or _only_model(hyps)
    texts = {hs.segment_id: hs.hyps[model].text for hs in hyps if model in hs.hyps}
    ids = list(refs) if args.refs else [sid for sid in texts if sid in refs]
    missing = [sid for sid in ids if sid not in texts]
    if missing:
        raise PipelineError(f"no hypothesis from {model!r} for reference segment {missing[0]!r}")
    if not ids:
        raise PipelineError("no segment has both a reference and a hypothesis")
    rate, counts, _ = score_texts(refs, texts, ids)
    data = {"model_id": model, "wer": rate, "n_segments": len(ids), "substitutions": counts.substitutions,
            "insertions": counts.insertions, "deletions": counts.deletions, "ref_words": counts.ref_len}
    text = (f"{model}: WER {100 * rate:.2f}% over {len(ids)} segments "
            f"(S={counts.substitutions} I={counts.insertions} D={counts.deletions} N={counts.ref_len})\n")
    return CommandOutcome(0, f"WER {rate:.4f}", [], data, text)


# -- report ------------------------------------------------------------------


def cmd_report(args) -> CommandOutcome:
    rows = []
    for d in args.state:
        rows.extend(load_rows(d))
    return CommandOutcome(0, f"{len(rows)} rows", [], {"rows": rows}, render_table(rows))


# -- wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print one JSON document and nothing else")
    common.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes (default: all CPUs)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="incssl", description="Incremental pseudo-label training pipeline.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus and a run config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--preset", choices=sorted(PRESETS), default="wow")
    g.add_argument("--scale", type=float, default=0.01, help="multiplier on every preset hour count")
    g.add_argument("--core-hours", type=float)
    g.add_argument("--aux-hours", type=float)
    g.add_argument("--unlabeled-hours", type=float)
    g.add_argument("--pool-factor", type=float, default=5.2, help="U size as a multiple of the plan total")
    g.add_argument("--test-segments", type=int, default=1000)
    g.add_argument("--entity-fraction", type=float, default=0.3)
    g.add_argument("--gazetteer", help="TSV gazetteer (default: built-in)")
    g.set_defaults(func=cmd_gen_corpus)

    pl = sub.add_parser("plan", parents=[common], help="show the subset schedule")
    pl.add_argument("--config")
    pl.add_argument("--preset", choices=sorted(PRESETS), default="wow")
    pl.add_argument("--scale", type=float, default=1.0)
    pl.add_argument("--subset-hours", type=float, nargs="+")
    pl.add_argument("--s-core-hours", type=float)
    pl.add_argument("--manifest", help="unlabeled pool to check the plan against")
    pl.add_argument("--seed", type=int, default=0)
    pl.set_defaults(func=cmd_plan)

    d = sub.add_parser("decode", parents=[common], help="decode a manifest")
    d.add_argument("--config", required=True)
    d.add_argument("--manifest", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--model", default="base", help="base or a consensus model id")
    d.add_argument("--iteration", type=int, help="use model_i from the config's run directory")
    d.set_defaults(func=cmd_decode)

    f = sub.add_parser("filter", parents=[common], help="filter hypotheses with one strategy")
    f.add_argument("--strategy", required=True, choices=[s.value.replace("_", "-") for s in Strategy])
    f.add_argument("--manifest", required=True, help="the unlabeled universe")
    f.add_argument("--hyps", nargs="+", required=True, help="hypothesis files (three models for cer-consensus)")
    f.add_argument("--primary", help="model whose hypotheses become pseudo-labels")
    f.add_argument("--out", required=True, help="report directory")
    f.add_argument("--threshold", type=float, default=0.05)
    f.add_argument("--keep-fraction", type=float, default=0.5)
    f.add_argument("--gazetteer")
    f.add_argument("--detector-cmd", help="external entity detector command line")
    f.add_argument("--mix", default="cer_consensus,ner", help="two strategies for mix, comma separated")
    f.add_argument("--total-hours", type=float, help="hours drawn by mix")
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_filter)

    r = sub.add_parser("run", parents=[common], help="run or resume an experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--state-dir", help="override the config state_dir")
    r.add_argument("--stop-after", type=int, help="return after persisting this iteration")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", parents=[common], help="score hypotheses or a filter report")
    e.add_argument("--hyps")
    e.add_argument("--model", help="model id inside --hyps")
    e.add_argument("--refs", help="labelled manifest with reference texts")
    e.add_argument("--truth", help="truth store JSONL")
    e.add_argument("--filter-report", help="report directory; scores full/retained/discarded")
    e.set_defaults(func=cmd_evaluate)

    rp = sub.add_parser("report", parents=[common], help="per-iteration table of run directories")
    rp.add_argument("--state", nargs="+", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def dispatch(argv: Optional[Sequence[str]] = None) -> CommandOutcome:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        outcome = args.func(args)
    except _OPERATION_ERRORS as e:
        outcome = CommandOutcome(1, f"error: {e}")
    if args.json:
        print(json.dumps(outcome.to_json(), sort_keys=True))
    elif outcome.exit_code:
        print(outcome.summary, file=sys.stderr)
    else:
        sys.stdout.write(outcome.text or outcome.summary + "\n")
    return outcome


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        return dispatch(argv).exit_code
    except SystemExit as e:  # argparse usage errors
        return int(e.code) if isinstance(e.code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
