"""Resumable experiment runs driven by a JSON config.

A run directory holds::

    state.json                 progress, model handles, artifact refs, config hash
    filter/                    report.json, retained.jsonl, discarded.jsonl (written once)
    subsets/U<i>.jsonl         the incremental subsets
    iter<i>/train.jsonl        what model_i was trained on
    iter<i>/u_prime.jsonl      the re-decoded buffer (IFT only)
    iter<i>/eval.json          test-set scores of model_i
    report.json, report.txt    written when the run completes

Every file is written deterministically (sorted keys, no timestamps, paths
relative to the run directory), so two runs of one config are byte-identical.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from .backend.base import Backend, ModelHandle, consensus_decoders
from .backend.corpus import default_gazetteer, filler_vocabulary, read_truth
from .backend.external import ExternalBackend
from .backend.simulated import SimConfig, SimulatedBackend
from .filters import Strategy, write_filter_report
from .manifest import Manifest, read_manifest, union, write_manifest
from .ner import EntityDetector, ExternalDetector, Gazetteer, GazetteerDetector, load_gazetteer
from .pipeline import (
    IterationPlan,
    PipelineError,
    evaluate,
    generate_and_filter,
    incremental_step,
    iteration0_train_set,
    manual_labels_train_set,
    preset_hours,
    score_texts,
    single_step_train_set,
)
from .report import experiment_id, render_table, run_rows

logger = logging.getLogger(__name__)

STATE_FILE = "state.json"
# Keys that do not change what a run computes.
_UNHASHED = ("state_dir", "jobs")


class Mode(str, enum.Enum):
    IFT = "IFT"
    SFT = "SFT"
    ML = "ML"


def _dump(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _derived_seed(*parts) -> int:
    digest = hashlib.blake2b(":".join(map(str, parts)).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "big")


@dataclass
class RunConfig:
    """Parsed run configuration. Paths are resolved against ``base_dir``."""

    raw: Dict[str, Any]
    base_dir: Path = field(default_factory=Path.cwd)

    def _path(self, key: str, required: bool = True) -> Optional[Path]:
        value = self.raw.get("manifests", {}).get(key) if key != "truth" else self.raw.get("truth")
        if value is None:
            if required:
                raise PipelineError(f"config: missing path for {key!r}")
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def mode(self) -> Mode:
        return Mode(self.raw.get("mode", "IFT"))

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def model_tag(self) -> str:
        return str(self.raw.get("model_tag", "Z"))

    @property
    def state_dir(self) -> Path:
        value = self.raw.get("state_dir")
        if value is None:
            raise PipelineError("config: missing state_dir")
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def jobs(self) -> Optional[int]:
        return self.raw.get("jobs", 1)

    @property
    def filter_cfg(self) -> Dict[str, Any]:
        return dict(self.raw.get("filter", {"strategy": "random"}))

    @property
    def plan(self) -> IterationPlan:
        p = self.raw.get("plan", {"preset": "wow"})
        if "subset_hours" in p:
            hours = tuple(p["subset_hours"])
        else:
            hours = preset_hours(p.get("preset", "wow"), float(p.get("scale", 1.0)))
        f = self.filter_cfg
        params = {k: v for k, v in f.items() if k in ("threshold", "keep_fraction", "mix")}
        return IterationPlan(
            subset_hours=hours,
            strategy=Strategy.parse(f.get("strategy", "random")),
            filter_params=params,
            use_s_aux_iter0=bool(p.get("use_s_aux_iter0", True)),
            include_s_core_each_iter=bool(p.get("include_s_core_each_iter", True)),
            seed=self.seed,
        )

    @property
    def experiment_id(self) -> str:
        if self.raw.get("name"):
            return str(self.raw["name"])
        plan = self.plan
        return experiment_id(self.mode.value, self.model_tag, plan.strategy, plan.include_s_core_each_iter)

    def config_hash(self) -> str:
        hashed = {k: v for k, v in self.raw.items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(hashed, sort_keys=True).encode()).hexdigest()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise PipelineError(f"cannot read config {path}: {e}") from e
    return RunConfig(raw, base_dir=path.parent.resolve())


@dataclass
class Environment:
    """Everything a run needs beyond its manifests."""

    backend: Backend
    base: ModelHandle
    consensus: Tuple[ModelHandle, ...] = ()
    detector: Optional[EntityDetector] = None
    truth: Optional[Mapping[str, str]] = None


def _gazetteer(cfg: RunConfig) -> Optional[Gazetteer]:
    path = cfg.filter_cfg.get("gazetteer")
    if path is None:
        return None
    p = Path(path)
    return load_gazetteer(p if p.is_absolute() else cfg.base_dir / p)


def build_environment(cfg: RunConfig) -> Environment:
    b = cfg.raw.get("backend", {"kind": "simulated"})
    truth_path = cfg._path("truth", required=False)
    truth = read_truth(truth_path) if truth_path is not None else None
    gaz = _gazetteer(cfg)
    detector_cmd = cfg.filter_cfg.get("detector_cmd")
    if detector_cmd:
        detector: Optional[EntityDetector] = ExternalDetector(detector_cmd)
    else:
        detector = GazetteerDetector(gaz if gaz is not None else default_gazetteer())

    kind = b.get("kind", "simulated")
    if kind == "simulated":
        if truth is None:
            raise PipelineError("simulated backend needs a truth store (config key 'truth')")
        backend = SimulatedBackend(
            SimConfig.from_json(b.get("sim", {})),
            truth,
            vocabulary=filler_vocabulary(gaz if gaz is not None else default_gazetteer()),
            jobs=cfg.jobs,
        )
        base_seed = int(b.get("base_seed", cfg.seed))
        base = backend.base_model(base_seed, "base")
        specs = b.get("consensus") or [
            {"model_id": "pub-a", "quality": 0.70},
            {"model_id": "pub-b", "quality": 0.75},
        ]
        aux = tuple(
            backend.model(
                s["model_id"], float(s["quality"]),
                int(s.get("seed", _derived_seed("consensus", cfg.seed, i))),
            )
            for i, s in enumerate(specs)
        )
    elif kind == "external":
        backend = ExternalBackend(b["decode_cmd"], b["train_cmd"], cfg.state_dir / "external", b.get("timeout"))
        base = backend.handle("base", b["base"])
        aux = tuple(backend.handle(s["model_id"], s["locator"]) for s in b.get("consensus", []))
    else:
        raise PipelineError(f"unknown backend kind {kind!r}")
    return Environment(backend, base, aux, detector, truth)


@dataclass
class RunOutcome:
    status: str  # "complete", "already complete", "stopped"
    state_dir: Path
    iteration: int
    summary: str
    artifacts: List[str] = field(default_factory=list)


class Run:
    """One experiment: a config, its environment and its run directory."""

    def __init__(self, cfg: RunConfig, env: Optional[Environment] = None):
        self.cfg = cfg
        self.env = env if env is not None else build_environment(cfg)
        self.dir = cfg.state_dir
        self.plan = cfg.plan
        self.mode = cfg.mode
        self.exp_id = cfg.experiment_id

    # -- state ------------------------------------------------------------

    def _new_state(self) -> Dict[str, Any]:
        return {
            "experiment_id": self.exp_id,
            "mode": self.mode.value,
            "config_hash": self.cfg.config_hash(),
            "seed": self.cfg.seed,
            "K": self.plan.K if self.mode is Mode.IFT else 1,
            "current_iteration": -1,
            "complete": False,
            "model_handles": {},
            "filter_report_ref": None,
            "subset_refs": [],
            "u_prime_refs": {},
            "iterations": {},
        }

    def load_state(self) -> Optional[Dict[str, Any]]:
        path = self.dir / STATE_FILE
        if not path.exists():
            return None
        state = json.loads(path.read_text(encoding="utf-8"))
        want = self.cfg.config_hash()
        if state.get("config_hash") != want:
            raise PipelineError(
                f"refusing to resume {self.dir}: it was created by a different configuration "
                f"(state hash {state.get('config_hash', '?')[:12]}, config hash {want[:12]}). "
                "Use a fresh state_dir or restore the original config."
            )
        return state

    def _save(self, state: Dict[str, Any]) -> None:
        atomic_write_text(self.dir / STATE_FILE, _dump(state))

    def _ref(self, path: Path) -> str:
        return path.relative_to(self.dir).as_posix()

    def _write_manifest(self, m: Manifest, rel: str) -> str:
        write_manifest(m, self.dir / rel)
        return rel

    # -- inputs -----------------------------------------------------------

    def _manifest(self, key: str, required: bool = True) -> Optional[Manifest]:
        path = self.cfg._path(key, required)
        return read_manifest(path, name=key) if path is not None else None

    def _pseudo_wer(self, m: Manifest) -> Optional[float]:
        truth = self.env.truth
        if truth is None or len(m) == 0 or any(s.id not in truth for s in m):
            return None
        return score_texts(truth, {s.id: s.text or "" for s in m}, m.ids)[0]

    # -- steps ------------------------------------------------------------

    def _record(
        self,
        state: Dict[str, Any],
        i: int,
        model: ModelHandle,
        train: Optional[Manifest],
        pseudo: Optional[Manifest],
        test: Manifest,
    ) -> None:
        it_dir = f"iter{i}"
        ev = evaluate(self.env.backend, model, test)
        atomic_write_text(self.dir / it_dir / "eval.json", _dump(ev.to_json()))
        rec: Dict[str, Any] = {
            "model_id": model.model_id,
            "eval_ref": f"{it_dir}/eval.json",
            "test_wer": ev.wer,
            "train_ref": None,
            "train_hours": 0.0,
            "train_segments": 0,
            "pseudo_hours": 0.0,
            "pseudo_wer": None,
        }
        if train is not None:
            rec["train_ref"] = self._write_manifest(train, f"{it_dir}/train.jsonl")
            rec["train_hours"] = train.total_hours
            rec["train_segments"] = len(train)
        if pseudo is not None:
            rec["pseudo_hours"] = pseudo.total_hours
            rec["pseudo_wer"] = self._pseudo_wer(pseudo)
        state["model_handles"][str(i)] = model.to_json()
        state["iterations"][str(i)] = rec
        state["current_iteration"] = i
        self._save(state)
        logger.info("%s iteration %d: %s test WER %.4f", self.exp_id, i, model.model_id, ev.wer)

    def _filter(self, state: Dict[str, Any], primary: ModelHandle, u: Manifest) -> List[Manifest]:
        if state["filter_report_ref"] is not None:
            return [read_manifest(self.dir / ref, name=f"U{k + 1}") for k, ref in enumerate(state["subset_refs"])]
        consensus: Sequence[ModelHandle] = ()
        if Strategy.CER_CONSENSUS in self.plan.strategies():
            consensus = consensus_decoders(primary, self.env.consensus)[1:]
        report, subsets = generate_and_filter(
            self.env.backend, primary, u, self.plan, consensus, self.env.detector, self.cfg.jobs
        )
        refs = write_filter_report(report, self.dir / "filter")
        state["subset_refs"] = [
            self._write_manifest(s, f"subsets/U{k + 1}.jsonl") for k, s in enumerate(subsets)
        ]
        state["filter_report_ref"] = self._ref(Path(refs["report"]))
        self._save(state)
        return subsets

    def _model(self, state: Dict[str, Any], i: int) -> ModelHandle:
        return ModelHandle.from_json(state["model_handles"][str(i)])

    def _model_id(self, i: int) -> str:
        return f"{self.exp_id}.model{i}"

    def run(self, stop_after: Optional[int] = None) -> RunOutcome:
        """Run or resume. ``stop_after=j`` returns once iteration ``j`` is persisted."""
        state = self.load_state()
        if state is not None and state["complete"]:
            return RunOutcome("already complete", self.dir, state["current_iteration"],
                              f"{self.exp_id}: already complete", self._artifacts())
        if state is None:
            self.dir.mkdir(parents=True, exist_ok=True)
            state = self._new_state()
        # Left behind by a process killed between write and rename.
        for stale in self.dir.rglob("*.tmp"):
            stale.unlink()

        s_core = self._manifest("s_core")
        s_aux = self._manifest("s_aux", required=False)
        u = self._manifest("unlabeled")
        test = self._manifest("test")
        backend, base = self.env.backend, self.env.base

        def stopped(i: int) -> Optional[RunOutcome]:
            if stop_after is not None and i >= stop_after and not state["complete"]:
                return RunOutcome("stopped", self.dir, i, f"{self.exp_id}: stopped after iteration {i}")
            return None

        # Iteration 0: the seed model (IFT, ML) or the untouched base (SFT).
        if "0" not in state["model_handles"]:
            if self.mode is Mode.SFT:
                self._record(state, 0, base, None, None, test)
            else:
                aux = s_aux if self.plan.use_s_aux_iter0 else None
                train0 = iteration0_train_set(s_core, aux)
                model0 = backend.fine_tune(base, train0, self._model_id(0))
                self._record(state, 0, model0, train0, None, test)
        out = stopped(0)
        if out:
            return out

        primary = self._model(state, 0)
        subsets = self._filter(state, primary, u)

        if self.mode is Mode.IFT:
            for i in range(1, self.plan.K + 1):
                if str(i) in state["model_handles"]:
                    continue
                prev = self._model(state, i - 1)
                buffer_prev = (
                    read_manifest(self.dir / state["u_prime_refs"][str(i - 1)], name=f"U'{i - 1}")
                    if i > 1 else Manifest(name="U'0")
                )
                res = incremental_step(
                    backend, base, prev, s_core, buffer_prev, subsets[i - 1], i,
                    self._model_id(i), self.plan.include_s_core_each_iter,
                )
                state["u_prime_refs"][str(i)] = self._write_manifest(res.u_prime, f"iter{i}/u_prime.jsonl")
                self._record(state, i, res.model, res.train, res.u_prime, test)
                out = stopped(i)
                if out:
                    return out
        elif "1" not in state["model_handles"]:
            selected = union(subsets, name="selected")
            if self.mode is Mode.SFT:
                aux = s_aux if self.plan.use_s_aux_iter0 else None
                train = single_step_train_set(s_core, aux, selected)
                pseudo = selected
            else:
                if self.env.truth is None:
                    raise PipelineError("manual-label condition needs a truth store (config key 'truth')")
                train = manual_labels_train_set(s_core, selected.stripped(), self.env.truth)
                pseudo = None
            model = backend.fine_tune(base, train, self._model_id(1))
            self._record(state, 1, model, train, pseudo, test)

        state["complete"] = True
        self._save(state)
        self._write_report(state)
        return RunOutcome("complete", self.dir, state["current_iteration"],
                          f"{self.exp_id}: complete", self._artifacts())

    def _write_report(self, state: Dict[str, Any]) -> None:
        rows = run_rows(state)
        atomic_write_text(self.dir / "report.json", _dump({"experiment_id": self.exp_id, "rows": rows}))
        atomic_write_text(self.dir / "report.txt", render_table(rows))

    def _artifacts(self) -> List[str]:
        return [str(self.dir / n) for n in (STATE_FILE, "report.json", "report.txt") if (self.dir / n).exists()]


def run_config(path, stop_after: Optional[int] = None, jobs: Optional[int] = None) -> RunOutcome:
    cfg = load_config(path)
    if jobs is not None:
        cfg.raw["jobs"] = jobs
    return Run(cfg).run(stop_after=stop_after)
