"""Out-of-process decoder and trainer commands.

Decoder: ``<decode_cmd> decode --manifest IN.jsonl --out HYPS.jsonl --model LOCATOR``
writing one ``{"id", "text", "token_logprobs", "model_id"}`` object per line.

Trainer: ``<train_cmd> train --manifest TRAIN.jsonl --base LOCATOR --out LOCATOR``,
exiting 0 and printing the new model's locator as its last stdout line.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from pathlib import Path
from typing import List, Optional, Sequence, Union

from ..filters import Hypothesis, HypothesisSet
from ..manifest import Manifest, write_manifest
from .base import BackendError, ModelHandle, ModelKind


def _argv(cmd: Union[str, Sequence[str]]) -> List[str]:
    return shlex.split(cmd) if isinstance(cmd, str) else list(cmd)


def _run(cmd: List[str], what: str, timeout: Optional[float]) -> subprocess.CompletedProcess:
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as e:
        raise BackendError(f"{what}: could not run {cmd!r}: {e}") from e
    if proc.returncode != 0:
        raise BackendError(
            f"{what}: command exited with status {proc.returncode}\n"
            f"command: {cmd!r}\nstderr:\n{proc.stderr.strip()[-4000:]}"
        )
    return proc


class ExternalBackend:
    def __init__(
        self,
        decode_cmd: Union[str, Sequence[str]],
        train_cmd: Union[str, Sequence[str]],
        workdir: Path,
        timeout: Optional[float] = None,
    ):
        self.decode_cmd = _argv(decode_cmd)
        self.train_cmd = _argv(train_cmd)
        self.workdir = Path(workdir)
        self.timeout = timeout

    def handle(self, model_id: str, locator: str) -> ModelHandle:
        return ModelHandle(model_id, ModelKind.EXTERNAL, locator)

    def _locator(self, model: ModelHandle) -> str:
        if model.kind is not ModelKind.EXTERNAL:
            raise BackendError(f"model {model.model_id!r} is not an external model")
        return model.payload

    def decode(self, model: ModelHandle, manifest: Manifest) -> List[HypothesisSet]:
        locator = self._locator(model)
        job = self.workdir / "decode" / model.model_id
        job.mkdir(parents=True, exist_ok=True)
        src, out = job / f"{manifest.name or 'input'}.jsonl", job / f"{manifest.name or 'input'}.hyps.jsonl"
        write_manifest(manifest, src)
        cmd = self.decode_cmd + ["decode", "--manifest", str(src), "--out", str(out), "--model", locator]
        _run(cmd, f"decode with {model.model_id!r}", self.timeout)

        found = {}
        try:
            lines = out.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise BackendError(f"decode with {model.model_id!r}: no output at {out}: {e}") from e
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                found[rec["id"]] = Hypothesis(rec["text"], rec.get("token_logprobs", ()))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise BackendError(f"{out}:{lineno}: malformed hypothesis line ({e})") from e
        missing = [s.id for s in manifest if s.id not in found]
        if missing:
            raise BackendError(f"decode with {model.model_id!r}: no hypothesis for segment {missing[0]!r}")
        return [HypothesisSet(s.id, {model.model_id: found[s.id]}) for s in manifest]

    def fine_tune(self, base: ModelHandle, train: Manifest, model_id: str) -> ModelHandle:
        base_locator = self._locator(base)
        job = self.workdir / "train" / model_id
        job.mkdir(parents=True, exist_ok=True)
        train_path = job / "train.jsonl"
        write_manifest(train, train_path)
        out = self.workdir / "models" / model_id
        cmd = self.train_cmd + ["train", "--manifest", str(train_path), "--base", base_locator, "--out", str(out)]
        proc = _run(cmd, f"fine-tune {model_id!r}", self.timeout)
        lines = [ln.strip() for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise BackendError(f"fine-tune {model_id!r}: trainer printed no model locator")
        return self.handle(model_id, lines[-1])
