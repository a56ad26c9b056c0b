"""Named-entity detection for the NER pseudo-label filter.

Two detectors share one batch interface: :class:`GazetteerDetector`
(longest-match lookup against a TSV word list) and :class:`ExternalDetector`,
which talks line-delimited JSON to a child process so any real NER model can
be plugged in. ``python -m incssl.ner --gazetteer g.tsv`` runs the gazetteer
detector as such a child.
"""

from __future__ import annotations

import argparse
import enum
import json
import shlex
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

from .textnorm import normalize, word_tokens


class NerError(RuntimeError):
    pass


class EntityLabel(str, enum.Enum):
    PERSON = "PERSON"
    LOCATION = "LOCATION"
    ORGANIZATION = "ORGANIZATION"
    OTHER = "OTHER"


# Common tag sets (spaCy, CoNLL) folded onto the four labels used here.
_EXTERNAL_LABELS = {
    "PERSON": EntityLabel.PERSON,
    "PER": EntityLabel.PERSON,
    "LOCATION": EntityLabel.LOCATION,
    "LOC": EntityLabel.LOCATION,
    "GPE": EntityLabel.LOCATION,
    "FAC": EntityLabel.LOCATION,
    "ORGANIZATION": EntityLabel.ORGANIZATION,
    "ORG": EntityLabel.ORGANIZATION,
}


@dataclass(frozen=True)
class Entity:
    surface: str
    label: EntityLabel
    span: Optional[Tuple[int, int]]

    def to_json(self) -> dict:
        return {"surface": self.surface, "label": self.label.value}


class Gazetteer:
    """Normalized multi-token keys mapped to entity labels."""

    def __init__(self, entries: Optional[Mapping[str, Union[str, EntityLabel]]] = None):
        self._entries: Dict[Tuple[str, ...], EntityLabel] = {}
        self.max_len = 0
        for surface, label in (entries or {}).items():
            self.add(surface, label)

    def add(self, surface: str, label: Union[str, EntityLabel]) -> None:
        key = tuple(word_tokens(normalize(surface)))
        if not key:
            raise NerError(f"empty gazetteer surface {surface!r}")
        self._entries[key] = EntityLabel(label)
        self.max_len = max(self.max_len, len(key))

    @property
    def entries(self) -> Dict[str, EntityLabel]:
        return {" ".join(k): v for k, v in self._entries.items()}

    @property
    def tokens(self) -> set:
        return {tok for key in self._entries for tok in key}

    def lookup(self, key: Tuple[str, ...]) -> Optional[EntityLabel]:
        return self._entries.get(key)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, surface: str) -> bool:
        return tuple(word_tokens(normalize(surface))) in self._entries

    def copy(self) -> "Gazetteer":
        return Gazetteer(self.entries)


def load_gazetteer(path: Union[str, Path]) -> Gazetteer:
    g = Gazetteer()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            surface, sep, label = line.partition("\t")
            if not sep:
                raise NerError(f"{path}:{lineno}: expected 'surface<TAB>label'")
            label = label.strip()
            if label not in EntityLabel.__members__:
                raise NerError(f"{path}:{lineno}: unknown entity label {label!r}")
            if not normalize(surface).norm:
                raise NerError(f"{path}:{lineno}: empty surface")
            g.add(surface, label)
    return g


def write_gazetteer(g: Gazetteer, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for surface, label in g.entries.items():
            f.write(f"{surface}\t{label.value}\n")


def detect_entities(text: str, g: Gazetteer) -> List[Entity]:
    """Longest match first, scanning left to right; matches never overlap."""
    tokens = word_tokens(normalize(text))
    found: List[Entity] = []
    i, n = 0, len(tokens)
    while i < n:
        for length in range(min(g.max_len, n - i), 0, -1):
            key = tuple(tokens[i : i + length])
            label = g.lookup(key)
            if label is not None:
                found.append(Entity(" ".join(key), label, (i, i + length)))
                i += length
                break
        else:
            i += 1
    return found


class EntityDetector(Protocol):
    def detect_batch(self, items: Sequence[Tuple[str, str]]) -> Dict[str, List[Entity]]:
        """Map each ``(segment_id, text)`` to the entities found in ``text``."""


class GazetteerDetector:
    def __init__(self, gazetteer: Gazetteer):
        self.gazetteer = gazetteer

    def detect_batch(self, items: Sequence[Tuple[str, str]]) -> Dict[str, List[Entity]]:
        return {seg_id: detect_entities(text, self.gazetteer) for seg_id, text in items}


def _locate(surface: str, tokens: List[str], taken: set) -> Optional[Tuple[int, int]]:
    key = word_tokens(normalize(surface))
    if not key:
        return None
    for i in range(len(tokens) - len(key) + 1):
        span = (i, i + len(key))
        if tokens[span[0] : span[1]] == key and span not in taken:
            return span
    return None


class ExternalDetector:
    """Runs ``command`` once per batch and exchanges one JSON object per line.

    Child input: ``{"id": ..., "text": ...}``; child output, one per input:
    ``{"id": ..., "entities": [{"surface": ..., "label": ...}]}``.
    """

    def __init__(self, command: Union[str, Sequence[str]], timeout: Optional[float] = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout

    def detect_batch(self, items: Sequence[Tuple[str, str]]) -> Dict[str, List[Entity]]:
        if not items:
            return {}
        payload = "".join(json.dumps({"id": i, "text": t}, ensure_ascii=False) + "\n" for i, t in items)
        try:
            proc = subprocess.run(
                self.command, input=payload, capture_output=True, text=True, timeout=self.timeout
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            raise NerError(f"NER detector {self.command!r} failed on batch starting at segment {items[0][0]!r}: {e}") from e
        if proc.returncode != 0:
            raise NerError(
                f"NER detector exited with status {proc.returncode} on batch starting at segment "
                f"{items[0][0]!r}; stderr: {proc.stderr.strip()[-2000:]}"
            )

        raw: Dict[str, list] = {}
        for lineno, line in enumerate(proc.stdout.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                raw[rec["id"]] = rec["entities"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise NerError(f"NER detector output line {lineno} malformed: {line[:200]!r}") from e

        out: Dict[str, List[Entity]] = {}
        for seg_id, text in items:
            if seg_id not in raw:
                raise NerError(
                    f"NER detector returned no result for segment {seg_id!r}; stderr: {proc.stderr.strip()[-2000:]}"
                )
            tokens = word_tokens(normalize(text))
            taken: set = set()
            ents = []
            for e in raw[seg_id]:
                span = _locate(str(e.get("surface", "")), tokens, taken)
                if span is not None:
                    taken.add(span)
                label = _EXTERNAL_LABELS.get(str(e.get("label", "")).upper(), EntityLabel.OTHER)
                ents.append(Entity(str(e.get("surface", "")), label, span))
            out[seg_id] = ents
        return out


def serve(gazetteer: Gazetteer, stdin=None, stdout=None) -> None:
    """Answer the external-detector protocol using ``gazetteer``."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        ents = detect_entities(req.get("text", ""), gazetteer)
        stdout.write(json.dumps({"id": req["id"], "entities": [e.to_json() for e in ents]}) + "\n")
    stdout.flush()


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Gazetteer NER worker speaking the line-JSON protocol.")
    parser.add_argument("--gazetteer", required=True)
    args = parser.parse_args(argv)
    serve(load_gazetteer(args.gazetteer))
    return 0


if __name__ == "__main__":
    sys.exit(main())
