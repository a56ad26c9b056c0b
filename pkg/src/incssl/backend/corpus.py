"""Synthetic transcripts standing in for a real call-centre corpus."""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from ..manifest import LabelKind, Manifest, Segment
from ..ner import Gazetteer

DEFAULT_ENTITIES: Sequence[Tuple[str, str]] = (
    ("john smith", "PERSON"),
    ("mary johnson", "PERSON"),
    ("david miller", "PERSON"),
    ("susan davis", "PERSON"),
    ("robert garcia", "PERSON"),
    ("linda martinez", "PERSON"),
    ("michael brown", "PERSON"),
    ("jennifer wilson", "PERSON"),
    ("new york", "LOCATION"),
    ("los angeles", "LOCATION"),
    ("chicago", "LOCATION"),
    ("houston", "LOCATION"),
    ("phoenix", "LOCATION"),
    ("san diego", "LOCATION"),
    ("florida", "LOCATION"),
    ("texas", "LOCATION"),
    ("ohio", "LOCATION"),
    ("medicare", "ORGANIZATION"),
    ("state farm", "ORGANIZATION"),
    ("allstate", "ORGANIZATION"),
    ("geico", "ORGANIZATION"),
    ("blue cross", "ORGANIZATION"),
    ("toyota", "ORGANIZATION"),
    ("ford motor company", "ORGANIZATION"),
    ("home depot", "ORGANIZATION"),
    ("wells fargo", "ORGANIZATION"),
)

_FILLER = """
a about after again all also am an and any are as ask at back be because been before being
better big both but by call called calling can card change check claim could coverage day
did do does doing done down each email even every few file find fine first for form from
get getting give go going good got great had has have having he hear help her here him his
hold how i if in insurance into is it just keep know last let like little long look looking
lot make many may me mean might month more morning most much must my need never new next
no not now number of off okay old on one only or other our out over pay payment people phone
plan please policy pretty put quick quote rate really right said same say see send should
since so some something soon sorry still sure take talk tell thank thanks that the their them
then there these they thing think this those through time to today too two um under until up
us use very wait want was way we week well were what when where which while who why will
with work would yeah year yes yet you your
"""


def default_gazetteer() -> Gazetteer:
    return Gazetteer(dict(DEFAULT_ENTITIES))


def filler_vocabulary(gazetteer: Optional[Gazetteer] = None) -> List[str]:
    """Filler words with every gazetteer token removed, so fillers never form entities."""
    banned = gazetteer.tokens if gazetteer is not None else set()
    return sorted(set(_FILLER.split()) - banned)


def _sentence(rng: random.Random, vocab: Sequence[str], entity: Optional[Sequence[str]]) -> str:
    n = rng.randint(3, 20)
    if entity is None:
        return " ".join(rng.choice(vocab) for _ in range(n))
    n = max(n, len(entity) + 1)
    fill = [rng.choice(vocab) for _ in range(n - len(entity))]
    pos = rng.randint(0, len(fill))
    return " ".join(fill[:pos] + list(entity) + fill[pos:])


def generate_synthetic_corpus(
    gazetteer: Gazetteer,
    seed: int,
    n_segments: Optional[int] = None,
    hours: Optional[float] = None,
    entity_fraction: float = 0.3,
    id_prefix: str = "seg",
    source: str = "synthetic",
    name: Optional[str] = None,
) -> Tuple[Manifest, Dict[str, str]]:
    """Generate ``n_segments`` (or at least ``hours``) labelled segments plus their truth store.

    Sentences hold 3 to 20 words; ``entity_fraction`` of them embed one
    gazetteer entry. Durations are uniform in [2, 15] seconds.
    """
    if len(gazetteer) == 0:
        raise ValueError("gazetteer must not be empty")
    if (n_segments is None) == (hours is None):
        raise ValueError("give exactly one of n_segments or hours")
    rng = random.Random(seed)
    vocab = filler_vocabulary(gazetteer)
    keys = sorted(gazetteer.entries)
    segments: List[Segment] = []
    truth: Dict[str, str] = {}
    total_s = 0.0
    i = 0
    while (n_segments is not None and i < n_segments) or (hours is not None and total_s < hours * 3600):
        entity = rng.choice(keys).split() if rng.random() < entity_fraction else None
        text = _sentence(rng, vocab, entity)
        duration = round(rng.uniform(2.0, 15.0), 2)
        seg_id = f"{id_prefix}-{i:07d}"
        segments.append(Segment(seg_id, f"synthetic://{seg_id}.wav", duration, text, source, LabelKind.MANUAL))
        truth[seg_id] = text
        total_s += duration
        i += 1
    return Manifest(segments, name=name or id_prefix), truth


def write_truth(truth: Mapping[str, str], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for seg_id, text in truth.items():
            f.write(json.dumps({"id": seg_id, "truth": text}, ensure_ascii=False) + "\n")


def read_truth(path: Union[str, Path]) -> Dict[str, str]:
    truth: Dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                truth[rec["id"]] = rec["truth"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed truth line") from e
    return truth


def experiment_corpus(
    gazetteer: Gazetteer,
    seed: int,
    core_hours: float,
    unlabeled_hours: float,
    test_segments: int,
    aux_hours: float = 0.0,
    entity_fraction: float = 0.3,
) -> Tuple[Dict[str, Manifest], Dict[str, str]]:
    """Disjoint S_core / S_aux / U / test manifests and one truth store covering all of them.

    U is returned stripped of its text.
    """
    parts: Dict[str, Manifest] = {}
    truth: Dict[str, str] = {}
    specs = [
        ("core", {"hours": core_hours}),
        ("aux", {"hours": aux_hours} if aux_hours > 0 else None),
        ("unlabeled", {"hours": unlabeled_hours}),
        ("test", {"n_segments": test_segments}),
    ]
    for offset, (role, size) in enumerate(specs):
        if size is None:
            continue
        m, t = generate_synthetic_corpus(
            gazetteer, seed * 7919 + offset, entity_fraction=entity_fraction,
            id_prefix=f"{role}-s{seed}", source=f"synthetic-{role}", name=role, **size,
        )
        truth.update(t)
        parts[role] = m.stripped() if role == "unlabeled" else m
    return parts, truth
