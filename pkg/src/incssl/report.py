"""Per-iteration result tables with ``{Approach}-{Model}-{Method}`` row ids."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

from .filters import Strategy

METHOD_CODES = {
    Strategy.RANDOM: "R",
    Strategy.NER: "N",
    Strategy.CER_CONSENSUS: "C",
    Strategy.AVG_LOGPROB: "P",
    Strategy.MIX: "M",
}


def experiment_id(approach: str, model_tag: str, strategy, include_s_core: bool = True) -> str:
    method = METHOD_CODES[Strategy.parse(strategy)]
    if not include_s_core:
        method += "-noWL"
    return f"{approach}-{model_tag}-{method}"


def run_rows(state: Mapping[str, Any]) -> List[Dict[str, Any]]:
    """One row per completed iteration of a run's state record."""
    exp_id = state["experiment_id"]
    rows = []
    for key in sorted(state["iterations"], key=int):
        rec = state["iterations"][key]
        row_id = exp_id
        if state["mode"] == "SFT" and key == "0":
            # The untouched base model, e.g. Z-PT.
            row_id = exp_id.split("-")[1] + "-PT"
        rows.append(
            {
                "id": row_id,
                "iteration": int(key),
                "model_id": rec["model_id"],
                "train_hours": rec["train_hours"],
                "train_segments": rec["train_segments"],
                "pseudo_hours": rec["pseudo_hours"],
                "pseudo_wer": rec["pseudo_wer"],
                "test_wer": rec["test_wer"],
            }
        )
    return rows


def load_rows(state_dir: Union[str, Path]) -> List[Dict[str, Any]]:
    state = json.loads((Path(state_dir) / "state.json").read_text(encoding="utf-8"))
    return run_rows(state)


def _pct(x: Optional[float]) -> str:
    return "-" if x is None else f"{100 * x:.2f}"


def render_table(rows: Sequence[Mapping[str, Any]]) -> str:
    header = ["ID", "Iter", "Train h", "# Segs", "Pseudo h", "Pseudo WER %", "Test WER %"]
    body = [
        [
            str(r["id"]),
            str(r["iteration"]),
            f"{r['train_hours']:.3f}",
            str(r["train_segments"]),
            f"{r['pseudo_hours']:.3f}",
            _pct(r["pseudo_wer"]),
            _pct(r["test_wer"]),
        ]
        for r in rows
    ]
    widths = [max(len(h), *(len(line[i]) for line in body)) if body else len(h) for i, h in enumerate(header)]

    def fmt(cells: Iterable[str]) -> str:
        cells = list(cells)
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join([first] + rest).rstrip()

    lines = [fmt(header), fmt("-" * w for w in widths)] + [fmt(line) for line in body]
    return "\n".join(lines) + "\n"


def render_partitions(rows: Sequence[Mapping[str, Any]], title: str = "") -> str:
    header = ["Partition", "# Hours", "# Segments", "WER (%)"]
    body = [[r["partition"], f"{r['hours']:.3f}", str(r["n_segments"]), _pct(r["wer"])] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    out = [title] if title else []
    out.append("  ".join(h.ljust(widths[0]) if i == 0 else h.rjust(widths[i]) for i, h in enumerate(header)))
    for b in body:
        out.append("  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(b)))
    return "\n".join(out) + "\n"


def relative_improvement(baseline: float, candidate: float) -> float:
    """Relative WER reduction of ``candidate`` over ``baseline``, in percent."""
    return 100.0 * (baseline - candidate) / baseline
