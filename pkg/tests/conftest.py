import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from incssl.backend import default_gazetteer, write_truth  # noqa: E402
from incssl.backend.corpus import experiment_corpus  # noqa: E402
from incssl.manifest import write_manifest  # noqa: E402

# Acceptance criterion outcomes, filled in by the hooks below.
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "detail": ""})
    if rep.failed:
        entry["ok"] = False
    detail = getattr(item, "acceptance_detail", "")
    if detail:
        entry["detail"] = detail


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        status = "PASS" if e["ok"] else "FAIL"
        line = f"[{status}] {number:2d}. {e['title']}"
        if e["detail"]:
            line += f" -- {e['detail']}"
        terminalreporter.write_line(line)


def write_corpus(root: Path, seed: int = 0, scale: float = 0.01, pool_hours: float = 52.0,
                 test_segments: int = 1000, mode: str = "IFT", strategy: str = "cer_consensus",
                 **overrides) -> Path:
    """Write a small Wow-shaped corpus and a config for it; returns the config path."""
    root.mkdir(parents=True, exist_ok=True)
    if not (root / "truth.jsonl").exists():
        parts, truth = experiment_corpus(
            default_gazetteer(), seed, core_hours=4.5 * scale, aux_hours=38.0 * scale,
            unlabeled_hours=pool_hours, test_segments=test_segments,
        )
        for role, m in parts.items():
            write_manifest(m, root / f"{role}.jsonl")
        write_truth(truth, root / "truth.jsonl")
    cfg = {
        "mode": mode,
        "seed": seed,
        "manifests": {"s_core": "core.jsonl", "s_aux": "aux.jsonl", "unlabeled": "unlabeled.jsonl",
                      "test": "test.jsonl"},
        "truth": "truth.jsonl",
        "backend": {"kind": "simulated", "sim": {"tau_hours": 150.0 * scale}},
        "plan": {"preset": "wow", "scale": scale},
        "filter": {"strategy": strategy},
        "state_dir": f"runs/{mode}-{strategy}",
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    path = root / f"config-{mode}-{strategy}-{len(list(root.glob('config-*.json')))}.json"
    path.write_text(json.dumps(cfg, indent=1, sort_keys=True), encoding="utf-8")
    return path


@pytest.fixture
def corpus_factory(tmp_path):
    def make(**kw):
        return write_corpus(tmp_path / "corpus", **kw)
    return make
