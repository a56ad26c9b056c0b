import math
import sys

import pytest
from hypothesis import given, settings, strategies as st

from incssl.backend import (
    BackendError,
    ExternalBackend,
    ModelHandle,
    ModelKind,
    SimConfig,
    SimModelState,
    SimulatedBackend,
    consensus_decoders,
    default_gazetteer,
    generate_synthetic_corpus,
)
from incssl.backend.simulated import segment_difficulty
from incssl.manifest import LabelKind, Manifest, Segment
from incssl.metrics import corpus_wer
from incssl.ner import detect_entities


@pytest.fixture(scope="module")
def corpus():
    m, truth = generate_synthetic_corpus(default_gazetteer(), seed=11, n_segments=1000)
    return m, truth


def decoded_wer(backend, model, m, truth):
    hyps = backend.decode(model, m.stripped())
    return corpus_wer([(truth[h.segment_id], h.hyps[model.model_id].text) for h in hyps])[0]


def test_perfect_model_reproduces_truth(corpus):
    m, truth = corpus
    b = SimulatedBackend(SimConfig(), truth)
    model = b.model("perfect", 1.0, 0)
    for hs in b.decode(model, m.stripped()):
        assert hs.hyps["perfect"].text == truth[hs.segment_id]


def test_decode_deterministic(corpus):
    m, truth = corpus
    b = SimulatedBackend(SimConfig(), truth)
    model = b.base_model(3)
    assert b.decode(model, m) == b.decode(model, m)


def test_parallel_decode_matches_serial(corpus):
    m, truth = corpus
    big = Manifest([Segment(f"{s.id}-{k}", "a", s.duration_s) for k in range(3) for s in m])
    truth3 = {f"{sid}-{k}": t for k in range(3) for sid, t in truth.items()}
    serial = SimulatedBackend(SimConfig(), truth3, jobs=1).decode(ModelHandle("m", "simulated", SimModelState(0.6, 2)), big)
    pooled = SimulatedBackend(SimConfig(), truth3, jobs=2).decode(ModelHandle("m", "simulated", SimModelState(0.6, 2)), big)
    assert serial == pooled


def test_channel_expectation(corpus):
    m, truth = corpus
    cfg = SimConfig()
    b = SimulatedBackend(cfg, truth)
    got = decoded_wer(b, b.model("q55", 0.55, 7), m, truth)
    predicted = cfg.p_max * (1 - 0.55) * (1 + cfg.corrupt_mix[2])
    assert abs(got - predicted) <= 0.03


def test_channel_expectation_without_difficulty(corpus):
    m, truth = corpus
    cfg = SimConfig(difficulty_shape=None)
    b = SimulatedBackend(cfg, truth)
    assert abs(decoded_wer(b, b.model("q", 0.55, 1), m, truth) - cfg.expected_wer(0.55)) <= 0.03


def test_channel_monotone_in_quality(corpus):
    m, truth = corpus
    b = SimulatedBackend(SimConfig(), truth)
    rates = [decoded_wer(b, b.model(f"q{q}", q, 5), m, truth) for q in (0.3, 0.5, 0.7, 0.9)]
    assert all(x + 0.01 >= y for x, y in zip(rates, rates[1:]))


def test_same_seed_errors_nest(corpus):
    # Common random numbers: a better model's error words are a subset of a worse one's.
    m, truth = corpus
    b = SimulatedBackend(SimConfig(), truth)
    lo = {h.segment_id: h.hyps["lo"].text for h in b.decode(b.model("lo", 0.5, 9), m)}
    hi = {h.segment_id: h.hyps["hi"].text for h in b.decode(b.model("hi", 0.8, 9), m)}
    for sid in m.ids:
        if lo[sid] == truth[sid]:
            assert hi[sid] == truth[sid]


def test_logprobs_valid_and_informative(corpus):
    m, truth = corpus
    b = SimulatedBackend(SimConfig(), truth)
    hyps = b.decode(b.model("x", 0.55, 4), m)
    clean, noisy = [], []
    for hs in hyps:
        h = hs.hyps["x"]
        assert h.token_logprobs and all(lp <= 0 for lp in h.token_logprobs)
        assert len(h.token_logprobs) == len(h.text.split()) + 1
        avg = math.fsum(h.token_logprobs) / len(h.token_logprobs)
        (clean if h.text == truth[hs.segment_id] else noisy).append(avg)
    assert sum(clean) / len(clean) > sum(noisy) / len(noisy)


def test_missing_truth():
    b = SimulatedBackend(SimConfig(), {})
    with pytest.raises(BackendError, match="ground truth"):
        b.decode(b.base_model(0), Manifest([Segment("s1", "a", 1.0)]))


def test_difficulty_keyed_on_segment_only():
    cfg = SimConfig()
    assert segment_difficulty(cfg, "abc") == segment_difficulty(cfg, "abc")
    assert segment_difficulty(SimConfig(difficulty_shape=None), "abc") == 1.0


def test_learning_curve_examples():
    cfg = SimConfig()
    assert cfg.learning_curve(cfg.q_base, 0.0) == cfg.q_base
    assert cfg.learning_curve(cfg.q_base, 1e9) == pytest.approx(cfg.q_max)
    assert cfg.learning_curve(cfg.q_base, 150.0) == pytest.approx(0.95 - 0.40 * math.exp(-1))
    assert cfg.learning_curve(cfg.q_base, 150.0) == pytest.approx(0.8029, abs=1e-4)


def _manual(n, dur, prefix="m"):
    segs = [Segment(f"{prefix}{i}", "a", dur, "yes", "", LabelKind.MANUAL) for i in range(n)]
    return Manifest(segs), {s.id: "yes" for s in segs}


def test_fine_tune_150_perfect_hours():
    train, truth = _manual(150, 3600.0)
    b = SimulatedBackend(SimConfig(), truth)
    base = b.base_model(0)
    tuned = b.fine_tune(base, train, "ft")
    assert tuned.payload.quality == pytest.approx(0.95 - 0.40 * math.exp(-1))
    assert tuned.payload.seed == base.payload.seed
    assert base.payload.quality == 0.55  # input handle untouched


def test_fine_tune_weights_label_quality():
    segs = [Segment(f"p{i}", "a", 3600.0, "no no", "", LabelKind.PSEUDO) for i in range(10)]
    truth = {s.id: "yes yes" for s in segs}
    b = SimulatedBackend(SimConfig(), truth)
    assert b.effective_hours(Manifest(segs)) == 0.0
    half = [s.relabel("yes no", LabelKind.PSEUDO) for s in segs]
    assert b.effective_hours(Manifest(half)) == pytest.approx(5.0)


@given(st.floats(0, 500), st.floats(0, 500))
def test_learning_curve_monotone(h1, h2):
    cfg = SimConfig()
    lo, hi = sorted((h1, h2))
    assert cfg.learning_curve(cfg.q_base, lo) <= cfg.learning_curve(cfg.q_base, hi)


def test_fine_tune_rejects_unlabeled():
    b = SimulatedBackend(SimConfig(), {"s": "x"})
    with pytest.raises(BackendError, match="'s'"):
        b.fine_tune(b.base_model(0), Manifest([Segment("s", "a", 1.0)]), "m")


def test_sim_config_validation():
    with pytest.raises(BackendError):
        SimConfig(corrupt_mix=(0.5, 0.5, 0.5))
    with pytest.raises(BackendError):
        SimConfig(q_base=0.9, q_max=0.8)
    with pytest.raises(BackendError):
        SimConfig(p_max=1.5)
    assert SimConfig.from_json(SimConfig(tau_hours=3.0).to_json()) == SimConfig(tau_hours=3.0)


def test_handles():
    with pytest.raises(BackendError):
        SimModelState(1.2, 0)
    with pytest.raises(BackendError):
        ModelHandle("m", ModelKind.EXTERNAL, SimModelState(0.5, 0))
    h = ModelHandle("m", "simulated", SimModelState(0.5, 3))
    assert ModelHandle.from_json(h.to_json()) == h


def test_consensus_decoders():
    b = SimulatedBackend(SimConfig(), {})
    m0, a, c = b.model("m0", 0.6, 0), b.model("pubA", 0.7, 1), b.model("pubB", 0.75, 2)
    trio = consensus_decoders(m0, [a, c])
    assert [m.model_id for m in trio] == ["m0", "pubA", "pubB"]
    with pytest.raises(BackendError):
        consensus_decoders(m0, [m0, a])
    with pytest.raises(BackendError):
        consensus_decoders(m0, [a])


def test_trio_yields_three_hypotheses(corpus):
    from incssl.filters import merge_hypotheses
    m, truth = corpus
    b = SimulatedBackend(SimConfig(), truth)
    trio = consensus_decoders(b.model("m0", 0.6, 0), [b.model("pa", 0.7, 1), b.model("pb", 0.75, 2)])
    merged = merge_hypotheses(*(b.decode(x, m) for x in trio))
    assert all(len(hs.hyps) == 3 for hs in merged)


def test_corpus_generation_examples(tmp_path):
    g = default_gazetteer()
    m1, t1 = generate_synthetic_corpus(g, seed=1, n_segments=100)
    m2, t2 = generate_synthetic_corpus(g, seed=1, n_segments=100)
    assert len(m1) == 100 and m1 == m2 and t1 == t2
    assert all(2.0 <= s.duration_s <= 15.0 for s in m1)
    assert all(3 <= len(t.split()) <= 20 for t in t1.values())
    none, _ = generate_synthetic_corpus(g, seed=2, n_segments=200, entity_fraction=0.0)
    assert sum(len(detect_entities(s.text, g)) for s in none) == 0
    every, _ = generate_synthetic_corpus(g, seed=2, n_segments=200, entity_fraction=1.0)
    assert all(detect_entities(s.text, g) for s in every)


def test_corruption_only_destroys_entities():
    g = default_gazetteer()
    m, truth = generate_synthetic_corpus(g, seed=3, n_segments=500, entity_fraction=1.0)
    b = SimulatedBackend(SimConfig(), truth)
    lost = 0
    for hs in b.decode(b.model("x", 0.4, 1), m):
        before = len(detect_entities(truth[hs.segment_id], g))
        after = len(detect_entities(hs.hyps["x"].text, g))
        assert after <= before
        lost += after < before
    assert lost > 0


FAKE = """
import json, sys
args = sys.argv[1:]
opts = dict(zip(args[1::2], args[2::2]))
if args[0] == "decode":
    if "broken" in opts["--model"]:
        sys.stderr.write("cuda out of memory")
        sys.exit(2)
    with open(opts["--manifest"]) as f, open(opts["--out"], "w") as out:
        for line in f:
            seg = json.loads(line)
            out.write(json.dumps({"id": seg["id"], "text": "hi " + opts["--model"], "token_logprobs": [-0.5],
                                  "model_id": "ignored"}) + "\\n")
elif args[0] == "train":
    n = sum(1 for _ in open(opts["--manifest"]))
    print("training on", n, "segments")
    print(opts["--out"] + ".ckpt")
"""


@pytest.fixture
def external(tmp_path):
    script = tmp_path / "fake_asr.py"
    script.write_text(FAKE)
    cmd = [sys.executable, str(script)]
    return ExternalBackend(cmd, cmd, tmp_path / "work", timeout=60)


def test_external_decode_and_train(external):
    m = Manifest([Segment("s1", "a.wav", 2.0), Segment("s2", "b.wav", 3.0)], name="u")
    base = external.handle("base", "ckpt-0")
    hyps = external.decode(base, m)
    assert [h.hyps["base"].text for h in hyps] == ["hi ckpt-0", "hi ckpt-0"]
    train = m.with_labels({"s1": "x", "s2": "y"}, LabelKind.PSEUDO)
    new = external.fine_tune(base, train, "model1")
    assert new.kind is ModelKind.EXTERNAL and new.payload.endswith("model1.ckpt")


def test_external_failure_has_diagnostics(external):
    m = Manifest([Segment("s1", "a.wav", 2.0)], name="u")
    with pytest.raises(BackendError, match="cuda out of memory"):
        external.decode(external.handle("b", "broken"), m)


def test_external_rejects_simulated_handle(external):
    with pytest.raises(BackendError):
        external.decode(ModelHandle("m", "simulated", SimModelState(0.5, 0)), Manifest())


def test_external_command_string_is_shell_split(tmp_path):
    b = ExternalBackend(f"{sys.executable} -u script.py", ["x"], tmp_path)
    assert b.decode_cmd == [sys.executable, "-u", "script.py"]
    assert b.train_cmd == ["x"]
