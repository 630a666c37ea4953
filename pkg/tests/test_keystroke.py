import itertools
import math

import numpy as np
import pytest

from usblab.bus import HubConfig
from usblab.errors import DomainError
from usblab.keystroke import (
    DetectorConfig,
    DigramHmm,
    HmmModel,
    detect_key_events,
    detection_f1,
    evaluate_topk,
    extract_digram_latencies,
    fit_hmm,
    gaussian_logpdf,
    infer_event_kinds,
    label_events,
    n_viterbi,
    rank_dictionary,
)
from usblab.records import SpyTrace
from usblab.scenarios import gen_typist_events, make_typist_profile
from usblab.sim import InterruptDevice, Workload, run_simulation


def trace_from_delays(delays_ms, start_us=0):
    delays = np.asarray([int(round(d * 1000)) for d in delays_ms], dtype=np.int64)
    t = start_us + np.cumsum(delays)
    return SpyTrace(t_us=t, delay_us=delays)


# ---------------------------------------------------------------------------
# detection


def test_single_threshold_crossing():
    spy = trace_from_delays([1.0, 1.0, 2.1, 1.0])
    est = detect_key_events(spy)
    assert len(est) == 1
    # the gap covers (2000, 4100]; the displaced poll was due at 3000
    assert int(est[0]) == 3000


def test_no_events_below_threshold():
    spy = trace_from_delays([1.0] * 20)
    assert len(detect_key_events(spy)) == 0


def test_merge_window_collapses_adjacent_gaps():
    # two 2 ms gaps separated by 1 ms of quiet
    spy = trace_from_delays([1.0, 1.0, 2.0, 1.0, 2.0, 1.0])
    merged = detect_key_events(spy, DetectorConfig(merge_window_ms=3.0))
    apart = detect_key_events(spy, DetectorConfig(merge_window_ms=0.25))
    assert len(merged) == 1 and len(apart) == 2


def test_drop_isolated_spike():
    cfg = DetectorConfig(drop_isolated=True)
    lone = trace_from_delays([1.0] * 10 + [2.5] + [1.0] * 200)
    assert len(detect_key_events(lone, cfg)) == 0
    # companion within the overlap window survives
    paired = trace_from_delays([1.0] * 10 + [2.5] + [1.0] * 30 + [2.5] + [1.0] * 10)
    assert len(detect_key_events(paired, cfg)) == 2


def test_empty_trace_rejected():
    with pytest.raises(DomainError):
        detect_key_events(SpyTrace(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)))


def test_detector_noiseless_end_to_end_alignment():
    prof = make_typist_profile("etaoinshrd", seed=5, overlap_rate=0.0)
    word = "stain"
    truth = gen_typist_events(word, prof, seed=21)
    wl = Workload(
        interrupt_devices=(
            InterruptDevice("mouse", poll_interval_us=1000),
            InterruptDevice("keyboard", events=truth),
        ),
        spy_device_id="mouse",
    )
    duration = truth.events[-1].t_us + 300_000
    bundle = run_simulation(HubConfig(), wl, duration, seed=1, jitter_us=0)
    est = detect_key_events(bundle.spy)
    # two events per keystroke, each aligned within one frame
    assert len(est) == 2 * len(word)
    truth_ts = np.array([e.t_us for e in truth.events])
    assert np.all(np.abs(np.sort(est) - np.sort(truth_ts)) <= 1000)
    assert detection_f1(est, truth, tolerance_ms=1.0) == 1.0


# ---------------------------------------------------------------------------
# labelling


def test_infer_kinds_alternation_and_overlap():
    # sequential: P R P R with wide gaps
    times = np.array([0, 65_000, 200_000, 265_000])
    assert infer_event_kinds(times) == ["press", "release", "press", "release"]
    # overlap: second press lands 30 ms after the first, before its release
    times = np.array([0, 30_000, 60_000, 160_000])
    assert infer_event_kinds(times) == ["press", "press", "release", "release"]


def test_label_events_zero_noise_perfect():
    prof = make_typist_profile("etaoinshrd", seed=5, overlap_rate=0.0)
    truth = gen_typist_events("herons", prof, seed=3)
    wl = Workload(
        interrupt_devices=(
            InterruptDevice("mouse", poll_interval_us=1000),
            InterruptDevice("keyboard", events=truth),
        ),
        spy_device_id="mouse",
    )
    bundle = run_simulation(HubConfig(), wl, truth.events[-1].t_us + 300_000, seed=1, jitter_us=0)
    est = detect_key_events(bundle.spy)
    report = label_events(est, bundle.key_truth)
    assert report.accuracy == 1.0


def test_label_events_empty_estimates_flagged():
    prof = make_typist_profile("ab", seed=5, overlap_rate=0.0)
    truth = gen_typist_events("ab", prof, seed=3)
    report = label_events(np.zeros(0, dtype=np.int64), truth)
    assert report.accuracy == 0.0 and report.empty_input


# ---------------------------------------------------------------------------
# digram latencies


def test_extract_digram_latencies():
    assert extract_digram_latencies([0, 200_000, 450_000]) == [200.0, 250.0]
    assert extract_digram_latencies([0, 100_000]) == [100.0]
    with pytest.raises(DomainError):
        extract_digram_latencies([1000])


# ---------------------------------------------------------------------------
# HMM fitting


def test_fit_single_observation_emission():
    model = fit_hmm([("ab", [200.0])], "ab", ["ab"])
    assert model.emissions[("a", "b")][0] == 200.0


def test_fit_transitions_hand_computed():
    dictionary = ["aba", "abb", "bab"]
    corpus = [("aba", [200.0, 250.0]), ("bab", [150.0, 210.0])]
    model = fit_hmm(corpus, "ab", dictionary)
    assert set(model.states) == {("a", "b"), ("b", "a"), ("b", "b")}
    # first digrams: ab twice, ba once
    assert model.initial[("a", "b")] == pytest.approx(2 / 3)
    assert model.initial[("b", "a")] == pytest.approx(1 / 3)
    assert model.initial[("b", "b")] == 0.0
    # from (a,b): counts ba=1, bb=1, add-one over both -> 1/2 each
    assert model.transitions[("a", "b")][("b", "a")] == pytest.approx(0.5)
    assert model.transitions[("a", "b")][("b", "b")] == pytest.approx(0.5)
    # from (b,a): only legal continuation is (a,b)
    assert model.transitions[("b", "a")] == {("a", "b"): 1.0}
    # rows sum to one
    for s, row in model.transitions.items():
        if row:
            assert sum(row.values()) == pytest.approx(1.0)
    # emissions pool across occurrences
    assert model.emissions[("a", "b")][0] == pytest.approx(205.0)
    assert model.emissions[("b", "a")][0] == pytest.approx(200.0)
    # unseen digram falls back to pooled statistics
    assert model.emissions[("b", "b")][0] == pytest.approx(202.5)
    model.validate()


def test_fit_rejects_bad_corpus():
    with pytest.raises(DomainError):
        fit_hmm([], "ab", ["ab"])
    with pytest.raises(DomainError):
        fit_hmm([("zz", [100.0])], "ab", ["ab"])
    with pytest.raises(DomainError):
        fit_hmm([("ab", [100.0, 50.0])], "ab", ["ab"])


# ---------------------------------------------------------------------------
# n-Viterbi against exhaustive enumeration


def random_digram_model(rng, n_chars=2, drop_states=0):
    chars = "abc"[:n_chars]
    states = [(x, y) for x in chars for y in chars]
    while drop_states and len(states) > 2:
        states.pop(int(rng.integers(len(states))))
        drop_states -= 1
    init_raw = rng.random(len(states))
    initial = {s: float(v) / float(init_raw.sum()) for s, v in zip(states, init_raw)}
    transitions = {}
    for s in states:
        nxt = [c for c in states if c[0] == s[1]]
        if not nxt:
            transitions[s] = {}
            continue
        raw = rng.random(len(nxt))
        transitions[s] = {c: float(v) / float(raw.sum()) for c, v in zip(nxt, raw)}
    emissions = {s: (float(rng.uniform(50, 400)), float(rng.uniform(5, 40))) for s in states}
    return HmmModel(tuple(states), initial, transitions, emissions)


def brute_force_ranking(model, obs):
    results = []
    for path in itertools.product(model.states, repeat=len(obs)):
        p0 = model.initial.get(path[0], 0.0)
        if p0 <= 0.0:
            continue
        score = math.log(p0) + gaussian_logpdf(obs[0], *model.emissions[path[0]])
        ok = True
        for i in range(1, len(obs)):
            p = model.transitions.get(path[i - 1], {}).get(path[i], 0.0)
            if p <= 0.0:
                ok = False
                break
            score = (score + math.log(p)) + gaussian_logpdf(obs[i], *model.emissions[path[i]])
        if ok:
            results.append((path, score))
    results.sort(key=lambda it: (-it[1], it[0]))
    return results


@pytest.mark.parametrize("trial", range(25))
def test_n_viterbi_matches_brute_force(trial):
    rng = np.random.default_rng(1000 + trial)
    model = random_digram_model(rng, n_chars=2, drop_states=int(rng.integers(0, 2)))
    obs = [float(rng.uniform(40, 420)) for _ in range(int(rng.integers(1, 7)))]
    got = n_viterbi(model, obs, 50)
    expected = brute_force_ranking(model, obs)[:50]
    assert [p for p, _ in got] == [p for p, _ in expected] or sorted(
        got, key=lambda it: (-it[1], it[0])
    ) == expected
    assert [s for _, s in got] == [s for _, s in expected]


def test_n_viterbi_scores_nonincreasing_and_prefix_property():
    rng = np.random.default_rng(77)
    for _ in range(10):
        model = random_digram_model(rng)
        obs = [float(rng.uniform(40, 420)) for _ in range(5)]
        full = n_viterbi(model, obs, 50)
        scores = [s for _, s in full]
        assert scores == sorted(scores, reverse=True)
        for n in (1, 3, 10):
            assert n_viterbi(model, obs, n) == full[:n]


def test_n_viterbi_single_feasible_path():
    states = (("a", "b"), ("b", "a"))
    model = HmmModel(
        states=states,
        initial={("a", "b"): 1.0, ("b", "a"): 0.0},
        transitions={("a", "b"): {("b", "a"): 1.0}, ("b", "a"): {("a", "b"): 1.0}},
        emissions={s: (100.0, 10.0) for s in states},
    )
    for n in (1, 5):
        out = n_viterbi(model, [100.0, 100.0, 100.0], n)
        assert out[0][0] == (("a", "b"), ("b", "a"), ("a", "b"))
        assert len(out) == 1


def test_n_viterbi_validation():
    model = random_digram_model(np.random.default_rng(0))
    with pytest.raises(DomainError):
        n_viterbi(model, [100.0], 0)
    with pytest.raises(DomainError):
        n_viterbi(model, [], 1)


# ---------------------------------------------------------------------------
# dictionary ranking


def test_rank_true_word_first_with_sharp_emissions():
    dictionary = ["abab", "abba", "baba", "bbbb", "aabb"]
    model = fit_hmm([("abab", [200.0, 300.0, 200.0])], "ab", dictionary, std_floor_ms=5.0)
    obs = [200.0, 300.0, 200.0]
    ranked = rank_dictionary(model, obs, dictionary)
    assert ranked.entries[0][0] == "abab"
    assert not ranked.no_eligible


def test_rank_single_eligible_word():
    model = fit_hmm([("ab", [150.0])], "ab", ["ab", "aba"])
    ranked = rank_dictionary(model, [150.0], ["ab", "aba"])
    assert len(ranked.entries) == 1 and ranked.entries[0][0] == "ab"


def test_rank_no_eligible_words_flagged():
    model = fit_hmm([("ab", [150.0])], "ab", ["ab"])
    ranked = rank_dictionary(model, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0], ["ab"])
    assert ranked.no_eligible and ranked.entries == ()


def test_rank_matches_hand_computed_gaussian_sums():
    states = (("a", "b"), ("b", "a"), ("b", "b"))
    model = HmmModel(
        states=states,
        initial={("a", "b"): 0.6, ("b", "a"): 0.3, ("b", "b"): 0.1},
        transitions={
            ("a", "b"): {("b", "a"): 0.7, ("b", "b"): 0.3},
            ("b", "a"): {("a", "b"): 1.0},
            ("b", "b"): {("b", "a"): 0.5, ("b", "b"): 0.5},
        },
        emissions={("a", "b"): (200.0, 10.0), ("b", "a"): (300.0, 20.0), ("b", "b"): (250.0, 15.0)},
    )
    obs = [210.0, 290.0]
    dictionary = ["aba", "abb", "bba"]

    def g(x, m, s):
        return -0.5 * ((x - m) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)

    expected = {
        "aba": math.log(0.6) + g(210, 200, 10) + math.log(0.7) + g(290, 300, 20),
        "abb": math.log(0.6) + g(210, 200, 10) + math.log(0.3) + g(290, 250, 15),
        "bba": math.log(0.1) + g(210, 250, 15) + math.log(0.5) + g(290, 300, 20),
    }
    ranked = rank_dictionary(model, obs, dictionary)
    got = dict(ranked.entries)
    for w, val in expected.items():
        assert got[w] == pytest.approx(val, rel=1e-12)
    assert [w for w, _ in ranked.entries] == sorted(expected, key=expected.get, reverse=True)


def test_rank_order_invariant_to_constant_loglik_shift():
    dictionary = ["abab", "abba", "baba", "bbbb", "aabb"]
    model = fit_hmm([("abab", [200.0, 300.0, 200.0])], "ab", dictionary)
    obs = [205.0, 280.0, 210.0]
    base = [w for w, _ in rank_dictionary(model, obs, dictionary).entries]
    # scaling every transition by a constant shifts all same-length scores equally
    scaled = HmmModel(
        states=model.states,
        initial=model.initial,
        transitions={s: {c: p * 0.25 for c, p in row.items()} for s, row in model.transitions.items()},
        emissions=model.emissions,
    )
    shifted = [w for w, _ in rank_dictionary(scaled, obs, dictionary).entries]
    assert base == shifted


# ---------------------------------------------------------------------------
# top-k evaluation


class FakeRanked:
    def __init__(self, words):
        self.entries = tuple((w, -float(i)) for i, w in enumerate(words))

    def rank_of(self, word):
        for i, (w, _) in enumerate(self.entries, start=1):
            if w == word:
                return i
        return None


def test_topk_truth_always_first():
    rankings = [FakeRanked(["w"] + [f"x{i}" for i in range(60)]) for _ in range(5)]
    acc = evaluate_topk(rankings, ["w"] * 5)
    assert acc[10] == 1.0 and acc[50] == 1.0


def test_topk_truth_at_rank_11():
    words = [f"x{i}" for i in range(10)] + ["w"] + [f"y{i}" for i in range(50)]
    rankings = [FakeRanked(words) for _ in range(4)]
    acc = evaluate_topk(rankings, ["w"] * 4)
    assert acc[10] == 0.0 and acc[50] == 1.0


def test_topk_validation():
    with pytest.raises(DomainError):
        evaluate_topk([FakeRanked(["a"])], ["a"], ks=(0,))
    with pytest.raises(DomainError):
        evaluate_topk([], [])


# ---------------------------------------------------------------------------
# estimator wrapper


def test_digram_hmm_estimator_roundtrip():
    dictionary = ["abab", "abba", "baba"]
    est = DigramHmm(dictionary=dictionary, alphabet="ab")
    X = [[200.0, 300.0, 200.0], [300.0, 200.0, 300.0]]
    y = ["abab", "baba"]
    est.fit(X, y)
    assert est.predict([[200.0, 300.0, 200.0]]) == ["abab"]
    params = est.get_params()
    assert params["alphabet"] == "ab" and params["dictionary"] == dictionary
    top = est.decode([200.0, 300.0], n=3)
    assert len(top) >= 1
