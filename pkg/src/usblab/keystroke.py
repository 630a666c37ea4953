"""Keystroke recovery from mouse-latency traces.

Pipeline: threshold detection of displaced poll completions, press/release
labelling with an overlap heuristic, digram latency extraction, a
character-pair hidden Markov model with Gaussian latency emissions, n-best
Viterbi decoding, and dictionary ranking scored by joint log-likelihood.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DomainError
from .records import KeyEventTrace, SpyTrace

MS = 1000

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_logpdf(x: float, mean: float, std: float) -> float:
    z = (x - mean) / std
    return -0.5 * z * z - math.log(std) - 0.5 * LOG_2PI


# ---------------------------------------------------------------------------
# event detection


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds for turning delay gaps into key-event estimates.

    event_threshold_ms: a delay at or above this is a candidate key event.
    overlap_threshold_ms: events closer than this are treated as one
        overlap cluster when labelling, and define the companion window for
        the optional isolated-spike filter.
    merge_window_ms: candidate gaps whose quiet separation is under this
        collapse into one event.  Off (0) by default: displaced polls in
        adjacent frames are distinct key transactions and must stay apart.
    drop_isolated: when set, candidates with no companion candidate within
        the overlap threshold are discarded as noise spikes.
    """

    event_threshold_ms: float = 1.8
    overlap_threshold_ms: float = 50.0
    merge_window_ms: float = 0.0
    drop_isolated: bool = False

    def __post_init__(self):
        if self.event_threshold_ms <= 0 or self.overlap_threshold_ms <= 0:
            raise DomainError("thresholds must be positive")
        if self.overlap_threshold_ms <= self.event_threshold_ms:
            raise DomainError("overlap threshold must exceed the event threshold")
        if self.merge_window_ms < 0:
            raise DomainError("merge window must be non-negative")


def detect_key_events(spy: SpyTrace, cfg: DetectorConfig | None = None) -> np.ndarray:
    """Estimated key-event times (us) from above-threshold delay gaps.

    A gap record (t, d) covers [t-d, t]; the displaced completion would have
    arrived one baseline interval after the gap started, so the event is
    placed at t - d + baseline where baseline is the trace's median delay.
    """
    cfg = cfg or DetectorConfig()
    if not len(spy):
        raise DomainError("empty spy trace")
    baseline = int(np.median(spy.delay_us))
    thr = int(round(cfg.event_threshold_ms * MS))
    idx = np.nonzero(spy.delay_us >= thr)[0]
    if not len(idx):
        return np.zeros(0, dtype=np.int64)

    merge = int(round(cfg.merge_window_ms * MS))
    estimates: list[int] = []
    prev_end = None
    for i in idx:
        t = int(spy.t_us[i])
        d = int(spy.delay_us[i])
        gap_start = t - d
        if prev_end is not None and gap_start - prev_end < merge:
            prev_end = t  # extends the merged cluster; keep its first estimate
            continue
        estimates.append(gap_start + baseline)
        prev_end = t

    if cfg.drop_isolated and len(estimates) > 1:
        win = int(round(cfg.overlap_threshold_ms * MS))
        arr = np.asarray(estimates, dtype=np.int64)
        keep = []
        for j, e in enumerate(arr):
            neighbors = np.delete(arr, j)
            if np.min(np.abs(neighbors - e)) <= win:
                keep.append(int(e))
        estimates = keep
    elif cfg.drop_isolated and len(estimates) == 1:
        estimates = []
    return np.asarray(estimates, dtype=np.int64)


def infer_event_kinds(times: np.ndarray, cfg: DetectorConfig | None = None) -> list[str]:
    """Press/release labels for detected events, no ground truth needed.

    Alternation with an overlap rule: an event that follows a lone
    outstanding press by less than the overlap threshold is another press
    (the next key went down before the previous came up); otherwise it
    releases the oldest outstanding press.
    """
    cfg = cfg or DetectorConfig()
    win = cfg.overlap_threshold_ms * MS
    kinds: list[str] = []
    open_presses = 0
    for j, t in enumerate(times):
        if open_presses == 0:
            kind = "press"
        elif (
            open_presses == 1
            and kinds[-1] == "press"
            and t - times[j - 1] < win
        ):
            kind = "press"
        else:
            kind = "release"
        kinds.append(kind)
        open_presses += 1 if kind == "press" else -1
    return kinds


@dataclass(frozen=True)
class LabelReport:
    """Outcome of matching detected events against ground truth."""

    accuracy: float
    n_truth: int
    n_detected: int
    n_correct: int
    overlap_flagged: int
    empty_input: bool = False
    pairs: tuple = field(default=(), repr=False)  # (est_us, truth_us, est_kind, truth_kind)


def label_events(
    estimates: np.ndarray,
    truth: KeyEventTrace,
    cfg: DetectorConfig | None = None,
    match_tolerance_ms: float = 2.0,
) -> LabelReport:
    """Pair estimates with nearest truth events and score the inferred labels.

    Profiling-phase helper: truth is available.  An estimate is correct when
    it matches an unclaimed truth event within tolerance and the alternation
    heuristic assigns the right press/release kind.
    """
    cfg = cfg or DetectorConfig()
    truth_events = list(truth.events)
    if not truth_events:
        raise DomainError("truth trace has no events")
    if len(estimates) == 0:
        return LabelReport(
            accuracy=0.0,
            n_truth=len(truth_events),
            n_detected=0,
            n_correct=0,
            overlap_flagged=0,
            empty_input=True,
        )
    kinds = infer_event_kinds(np.asarray(estimates), cfg)
    win = cfg.overlap_threshold_ms * MS
    overlap_flagged = sum(
        1
        for j in range(1, len(estimates))
        if estimates[j] - estimates[j - 1] < win and kinds[j] == "press" and kinds[j - 1] == "press"
    )

    tol = match_tolerance_ms * MS
    claimed = [False] * len(truth_events)
    truth_ts = np.asarray([e.t_us for e in truth_events], dtype=np.int64)
    n_correct = 0
    pairs = []
    for est, kind in zip(np.asarray(estimates), kinds):
        dist = np.abs(truth_ts - est).astype(float)
        dist[claimed] = np.inf
        j = int(np.argmin(dist))
        if dist[j] <= tol:
            claimed[j] = True
            ok = truth_events[j].kind == kind
            n_correct += int(ok)
            pairs.append((int(est), int(truth_ts[j]), kind, truth_events[j].kind))
        else:
            pairs.append((int(est), None, kind, None))
    return LabelReport(
        accuracy=n_correct / len(truth_events),
        n_truth=len(truth_events),
        n_detected=len(estimates),
        n_correct=n_correct,
        overlap_flagged=overlap_flagged,
        pairs=tuple(pairs),
    )


def detection_f1(
    estimates: np.ndarray, truth: KeyEventTrace, tolerance_ms: float = 1.0
) -> float:
    """F1 of event detection against truth times (kind-agnostic)."""
    truth_ts = np.asarray([e.t_us for e in truth.events], dtype=np.int64)
    if len(truth_ts) == 0 or len(estimates) == 0:
        return 0.0
    tol = tolerance_ms * MS
    claimed = np.zeros(len(truth_ts), dtype=bool)
    tp = 0
    for est in np.asarray(estimates):
        dist = np.abs(truth_ts - est).astype(float)
        dist[claimed] = np.inf
        j = int(np.argmin(dist))
        if dist[j] <= tol:
            claimed[j] = True
            tp += 1
    precision = tp / len(estimates)
    recall = tp / len(truth_ts)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def extract_digram_latencies(press_times_us) -> list[float]:
    """Consecutive press-to-press intervals in milliseconds."""
    times = np.asarray(press_times_us, dtype=np.int64)
    if len(times) < 2:
        raise DomainError("need at least two press events")
    return [float(d) / MS for d in np.diff(times)]


# ---------------------------------------------------------------------------
# character-pair HMM


@dataclass(frozen=True)
class HmmModel:
    """Character-pair states with Gaussian press-to-press latency emissions.

    transitions[(a, b)] maps only to states (b, c): consecutive digrams
    share their bridging character.  States whose second character never
    continues a dictionary word have no outgoing transitions.
    """

    states: tuple[tuple[str, str], ...]
    initial: dict[tuple[str, str], float]
    transitions: dict[tuple[str, str], dict[tuple[str, str], float]]
    emissions: dict[tuple[str, str], tuple[float, float]]

    def validate(self) -> None:
        if abs(sum(self.initial.values()) - 1.0) > 1e-9:
            raise DomainError("initial probabilities must sum to 1")
        for s, row in self.transitions.items():
            if not row:
                continue
            if abs(sum(row.values()) - 1.0) > 1e-9:
                raise DomainError(f"transitions out of {s} must sum to 1")
            for nxt in row:
                if nxt[0] != s[1]:
                    raise DomainError(f"transition {s}->{nxt} breaks the bridging character")
        for s, (mean, std) in self.emissions.items():
            if std <= 0:
                raise DomainError(f"emission stddev for {s} must be positive")


def fit_hmm(
    corpus: list[tuple[str, list[float]]],
    alphabet: str,
    dictionary: list[str],
    std_floor_ms: float = 5.0,
) -> HmmModel:
    """Fit emissions from profiled latencies and transitions from the dictionary.

    Emission moments come from the observed latencies per digram, pooled
    statistics standing in for unseen digrams; transition and initial
    probabilities come from dictionary digram continuation and first-digram
    frequencies, with add-one smoothing over dictionary-legal continuations.
    """
    if not corpus:
        raise DomainError("empty profiling corpus")
    dict_set = set(dictionary)
    for word, lats in corpus:
        if word not in dict_set:
            raise DomainError(f"profiling word {word!r} not in the dictionary")
        if len(lats) != len(word) - 1:
            raise DomainError(f"{word!r}: expected {len(word) - 1} latencies, got {len(lats)}")

    digrams = sorted({(w[i], w[i + 1]) for w in dictionary for i in range(len(w) - 1)})
    state_set = set(digrams)

    obs: dict[tuple[str, str], list[float]] = {s: [] for s in digrams}
    pooled: list[float] = []
    for word, lats in corpus:
        for i, lat in enumerate(lats):
            pair = (word[i], word[i + 1])
            if pair in obs:
                obs[pair].append(float(lat))
            pooled.append(float(lat))
    pooled_arr = np.asarray(pooled, dtype=float)
    pooled_mean = float(pooled_arr.mean())
    pooled_std = float(pooled_arr.std(ddof=1)) if len(pooled_arr) > 1 else std_floor_ms

    emissions: dict[tuple[str, str], tuple[float, float]] = {}
    for s in digrams:
        xs = obs[s]
        if not xs:
            emissions[s] = (pooled_mean, max(pooled_std, std_floor_ms))
        elif len(xs) == 1:
            emissions[s] = (xs[0], max(pooled_std, std_floor_ms))
        else:
            arr = np.asarray(xs, dtype=float)
            emissions[s] = (float(arr.mean()), max(float(arr.std(ddof=1)), std_floor_ms))

    first_counts: dict[tuple[str, str], int] = {s: 0 for s in digrams}
    trans_counts: dict[tuple[str, str], dict[tuple[str, str], int]] = {s: {} for s in digrams}
    continuations: dict[str, list[tuple[str, str]]] = {}
    for s in digrams:
        continuations.setdefault(s[0], []).append(s)
    for w in dictionary:
        first_counts[(w[0], w[1])] += 1
        for i in range(len(w) - 2):
            a, b = (w[i], w[i + 1]), (w[i + 1], w[i + 2])
            trans_counts[a][b] = trans_counts[a].get(b, 0) + 1

    total_first = sum(first_counts.values())
    initial = {s: first_counts[s] / total_first for s in digrams}

    transitions: dict[tuple[str, str], dict[tuple[str, str], float]] = {}
    for s in digrams:
        legal = continuations.get(s[1], [])
        legal = [c for c in legal if c in state_set]
        if not legal:
            transitions[s] = {}
            continue
        row = {c: trans_counts[s].get(c, 0) + 1 for c in legal}
        z = sum(row.values())
        transitions[s] = {c: v / z for c, v in row.items()}

    model = HmmModel(
        states=tuple(digrams),
        initial=initial,
        transitions=transitions,
        emissions=emissions,
    )
    model.validate()
    return model


# ---------------------------------------------------------------------------
# decoding and ranking

NEG_INF = float("-inf")


def n_viterbi(model: HmmModel, observations: list[float], n: int):
    """The n most probable state paths for an observation sequence.

    Returns [(path, log_likelihood), ...] sorted by non-increasing
    likelihood; ties break on path order for determinism.  With n == 1 this
    is standard Viterbi, and results for smaller n are prefixes of larger.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if not observations:
        raise DomainError("observations must be non-empty")

    states = model.states
    s_index = {s: i for i, s in enumerate(states)}

    # beam[i] = list of (score, backpointer) for state i, best first;
    # backpointer = (prev_state_idx, prev_rank) or None at t == 0
    beams: list[list[list[tuple[float, tuple[int, int] | None]]]] = []
    first = []
    for i, s in enumerate(states):
        p0 = model.initial.get(s, 0.0)
        if p0 <= 0.0:
            first.append([])
            continue
        score = math.log(p0) + gaussian_logpdf(observations[0], *model.emissions[s])
        first.append([(score, None)])
    beams.append(first)

    for t in range(1, len(observations)):
        prev = beams[-1]
        cur: list[list[tuple[float, tuple[int, int]]]] = [[] for _ in states]
        for pi, s_prev in enumerate(states):
            if not prev[pi]:
                continue
            row = model.transitions.get(s_prev, {})
            for s_next, p in row.items():
                if p <= 0.0:
                    continue
                ni = s_index[s_next]
                log_t = math.log(p)
                em = gaussian_logpdf(observations[t], *model.emissions[s_next])
                for rank, (score, _) in enumerate(prev[pi]):
                    cur[ni].append(((score + log_t) + em, (pi, rank)))
        for ni in range(len(states)):
            cur[ni].sort(key=lambda it: (-it[0], it[1]))
            del cur[ni][n:]
        beams.append(cur)

    finals = []
    for i in range(len(states)):
        for rank, (score, _) in enumerate(beams[-1][i]):
            finals.append((score, i, rank))
    finals.sort(key=lambda it: (-it[0], it[1], it[2]))
    finals = finals[:n]

    results = []
    for score, i, rank in finals:
        path = []
        t = len(observations) - 1
        cur_i, cur_rank = i, rank
        while t >= 0:
            path.append(states[cur_i])
            bp = beams[t][cur_i][cur_rank][1]
            if bp is None:
                break
            cur_i, cur_rank = bp
            t -= 1
        path.reverse()
        results.append((tuple(path), score))
    return results


@dataclass(frozen=True)
class RankedWords:
    """Dictionary words sorted by non-increasing log-likelihood."""

    entries: tuple[tuple[str, float], ...]
    no_eligible: bool = False

    def rank_of(self, word: str) -> int | None:
        for i, (w, _) in enumerate(self.entries, start=1):
            if w == word:
                return i
        return None


def score_word(model: HmmModel, word: str, observations: list[float]) -> float:
    """Joint log-likelihood of a word's digram path emitting the observations."""
    s0 = (word[0], word[1])
    p0 = model.initial.get(s0, 0.0)
    if p0 <= 0.0:
        return NEG_INF
    score = math.log(p0) + gaussian_logpdf(observations[0], *model.emissions.get(s0, (0.0, 1.0)))
    prev = s0
    for i in range(1, len(observations)):
        s = (word[i], word[i + 1])
        p = model.transitions.get(prev, {}).get(s, 0.0)
        if p <= 0.0 or s not in model.emissions:
            return NEG_INF
        score = (score + math.log(p)) + gaussian_logpdf(observations[i], *model.emissions[s])
        prev = s
    return score


def rank_dictionary(
    model: HmmModel, observations: list[float], dictionary: list[str]
) -> RankedWords:
    """Score every dictionary word whose digram count matches the observations."""
    if not observations:
        raise DomainError("observations must be non-empty")
    eligible = []
    seen = set()
    for w in dictionary:
        if w in seen:
            continue
        seen.add(w)
        if len(w) - 1 == len(observations):
            eligible.append(w)
    if not eligible:
        return RankedWords(entries=(), no_eligible=True)
    scored = [(w, score_word(model, w, observations)) for w in eligible]
    scored.sort(key=lambda it: (-it[1], it[0]))
    return RankedWords(entries=tuple(scored))


def evaluate_topk(
    rankings: list[RankedWords], truths: list[str], ks: tuple[int, ...] = (10, 50)
) -> dict[int, float]:
    """Fraction of trials whose truth lands within rank k, per k."""
    for k in ks:
        if k <= 0:
            raise DomainError("k must be positive")
    if len(rankings) != len(truths):
        raise DomainError("one truth per ranking required")
    if not rankings:
        raise DomainError("no trials to evaluate")
    out = {}
    for k in ks:
        hits = 0
        for ranked, truth in zip(rankings, truths):
            r = ranked.rank_of(truth)
            hits += int(r is not None and r <= k)
        out[k] = hits / len(rankings)
    return out


def save_hmm(path: str | Path, model: HmmModel) -> None:
    doc = {
        "states": ["".join(s) for s in model.states],
        "initial": {"".join(s): p for s, p in sorted(model.initial.items())},
        "transitions": {
            "".join(s): {"".join(c): p for c, p in sorted(row.items())}
            for s, row in sorted(model.transitions.items())
        },
        "emissions": {"".join(s): list(v) for s, v in sorted(model.emissions.items())},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_hmm(path: str | Path) -> HmmModel:
    doc = json.loads(Path(path).read_text())
    return HmmModel(
        states=tuple((s[0], s[1]) for s in doc["states"]),
        initial={(s[0], s[1]): p for s, p in doc["initial"].items()},
        transitions={
            (s[0], s[1]): {(c[0], c[1]): p for c, p in row.items()}
            for s, row in doc["transitions"].items()
        },
        emissions={(s[0], s[1]): (v[0], v[1]) for s, v in doc["emissions"].items()},
    )


class DigramHmm(BaseEstimator):
    """Sklearn-style wrapper: fit a digram HMM, rank words for new traces.

    Parameters
    ----------
    dictionary : list of candidate words (also the transition prior source).
    alphabet : characters covered by the model.
    std_floor_ms : lower bound on emission standard deviations.
    """

    def __init__(self, dictionary=None, alphabet="", std_floor_ms=5.0):
        self.dictionary = dictionary
        self.alphabet = alphabet
        self.std_floor_ms = std_floor_ms

    def fit(self, X, y):
        """X: list of latency sequences (ms); y: the words that produced them."""
        if self.dictionary is None:
            raise DomainError("DigramHmm needs a dictionary")
        corpus = list(zip(y, X))
        self.model_ = fit_hmm(corpus, self.alphabet, self.dictionary, self.std_floor_ms)
        return self

    def rank(self, observations) -> RankedWords:
        self._check_fitted()
        return rank_dictionary(self.model_, list(observations), self.dictionary)

    def predict(self, X):
        self._check_fitted()
        out = []
        for obs in X:
            ranked = self.rank(obs)
            out.append(ranked.entries[0][0] if ranked.entries else "")
        return out

    def decode(self, observations, n=1):
        self._check_fitted()
        return n_viterbi(self.model_, list(observations), n)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise DomainError("estimator is not fitted")
