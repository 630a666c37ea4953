import json

import numpy as np

from usblab.experiments import (
    ExperimentConfig,
    KeystrokeParams,
    run_keystroke,
)
from usblab.keystroke import evaluate_topk, fit_hmm, rank_dictionary


def test_shrinking_dictionary_never_decreases_topk():
    rng = np.random.default_rng(4)
    alphabet = "abcd"
    dictionary = []
    seen = set()
    while len(dictionary) < 40:
        w = "".join(alphabet[i] for i in rng.integers(0, 4, size=5))
        if w not in seen:
            seen.add(w)
            dictionary.append(w)
    corpus = []
    for w in dictionary[:20]:
        lats = [float(100 + 40 * (ord(w[i]) + ord(w[i + 1])) % 200) for i in range(4)]
        corpus.append((w, lats))
    model = fit_hmm(corpus, alphabet, dictionary)

    truths = dictionary[:10]
    observations = [
        [model.emissions[(w[i], w[i + 1])][0] + float(rng.normal(0, 8)) for i in range(4)]
        for w in truths
    ]

    full = [rank_dictionary(model, obs, dictionary) for obs in observations]
    # drop half the non-truth words; scoring model stays fixed
    shrunk_dict = [w for w in dictionary if w in truths or hash(w) % 2 == 0]
    shrunk = [rank_dictionary(model, obs, shrunk_dict) for obs in observations]

    for k in (1, 3, 10):
        acc_full = evaluate_topk(full, truths, ks=(k,))[k]
        acc_shrunk = evaluate_topk(shrunk, truths, ks=(k,))[k]
        assert acc_shrunk >= acc_full


def test_keystroke_run_per_word_repeats(tmp_path):
    cfg = ExperimentConfig(
        scenario="keystroke",
        master_seed=31,
        out_dir=str(tmp_path / "run"),
        keystroke=KeystrokeParams(
            n_words=40, profiling_words=15, trials=10, repeats_per_word=3
        ),
    )
    run = run_keystroke(cfg)
    traces = list((run / "traces").glob("attack_*.trace"))
    assert len(traces) == 30
    doc = json.loads((run / "reports" / "keystroke_accuracy.json").read_text())
    assert doc["n_trials"] + doc["skipped_trials"] == 30
    assert (run / "models" / "hmm.json").exists()
