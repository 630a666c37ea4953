import numpy as np
import pytest

from usblab.errors import DomainError, TrainingError
from usblab.fingerprint import (
    BiLstmClassifier,
    FeatureSequence,
    WindowFeaturizer,
    correlate,
    cross_entropy,
    cross_validate,
    detect_bursts,
    featurize,
    forward,
    grad_check,
    init_params,
    make_dataset,
    stratified_folds,
    train_bilstm,
)
from usblab.records import SpyTrace
from usblab.scenarios import BurstAnnotation


def trace(records):
    t = np.asarray([r[0] for r in records], dtype=np.int64)
    d = np.asarray([r[1] for r in records], dtype=np.int64)
    return SpyTrace(t_us=t, delay_us=d)


# ---------------------------------------------------------------------------
# featurize


def test_featurize_window_max():
    # a 5 ms gap ending at t=4 ms, then a 2 ms delay in the second window
    spy = SpyTrace(t_us=np.array([4000, 6000]), delay_us=np.array([5000, 2000]))
    feats = featurize(spy, window_ms=5)
    assert feats.values.tolist() == [5.0, 2.0]


def test_featurize_uniform_trace_constant():
    d = np.full(100, 1000, dtype=np.int64)
    spy = SpyTrace(t_us=np.cumsum(d), delay_us=d)
    feats = featurize(spy, window_ms=5)
    assert np.all(feats.values == 1.0)


def test_featurize_eight_seconds_1600_windows():
    d = np.full(200, 1000, dtype=np.int64)
    spy = SpyTrace(t_us=np.cumsum(d), delay_us=d)
    feats = featurize(spy, window_ms=5, duration_us=8_000_000)
    assert len(feats) == 1600
    # windows past the records carry the baseline
    assert np.all(feats.values[100:] == 1.0)


def test_featurize_validation():
    spy = trace([(1000, 1000)])
    with pytest.raises(DomainError):
        featurize(spy, window_ms=0)
    with pytest.raises(DomainError):
        featurize(SpyTrace(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)))


def test_featurizer_transform_stacks_rows():
    d = np.full(50, 1000, dtype=np.int64)
    spy = SpyTrace(t_us=np.cumsum(d), delay_us=d)
    X = WindowFeaturizer(window_ms=5, duration_us=50_000).fit_transform([spy, spy])
    assert X.shape == (2, 10)


# ---------------------------------------------------------------------------
# correlation


def test_correlate_identities():
    x = np.array([1.0, 2.0, 3.0, 2.0, 5.0])
    assert correlate(x, x) == pytest.approx(1.0)
    assert correlate(x, -x) == pytest.approx(-1.0)
    assert correlate(x, 2 * x + 3) == pytest.approx(1.0)
    assert correlate(x, np.ones(5)) is None
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=20), rng.normal(size=20)
    assert correlate(a, b) == pytest.approx(correlate(b, a))


def test_correlate_validation():
    with pytest.raises(DomainError):
        correlate(np.ones(3), np.ones(4))


# ---------------------------------------------------------------------------
# burst detection


def synthetic_features(n=400, bursts=(), base=0.125, high=0.25):
    vals = np.full(n, base)
    ann = []
    for i, (w0, w1, size, rep, hit) in enumerate(bursts):
        if hit:
            vals[w0:w1] = high
        ann.append(
            BurstAnnotation(size_bytes=size, rep=rep, t_us=w0 * 5000, window_us=(w0 * 5000, w1 * 5000 - 1))
        )
    return FeatureSequence(values=vals, window_ms=5.0), ann


def test_detect_bursts_rates():
    bursts = [(50 + 20 * i, 52 + 20 * i, 131_072, i, True) for i in range(5)]
    bursts += [(250 + 20 * i, 252 + 20 * i, 16, i, False) for i in range(5)]
    feats, ann = synthetic_features(bursts=bursts)
    report = detect_bursts(feats, ann)
    assert report.rates[131_072] == 1.0
    assert report.rates[16] == 0.0


def test_detect_bursts_margin_blocks_jitter_scale_noise():
    rng = np.random.default_rng(0)
    vals = 0.125 + rng.uniform(0, 0.04, size=400)  # sub-margin wiggle
    ann = [BurstAnnotation(16, r, (50 + 10 * r) * 5000, ((50 + 10 * r) * 5000, (52 + 10 * r) * 5000)) for r in range(5)]
    feats = FeatureSequence(values=vals, window_ms=5.0)
    report = detect_bursts(feats, ann)
    assert report.rates[16] == 0.0


# ---------------------------------------------------------------------------
# BiLSTM core


def toy_dataset(n_per=20, T=30, seed=0):
    r = np.random.default_rng(seed)
    X, y = [], []
    for c in (0, 1):
        for _ in range(n_per):
            row = r.normal(0, 0.1, size=T)
            pos = 5 if c == 0 else 20
            row[pos : pos + 4] += 2.0
            X.append(row)
            y.append(f"class{c}")
    return np.asarray(X), np.asarray(y)


def test_gradients_match_central_differences():
    rng = np.random.default_rng(5)
    for trial in range(3):
        H = int(rng.integers(4, 12))
        T = int(rng.integers(2, 15))
        C = int(rng.integers(2, 5))
        params = init_params(1, H, C, rng)
        X = rng.normal(size=(2, T, 1))
        y = rng.integers(0, C, size=2)
        assert grad_check(params, X, y, 1e-5) < 1e-4


def test_gradcheck_single_timestep_feedforward_case():
    rng = np.random.default_rng(9)
    params = init_params(1, 6, 3, rng)
    X = rng.normal(size=(3, 1, 1))
    y = np.array([0, 1, 2])
    assert grad_check(params, X, y, 1e-5) < 1e-4


def test_zero_parameters_near_linear_bias_gradients():
    params = {k: np.zeros_like(v) for k, v in init_params(1, 4, 2, np.random.default_rng(0)).items()}
    X = np.zeros((2, 3, 1))
    y = np.array([0, 1])
    assert grad_check(params, X, y, 1e-6) < 1e-6


def test_uniform_probs_and_log_c_loss():
    params = {k: np.zeros_like(v) for k, v in init_params(1, 4, 5, np.random.default_rng(0)).items()}
    X = np.random.default_rng(1).normal(size=(4, 6, 1))
    probs, _ = forward(params, X)
    assert np.allclose(probs, 0.2)
    loss = cross_entropy(probs, np.array([0, 1, 2, 3]))
    assert loss == pytest.approx(np.log(5))


def test_probabilities_sum_to_one():
    X, y = toy_dataset(6)
    clf = BiLstmClassifier(hidden_size=8, epochs=20, seed=0).fit(X, y)
    probs = clf.predict_proba(X)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_toy_training_reaches_full_accuracy():
    X, y = toy_dataset(20)
    clf, curve = train_bilstm(X, y, seed=1, hidden_size=16, epochs=200, learning_rate=0.5)
    assert (clf.predict(X) == y).mean() == 1.0
    assert curve[-1] < curve[0]


def test_training_deterministic_per_seed():
    X, y = toy_dataset(8)
    a = BiLstmClassifier(hidden_size=8, epochs=30, seed=7).fit(X, y)
    b = BiLstmClassifier(hidden_size=8, epochs=30, seed=7).fit(X, y)
    c = BiLstmClassifier(hidden_size=8, epochs=30, seed=8).fit(X, y)
    for k in a.params_:
        assert np.array_equal(a.params_[k], b.params_[k])
    assert any(not np.array_equal(a.params_[k], c.params_[k]) for k in a.params_)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergence_raises_training_error_with_epoch():
    X, y = toy_dataset(6)
    with pytest.raises(TrainingError) as exc:
        BiLstmClassifier(
            hidden_size=8, epochs=60, learning_rate=1e308, clip_norm=1e4, seed=0
        ).fit(X, y)
    assert exc.value.epoch >= 0


def test_predict_shape_mismatch_rejected():
    X, y = toy_dataset(6, T=30)
    clf = BiLstmClassifier(hidden_size=8, epochs=5, seed=0).fit(X, y)
    with pytest.raises(DomainError):
        clf.predict(np.zeros((2, 31)))


def test_pooling_shortens_sequence():
    X, y = toy_dataset(6, T=32)
    clf = BiLstmClassifier(hidden_size=8, epochs=5, pool=4, seed=0).fit(X, y)
    assert clf.seq_len_ == 8


# ---------------------------------------------------------------------------
# dataset and cross-validation


def test_make_dataset_pads_and_truncates():
    rows = [np.ones(5), np.ones(12)]
    ds = make_dataset(rows, ["a", "b"], ["i0", "i1"], length=8, pad_value=-1.0)
    assert ds.sequences.shape == (2, 8)
    assert ds.sequences[0, 5] == -1.0
    assert ds.sequences[1, 7] == 1.0


def test_stratified_folds_disjoint_covering_balanced():
    X = np.zeros((30, 4))
    labels = ["a"] * 15 + ["b"] * 15
    ids = [f"t{i:02d}" for i in range(30)]
    ds = make_dataset(list(X), labels, ids, 4)
    folds = stratified_folds(ds, k=5, seed=3)
    assert sorted(set(folds)) == [0, 1, 2, 3, 4]
    for f in range(5):
        per_label = {"a": 0, "b": 0}
        for i, fi in enumerate(folds):
            if fi == f:
                per_label[labels[i]] += 1
        assert per_label == {"a": 3, "b": 3}


def test_fold_assignment_invariant_to_row_order():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 4))
    labels = ["a"] * 10 + ["b"] * 10
    ids = [f"t{i:02d}" for i in range(20)]
    ds = make_dataset(list(X), labels, ids, 4)
    folds = stratified_folds(ds, k=5, seed=3)
    by_id = dict(zip(ids, folds))

    perm = rng.permutation(20)
    ds2 = make_dataset([X[i] for i in perm], [labels[i] for i in perm], [ids[i] for i in perm], 4)
    folds2 = stratified_folds(ds2, k=5, seed=3)
    assert {ds2.ids[i]: folds2[i] for i in range(20)} == by_id


def test_cross_validate_separable_data():
    X, y = toy_dataset(10, T=24, seed=2)
    ids = [f"s{i:03d}" for i in range(len(y))]
    ds = make_dataset(list(X), list(y), ids, 24)
    report = cross_validate(ds, k=5, seed=1, hidden_size=12, epochs=120, learning_rate=0.5)
    assert report.top1 >= 0.9
    assert report.top3 >= report.top1
    assert len(report.fold_top1) == 5
    assert set(report.fold_of.values()) == {0, 1, 2, 3, 4}
    # confusion counts cover every test item exactly once
    assert sum(report.confusion.values()) == len(y)


def test_cross_validate_insufficient_samples():
    X = np.zeros((6, 4))
    ds = make_dataset(list(X), ["a"] * 3 + ["b"] * 3, [f"i{i}" for i in range(6)], 4)
    with pytest.raises(DomainError):
        cross_validate(ds, k=5, seed=0)
