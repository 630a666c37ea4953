"""Website fingerprinting from windowed delay features.

Features are the maximum spy delay per fixed window.  The classifier is a
bidirectional LSTM implemented from scratch on numpy: one recurrent layer
per direction, final states concatenated into a softmax output layer,
trained by full-batch gradient descent with gradient-norm clipping through
time.  Analytic gradients are verifiable against central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .errors import DomainError, TrainingError
from .records import SpyTrace, TrafficTimeline

MS = 1000


# ---------------------------------------------------------------------------
# window features


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """Max delay (ms) per window; empty windows carry the baseline delay."""

    values: np.ndarray
    window_ms: float = 5.0
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return len(self.values)


def featurize(
    spy: SpyTrace,
    window_ms: float = 5.0,
    duration_us: int | None = None,
    baseline_us: float | None = None,
    label: str | None = None,
) -> FeatureSequence:
    """Per-window maximum of the spy delay, in milliseconds.

    Records are bucketed by completion timestamp.  Windows with no record
    carry the baseline (median) delay; the result is invariant to record
    order within a window.
    """
    if window_ms <= 0:
        raise DomainError("window must be positive")
    if not len(spy):
        raise DomainError("empty spy trace")
    window_us = int(round(window_ms * MS))
    if duration_us is None:
        n_windows = int(spy.t_us[-1]) // window_us + 1
    else:
        n_windows = math.ceil(duration_us / window_us)
    if baseline_us is None:
        baseline_us = float(np.median(spy.delay_us))

    values = np.full(n_windows, -np.inf)
    idx = spy.t_us // window_us
    keep = idx < n_windows
    np.maximum.at(values, idx[keep], spy.delay_us[keep] / MS)
    values[np.isinf(values)] = baseline_us / MS
    return FeatureSequence(values=values, window_ms=window_ms, label=label)


class WindowFeaturizer(BaseEstimator, TransformerMixin):
    """Transformer mapping spy traces to fixed-length window-max feature rows."""

    def __init__(self, window_ms=5.0, duration_us=None, baseline_us=None):
        self.window_ms = window_ms
        self.duration_us = duration_us
        self.baseline_us = baseline_us

    def fit(self, X, y=None):
        return self

    def transform(self, X, y=None):
        rows = [
            featurize(
                trace,
                window_ms=self.window_ms,
                duration_us=self.duration_us,
                baseline_us=self.baseline_us,
            ).values
            for trace in X
        ]
        width = min(len(r) for r in rows)
        return np.vstack([r[:width] for r in rows])


def correlate(features, truth_binned) -> float | None:
    """Pearson correlation between a feature row and binned truth volume.

    Returns None when either series has zero variance (the undefined flag).
    """
    x = np.asarray(features.values if isinstance(features, FeatureSequence) else features, dtype=float)
    y = np.asarray(truth_binned, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("series must be 1-d and equal length")
    if float(np.std(x)) == 0.0 or float(np.std(y)) == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def bin_timeline(truth: TrafficTimeline, window_ms: float, n_windows: int) -> np.ndarray:
    return truth.binned(int(round(window_ms * MS)), n_windows)


# ---------------------------------------------------------------------------
# burst detection


@dataclass(frozen=True)
class BurstDetectionReport:
    rates: dict[int, float]  # size -> detected / repeats
    baseline_ms: float
    threshold_ms: float
    detected: tuple  # (size, rep, bool)


def detect_bursts(
    features: FeatureSequence,
    annotations,
    baseline_ms: float | None = None,
    threshold_ms: float | None = None,
    margin_ms: float = 0.06,
) -> BurstDetectionReport:
    """Per-size detection rates for annotated bursts.

    A burst counts as detected when any feature window inside its
    annotation exceeds baseline + threshold.  Defaults: baseline is the
    median of idle windows (outside every annotation); threshold is three
    idle median absolute deviations, floored by margin_ms so timestamp
    jitter alone can never cross it.
    """
    vals = features.values
    window_us = int(round(features.window_ms * MS))
    n = len(vals)

    spans = []
    for a in annotations:
        lo, hi = a.window_us
        spans.append((max(0, lo // window_us), min(n - 1, hi // window_us)))
    in_burst = np.zeros(n, dtype=bool)
    for lo, hi in spans:
        in_burst[lo : hi + 1] = True

    idle = vals[~in_burst]
    if baseline_ms is None:
        baseline_ms = float(np.median(idle)) if len(idle) else float(np.median(vals))
    if threshold_ms is None:
        mad = float(np.median(np.abs(idle - np.median(idle)))) if len(idle) else 0.0
        threshold_ms = max(3.0 * mad, margin_ms)
    cut = baseline_ms + threshold_ms

    per_size: dict[int, list[bool]] = {}
    flags = []
    for a, (lo, hi) in zip(annotations, spans):
        hit = bool(np.any(vals[lo : hi + 1] > cut))
        per_size.setdefault(a.size_bytes, []).append(hit)
        flags.append((a.size_bytes, a.rep, hit))
    rates = {size: sum(hits) / len(hits) for size, hits in per_size.items()}
    return BurstDetectionReport(
        rates=rates,
        baseline_ms=baseline_ms,
        threshold_ms=threshold_ms,
        detected=tuple(flags),
    )


# ---------------------------------------------------------------------------
# bidirectional LSTM, from scratch

PARAM_NAMES = ("Wx_f", "Wh_f", "b_f", "Wx_b", "Wh_b", "b_b", "W_out", "b_out")


def init_params(
    input_dim: int, hidden: int, n_classes: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    def uniform(shape, scale):
        return rng.uniform(-scale, scale, size=shape)

    sx = 1.0 / math.sqrt(max(input_dim, 1))
    sh = 1.0 / math.sqrt(hidden)
    params = {}
    for d in ("f", "b"):
        params[f"Wx_{d}"] = uniform((4 * hidden, input_dim), sx)
        params[f"Wh_{d}"] = uniform((4 * hidden, hidden), sh)
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0  # forget gate starts open
        params[f"b_{d}"] = bias
    params["W_out"] = uniform((n_classes, 2 * hidden), 1.0 / math.sqrt(2 * hidden))
    params["b_out"] = np.zeros(n_classes)
    return params


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _run_direction(X, Wx, Wh, b, reverse: bool):
    """Unroll one direction; returns final hidden state and the step cache."""
    n, T, _ = X.shape
    H = Wh.shape[1]
    h = np.zeros((n, H))
    c = np.zeros((n, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    cache = []
    for t in steps:
        x_t = X[:, t, :]
        z = x_t @ Wx.T + h @ Wh.T + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        cache.append((t, x_t, h, c, i, f, g, o, tanh_c))
        h, c = h_new, c_new
    return h, cache


def _backprop_direction(dh_final, cache, Wx, Wh):
    H = Wh.shape[1]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H)
    dh = dh_final
    dc = np.zeros_like(dh)
    for t, x_t, h_prev, c_prev, i, f, g, o, tanh_c in reversed(cache):
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c**2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g**2),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dWx += dz.T @ x_t
        dWh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dh = dz @ Wh
        dc = dc * f
    return dWx, dWh, db


def forward(params: dict, X: np.ndarray):
    """Class probabilities for X of shape (n, T, input_dim)."""
    h_f, cache_f = _run_direction(X, params["Wx_f"], params["Wh_f"], params["b_f"], False)
    h_b, cache_b = _run_direction(X, params["Wx_b"], params["Wh_b"], params["b_b"], True)
    feat = np.concatenate([h_f, h_b], axis=1)
    logits = feat @ params["W_out"].T + params["b_out"]
    logits = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return probs, (feat, cache_f, cache_b)


def cross_entropy(probs: np.ndarray, y_idx: np.ndarray) -> float:
    eps = 1e-300
    return float(-np.mean(np.log(probs[np.arange(len(y_idx)), y_idx] + eps)))


def loss_and_grads(params: dict, X: np.ndarray, y_idx: np.ndarray):
    n = X.shape[0]
    H = params["Wh_f"].shape[1]
    probs, (feat, cache_f, cache_b) = forward(params, X)
    loss = cross_entropy(probs, y_idx)

    dlogits = probs.copy()
    dlogits[np.arange(n), y_idx] -= 1.0
    dlogits /= n
    grads = {
        "W_out": dlogits.T @ feat,
        "b_out": dlogits.sum(axis=0),
    }
    dfeat = dlogits @ params["W_out"]
    dWx, dWh, db = _backprop_direction(dfeat[:, :H], cache_f, params["Wx_f"], params["Wh_f"])
    grads["Wx_f"], grads["Wh_f"], grads["b_f"] = dWx, dWh, db
    dWx, dWh, db = _backprop_direction(dfeat[:, H:], cache_b, params["Wx_b"], params["Wh_b"])
    grads["Wx_b"], grads["Wh_b"], grads["b_b"] = dWx, dWh, db
    return loss, grads, probs


def grad_check(params: dict, X: np.ndarray, y_idx: np.ndarray, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter group; float64 throughout.
    """
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    _, grads, _ = loss_and_grads(params, X, y_idx)
    worst = 0.0
    for name in PARAM_NAMES:
        w = params[name]
        g = grads[name]
        flat = w.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            lp, _, _ = loss_and_grads(params, X, y_idx)
            flat[j] = orig - epsilon
            lm, _, _ = loss_and_grads(params, X, y_idx)
            flat[j] = orig
            num = (lp - lm) / (2.0 * epsilon)
            ana = g.reshape(-1)[j]
            # floor keeps noise-level components from dominating the ratio
            denom = max(abs(num) + abs(ana), 1e-6)
            worst = max(worst, abs(num - ana) / denom)
    return worst


class BiLstmClassifier(BaseEstimator, ClassifierMixin):
    """Bidirectional recurrent classifier over windowed delay sequences.

    One LSTM layer per direction (hidden_size units each); the two final
    states feed a softmax output layer.  Full-batch gradient descent with
    gradient-norm clipping, a harmonic learning-rate decay, and an early
    stop once the loss falls under `tol`; deterministic per seed.
    Sequences are mean-pooled by `pool` and z-scored per timestep with
    statistics from the training set only.
    """

    def __init__(
        self,
        hidden_size=64,
        epochs=150,
        learning_rate=0.5,
        lr_decay=0.01,
        clip_norm=5.0,
        tol=1e-3,
        pool=1,
        seed=0,
        zscore=True,
    ):
        self.hidden_size = hidden_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.clip_norm = clip_norm
        self.tol = tol
        self.pool = pool
        self.seed = seed
        self.zscore = zscore

    # -- internals ---------------------------------------------------------

    def _prepare(self, X, fit_stats: bool):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DomainError("X must be 2-d (n_samples, n_windows)")
        if self.pool > 1:
            T = (X.shape[1] // self.pool) * self.pool
            if T == 0:
                raise DomainError("pooling factor exceeds the sequence length")
            X = X[:, :T].reshape(X.shape[0], T // self.pool, self.pool).mean(axis=2)
        if fit_stats:
            if self.zscore:
                self.feat_mean_ = X.mean(axis=0)
                self.feat_std_ = np.maximum(X.std(axis=0), 1e-6)
            else:
                self.feat_mean_ = np.zeros(X.shape[1])
                self.feat_std_ = np.ones(X.shape[1])
            self.seq_len_ = X.shape[1]
        if X.shape[1] != self.seq_len_:
            raise DomainError(
                f"sequence length {X.shape[1]} does not match training length {self.seq_len_}"
            )
        X = (X - self.feat_mean_) / self.feat_std_
        return X[:, :, None]

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y):
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise DomainError("need at least two classes")
        class_index = {c: i for i, c in enumerate(self.classes_)}
        y_idx = np.asarray([class_index[c] for c in y])

        X3 = self._prepare(X, fit_stats=True)
        rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 0xb115]))
        self.params_ = init_params(1, self.hidden_size, len(self.classes_), rng)

        self.loss_curve_ = []
        for epoch in range(self.epochs):
            loss, grads, _ = loss_and_grads(self.params_, X3, y_idx)
            if not math.isfinite(loss):
                raise TrainingError("training loss diverged", epoch)
            self.loss_curve_.append(loss)
            if loss < self.tol:
                break
            lr = self.learning_rate / (1.0 + self.lr_decay * epoch)
            norm = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
            scale = self.clip_norm / norm if norm > self.clip_norm else 1.0
            for name in PARAM_NAMES:
                self.params_[name] -= lr * scale * grads[name]
            if any(not np.isfinite(self.params_[n]).all() for n in PARAM_NAMES):
                raise TrainingError("parameter update overflowed", epoch)
        final_loss, _, _ = loss_and_grads(self.params_, X3, y_idx)
        if not math.isfinite(final_loss):
            raise TrainingError("training loss diverged", self.epochs)
        self.loss_curve_.append(final_loss)
        return self

    def predict_proba(self, X):
        self._check_fitted()
        X3 = self._prepare(X, fit_stats=False)
        probs, _ = forward(self.params_, X3)
        return probs

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def predict_topk(self, X, k=3):
        probs = self.predict_proba(X)
        order = np.argsort(-probs, axis=1)[:, :k]
        return self.classes_[order]

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise DomainError("classifier is not fitted")


def train_bilstm(X, y, seed: int = 0, **hyperparams) -> tuple[BiLstmClassifier, list[float]]:
    """Convenience wrapper: fit a classifier, return it with its loss curve."""
    clf = BiLstmClassifier(seed=seed, **hyperparams).fit(X, y)
    return clf, clf.loss_curve_


def save_classifier(path, clf: BiLstmClassifier) -> None:
    """Persist a fitted classifier to one .npz archive (byte-deterministic)."""
    clf._check_fitted()
    arrays = {f"param_{k}": v for k, v in clf.params_.items()}
    arrays["classes"] = np.asarray([str(c) for c in clf.classes_])
    arrays["feat_mean"] = clf.feat_mean_
    arrays["feat_std"] = clf.feat_std_
    arrays["loss_curve"] = np.asarray(clf.loss_curve_)
    arrays["hyper"] = np.asarray(
        [
            clf.hidden_size,
            clf.epochs,
            clf.learning_rate,
            clf.clip_norm,
            clf.pool,
            clf.seed,
            int(clf.zscore),
            clf.seq_len_,
        ],
        dtype=float,
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_classifier(path) -> BiLstmClassifier:
    data = np.load(path, allow_pickle=False)
    hyper = data["hyper"]
    clf = BiLstmClassifier(
        hidden_size=int(hyper[0]),
        epochs=int(hyper[1]),
        learning_rate=float(hyper[2]),
        clip_norm=float(hyper[3]),
        pool=int(hyper[4]),
        seed=int(hyper[5]),
        zscore=bool(int(hyper[6])),
    )
    clf.params_ = {k[len("param_") :]: data[k] for k in data.files if k.startswith("param_")}
    clf.classes_ = data["classes"]
    clf.feat_mean_ = data["feat_mean"]
    clf.feat_std_ = data["feat_std"]
    clf.loss_curve_ = list(data["loss_curve"])
    clf.seq_len_ = int(hyper[7])
    return clf


# ---------------------------------------------------------------------------
# dataset and cross-validation


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Fixed-length feature rows with labels and stable per-item identities."""

    sequences: np.ndarray
    labels: tuple[str, ...]
    ids: tuple[str, ...]
    pad_value: float = 0.0

    def __post_init__(self):
        seq = np.asarray(self.sequences, dtype=float)
        if seq.ndim != 2 or seq.shape[0] != len(self.labels) or len(self.labels) != len(self.ids):
            raise DomainError("sequences, labels and ids must align")
        if len(set(self.ids)) != len(self.ids):
            raise DomainError("item ids must be unique")
        object.__setattr__(self, "sequences", seq)

    @property
    def label_set(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.labels)))

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for lbl in self.labels:
            out[lbl] = out.get(lbl, 0) + 1
        return out

    def __len__(self) -> int:
        return len(self.labels)


def make_dataset(
    rows: list[np.ndarray],
    labels: list[str],
    ids: list[str],
    length: int,
    pad_value: float = 0.0,
) -> LabeledDataset:
    """Pad/truncate rows to a common length with an explicit padding marker."""
    out = np.full((len(rows), length), pad_value, dtype=float)
    for i, r in enumerate(rows):
        r = np.asarray(r, dtype=float)[:length]
        out[i, : len(r)] = r
    return LabeledDataset(out, tuple(labels), tuple(ids), pad_value)


@dataclass(frozen=True)
class CvReport:
    """Stratified k-fold evaluation: per-fold and aggregate Top-1/Top-3."""

    fold_top1: tuple[float, ...]
    fold_top3: tuple[float, ...]
    top1: float
    top3: float
    fold_of: dict[str, int]
    confusion: dict[tuple[str, str], int]
    labels: tuple[str, ...]

    def __post_init__(self):
        if not all(0.0 <= a <= 1.0 for a in self.fold_top1 + self.fold_top3):
            raise DomainError("accuracies must lie in [0, 1]")
        if self.top3 < self.top1 - 1e-12:
            raise DomainError("Top-3 accuracy cannot be below Top-1")

    def as_dict(self) -> dict:
        return {
            "top1": self.top1,
            "top3": self.top3,
            "fold_top1": list(self.fold_top1),
            "fold_top3": list(self.fold_top3),
            "labels": list(self.labels),
            "confusion": {f"{a}|{b}": v for (a, b), v in sorted(self.confusion.items())},
        }


def stratified_folds(dataset: LabeledDataset, k: int, seed: int) -> list[int]:
    """Fold index per item: disjoint, covering, stratified, order-independent.

    Items are keyed by id within each label before the seeded shuffle, so
    permuting dataset rows does not change any item's fold.
    """
    if k < 2:
        raise DomainError("k must be >= 2")
    for lbl, cnt in dataset.counts().items():
        if cnt < k:
            raise DomainError(f"label {lbl!r} has {cnt} items, fewer than {k} folds")
    fold = [0] * len(dataset)
    for li, lbl in enumerate(dataset.label_set):
        idx = [i for i in range(len(dataset)) if dataset.labels[i] == lbl]
        idx.sort(key=lambda i: dataset.ids[i])
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xf01d, li]))
        perm = rng.permutation(len(idx))
        for pos, j in enumerate(perm):
            fold[idx[int(j)]] = pos % k
    return fold


def cross_validate(
    dataset: LabeledDataset,
    k: int = 5,
    seed: int = 0,
    **hyperparams,
) -> CvReport:
    """Stratified k-fold training/evaluation of the BiLSTM classifier."""
    fold = stratified_folds(dataset, k, seed)
    X = dataset.sequences
    y = np.asarray(dataset.labels)

    fold_top1 = []
    fold_top3 = []
    confusion: dict[tuple[str, str], int] = {}
    for f in range(k):
        test_mask = np.asarray([fi == f for fi in fold])
        clf = BiLstmClassifier(seed=int(seed) * 1000 + f, **hyperparams)
        clf.fit(X[~test_mask], y[~test_mask])
        probs = clf.predict_proba(X[test_mask])
        order = np.argsort(-probs, axis=1)
        pred1 = clf.classes_[order[:, 0]]
        truth = y[test_mask]
        top1 = float(np.mean(pred1 == truth))
        top3_hits = [
            t in set(clf.classes_[order[i, :3]]) for i, t in enumerate(truth)
        ]
        fold_top1.append(top1)
        fold_top3.append(float(np.mean(top3_hits)))
        for t, p in zip(truth, pred1):
            confusion[(str(t), str(p))] = confusion.get((str(t), str(p)), 0) + 1

    return CvReport(
        fold_top1=tuple(fold_top1),
        fold_top3=tuple(fold_top3),
        top1=float(np.mean(fold_top1)),
        top3=float(np.mean(fold_top3)),
        fold_of={dataset.ids[i]: fold[i] for i in range(len(dataset))},
        confusion=confusion,
        labels=dataset.label_set,
    )
