"""Experiment orchestration: seeded runs, datasets, reports.

Every run is reproducible from (config, master seed).  Per-trial seeds are
derived from the master seed through a documented counter scheme:
``derive_seed(master, *path)`` feeds the master seed plus a SHA-256 digest
of each path component into numpy's SeedSequence, so any trial subset can
be regenerated independently of execution order.

A run directory holds config.json (digested for provenance), generated
profile/corpus files, traces/ (when trace saving is on), datasets/ feature
caches, models/, reports/ (text + JSON), and run_meta.json; wall-clock
metadata lives only in run_meta.json so reruns are byte-identical
everywhere else.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bus import ArbitrationPolicy, HubConfig, bulk_limits
from .errors import ConfigError
from .fingerprint import (
    FeatureSequence,
    bin_timeline,
    correlate,
    cross_validate,
    detect_bursts,
    featurize,
    make_dataset,
    save_classifier,
    train_bilstm,
)
from .keystroke import (
    DetectorConfig,
    detect_key_events,
    detection_f1,
    evaluate_topk,
    extract_digram_latencies,
    fit_hmm,
    infer_event_kinds,
    label_events,
    rank_dictionary,
    save_hmm,
)
from .records import KeyEventTrace, TraceBundle
from .scenarios import (
    VpnParams,
    absorb_bursts,
    burst_sweep_workload,
    gen_typist_events,
    gen_web_traffic,
    generate_wordlist,
    make_site_corpus,
    make_typist_profile,
    sanitize_traces,
    save_site_corpus,
    save_typist_profile,
    sweep_sizes,
    vpn_transform,
)
from .sim import BulkDevice, InterruptDevice, Workload, run_simulation
from .traceio import write_key_events, write_trace, write_traffic
from .version import __version__

SPY_BATCH_BYTES = 4096

SCENARIOS = ("keystroke", "website", "resolution", "mitigation")


def derive_seed(master: int, *path) -> int:
    """Deterministic child seed for a namespaced counter path."""
    codes = [int(master)]
    for part in path:
        digest = hashlib.sha256(str(part).encode()).digest()
        codes.append(int.from_bytes(digest[:4], "big"))
    return int(np.random.SeedSequence(codes).generate_state(1)[0])


# ---------------------------------------------------------------------------
# configuration


@dataclass
class KeystrokeParams:
    alphabet: str = "etaoinshrd"
    n_words: int = 1000
    profiling_words: int = 400
    trials: int = 250  # distinct attack words
    repeats_per_word: int = 1
    digram_stddev_ms: float = 20.0
    digram_mean_range_ms: tuple[float, float] = (150.0, 300.0)
    overlap_rate: float = 0.104
    word_length_range: tuple[int, int] = (4, 10)


@dataclass
class WebsiteParams:
    n_sites: int = 20
    trials_per_site: int = 30
    duration_us: int = 8_000_000
    window_ms: float = 5.0
    folds: int = 5
    hidden_size: int = 16
    epochs: int = 400
    learning_rate: float = 1.0
    lr_decay: float = 0.008
    clip_norm: float = 5.0
    pool: int = 16
    vpn: bool = False
    vpn_overhead_bytes: int = 80
    vpn_latency_ms: float = 20.0
    vpn_jitter_ms: float = 5.0


@dataclass
class ResolutionParams:
    min_size: int = 16
    max_size: int = 4 * 1024 * 1024
    repeats: int = 5
    gap_ms: int = 1000
    absorb_max_bytes: int = 112 * 1024


@dataclass
class MitigationParams:
    keystroke_words: int = 80
    sites: int = 10
    duration_us: int = 4_000_000


@dataclass
class ExperimentConfig:
    scenario: str = "keystroke"
    master_seed: int = 2024
    out_dir: str = "runs/exp"
    jitter_us: int = 50
    save_traces: bool = True
    hub_speed_class: str = "usb2"
    hub_payload: int = 512
    hub_policy: str = "fair_round_robin"
    hub_policy_priority: tuple[str, ...] = ()
    tt_frame_capacity: int = 1
    keystroke: KeystrokeParams = field(default_factory=KeystrokeParams)
    website: WebsiteParams = field(default_factory=WebsiteParams)
    resolution: ResolutionParams = field(default_factory=ResolutionParams)
    mitigation: MitigationParams = field(default_factory=MitigationParams)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for count in (
            self.keystroke.trials,
            self.website.trials_per_site,
            self.resolution.repeats,
        ):
            if count < 1:
                raise ConfigError("trial counts must be >= 1")

    def hub(self) -> HubConfig:
        params = {}
        if self.hub_policy == "unfair_priority":
            params["priority"] = list(self.hub_policy_priority)
        return HubConfig(
            speed_class=self.hub_speed_class,
            bulk_payload=self.hub_payload,
            arbitration=ArbitrationPolicy(kind=self.hub_policy, params=params),
            tt_frame_capacity=self.tt_frame_capacity,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        for key, sub in (
            ("keystroke", KeystrokeParams),
            ("website", WebsiteParams),
            ("resolution", ResolutionParams),
            ("mitigation", MitigationParams),
        ):
            if key in doc and isinstance(doc[key], dict):
                doc[key] = sub(**doc[key])
        cfg = cls(**doc)
        for name in ("digram_mean_range_ms", "word_length_range"):
            setattr(cfg.keystroke, name, tuple(getattr(cfg.keystroke, name)))
        cfg.hub_policy_priority = tuple(cfg.hub_policy_priority)
        return cfg

    def logical_dict(self) -> dict:
        """Config identity: everything except where the run lands on disk."""
        doc = self.to_dict()
        doc.pop("out_dir", None)
        return doc

    def digest(self) -> str:
        blob = json.dumps(self.logical_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# run directory plumbing


def _init_run_dir(cfg: ExperimentConfig) -> Path:
    run = Path(cfg.out_dir)
    run.mkdir(parents=True, exist_ok=True)
    for sub in ("traces", "datasets", "models", "reports"):
        (run / sub).mkdir(exist_ok=True)
    (run / "config.json").write_text(
        json.dumps(cfg.logical_dict(), indent=2, sort_keys=True) + "\n"
    )
    return run


def _write_meta(run: Path, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    meta = {
        "config_digest": cfg.digest(),
        "master_seed": cfg.master_seed,
        "out_dir": cfg.out_dir,
        "scenario": cfg.scenario,
        "tool_version": __version__,
        "wall_clock_unix": time.time(),
    }
    if extra:
        meta.update(extra)
    (run / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _write_report(run: Path, name: str, doc: dict, text: str) -> None:
    (run / "reports" / f"{name}.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    (run / "reports" / f"{name}.txt").write_text(text)


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_digest": cfg.digest(), "master_seed": cfg.master_seed}


BANNER = "simulated results from synthetic workloads; not comparable to hardware measurements"


def write_feature_dataset(path: Path, rows, labels, ids, window_ms: float) -> None:
    """Feature cache: line-oriented numeric text, one trial per line."""
    lines = [f"# window_ms={window_ms}", f"# n_items={len(rows)}"]
    for row, label, item_id in zip(rows, labels, ids):
        vals = " ".join(repr(float(v)) for v in row)
        lines.append(f"{item_id},{label},{vals}")
    path.write_text("\n".join(lines) + "\n")


def read_feature_dataset(path: Path):
    rows, labels, ids = [], [], []
    window_ms = 5.0
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "window_ms":
                window_ms = float(value)
            continue
        item_id, label, vals = line.split(",", 2)
        rows.append(np.asarray([float(v) for v in vals.split()], dtype=float))
        labels.append(label)
        ids.append(item_id)
    return rows, labels, ids, window_ms


# ---------------------------------------------------------------------------
# keystroke scenario


def _keystroke_workload(truth: KeyEventTrace) -> Workload:
    return Workload(
        interrupt_devices=(
            InterruptDevice("mouse", poll_interval_us=1000),
            InterruptDevice("keyboard", events=truth),
        ),
        spy_device_id="mouse",
        label="keystroke",
    )


def simulate_typed_word(
    word: str,
    profile,
    hub: HubConfig,
    word_seed: int,
    sim_seed: int,
    jitter_us: int,
) -> TraceBundle:
    truth = gen_typist_events(word, profile, seed=word_seed)
    duration = (truth.events[-1].t_us // 1000 + 300) * 1000
    return run_simulation(hub, _keystroke_workload(truth), duration, sim_seed, jitter_us)


def side_channel_latencies(bundle: TraceBundle, cfg: DetectorConfig | None = None):
    """Attack view of one trace: inferred press-to-press latencies (ms)."""
    est = detect_key_events(bundle.spy, cfg)
    if len(est) < 4:
        return None
    kinds = infer_event_kinds(est, cfg)
    presses = [int(t) for t, k in zip(est, kinds) if k == "press"]
    if len(presses) < 2:
        return None
    return extract_digram_latencies(presses)


def run_keystroke(cfg: ExperimentConfig, stage: str = "evaluate") -> Path:
    """Stages: traces (generate+simulate), model (+fit HMM), evaluate (+attack)."""
    run = _init_run_dir(cfg)
    ks = cfg.keystroke
    hub = cfg.hub()
    master = cfg.master_seed

    dictionary = generate_wordlist(
        ks.n_words, ks.alphabet, derive_seed(master, "dictionary"), ks.word_length_range
    )
    (run / "dictionary.txt").write_text("\n".join(dictionary) + "\n")
    profile = make_typist_profile(
        ks.alphabet,
        derive_seed(master, "typist"),
        mean_range_ms=ks.digram_mean_range_ms,
        stddev_ms=ks.digram_stddev_ms,
        overlap_rate=ks.overlap_rate,
    )
    save_typist_profile(run / "typist_profile.json", profile)

    picker = np.random.default_rng(derive_seed(master, "profiling-pick"))
    prof_words = [dictionary[int(i)] for i in picker.choice(len(dictionary), ks.profiling_words, replace=False)]

    corpus = []
    detector = DetectorConfig()
    for i, word in enumerate(prof_words):
        bundle = simulate_typed_word(
            word,
            profile,
            hub,
            derive_seed(master, "profile-word", i),
            derive_seed(master, "profile-sim", i),
            cfg.jitter_us,
        )
        if cfg.save_traces:
            write_trace(run / "traces" / f"profile_{i:04d}.trace", bundle.spy)
            write_key_events(run / "traces" / f"profile_{i:04d}.keys", bundle.key_truth)
        est = detect_key_events(bundle.spy, detector)
        report = label_events(est, bundle.key_truth, detector)
        presses = sorted(
            int(e) for e, _, kind, truth_kind in report.pairs if truth_kind == "press"
        )
        if len(presses) == len(word):
            corpus.append((word, extract_digram_latencies(presses)))
    if stage == "traces":
        _write_meta(run, cfg, {"stage": "traces", "profiling_traces": len(prof_words)})
        return run

    model = fit_hmm(corpus, ks.alphabet, dictionary)
    save_hmm(run / "models" / "hmm.json", model)
    if stage == "model":
        _write_meta(run, cfg, {"stage": "model", "corpus_words": len(corpus)})
        return run

    atk_picker = np.random.default_rng(derive_seed(master, "attack-pick"))
    picked = [
        dictionary[int(i)] for i in atk_picker.choice(len(dictionary), ks.trials, replace=False)
    ]
    attack_words = []
    bundles = []
    for i, word in enumerate(picked):
        for rep in range(ks.repeats_per_word):
            attack_words.append(word)
            bundles.append(
                simulate_typed_word(
                    word,
                    profile,
                    hub,
                    derive_seed(master, "attack-word", i, rep),
                    derive_seed(master, "attack-sim", i, rep),
                    cfg.jitter_us,
                )
            )
            if cfg.save_traces:
                stem = f"attack_{i:04d}_{rep:02d}"
                write_trace(run / "traces" / f"{stem}.trace", bundles[-1].spy)
                write_key_events(run / "traces" / f"{stem}.keys", bundles[-1].key_truth)

    kept, rejected = sanitize_traces(bundles)
    kept_idx = {id(b) for b in kept}

    rankings = []
    truths = []
    skipped = 0
    for word, bundle in zip(attack_words, bundles):
        if id(bundle) not in kept_idx:
            skipped += 1
            continue
        obs = side_channel_latencies(bundle)
        if obs is None:
            skipped += 1
            continue
        rankings.append(rank_dictionary(model, obs, dictionary))
        truths.append(word)
    acc = evaluate_topk(rankings, truths, ks=(10, 50))

    doc = {
        "dataset": f"{ks.n_words} words, {len(ks.alphabet)} letters",
        "alphabet_size": len(ks.alphabet),
        "n_trials": len(truths),
        "skipped_trials": skipped,
        "sanitized_out": len(rejected),
        "top10": acc[10],
        "top50": acc[50],
        "banner": BANNER,
        **_provenance(cfg),
    }
    text = (
        f"# {BANNER}\n"
        f"{'dataset':<28}{'alphabet':>10}{'Top-10':>10}{'Top-50':>10}\n"
        f"{doc['dataset']:<28}{doc['alphabet_size']:>10}"
        f"{acc[10]:>10.3f}{acc[50]:>10.3f}\n"
        f"# trials={doc['n_trials']} config={doc['config_digest']} seed={cfg.master_seed}\n"
    )
    _write_report(run, "keystroke_accuracy", doc, text)
    _write_meta(run, cfg, {"stage": "evaluate", "corpus_words": len(corpus)})
    return run


# ---------------------------------------------------------------------------
# website scenario


def _web_workload(timeline, label: str) -> Workload:
    return Workload(
        bulk_devices=(
            BulkDevice("ssd", closed_loop_batch_bytes=SPY_BATCH_BYTES),
            BulkDevice("nic", requests=timeline),
        ),
        spy_device_id="ssd",
        label=label,
    )


def simulate_site_trial(
    site, cfg: ExperimentConfig, trial: int
) -> tuple[TraceBundle, FeatureSequence]:
    ws = cfg.website
    master = cfg.master_seed
    timeline = gen_web_traffic(
        site, ws.duration_us, derive_seed(master, "timeline", site.label, trial)
    )
    if ws.vpn:
        timeline = vpn_transform(
            timeline,
            VpnParams(ws.vpn_overhead_bytes, ws.vpn_latency_ms, ws.vpn_jitter_ms),
            derive_seed(master, "vpn", site.label, trial),
        )
    bundle = run_simulation(
        cfg.hub(),
        _web_workload(timeline, f"website:{site.label}"),
        ws.duration_us,
        derive_seed(master, "sim", site.label, trial),
        cfg.jitter_us,
    )
    feats = featurize(bundle.spy, ws.window_ms, duration_us=ws.duration_us, label=site.label)
    return bundle, feats


def run_website(cfg: ExperimentConfig, stage: str = "evaluate") -> Path:
    """Stages: traces (features+optional traces), correlate, model, evaluate."""
    run = _init_run_dir(cfg)
    ws = cfg.website
    master = cfg.master_seed

    sites = make_site_corpus(ws.n_sites, derive_seed(master, "sites"), ws.duration_us // 1000)
    save_site_corpus(run / "site_corpus.json", sites)

    rows, labels, ids = [], [], []
    correlations = {}
    for site in sites:
        for trial in range(ws.trials_per_site):
            bundle, feats = simulate_site_trial(site, cfg, trial)
            item_id = f"{site.label}_t{trial:03d}"
            rows.append(feats.values)
            labels.append(site.label)
            ids.append(item_id)
            if cfg.save_traces:
                label_dir = run / "datasets" / site.label
                label_dir.mkdir(parents=True, exist_ok=True)
                write_trace(label_dir / f"trial_{trial:03d}.trace", bundle.spy)
                write_traffic(label_dir / f"trial_{trial:03d}.traffic", bundle.traffic_truth)
            if trial == 0:
                truth_binned = bin_timeline(
                    bundle.traffic_truth, ws.window_ms, len(feats.values)
                )
                correlations[site.label] = correlate(feats.values, truth_binned)

    write_feature_dataset(run / "datasets" / "features.txt", rows, labels, ids, ws.window_ms)

    corr_vals = [v for v in correlations.values() if v is not None]
    corr_doc = {
        "per_site": {k: v for k, v in sorted(correlations.items())},
        "mean_r": float(np.mean(corr_vals)) if corr_vals else None,
        "min_r": float(np.min(corr_vals)) if corr_vals else None,
        "window_ms": ws.window_ms,
        "banner": BANNER,
        **_provenance(cfg),
    }
    corr_text = f"# {BANNER}\n{'site':<12}{'pearson_r':>12}\n" + "".join(
        f"{k:<12}{v if v is not None else float('nan'):>12.4f}\n"
        for k, v in sorted(correlations.items())
    )
    _write_report(run, "correlation", corr_doc, corr_text)
    if stage in ("traces", "correlate"):
        _write_meta(run, cfg, {"stage": stage, "n_items": len(rows)})
        return run

    length = math.ceil(ws.duration_us / (ws.window_ms * 1000))
    dataset = make_dataset(rows, labels, ids, length)
    hyper = dict(
        hidden_size=ws.hidden_size,
        epochs=ws.epochs,
        learning_rate=ws.learning_rate,
        lr_decay=ws.lr_decay,
        clip_norm=ws.clip_norm,
        pool=ws.pool,
    )

    clf, _ = train_bilstm(
        dataset.sequences,
        np.asarray(dataset.labels),
        seed=derive_seed(master, "final-model"),
        **hyper,
    )
    save_classifier(run / "models" / "classifier.npz", clf)
    if stage == "model":
        _write_meta(run, cfg, {"stage": "model", "n_items": len(rows)})
        return run

    report = cross_validate(dataset, k=ws.folds, seed=derive_seed(master, "cv"), **hyper)
    doc = {
        "condition": "vpn" if ws.vpn else "direct",
        "n_sites": ws.n_sites,
        "trials_per_site": ws.trials_per_site,
        "folds": ws.folds,
        "top1": report.top1,
        "top3": report.top3,
        "fold_top1": list(report.fold_top1),
        "fold_top3": list(report.fold_top3),
        "downsample_pool": ws.pool,
        "banner": BANNER,
        **_provenance(cfg),
    }
    text = (
        f"# {BANNER}\n"
        f"{'condition':<12}{'labels':>8}{'Top-1':>10}{'Top-3':>10}\n"
        f"{doc['condition']:<12}{ws.n_sites:>8}{report.top1:>10.3f}{report.top3:>10.3f}\n"
        f"# folds: top1={['%.3f' % a for a in report.fold_top1]}\n"
        f"# config={doc['config_digest']} seed={cfg.master_seed}\n"
    )
    _write_report(run, "cv_report", doc, text)
    (run / "reports" / "cv_folds.json").write_text(
        json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
    )
    _write_meta(run, cfg, {"stage": "evaluate", "n_items": len(rows)})
    return run


# ---------------------------------------------------------------------------
# resolution sweep


def run_resolution(cfg: ExperimentConfig, stage: str = "evaluate") -> Path:
    run = _init_run_dir(cfg)
    rs = cfg.resolution
    master = cfg.master_seed

    sizes = sweep_sizes(rs.min_size, rs.max_size)
    nominal, annotations = burst_sweep_workload(
        sizes, rs.repeats, rs.gap_ms, payload=cfg.hub_payload
    )
    delivered = absorb_bursts(nominal, derive_seed(master, "absorb"), rs.absorb_max_bytes)
    duration = int(nominal.t_us[-1]) + 1_000_000
    bundle = run_simulation(
        cfg.hub(),
        _web_workload(delivered, "resolution"),
        duration,
        derive_seed(master, "sweep-sim"),
        cfg.jitter_us,
    )
    if cfg.save_traces:
        write_trace(run / "traces" / "sweep.trace", bundle.spy)
        write_traffic(run / "traces" / "sweep.traffic", bundle.traffic_truth)

    feats = featurize(bundle.spy, 5.0, duration_us=duration)
    report = detect_bursts(feats, annotations)
    doc = {
        "rates": {str(size): report.rates[size] for size in sizes},
        "baseline_ms": report.baseline_ms,
        "threshold_ms": report.threshold_ms,
        "repeats": rs.repeats,
        "absorb_max_bytes": rs.absorb_max_bytes,
        "banner": BANNER,
        **_provenance(cfg),
    }
    text = f"# {BANNER}\n{'burst_bytes':>12}{'detected':>10}{'rate':>8}\n" + "".join(
        f"{size:>12}{int(report.rates[size] * rs.repeats):>10}{report.rates[size]:>8.2f}\n"
        for size in sizes
    )
    _write_report(run, "resolution", doc, text)
    _write_meta(run, cfg, {"stage": stage})
    return run


# ---------------------------------------------------------------------------
# mitigation comparison


def _keystroke_f1_under_policy(cfg: ExperimentConfig, policy: str) -> float:
    ms = cfg.mitigation
    hub_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "hub_policy": policy})
    hub = hub_cfg.hub()
    profile = make_typist_profile(
        cfg.keystroke.alphabet,
        derive_seed(cfg.master_seed, "mitigation-typist"),
        overlap_rate=0.0,
    )
    words = generate_wordlist(
        ms.keystroke_words, cfg.keystroke.alphabet, derive_seed(cfg.master_seed, "mitigation-words")
    )
    scores = []
    for i, word in enumerate(words):
        bundle = simulate_typed_word(
            word,
            profile,
            hub,
            derive_seed(cfg.master_seed, "mitigation-word", i),
            derive_seed(cfg.master_seed, "mitigation-sim", i),
            cfg.jitter_us,
        )
        est = detect_key_events(bundle.spy)
        scores.append(detection_f1(est, bundle.key_truth, tolerance_ms=1.0))
    return float(np.mean(scores))


def _mean_correlation_under_policy(cfg: ExperimentConfig, policy: str) -> float:
    ms = cfg.mitigation
    hub_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "hub_policy": policy})
    hub = hub_cfg.hub()
    sites = make_site_corpus(
        ms.sites, derive_seed(cfg.master_seed, "mitigation-sites"), ms.duration_us // 1000
    )
    rs = []
    for site in sites:
        timeline = gen_web_traffic(
            site, ms.duration_us, derive_seed(cfg.master_seed, "mitigation-tl", site.label)
        )
        bundle = run_simulation(
            hub,
            _web_workload(timeline, f"mitigation:{site.label}"),
            ms.duration_us,
            derive_seed(cfg.master_seed, "mitigation-sim", site.label),
            cfg.jitter_us,
        )
        feats = featurize(bundle.spy, 5.0, duration_us=ms.duration_us)
        truth = bin_timeline(bundle.traffic_truth, 5.0, len(feats.values))
        r = correlate(feats.values, truth)
        if r is not None:
            rs.append(r)
    return float(np.mean(rs))


def run_mitigation(cfg: ExperimentConfig, stage: str = "evaluate") -> Path:
    run = _init_run_dir(cfg)
    rows = {}
    for policy in ("fair_round_robin", "randomized_allocation"):
        rows[policy] = {
            "keystroke_f1": _keystroke_f1_under_policy(cfg, policy),
            "mean_site_r": _mean_correlation_under_policy(cfg, policy),
        }
    doc = {"policies": rows, "banner": BANNER, **_provenance(cfg)}
    text = f"# {BANNER}\n{'policy':<24}{'keystroke_f1':>14}{'mean_site_r':>13}\n" + "".join(
        f"{p:<24}{v['keystroke_f1']:>14.4f}{v['mean_site_r']:>13.4f}\n"
        for p, v in rows.items()
    )
    _write_report(run, "mitigation", doc, text)
    _write_meta(run, cfg, {"stage": stage})
    return run


# ---------------------------------------------------------------------------
# dispatch and tables


def run_experiment(cfg: ExperimentConfig, stage: str = "evaluate") -> Path:
    runner = {
        "keystroke": run_keystroke,
        "website": run_website,
        "resolution": run_resolution,
        "mitigation": run_mitigation,
    }[cfg.scenario]
    return runner(cfg, stage=stage)


def bulk_limits_table() -> str:
    lines = [
        f"{'payload_bytes':>14}{'max_bandwidth_Bps':>19}{'transfers_per_uframe':>22}{'bytes_per_uframe':>18}"
    ]
    for payload in (1, 8, 32, 128, 512):
        lim = bulk_limits(payload)
        lines.append(
            f"{payload:>14}{lim.bytes_per_second:>19,}{lim.transfers_per_microframe:>22}{lim.bytes_per_microframe:>18}"
        )
    return "\n".join(lines) + "\n"


def reproduce_tables(run_dirs: list[str | Path], out_dir: str | Path) -> Path:
    """Assemble the summary tables from completed run directories.

    Emits the exact bulk-limit table plus per-scenario analogue tables with
    provenance; runs that are missing land as absent rows, never invented
    numbers.  Idempotent over the same inputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table_bulk_limits.txt").write_text(bulk_limits_table())

    found: dict[str, list[tuple[str, dict]]] = {
        "keystroke_accuracy": [],
        "cv_report": [],
        "resolution": [],
        "mitigation": [],
    }
    absent = []
    for rd in run_dirs:
        rd = Path(rd)
        any_report = False
        for name in found:
            p = rd / "reports" / f"{name}.json"
            if p.exists():
                found[name].append((rd.name, json.loads(p.read_text())))
                any_report = True
        if not any_report:
            absent.append(rd.name)

    lines = [f"# {BANNER}"]
    if found["keystroke_accuracy"]:
        lines.append(f"{'run':<24}{'dataset':<28}{'Top-10':>8}{'Top-50':>8}  provenance")
        for run_name, doc in found["keystroke_accuracy"]:
            lines.append(
                f"{run_name:<24}{doc['dataset']:<28}{doc['top10']:>8.3f}{doc['top50']:>8.3f}"
                f"  {doc['config_digest']}/{doc['master_seed']}"
            )
    (out / "table_keystroke.txt").write_text("\n".join(lines) + "\n")

    lines = [f"# {BANNER}"]
    if found["cv_report"]:
        lines.append(f"{'run':<24}{'condition':<10}{'labels':>7}{'Top-1':>8}{'Top-3':>8}  provenance")
        for run_name, doc in found["cv_report"]:
            lines.append(
                f"{run_name:<24}{doc['condition']:<10}{doc['n_sites']:>7}"
                f"{doc['top1']:>8.3f}{doc['top3']:>8.3f}  {doc['config_digest']}/{doc['master_seed']}"
            )
    (out / "table_website.txt").write_text("\n".join(lines) + "\n")

    lines = [f"# {BANNER}"]
    for run_name, doc in found["mitigation"]:
        lines.append(f"run {run_name} (config={doc['config_digest']} seed={doc['master_seed']})")
        lines.append(f"{'policy':<24}{'keystroke_f1':>14}{'mean_site_r':>13}")
        for policy, vals in doc["policies"].items():
            lines.append(f"{policy:<24}{vals['keystroke_f1']:>14.4f}{vals['mean_site_r']:>13.4f}")
    (out / "table_mitigation.txt").write_text("\n".join(lines) + "\n")

    summary = {
        "absent_runs": sorted(absent),
        "runs_by_table": {k: sorted(n for n, _ in v) for k, v in found.items()},
    }
    (out / "tables_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out
