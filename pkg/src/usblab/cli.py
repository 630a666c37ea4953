"""Command-line interface for running experiments and attack pipelines.

Each subcommand takes flags plus one optional positional argument: the path
to a JSON experiment-config file (flags override file values).  Exit codes:
0 success, 2 configuration error, 3 domain error, 4 training failure,
1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, TrainingError
from .experiments import (
    ExperimentConfig,
    load_config,
    read_feature_dataset,
    reproduce_tables,
    run_experiment,
)
from .fingerprint import make_dataset, save_classifier, train_bilstm
from .keystroke import (
    DetectorConfig,
    detect_key_events,
    extract_digram_latencies,
    infer_event_kinds,
    load_hmm,
    rank_dictionary,
)
from .records import TraceBundle, KeyEventTrace
from .scenarios import sanitize_traces
from .traceio import load_wordlist, read_trace
from .version import __version__


def _base_parser(sub: argparse.ArgumentParser, scenario: str | None = None):
    sub.add_argument("config", nargs="?", help="JSON experiment config file")
    sub.add_argument("--out", help="run output directory")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--jitter-us", type=int, help="spy timestamp jitter bound")
    sub.add_argument(
        "--policy",
        choices=("fair_round_robin", "randomized_allocation", "unfair_priority"),
        help="hub arbitration policy",
    )
    sub.add_argument("--save-traces", dest="save_traces", action="store_true", default=None)
    sub.add_argument("--no-save-traces", dest="save_traces", action="store_false")
    sub.set_defaults(scenario=scenario)


def _config_from_args(args, default_scenario: str) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if args.scenario:
            cfg.scenario = args.scenario
    else:
        cfg = ExperimentConfig(scenario=args.scenario or default_scenario)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.master_seed = args.seed
    if getattr(args, "jitter_us", None) is not None:
        cfg.jitter_us = args.jitter_us
    if getattr(args, "policy", None) is not None:
        cfg.hub_policy = args.policy
    if getattr(args, "save_traces", None) is not None:
        cfg.save_traces = args.save_traces
    if getattr(args, "trials", None) is not None:
        cfg.keystroke.trials = args.trials
        cfg.website.trials_per_site = args.trials
    if getattr(args, "sites", None) is not None:
        cfg.website.n_sites = args.sites
    if getattr(args, "words", None) is not None:
        cfg.keystroke.n_words = args.words
    if getattr(args, "vpn", None):
        cfg.website.vpn = True
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="usblab",
        description="Hub-congestion side-channel laboratory: simulate spy traces, "
        "run recovery attacks, and compare mitigations.",
    )
    parser.add_argument("--version", action="version", version=f"usblab {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="generate traces/datasets for a scenario")
    _base_parser(p)
    p.add_argument("--scenario", choices=("keystroke", "website", "resolution"))
    p.add_argument("--trials", type=int)
    p.add_argument("--sites", type=int)
    p.add_argument("--words", type=int)
    p.add_argument("--vpn", action="store_true", default=None)

    p = subs.add_parser("sanitize", help="filter a trace dataset, reporting rejections")
    p.add_argument("--traces", required=True, help="directory of .trace files")
    p.add_argument("--out", help="write sanitize report here")

    p = subs.add_parser("train-hmm", help="profile a typist and fit the digram model")
    _base_parser(p, scenario="keystroke")
    p.add_argument("--trials", type=int)
    p.add_argument("--words", type=int)

    p = subs.add_parser("decode", help="rank dictionary words for one spy trace")
    p.add_argument("--model", required=True, help="fitted HMM model (JSON)")
    p.add_argument("--dictionary", required=True, help="word list, one word per line")
    p.add_argument("--trace", required=True, help="spy trace file")
    p.add_argument("--top", type=int, default=10)

    p = subs.add_parser("train-classifier", help="train the website classifier")
    _base_parser(p, scenario="website")
    p.add_argument("--features", help="existing feature cache to train from")
    p.add_argument("--trials", type=int)
    p.add_argument("--sites", type=int)
    p.add_argument("--vpn", action="store_true", default=None)

    p = subs.add_parser("evaluate", help="run a scenario end to end and report accuracy")
    _base_parser(p)
    p.add_argument("--scenario", choices=("keystroke", "website"))
    p.add_argument("--trials", type=int)
    p.add_argument("--sites", type=int)
    p.add_argument("--words", type=int)
    p.add_argument("--vpn", action="store_true", default=None)

    p = subs.add_parser("sweep", help="burst-size resolution experiment")
    _base_parser(p, scenario="resolution")

    p = subs.add_parser("correlate", help="side-channel vs ground-truth correlation check")
    _base_parser(p, scenario="website")
    p.add_argument("--sites", type=int)
    p.add_argument("--trials", type=int)

    p = subs.add_parser("mitigate", help="compare arbitration policies on identical workloads")
    _base_parser(p, scenario="mitigation")

    p = subs.add_parser("report", help="assemble summary tables from run directories")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)

    return parser


def _cmd_sanitize(args) -> int:
    trace_dir = Path(args.traces)
    files = sorted(trace_dir.rglob("*.trace"))
    if not files:
        raise ConfigError(f"no .trace files under {trace_dir}")
    bundles = []
    for f in files:
        spy = read_trace(f)
        bundles.append(
            TraceBundle(spy=spy, noise_seed=int(spy.metadata.get("seed", 0)), key_truth=KeyEventTrace((), ""))
        )
    kept, rejected = sanitize_traces(bundles)
    by_bundle = {id(b): f for b, f in zip(bundles, files)}
    doc = {
        "kept": [by_bundle[id(b)].name for b in kept],
        "rejected": [{"file": by_bundle[id(b)].name, "reason": r} for b, r in rejected],
    }
    print(f"kept {len(kept)}, rejected {len(rejected)}")
    for entry in doc["rejected"]:
        print(f"  {entry['file']}: {entry['reason']}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "sanitize.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def _cmd_decode(args) -> int:
    model = load_hmm(args.model)
    dictionary = load_wordlist(args.dictionary)
    spy = read_trace(args.trace)
    cfg = DetectorConfig()
    est = detect_key_events(spy, cfg)
    kinds = infer_event_kinds(est, cfg)
    presses = [int(t) for t, k in zip(est, kinds) if k == "press"]
    if len(presses) < 2:
        print("no decodable key presses in trace", file=sys.stderr)
        return 3
    obs = extract_digram_latencies(presses)
    ranked = rank_dictionary(model, obs, dictionary)
    if ranked.no_eligible:
        print("no dictionary word matches the observed digram count", file=sys.stderr)
        return 3
    for i, (word, score) in enumerate(ranked.entries[: args.top], start=1):
        print(f"{i:>3} {word:<12} {score:.3f}")
    return 0


def _cmd_train_classifier(args) -> int:
    if args.features:
        rows, labels, ids, _ = read_feature_dataset(Path(args.features))
        length = max(len(r) for r in rows)
        dataset = make_dataset(rows, labels, ids, length)
        cfg = _config_from_args(args, "website")
        ws = cfg.website
        clf, _ = train_bilstm(
            dataset.sequences,
            np.asarray(dataset.labels),
            seed=cfg.master_seed,
            hidden_size=ws.hidden_size,
            epochs=ws.epochs,
            learning_rate=ws.learning_rate,
            lr_decay=ws.lr_decay,
            clip_norm=ws.clip_norm,
            pool=ws.pool,
        )
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_classifier(out / "classifier.npz", clf)
        print(f"trained on {len(labels)} items; model at {out / 'classifier.npz'}")
        return 0
    cfg = _config_from_args(args, "website")
    run = run_experiment(cfg, stage="model")
    print(f"run directory: {run}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sanitize":
            return _cmd_sanitize(args)
        if args.command == "decode":
            return _cmd_decode(args)
        if args.command == "train-classifier":
            return _cmd_train_classifier(args)
        if args.command == "report":
            out = reproduce_tables(args.runs, args.out)
            print(f"tables written to {out}")
            return 0

        stage = {
            "simulate": "traces",
            "train-hmm": "model",
            "correlate": "correlate",
        }.get(args.command, "evaluate")
        default_scenario = {
            "sweep": "resolution",
            "mitigate": "mitigation",
            "correlate": "website",
            "train-hmm": "keystroke",
        }.get(args.command, "keystroke")
        cfg = _config_from_args(args, default_scenario)
        run = run_experiment(cfg, stage=stage)
        for report in sorted((run / "reports").glob("*.txt")):
            print(f"--- {report.name} ---")
            print(report.read_text(), end="")
        print(f"run directory: {run}")
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
