"""Desk-scale laboratory for USB hub congestion side-channels."""

from .bus import (
    ArbitrationPolicy,
    BulkLimits,
    HubConfig,
    bulk_limits,
    FRAME_US,
    MICROFRAME_US,
)
from .errors import ConfigError, DomainError, TrainingError, UsbLabError
from .experiments import ExperimentConfig, derive_seed, reproduce_tables, run_experiment
from .fingerprint import (
    BiLstmClassifier,
    CvReport,
    FeatureSequence,
    LabeledDataset,
    WindowFeaturizer,
    correlate,
    cross_validate,
    detect_bursts,
    featurize,
    grad_check,
    train_bilstm,
)
from .keystroke import (
    DetectorConfig,
    DigramHmm,
    HmmModel,
    RankedWords,
    detect_key_events,
    evaluate_topk,
    extract_digram_latencies,
    fit_hmm,
    label_events,
    n_viterbi,
    rank_dictionary,
)
from .records import KeyEvent, KeyEventTrace, SpyTrace, TraceBundle, TrafficTimeline
from .scenarios import (
    SiteProfile,
    TypistProfile,
    VpnParams,
    burst_sweep_workload,
    gen_typist_events,
    gen_web_traffic,
    make_site_corpus,
    make_typist_profile,
    sanitize_traces,
    vpn_transform,
)
from .sim import (
    BulkDevice,
    InterruptDevice,
    Workload,
    bulk_schedule_microframe,
    run_simulation,
    tt_schedule_frame,
)
from .version import __version__
