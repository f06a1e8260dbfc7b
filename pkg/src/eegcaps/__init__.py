"""EEG band-power feature images + capsule network classification pipeline."""

from .errors import EegcapsError, ValidationError, DataIOError
from .experiment import (
    CohortManifest,
    CVReport,
    FoldPlan,
    Metrics,
    PipelineConfig,
    SubjectEntry,
    TrainSettings,
    band_subset,
    cross_validate,
    evaluate,
    featurize_cohort,
    featurize_subject,
    load_manifest,
    make_folds,
    save_manifest,
    write_report_json,
)
from .synthgen import EffectSpec, generate_cohort, generate_recording
from .topomap import ElectrodeLayout, FeatureImage, Normalizer, default_layout

__version__ = "0.1.0"
