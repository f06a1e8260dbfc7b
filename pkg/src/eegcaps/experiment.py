"""Cohort manifests, subject-wise folds, metrics, and the CV harness.

Splitting is by subject: every epoch of a subject lands in the same fold,
so no identity information leaks between training and evaluation.  The
per-channel normalizer is likewise fitted on training-fold images only.
Metrics are computed at the epoch level with PD as the positive class; a
subject-level majority vote is reported as secondary output.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import capsnet
from .errors import (
    DuplicateSubject,
    EmptyBandSet,
    EmptyTestSet,
    FoldImbalance,
    InsufficientData,
    MissingRecording,
    ParseError,
    ShapeMismatch,
    ValidationError,
)
from .fimg import load_image_dir
from .signal import (
    BAND_ORDER,
    DEFAULT_HIGH_CUT_HZ,
    DEFAULT_LOW_CUT_HZ,
    default_n_taps,
    design_bandpass_fir,
    apply_fir,
    extract_features,
    read_recording_csv,
    segment_epochs,
)
from .topomap import (
    FULL_CHANNEL_ORDER,
    FeatureImage,
    apply_normalizer,
    assemble_image,
    build_grid,
    default_layout,
    fit_normalizer,
    project_aep,
)

GROUPS = ("HC", "PD")
LABEL_OF_GROUP = {"HC": 0, "PD": 1}

LOG_POWER_EPS = 1e-12


# ---------------------------------------------------------------------------
# cohort manifest


@dataclass
class SubjectEntry:
    subject_id: str
    group: str
    path: Path                  # subject directory or recording file
    sample_rate_hz: float
    epochs_to_take: int

    @property
    def recording_file(self) -> Path:
        return self.path / "recording.csv" if self.path.is_dir() else self.path


@dataclass
class CohortManifest:
    schema_version: int
    subjects: list

    def groups_of(self) -> dict:
        return {s.subject_id: s.group for s in self.subjects}


def load_manifest(path) -> CohortManifest:
    """Parse and validate a manifest; relative paths resolve against it."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise MissingRecording(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or "subjects" not in doc:
        raise ParseError(f"{path}: manifest must be an object with a subjects array")

    subjects = []
    seen = set()
    for entry in doc["subjects"]:
        try:
            subject_id = str(entry["id"])
            group = str(entry["group"])
            rec_path = Path(entry["path"])
            sample_rate = float(entry["sample_rate_hz"])
            epochs = int(entry["epochs_to_take"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad subject entry {entry!r}: {exc}") from exc
        if group not in GROUPS:
            raise ParseError(f"{path}: subject {subject_id} has unknown group {group!r}")
        if sample_rate <= 0 or epochs <= 0:
            raise ParseError(f"{path}: subject {subject_id} has non-positive fields")
        if subject_id in seen:
            raise DuplicateSubject(f"{path}: duplicate subject {subject_id}")
        seen.add(subject_id)
        if not rec_path.is_absolute():
            rec_path = path.parent / rec_path
        subjects.append(SubjectEntry(subject_id, group, rec_path, sample_rate, epochs))

    manifest = CohortManifest(schema_version=int(doc.get("schema_version", 1)),
                              subjects=subjects)
    for subject in manifest.subjects:
        if not subject.recording_file.exists():
            raise MissingRecording(
                f"{path}: subject {subject.subject_id} recording missing at "
                f"{subject.recording_file}"
            )
    return manifest


def save_manifest(path, manifest: CohortManifest) -> None:
    path = Path(path)
    doc = {
        "schema_version": manifest.schema_version,
        "subjects": [
            {
                "id": s.subject_id,
                "group": s.group,
                "path": os.path.relpath(s.path, path.parent),
                "sample_rate_hz": s.sample_rate_hz,
                "epochs_to_take": s.epochs_to_take,
            }
            for s in manifest.subjects
        ],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subject-wise folds


@dataclass
class FoldPlan:
    k: int
    assignment: dict            # subject_id -> fold index
    seed: int

    def test_subjects(self, fold: int) -> list:
        return sorted(s for s, f in self.assignment.items() if f == fold)

    def train_subjects(self, fold: int) -> list:
        return sorted(s for s, f in self.assignment.items() if f != fold)


def _subject_group_pairs(subjects):
    if isinstance(subjects, CohortManifest):
        subjects = subjects.subjects
    pairs = []
    for s in subjects:
        if isinstance(s, tuple):
            pairs.append((str(s[0]), str(s[1])))
        else:
            pairs.append((s.subject_id, s.group))
    return pairs


def make_folds(subjects, k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle within each group by seed, then deal subjects round-robin.

    Folds are subject-disjoint and stratified; per-group fold sizes differ
    by at most one, and remainders spread over the low fold indices.
    """
    pairs = _subject_group_pairs(subjects)
    by_group = {}
    for sid, group in pairs:
        by_group.setdefault(group, []).append(sid)
    for group, members in by_group.items():
        if len(members) < k:
            raise FoldImbalance(
                f"group {group} has {len(members)} subjects, fewer than k={k}"
            )
    rng = np.random.default_rng(seed)
    assignment = {}
    for group in sorted(by_group):
        members = sorted(by_group[group])
        order = rng.permutation(len(members))
        for position, idx in enumerate(order):
            assignment[members[idx]] = position % k
    return FoldPlan(k=k, assignment=assignment, seed=seed)


# ---------------------------------------------------------------------------
# metrics (PD positive)


@dataclass
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def sensitivity(self):
        pos = self.tp + self.fn
        return self.tp / pos if pos else None

    @property
    def specificity(self):
        neg = self.tn + self.fp
        return self.tn / neg if neg else None

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
        }


def metrics_from_predictions(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.size == 0:
        raise EmptyTestSet("no examples to score")
    return Metrics(
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
        fp=int(np.sum((y_true == 0) & (y_pred == 1))),
        tn=int(np.sum((y_true == 0) & (y_pred == 0))),
        fn=int(np.sum((y_true == 1) & (y_pred == 0))),
    )


def evaluate(params, config, test_images_with_labels) -> Metrics:
    """Epoch-level confusion counts for (image, label) pairs."""
    if not test_images_with_labels:
        raise EmptyTestSet("evaluation set is empty")
    data = np.stack([np.asarray(img.data if hasattr(img, "data") else img)
                     for img, _ in test_images_with_labels])
    y_true = [int(lab) for _, lab in test_images_with_labels]
    y_pred = capsnet.predict_batch(data, params, config)
    return metrics_from_predictions(y_true, y_pred)


# ---------------------------------------------------------------------------
# band subsets


def band_subset(images, bands):
    """Slice the (band, open) and (band, closed) channels for given bands.

    Band order of the full image is preserved; the result has 2 * |bands|
    channels.  Passing all four bands returns the images unchanged.
    """
    requested = [b for b in BAND_ORDER if b in set(bands)]
    unknown = set(bands) - set(BAND_ORDER)
    if unknown:
        raise ValidationError(f"unknown bands {sorted(unknown)}")
    if not requested:
        raise EmptyBandSet("band subset is empty")
    if len(requested) == len(BAND_ORDER):
        return list(images)
    indices = [
        FULL_CHANNEL_ORDER.index((band, state))
        for state in ("open", "closed")
        for band in requested
    ]
    order = tuple(FULL_CHANNEL_ORDER[i] for i in indices)
    out = []
    for img in images:
        if img.data.shape[0] != len(FULL_CHANNEL_ORDER):
            raise ShapeMismatch(
                f"{img.subject_id}: band subsetting needs full 8-channel images"
            )
        out.append(dataclasses.replace(
            img, data=np.ascontiguousarray(img.data[indices]), channel_order=order
        ))
    return out


# ---------------------------------------------------------------------------
# featurization


@dataclass(frozen=True)
class PipelineConfig:
    """Feature-extraction settings shared by the CLI and the harness."""

    low_cut_hz: float = DEFAULT_LOW_CUT_HZ
    high_cut_hz: float = DEFAULT_HIGH_CUT_HZ
    n_taps: int | None = None          # None: 2 s of taps at the recording rate
    window_s: float = 1.0
    overlap_fraction: float = 0.5
    log_power: bool = False
    bands: tuple | None = None         # None or all four: keep every channel


def featurize_subject(entry: SubjectEntry, pipeline: PipelineConfig,
                      layout=None, points=None, grid=None) -> list:
    """Recording file -> list of raw (un-normalized) feature images."""
    layout = layout or default_layout()
    if points is None:
        points = project_aep(layout)
    if grid is None:
        grid = build_grid(points)
    rec = read_recording_csv(entry.recording_file, entry.subject_id,
                             entry.group, entry.sample_rate_hz)
    if rec.channel_labels != list(layout.labels):
        raise ParseError(
            f"{entry.recording_file}: channel columns do not match the montage "
            f"(expected {layout.labels[:3]}..., got {rec.channel_labels[:3]}...)"
        )
    taps = pipeline.n_taps or default_n_taps(rec.sample_rate_hz)
    fir = design_bandpass_fir(pipeline.low_cut_hz, pipeline.high_cut_hz,
                              rec.sample_rate_hz, taps)
    pairs = segment_epochs(apply_fir(rec, fir))
    if len(pairs) < entry.epochs_to_take:
        raise InsufficientData(
            f"{entry.subject_id}: wanted {entry.epochs_to_take} epoch pairs, "
            f"recording yields {len(pairs)}"
        )
    images = []
    for pair in pairs[: entry.epochs_to_take]:
        features = extract_features(pair, rec.sample_rate_hz,
                                    pipeline.window_s, pipeline.overlap_fraction)
        if pipeline.log_power:
            features = np.log(features + LOG_POWER_EPS)
        images.append(assemble_image(features, points, grid, entry.subject_id,
                                     entry.group, pair.index))
    if pipeline.bands is not None:
        images = band_subset(images, pipeline.bands)
    return images


def featurize_cohort(manifest: CohortManifest, pipeline: PipelineConfig) -> dict:
    """All subjects' images, keyed by subject id."""
    layout = default_layout()
    points = project_aep(layout)
    grid = build_grid(points)
    return {
        entry.subject_id: featurize_subject(entry, pipeline, layout, points, grid)
        for entry in manifest.subjects
    }


# ---------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class TrainSettings:
    """Model size and optimization knobs for one training run."""

    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    routing_iterations: int = 3
    conv1_filters: int = 256
    dtype: str = "float32"


def model_config_for(images, settings: TrainSettings) -> capsnet.ModelConfig:
    depth, height, width = images[0].data.shape
    if height != width:
        raise ShapeMismatch(f"images must be square, got {height}x{width}")
    return capsnet.ModelConfig(
        in_channels=depth,
        grid=height,
        conv1_filters=settings.conv1_filters,
        routing_iterations=settings.routing_iterations,
    )


def train_fold(train_images, train_labels, settings: TrainSettings, seed_material):
    """Train a fresh model on one fold's training images."""
    config = model_config_for(train_images, settings)
    dtype = np.dtype(settings.dtype).type
    params = capsnet.init_params(config, seed=list(seed_material) + [1], dtype=dtype)
    hyper = capsnet.TrainHyper(learning_rate=settings.learning_rate)
    rng = np.random.default_rng(list(seed_material) + [2])
    params, history = capsnet.fit(
        train_images, train_labels, params, config, hyper,
        epochs=settings.epochs, batch_size=settings.batch_size, rng=rng,
    )
    return params, config, history


def _majority_vote(predictions) -> int:
    votes = np.bincount(predictions, minlength=2)
    return int(votes[1] > votes[0])    # ties resolve to HC


@dataclass
class FoldResult:
    fold: int
    test_subjects: list
    metrics: Metrics
    loss_history: list
    subject_votes: dict         # subject_id -> {"true": int, "predicted": int}


@dataclass
class CVReport:
    seed: int
    k: int
    folds: list
    summary: dict               # metric -> {"mean", "std"} (population std)
    subject_summary: dict
    pipeline: PipelineConfig
    settings: TrainSettings
    shuffled_labels: bool = False


def summarize_folds(fold_metrics) -> dict:
    out = {}
    for name in ("accuracy", "sensitivity", "specificity"):
        values = [getattr(m, name) for m in fold_metrics]
        if any(v is None for v in values):
            out[name] = {"mean": None, "std": None}
        else:
            arr = np.array(values, dtype=float)
            out[name] = {"mean": float(arr.mean()), "std": float(arr.std(ddof=0))}
    return out


def cross_validate(manifest: CohortManifest, pipeline: PipelineConfig,
                   settings: TrainSettings, seed: int, k: int = 5,
                   shuffle_labels: bool = False,
                   images_by_subject: dict | None = None) -> CVReport:
    """Subject-wise k-fold run: featurize, split, train, and score.

    Per fold, the normalizer is fitted on training-fold images only, the
    model trains from a fresh (seed, fold)-derived initialization, and the
    held-out fold is scored at the epoch level.  ``shuffle_labels`` permutes
    the group labels across subjects (seed-derived) for null-hypothesis
    runs.  Identical arguments produce an identical report.
    """
    if images_by_subject is None:
        images_by_subject = featurize_cohort(manifest, pipeline)
    elif pipeline.bands is not None:
        images_by_subject = {
            sid: band_subset(imgs, pipeline.bands)
            for sid, imgs in images_by_subject.items()
        }
    subject_ids = sorted(images_by_subject)
    groups = manifest.groups_of()
    if shuffle_labels:
        rng = np.random.default_rng([seed, 3])
        shuffled = [groups[s] for s in subject_ids]
        rng.shuffle(shuffled)
        groups = dict(zip(subject_ids, shuffled))
    labels = {s: LABEL_OF_GROUP[groups[s]] for s in subject_ids}

    plan = make_folds([(s, groups[s]) for s in subject_ids], k=k, seed=seed)

    fold_results = []
    all_votes = {}
    for fold in range(k):
        train_sids = plan.train_subjects(fold)
        test_sids = plan.test_subjects(fold)
        train_images = [img for s in train_sids for img in images_by_subject[s]]
        train_labels = [labels[s] for s in train_sids for _ in images_by_subject[s]]

        norm = fit_normalizer(train_images)
        train_normed = [apply_normalizer(img, norm) for img in train_images]
        params, config, history = train_fold(train_normed, train_labels,
                                             settings, (seed, fold))

        votes = {}
        y_true, y_pred = [], []
        for sid in test_sids:
            test_imgs = [apply_normalizer(img, norm) for img in images_by_subject[sid]]
            data = np.stack([img.data for img in test_imgs])
            preds = capsnet.predict_batch(data, params, config)
            y_true.extend([labels[sid]] * len(preds))
            y_pred.extend(int(p) for p in preds)
            votes[sid] = {"true": labels[sid], "predicted": _majority_vote(preds)}
        metrics = metrics_from_predictions(y_true, y_pred)
        fold_results.append(FoldResult(fold, test_sids, metrics, history, votes))
        all_votes.update(votes)

    correct = sum(v["true"] == v["predicted"] for v in all_votes.values())
    subject_summary = {
        "accuracy": correct / len(all_votes),
        "votes": {s: all_votes[s] for s in sorted(all_votes)},
    }
    return CVReport(
        seed=seed,
        k=k,
        folds=fold_results,
        summary=summarize_folds([f.metrics for f in fold_results]),
        subject_summary=subject_summary,
        pipeline=pipeline,
        settings=settings,
        shuffled_labels=shuffle_labels,
    )


def report_to_dict(report: CVReport) -> dict:
    return {
        "seed": report.seed,
        "k": report.k,
        "shuffled_labels": report.shuffled_labels,
        "pipeline": dataclasses.asdict(report.pipeline),
        "settings": dataclasses.asdict(report.settings),
        "folds": [
            {
                "fold": f.fold,
                "test_subjects": list(f.test_subjects),
                "metrics": f.metrics.to_dict(),
                "loss_history": [float(x) for x in f.loss_history],
                "subject_votes": f.subject_votes,
            }
            for f in report.folds
        ],
        "summary": report.summary,
        "subject_level": report.subject_summary,
    }


def write_report_json(path, report: CVReport) -> None:
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    )


# ---------------------------------------------------------------------------
# image-directory training/evaluation (CLI path)


def subjects_from_images(images) -> list:
    """Unique (subject_id, group) pairs found in a set of feature images."""
    seen = {}
    for img in images:
        prior = seen.setdefault(img.subject_id, img.group)
        if prior != img.group:
            raise ValidationError(f"{img.subject_id}: inconsistent group labels")
    return sorted(seen.items())


def split_images_by_fold(images, folds_seed: int, fold_index: int, k: int = 5):
    """Partition a directory's images into train/test by subject fold."""
    subjects = subjects_from_images(images)
    plan = make_folds(subjects, k=k, seed=folds_seed)
    if not 0 <= fold_index < k:
        raise ValidationError(f"fold index {fold_index} outside 0..{k - 1}")
    train = [img for img in images if plan.assignment[img.subject_id] != fold_index]
    test = [img for img in images if plan.assignment[img.subject_id] == fold_index]
    return train, test


def load_split_image_dir(directory, folds_seed: int, fold_index: int, k: int = 5):
    images = load_image_dir(directory)
    return split_images_by_fold(images, folds_seed, fold_index, k=k)
