"""Command-line interface.

Subcommands: synth (make a synthetic cohort), featurize (recordings to
.fimg), train / evaluate (one fold against an image directory), and cv
(full subject-wise cross-validation with JSON/CSV/figure outputs).

Exit codes: 0 success, 2 validation error, 3 I/O error.
"""

import sys
from pathlib import Path

import click

from . import capsnet
from .errors import DataIOError, ValidationError
from .experiment import (
    PipelineConfig,
    TrainSettings,
    cross_validate,
    evaluate,
    featurize_cohort,
    load_manifest,
    load_split_image_dir,
    model_config_for,
    train_fold,
    write_report_json,
)
from .fimg import write_image_dir
from .signal import BAND_ORDER
from .synthgen import (
    DEFAULT_EPOCHS_TO_TAKE,
    DEFAULT_SAMPLE_RATE_HZ,
    EffectSpec,
    generate_cohort,
)
from .topomap import fit_normalizer, apply_normalizer

EXIT_VALIDATION = 2
EXIT_IO = 3


def _parse_bands(text):
    if text is None:
        return None
    bands = tuple(b.strip().lower() for b in text.split(",") if b.strip())
    unknown = set(bands) - set(BAND_ORDER)
    if unknown:
        raise ValidationError(
            f"unknown bands {sorted(unknown)}; choose from {', '.join(BAND_ORDER)}"
        )
    return bands


@click.group()
def cli():
    """EEG band-power images + capsule-network classification."""


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--hc", "n_hc", default=6, show_default=True, type=int,
              help="Number of healthy-control subjects.")
@click.option("--pd", "n_pd", default=6, show_default=True, type=int,
              help="Number of PD subjects.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--effect-size", default=2.0, show_default=True, type=float,
              help="Group separation knob; 0 means identical distributions.")
@click.option("--epochs-per-subject", default=DEFAULT_EPOCHS_TO_TAKE,
              show_default=True, type=int)
@click.option("--sample-rate", default=DEFAULT_SAMPLE_RATE_HZ,
              show_default=True, type=float)
@click.option("--noise-std", default=1.0, show_default=True, type=float)
def synth(out_dir, n_hc, n_pd, seed, effect_size, epochs_per_subject,
          sample_rate, noise_std):
    """Generate a synthetic cohort (recordings + manifest)."""
    effect = EffectSpec.from_effect_size(effect_size, noise_std_uv=noise_std)
    manifest = generate_cohort(n_hc, n_pd, effect, seed, out_dir,
                               epochs_to_take=epochs_per_subject,
                               sample_rate_hz=sample_rate)
    click.echo(f"wrote {len(manifest.subjects)} subjects under {out_dir}")


@cli.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--bands", default=None,
              help="Comma-separated subset of theta,alpha,beta,gamma.")
@click.option("--log-power", is_flag=True, default=False,
              help="Interpolate log band powers instead of raw powers.")
def featurize(manifest_path, out_dir, bands, log_power):
    """Turn a cohort's recordings into .fimg feature images."""
    pipeline = PipelineConfig(bands=_parse_bands(bands), log_power=log_power)
    manifest = load_manifest(manifest_path)
    images_by_subject = featurize_cohort(manifest, pipeline)
    count = 0
    for subject_id in sorted(images_by_subject):
        write_image_dir(out_dir, images_by_subject[subject_id])
        count += len(images_by_subject[subject_id])
    click.echo(f"wrote {count} images under {out_dir}")


def _train_options(fn):
    fn = click.option("--routing-iters", default=3, show_default=True, type=int)(fn)
    fn = click.option("--batch", "batch_size", default=32, show_default=True, type=int)(fn)
    fn = click.option("--epochs", default=30, show_default=True, type=int)(fn)
    fn = click.option("--lr", "learning_rate", default=1e-3, show_default=True, type=float)(fn)
    fn = click.option("--conv1-filters", default=256, show_default=True, type=int,
                      help="Width of the first convolution (reduce for desk-scale runs).")(fn)
    fn = click.option("--dtype", default="float32", show_default=True,
                      type=click.Choice(["float32", "float64"]))(fn)
    return fn


@cli.command()
@click.option("--images", "image_dir", required=True, type=click.Path(path_type=Path))
@click.option("--folds-seed", default=0, show_default=True, type=int)
@click.option("--fold-index", required=True, type=int,
              help="Held-out fold; training uses the other four.")
@click.option("--out", "model_path", required=True, type=click.Path(path_type=Path))
@_train_options
def train(image_dir, folds_seed, fold_index, model_path, learning_rate, epochs,
          batch_size, routing_iters, conv1_filters, dtype):
    """Train on an image directory, holding out one subject fold."""
    settings = TrainSettings(learning_rate=learning_rate, epochs=epochs,
                             batch_size=batch_size, routing_iterations=routing_iters,
                             conv1_filters=conv1_filters, dtype=dtype)
    train_images, _ = load_split_image_dir(image_dir, folds_seed, fold_index)
    norm = fit_normalizer(train_images)
    normed = [apply_normalizer(img, norm) for img in train_images]
    labels = [img.label for img in train_images]
    params, config, history = train_fold(normed, labels, settings,
                                         (folds_seed, fold_index))
    capsnet.save_checkpoint(model_path, params, config)
    click.echo(f"trained on {len(normed)} images; final epoch loss "
               f"{history[-1]:.4f}; wrote {model_path}")


@cli.command("evaluate")
@click.option("--model", "model_path", required=True, type=click.Path(path_type=Path))
@click.option("--images", "image_dir", required=True, type=click.Path(path_type=Path))
@click.option("--fold-index", required=True, type=int)
@click.option("--folds-seed", default=0, show_default=True, type=int,
              help="Must match the seed used at training time; the "
                   "training-fold normalizer is recomputed from it.")
def evaluate_cmd(model_path, image_dir, fold_index, folds_seed):
    """Score a checkpoint on a held-out fold; prints metrics as JSON."""
    import json

    params, config = capsnet.load_checkpoint(model_path)
    train_images, test_images = load_split_image_dir(image_dir, folds_seed, fold_index)
    norm = fit_normalizer(train_images)
    pairs = [(apply_normalizer(img, norm), img.label) for img in test_images]
    metrics = evaluate(params, config, pairs)
    click.echo(json.dumps(metrics.to_dict(), indent=2, sort_keys=True))


@cli.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--bands", default=None,
              help="Comma-separated subset of theta,alpha,beta,gamma.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--report", "report_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--log-power", is_flag=True, default=False)
@click.option("--shuffle-labels", is_flag=True, default=False,
              help="Permute subject labels (null-hypothesis control run).")
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Also render CSV + PNG summaries next to the JSON report.")
@_train_options
def cv(manifest_path, bands, seed, report_path, log_power, shuffle_labels, figures,
       learning_rate, epochs, batch_size, routing_iters, conv1_filters, dtype):
    """Full subject-wise 5-fold cross-validation."""
    from .report import render_report_figures, write_report_csv

    pipeline = PipelineConfig(bands=_parse_bands(bands), log_power=log_power)
    settings = TrainSettings(learning_rate=learning_rate, epochs=epochs,
                             batch_size=batch_size, routing_iterations=routing_iters,
                             conv1_filters=conv1_filters, dtype=dtype)
    manifest = load_manifest(manifest_path)
    result = cross_validate(manifest, pipeline, settings, seed,
                            shuffle_labels=shuffle_labels)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    write_report_json(report_path, result)
    outputs = [report_path]
    if figures:
        stem = report_path.with_suffix("")
        csv_path = stem.with_name(stem.name + ".csv")
        write_report_csv(csv_path, result)
        outputs.append(csv_path)
        outputs.extend(render_report_figures(result, stem))
    for name in ("accuracy", "sensitivity", "specificity"):
        stats = result.summary[name]
        click.echo(f"{name}: {100 * stats['mean']:.2f} +- {100 * stats['std']:.2f} %")
    click.echo("wrote " + ", ".join(str(p) for p in outputs))


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_VALIDATION)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_VALIDATION)
    except click.exceptions.Abort:
        sys.exit(130)
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except (DataIOError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)
    return 0


if __name__ == "__main__":
    main()
