"""Synthetic EEG cohorts with a controllable group effect.

Each channel is a bank of random-phase sinusoids (five tones per analysis
band, frequencies uniform inside the band) plus white noise, so its
expected band powers are analytically predictable.  The first half of a
recording is eyes-open, the second eyes-closed, with the eyes-closed alpha
amplitude raised for both groups.  The PD group multiplies chosen bands'
amplitudes on a few central channels.

The injected effect (gamma and theta elevation over C3/Cz/C4) is a test
fixture chosen so that single-band experiments have a known answer at desk
scale; it is not a claim about Parkinson's electrophysiology.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DurationTooShort, ValidationError
from .signal import (
    BAND_ORDER,
    BANDS,
    EYE_CLOSED,
    EYE_OPEN,
    RawRecording,
    write_recording_csv,
)
from .topomap import default_layout

TONES_PER_BAND = 5
TONE_EDGE_MARGIN_HZ = 1.0
CLOSED_ALPHA_FACTOR = 1.5

# per-tone amplitudes in microvolts, loosely shaped like a resting spectrum
BASE_TONE_AMP_UV = {"theta": 3.0, "alpha": 4.0, "beta": 2.0, "gamma": 1.5}

DEFAULT_SAMPLE_RATE_HZ = 250.0
DEFAULT_EPOCHS_TO_TAKE = 30
DEFAULT_AFFECTED = ("C3", "Cz", "C4")


@dataclass
class EffectSpec:
    """How the PD group differs from HC."""

    band_factors: dict = field(
        default_factory=lambda: {b: 1.0 for b in BAND_ORDER}
    )
    affected_channels: tuple = DEFAULT_AFFECTED
    noise_std_uv: float = 1.0

    @classmethod
    def from_effect_size(cls, effect_size: float,
                         noise_std_uv: float = 1.0) -> "EffectSpec":
        """Gamma amplitude x(1+E), theta x(1+E/2), alpha and beta untouched."""
        if effect_size < 0:
            raise ValidationError(f"effect size must be >= 0, got {effect_size}")
        factors = {
            "theta": 1.0 + effect_size / 2.0,
            "alpha": 1.0,
            "beta": 1.0,
            "gamma": 1.0 + effect_size,
        }
        return cls(band_factors=factors, noise_std_uv=noise_std_uv)

    def validate(self, channel_labels) -> "EffectSpec":
        if any(f <= 0 for f in self.band_factors.values()):
            raise ValidationError("band factors must be positive")
        missing = set(self.affected_channels) - set(channel_labels)
        if missing:
            raise ValidationError(f"affected channels not in montage: {sorted(missing)}")
        return self


def generate_recording(subject_id: str, group: str, duration_s: float,
                       sample_rate_hz: float, effect: EffectSpec, seed) -> RawRecording:
    """One deterministic synthetic recording; first half open, second closed.

    ``seed`` may be an int or a sequence of ints (numpy seed material), so
    cohort generation can derive independent per-subject streams.
    """
    if duration_s < 10.0:
        raise DurationTooShort(
            f"{subject_id}: need at least 10 s for one epoch pair, got {duration_s}"
        )
    layout = default_layout()
    effect.validate(layout.labels)
    rng = np.random.default_rng(seed)
    fs = sample_rate_hz
    n = round(duration_s * fs)
    n_open = n // 2
    eye = np.empty(n, dtype=np.uint8)
    eye[:n_open] = EYE_OPEN
    eye[n_open:] = EYE_CLOSED

    samples = np.empty((len(layout.labels), n))
    affected = set(effect.affected_channels)
    for ch, label in enumerate(layout.labels):
        pd_boost = group == "PD" and label in affected
        offset = 0
        for state_len, closed in ((n_open, False), (n - n_open, True)):
            t = np.arange(state_len) / fs
            x = np.zeros(state_len)
            for band in BAND_ORDER:
                low, high = BANDS[band]
                freqs = rng.uniform(low + TONE_EDGE_MARGIN_HZ,
                                    high - TONE_EDGE_MARGIN_HZ, size=TONES_PER_BAND)
                phases = rng.uniform(0.0, 2.0 * np.pi, size=TONES_PER_BAND)
                amp = BASE_TONE_AMP_UV[band]
                if closed and band == "alpha":
                    amp *= CLOSED_ALPHA_FACTOR
                if pd_boost:
                    amp *= effect.band_factors[band]
                x += amp * np.sin(2.0 * np.pi * np.outer(freqs, t)
                                  + phases[:, None]).sum(axis=0)
            x += rng.normal(0.0, effect.noise_std_uv, size=state_len)
            samples[ch, offset:offset + state_len] = x
            offset += state_len

    return RawRecording(
        subject_id=subject_id,
        group=group,
        sample_rate_hz=fs,
        channel_labels=list(layout.labels),
        samples=samples,
        eye_state=eye,
    ).validate()


def cohort_duration_s(epochs_to_take: int) -> float:
    """Recording length holding the requested pairs plus filter-edge slack."""
    return 10.0 * epochs_to_take + 20.0


def generate_cohort(n_hc: int, n_pd: int, effect: EffectSpec, seed: int, out_dir,
                    epochs_to_take: int = DEFAULT_EPOCHS_TO_TAKE,
                    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ):
    """Write recordings plus a manifest under ``out_dir``; returns the manifest.

    Subject streams derive from (seed, subject index), so identical calls
    produce byte-identical trees and subjects are independent draws.
    """
    from .experiment import CohortManifest, SubjectEntry, save_manifest

    if n_hc < 1 or n_pd < 1:
        raise ValidationError(f"need at least one subject per group, got hc={n_hc} pd={n_pd}")
    if epochs_to_take < 1:
        raise ValidationError("epochs_to_take must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    duration = cohort_duration_s(epochs_to_take)

    subjects = []
    specs = [(f"hc{i + 1:02d}", "HC") for i in range(n_hc)]
    specs += [(f"pd{i + 1:02d}", "PD") for i in range(n_pd)]
    for index, (subject_id, group) in enumerate(specs):
        rec = generate_recording(subject_id, group, duration, sample_rate_hz,
                                 effect, seed=[seed, index])
        subject_dir = out_dir / subject_id
        subject_dir.mkdir(parents=True, exist_ok=True)
        write_recording_csv(subject_dir / "recording.csv", rec)
        subjects.append(SubjectEntry(
            subject_id=subject_id,
            group=group,
            path=subject_dir,
            sample_rate_hz=sample_rate_hz,
            epochs_to_take=epochs_to_take,
        ))

    manifest = CohortManifest(schema_version=1, subjects=subjects)
    save_manifest(out_dir / "manifest.json", manifest)
    return manifest
