"""Turn cleaned multi-channel EEG recordings into per-epoch band powers.

Stages: band-pass FIR filtering (zero phase), segmentation into paired
5 s eyes-open / 5 s eyes-closed epochs, Welch power spectral density per
channel, and integration over the four analysis bands.  Inputs are assumed
artifact-free; no re-referencing, ICA, or notch filtering happens here.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy import signal as sps

from .errors import (
    BandOutsidePSD,
    EvenTaps,
    InsufficientData,
    InvalidBandEdges,
    ParseError,
    RecordingTooShort,
    SegmentTooShort,
    ValidationError,
)

# analysis bands in Hz; intervals are half-open [low, high)
BANDS = {
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 45.0),
}
BAND_ORDER = tuple(BANDS)
STATE_ORDER = ("open", "closed")

EYE_OPEN = 0
EYE_CLOSED = 1

EPOCH_SECONDS = 5.0
N_CHANNELS = 30

DEFAULT_LOW_CUT_HZ = 0.5
DEFAULT_HIGH_CUT_HZ = 45.0


@dataclass
class RawRecording:
    """One subject's cleaned EEG: (30, n_samples) in microvolts.

    ``eye_state`` codes each sample as EYE_OPEN or EYE_CLOSED.
    """

    subject_id: str
    group: str                  # "PD" or "HC"
    sample_rate_hz: float
    channel_labels: list
    samples: np.ndarray         # (n_channels, n_samples) float64
    eye_state: np.ndarray       # (n_samples,) uint8

    def validate(self) -> "RawRecording":
        if self.group not in ("PD", "HC"):
            raise ValidationError(f"unknown group {self.group!r}")
        if len(self.channel_labels) != N_CHANNELS:
            raise ValidationError(
                f"{self.subject_id}: expected {N_CHANNELS} channels, "
                f"got {len(self.channel_labels)}"
            )
        if self.samples.shape[0] != N_CHANNELS:
            raise ValidationError(f"{self.subject_id}: sample matrix has wrong channel count")
        if self.eye_state.shape != (self.samples.shape[1],):
            raise ValidationError(f"{self.subject_id}: eye-state track length mismatch")
        if self.sample_rate_hz <= 2 * DEFAULT_HIGH_CUT_HZ:
            raise ValidationError(
                f"{self.subject_id}: sample rate {self.sample_rate_hz} Hz too low "
                f"for the {DEFAULT_HIGH_CUT_HZ} Hz band edge"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError(f"{self.subject_id}: non-finite samples")
        return self

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class EpochPair:
    """Paired 5 s segments, both (30, round(5*fs)), from one recording."""

    open_segment: np.ndarray
    closed_segment: np.ndarray
    subject_id: str
    group: str
    index: int


@dataclass
class FirFilter:
    """Symmetric (linear-phase) band-pass coefficients."""

    coefficients: np.ndarray
    low_cut_hz: float
    high_cut_hz: float

    @property
    def n_taps(self) -> int:
        return self.coefficients.size


def default_n_taps(sample_rate_hz: float) -> int:
    """Filter length covering 2 s of signal, rounded up to odd."""
    n = int(round(2.0 * sample_rate_hz)) + 1
    return n if n % 2 == 1 else n + 1


def _windowed_sinc_lowpass(cutoff_hz: float, sample_rate_hz: float, n_taps: int) -> np.ndarray:
    """Hamming-windowed sinc low-pass, normalized to exact unit DC gain.

    Built from one mirrored half so the coefficients are bit-exactly
    symmetric.
    """
    half = (n_taps - 1) // 2
    offsets = np.arange(half + 1, dtype=float)
    fc = cutoff_hz / sample_rate_hz
    right = 2.0 * fc * np.sinc(2.0 * fc * offsets)
    right *= np.hamming(n_taps)[half:]
    h = np.concatenate([right[:0:-1], right])
    return h / h.sum()


def design_bandpass_fir(low_cut_hz: float, high_cut_hz: float,
                        sample_rate_hz: float, n_taps: int) -> FirFilter:
    """Windowed-sinc band-pass: difference of two unit-DC-gain low-passes.

    The subtraction cancels the DC response to machine precision, so the
    stopband at 0 Hz holds regardless of how wide the transition band is.
    """
    if not 0 < low_cut_hz < high_cut_hz < sample_rate_hz / 2:
        raise InvalidBandEdges(
            f"need 0 < low < high < fs/2, got ({low_cut_hz}, {high_cut_hz}) at "
            f"{sample_rate_hz} Hz"
        )
    if n_taps % 2 == 0:
        raise EvenTaps(f"n_taps must be odd, got {n_taps}")
    if n_taps < 3:
        raise ValidationError(f"n_taps must be >= 3, got {n_taps}")
    h = (_windowed_sinc_lowpass(high_cut_hz, sample_rate_hz, n_taps)
         - _windowed_sinc_lowpass(low_cut_hz, sample_rate_hz, n_taps))
    return FirFilter(coefficients=h, low_cut_hz=low_cut_hz, high_cut_hz=high_cut_hz)


def apply_fir(recording: RawRecording, fir: FirFilter) -> RawRecording:
    """Zero-phase filtering: run the FIR forward, then backward, per channel.

    Magnitude response is squared relative to a single pass.  Start-up
    transients of roughly one filter length remain at both ends of the
    recording; callers working near the edges should discard them.
    """
    if recording.n_samples <= fir.n_taps:
        raise RecordingTooShort(
            f"{recording.subject_id}: {recording.n_samples} samples but the "
            f"filter has {fir.n_taps} taps"
        )
    h = fir.coefficients[None, :]
    n = recording.n_samples
    fwd = sps.fftconvolve(recording.samples, h, mode="full", axes=1)[:, :n]
    rev = sps.fftconvolve(fwd[:, ::-1], h, mode="full", axes=1)[:, :n][:, ::-1]
    return dataclasses.replace(recording, samples=rev)


def _state_runs(eye_state: np.ndarray):
    """Maximal contiguous runs as (state, start, stop) in temporal order."""
    edges = np.flatnonzero(np.diff(eye_state)) + 1
    bounds = np.concatenate([[0], edges, [eye_state.size]])
    return [(int(eye_state[a]), int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def segment_epochs(recording: RawRecording) -> list:
    """Carve paired 5 s epochs out of the eyes-open and eyes-closed spans.

    Within each contiguous same-state run, consecutive non-overlapping 5 s
    windows are taken in temporal order; the i-th open window is paired
    with the i-th closed window.  Returns min(#open, #closed) pairs.
    """
    win = round(EPOCH_SECONDS * recording.sample_rate_hz)
    windows = {EYE_OPEN: [], EYE_CLOSED: []}
    for state, start, stop in _state_runs(recording.eye_state):
        for k in range((stop - start) // win):
            a = start + k * win
            windows[state].append(recording.samples[:, a:a + win])
    if not windows[EYE_OPEN] or not windows[EYE_CLOSED]:
        raise InsufficientData(
            f"{recording.subject_id}: need at least one full {EPOCH_SECONDS:.0f} s "
            f"window per eye state "
            f"(open {len(windows[EYE_OPEN])}, closed {len(windows[EYE_CLOSED])})"
        )
    return [
        EpochPair(open_segment=o.copy(), closed_segment=c.copy(),
                  subject_id=recording.subject_id, group=recording.group, index=i)
        for i, (o, c) in enumerate(zip(windows[EYE_OPEN], windows[EYE_CLOSED]))
    ]


class PSD(NamedTuple):
    frequencies: np.ndarray     # Hz, ascending
    density: np.ndarray         # µV²/Hz, one-sided


def welch_psd(segment: np.ndarray, sample_rate_hz: float,
              window_s: float = 1.0, overlap_fraction: float = 0.5) -> PSD:
    """Welch PSD of one channel: Hann windows, per-window mean removal.

    Density scaling is one-sided and Parseval-consistent: the integral over
    [0, fs/2] approximates the signal variance (up to windowing bias).
    """
    x = np.asarray(segment, dtype=float)
    if x.ndim == 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 1:
        raise ValidationError(f"welch_psd expects a single channel, got shape {x.shape}")
    if not 0 <= overlap_fraction < 1:
        raise ValidationError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    nperseg = int(round(window_s * sample_rate_hz))
    if x.size < nperseg:
        raise SegmentTooShort(
            f"segment of {x.size} samples is shorter than one {window_s} s window"
        )
    freqs, density = sps.welch(
        x,
        fs=sample_rate_hz,
        window="hann",
        nperseg=nperseg,
        noverlap=int(round(nperseg * overlap_fraction)),
        detrend="constant",
        scaling="density",
    )
    return PSD(frequencies=freqs, density=density)


def band_power_range(psd: PSD, low_hz: float, high_hz: float) -> float:
    """Integrated density over [low_hz, high_hz).

    Quadrature rule: composite-trapezoid weights of the full frequency axis,
    with each bin attributed to exactly one interval by the half-open
    convention.  This makes adjacent bands sum exactly to their union (no
    bin is shared or dropped), at the price of a half-bin blur at the
    interval edges.
    """
    f, d = psd.frequencies, psd.density
    if f[0] > low_hz or f[-1] < high_hz:
        raise BandOutsidePSD(
            f"band [{low_hz}, {high_hz}) Hz outside PSD range [{f[0]}, {f[-1]}] Hz"
        )
    weights = np.empty_like(f)
    weights[1:-1] = (f[2:] - f[:-2]) / 2.0
    weights[0] = (f[1] - f[0]) / 2.0
    weights[-1] = (f[-1] - f[-2]) / 2.0
    mask = (f >= low_hz) & (f < high_hz)
    return float(np.sum(d[mask] * weights[mask]))


def band_power(psd: PSD, band: str) -> float:
    """Power in one named band (µV²); 8 Hz belongs to alpha, not theta."""
    if band not in BANDS:
        raise ValidationError(f"unknown band {band!r}, expected one of {BAND_ORDER}")
    low, high = BANDS[band]
    return band_power_range(psd, low, high)


def extract_features(pair: EpochPair, sample_rate_hz: float,
                     window_s: float = 1.0, overlap_fraction: float = 0.5) -> np.ndarray:
    """Band powers of one epoch pair as a (30, 4, 2) array.

    Axis order: channel, band (theta, alpha, beta, gamma), eye state
    (open, closed).  Flattened C-order this is the channel-major layout.
    """
    segments = (pair.open_segment, pair.closed_segment)
    out = np.zeros((N_CHANNELS, len(BAND_ORDER), len(STATE_ORDER)))
    for s_idx, segment in enumerate(segments):
        for ch in range(N_CHANNELS):
            psd = welch_psd(segment[ch], sample_rate_hz, window_s, overlap_fraction)
            for b_idx, band in enumerate(BAND_ORDER):
                out[ch, b_idx, s_idx] = band_power(psd, band)
    return out


# ---------------------------------------------------------------------------
# recording CSV format: header = 30 channel labels + "eye_state", one row
# per sample, eye_state in {open, closed}

EYE_STATE_NAMES = {EYE_OPEN: "open", EYE_CLOSED: "closed"}
EYE_STATE_CODES = {v: k for k, v in EYE_STATE_NAMES.items()}


def read_recording_csv(path, subject_id: str, group: str,
                       sample_rate_hz: float) -> RawRecording:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if "eye_state" not in frame.columns:
        raise ParseError(f"{path}: missing eye_state column")
    labels = [c for c in frame.columns if c != "eye_state"]
    states = frame["eye_state"].astype(str).str.strip().str.lower()
    unknown = set(states.unique()) - set(EYE_STATE_CODES)
    if unknown:
        raise ParseError(f"{path}: unknown eye_state values {sorted(unknown)}")
    samples = frame[labels].to_numpy(dtype=float).T
    eye = states.map(EYE_STATE_CODES).to_numpy(dtype=np.uint8)
    return RawRecording(
        subject_id=subject_id,
        group=group,
        sample_rate_hz=sample_rate_hz,
        channel_labels=labels,
        samples=samples,
        eye_state=eye,
    ).validate()


def write_recording_csv(path, recording: RawRecording) -> None:
    frame = pd.DataFrame(recording.samples.T, columns=recording.channel_labels)
    frame["eye_state"] = [EYE_STATE_NAMES[s] for s in recording.eye_state]
    frame.to_csv(path, index=False, float_format="%.4f")
