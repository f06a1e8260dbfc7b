"""Band-power vectors to 8x32x32 feature images.

Electrode positions live on the unit scalp sphere (nose +y, vertex +z) and
are flattened with an azimuthal equidistant projection centered on the
vertex, so angular distance from Cz becomes planar radius.  Scattered
band-power values are interpolated onto a square grid by inverse-distance
weighting, one plane per (band, eye state) pair, stacked eyes-open bands
first.

The shipped 30-channel montage uses idealized 10/20 + 10/10 positions.
Channel listings of this montage sometimes carry a stray ``T`` token
between P4 and T6; that is not a standard site label (T3/T4 already name
the mid-temporal electrodes) and it is omitted here.
"""

from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    EmptyTrainingSet,
    ParseError,
    ShapeMismatch,
    SouthPoleSingularity,
    ValidationError,
)
from .signal import BAND_ORDER, STATE_ORDER

GRID_RESOLUTION = 32
GRID_MARGIN = 0.05
IDW_POWER = 2.0
EXACT_HIT_DISTANCE = 1e-9
STD_FLOOR = 1e-12

# image channel layout: all eyes-open bands, then all eyes-closed bands
FULL_CHANNEL_ORDER = tuple(
    (band, state) for state in STATE_ORDER for band in BAND_ORDER
)


@dataclass
class ElectrodeLayout:
    """Ordered montage: labels match the recording channel order."""

    labels: list
    positions: np.ndarray       # (n, 3) unit vectors

    def validate(self) -> "ElectrodeLayout":
        if len(self.labels) != len(set(self.labels)):
            raise ValidationError("duplicate electrode labels")
        if self.positions.shape != (len(self.labels), 3):
            raise ValidationError("positions do not match labels")
        norms = np.linalg.norm(self.positions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValidationError("electrode positions must sit on the unit sphere")
        return self

    def __len__(self) -> int:
        return len(self.labels)


def load_layout(path) -> ElectrodeLayout:
    """Parse a layout file: one ``LABEL x y z`` line per electrode."""
    labels, rows = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"{path}:{lineno}: expected 'LABEL x y z'")
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        labels.append(parts[0])
    if not labels:
        raise ParseError(f"{path}: no electrodes found")
    return ElectrodeLayout(labels=labels, positions=np.array(rows)).validate()


_DEFAULT_LAYOUT = None


def default_layout() -> ElectrodeLayout:
    """The packaged 30-channel montage, cached after first load."""
    global _DEFAULT_LAYOUT
    if _DEFAULT_LAYOUT is None:
        ref = resources.files("eegcaps") / "data" / "electrodes_30.txt"
        with resources.as_file(ref) as path:
            _DEFAULT_LAYOUT = load_layout(path)
    return _DEFAULT_LAYOUT


def project_aep(layout: ElectrodeLayout) -> np.ndarray:
    """Azimuthal equidistant projection centered on the vertex (+z).

    Each electrode maps to planar radius r = arccos(z) (its angular
    distance from the vertex) at azimuth atan2(y, x); returned as (n, 2)
    Cartesian points.  The vertex lands on the origin; the antipode is the
    singular point of the projection.
    """
    pos = layout.positions
    z = np.clip(pos[:, 2], -1.0, 1.0)
    if np.any(z <= -1.0 + 1e-12):
        raise SouthPoleSingularity("electrode at the projection antipode (z = -1)")
    radius = np.arccos(z)
    azimuth = np.arctan2(pos[:, 1], pos[:, 0])
    return np.column_stack([radius * np.cos(azimuth), radius * np.sin(azimuth)])


@dataclass
class GridSpec:
    """Cell-center coordinates of the square interpolation grid."""

    x: np.ndarray
    y: np.ndarray


def build_grid(points: np.ndarray, resolution: int = GRID_RESOLUTION,
               margin: float = GRID_MARGIN) -> GridSpec:
    """Square grid spanning the electrode bounding radius plus a margin.

    Coordinates are the cell centers, evenly spaced and ascending, with the
    outermost centers exactly on the span boundary.
    """
    extent = float(np.max(np.hypot(points[:, 0], points[:, 1]))) * (1.0 + margin)
    coords = np.linspace(-extent, extent, resolution)
    return GridSpec(x=coords, y=coords.copy())


def interpolate_scatter(points: np.ndarray, values: np.ndarray,
                        grid: GridSpec) -> np.ndarray:
    """Inverse-distance-weighted (power 2) interpolation onto the grid.

    Grid cells closer than EXACT_HIT_DISTANCE to an electrode take that
    electrode's value exactly (first such electrode wins).  Output rows run
    along ascending y, columns along ascending x; every cell stays inside
    [min(values), max(values)].
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValidationError("interpolation values must be finite")
    gx, gy = np.meshgrid(grid.x, grid.y)
    dx = gx[..., None] - points[:, 0]
    dy = gy[..., None] - points[:, 1]
    d2 = dx * dx + dy * dy
    hits = d2 < EXACT_HIT_DISTANCE**2
    weights = 1.0 / np.where(hits, 1.0, d2)     # hit cells overwritten below
    out = (weights @ values) / weights.sum(axis=-1)
    rows, cols = np.nonzero(hits.any(axis=-1))
    if rows.size:
        out[rows, cols] = values[np.argmax(hits[rows, cols], axis=-1)]
    return out


@dataclass
class FeatureImage:
    """Stacked interpolated band-power planes plus sample identity."""

    data: np.ndarray            # (channels, height, width)
    subject_id: str
    group: str                  # "PD" or "HC"
    epoch_index: int
    channel_order: tuple | None = FULL_CHANNEL_ORDER

    def validate(self) -> "FeatureImage":
        if self.channel_order is not None and len(self.channel_order) != self.data.shape[0]:
            raise ShapeMismatch("channel_order does not match image depth")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError(f"{self.subject_id}: non-finite image values")
        return self

    @property
    def label(self) -> int:
        return 1 if self.group == "PD" else 0


def assemble_image(features: np.ndarray, points: np.ndarray, grid: GridSpec,
                   subject_id: str, group: str, epoch_index: int) -> FeatureImage:
    """Interpolate a (30, 4, 2) band-power array into one feature image.

    Image channel s*4 + b holds band b of eye state s (see
    FULL_CHANNEL_ORDER), so eyes-open theta/alpha/beta/gamma come first.
    """
    if features.shape != (points.shape[0], len(BAND_ORDER), len(STATE_ORDER)):
        raise ShapeMismatch(f"unexpected feature shape {features.shape}")
    res = grid.x.size
    planes = np.empty((len(FULL_CHANNEL_ORDER), res, res))
    for c, (band, state) in enumerate(FULL_CHANNEL_ORDER):
        b = BAND_ORDER.index(band)
        s = STATE_ORDER.index(state)
        planes[c] = interpolate_scatter(points, features[:, b, s], grid)
    return FeatureImage(
        data=planes, subject_id=subject_id, group=group, epoch_index=epoch_index
    ).validate()


@dataclass
class Normalizer:
    """Per-image-channel z-scoring statistics, fitted on training data only."""

    mean: np.ndarray            # (channels,)
    std: np.ndarray             # (channels,), floored to avoid division blowups


def fit_normalizer(train_images: list) -> Normalizer:
    """Mean and population std per image channel over all training pixels."""
    if not train_images:
        raise EmptyTrainingSet("cannot fit a normalizer on zero images")
    depth = train_images[0].data.shape[0]
    for img in train_images:
        if img.data.shape[0] != depth:
            raise ShapeMismatch("training images disagree on channel count")
    stacked = np.stack([np.asarray(img.data, dtype=float) for img in train_images])
    mean = stacked.mean(axis=(0, 2, 3))
    std = np.maximum(stacked.std(axis=(0, 2, 3)), STD_FLOOR)
    return Normalizer(mean=mean, std=std)


def apply_normalizer(image: FeatureImage, norm: Normalizer) -> FeatureImage:
    if image.data.shape[0] != norm.mean.size:
        raise ShapeMismatch("normalizer does not match image depth")
    data = (image.data - norm.mean[:, None, None]) / norm.std[:, None, None]
    return replace(image, data=data)


def invert_normalizer(image: FeatureImage, norm: Normalizer) -> FeatureImage:
    data = image.data * norm.std[:, None, None] + norm.mean[:, None, None]
    return replace(image, data=data)
