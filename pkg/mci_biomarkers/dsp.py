"""Band-power feature extraction from MEG sensor recordings.

Filters are Butterworth designs factored into second-order sections. The
spectral estimate is a Hann-windowed periodogram per 1 s epoch, averaged over
epochs; band edges are half-open, ``[low, high)``.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from mci_biomarkers.dataset import FeatureColumn, FeatureMatrix
from mci_biomarkers.errors import ValidationError
from mci_biomarkers.logger import get_logger

_log = get_logger('dsp')

FILTER_KINDS = ('lowpass', 'highpass', 'bandstop')

ACQUISITION_FS = 1000.0
ANALYSIS_FS = 250.0
LOWPASS_HZ = 95.0
LOWPASS_ORDER = 9
HIGHPASS_HZ = 1.0
HIGHPASS_ORDER = 4
NOTCH_BAND = (49.0, 51.0)
NOTCH_ORDER = 4
EPOCH_SECONDS = 1.0
ANALYSIS_RANGE = (1.0, 95.0)


@dataclass(frozen=True)
class BandDefinition:
    name: str
    low: float
    high: float

    def __post_init__(self):
        if not 0 < self.low < self.high:
            raise ValidationError(
                f"band {self.name!r}: need 0 < low < high, got [{self.low}, {self.high})"
            )


DEFAULT_BANDS = (
    BandDefinition('delta', 2.0, 4.0),
    BandDefinition('theta', 4.0, 8.0),
    BandDefinition('alpha', 8.0, 12.0),
    BandDefinition('beta', 12.0, 35.0),
    BandDefinition('low_gamma', 30.0, 48.0),
    BandDefinition('high_gamma', 52.0, 86.0),
)


@dataclass(frozen=True, eq=False)
class FilterCascade:
    """Butterworth filter as a cascade of biquads (rows of ``b0 b1 b2 a0 a1 a2``).

    ``order`` is the prototype order; a bandstop of order n has 2n poles.
    """

    sos: np.ndarray
    kind: str
    order: int
    cutoffs: tuple[float, ...]
    fs: float

    @property
    def n_poles(self) -> int:
        return 2 * self.order if self.kind == 'bandstop' else self.order

    @property
    def poles(self) -> np.ndarray:
        _, p, _ = signal.sos2zpk(self.sos)
        return p

    @property
    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1.0))

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response at the given frequencies."""
        _, h = signal.sosfreqz(self.sos, worN=np.atleast_1d(freqs_hz), fs=self.fs)
        return h


@dataclass(frozen=True, eq=False)
class EpochSet:
    """Epoched multichannel data, shape (channels, epochs, samples)."""

    data: np.ndarray
    fs: float
    channel_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3:
            raise ValidationError(f"epoch data must be 3-D, got shape {data.shape}")
        names = tuple(self.channel_names) or tuple(f"ch{i:03d}" for i in range(data.shape[0]))
        if len(names) != data.shape[0]:
            raise ValidationError(f"{len(names)} channel names for {data.shape[0]} channels")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'channel_names', names)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_epochs(self) -> int:
        return self.data.shape[1]

    @property
    def epoch_len(self) -> int:
        return self.data.shape[2]


def design_butterworth(kind: str, order: int, cutoffs, fs: float) -> FilterCascade:
    """Digital Butterworth via analog prototype and prewarped bilinear transform."""
    if kind not in FILTER_KINDS:
        raise ValidationError(f"unknown filter kind {kind!r}")
    if int(order) != order or order < 1:
        raise ValidationError(f"filter order must be a positive integer, got {order}")
    cutoffs = tuple(float(c) for c in np.atleast_1d(cutoffs))
    nyquist = fs / 2.0
    expected = 2 if kind == 'bandstop' else 1
    if len(cutoffs) != expected:
        raise ValidationError(f"{kind} needs {expected} cutoff(s), got {len(cutoffs)}")
    for c in cutoffs:
        if not 0 < c < nyquist:
            raise ValidationError(f"cutoff {c} Hz outside (0, {nyquist}) for fs={fs}")
    if kind == 'bandstop' and not cutoffs[0] < cutoffs[1]:
        raise ValidationError(f"bandstop edges must satisfy low < high, got {cutoffs}")
    wn = cutoffs[0] if expected == 1 else list(cutoffs)
    sos = signal.butter(int(order), wn, btype=kind, output='sos', fs=fs)
    sos.setflags(write=False)
    return FilterCascade(sos, kind, int(order), cutoffs, float(fs))


def apply_filter_cascade(filt: FilterCascade, x, zero_phase: bool = False) -> np.ndarray:
    """Run ``x`` through every biquad along the last axis, zero initial conditions."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1] if x.ndim else 0
    if n == 0:
        raise ValidationError("cannot filter an empty signal")
    if n <= 3 * filt.n_poles:
        raise ValidationError(
            f"signal of {n} samples is too short for a {filt.n_poles}-pole filter"
        )
    if zero_phase:
        return signal.sosfiltfilt(np.array(filt.sos), x, axis=-1)
    return signal.sosfilt(np.array(filt.sos), x, axis=-1)


def resample(x, fs_in: float, fs_out: float) -> np.ndarray:
    """Decimate by an integer factor, keeping samples 0, q, 2q, ..."""
    ratio = fs_in / fs_out
    q = int(round(ratio))
    if q < 1 or abs(ratio - q) > 1e-9:
        raise ValidationError(f"fs_in/fs_out = {fs_in}/{fs_out} is not an integer ratio")
    return np.asarray(x, dtype=float)[..., ::q]


def epoch_signal(x, fs: float, epoch_seconds: float = EPOCH_SECONDS, channel_names=()) -> EpochSet:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[np.newaxis]
    samples = epoch_seconds * fs
    epoch_len = int(round(samples))
    if epoch_len < 1 or abs(samples - epoch_len) > 1e-9:
        raise ValidationError(f"epoch of {epoch_seconds} s at {fs} Hz is not a whole sample count")
    n_epochs = x.shape[-1] // epoch_len
    if n_epochs == 0:
        raise ValidationError(
            f"signal of {x.shape[-1]} samples is shorter than one {epoch_len}-sample epoch"
        )
    data = x[:, : n_epochs * epoch_len].reshape(x.shape[0], n_epochs, epoch_len)
    return EpochSet(data, fs, tuple(channel_names))


def _in_ranges(freqs: np.ndarray, ranges) -> np.ndarray:
    mask = np.zeros(freqs.shape, dtype=bool)
    for low, high in ranges:
        mask |= (freqs >= low) & (freqs < high)
    return mask


def band_relative_power(
    epochs: EpochSet,
    bands=DEFAULT_BANDS,
    analysis_range=ANALYSIS_RANGE,
    exclude=(),
) -> np.ndarray:
    """Relative power per channel and band, shape (channels, bands).

    ``exclude`` lists ``(low, high)`` stop bands removed from every band and
    from the denominator.
    """
    lo, hi = analysis_range
    nyquist = epochs.fs / 2.0
    if not 0 < lo < hi <= nyquist:
        raise ValidationError(f"analysis range {analysis_range} not inside (0, {nyquist}]")
    for band in bands:
        if band.low < lo or band.high > hi:
            raise ValidationError(
                f"band {band.name!r} [{band.low}, {band.high}) outside analysis range {analysis_range}"
            )

    freqs, psd = signal.periodogram(epochs.data, fs=epochs.fs, window='hann', axis=-1)
    psd = psd.mean(axis=1)
    df = freqs[1] - freqs[0]
    kept = ~_in_ranges(freqs, exclude)
    total_mask = _in_ranges(freqs, [(lo, hi)]) & kept
    total = psd[:, total_mask].sum(axis=-1) * df
    # Per-epoch mean removal leaves rounding dust on constant input; catch it exactly.
    flat = (np.ptp(epochs.data, axis=-1) == 0).all(axis=-1)
    total = np.where(flat, 0.0, total)
    if np.any(total <= 0):
        bad = int(np.flatnonzero(total <= 0)[0])
        raise ValidationError(
            f"degenerate spectrum: zero power in {analysis_range} Hz on channel "
            f"{epochs.channel_names[bad]!r}"
        )
    out = np.empty((epochs.n_channels, len(bands)))
    for b, band in enumerate(bands):
        mask = _in_ranges(freqs, [(band.low, band.high)]) & kept
        out[:, b] = psd[:, mask].sum(axis=-1) * df / total
    return out


def preprocess_recording(
    raw,
    fs: float = ACQUISITION_FS,
    channel_names=(),
    zero_phase: bool = False,
) -> EpochSet:
    """Full sensor preprocessing chain up to 1 s epochs.

    95 Hz lowpass at the acquisition rate, decimation to 250 Hz, 1 Hz highpass,
    49-51 Hz bandstop. Artifact rejection is left to the caller.
    """
    x = np.asarray(raw, dtype=float)
    lowpass = design_butterworth('lowpass', LOWPASS_ORDER, LOWPASS_HZ, fs)
    x = apply_filter_cascade(lowpass, x, zero_phase)
    x = resample(x, fs, ANALYSIS_FS)
    highpass = design_butterworth('highpass', HIGHPASS_ORDER, HIGHPASS_HZ, ANALYSIS_FS)
    notch = design_butterworth('bandstop', NOTCH_ORDER, NOTCH_BAND, ANALYSIS_FS)
    x = apply_filter_cascade(highpass, x, zero_phase)
    x = apply_filter_cascade(notch, x, zero_phase)
    return epoch_signal(x, ANALYSIS_FS, EPOCH_SECONDS, channel_names)


# ---------------------------------------------------------------------------
# Epoch files
# ---------------------------------------------------------------------------

_SIDECAR_KEYS = {'channels', 'fs_hz', 'epoch_len', 'n_epochs', 'channel_names'}


def load_epoch_file(path) -> EpochSet:
    """Read little-endian float32, channel-major epochs with a JSON sidecar."""
    path = Path(path)
    sidecar = path.with_suffix('.json')
    with open(sidecar, encoding='utf-8') as f:
        meta = json.load(f)
    missing = _SIDECAR_KEYS - set(meta)
    if missing:
        raise ValidationError(f"{sidecar.name}: missing key(s) {', '.join(sorted(missing))}")
    shape = (int(meta['channels']), int(meta['n_epochs']), int(meta['epoch_len']))
    raw = np.fromfile(path, dtype='<f4')
    if raw.size != np.prod(shape):
        raise ValidationError(
            f"{path.name}: {raw.size} samples, sidecar declares {shape[0]}x{shape[1]}x{shape[2]}"
        )
    return EpochSet(raw.reshape(shape).astype(float), float(meta['fs_hz']), tuple(meta['channel_names']))


def save_epoch_file(epochs: EpochSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs.data.astype('<f4').tofile(path)
    meta = {
        'channels': epochs.n_channels,
        'fs_hz': epochs.fs,
        'epoch_len': epochs.epoch_len,
        'n_epochs': epochs.n_epochs,
        'channel_names': list(epochs.channel_names),
    }
    with open(path.with_suffix('.json'), 'w', encoding='utf-8') as f:
        json.dump(meta, f, indent=2)
    return path


def extract_features(
    recordings: dict[str, EpochSet],
    modality: str = 'MAG',
    bands=DEFAULT_BANDS,
    analysis_range=ANALYSIS_RANGE,
    exclude=(NOTCH_BAND,),
) -> FeatureMatrix:
    """One row per participant, one column per (channel, band)."""
    if not recordings:
        raise ValidationError("no recordings to extract")
    ids = sorted(recordings)
    channels = recordings[ids[0]].channel_names
    columns = tuple(
        FeatureColumn(f"{ch}_{band.name}", modality, band.name, ch)
        for ch in channels
        for band in bands
    )
    rows = []
    for pid in ids:
        epochs = recordings[pid]
        if epochs.channel_names != channels:
            raise ValidationError(f"participant {pid!r}: channel list differs from {ids[0]!r}")
        rows.append(band_relative_power(epochs, bands, analysis_range, exclude).ravel())
        _log.debug('extracted %s: %d channels x %d epochs', pid, epochs.n_channels, epochs.n_epochs)
    return FeatureMatrix(tuple(ids), columns, np.vstack(rows))
