"""Raw-signal preprocessing and trial-level feature/label extraction.

Pipeline: band-pass (1-50 Hz FIR, zero phase) -> decimate to 250 Hz ->
re-reference to averaged earlobes -> per-channel Welch band power (theta 4-7 Hz,
alpha 8-12 Hz) in dB every 3 s over the trailing 30 s window. Labels come from
reaction times via the clamped logistic drowsiness index, smoothed with a 90 s
trailing moving average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import (
    ConfigurationError,
    InsufficientDataError,
    InvalidBandError,
    MalformedLogError,
)

THETA_BAND = (4.0, 7.0)
ALPHA_BAND = (8.0, 12.0)
DB_POWER_FLOOR = 1e-12  # clamp before log10; floor value is -120 dB


@dataclass
class RawRecording:
    samples: np.ndarray  # channels x time, microvolts
    sample_rate_hz: float
    channel_names: list[str]
    earlobe_indices: tuple[int, int] | None = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate_hz <= 0:
            raise ConfigurationError("sample_rate_hz must be positive")
        if len(self.channel_names) != self.samples.shape[0]:
            raise ConfigurationError("channel_names must match the number of channels")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass
class EventLog:
    deviation_onsets: np.ndarray  # seconds
    response_onsets: np.ndarray  # seconds, parallel

    def __post_init__(self):
        self.deviation_onsets = np.asarray(self.deviation_onsets, dtype=np.float64)
        self.response_onsets = np.asarray(self.response_onsets, dtype=np.float64)
        if self.deviation_onsets.shape != self.response_onsets.shape:
            raise MalformedLogError("deviation/response onset lists differ in length")
        if np.any(self.response_onsets < self.deviation_onsets):
            raise MalformedLogError("response before its deviation onset")
        if np.any(np.diff(self.deviation_onsets) <= 0):
            raise MalformedLogError("deviation onsets not strictly increasing")


@dataclass
class TrialTable:
    subject_id: str
    features: np.ndarray  # N x 60, dB PSD
    labels: np.ndarray  # N, drowsiness index in [0, 1]
    trial_times: np.ndarray = field(default=None)  # seconds

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.trial_times is None:
            self.trial_times = np.arange(len(self.labels), dtype=np.float64)
        self.trial_times = np.asarray(self.trial_times, dtype=np.float64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("features and labels row counts differ")
        if not np.all(np.isfinite(self.features)):
            raise ConfigurationError("non-finite feature values")
        if np.any((self.labels < 0) | (self.labels > 1)):
            raise ConfigurationError("labels must lie in [0, 1]")

    @property
    def n_trials(self) -> int:
        return self.features.shape[0]


def _bandpass_taps(low_hz, high_hz, fs):
    # Hamming-windowed sinc (~53 dB stopband); taps sized so the transition
    # width is about the lower band edge, which dominates at 1 Hz.
    transition = min(low_hz, fs / 2 - high_hz)
    numtaps = int(np.ceil(3.3 * fs / transition))
    numtaps += 1 - numtaps % 2  # odd for a symmetric type-I filter
    return sps.firwin(numtaps, [low_hz, high_hz], pass_zero=False, fs=fs)


def bandpass(recording: RawRecording, low_hz: float, high_hz: float) -> RawRecording:
    """Zero-phase FIR band-pass; same length output, edges reflection-padded."""
    fs = recording.sample_rate_hz
    if not 0 < low_hz < high_hz < fs / 2:
        raise InvalidBandError(f"band [{low_hz}, {high_hz}] invalid for fs={fs}")
    taps = _bandpass_taps(low_hz, high_hz, fs)
    padlen = min(3 * len(taps), recording.n_samples - 1)
    filtered = sps.filtfilt(taps, [1.0], recording.samples, axis=1,
                            padtype="even", padlen=padlen)
    return RawRecording(filtered, fs, list(recording.channel_names),
                        recording.earlobe_indices)


def decimate(recording: RawRecording, factor: int) -> RawRecording:
    """Keep every ``factor``-th sample; assumes the signal is already band-limited."""
    if int(factor) != factor or factor < 1:
        raise ValueError("decimation factor must be an integer >= 1")
    factor = int(factor)
    if factor == 1:
        return RawRecording(recording.samples.copy(), recording.sample_rate_hz,
                            list(recording.channel_names), recording.earlobe_indices)
    n_keep = recording.n_samples // factor
    samples = recording.samples[:, : n_keep * factor : factor]
    return RawRecording(samples, recording.sample_rate_hz / factor,
                        list(recording.channel_names), recording.earlobe_indices)


def rereference(recording: RawRecording) -> RawRecording:
    """Subtract the mean of the two earlobe channels; drop the earlobes."""
    if recording.earlobe_indices is None or len(recording.earlobe_indices) != 2:
        raise ConfigurationError("re-referencing needs exactly two earlobe channels")
    i, j = recording.earlobe_indices
    if not (0 <= i < recording.n_channels and 0 <= j < recording.n_channels) or i == j:
        raise ConfigurationError("earlobe indices out of range or duplicated")
    ref = 0.5 * (recording.samples[i] + recording.samples[j])
    scalp = [k for k in range(recording.n_channels) if k not in (i, j)]
    samples = recording.samples[scalp] - ref
    names = [recording.channel_names[k] for k in scalp]
    return RawRecording(samples, recording.sample_rate_hz, names, None)


def welch_psd(window_samples: np.ndarray, sample_rate_hz: float,
              fft_len: int = 1024, overlap_frac: float = 0.5) -> np.ndarray:
    """One-sided Welch PSD (power per Hz) over ``fft_len``/2 + 1 bins.

    Hamming window, no detrending; density scaling so that sum(psd)*df
    approximates the signal variance for a zero-mean signal.
    """
    x = np.asarray(window_samples, dtype=np.float64)
    if x.shape[-1] < fft_len:
        raise InsufficientDataError(
            f"need at least {fft_len} samples for one Welch segment, got {x.shape[-1]}"
        )
    noverlap = int(round(fft_len * overlap_frac))
    _, psd = sps.welch(x, fs=sample_rate_hz, window="hamming", nperseg=fft_len,
                       noverlap=noverlap, nfft=fft_len, detrend=False,
                       scaling="density", axis=-1)
    return psd


def psd_bin_hz(sample_rate_hz: float, fft_len: int = 1024) -> float:
    return sample_rate_hz / fft_len


def band_power_db(psd: np.ndarray, band_hz: tuple[float, float], bin_hz: float) -> float:
    """10*log10 of the mean PSD over bins whose center lies in the band (inclusive)."""
    low, high = band_hz
    if not low <= high:
        raise InvalidBandError(f"band [{low}, {high}] is empty")
    psd = np.asarray(psd, dtype=np.float64)
    freqs = np.arange(psd.shape[-1]) * bin_hz
    mask = (freqs >= low) & (freqs <= high)
    if not np.any(mask):
        raise InvalidBandError(f"no PSD bins inside band [{low}, {high}]")
    mean_power = np.mean(psd[..., mask], axis=-1)
    mean_power = np.maximum(mean_power, DB_POWER_FLOOR)
    return 10.0 * np.log10(mean_power)


def extract_features(recording: RawRecording, epoch_s: float = 30.0,
                     stride_s: float = 3.0, fft_len: int = 1024) -> np.ndarray:
    """Trailing-window band-power features: N x (2 * channels).

    Row t covers [t*stride, t*stride + epoch]; column order is all theta
    features channel-major, then all alpha features.
    """
    fs = recording.sample_rate_hz
    n_epoch = int(round(epoch_s * fs))
    n_stride = int(round(stride_s * fs))
    if recording.n_samples < n_epoch:
        raise InsufficientDataError(
            f"recording of {recording.duration_s:.1f}s shorter than one {epoch_s}s epoch"
        )
    n_windows = (recording.n_samples - n_epoch) // n_stride + 1
    n_ch = recording.n_channels
    bin_hz = psd_bin_hz(fs, fft_len)
    feats = np.empty((n_windows, 2 * n_ch))
    for w in range(n_windows):
        start = w * n_stride
        seg = recording.samples[:, start : start + n_epoch]
        psd = welch_psd(seg, fs, fft_len=fft_len)
        feats[w, :n_ch] = band_power_db(psd, THETA_BAND, bin_hz)
        feats[w, n_ch:] = band_power_db(psd, ALPHA_BAND, bin_hz)
    return feats


def feature_times(n_rows: int, epoch_s: float = 30.0, stride_s: float = 3.0) -> np.ndarray:
    """Prediction time (end of the trailing window) for each feature row."""
    return epoch_s + stride_s * np.arange(n_rows, dtype=np.float64)


def reaction_times(log: EventLog) -> np.ndarray:
    """Per-event reaction time: response onset minus deviation onset."""
    return log.response_onsets - log.deviation_onsets


def di(tau, tau0: float):
    """Clamped logistic drowsiness index in [0, 1]; equals max(0, tanh((tau-tau0)/2))."""
    tau = np.asarray(tau, dtype=np.float64)
    e = np.exp(-(tau - tau0))
    val = np.maximum(0.0, (1.0 - e) / (1.0 + e))
    return float(val) if val.ndim == 0 else val


def smooth_di(di_series: np.ndarray, window_s: float = 90.0,
              stride_s: float = 3.0) -> np.ndarray:
    """Trailing moving average over window_s/stride_s samples, shrinking at the start."""
    x = np.asarray(di_series, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    win = max(1, int(round(window_s / stride_s)))
    csum = np.concatenate([[0.0], np.cumsum(x)])
    out = np.empty_like(x)
    for i in range(len(x)):
        lo = max(0, i + 1 - win)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def individualized_tau0(taus: np.ndarray) -> float:
    """5th percentile of the session's reaction times (linear interpolation)."""
    taus = np.asarray(taus, dtype=np.float64)
    if taus.size == 0:
        raise InsufficientDataError("cannot take a percentile of an empty reaction-time list")
    return float(np.percentile(taus, 5.0))


def labels_at_times(log: EventLog, tau0: float, times: np.ndarray,
                    window_s: float = 90.0, stride_s: float = 3.0) -> np.ndarray:
    """Smoothed drowsiness index aligned to the given prediction times.

    Each time takes the index of the most recent event at or before it (times
    before the first event take the first event's value), giving a uniformly
    sampled series that is then smoothed by the trailing moving average.
    """
    taus = reaction_times(log)
    if taus.size == 0:
        raise MalformedLogError("empty event log")
    event_di = di(taus, tau0)
    idx = np.searchsorted(log.deviation_onsets, times, side="right") - 1
    idx = np.clip(idx, 0, len(event_di) - 1)
    return smooth_di(event_di[idx], window_s=window_s, stride_s=stride_s)


def screen_outlier_features(target_features: np.ndarray,
                            pooled_source_features: np.ndarray,
                            k_iqr: float = 1.0) -> list[int]:
    """Indices whose target [10,90]-percentile interval falls entirely outside
    the pooled sources' [10,90] interval widened by k_iqr times its width."""
    tgt = np.atleast_2d(np.asarray(target_features, dtype=np.float64))
    src = np.atleast_2d(np.asarray(pooled_source_features, dtype=np.float64))
    if tgt.shape[1] != src.shape[1]:
        raise ConfigurationError("target and source feature dimensions differ")
    t_lo, t_hi = np.percentile(tgt, [10, 90], axis=0)
    s_lo, s_hi = np.percentile(src, [10, 90], axis=0)
    width = s_hi - s_lo
    margin = k_iqr * width
    with np.errstate(invalid="ignore"):
        lo = s_lo - margin
        hi = s_hi + margin
    flagged = []
    for l in range(tgt.shape[1]):
        if not np.isfinite(lo[l]) or not np.isfinite(hi[l]):
            continue  # infinite widening never flags
        if t_hi[l] < lo[l] or t_lo[l] > hi[l]:
            flagged.append(l)
    return flagged
