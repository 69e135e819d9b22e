"""Deterministic audio analysis: STFT, mel filterbank, deltas, F0, stats.

All functions here are pure: identical input bits give identical output bits,
and nothing mutates its arguments, so everything is safe to call concurrently.

Conventions
-----------
- Audio is mono float64 in [-1, 1] at 16 kHz.
- Spectral matrices are time-major: shape (frames, bins).
- Framing never pads: ``frames = 1 + floor((n_samples - window) / hop)``.
- Log compression is the natural log with an energy floor of 1e-10.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AudioTooShortError,
    DimensionMismatchError,
    EmptyAlignmentError,
    EmptyInputError,
    FrameCountMismatchError,
    InvalidDurationError,
    UnknownPhonemeError,
)
from .phonemes import PhonemeInventory

SAMPLE_RATE = 16000
ENERGY_FLOOR = 1e-10
STD_FLOOR = 1e-8

F0_MIN_HZ = 60.0
F0_MAX_HZ = 400.0
VOICING_PEAK_RATIO = 0.3
#: Frames whose mean-removed energy falls below this are unvoiced outright.
FRAME_ENERGY_FLOOR = 1e-8


@dataclass(frozen=True)
class Waveform:
    """Mono audio at a fixed sample rate; samples must be finite."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DimensionMismatchError("waveform must be 1-D")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class FrameConfig:
    """STFT framing: 400-point FFT, 25 ms window, 10 ms hop at 16 kHz."""

    fft_size: int = 400
    window_len: int = 400
    hop_len: int = 160
    n_mels: int = 40

    def __post_init__(self):
        if not (0 < self.hop_len <= self.window_len <= self.fft_size):
            raise ValueError("require hop_len <= window_len <= fft_size")
        if self.n_mels not in (40, 80):
            raise ValueError("n_mels must be 40 or 80")

    def with_mels(self, n_mels: int) -> "FrameConfig":
        return FrameConfig(self.fft_size, self.window_len, self.hop_len, n_mels)


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-compressed mel energies, shape (frames, n_mels)."""

    values: np.ndarray
    config: FrameConfig

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.config.n_mels:
            raise DimensionMismatchError(
                f"expected (T, {self.config.n_mels}) matrix, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("mel spectrogram contains non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureMatrix:
    """40 log-mels + 40 deltas + 40 delta-deltas, shape (frames, 120)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != 120:
            raise DimensionMismatchError(
                f"feature matrix must have 120 columns, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class F0Track:
    """Per-frame natural-log F0 and voicing mask.

    ``log_f0`` is meaningful exactly where ``voicing`` is True; unvoiced
    frames store 0.0.
    """

    log_f0: np.ndarray
    voicing: np.ndarray

    def __post_init__(self):
        log_f0 = np.asarray(self.log_f0, dtype=np.float64)
        voicing = np.asarray(self.voicing, dtype=bool)
        if log_f0.shape != voicing.shape or log_f0.ndim != 1:
            raise DimensionMismatchError("log_f0 and voicing must be equal 1-D")
        if not np.all(np.isfinite(log_f0[voicing])):
            raise ValueError("voiced frames must carry finite log F0")
        object.__setattr__(self, "log_f0", log_f0)
        object.__setattr__(self, "voicing", voicing)

    @property
    def n_frames(self) -> int:
        return self.log_f0.shape[0]


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean and (floored) standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.shape != std.shape:
            raise DimensionMismatchError("mean/std shape mismatch")
        if np.any(std <= 0):
            raise ValueError("std must be strictly positive (floored)")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


@dataclass(frozen=True)
class PhonemeAlignment:
    """Ordered (symbol, duration_frames) pairs covering an utterance."""

    entries: tuple[tuple[str, int], ...]

    @property
    def symbols(self) -> list[str]:
        return [s for s, _ in self.entries]

    @property
    def durations(self) -> np.ndarray:
        return np.array([d for _, d in self.entries], dtype=np.int64)

    @property
    def total_frames(self) -> int:
        return int(self.durations.sum())


# --------------------------------------------------------------------------
# STFT / mel
# --------------------------------------------------------------------------


def n_frames_for(n_samples: int, cfg: FrameConfig) -> int:
    """Frame count for uncentered framing; exact for n_samples >= window."""
    if n_samples < cfg.window_len:
        raise AudioTooShortError(
            f"utterance too short: {n_samples} samples < one "
            f"{cfg.window_len}-sample window"
        )
    return 1 + (n_samples - cfg.window_len) // cfg.hop_len


def frame_signal(samples: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Slice a signal into (frames, window_len) without padding."""
    n = n_frames_for(samples.shape[0], cfg)
    idx = np.arange(cfg.window_len)[None, :] + cfg.hop_len * np.arange(n)[:, None]
    return samples[idx]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int,
    fft_size: int,
    sample_rate: int = SAMPLE_RATE,
    f_min: float = 0.0,
    f_max: float = 8000.0,
) -> np.ndarray:
    """Triangular area-normalized filterbank, shape (n_mels, fft_size//2 + 1)."""
    n_bins = fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    fbank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_hz - lo) / (center - lo)
        down = (hi - bin_hz) / (hi - center)
        tri = np.maximum(0.0, np.minimum(up, down))
        fbank[m] = tri * (2.0 / (hi - lo))  # area normalization
    return fbank


def mel_filter_centers(
    n_mels: int, f_min: float = 0.0, f_max: float = 8000.0
) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    return edges[1:-1]


def power_spectrogram(wav: Waveform, cfg: FrameConfig) -> np.ndarray:
    """Windowed power spectrum per frame, shape (frames, fft_size//2 + 1)."""
    frames = frame_signal(wav.samples, cfg) * np.hanning(cfg.window_len)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return np.abs(spec) ** 2


def mel_spectrogram(wav: Waveform, cfg: FrameConfig) -> MelSpectrogram:
    """Log mel energies: log(max(fbank @ |STFT|^2, 1e-10))."""
    power = power_spectrogram(wav, cfg)
    fbank = mel_filterbank(cfg.n_mels, cfg.fft_size, wav.sample_rate_hz)
    mel = power @ fbank.T
    return MelSpectrogram(np.log(np.maximum(mel, ENERGY_FLOOR)), cfg)


# --------------------------------------------------------------------------
# Deltas
# --------------------------------------------------------------------------


def _delta(x: np.ndarray) -> np.ndarray:
    # Two-frame regression with replicated edges: d_t = (x_{t+1} - x_{t-1}) / 2.
    padded = np.concatenate([x[:1], x, x[-1:]], axis=0)
    return (padded[2:] - padded[:-2]) / 2.0


def append_deltas(mel: MelSpectrogram) -> FeatureMatrix:
    """Stack [mel | delta | delta-delta] into a (frames, 120) matrix."""
    if mel.config.n_mels != 40:
        raise DimensionMismatchError(
            f"delta features are defined for 40 mels, got {mel.config.n_mels}"
        )
    d1 = _delta(mel.values)
    d2 = _delta(d1)
    return FeatureMatrix(np.concatenate([mel.values, d1, d2], axis=1))


# --------------------------------------------------------------------------
# F0
# --------------------------------------------------------------------------


def _normalized_autocorr(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized ACF per frame via FFT, shape (frames, max_lag + 1).

    r[l] = sum x[n] x[n+l] / sqrt(sum_{0..N-1-l} x^2 * sum_{l..N-1} x^2).
    """
    n = frames.shape[1]
    fft_len = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, n=fft_len, axis=1)
    raw = np.fft.irfft(spec.real**2 + spec.imag**2, n=fft_len, axis=1)[:, : max_lag + 1]
    sq = frames**2
    csum = np.concatenate(
        [np.zeros((frames.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1
    )
    total = csum[:, -1:]
    lags = np.arange(max_lag + 1)
    head = csum[:, n - lags]  # sum of x^2 over [0, n-1-l]
    tail = total - csum[:, lags]  # sum of x^2 over [l, n-1]
    denom = np.sqrt(np.maximum(head * tail, 1e-300))
    return raw / denom


def extract_f0(wav: Waveform, cfg: FrameConfig) -> F0Track:
    """Autocorrelation pitch tracker, hop-synchronous with the mel frames.

    Per 25 ms frame: mean removal, normalized ACF, then the smallest lag in
    the 60-400 Hz range whose peak is within 5% of the strongest one (guards
    against octave-down errors on strongly periodic signals), refined by
    parabolic interpolation. A frame is voiced when the chosen peak exceeds
    0.3 and the frame carries non-negligible energy.
    """
    frames = frame_signal(wav.samples, cfg).astype(np.float64)
    frames = frames - frames.mean(axis=1, keepdims=True)
    energies = (frames**2).mean(axis=1)

    sr = wav.sample_rate_hz
    lag_min = int(np.floor(sr / F0_MAX_HZ))
    lag_max = min(int(np.ceil(sr / F0_MIN_HZ)), cfg.window_len - 2)
    acf = _normalized_autocorr(frames, lag_max + 1)

    n = frames.shape[0]
    log_f0 = np.zeros(n)
    voicing = np.zeros(n, dtype=bool)
    for t in range(n):
        if energies[t] < FRAME_ENERGY_FLOOR:
            continue
        window = acf[t, lag_min : lag_max + 1]
        best = int(np.argmax(window)) + lag_min
        peak = acf[t, best]
        if peak <= VOICING_PEAK_RATIO:
            continue
        # Prefer the smallest near-equal peak: the true period, not a multiple.
        for lag in range(lag_min, best):
            if (
                acf[t, lag] >= 0.95 * peak
                and acf[t, lag] > acf[t, lag - 1]
                and acf[t, lag] >= acf[t, lag + 1]
            ):
                best = lag
                peak = acf[t, lag]
                break
        lag = _parabolic_peak(acf[t], best)
        voicing[t] = True
        log_f0[t] = np.log(sr / lag)
    log_f0 = _median_smooth_voiced(log_f0, voicing)
    return F0Track(log_f0, voicing)


def _median_smooth_voiced(
    log_f0: np.ndarray, voicing: np.ndarray, half_window: int = 2
) -> np.ndarray:
    """Median-filter voiced frames to remove isolated octave errors."""
    out = log_f0.copy()
    voiced_idx = np.flatnonzero(voicing)
    for pos, t in enumerate(voiced_idx):
        lo = max(0, pos - half_window)
        neighborhood = log_f0[voiced_idx[lo : pos + half_window + 1]]
        if neighborhood.size >= 3:
            out[t] = np.median(neighborhood)
    return out


def _parabolic_peak(acf_row: np.ndarray, lag: int) -> float:
    if lag <= 0 or lag >= acf_row.shape[0] - 1:
        return float(lag)
    left, mid, right = acf_row[lag - 1], acf_row[lag], acf_row[lag + 1]
    denom = left - 2.0 * mid + right
    if abs(denom) < 1e-12:
        return float(lag)
    shift = 0.5 * (left - right) / denom
    return float(lag) + float(np.clip(shift, -0.5, 0.5))


def interpolate_f0(track: F0Track) -> np.ndarray:
    """Log-F0 with unvoiced gaps filled by linear interpolation.

    Fully unvoiced tracks return all zeros.
    """
    voiced = np.flatnonzero(track.voicing)
    if voiced.size == 0:
        return np.zeros_like(track.log_f0)
    out = np.interp(
        np.arange(track.n_frames), voiced, track.log_f0[voiced]
    )
    return out


def reconcile_lengths(*lengths: int) -> int:
    """Truncate-to-shortest rule for per-frame streams of one utterance."""
    return min(lengths)


# --------------------------------------------------------------------------
# Normalization statistics
# --------------------------------------------------------------------------


def compute_stats(matrices) -> NormStats:
    """Per-dimension mean/std over the concatenated rows of the collection."""
    mats = [np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in matrices]
    if not mats:
        raise EmptyInputError("cannot compute stats from an empty collection")
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise DimensionMismatchError(f"inconsistent dimensionality: {dims}")
    stacked = np.concatenate(mats, axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise DimensionMismatchError(
            f"stats are {stats.mean.shape[0]}-dim, data is {x.shape[-1]}-dim"
        )
    return (x - stats.mean) / stats.std


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise DimensionMismatchError(
            f"stats are {stats.mean.shape[0]}-dim, data is {x.shape[-1]}-dim"
        )
    return x * stats.std + stats.mean


# --------------------------------------------------------------------------
# Alignment ingestion
# --------------------------------------------------------------------------


def parse_alignment(
    text: str, inventory: PhonemeInventory, expected_frames: int | None = None
) -> PhonemeAlignment:
    """Parse 'phoneme<TAB>duration' lines and validate against the inventory."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InvalidDurationError(
                f"line {lineno}: expected 'phoneme<TAB>duration', got {line!r}"
            )
        symbol, dur_text = parts
        if symbol not in inventory.symbols:
            raise UnknownPhonemeError(f"line {lineno}: unknown phoneme {symbol!r}")
        try:
            duration = int(dur_text)
        except ValueError:
            raise InvalidDurationError(
                f"line {lineno}: duration {dur_text!r} is not an integer"
            ) from None
        if duration < 1:
            raise InvalidDurationError(
                f"line {lineno}: duration must be >= 1, got {duration}"
            )
        entries.append((symbol, duration))
    if not entries:
        raise EmptyAlignmentError("empty alignment")
    alignment = PhonemeAlignment(tuple(entries))
    if expected_frames is not None and alignment.total_frames != expected_frames:
        raise FrameCountMismatchError(
            f"alignment covers {alignment.total_frames} frames, "
            f"utterance has {expected_frames}"
        )
    return alignment


def load_alignment(
    path, inventory: PhonemeInventory, expected_frames: int | None = None
) -> PhonemeAlignment:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_alignment(fh.read(), inventory, expected_frames)


# --------------------------------------------------------------------------
# Mel inversion (listening convenience; never scored)
# --------------------------------------------------------------------------


def mel_to_power_spectrogram(
    log_mel: np.ndarray, cfg: FrameConfig, sample_rate: int = SAMPLE_RATE
) -> np.ndarray:
    """Approximate linear power spectra from log-mels via the pseudo-inverse."""
    fbank = mel_filterbank(cfg.n_mels, cfg.fft_size, sample_rate)
    power = np.exp(np.asarray(log_mel, dtype=np.float64))
    spec = power @ np.linalg.pinv(fbank).T
    return np.maximum(spec, 0.0)


def mel80_to_mel40(log_mel80: np.ndarray, cfg80: FrameConfig) -> np.ndarray:
    """Re-project an 80-mel log spectrogram onto the 40-mel filterbank."""
    spec = mel_to_power_spectrogram(log_mel80, cfg80)
    fbank40 = mel_filterbank(40, cfg80.fft_size)
    return np.log(np.maximum(spec @ fbank40.T, ENERGY_FLOOR))


def griffin_lim(
    log_mel: np.ndarray,
    cfg: FrameConfig,
    n_iters: int = 60,
    momentum: float = 0.99,
    sample_rate: int = SAMPLE_RATE,
) -> Waveform:
    """Griffin-Lim phase reconstruction from a log-mel spectrogram."""
    magnitude = np.sqrt(mel_to_power_spectrogram(log_mel, cfg, sample_rate))
    window = np.hanning(cfg.window_len)
    rng = np.random.default_rng(0)  # fixed phase init keeps inversion pure
    angles = np.exp(2j * np.pi * rng.random(magnitude.shape))
    previous = np.zeros_like(magnitude, dtype=np.complex128)
    stft = magnitude * angles
    for _ in range(n_iters):
        audio = _istft(stft, cfg, window)
        rebuilt = np.fft.rfft(
            frame_signal(audio, cfg) * window, n=cfg.fft_size, axis=1
        )
        update = rebuilt - momentum * previous
        previous = rebuilt
        phase = update / np.maximum(np.abs(update), 1e-12)
        stft = magnitude * phase
    audio = _istft(stft, cfg, window)
    peak = np.max(np.abs(audio))
    if peak > 1.0:
        audio = audio / peak
    return Waveform(audio, sample_rate)


def _istft(stft: np.ndarray, cfg: FrameConfig, window: np.ndarray) -> np.ndarray:
    frames = np.fft.irfft(stft, n=cfg.fft_size, axis=1)[:, : cfg.window_len]
    n_frames = frames.shape[0]
    length = cfg.window_len + (n_frames - 1) * cfg.hop_len
    audio = np.zeros(length)
    weight = np.zeros(length)
    for t in range(n_frames):
        start = t * cfg.hop_len
        audio[start : start + cfg.window_len] += frames[t] * window
        weight[start : start + cfg.window_len] += window**2
    return audio / np.maximum(weight, 1e-8)
