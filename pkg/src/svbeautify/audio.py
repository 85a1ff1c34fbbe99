"""Waveform I/O and spectral features: STFT, mel spectrogram, cepstral
envelope, and Griffin-Lim mel inversion.

All functions are pure; analysis parameters default to the values used
throughout the package (22050 Hz, 1024-point FFT, 256 hop, 80 mels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 22050
DEFAULT_N_FFT = 1024
DEFAULT_HOP = 256
DEFAULT_N_MELS = 80
MEL_LOG_FLOOR = 1e-5
GRIFFIN_LIM_ITERS = 60
PEAK_NORM = 0.95
# below this pre-normalization peak the output is considered silence and
# is returned unscaled
PEAK_NORM_GUARD = 1e-3
# per-frame dynamic-range clamp applied to log magnitudes before the
# cepstrum; keeps window sidelobe valleys from dominating the lifter
ENVELOPE_FLOOR_DB = 40.0


class AudioError(ValueError):
    """Base error for audio I/O and DSP contract violations."""


class MalformedWavError(AudioError):
    """RIFF structure could not be parsed (bad magic, truncated chunks)."""


class UnsupportedWavError(AudioError):
    """WAV parsed but uses an encoding or channel layout we reject."""


@dataclass
class Waveform:
    """Mono audio in [-1, 1] at a known sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """Frames x fft_bins complex STFT with its analysis geometry."""

    data: np.ndarray
    hop: int
    n_fft: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise AudioError("spectrogram needs at least one frame")
        if self.data.shape[1] != self.n_fft // 2 + 1:
            raise AudioError("fft_bins must equal n_fft/2 + 1")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


@dataclass
class MelSpectrogram:
    """Frames x n_mels natural-log magnitude matrix (floor ln(1e-5))."""

    data: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    hop: int = DEFAULT_HOP
    n_mels: int = DEFAULT_N_MELS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise AudioError("mel spectrogram needs at least one frame")
        if self.data.shape[1] != self.n_mels:
            raise AudioError("mel channel count mismatch")
        if not np.all(np.isfinite(self.data)):
            raise AudioError("mel spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


@dataclass
class SpectralEnvelope:
    """Frames x fft_bins smooth log-magnitude matrix, frame-aligned with
    the mel spectrogram of the same waveform."""

    data: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    hop: int = DEFAULT_HOP

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


def load_wav(path) -> Waveform:
    """Read a mono PCM16 or float32 WAV file.

    Raises MalformedWavError on broken RIFF structure and
    UnsupportedWavError for stereo files or other sample encodings.
    """
    try:
        with open(path, "rb") as fh:
            sr, data = wavfile.read(fh)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise MalformedWavError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise UnsupportedWavError(f"{path}: expected mono, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedWavError(f"{path}: unsupported sample format {data.dtype}")
    if data.size == 0:
        raise MalformedWavError(f"{path}: empty data chunk")
    return Waveform(samples, int(sr))


def save_wav(path, wave: Waveform, encoding: str = "pcm16") -> None:
    """Write a Waveform as mono PCM16 (default) or float32 WAV."""
    x = np.clip(wave.samples, -1.0, 1.0)
    if encoding == "pcm16":
        pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, wave.sample_rate, pcm)
    elif encoding == "float32":
        wavfile.write(path, wave.sample_rate, x.astype(np.float32))
    else:
        raise AudioError(f"unknown encoding {encoding!r}")


def _hann(n_fft: int) -> np.ndarray:
    # periodic Hann; exact COLA at hop = n_fft/4
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)


def stft(wave: Waveform, n_fft: int = DEFAULT_N_FFT, hop: int = DEFAULT_HOP) -> ComplexSpectrogram:
    """Centered STFT with reflect padding and a periodic Hann window.

    Frame count is 1 + len(samples) // hop.
    """
    if n_fft < 2 or (n_fft & (n_fft - 1)) != 0:
        raise AudioError("n_fft must be a power of two")
    if hop > n_fft:
        raise AudioError("hop must not exceed n_fft")
    x = wave.samples
    pad = n_fft // 2
    if len(x) <= pad:
        raise AudioError("waveform too short for centered framing")
    padded = np.pad(x, pad, mode="reflect")
    n_frames = 1 + len(x) // hop
    window = _hann(n_fft)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * window[None, :]
    return ComplexSpectrogram(np.fft.rfft(frames, axis=1), hop, n_fft, wave.sample_rate)


def istft(spec: ComplexSpectrogram, length: int | None = None) -> Waveform:
    """Windowed overlap-add inverse of stft().

    Exact wherever the squared-window sum is nonzero; output is trimmed to
    `length` samples ((n_frames - 1) * hop when not given).
    """
    n_fft, hop = spec.n_fft, spec.hop
    frames = np.fft.irfft(spec.data, n=n_fft, axis=1)
    window = _hann(n_fft)
    total = (spec.n_frames - 1) * hop + n_fft
    acc = np.zeros(total)
    wsum = np.zeros(total)
    for i in range(spec.n_frames):
        acc[i * hop:i * hop + n_fft] += frames[i] * window
        wsum[i * hop:i * hop + n_fft] += window ** 2
    acc = acc / np.maximum(wsum, 1e-12)
    pad = n_fft // 2
    if length is None:
        length = (spec.n_frames - 1) * hop
    out = acc[pad:pad + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return Waveform(out, spec.sample_rate)


def _hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, log above."""
    f = np.asarray(f, dtype=np.float64)
    mel = 3.0 * f / 200.0
    log_region = f >= 1000.0
    mel = np.where(log_region, 15.0 + 27.0 * np.log(np.maximum(f, 1e-12) / 1000.0) / np.log(6.4), mel)
    return mel


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = 200.0 * m / 3.0
    log_region = m >= 15.0
    return np.where(log_region, 1000.0 * np.exp(np.log(6.4) * (m - 15.0) / 27.0), f)


def mel_filterbank(sample_rate: int = DEFAULT_SAMPLE_RATE, n_fft: int = DEFAULT_N_FFT,
                   n_mels: int = DEFAULT_N_MELS) -> np.ndarray:
    """Slaney-style triangular filterbank over 0..sr/2, area-normalized.

    Returns an (n_mels, n_fft//2 + 1) non-negative matrix.
    """
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
        fb[i] *= 2.0 / (hi - lo)  # slaney area normalization
    return fb


def mel_center_freqs(sample_rate: int = DEFAULT_SAMPLE_RATE, n_mels: int = DEFAULT_N_MELS) -> np.ndarray:
    """Center frequency (Hz) of each mel band."""
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return _mel_to_hz(mel_pts)[1:-1]


def mel_spectrogram(wave: Waveform, n_fft: int = DEFAULT_N_FFT, hop: int = DEFAULT_HOP,
                    n_mels: int = DEFAULT_N_MELS) -> MelSpectrogram:
    """|STFT| -> mel filterbank -> natural log with floor 1e-5."""
    if len(wave.samples) < n_fft:
        raise AudioError("waveform shorter than one analysis window")
    spec = stft(wave, n_fft, hop)
    fb = mel_filterbank(wave.sample_rate, n_fft, n_mels)
    mel = np.abs(spec.data) @ fb.T
    return MelSpectrogram(np.log(np.maximum(mel, MEL_LOG_FLOOR)),
                          wave.sample_rate, hop, n_mels)


def spectral_envelope(wave: Waveform, n_fft: int = DEFAULT_N_FFT,
                      hop: int = DEFAULT_HOP) -> SpectralEnvelope:
    """Smooth per-frame log-magnitude via cepstral liftering.

    Keeps the first Q = round(sr/700) quefrency coefficients of the real
    cepstrum; log magnitudes are clamped 40 dB below each frame's peak
    first so sidelobe valleys do not leak into the lifter band.
    """
    spec = stft(wave, n_fft, hop)
    mag = np.abs(spec.data)
    frame_max = np.maximum(mag.max(axis=1, keepdims=True), 1e-10)
    floor = frame_max * 10.0 ** (-ENVELOPE_FLOOR_DB / 20.0)
    log_mag = np.log(np.maximum(mag, floor))
    quefrency_keep = int(round(wave.sample_rate / 700.0))
    cep = np.fft.irfft(log_mag, n=n_fft, axis=1)
    cep[:, quefrency_keep:n_fft - quefrency_keep + 1] = 0.0
    env = np.fft.rfft(cep, n=n_fft, axis=1).real
    return SpectralEnvelope(env, wave.sample_rate, hop)


def _mel_to_linear(mel: MelSpectrogram, n_fft: int) -> np.ndarray:
    """Non-negative least-squares inversion of the mel filterbank.

    Pseudo-inverse initialization clipped at zero, refined with
    multiplicative updates; returns (frames, fft_bins) magnitudes.
    """
    fb = mel_filterbank(mel.sample_rate, n_fft, mel.n_mels)
    target = np.exp(mel.data)  # (frames, n_mels) linear magnitudes
    x = np.maximum(target @ np.linalg.pinv(fb).T, 0.0)  # (frames, bins)
    num_fixed = target @ fb  # (frames, bins): fb.T applied to targets
    for _ in range(30):
        denom = (x @ fb.T) @ fb + 1e-12
        x *= num_fixed / denom
    return np.maximum(x, 0.0)


def griffin_lim(mel: MelSpectrogram, n_iters: int = GRIFFIN_LIM_ITERS, seed: int = 0,
                n_fft: int = DEFAULT_N_FFT, return_residuals: bool = False):
    """Invert a mel spectrogram to a waveform.

    Mel -> linear magnitude by NNLS, then classic Griffin-Lim phase
    estimation from a seeded random initialization. The result is peak
    normalized to 0.95 unless nearly silent (peak < 1e-3).
    """
    if n_iters < 1:
        raise AudioError("n_iters must be >= 1")
    if not np.all(np.isfinite(mel.data)):
        raise AudioError("mel spectrogram contains non-finite values")
    magnitude = _mel_to_linear(mel, n_fft)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(-np.pi, np.pi, size=magnitude.shape)
    spec = ComplexSpectrogram(magnitude * np.exp(1j * phase), mel.hop, n_fft, mel.sample_rate)
    residuals = []
    mag_norm = max(np.linalg.norm(magnitude), 1e-12)
    wave = None
    for _ in range(n_iters):
        wave = istft(spec)
        reproj = stft(wave, n_fft, mel.hop)
        # reprojection may gain a frame relative to the magnitude grid
        data = reproj.data[:magnitude.shape[0]]
        residuals.append(np.linalg.norm(np.abs(data) - magnitude) / mag_norm)
        spec = ComplexSpectrogram(magnitude * np.exp(1j * np.angle(data)),
                                  mel.hop, n_fft, mel.sample_rate)
    out = istft(spec).samples
    peak = np.max(np.abs(out))
    if peak >= PEAK_NORM_GUARD:
        out = out * (PEAK_NORM / peak)
    result = Waveform(out, mel.sample_rate)
    if return_residuals:
        return result, residuals
    return result
