"""Audio containers, WAV I/O, resampling, STFT and band layouts."""
from __future__ import annotations

import logging
import wave
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy import signal
from scipy.io import wavfile

log = logging.getLogger(__name__)

SUPPORTED_RATES = (16000, 48000)
WAV_FORMATS = ("pcm16", "pcm24", "float32")


class AudioError(ValueError):
    pass


@dataclass
class AudioBuffer:
    """Channel-major audio: ``samples`` has shape (channels, n)."""

    samples: np.ndarray
    sample_rate: int
    role: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2 or x.shape[0] not in (1, 2):
            raise AudioError(f"unsupported channel count: shape {x.shape}")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")
        if not np.all(np.isfinite(x)):
            raise AudioError("non-finite sample values")
        self.samples = x
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples, role=None) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate, self.role if role is None else role)

    def scaled(self, gain: float) -> "AudioBuffer":
        return self.with_samples(self.samples * gain)

    def energy(self) -> float:
        return float(np.sum(self.samples ** 2))


# --------------------------------------------------------------------------- WAV

def read_wav(path) -> AudioBuffer:
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError, IndexError, UnboundLocalError) as exc:
        # scipy raises a mix of these on truncated or malformed headers
        raise AudioError(f"cannot read {path}: corrupt or unsupported WAV ({exc})") from exc
    if data.ndim == 1:
        data = data[:, np.newaxis]
    if data.shape[1] not in (1, 2):
        raise AudioError(f"unsupported channel count: {data.shape[1]}")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32767.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit PCM in int32; both cases scale by the container
        x = _read_int32_scale(path, data)
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioError(f"unsupported sample format: {data.dtype}")
    return AudioBuffer(x.T, rate)


def _read_int32_scale(path, data):
    with open(path, "rb") as fh:
        header = fh.read(64)
    bits = 32
    i = header.find(b"fmt ")
    if i >= 0:
        bits = int.from_bytes(header[i + 22:i + 24], "little")
    if bits == 24:
        return (data.astype(np.float64) / 256.0) / 8388607.0
    return data.astype(np.float64) / 2147483647.0


def write_wav(path, buf: AudioBuffer, format: str = "float32") -> int:
    """Write ``buf``; returns the number of samples that had to be clamped."""
    if format not in WAV_FORMATS:
        raise AudioError(f"unsupported wav format: {format}")
    x = buf.samples
    n_clip = int(np.count_nonzero(np.abs(x) > 1.0))
    if n_clip:
        log.warning("clamping %d samples to [-1, 1] in %s", n_clip, path)
        x = np.clip(x, -1.0, 1.0)
    if format == "float32":
        wavfile.write(path, buf.sample_rate, x.T.astype(np.float32))
    elif format == "pcm16":
        wavfile.write(path, buf.sample_rate, np.round(x.T * 32767.0).astype(np.int16))
    else:
        q = np.round(x.T * 8388607.0).astype(np.int32).reshape(-1)
        raw = q.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
        with wave.open(str(path), "wb") as w:
            w.setnchannels(buf.channels)
            w.setsampwidth(3)
            w.setframerate(buf.sample_rate)
            w.writeframes(raw)
    return n_clip


# ------------------------------------------------------------------ resampling

def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Polyphase conversion between 16 kHz and 48 kHz.

    The anti-aliasing filter is a Kaiser-windowed sinc cut at 90% of the
    lower Nyquist, which keeps low passband ripple well under 0.1 dB and the
    stopband below -80 dB.
    """
    src = buf.sample_rate
    if src not in SUPPORTED_RATES or target_rate not in SUPPORTED_RATES:
        raise AudioError(f"unsupported rate pair {src} -> {target_rate}")
    if src == target_rate:
        return buf.with_samples(buf.samples.copy())
    g = gcd(src, target_rate)
    up, down = target_rate // g, src // g
    m = max(up, down)
    h = signal.firwin(64 * m + 1, 0.9 / m, window=("kaiser", 10.0))
    y = signal.resample_poly(buf.samples, up, down, axis=1, window=h)
    return AudioBuffer(y, target_rate, buf.role)


# ------------------------------------------------------------------------ STFT

@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 4096
    hop: int = 1024
    window: str = "hann"
    sample_rate: int = 48000

    def __post_init__(self):
        if self.frame_len % self.hop:
            raise AudioError("hop must divide frame_len")
        if self.window != "hann":
            raise AudioError(f"unsupported window: {self.window}")
        if self.frame_len // self.hop < 2:
            raise AudioError("Hann analysis/synthesis needs at least 2x overlap")

    @property
    def bins(self) -> int:
        return self.frame_len // 2 + 1

    @property
    def pad(self) -> int:
        return self.frame_len - self.hop

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.frame_len

    def analysis_window(self) -> np.ndarray:
        return signal.get_window("hann", self.frame_len, fftbins=True)

    def synthesis_window(self) -> np.ndarray:
        w = self.analysis_window()
        # overlap-added w**2 is constant at any hop dividing frame_len/2
        return w / (np.sum(w ** 2) / self.hop)

    def full_scale_energy(self) -> float:
        """One-sided bin energy of a full-scale sine in one frame."""
        return self.frame_len * float(np.sum(self.analysis_window() ** 2)) / 4.0


@dataclass
class Spectrogram:
    """Complex STFT with shape (channels, frames, bins)."""

    data: np.ndarray
    config: StftConfig
    length: int

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def bins(self) -> int:
        return self.data.shape[2]

    def with_data(self, data) -> "Spectrogram":
        return Spectrogram(data, self.config, self.length)


def n_frames(length: int, config: StftConfig) -> int:
    return -(-length // config.hop) + config.frame_len // config.hop - 1


def stft(buf: AudioBuffer, config: StftConfig = StftConfig()) -> Spectrogram:
    if buf.sample_rate != config.sample_rate:
        raise AudioError(f"sample rate {buf.sample_rate} does not match config {config.sample_rate}")
    n = len(buf)
    T = n_frames(n, config)
    total = (T - 1) * config.hop + config.frame_len
    padded = np.zeros((buf.channels, total))
    padded[:, config.pad:config.pad + n] = buf.samples
    frames = np.lib.stride_tricks.sliding_window_view(padded, config.frame_len, axis=1)[:, ::config.hop]
    data = np.fft.rfft(frames * config.analysis_window(), axis=-1)
    return Spectrogram(data, config, n)


def istft(spec: Spectrogram, role: str = "") -> AudioBuffer:
    cfg = spec.config
    frames = np.fft.irfft(spec.data, n=cfg.frame_len, axis=-1) * cfg.synthesis_window()
    C, T, N = frames.shape
    out = np.zeros((C, (T - 1) * cfg.hop + N))
    # hop divides N, so the overlap-add is a sum of N/hop shifted block sequences
    r = N // cfg.hop
    blocks = frames.reshape(C, T, r, cfg.hop)
    for j in range(r):
        seg = blocks[:, :, j, :].reshape(C, -1)
        out[:, j * cfg.hop:j * cfg.hop + seg.shape[1]] += seg
    return AudioBuffer(out[:, cfg.pad:cfg.pad + spec.length], cfg.sample_rate, role)


# ----------------------------------------------------------------- band layouts

@dataclass(frozen=True)
class BandLayout:
    edges: tuple
    kind: str = "octave"

    def __post_init__(self):
        e = np.asarray(self.edges)
        if e.ndim != 1 or len(e) < 2 or e[0] != 0 or np.any(np.diff(e) <= 0):
            raise AudioError(f"band edges must start at 0 and strictly increase: {self.edges}")
        object.__setattr__(self, "edges", tuple(int(v) for v in e))

    @property
    def n_bands(self) -> int:
        return len(self.edges) - 1

    @property
    def n_bins(self) -> int:
        return self.edges[-1]

    def centers(self) -> np.ndarray:
        e = np.asarray(self.edges, dtype=np.float64)
        return (e[:-1] + e[1:] - 1) / 2.0

    def band_of_bin(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_bands), np.diff(self.edges))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "edges": list(self.edges)}

    @classmethod
    def from_dict(cls, d) -> "BandLayout":
        return cls(tuple(d["edges"]), d["kind"])


OCTAVE_UPPER_HZ = (375, 750, 1500, 3000, 6000, 12000, 24000)


def octave_layout(config: StftConfig = StftConfig()) -> BandLayout:
    K = config.bins
    edges = [0]
    for f in OCTAVE_UPPER_HZ:
        b = min(int(round(f / config.bin_hz)), K)
        if f >= config.sample_rate / 2:
            b = K
        edges.append(max(b, edges[-1] + 1))
    return BandLayout(tuple(edges), "octave")


def mel_layout(config: StftConfig = StftConfig(), n_bands: int = 64) -> BandLayout:
    K = config.bins
    hz_to_mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    mel_to_hz = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    mels = np.linspace(0.0, hz_to_mel(config.sample_rate / 2), n_bands + 1)
    raw = np.round(mel_to_hz(mels) / config.bin_hz).astype(int)
    edges = [0]
    for i in range(1, n_bands):
        lo = edges[-1] + 1
        hi = K - (n_bands - i)
        edges.append(int(min(max(raw[i], lo), hi)))
    edges.append(K)
    return BandLayout(tuple(edges), "perceptual")


def band_energies(spec: Spectrogram, layout: BandLayout) -> np.ndarray:
    """Per-channel band energies, shape (channels, frames, bands)."""
    if layout.n_bins != spec.bins:
        raise AudioError(f"layout covers {layout.n_bins} bins, spectrogram has {spec.bins}")
    power = np.abs(spec.data) ** 2
    return np.add.reduceat(power, np.asarray(layout.edges[:-1]), axis=-1)


def downmix(buf: AudioBuffer) -> AudioBuffer:
    return buf.with_samples(buf.samples.mean(axis=0, keepdims=True))
