"""Synthetic source material for desk-scale corpora.

Speech-like sources are harmonic syllable trains with formant envelopes,
pitch glides and fricative bursts, separated by word and sentence pauses.
Backgrounds are stationary-ish stereo noises and tonal pads.
"""
from __future__ import annotations

import numpy as np
from scipy import signal

from .audio import AudioBuffer

FS = 48000
BACKGROUND_KINDS = ("pink", "brown-hum", "pad", "hiss")


def _ramp_env(n, attack, release):
    env = np.ones(n)
    a = min(attack, n // 2)
    r = min(release, n - a)
    if a:
        env[:a] = np.sin(0.5 * np.pi * np.arange(a) / a) ** 2
    if r:
        env[n - r:] = np.cos(0.5 * np.pi * np.arange(1, r + 1) / r) ** 2
    return env


def _formant_gain(freqs, formants):
    g = np.zeros_like(freqs)
    for f, bw, amp in formants:
        g += amp / (1.0 + ((freqs - f) / bw) ** 2)
    # glottal tilt
    return g * (1.0 + freqs / 500.0) ** -0.6


def _syllable(rng, f0_base, fs):
    n = int(rng.uniform(0.12, 0.3) * fs)
    t = np.arange(n) / fs
    f0a = f0_base * np.exp(rng.normal(0, 0.12))
    f0b = f0a * np.exp(rng.normal(0, 0.1))
    f0 = np.linspace(f0a, f0b, n) * (1 + 0.01 * np.sin(2 * np.pi * 5.5 * t))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    formants = [(rng.uniform(300, 850), 80, 1.0),
                (rng.uniform(900, 2300), 120, 0.5),
                (rng.uniform(2400, 3200), 200, 0.25)]
    n_harm = int(7000 / max(f0a, f0b))
    h = np.arange(1, n_harm + 1)
    amps = _formant_gain(h * 0.5 * (f0a + f0b), formants)
    offsets = rng.uniform(0, 2 * np.pi, n_harm)
    voiced = (amps[:, None] * np.sin(h[:, None] * phase[None, :] + offsets[:, None])).sum(axis=0)
    voiced *= _ramp_env(n, int(0.02 * fs), int(0.05 * fs))
    out = voiced
    if rng.uniform() < 0.35:
        m = int(rng.uniform(0.04, 0.1) * fs)
        sos = signal.butter(4, [3000, 9000], btype="bandpass", fs=fs, output="sos")
        fric = signal.sosfilt(sos, rng.normal(size=m)) * _ramp_env(m, m // 4, m // 3)
        out = np.concatenate([0.4 * np.std(voiced) / (np.std(fric) + 1e-12) * fric, voiced])
    return out


def speech(seconds: float, seed: int, fs: int = FS) -> AudioBuffer:
    """Mono speech-like signal, peak-normalized to 0.5."""
    rng = np.random.default_rng(seed)
    f0_base = rng.uniform(90, 230)
    n_total = int(round(seconds * fs))
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.0, 0.3) * fs)
    while pos < n_total:
        for _ in range(rng.integers(1, 5)):
            syl = _syllable(rng, f0_base, fs) * rng.uniform(0.5, 1.0)
            end = min(pos + len(syl), n_total)
            out[pos:end] += syl[:end - pos]
            pos = end + int(rng.uniform(0.0, 0.05) * fs)
            if pos >= n_total:
                break
        gap = rng.uniform(0.4, 1.0) if rng.uniform() < 0.15 else rng.uniform(0.05, 0.25)
        pos += int(gap * fs)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak
    return AudioBuffer(out, fs, "dialog")


def _colored(rng, n, exponent):
    """Noise with power spectrum ~ 1/f**exponent."""
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n)
    f[0] = f[1]
    spec *= f ** (-exponent / 2.0)
    x = np.fft.irfft(spec, n)
    return x / np.std(x)


def background(seconds: float, seed: int, kind: str | None = None, fs: int = FS) -> AudioBuffer:
    """Stereo background with decorrelated channels, RMS about 0.1."""
    rng = np.random.default_rng(seed)
    if kind is None:
        kind = BACKGROUND_KINDS[int(rng.integers(len(BACKGROUND_KINDS)))]
    n = int(round(seconds * fs))
    t = np.arange(n) / fs
    chans = []
    for _ in range(2):
        if kind == "pink":
            x = _colored(rng, n, 1.0)
        elif kind == "brown-hum":
            x = _colored(rng, n, 1.6)
            f = rng.choice([50.0, 60.0])
            x += sum(0.3 / k * np.sin(2 * np.pi * f * k * t + rng.uniform(0, 6.3)) for k in range(1, 5))
        elif kind == "pad":
            root = rng.uniform(80, 200)
            x = 0.3 * _colored(rng, n, 1.0)
            for ratio in (1.0, 1.25, 1.5, 2.0):
                for k in range(1, 6):
                    x += 0.4 / k * np.sin(2 * np.pi * root * ratio * k * t * (1 + 0.002 * rng.normal()) + rng.uniform(0, 6.3))
        elif kind == "hiss":
            sos = signal.butter(2, 1500, btype="highpass", fs=fs, output="sos")
            x = signal.sosfilt(sos, rng.normal(size=n)) + 0.5 * _colored(rng, n, 1.0)
        else:
            raise ValueError(f"unknown background kind {kind!r}")
        chans.append(x)
    x = np.array(chans)
    # slow level drift of a few dB
    drift = 1.0 + 0.25 * np.sin(2 * np.pi * rng.uniform(0.05, 0.2) * t + rng.uniform(0, 6.3))
    x = x * drift
    x *= 0.1 / np.sqrt(np.mean(x ** 2))
    return AudioBuffer(x, fs, "background")


def resolve_source(ref: str, seconds: float) -> AudioBuffer:
    """Resolve ``synth:speech:<seed>`` / ``synth:background[:kind]:<seed>`` refs."""
    parts = ref.split(":")
    if parts[0] != "synth":
        raise ValueError(f"not a synthetic source ref: {ref}")
    if parts[1] == "speech":
        return speech(seconds, int(parts[2]))
    if parts[1] == "background":
        if len(parts) == 4:
            return background(seconds, int(parts[3]), parts[2])
        return background(seconds, int(parts[2]))
    raise ValueError(f"unknown synthetic source: {ref}")
