"""BS.1770-style loudness: K-weighting, gated integrated loudness, DNR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio import AudioBuffer, AudioError

# K-weighting biquads at 48 kHz (high shelf, then RLB high-pass)
SHELF_B = np.array([1.53512485958697, -2.69169618940638, 1.19839281085285])
SHELF_A = np.array([1.0, -1.69065929318241, 0.73248077421585])
HIPASS_B = np.array([1.0, -2.0, 1.0])
HIPASS_A = np.array([1.0, -1.99004745483398, 0.99007225036621])

BLOCK_S = 0.4
STEP_S = 0.1
ABSOLUTE_GATE = -70.0
RELATIVE_GATE = -10.0
OFFSET = -0.691

MODES = ("ungated", "gated", "speech-gated")


@dataclass(frozen=True)
class LoudnessValue:
    lkfs: float
    block_count: int
    gating_mode: str

    @property
    def is_silent(self) -> bool:
        return not np.isfinite(self.lkfs)


@dataclass(frozen=True)
class DnrMeasurement:
    dialog_lkfs: float
    background_lkfs: float

    @property
    def dnr_db(self) -> float:
        return self.dialog_lkfs - self.background_lkfs


def k_weight(buf: AudioBuffer) -> AudioBuffer:
    if buf.sample_rate != 48000:
        raise AudioError(f"K-weighting is defined at 48 kHz, got {buf.sample_rate}")
    y = signal.lfilter(SHELF_B, SHELF_A, buf.samples, axis=1)
    y = signal.lfilter(HIPASS_B, HIPASS_A, y, axis=1)
    return buf.with_samples(y)


def block_powers(buf: AudioBuffer) -> tuple[np.ndarray, np.ndarray]:
    """Channel-summed mean-square of K-weighted 400 ms blocks (75% overlap).

    Returns (powers, block start sample indices).
    """
    fs = buf.sample_rate
    size = int(round(BLOCK_S * fs))
    step = int(round(STEP_S * fs))
    if len(buf) < size:
        raise AudioError("signal shorter than one 400 ms loudness block")
    z = k_weight(buf).samples ** 2
    csum = np.concatenate([np.zeros((z.shape[0], 1)), np.cumsum(z, axis=1)], axis=1)
    starts = np.arange(0, len(buf) - size + 1, step)
    ms = (csum[:, starts + size] - csum[:, starts]) / size
    # unity weights for L/R
    return ms.sum(axis=0), starts


def _to_lkfs(power) -> float:
    with np.errstate(divide="ignore"):
        return float(OFFSET + 10.0 * np.log10(power))


def speech_blocks(starts, size, decisions) -> np.ndarray:
    """Mask of blocks overlapping at least one decision-1 frame."""
    active = decisions.sample_activity(int(starts[-1]) + size if len(starts) else 0)
    csum = np.concatenate([[0], np.cumsum(active)])
    return (csum[starts + size] - csum[starts]) > 0


def integrated_loudness(buf: AudioBuffer, gating_mode: str = "gated", decisions=None) -> LoudnessValue:
    if gating_mode not in MODES:
        raise ValueError(f"unknown gating mode {gating_mode!r}")
    powers, starts = block_powers(buf)
    if gating_mode == "ungated":
        if not np.any(powers > 0):
            return LoudnessValue(-np.inf, 0, gating_mode)
        return LoudnessValue(_to_lkfs(powers.mean()), len(powers), gating_mode)
    if gating_mode == "speech-gated":
        if decisions is None:
            raise ValueError("speech-gated loudness needs dialog decisions")
        size = int(round(BLOCK_S * buf.sample_rate))
        powers = powers[speech_blocks(starts, size, decisions)]
    with np.errstate(divide="ignore"):
        levels = OFFSET + 10.0 * np.log10(powers)
    kept = powers[levels > ABSOLUTE_GATE]
    if kept.size == 0:
        return LoudnessValue(-np.inf, 0, gating_mode)
    rel = _to_lkfs(kept.mean()) + RELATIVE_GATE
    kept = kept[OFFSET + 10.0 * np.log10(kept) > rel]
    return LoudnessValue(_to_lkfs(kept.mean()), int(kept.size), gating_mode)


def speech_gated_or_gated(buf: AudioBuffer, decisions=None) -> LoudnessValue:
    """Speech-gated loudness, falling back to plain gating without speech."""
    if decisions is not None and np.any(decisions.decision):
        v = integrated_loudness(buf, "speech-gated", decisions)
        if not v.is_silent:
            return v
    return integrated_loudness(buf, "gated")


def measure_dnr(dialog: AudioBuffer, background: AudioBuffer, decisions=None) -> DnrMeasurement:
    """Speech-gated dialog loudness minus gated background loudness.

    Without decisions, speech activity is detected on the clean dialog stem.
    """
    if decisions is None:
        from .gate import activity_decisions
        decisions = activity_decisions(dialog)
    d = speech_gated_or_gated(dialog, decisions)
    b = integrated_loudness(background, "gated")
    if d.is_silent or b.is_silent:
        raise AudioError("cannot measure DNR of a silent stem")
    return DnrMeasurement(d.lkfs, b.lkfs)
