"""Dialog separation chain and dialog-boost mixing.

mix -> STFT -> spatial softmask -> band-mask denoiser -> iSTFT -> dialog gate
gives the dialog estimate; the boosted output is y = g * d_hat + x with
g = 10**(g_db/20) - 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import AudioBuffer, AudioError, StftConfig, istft, stft
from .denoiser import MaskPredictor, compute_band_features, expand_band_mask, predict_band_mask
from .gate import DialogClassifier, DialogDecisions, GateConfig, apply_gate, classify_frames, decisions_to_gate
from .loudness import speech_gated_or_gated
from .slf import SlfConfig, slf_mask

log = logging.getLogger(__name__)

DEFAULT_TARGET_LKFS = -31.0


@dataclass(frozen=True)
class BoostSpec:
    g_db: float
    g: float


def boost_gain_from_db(g_db: float) -> BoostSpec:
    if not np.isfinite(g_db):
        raise ValueError("boost must be finite")
    return BoostSpec(float(g_db), float(10.0 ** (g_db / 20.0) - 1.0))


def mix_boosted(mix: AudioBuffer, dialog_estimate: AudioBuffer, boost: BoostSpec) -> AudioBuffer:
    if mix.samples.shape != dialog_estimate.samples.shape:
        raise AudioError(f"shape mismatch: mix {mix.samples.shape}, dialog {dialog_estimate.samples.shape}")
    if boost.g == 0.0:
        return mix.with_samples(mix.samples.copy(), role="boosted")
    return mix.with_samples(boost.g * dialog_estimate.samples + mix.samples, role="boosted")


@dataclass
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    # less aggressive than stand-alone use, since the denoiser follows
    slf: SlfConfig = field(default_factory=lambda: SlfConfig(aggressiveness=0.5))
    denoiser: MaskPredictor | None = None
    classifier: DialogClassifier | None = None
    gate: GateConfig = field(default_factory=GateConfig)
    bypass_slf: bool = False
    bypass_denoiser: bool = False
    bypass_gate: bool = False
    alignment_target: float | None = DEFAULT_TARGET_LKFS

    @classmethod
    def bypass_all(cls, **kw) -> "PipelineConfig":
        return cls(bypass_slf=True, bypass_denoiser=True, bypass_gate=True, alignment_target=None, **kw)

    @property
    def denoiser_active(self) -> bool:
        return not self.bypass_denoiser and self.denoiser is not None and self.denoiser.variant != "pass-through"


@dataclass
class Separation:
    dialog: AudioBuffer
    slf_mask: np.ndarray | None = None
    band_mask: np.ndarray | None = None
    decisions: DialogDecisions | None = None
    gate: np.ndarray | None = None


def separate(mix: AudioBuffer, config: PipelineConfig) -> Separation:
    """Run the chain and keep intermediate masks and gate for inspection."""
    if mix.sample_rate != config.stft.sample_rate:
        raise AudioError(f"expected {config.stft.sample_rate} Hz input, got {mix.sample_rate}")
    if not config.bypass_slf and mix.channels != 2:
        raise AudioError("dialog separation needs stereo input")
    spec = stft(mix, config.stft)
    mask = np.ones(spec.data.shape[1:])
    out = Separation(dialog=mix)
    if not config.bypass_slf:
        out.slf_mask = slf_mask(spec, config.slf).values
        mask = mask * out.slf_mask
    if config.denoiser_active:
        feats = compute_band_features(spec.with_data(spec.data * mask), config.denoiser.layout)
        band = predict_band_mask(config.denoiser, feats)
        out.band_mask = band.values
        # one synthesis pass for the product of both masks
        mask = mask * expand_band_mask(band, band.layout, spec.bins).values
    d_hat = istft(spec.with_data(spec.data * mask), role="dialog-estimate")
    if not config.bypass_gate:
        if config.classifier is None:
            raise ValueError("the dialog gate needs a classifier model (or bypass_gate)")
        source = mix if config.gate.classifier_input == "mix" else d_hat
        out.decisions = classify_frames(source, config.classifier, config.gate)
        out.gate = decisions_to_gate(out.decisions, config.gate, mix.sample_rate, len(mix))
        d_hat = apply_gate(d_hat, out.gate)
    out.dialog = d_hat
    return out


def separate_dialog(mix: AudioBuffer, config: PipelineConfig) -> AudioBuffer:
    return separate(mix, config).dialog


def align_loudness(y: AudioBuffer, target_lkfs: float = DEFAULT_TARGET_LKFS,
                   decisions: DialogDecisions | None = None) -> AudioBuffer:
    """Apply one broadband gain so the speech-gated loudness hits ``target_lkfs``."""
    if not np.any(y.samples):
        raise AudioError("unmeasurable loudness: digital silence")
    measured = speech_gated_or_gated(y, decisions)
    if measured.is_silent:
        raise AudioError("unmeasurable loudness: no blocks above the absolute gate")
    gain_db = target_lkfs - measured.lkfs
    return y.scaled(10.0 ** (gain_db / 20.0))


def enhance(mix: AudioBuffer, config: PipelineConfig, boost: BoostSpec) -> tuple[AudioBuffer, Separation]:
    sep = separate(mix, config)
    y = mix_boosted(mix, sep.dialog, boost)
    if config.alignment_target is not None:
        decisions = sep.decisions
        if decisions is None and config.classifier is not None:
            decisions = classify_frames(mix, config.classifier, config.gate)
        y = align_loudness(y, config.alignment_target, decisions)
    return y, sep


# --------------------------------------------------------------------- latency

@dataclass(frozen=True)
class LatencyReport:
    stft: int
    slf: int
    denoiser: int
    classifier: int
    chain: int
    total: int
    classifier_input: str


def latency_report(config: PipelineConfig) -> LatencyReport:
    """Algorithmic delays in samples.

    The separation chain needs one analysis frame, plus the spatial
    estimator's lookahead ((buffer_frames - 1) hops beyond that frame) and
    the denoiser's chunk context. A mix-fed classifier runs in parallel
    (total = max); a processed-fed one runs after the chain (total = sum).
    """
    hop = config.stft.hop
    frame = config.stft.frame_len
    slf = 0 if config.bypass_slf else (config.slf.buffer_frames - 1) * hop + frame
    den = (config.denoiser.chunk_frames - 1) * hop if config.denoiser_active else 0
    chain = max(frame, slf) + den
    if config.bypass_gate:
        clf = 0
    else:
        context = config.classifier.context if config.classifier is not None else 5
        clf = context * hop + frame
    if config.gate.classifier_input == "mix":
        total = max(chain, clf)
    else:
        total = chain + clf
    return LatencyReport(frame, slf, den, clf, chain, total, config.gate.classifier_input)


def with_classifier_input(config: PipelineConfig, mode: str) -> PipelineConfig:
    return replace(config, gate=replace(config.gate, classifier_input=mode))
