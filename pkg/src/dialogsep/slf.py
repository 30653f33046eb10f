"""Spatio-level filtering.

Per octave band and per buffer of STFT frames, find the dominant spatially
concentrated component in (pan angle, interchannel phase) space, then
softmask each bin by the posterior that it belongs to that component.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import i0e, ndtr

from .audio import AudioError, BandLayout, Spectrogram, octave_layout

HALF_PI = 0.5 * np.pi
LOG_UNIFORM = -np.log(HALF_PI * 2.0 * np.pi)
SILENCE_DB = -80.0
PASS_THROUGH = 0.5


@dataclass(frozen=True)
class SlfConfig:
    buffer_frames: int = 10
    buffer_hop: int = 5
    band_layout: BandLayout | None = None
    prior_dialog: float = 0.5
    mask_floor: float = 0.1
    variance_floor_theta: float = 0.05 ** 2
    variance_floor_phi: float = 0.1 ** 2
    aggressiveness: float = 1.0
    # weights for locating the mode are |X|**(2*level_exponent); >1 favours sparse, strong sources
    level_exponent: float = 2.0
    histogram_bins: int = 48
    # per-band modes are steered toward the buffer's broadband pan mode (0 disables)
    broadband_prior_width: float = 0.15
    band_vote_norm: float = 1.0
    # idiomatic-mixing prior on the broadband pan: dialog rarely sits hard left/right
    pan_prior_width: float = 0.3

    def __post_init__(self):
        if not 0 < self.buffer_hop <= self.buffer_frames:
            raise ValueError("need 0 < buffer_hop <= buffer_frames")
        if not 0 <= self.mask_floor < 1:
            raise ValueError("mask_floor must be in [0, 1)")
        if not 0 < self.prior_dialog < 1:
            raise ValueError("prior_dialog must be in (0, 1)")
        if self.aggressiveness <= 0:
            raise ValueError("aggressiveness must be positive")

    def layout_for(self, spec: Spectrogram) -> BandLayout:
        layout = self.band_layout or octave_layout(spec.config)
        if layout.n_bins != spec.bins:
            raise AudioError("SLF band layout does not match the spectrogram")
        return layout


@dataclass
class SpatialCues:
    theta: np.ndarray
    phi: np.ndarray
    weight: np.ndarray
    full_scale: float = 1.0


@dataclass
class MixingParamEstimate:
    """Arrays of shape (positions, bands); position k starts at frame k*buffer_hop."""

    theta0: np.ndarray
    phi0: np.ndarray
    var_theta: np.ndarray
    var_phi: np.ndarray
    confidence: np.ndarray
    buffer_hop: int

    def at_frames(self, n_frames: int, field: str) -> np.ndarray:
        """Zero-order hold of a per-position field onto frames."""
        k = np.minimum(np.arange(n_frames) // self.buffer_hop, len(self.theta0) - 1)
        return getattr(self, field)[k]


@dataclass
class SoftMask:
    values: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def wrap(a):
    return np.angle(np.exp(1j * a))


def extract_spatial_cues(spec: Spectrogram) -> SpatialCues:
    if spec.channels != 2:
        raise AudioError("spatial cues need a stereo spectrogram")
    L, R = spec.data
    return SpatialCues(
        theta=np.arctan2(np.abs(R), np.abs(L)),
        phi=np.angle(L * np.conj(R)),
        weight=np.abs(L) ** 2 + np.abs(R) ** 2,
        full_scale=spec.config.full_scale_energy(),
    )


def _level_histogram(theta, lw, cfg):
    hist, edges = np.histogram(theta, bins=cfg.histogram_bins, range=(0.0, HALF_PI), weights=lw)
    return np.convolve(np.pad(hist, 1, mode="edge"), [0.25, 0.5, 0.25], mode="valid"), edges


def _estimate_one(theta, phi, w, cfg: SlfConfig, prior=None):
    """Mode-anchored weighted statistics for one (band, buffer) cell."""
    lw = w ** cfg.level_exponent
    lw = lw / lw.max()
    hist, edges = _level_histogram(theta, lw, cfg)
    if prior is not None:
        hist = hist * prior
    i = int(np.argmax(hist))
    t_mode = 0.5 * (edges[i] + edges[i + 1])
    if prior is not None and hist[i] <= 0:
        t_mode = float(edges[int(np.argmax(prior))] + 0.5 * (edges[1] - edges[0]))
    width = edges[1] - edges[0]
    near = np.abs(theta - t_mode) <= 2 * width
    p_mode = np.angle(np.sum(lw[near] * np.exp(1j * phi[near])))

    t0, p0 = t_mode, p_mode
    vt, vp = (3 * width) ** 2, 0.5 ** 2
    for _ in range(3):
        d2 = (theta - t0) ** 2 / vt + wrap(phi - p0) ** 2 / vp
        sel = d2 <= 2.5 ** 2
        ws = w[sel]
        if ws.sum() <= 0:
            break
        t0 = float(np.average(theta[sel], weights=ws))
        p0 = float(np.angle(np.sum(ws * np.exp(1j * phi[sel]))))
        vt = max(float(np.average((theta[sel] - t0) ** 2, weights=ws)), cfg.variance_floor_theta)
        vp = max(float(np.average(wrap(phi[sel] - p0) ** 2, weights=ws)), cfg.variance_floor_phi)
    d2 = (theta - t0) ** 2 / vt + wrap(phi - p0) ** 2 / vp
    conf = float(lw[d2 <= 4.0].sum() / lw.sum())
    return t0, p0, vt, vp, conf


def estimate_mixing_params(cues: SpatialCues, config: SlfConfig = SlfConfig(), layout: BandLayout | None = None) -> MixingParamEstimate:
    """Per (buffer position, band) dominant pan/phase with variances and confidence.

    Buffer k spans frames [k*hop, k*hop + buffer_frames); it is truncated at
    the end of the signal and its confidence scaled by the fill fraction.
    """
    T, K = cues.theta.shape
    if layout is None:
        layout = config.band_layout
    if layout is None:
        raise ValueError("a band layout is required")
    if layout.n_bins != K:
        raise AudioError("band layout does not match cue bins")
    n_pos = max(1, -(-T // config.buffer_hop))
    B = layout.n_bands
    out = {k: np.empty((n_pos, B)) for k in ("theta0", "phi0", "var_theta", "var_phi", "confidence")}
    edges = layout.edges
    silence = 10.0 ** (SILENCE_DB / 10.0) * cues.full_scale
    centers = (np.arange(config.histogram_bins) + 0.5) * HALF_PI / config.histogram_bins
    for k in range(n_pos):
        f0 = k * config.buffer_hop
        f1 = min(f0 + config.buffer_frames, T)
        fill = (f1 - f0) / config.buffer_frames
        prior = None
        if config.broadband_prior_width and f1 > f0:
            votes = np.zeros(config.histogram_bins)
            for b in range(B):
                w_b = cues.weight[f0:f1, edges[b]:edges[b + 1]]
                if w_b.sum() / (f1 - f0) < silence:
                    continue
                lw = (w_b / w_b.max()) ** config.level_exponent
                hist, _ = _level_histogram(cues.theta[f0:f1, edges[b]:edges[b + 1]].ravel(), lw.ravel(), config)
                votes += hist / hist.sum() ** config.band_vote_norm
            if votes.any():
                if config.pan_prior_width:
                    votes = votes * np.exp(-0.5 * ((centers - np.pi / 4) / config.pan_prior_width) ** 2)
                t_broad = centers[int(np.argmax(votes))]
                z = (centers - t_broad) / config.broadband_prior_width
                prior = np.where(np.abs(z) <= 3.0, np.exp(-0.5 * z ** 2), 0.0)
        for b in range(B):
            sl = (slice(f0, f1), slice(edges[b], edges[b + 1]))
            w = cues.weight[sl].ravel()
            if f1 <= f0 or w.sum() / (f1 - f0) < silence:
                vals = (np.pi / 4, 0.0, config.variance_floor_theta, config.variance_floor_phi, 0.0)
            else:
                t0, p0, vt, vp, conf = _estimate_one(cues.theta[sl].ravel(), cues.phi[sl].ravel(), w, config, prior)
                vals = (t0, p0, vt, vp, conf * fill)
            for name, v in zip(("theta0", "phi0", "var_theta", "var_phi", "confidence"), vals):
                out[name][k, b] = v
    return MixingParamEstimate(buffer_hop=config.buffer_hop, **out)


def dialog_posterior(theta, phi, theta0, phi0, var_theta, var_phi, config: SlfConfig = SlfConfig()):
    """P(dialog | cues): domain-truncated Gaussian pan x von Mises phase vs uniform."""
    vt = var_theta / config.aggressiveness
    vp = var_phi / config.aggressiveness
    st = np.sqrt(vt)
    z_norm = ndtr((HALF_PI - theta0) / st) - ndtr(-theta0 / st)
    log_lt = -0.5 * (theta - theta0) ** 2 / vt - np.log(st * np.sqrt(2 * np.pi)) - np.log(np.maximum(z_norm, 1e-300))
    kappa = 1.0 / vp
    log_lp = kappa * (np.cos(phi - phi0) - 1.0) - np.log(2 * np.pi * i0e(kappa))
    log_odds = np.log(config.prior_dialog / (1 - config.prior_dialog)) + log_lt + log_lp - LOG_UNIFORM
    return 0.5 * (1.0 + np.tanh(0.5 * log_odds))


def compute_softmask(cues: SpatialCues, est: MixingParamEstimate, config: SlfConfig = SlfConfig(),
                     layout: BandLayout | None = None) -> SoftMask:
    T, K = cues.theta.shape
    layout = layout or config.band_layout
    if layout is None:
        raise ValueError("a band layout is required")
    bands = layout.band_of_bin()

    def expand(field):
        return est.at_frames(T, field)[:, bands]

    post = dialog_posterior(cues.theta, cues.phi, expand("theta0"), expand("phi0"),
                            expand("var_theta"), expand("var_phi"), config)
    mask = np.maximum(config.mask_floor, post)
    c = expand("confidence")
    mask = c * mask + (1.0 - c) * PASS_THROUGH
    return SoftMask(np.clip(mask, config.mask_floor, 1.0))


def apply_mask(spec: Spectrogram, mask: SoftMask) -> Spectrogram:
    if mask.values.shape != spec.data.shape[1:]:
        raise AudioError(f"mask shape {mask.values.shape} does not match spectrogram {spec.data.shape[1:]}")
    return spec.with_data(spec.data * mask.values[np.newaxis])


def slf_mask(spec: Spectrogram, config: SlfConfig = SlfConfig()) -> SoftMask:
    layout = config.layout_for(spec)
    cues = extract_spatial_cues(spec)
    est = estimate_mixing_params(cues, config, layout)
    return compute_softmask(cues, est, config, layout)
